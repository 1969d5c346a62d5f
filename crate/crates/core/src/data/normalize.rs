use crate::data::{Grid, ImageSlice, NormalizedImage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(x - mean) / std` with the population standard deviation taken over
/// every pixel, background included.
pub fn zscore_normalize<T: Scalar>(image: &ImageSlice<T>) -> Result<NormalizedImage<T>> {
    zscore_grid(image.pixels()).map_err(|_| {
        Error::DegenerateImage(format!(
            "{} {} slice {} has zero variance",
            image.subject_id(),
            image.domain(),
            image.slice_index()
        ))
    })
}

/// [`zscore_normalize`] for a bare pixel grid.
pub fn zscore_grid<T: Scalar>(px: &Grid<T>) -> Result<NormalizedImage<T>> {
    let n = T::from_usize_lossy(px.data().len());
    let mean = px.data().iter().copied().sum::<T>() / n;
    let var = px.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if !(std > T::zero()) || !std.is_finite() {
        return Err(Error::DegenerateImage("image has zero variance".into()));
    }
    Ok(NormalizedImage {
        pixels: px.map(|v| (v - mean) / std),
        source_mean: mean,
        source_std: std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn slice(w: usize, h: usize, px: Vec<f64>) -> ImageSlice<f64> {
        ImageSlice::new(Grid::new(w, h, px).unwrap(), Domain::T1, "s", 0).unwrap()
    }

    #[test]
    fn two_points_map_to_plus_minus_one() {
        let z = zscore_normalize(&slice(2, 1, vec![0.0, 2.0])).unwrap();
        assert_eq!(z.pixels.data(), &[-1.0, 1.0]);
        assert_eq!(z.source_mean, 1.0);
        assert_eq!(z.source_std, 1.0);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let err = zscore_normalize(&slice(3, 3, vec![5.0; 9])).unwrap_err();
        assert!(matches!(err, Error::DegenerateImage(_)));
    }

    #[test]
    fn random_image_matches_two_pass_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let px: Vec<f64> = (0..64).map(|_| rng.gen_range(-50.0..900.0)).collect();
        let z = zscore_normalize(&slice(8, 8, px.clone())).unwrap();
        // two-pass reference statistics of the output
        let mut sum = 0.0;
        for v in z.pixels.data() {
            sum += v;
        }
        let mean = sum / 64.0;
        let mut ss = 0.0;
        for v in z.pixels.data() {
            ss += (v - mean) * (v - mean);
        }
        assert!(mean.abs() < 1e-6);
        assert!(((ss / 64.0).sqrt() - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn denormalize_inverts(px in prop::collection::vec(-1e3f64..1e3, 16)) {
            let s = slice(4, 4, px.clone());
            prop_assume!(px.iter().any(|v| (v - px[0]).abs() > 1e-3));
            let z = zscore_normalize(&s).unwrap();
            for (a, b) in z.denormalize().data().iter().zip(&px) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
            }
        }
    }
}
