//! Image similarity metrics on z-scored images.
//!
//! All metrics accumulate in `f64` regardless of the pixel type.

mod errormap;
mod report;

use serde::{Deserialize, Serialize};

pub use errormap::{colormap, write_error_map};
pub use report::{
    evaluate_model, evaluate_with, DomainAggregate, ErrorMapEntry, Evaluation, ImageMetrics, MetricOptions,
    MetricReport, Summary,
};

use crate::data::{Grid, NormalizedImage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 300.0;
pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoUnit {
    #[default]
    Nats,
    Bits,
}

impl InfoUnit {
    fn from_nats(self, v: f64) -> f64 {
        match self {
            InfoUnit::Nats => v,
            InfoUnit::Bits => v / std::f64::consts::LN_2,
        }
    }
}

impl std::str::FromStr for InfoUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nats" => Ok(InfoUnit::Nats),
            "bits" => Ok(InfoUnit::Bits),
            _ => Err(Error::Config(format!("unknown information unit {s:?} (nats|bits)"))),
        }
    }
}

/// Mean absolute difference.
pub fn mae<T: Scalar>(a: &NormalizedImage<T>, b: &NormalizedImage<T>) -> Result<f64> {
    a.pixels.check_same_shape(&b.pixels)?;
    let sum: f64 = a
        .pixels
        .data()
        .iter()
        .zip(b.pixels.data())
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .sum();
    Ok(sum / a.pixels.data().len() as f64)
}

/// `10·log10(peak² / MSE)` with `peak = max(reference) − min(reference)`,
/// capped at [`PSNR_CAP_DB`]. Not symmetric.
pub fn psnr<T: Scalar>(reference: &NormalizedImage<T>, test: &NormalizedImage<T>) -> Result<f64> {
    reference.pixels.check_same_shape(&test.pixels)?;
    let (lo, hi) = reference.pixels.min_max();
    let peak = hi.to_f64_lossy() - lo.to_f64_lossy();
    if !(peak > 0.0) {
        return Err(Error::DegenerateImage("PSNR reference is constant".into()));
    }
    let mse: f64 = reference
        .pixels
        .data()
        .iter()
        .zip(test.pixels.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / reference.pixels.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Bin of every pixel over the image's own `[min, max]`; the maximum lands
/// in the last bin.
fn bin_indices<T: Scalar>(g: &Grid<T>, bins: usize) -> Result<Vec<usize>> {
    let (lo, hi) = g.min_max();
    let (lo, hi) = (lo.to_f64_lossy(), hi.to_f64_lossy());
    if !(hi > lo) {
        return Err(Error::DegenerateImage("constant image has no intensity range".into()));
    }
    let scale = bins as f64 / (hi - lo);
    Ok(g
        .data()
        .iter()
        .map(|&v| (((v.to_f64_lossy() - lo) * scale) as usize).min(bins - 1))
        .collect())
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 histogram bins, got {bins}")));
    }
    Ok(())
}

/// `bins × bins` counts, row = bin of `a`, column = bin of `b`.
pub fn joint_histogram<T: Scalar>(a: &NormalizedImage<T>, b: &NormalizedImage<T>, bins: usize) -> Result<Vec<u64>> {
    check_bins(bins)?;
    a.pixels.check_same_shape(&b.pixels)?;
    let ia = bin_indices(&a.pixels, bins)?;
    let ib = bin_indices(&b.pixels, bins)?;
    let mut h = vec![0u64; bins * bins];
    for (i, j) in ia.into_iter().zip(ib) {
        h[i * bins + j] += 1;
    }
    Ok(h)
}

/// Plug-in mutual information of the joint histogram, in nats.
pub fn mutual_information<T: Scalar>(a: &NormalizedImage<T>, b: &NormalizedImage<T>, bins: usize) -> Result<f64> {
    let h = joint_histogram(a, b, bins)?;
    let n = a.pixels.data().len() as f64;
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            let p = h[i * bins + j] as f64 / n;
            pa[i] += p;
            pb[j] += p;
        }
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = h[i * bins + j];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

pub fn mutual_information_in<T: Scalar>(
    a: &NormalizedImage<T>,
    b: &NormalizedImage<T>,
    bins: usize,
    unit: InfoUnit,
) -> Result<f64> {
    Ok(unit.from_nats(mutual_information(a, b, bins)?))
}

/// Entropy of the marginal histogram, in nats.
pub fn entropy<T: Scalar>(a: &NormalizedImage<T>, bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let idx = bin_indices(&a.pixels, bins)?;
    let mut h = vec![0u64; bins];
    for i in idx {
        h[i] += 1;
    }
    let n = a.pixels.data().len() as f64;
    Ok(h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// Per-pixel relative absolute error, defined where `|real| >= epsilon`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap<T> {
    /// Zero wherever `mask` is false.
    pub values: Grid<T>,
    pub mask: Vec<bool>,
    pub epsilon: f64,
}

impl<T: Scalar> ErrorMap<T> {
    /// Mean over the defined pixels, `None` if there are none.
    pub fn masked_mean(&self) -> Option<f64> {
        let (sum, n) = self
            .values
            .data()
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v.to_f64_lossy(), n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// `|real − synthetic| / |real|`, masked out (value 0) where
/// `|real| < epsilon`.
pub fn relative_error_map<T: Scalar>(
    real: &NormalizedImage<T>,
    synthetic: &NormalizedImage<T>,
    epsilon: f64,
) -> Result<ErrorMap<T>> {
    real.pixels.check_same_shape(&synthetic.pixels)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let eps = T::lit(epsilon);
    let mut mask = Vec::with_capacity(real.pixels.data().len());
    let values: Vec<T> = real
        .pixels
        .data()
        .iter()
        .zip(synthetic.pixels.data())
        .map(|(&r, &s)| {
            let defined = r.abs() >= eps;
            mask.push(defined);
            if defined {
                (r - s).abs() / r.abs()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(ErrorMap {
        values: Grid::new(real.pixels.width(), real.pixels.height(), values)?,
        mask,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(w: usize, h: usize, px: Vec<f64>) -> NormalizedImage<f64> {
        NormalizedImage::from_grid(Grid::new(w, h, px).unwrap())
    }

    fn random(w: usize, h: usize, rng: &mut ChaCha8Rng) -> NormalizedImage<f64> {
        img(w, h, (0..w * h).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn mae_examples() {
        let a = img(2, 2, vec![-1.0; 4]);
        let b = img(2, 2, vec![1.0; 4]);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &b).unwrap(), 2.0);
        let c = img(4, 1, vec![0.0; 4]);
        assert!(matches!(mae(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn mae_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random(16, 16, &mut rng), random(16, 16, &mut rng));
        let mut s = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                s += (a.pixels.get(x, y) - b.pixels.get(x, y)).abs();
            }
        }
        assert!((mae(&a, &b).unwrap() - s / 256.0).abs() < 1e-7);
    }

    #[test]
    fn psnr_examples() {
        let r = img(2, 1, vec![0.0, 1.0]);
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP_DB);
        // peak 1, both pixels off by 0.1: MSE 0.01
        let t = img(2, 1, vec![0.1, 0.9]);
        assert!((psnr(&r, &t).unwrap() - 20.0).abs() < 1e-9);
        // peak 2, MSE 0.04
        let r2 = img(2, 1, vec![-1.0, 1.0]);
        let t2 = img(2, 1, vec![-0.8, 0.8]);
        assert!((psnr(&r2, &t2).unwrap() - 20.0).abs() < 1e-9);
        let flat = img(2, 1, vec![3.0, 3.0]);
        assert!(matches!(psnr(&flat, &r), Err(Error::DegenerateImage(_))));
    }

    #[test]
    fn psnr_is_not_symmetric() {
        let a = img(3, 1, vec![0.0, 1.0, 2.0]);
        let b = img(3, 1, vec![0.0, 1.0, 1.0]);
        assert_ne!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn self_information_is_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(32, 32, &mut rng);
        for bins in [2, 8, 64] {
            let mi = mutual_information(&a, &a, bins).unwrap();
            assert!((mi - entropy(&a, bins).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn bijective_remap_keeps_information() {
        // four values, one per bin before and after cubing
        let v = [-1.5, -0.5, 0.5, 1.5];
        let a = img(4, 4, (0..16).map(|i| v[i % 4]).collect());
        let b = img(4, 4, a.pixels.data().iter().map(|x| x * x * x).collect());
        let mi = mutual_information(&a, &b, 4).unwrap();
        assert!((mi - entropy(&a, 4).unwrap()).abs() < 1e-6);
        assert!((mi - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn independent_images_have_little_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random(64, 64, &mut rng), random(64, 64, &mut rng));
        let mi = mutual_information(&a, &b, 8).unwrap();
        assert!((0.0..0.05).contains(&mi), "{mi}");
    }

    #[test]
    fn bits_and_nats() {
        let a = img(2, 1, vec![0.0, 1.0]);
        assert!((mutual_information_in(&a, &a, 2, InfoUnit::Bits).unwrap() - 1.0).abs() < 1e-12);
        assert!((mutual_information_in(&a, &a, 2, InfoUnit::Nats).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mi_rejects_constant_and_few_bins() {
        let a = img(2, 1, vec![0.0, 1.0]);
        let flat = img(2, 1, vec![1.0, 1.0]);
        assert!(matches!(mutual_information(&a, &flat, 8), Err(Error::DegenerateImage(_))));
        assert!(matches!(mutual_information(&a, &a, 1), Err(Error::Config(_))));
    }

    #[test]
    fn relative_error_examples() {
        let real = img(3, 1, vec![2.0, 0.0, -4.0]);
        let syn = img(3, 1, vec![1.0, 5.0, -4.0]);
        let m = relative_error_map(&real, &syn, 1e-6).unwrap();
        assert_eq!(m.values.data(), &[0.5, 0.0, 0.0]);
        assert_eq!(m.mask, vec![true, false, true]);
        let same = relative_error_map(&real, &real, 1e-6).unwrap();
        assert!(same.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(same.mask, vec![true, false, true]);
        assert!(relative_error_map(&real, &syn, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_metrics(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random(8, 8, &mut rng), random(8, 8, &mut rng));
            prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            let (ab, ba) = (mutual_information(&a, &b, 8).unwrap(), mutual_information(&b, &a, 8).unwrap());
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn mi_bounded_by_marginal_entropies(seed in 0u64..1000, bins in 2usize..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(8, 8, &mut rng);
            let b = img(8, 8, a.pixels.data().iter().map(|v| v.sin() + rng.gen_range(-0.3..0.3)).collect());
            let mi = mutual_information(&a, &b, bins).unwrap();
            let bound = entropy(&a, bins).unwrap().min(entropy(&b, bins).unwrap());
            prop_assert!(mi >= -1e-9 && mi <= bound + 1e-9);
        }

        #[test]
        fn error_map_zero_outside_mask(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random(8, 8, &mut rng), random(8, 8, &mut rng));
            let m = relative_error_map(&a, &b, 0.5).unwrap();
            for (v, &ok) in m.values.data().iter().zip(&m.mask) {
                prop_assert!(v.is_finite() && *v >= 0.0);
                if !ok {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }
}
