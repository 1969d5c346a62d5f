use std::collections::HashMap;

use mrxlate_core::data::{zscore_normalize, Domain, Grid, ImageSlice, NormalizedImage};
use mrxlate_core::losses::supervised_mae_loss;
use mrxlate_core::metrics::{entropy, mae, mutual_information, mutual_information_in, psnr, InfoUnit, PSNR_CAP_DB};
use proptest::prelude::*;

fn img(px: &[f64]) -> NormalizedImage<f64> {
    NormalizedImage::from_grid(Grid::new(8, 8, px.to_vec()).unwrap())
}

fn slice(px: &[f64]) -> ImageSlice<f64> {
    ImageSlice::new(Grid::new(8, 8, px.to_vec()).unwrap(), Domain::T1, "s", 0).unwrap()
}

fn oracle_mae(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

fn oracle_psnr(r: &[f64], t: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut se = 0.0;
    for i in 0..r.len() {
        lo = lo.min(r[i]);
        hi = hi.max(r[i]);
        se += (r[i] - t[i]) * (r[i] - t[i]);
    }
    let mse = se / r.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * (hi - lo).log10() - 10.0 * mse.log10()).min(PSNR_CAP_DB)
}

/// `H(a) + H(b) - H(a, b)` from hash-map counts.
fn oracle_mi(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let bin = |xs: &[f64]| -> Vec<usize> {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        xs.iter()
            .map(|&v| {
                let k = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
                if k >= bins {
                    bins - 1
                } else {
                    k
                }
            })
            .collect()
    };
    let (ba, bb) = (bin(a), bin(b));
    let n = a.len() as f64;
    let h = |counts: HashMap<(usize, usize), usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut ca = HashMap::new();
    let mut cb = HashMap::new();
    let mut cab = HashMap::new();
    for i in 0..a.len() {
        *ca.entry((ba[i], 0)).or_insert(0) += 1;
        *cb.entry((0, bb[i])).or_insert(0) += 1;
        *cab.entry((ba[i], bb[i])).or_insert(0) += 1;
    }
    h(ca) + h(cb) - h(cab)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_match_loop_oracles(
        a in prop::collection::vec(-3.0f64..3.0, 64),
        b in prop::collection::vec(-3.0f64..3.0, 64),
        bins in 2usize..64,
    ) {
        let (ia, ib) = (img(&a), img(&b));
        prop_assert!((mae(&ia, &ib).unwrap() - oracle_mae(&a, &b)).abs() < 1e-6);
        prop_assert!((psnr(&ia, &ib).unwrap() - oracle_psnr(&a, &b)).abs() < 1e-6);
        let mi = mutual_information(&ia, &ib, bins).unwrap();
        prop_assert!((mi - oracle_mi(&a, &b, bins)).abs() < 1e-6);
        let bits = mutual_information_in(&ia, &ib, bins, InfoUnit::Bits).unwrap();
        prop_assert!((bits - oracle_mi(&a, &b, bins) / 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn zscore_contract(px in prop::collection::vec(-1e4f64..1e4, 64)) {
        prop_assume!(px.iter().any(|v| (v - px[0]).abs() > 1e-2));
        let z = zscore_normalize(&slice(&px)).unwrap();
        let d = z.pixels.data();
        let mean = d.iter().sum::<f64>() / 64.0;
        let mut var = 0.0;
        for v in d {
            var += (v - mean) * (v - mean);
        }
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!(((var / 64.0).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mae_ignores_shared_affine_rescaling(
        a in prop::collection::vec(-5.0f64..5.0, 64),
        b in prop::collection::vec(-5.0f64..5.0, 64),
        alpha in 0.01f64..100.0,
        beta in -100.0f64..100.0,
    ) {
        let z = |p: &[f64]| zscore_normalize(&slice(p)).unwrap();
        let base = mae(&z(&a), &z(&b)).unwrap();
        let ra: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
        let rb: Vec<f64> = b.iter().map(|v| alpha * v + beta).collect();
        prop_assert!((mae(&z(&ra), &z(&rb)).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn supervised_loss_is_the_mae_metric(
        a in prop::collection::vec(-3.0f64..3.0, 64),
        b in prop::collection::vec(-3.0f64..3.0, 64),
    ) {
        let (ia, ib) = (img(&a), img(&b));
        prop_assert!((supervised_mae_loss(&ia, &ib).unwrap() - mae(&ia, &ib).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn information_bounded_by_entropy(
        a in prop::collection::vec(-3.0f64..3.0, 64),
        b in prop::collection::vec(-3.0f64..3.0, 64),
        bins in 2usize..64,
    ) {
        let (ia, ib) = (img(&a), img(&b));
        let mi = mutual_information(&ia, &ib, bins).unwrap();
        let bound = entropy(&ia, bins).unwrap().min(entropy(&ib, bins).unwrap());
        prop_assert!(mi >= -1e-9 && mi <= bound + 1e-9);
    }
}
