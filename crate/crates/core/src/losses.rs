//! Training objectives and their analytic gradients.
//!
//! The slice-level functions (`mean_abs_diff`, ...) are what the tape
//! evaluates during training; the typed wrappers validate inputs and are the
//! public contract.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::NormalizedImage;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Grid of per-patch realness scores, `[n, 1, h, w]`.
pub type PatchScores<T> = Tensor<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Discriminator,
    Generator,
}

/// Functional form of the adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Squared distance of the scores to the 1/0 labels.
    #[default]
    LeastSquares,
    /// Binary cross-entropy on logits.
    CrossEntropy,
}

impl FromStr for AdversarialForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_squares" | "lsgan" => Ok(AdversarialForm::LeastSquares),
            "cross_entropy" | "bce" => Ok(AdversarialForm::CrossEntropy),
            _ => Err(Error::Config(format!(
                "unknown adversarial form {s:?} (least_squares|cross_entropy)"
            ))),
        }
    }
}

impl fmt::Display for AdversarialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdversarialForm::LeastSquares => "least_squares",
            AdversarialForm::CrossEntropy => "cross_entropy",
        })
    }
}

/// Named loss components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Adv,
    Cyc,
    Sup,
    Kl,
    VaeRec,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Adv,
        LossTerm::Cyc,
        LossTerm::Sup,
        LossTerm::Kl,
        LossTerm::VaeRec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Adv => "adv",
            LossTerm::Cyc => "cyc",
            LossTerm::Sup => "sup",
            LossTerm::Kl => "kl",
            LossTerm::VaeRec => "vae_rec",
        }
    }

    /// Terms that make up the generator objective of `kind`.
    pub fn active_for(kind: ModelKind) -> &'static [LossTerm] {
        match kind {
            ModelKind::CycleGan => &[LossTerm::Adv, LossTerm::Cyc],
            ModelKind::CycleGanS => &[LossTerm::Adv, LossTerm::Cyc, LossTerm::Sup],
            ModelKind::Unit => &[LossTerm::Adv, LossTerm::Cyc, LossTerm::Kl, LossTerm::VaeRec],
            ModelKind::GeneratorsS | ModelKind::Simple => &[LossTerm::Sup],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_adv: f64,
    pub w_cyc: f64,
    pub w_sup: f64,
    pub w_kl: f64,
    pub w_vae_rec: f64,
}

impl LossWeights {
    pub fn for_kind(kind: ModelKind) -> Self {
        let zero = LossWeights {
            w_adv: 0.0,
            w_cyc: 0.0,
            w_sup: 0.0,
            w_kl: 0.0,
            w_vae_rec: 0.0,
        };
        match kind {
            ModelKind::CycleGan => LossWeights {
                w_adv: 1.0,
                w_cyc: 10.0,
                ..zero
            },
            ModelKind::CycleGanS => LossWeights {
                w_adv: 1.0,
                w_cyc: 10.0,
                w_sup: 10.0,
                ..zero
            },
            ModelKind::Unit => LossWeights {
                w_adv: 1.0,
                w_cyc: 10.0,
                w_kl: 0.1,
                w_vae_rec: 10.0,
                ..zero
            },
            ModelKind::GeneratorsS | ModelKind::Simple => LossWeights { w_sup: 1.0, ..zero },
        }
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Adv => self.w_adv,
            LossTerm::Cyc => self.w_cyc,
            LossTerm::Sup => self.w_sup,
            LossTerm::Kl => self.w_kl,
            LossTerm::VaeRec => self.w_vae_rec,
        }
    }

    pub fn set(&mut self, term: LossTerm, value: f64) {
        match term {
            LossTerm::Adv => self.w_adv = value,
            LossTerm::Cyc => self.w_cyc = value,
            LossTerm::Sup => self.w_sup = value,
            LossTerm::Kl => self.w_kl = value,
            LossTerm::VaeRec => self.w_vae_rec = value,
        }
    }

    /// Non-negative weights, zero outside the kind's active terms, and the
    /// terms that define the kind switched on.
    pub fn validate_for(&self, kind: ModelKind) -> Result<()> {
        let active = LossTerm::active_for(kind);
        for term in LossTerm::ALL {
            let w = self.get(term);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("weight w_{} must be finite and >= 0", term.name())));
            }
            if w > 0.0 && !active.contains(&term) {
                return Err(Error::Config(format!(
                    "{kind} does not use the {} term but w_{} = {w}",
                    term.name(),
                    term.name()
                )));
            }
        }
        let required: &[LossTerm] = match kind {
            ModelKind::CycleGan => &[],
            ModelKind::CycleGanS | ModelKind::GeneratorsS | ModelKind::Simple => &[LossTerm::Sup],
            ModelKind::Unit => &[LossTerm::Kl, LossTerm::VaeRec],
        };
        for term in required {
            if self.get(*term) <= 0.0 {
                return Err(Error::Config(format!("{kind} requires w_{} > 0", term.name())));
            }
        }
        Ok(())
    }
}

fn ensure_finite<T: Scalar>(xs: &[T], what: &str) -> Result<()> {
    if xs.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical(format!("NaN in {what}")));
    }
    Ok(())
}

// ---- slice-level forms used by the tape ----

pub fn mean_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::from_usize_lossy(a.len().max(1));
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n
}

/// `∂/∂a mean|a - b|`; the subgradient at `a = b` is taken as 0.
pub fn mean_abs_diff_grad<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let n = T::from_usize_lossy(a.len().max(1));
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect()
}

pub fn mean_squared_offset<T: Scalar>(x: &[T], target: T) -> T {
    let n = T::from_usize_lossy(x.len().max(1));
    x.iter().map(|&v| (v - target) * (v - target)).sum::<T>() / n
}

pub fn mean_squared_offset_grad<T: Scalar>(x: &[T], target: T) -> Vec<T> {
    let two_over_n = T::lit(2.0) / T::from_usize_lossy(x.len().max(1));
    x.iter().map(|&v| (v - target) * two_over_n).collect()
}

/// Numerically stable `mean[max(x,0) - x·t + ln(1 + e^{-|x|})]`.
pub fn bce_with_logits<T: Scalar>(x: &[T], target: T) -> T {
    let n = T::from_usize_lossy(x.len().max(1));
    x.iter()
        .map(|&v| v.max(T::zero()) - v * target + (-v.abs()).exp().ln_1p())
        .sum::<T>()
        / n
}

pub fn bce_with_logits_grad<T: Scalar>(x: &[T], target: T) -> Vec<T> {
    let n = T::from_usize_lossy(x.len().max(1));
    x.iter()
        .map(|&v| (T::one() / (T::one() + (-v).exp()) - target) / n)
        .collect()
}

pub fn mean_square<T: Scalar>(x: &[T]) -> T {
    let n = T::from_usize_lossy(x.len().max(1));
    x.iter().map(|&v| v * v).sum::<T>() / n
}

pub fn mean_square_grad<T: Scalar>(x: &[T]) -> Vec<T> {
    let two_over_n = T::lit(2.0) / T::from_usize_lossy(x.len().max(1));
    x.iter().map(|&v| v * two_over_n).collect()
}

// ---- typed contract ----

/// Discriminator: `L(real, 1) + L(fake, 0)`; generator: `L(fake, 1)`, where
/// `L` is the mean squared offset (least squares) or logit cross-entropy.
/// `scores_real` is ignored for the generator role.
pub fn adversarial_loss<T: Scalar>(
    scores_real: &PatchScores<T>,
    scores_fake: &PatchScores<T>,
    role: Role,
    form: AdversarialForm,
) -> Result<T> {
    ensure_finite(scores_fake.data(), "fake scores")?;
    let term = |s: &[T], label: f64| match form {
        AdversarialForm::LeastSquares => mean_squared_offset(s, T::lit(label)),
        AdversarialForm::CrossEntropy => bce_with_logits(s, T::lit(label)),
    };
    Ok(match role {
        Role::Discriminator => {
            ensure_finite(scores_real.data(), "real scores")?;
            term(scores_real.data(), 1.0) + term(scores_fake.data(), 0.0)
        }
        Role::Generator => term(scores_fake.data(), 1.0),
    })
}

/// Gradients of [`adversarial_loss`] with respect to `(scores_real, scores_fake)`.
pub fn adversarial_loss_grad<T: Scalar>(
    scores_real: &PatchScores<T>,
    scores_fake: &PatchScores<T>,
    role: Role,
    form: AdversarialForm,
) -> (Tensor<T>, Tensor<T>) {
    let grad = |s: &[T], label: f64| match form {
        AdversarialForm::LeastSquares => mean_squared_offset_grad(s, T::lit(label)),
        AdversarialForm::CrossEntropy => bce_with_logits_grad(s, T::lit(label)),
    };
    let wrap = |t: &Tensor<T>, g: Vec<T>| Tensor::from_vec(t.shape(), g).expect("grad shape");
    match role {
        Role::Discriminator => (
            wrap(scores_real, grad(scores_real.data(), 1.0)),
            wrap(scores_fake, grad(scores_fake.data(), 0.0)),
        ),
        Role::Generator => (
            Tensor::zeros(scores_real.shape()),
            wrap(scores_fake, grad(scores_fake.data(), 1.0)),
        ),
    }
}

/// Mean absolute difference between an image and its round trip.
pub fn cycle_loss<T: Scalar>(x: &NormalizedImage<T>, x_cyc: &NormalizedImage<T>) -> Result<T> {
    x.pixels.check_same_shape(&x_cyc.pixels)?;
    ensure_finite(x.pixels.data(), "image")?;
    ensure_finite(x_cyc.pixels.data(), "reconstruction")?;
    Ok(mean_abs_diff(x.pixels.data(), x_cyc.pixels.data()))
}

/// Gradient of [`cycle_loss`] with respect to `x_cyc`.
pub fn cycle_loss_grad<T: Scalar>(x: &NormalizedImage<T>, x_cyc: &NormalizedImage<T>) -> Vec<T> {
    mean_abs_diff_grad(x_cyc.pixels.data(), x.pixels.data())
}

/// Supervised mean absolute error against ground truth; same form as
/// [`cycle_loss`].
pub fn supervised_mae_loss<T: Scalar>(
    y_pred: &NormalizedImage<T>,
    y_true: &NormalizedImage<T>,
) -> Result<T> {
    cycle_loss(y_true, y_pred)
}

pub fn supervised_mae_loss_grad<T: Scalar>(
    y_pred: &NormalizedImage<T>,
    y_true: &NormalizedImage<T>,
) -> Vec<T> {
    mean_abs_diff_grad(y_pred.pixels.data(), y_true.pixels.data())
}

/// Unit-Gaussian prior penalty on a latent mean field: `mean(μ²)`.
pub fn kl_loss<T: Scalar>(latent_mean: &Tensor<T>) -> Result<T> {
    ensure_finite(latent_mean.data(), "latent mean")?;
    Ok(mean_square(latent_mean.data()))
}

pub fn kl_loss_grad<T: Scalar>(latent_mean: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(latent_mean.shape(), mean_square_grad(latent_mean.data())).expect("grad shape")
}

/// Loss components keyed by term.
pub type LossParts<T> = BTreeMap<LossTerm, T>;

/// Weighted sum of the kind's active terms. Every active term must be
/// present and no other term may be.
pub fn total_loss<T: Scalar>(kind: ModelKind, parts: &LossParts<T>, weights: &LossWeights) -> Result<T> {
    let active = LossTerm::active_for(kind);
    if let Some(extra) = parts.keys().find(|t| !active.contains(t)) {
        return Err(Error::Config(format!(
            "{kind} has no {} term",
            extra.name()
        )));
    }
    let mut total = T::zero();
    for term in active {
        let v = parts
            .get(term)
            .ok_or_else(|| Error::Config(format!("{kind} is missing the {} term", term.name())))?;
        if v.is_nan() {
            return Err(Error::numerical(format!("{} is NaN", term.name())));
        }
        total += T::lit(weights.get(*term)) * *v;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Grid;
    use rand::{Rng, SeedableRng};

    fn scores(v: f64, n: usize) -> Tensor<f64> {
        Tensor::full([1, 1, n, n], v)
    }

    fn image(px: Vec<f64>, w: usize) -> NormalizedImage<f64> {
        let h = px.len() / w;
        NormalizedImage::from_grid(Grid::new(w, h, px).unwrap())
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn adversarial_ideal_cases_are_zero() {
        let ls = AdversarialForm::LeastSquares;
        let d = adversarial_loss(&scores(1.0, 4), &scores(0.0, 4), Role::Discriminator, ls).unwrap();
        assert_eq!(d, 0.0);
        let g = adversarial_loss(&scores(0.3, 4), &scores(1.0, 4), Role::Generator, ls).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn adversarial_half_scores() {
        let d = adversarial_loss(
            &scores(0.5, 3),
            &scores(0.5, 3),
            Role::Discriminator,
            AdversarialForm::LeastSquares,
        )
        .unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adversarial_rejects_nan() {
        let mut bad = scores(0.0, 2);
        bad.data_mut()[1] = f64::NAN;
        let err = adversarial_loss(&scores(1.0, 2), &bad, Role::Generator, AdversarialForm::LeastSquares);
        assert!(matches!(err, Err(Error::Numerical { .. })));
    }

    #[test]
    fn cross_entropy_is_non_negative_and_small_when_confident() {
        let ce = AdversarialForm::CrossEntropy;
        let d = adversarial_loss(&scores(20.0, 2), &scores(-20.0, 2), Role::Discriminator, ce).unwrap();
        assert!((0.0..1e-8).contains(&d));
        let g = adversarial_loss(&scores(0.0, 2), &scores(0.0, 2), Role::Generator, ce).unwrap();
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_cases() {
        let x = image(random(64, 1), 8);
        assert_eq!(cycle_loss(&x, &x).unwrap(), 0.0);
        let zeros = image(vec![0.0; 16], 4);
        let ones = image(vec![1.0; 16], 4);
        assert_eq!(cycle_loss(&zeros, &ones).unwrap(), 1.0);
        let y = image(random(64, 2), 8);
        let mut acc = 0.0;
        for i in 0..64 {
            acc += (x.pixels.data()[i] - y.pixels.data()[i]).abs();
        }
        assert!((cycle_loss(&x, &y).unwrap() - acc / 64.0).abs() < 1e-7);
        assert_eq!(cycle_loss(&x, &y).unwrap(), cycle_loss(&y, &x).unwrap());
        assert!(matches!(cycle_loss(&x, &zeros), Err(Error::Shape(_))));
    }

    #[test]
    fn supervised_offset_by_half() {
        let t = image(random(16, 3), 4);
        let p = NormalizedImage::from_grid(t.pixels.map(|v| v + 0.5));
        assert!((supervised_mae_loss(&p, &t).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(supervised_mae_loss(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_loss(&Tensor::<f64>::zeros([1, 4, 2, 2])).unwrap(), 0.0);
        assert_eq!(kl_loss(&Tensor::<f64>::full([1, 4, 2, 2], 2.0)).unwrap(), 4.0);
        let m = Tensor::from_vec([1, 2, 4, 4], random(32, 4)).unwrap();
        let mut acc = 0.0;
        for v in m.data() {
            acc += v * v;
        }
        assert!((kl_loss(&m).unwrap() - acc / 32.0).abs() < 1e-7);
    }

    #[test]
    fn total_loss_cases() {
        let gs = ModelKind::GeneratorsS;
        let parts = LossParts::from([(LossTerm::Sup, 0.3)]);
        let w = LossWeights::for_kind(gs);
        assert!((total_loss(gs, &parts, &w).unwrap() - 0.3f64).abs() < 1e-15);

        let cg = ModelKind::CycleGan;
        let parts = LossParts::from([(LossTerm::Adv, 0.5), (LossTerm::Cyc, 0.2)]);
        let w = LossWeights::for_kind(cg);
        assert!((total_loss(cg, &parts, &w).unwrap() - 2.5f64).abs() < 1e-12);

        let with_sup = LossParts::from([(LossTerm::Adv, 0.5), (LossTerm::Cyc, 0.2), (LossTerm::Sup, 0.1)]);
        assert!(matches!(total_loss(cg, &with_sup, &w), Err(Error::Config(_))));
        let missing = LossParts::from([(LossTerm::Adv, 0.5f64)]);
        assert!(matches!(total_loss(cg, &missing, &w), Err(Error::Config(_))));
    }

    #[test]
    fn default_weights_satisfy_kind_patterns() {
        for kind in ModelKind::ALL {
            LossWeights::for_kind(kind).validate_for(kind).unwrap();
        }
        let mut w = LossWeights::for_kind(ModelKind::CycleGan);
        w.w_sup = 1.0;
        assert!(w.validate_for(ModelKind::CycleGan).is_err());
        let mut w = LossWeights::for_kind(ModelKind::Unit);
        w.w_kl = 0.0;
        assert!(w.validate_for(ModelKind::Unit).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let h = 1e-6;
        let check = |x: &[f64], g: &[f64], f: &dyn Fn(&[f64]) -> f64| {
            for i in 0..x.len() {
                let mut p = x.to_vec();
                p[i] += h;
                let mut m = x.to_vec();
                m[i] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                let denom = fd.abs().max(g[i].abs()).max(1e-8);
                assert!((fd - g[i]).abs() / denom < 1e-4, "{i}: {fd} vs {}", g[i]);
            }
        };
        let a = random(16, 10);
        let b = random(16, 11);
        check(&a, &mean_abs_diff_grad(&a, &b), &|x| mean_abs_diff(x, &b));
        check(&a, &mean_squared_offset_grad(&a, 1.0), &|x| mean_squared_offset(x, 1.0));
        check(&a, &bce_with_logits_grad(&a, 0.0), &|x| bce_with_logits(x, 0.0));
        check(&a, &mean_square_grad(&a), &|x| mean_square(x));
    }
}
