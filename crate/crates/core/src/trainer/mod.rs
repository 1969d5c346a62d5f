//! Optimization loops for every model kind.
//!
//! Each batch takes one generator step followed by one discriminator step
//! (adversarial kinds only). The discriminators see the fakes produced by
//! the generator step, detached. Batch order and latent noise are derived
//! from `(seed, epoch)`, so a resumed run follows the same trajectory as an
//! uninterrupted one.

mod checkpoint;
mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_path, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{LrDecay, TrainConfig, DEFAULT_EPOCHS};

use crate::autograd::{Tape, Var};
use crate::data::{batch_indices, zscore_normalize, Direction, Domain, PairedDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{AdversarialForm, LossTerm};
use crate::models::{build_model_with, ModelBundle, ModelKind};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Generator objective (weighted sum of the kind's terms).
pub const TOTAL: &str = "total";
/// Discriminator objective, summed over both domains.
pub const DISCRIMINATOR: &str = "d";

/// Mean losses of one epoch. `epoch` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
    pub wall_seconds: f64,
    /// First epoch run after loading a checkpoint.
    #[serde(default)]
    pub resumed: bool,
}

/// Losses of a single generator step and the fakes it produced.
#[derive(Clone, Debug)]
pub struct GeneratorStep<T> {
    pub losses: BTreeMap<String, f64>,
    /// Translations of the T2 batch into T1.
    pub fake_t1: Tensor<T>,
    /// Translations of the T1 batch into T2.
    pub fake_t2: Tensor<T>,
}

pub struct Trainer<T> {
    config: TrainConfig,
    bundle: ModelBundle<T>,
    g_opt: Adam<T>,
    d_opt: Option<Adam<T>>,
    history: Vec<EpochRecord>,
    resumed: bool,
    t1: Vec<Tensor<T>>,
    t2: Vec<Tensor<T>>,
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train<T: Scalar>(config: &TrainConfig, data: &PairedDataset<T>) -> Result<(ModelBundle<T>, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    trainer.run(|_| Ok(()))?;
    Ok(trainer.into_parts())
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, data: &PairedDataset<T>) -> Result<Self> {
        config.validate()?;
        let shape = check_data(data)?;
        let bundle = build_model_with(config.kind, shape, config.seed, &config.arch, config.loss_weights)?;
        let g_opt = Adam::new(config.optimizer, bundle.generator_params());
        let d_opt = config
            .kind
            .has_discriminators()
            .then(|| Adam::new(config.optimizer, bundle.discriminator_params()));
        let (t1, t2) = normalized(data)?;
        Ok(Trainer {
            config,
            bundle,
            g_opt,
            d_opt,
            history: Vec::new(),
            resumed: false,
            t1,
            t2,
        })
    }

    /// Continues from a checkpoint. `config` may raise the epoch count; its
    /// kind must match the checkpoint and `data` must have its image shape.
    pub fn resume(checkpoint: Checkpoint<T>, config: TrainConfig, data: &PairedDataset<T>) -> Result<Self> {
        config.validate()?;
        let ck = checkpoint;
        if config.kind != ck.bundle.kind() {
            return Err(Error::Config(format!(
                "checkpoint holds a {} model, config asks for {}",
                ck.bundle.kind(),
                config.kind
            )));
        }
        let shape = check_data(data)?;
        if shape != ck.bundle.image_shape() {
            return Err(Error::Config(format!(
                "checkpoint was trained on {:?} images, data is {:?}",
                ck.bundle.image_shape(),
                shape
            )));
        }
        if ck.epoch > config.epochs {
            return Err(Error::Config(format!(
                "checkpoint is at epoch {} but the run only has {} epochs",
                ck.epoch, config.epochs
            )));
        }
        let (t1, t2) = normalized(data)?;
        let mut g_opt = ck.generator_opt;
        g_opt.config = config.optimizer;
        let d_opt = ck.discriminator_opt.map(|mut o| {
            o.config = config.optimizer;
            o
        });
        Ok(Trainer {
            config,
            bundle: ck.bundle,
            g_opt,
            d_opt,
            history: ck.history,
            resumed: true,
            t1,
            t2,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn bundle(&self) -> &ModelBundle<T> {
        &self.bundle
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn into_parts(self) -> (ModelBundle<T>, Vec<EpochRecord>) {
        (self.bundle, self.history)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            bundle: self.bundle.clone(),
            config: self.config.clone(),
            epoch: self.epoch(),
            history: self.history.clone(),
            generator_opt: self.g_opt.clone(),
            discriminator_opt: self.d_opt.clone(),
        }
    }

    /// Runs the remaining epochs, calling `on_epoch` after each one.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.epoch() < self.config.epochs {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let e = self.epoch();
        let start = Instant::now();
        let lr = self.config.learning_rate_at(e);
        self.g_opt.set_learning_rate(lr);
        if let Some(d) = &mut self.d_opt {
            d.set_learning_rate(lr);
        }
        let seed = epoch_seed(self.config.seed, e);
        let batches = batch_indices(self.t1.len(), self.config.batch_size, self.config.mode, seed)?;
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(2);

        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for (bi, batch) in batches.iter().enumerate() {
            let at = |err: Error| match err {
                Error::Numerical { what, .. } => Error::Numerical {
                    what,
                    epoch: Some(e + 1),
                    batch: Some(bi),
                },
                other => other,
            };
            let xa = stack(&self.t1, &batch.t1)?;
            let xb = stack(&self.t2, &batch.t2)?;
            let step = self.generator_step(&xa, &xb, &mut noise).map_err(at)?;
            for (k, v) in &step.losses {
                *sums.entry(k.clone()).or_default() += v;
            }
            if self.d_opt.is_some() {
                let d = self
                    .discriminator_step(&xa, &xb, &step.fake_t1, &step.fake_t2)
                    .map_err(at)?;
                *sums.entry(DISCRIMINATOR.to_string()).or_default() += d;
            }
        }
        let n = batches.len() as f64;
        let record = EpochRecord {
            epoch: e + 1,
            losses: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
            wall_seconds: start.elapsed().as_secs_f64(),
            resumed: std::mem::take(&mut self.resumed),
        };
        log::info!("epoch {} {:?}", record.epoch, record.losses);
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    /// One optimizer step on the generator-side parameters.
    pub fn generator_step(&mut self, xa: &Tensor<T>, xb: &Tensor<T>, noise: &mut dyn RngCore) -> Result<GeneratorStep<T>> {
        let bundle = &self.bundle;
        let weights = *bundle.loss_weights();
        let form = self.config.adversarial;
        let (grads, step) = {
            let mut tape = Tape::new(bundle.params());
            let a = tape.constant(xa.clone());
            let b = tape.constant(xb.clone());
            let mut parts: Vec<(LossTerm, Var)> = Vec::new();
            let (fake_a, fake_b);
            match bundle.kind() {
                ModelKind::GeneratorsS | ModelKind::Simple => {
                    fake_b = bundle.translate_on(&mut tape, a, Direction::T1ToT2, None)?;
                    fake_a = bundle.translate_on(&mut tape, b, Direction::T2ToT1, None)?;
                    parts.push((LossTerm::Sup, pair_mae(&mut tape, fake_b, b, fake_a, a)));
                }
                ModelKind::CycleGan | ModelKind::CycleGanS => {
                    fake_b = bundle.translate_on(&mut tape, a, Direction::T1ToT2, None)?;
                    fake_a = bundle.translate_on(&mut tape, b, Direction::T2ToT1, None)?;
                    let rec_a = bundle.translate_on(&mut tape, fake_b, Direction::T2ToT1, None)?;
                    let rec_b = bundle.translate_on(&mut tape, fake_a, Direction::T1ToT2, None)?;
                    let adv = generator_adversarial(&mut tape, bundle, fake_a, fake_b, form)?;
                    parts.push((LossTerm::Adv, adv));
                    parts.push((LossTerm::Cyc, pair_mae(&mut tape, rec_a, a, rec_b, b)));
                    if bundle.kind() == ModelKind::CycleGanS {
                        parts.push((LossTerm::Sup, pair_mae(&mut tape, fake_b, b, fake_a, a)));
                    }
                }
                ModelKind::Unit => {
                    let (dec_a, dec_b) = (bundle.decoder(Domain::T1)?, bundle.decoder(Domain::T2)?);
                    let (mu_a, z_a) = bundle.encode_on(&mut tape, a, Domain::T1, Some(&mut *noise))?;
                    let (mu_b, z_b) = bundle.encode_on(&mut tape, b, Domain::T2, Some(&mut *noise))?;
                    let rec_a = dec_a.forward(&mut tape, z_a)?;
                    let rec_b = dec_b.forward(&mut tape, z_b)?;
                    fake_b = dec_b.forward(&mut tape, z_a)?;
                    fake_a = dec_a.forward(&mut tape, z_b)?;
                    let (_, z_fb) = bundle.encode_on(&mut tape, fake_b, Domain::T2, Some(&mut *noise))?;
                    let (_, z_fa) = bundle.encode_on(&mut tape, fake_a, Domain::T1, Some(&mut *noise))?;
                    let cyc_a = dec_a.forward(&mut tape, z_fb)?;
                    let cyc_b = dec_b.forward(&mut tape, z_fa)?;
                    let kl_a = tape.mean_square(mu_a);
                    let kl_b = tape.mean_square(mu_b);
                    let adv = generator_adversarial(&mut tape, bundle, fake_a, fake_b, form)?;
                    parts.push((LossTerm::Adv, adv));
                    parts.push((LossTerm::Cyc, pair_mae(&mut tape, cyc_a, a, cyc_b, b)));
                    parts.push((LossTerm::Kl, tape.add(kl_a, kl_b)));
                    parts.push((LossTerm::VaeRec, pair_mae(&mut tape, rec_a, a, rec_b, b)));
                }
            }
            let weighted: Vec<(Var, f64)> = parts.iter().map(|&(t, v)| (v, weights.get(t))).collect();
            let total = tape.weighted_sum(&weighted);
            let mut losses = BTreeMap::new();
            for (term, v) in parts.iter().map(|&(t, v)| (t.name(), v)).chain([(TOTAL, total)]) {
                let x = tape.scalar_value(v).to_f64_lossy();
                if !x.is_finite() {
                    return Err(Error::numerical(format!("{term} loss is {x}")));
                }
                losses.insert(term.to_string(), x);
            }
            let step = GeneratorStep {
                losses,
                fake_t1: tape.value(fake_a).clone(),
                fake_t2: tape.value(fake_b).clone(),
            };
            (tape.backward(total), step)
        };
        self.g_opt.step(self.bundle.params_mut(), &grads);
        Ok(step)
    }

    /// One optimizer step on the discriminators; returns their loss.
    pub fn discriminator_step(
        &mut self,
        xa: &Tensor<T>,
        xb: &Tensor<T>,
        fake_t1: &Tensor<T>,
        fake_t2: &Tensor<T>,
    ) -> Result<f64> {
        let Some(d_opt) = &mut self.d_opt else {
            return Err(Error::UnsupportedOperation(format!("{} has no discriminators", self.bundle.kind())));
        };
        let bundle = &self.bundle;
        let form = self.config.adversarial;
        let (grads, value) = {
            let mut tape = Tape::new(bundle.params());
            let mut terms = Vec::new();
            for (domain, real, fake) in [(Domain::T1, xa, fake_t1), (Domain::T2, xb, fake_t2)] {
                let r = tape.constant(real.clone());
                let f = tape.constant(fake.clone());
                let sr = bundle.discriminate_on(&mut tape, r, domain)?;
                let sf = bundle.discriminate_on(&mut tape, f, domain)?;
                terms.push((adversarial_term(&mut tape, sr, 1.0, form), 1.0));
                terms.push((adversarial_term(&mut tape, sf, 0.0, form), 1.0));
            }
            let total = tape.weighted_sum(&terms);
            let value = tape.scalar_value(total).to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::numerical(format!("discriminator loss is {value}")));
            }
            (tape.backward(total), value)
        };
        d_opt.step(self.bundle.params_mut(), &grads);
        Ok(value)
    }
}

fn check_data<T: Scalar>(data: &PairedDataset<T>) -> Result<(usize, usize)> {
    if data.split() != Split::Train {
        return Err(Error::Config("training needs the train split".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    data.image_shape()
}

fn normalized<T: Scalar>(data: &PairedDataset<T>) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
    let mut t1 = Vec::with_capacity(data.len());
    let mut t2 = Vec::with_capacity(data.len());
    for (a, b) in data.pairs() {
        t1.push(zscore_normalize(a)?.to_tensor());
        t2.push(zscore_normalize(b)?.to_tensor());
    }
    Ok((t1, t2))
}

fn stack<T: Scalar>(images: &[Tensor<T>], idx: &[usize]) -> Result<Tensor<T>> {
    let items: Vec<Tensor<T>> = idx.iter().map(|&i| images[i].clone()).collect();
    Tensor::stack(&items)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn pair_mae<T: Scalar>(tape: &mut Tape<'_, T>, p1: Var, t1: Var, p2: Var, t2: Var) -> Var {
    let x = tape.mean_abs_diff(p1, t1);
    let y = tape.mean_abs_diff(p2, t2);
    tape.add(x, y)
}

fn adversarial_term<T: Scalar>(tape: &mut Tape<'_, T>, scores: Var, label: f64, form: AdversarialForm) -> Var {
    match form {
        AdversarialForm::LeastSquares => tape.mean_squared_offset(scores, label),
        AdversarialForm::CrossEntropy => tape.bce_with_logits(scores, label),
    }
}

/// Both generators try to make their fakes score as real.
fn generator_adversarial<T: Scalar>(
    tape: &mut Tape<'_, T>,
    bundle: &ModelBundle<T>,
    fake_a: Var,
    fake_b: Var,
    form: AdversarialForm,
) -> Result<Var> {
    let sa = bundle.discriminate_on(tape, fake_a, Domain::T1)?;
    let sb = bundle.discriminate_on(tape, fake_b, Domain::T2)?;
    let la = adversarial_term(tape, sa, 1.0, form);
    let lb = adversarial_term(tape, sb, 1.0, form);
    Ok(tape.add(la, lb))
}

/// Writes `epoch,loss_name,value,wall_seconds` rows, one per loss and epoch.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["epoch", "loss_name", "value", "wall_seconds"])?;
    for r in history {
        for (name, v) in &r.losses {
            w.write_record([
                r.epoch.to_string(),
                name.clone(),
                v.to_string(),
                format!("{:.6}", r.wall_seconds),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loss values per epoch for one loss name, in epoch order.
pub fn loss_curve(history: &[EpochRecord], name: &str) -> Vec<f64> {
    history.iter().filter_map(|r| r.losses.get(name).copied()).collect()
}
