//! Training configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments and blank lines are ignored
//! kind = generators_s
//! epochs = 50
//! w_sup = 1
//! ```
//!
//! `kind` selects the defaults (loss weights, mode); every other key
//! overrides one field. Unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::BatchMode;
use crate::error::{Error, Result};
use crate::losses::{AdversarialForm, LossTerm, LossWeights};
use crate::models::{ArchConfig, ModelKind};
use crate::optim::AdamConfig;

pub const DEFAULT_EPOCHS: usize = 180;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    #[default]
    None,
    /// Constant for the first half, then linear towards zero.
    Linear,
}

impl FromStr for LrDecay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LrDecay::None),
            "linear" => Ok(LrDecay::Linear),
            _ => Err(Error::Config(format!("unknown lr_decay {s:?} (none|linear)"))),
        }
    }
}

impl fmt::Display for LrDecay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrDecay::None => "none",
            LrDecay::Linear => "linear",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss_weights: LossWeights,
    pub adversarial: AdversarialForm,
    pub seed: u64,
    pub mode: BatchMode,
    pub checkpoint_every: usize,
    pub lr_decay: LrDecay,
    pub arch: ArchConfig,
    /// Split manifest the CLI reads the training slices from.
    pub manifest: Option<PathBuf>,
    /// Directory for checkpoints and history.
    pub run_dir: Option<PathBuf>,
    /// Center crop/pad applied to every slice before training.
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            epochs: DEFAULT_EPOCHS,
            batch_size: 1,
            optimizer: AdamConfig::default(),
            loss_weights: LossWeights::for_kind(kind),
            adversarial: AdversarialForm::default(),
            seed: 0,
            mode: if kind.is_supervised() {
                BatchMode::Paired
            } else {
                BatchMode::Unpaired
            },
            checkpoint_every: 10,
            lr_decay: LrDecay::None,
            arch: ArchConfig::default(),
            manifest: None,
            run_dir: None,
            image_height: None,
            image_width: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("betas must lie in [0, 1) and eps must be positive".into()));
        }
        if self.kind.is_supervised() && self.mode != BatchMode::Paired {
            return Err(Error::Config(format!("{} needs paired data (mode = paired)", self.kind)));
        }
        if self.image_height.is_some() != self.image_width.is_some() {
            return Err(Error::Config("set both image_height and image_width or neither".into()));
        }
        self.loss_weights.validate_for(self.kind)
    }

    /// Learning rate for a 0-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let lr = self.optimizer.learning_rate;
        match self.lr_decay {
            LrDecay::None => lr,
            LrDecay::Linear => {
                let start = self.epochs / 2;
                if epoch < start {
                    lr
                } else {
                    lr * (1.0 - (epoch - start) as f64 / (self.epochs - start) as f64)
                }
            }
        }
    }

    pub fn image_shape_override(&self) -> Option<(usize, usize)> {
        self.image_height.zip(self.image_width)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let kind: ModelKind = entries
            .iter()
            .find(|(k, _)| k == "kind")
            .ok_or_else(|| Error::Config("missing required key `kind`".into()))?
            .1
            .parse()?;
        let mut cfg = TrainConfig::for_kind(kind);
        let mut seen = std::collections::HashSet::new();
        for (k, v) in &entries {
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("duplicate key `{k}`")));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        TrainConfig::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "kind" => {
                let kind: ModelKind = value.parse()?;
                if kind != self.kind {
                    *self = TrainConfig {
                        kind,
                        loss_weights: LossWeights::for_kind(kind),
                        mode: TrainConfig::for_kind(kind).mode,
                        ..self.clone()
                    };
                }
            }
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.optimizer.learning_rate = num(key, value)?,
            "beta1" => self.optimizer.beta1 = num(key, value)?,
            "beta2" => self.optimizer.beta2 = num(key, value)?,
            "adam_eps" => self.optimizer.eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "adversarial" => self.adversarial = value.parse()?,
            "lr_decay" => self.lr_decay = value.parse()?,
            "base_width" => self.arch.base_width = num(key, value)?,
            "simple_width" => self.arch.simple_width = num(key, value)?,
            "disc_base_width" => self.arch.disc_base_width = num(key, value)?,
            "disc_downsamplings" => self.arch.disc_downsamplings = num(key, value)?,
            "unit_residual_blocks" => self.arch.unit_residual_blocks = num(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "run_dir" => self.run_dir = Some(PathBuf::from(value)),
            "image_height" => self.image_height = Some(num(key, value)?),
            "image_width" => self.image_width = Some(num(key, value)?),
            _ => {
                let term = LossTerm::ALL
                    .into_iter()
                    .find(|t| key.strip_prefix("w_") == Some(t.name()))
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
                self.loss_weights.set(term, num(key, value)?);
            }
        }
        Ok(())
    }

    /// Inverse of [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let o = &self.optimizer;
        let a = &self.arch;
        let _ = writeln!(s, "kind = {}", self.kind);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {:?}", o.learning_rate);
        let _ = writeln!(s, "beta1 = {:?}", o.beta1);
        let _ = writeln!(s, "beta2 = {:?}", o.beta2);
        let _ = writeln!(s, "adam_eps = {:?}", o.eps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "adversarial = {}", self.adversarial);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        for term in LossTerm::ALL {
            let _ = writeln!(s, "w_{} = {:?}", term.name(), self.loss_weights.get(term));
        }
        let _ = writeln!(s, "base_width = {}", a.base_width);
        let _ = writeln!(s, "simple_width = {}", a.simple_width);
        let _ = writeln!(s, "disc_base_width = {}", a.disc_base_width);
        let _ = writeln!(s, "disc_downsamplings = {}", a.disc_downsamplings);
        let _ = writeln!(s, "unit_residual_blocks = {}", a.unit_residual_blocks);
        if let Some(p) = &self.manifest {
            let _ = writeln!(s, "manifest = {}", p.display());
        }
        if let Some(p) = &self.run_dir {
            let _ = writeln!(s, "run_dir = {}", p.display());
        }
        if let Some((h, w)) = self.image_shape_override() {
            let _ = writeln!(s, "image_height = {h}");
            let _ = writeln!(s, "image_width = {w}");
        }
        s
    }
}

fn num<N: FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_sets_defaults() {
        let c = TrainConfig::parse("kind = cyclegan_s\n").unwrap();
        assert_eq!(c.epochs, 180);
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.optimizer.learning_rate, 2e-4);
        assert_eq!(c.loss_weights.w_sup, 10.0);
        assert_eq!(c.mode, BatchMode::Paired);
        assert_eq!(TrainConfig::for_kind(ModelKind::Unit).mode, BatchMode::Unpaired);
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# toy run\nkind = generators_s\nepochs = 2 # short\nw_sup = 3.5\nbase_width=4\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.epochs, 2);
        assert_eq!(c.loss_weights.w_sup, 3.5);
        assert_eq!(c.arch.base_width, 4);
    }

    #[test]
    fn supervised_kind_rejects_unpaired() {
        let err = TrainConfig::parse("kind = cyclegan_s\nmode = unpaired\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(TrainConfig::parse("kind = cyclegan\nmode = unpaired\n").is_ok());
        assert!(TrainConfig::parse("kind = unit\nmode = paired\n").is_ok());
    }

    #[test]
    fn bad_kind_lists_valid_kinds() {
        let msg = TrainConfig::parse("kind = pix2pix\n").unwrap_err().to_string();
        for k in ModelKind::ALL {
            assert!(msg.contains(k.as_str()), "{msg}");
        }
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(TrainConfig::parse("kind = simple\nfoo = 1\n").is_err());
        assert!(TrainConfig::parse("kind = simple\nepochs\n").is_err());
        assert!(TrainConfig::parse("kind = simple\nepochs = -3\n").is_err());
        assert!(TrainConfig::parse("epochs = 3\n").is_err());
        assert!(TrainConfig::parse("kind = simple\nw_adv = 1\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::for_kind(ModelKind::Unit);
        c.epochs = 7;
        c.optimizer.learning_rate = 1e-3;
        c.lr_decay = LrDecay::Linear;
        c.run_dir = Some("runs/u".into());
        c.image_height = Some(32);
        c.image_width = Some(48);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn linear_decay_schedule() {
        let mut c = TrainConfig::for_kind(ModelKind::Simple);
        c.epochs = 10;
        c.optimizer.learning_rate = 1.0;
        assert_eq!(c.learning_rate_at(9), 1.0);
        c.lr_decay = LrDecay::Linear;
        assert_eq!(c.learning_rate_at(4), 1.0);
        assert_eq!(c.learning_rate_at(5), 1.0);
        assert!((c.learning_rate_at(9) - 0.2).abs() < 1e-12);
    }
}
