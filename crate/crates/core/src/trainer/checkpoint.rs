//! Checkpoint files.
//!
//! `<run>/<kind>_epoch<N>.ckpt` holds every tensor (parameters and Adam
//! moments) in a small binary container:
//!
//! ```text
//! magic "MRXCKPT\x01" | dtype u8 (4|8) | count u32
//! count × { name_len u32 | name | dims 4×u32 | values (little endian) }
//! crc32 u32 of everything before it
//! ```
//!
//! A JSON sidecar with the same stem records kind, image shape, seed, loss
//! weights, architecture, the full training config and the loss history.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainConfig};
use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{build_model_with, ArchConfig, ModelBundle, ModelKind};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MRXCKPT\x01";
const PARAM: &str = "param/";

/// Everything needed to continue or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub bundle: ModelBundle<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub generator_opt: Adam<T>,
    pub discriminator_opt: Option<Adam<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    kind: ModelKind,
    image_shape: (usize, usize),
    seed: u64,
    loss_weights: LossWeights,
    arch: ArchConfig,
    dtype: String,
    epoch: usize,
    generator_steps: u64,
    discriminator_steps: Option<u64>,
    config: TrainConfig,
    history: Vec<EpochRecord>,
}

pub fn checkpoint_path(run_dir: &Path, kind: ModelKind, epoch: usize) -> PathBuf {
    run_dir.join(format!("{kind}_epoch{epoch}.ckpt"))
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let store = ck.bundle.params();
    let mut entries: Vec<(String, &Tensor<T>)> = store
        .iter()
        .map(|(_, name, t)| (format!("{PARAM}{name}"), t))
        .collect();
    let opts = [("adam.g", Some(&ck.generator_opt)), ("adam.d", ck.discriminator_opt.as_ref())];
    for (prefix, opt) in opts {
        let Some(opt) = opt else { continue };
        for (id, m, v) in opt.state() {
            entries.push((format!("{prefix}.m/{}", store.name(id)), m));
            entries.push((format!("{prefix}.v/{}", store.name(id)), v));
        }
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(T::BYTES as u8);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in &entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let sidecar = Sidecar {
        kind: ck.bundle.kind(),
        image_shape: ck.bundle.image_shape(),
        seed: ck.bundle.seed(),
        loss_weights: *ck.bundle.loss_weights(),
        arch: *ck.bundle.arch(),
        dtype: T::DTYPE.to_string(),
        epoch: ck.epoch,
        generator_steps: ck.generator_opt.steps(),
        discriminator_steps: ck.discriminator_opt.as_ref().map(|o| o.steps()),
        config: ck.config.clone(),
        history: ck.history.clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::NotFound(side));
    }
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
    let entries = read_entries::<T>(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;

    let mut bundle = build_model_with::<T>(
        sidecar.kind,
        sidecar.image_shape,
        sidecar.seed,
        &sidecar.arch,
        sidecar.loss_weights,
    )
    .map_err(|e| Error::Format(format!("sidecar describes an invalid model: {e}")))?;
    let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);

    let store: &mut ParamStore<T> = bundle.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in &ids {
        let key = format!("{PARAM}{}", store.name(*id));
        let t = find(&key).ok_or_else(|| Error::Format(format!("missing tensor {key}")))?;
        if t.shape() != store.get(*id).shape() {
            return Err(Error::Format(format!(
                "{key} has shape {:?}, model expects {:?}",
                t.shape(),
                store.get(*id).shape()
            )));
        }
        *store.get_mut(*id) = t.clone();
    }

    let restore = |prefix: &str, group: &[crate::autograd::ParamId], steps: u64| -> Result<Adam<T>> {
        let mut opt = Adam::new(sidecar.config.optimizer, group);
        let mut state = Vec::new();
        for &id in group {
            let name = bundle.params().name(id);
            let m = find(&format!("{prefix}.m/{name}"));
            let v = find(&format!("{prefix}.v/{name}"));
            match (m, v) {
                (Some(m), Some(v)) => state.push((id, m.clone(), v.clone())),
                (None, None) => {}
                _ => return Err(Error::Format(format!("incomplete optimizer state for {name}"))),
            }
        }
        opt.restore(steps, state);
        Ok(opt)
    };
    let generator_opt = restore("adam.g", bundle.generator_params(), sidecar.generator_steps)?;
    let discriminator_opt = match sidecar.discriminator_steps {
        Some(steps) if sidecar.kind.has_discriminators() => {
            Some(restore("adam.d", bundle.discriminator_params(), steps)?)
        }
        _ => None,
    };
    if sidecar.history.len() != sidecar.epoch {
        return Err(Error::Format(format!(
            "sidecar says epoch {} but holds {} history records",
            sidecar.epoch,
            sidecar.history.len()
        )));
    }
    Ok(Checkpoint {
        bundle,
        config: sidecar.config,
        epoch: sidecar.epoch,
        history: sidecar.history,
        generator_opt,
        discriminator_opt,
    })
}

fn read_entries<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < MAGIC.len() + 1 + 4 + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch (truncated or corrupt file)".into()));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let width = r.take(1)?[0] as usize;
    if width != 4 && width != 8 {
        return Err(Error::Format(format!("unknown value width {width}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * width)?;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| {
                if width == T::BYTES {
                    T::read_le(c)
                } else if width == 4 {
                    T::lit(f32::read_le(c) as f64)
                } else {
                    T::lit(f64::read_le(c))
                }
            })
            .collect();
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Trainer;

    fn small_checkpoint(kind: ModelKind) -> Checkpoint<f32> {
        let arch = ArchConfig {
            base_width: 2,
            simple_width: 3,
            disc_base_width: 2,
            disc_downsamplings: 2,
            unit_residual_blocks: 2,
        };
        let bundle = build_model_with::<f32>(kind, (8, 8), 5, &arch, LossWeights::for_kind(kind)).unwrap();
        let config = TrainConfig {
            arch,
            ..TrainConfig::for_kind(kind)
        };
        Checkpoint {
            generator_opt: Adam::new(config.optimizer, bundle.generator_params()),
            discriminator_opt: kind
                .has_discriminators()
                .then(|| Adam::new(config.optimizer, bundle.discriminator_params())),
            bundle,
            config,
            epoch: 0,
            history: Vec::new(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let ck = small_checkpoint(kind);
            let p = checkpoint_path(dir.path(), kind, 0);
            save_checkpoint(&p, &ck).unwrap();
            let back = load_checkpoint::<f32>(&p).unwrap();
            assert_eq!(back.bundle, ck.bundle, "{kind}");
            assert_eq!(back.config, ck.config);
        }
    }

    #[test]
    fn optimizer_state_round_trips() {
        use crate::data::{Domain, Grid, ImageSlice, PairedDataset, Split};
        let px: Vec<f32> = (0..64).map(|i| (i % 7) as f32).collect();
        let pair = (
            ImageSlice::new(Grid::new(8, 8, px.clone()).unwrap(), Domain::T1, "s", 0).unwrap(),
            ImageSlice::new(Grid::new(8, 8, px).unwrap(), Domain::T2, "s", 0).unwrap(),
        );
        let data = PairedDataset::new(vec![pair], Split::Train).unwrap();
        let ck = small_checkpoint(ModelKind::CycleGan);
        let mut t = Trainer::new(TrainConfig { epochs: 1, ..ck.config }, &data).unwrap();
        t.run_epoch().unwrap();
        let ck = t.checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint::<f32>(&p).unwrap();
        assert_eq!(back.generator_opt, ck.generator_opt);
        assert_eq!(back.discriminator_opt, ck.discriminator_opt);
        assert_eq!(back.history, ck.history);
        assert_eq!(back.epoch, 1);
    }

    #[test]
    fn truncated_and_corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("simple_epoch0.ckpt");
        save_checkpoint(&p, &small_checkpoint(ModelKind::Simple)).unwrap();
        let bytes = fs::read(&p).unwrap();

        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Format(_))));

        let mut flipped = bytes.clone();
        flipped[40] ^= 0xFF;
        fs::write(&p, &flipped).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Format(_))));

        fs::write(&p, b"garbage").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Format(_))));
    }

    #[test]
    fn widens_to_f64() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let ck = small_checkpoint(ModelKind::GeneratorsS);
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint::<f64>(&p).unwrap();
        for ((_, _, a), (_, _, b)) in ck.bundle.params().iter().zip(back.bundle.params().iter()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x as f64 == *y));
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_checkpoint::<f32>(Path::new("/nonexistent/x.ckpt")),
            Err(Error::NotFound(_))
        ));
    }
}
