//! Shared-latent encoder/decoder pair.
//!
//! Each domain has its own encoder and decoder. The last residual block of
//! both encoders and the first residual block of both decoders are the same
//! parameters, which ties the two domains to one latent space.

use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::kernels::PadMode;
use crate::nn::{Conv2d, ConvTranspose2d, ResBlock};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct UnitEncoder {
    stem: Conv2d,
    down: [Conv2d; 2],
    private: Vec<ResBlock>,
    shared: ResBlock,
}

impl UnitEncoder {
    pub const DOWNSAMPLING: usize = 4;

    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        width: usize,
        n_private: usize,
        shared: ResBlock,
    ) -> Self {
        let w = width;
        UnitEncoder {
            stem: Conv2d::new(store, rng, &format!("{name}.stem"), channels, w, 7, 1, PadMode::Reflect, false),
            down: [
                Conv2d::new(store, rng, &format!("{name}.down0"), w, 2 * w, 3, 2, PadMode::Zero, false),
                Conv2d::new(store, rng, &format!("{name}.down1"), 2 * w, 4 * w, 3, 2, PadMode::Zero, false),
            ],
            private: (0..n_private)
                .map(|i| ResBlock::new(store, rng, &format!("{name}.res{i}"), 4 * w))
                .collect(),
            shared,
        }
    }

    pub fn conv_layers(&self) -> usize {
        3 + 2 * (self.private.len() + 1)
    }

    pub fn shared_params(&self) -> [ParamId; 2] {
        self.shared.params()
    }

    /// Latent mean field.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(tape, x)?;
        h = tape.instance_norm(h);
        h = tape.relu(h);
        for d in &self.down {
            h = d.forward(tape, h)?;
            h = tape.instance_norm(h);
            h = tape.relu(h);
        }
        for b in &self.private {
            h = b.forward(tape, h)?;
        }
        self.shared.forward(tape, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitDecoder {
    shared: ResBlock,
    private: Vec<ResBlock>,
    up: [ConvTranspose2d; 2],
    head: Conv2d,
}

impl UnitDecoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        width: usize,
        n_private: usize,
        shared: ResBlock,
    ) -> Self {
        let w = width;
        UnitDecoder {
            shared,
            private: (0..n_private)
                .map(|i| ResBlock::new(store, rng, &format!("{name}.res{i}"), 4 * w))
                .collect(),
            up: [
                ConvTranspose2d::new(store, rng, &format!("{name}.up0"), 4 * w, 2 * w, false),
                ConvTranspose2d::new(store, rng, &format!("{name}.up1"), 2 * w, w, false),
            ],
            head: Conv2d::new(store, rng, &format!("{name}.head"), w, channels, 7, 1, PadMode::Reflect, true),
        }
    }

    pub fn conv_layers(&self) -> usize {
        2 * (self.private.len() + 1) + 2 + 1
    }

    pub fn shared_params(&self) -> [ParamId; 2] {
        self.shared.params()
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, z: Var) -> Result<Var> {
        let mut h = self.shared.forward(tape, z)?;
        for b in &self.private {
            h = b.forward(tape, h)?;
        }
        for u in &self.up {
            h = u.forward(tape, h)?;
            h = tape.instance_norm(h);
            h = tape.relu(h);
        }
        self.head.forward(tape, h)
    }
}
