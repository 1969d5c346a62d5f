use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::kernels::PadMode;
use crate::nn::{Conv2d, ConvTranspose2d, ResBlock};
use crate::scalar::Scalar;

/// Residual encoder/decoder generator: 7×7 stem, two stride-2
/// downsamplings, `n` residual blocks, two transposed-conv upsamplings and
/// a 7×7 output projection. No output squashing; targets are z-scored.
#[derive(Clone, Debug, PartialEq)]
pub struct ResnetGenerator {
    stem: Conv2d,
    down: [Conv2d; 2],
    blocks: Vec<ResBlock>,
    up: [ConvTranspose2d; 2],
    head: Conv2d,
}

impl ResnetGenerator {
    pub const DOWNSAMPLING: usize = 4;

    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        width: usize,
        n_blocks: usize,
    ) -> Self {
        let w = width;
        let stem = Conv2d::new(store, rng, &format!("{name}.stem"), channels, w, 7, 1, PadMode::Reflect, false);
        let down = [
            Conv2d::new(store, rng, &format!("{name}.down0"), w, 2 * w, 3, 2, PadMode::Zero, false),
            Conv2d::new(store, rng, &format!("{name}.down1"), 2 * w, 4 * w, 3, 2, PadMode::Zero, false),
        ];
        let blocks = (0..n_blocks)
            .map(|i| ResBlock::new(store, rng, &format!("{name}.res{i}"), 4 * w))
            .collect();
        let up = [
            ConvTranspose2d::new(store, rng, &format!("{name}.up0"), 4 * w, 2 * w, false),
            ConvTranspose2d::new(store, rng, &format!("{name}.up1"), 2 * w, w, false),
        ];
        let head = Conv2d::new(store, rng, &format!("{name}.head"), w, channels, 7, 1, PadMode::Reflect, true);
        ResnetGenerator {
            stem,
            down,
            blocks,
            up,
            head,
        }
    }

    pub fn conv_layers(&self) -> usize {
        1 + self.down.len() + 2 * self.blocks.len() + self.up.len() + 1
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(tape, x)?;
        h = tape.instance_norm(h);
        h = tape.relu(h);
        for d in &self.down {
            h = d.forward(tape, h)?;
            h = tape.instance_norm(h);
            h = tape.relu(h);
        }
        for b in &self.blocks {
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

/// Two 3×3 convolutions with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpleGenerator {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl SimpleGenerator {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        width: usize,
    ) -> Self {
        SimpleGenerator {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), channels, width, 3, 1, PadMode::Zero, true),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), width, channels, 3, 1, PadMode::Zero, true),
        }
    }

    pub fn conv_layers(&self) -> usize {
        2
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = tape.relu(h);
        self.conv2.forward(tape, h)
    }
}
