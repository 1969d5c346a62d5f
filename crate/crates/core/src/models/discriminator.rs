use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::kernels::PadMode;
use crate::nn::Conv2d;
use crate::scalar::Scalar;

const SLOPE: f64 = 0.2;

/// Patch discriminator: `n` 4×4 stride-2 convolutions (instance norm after
/// all but the first, leaky ReLU after each) and a 3×3 single-channel score
/// layer. An `h×w` input yields an `h/2ⁿ × w/2ⁿ` score grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator {
    downs: Vec<Conv2d>,
    score: Conv2d,
}

impl PatchDiscriminator {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        width: usize,
        n_downsamplings: usize,
    ) -> Self {
        let mut downs = Vec::with_capacity(n_downsamplings);
        let mut cin = channels;
        for i in 0..n_downsamplings {
            let cout = width << i.min(3);
            downs.push(
                Conv2d::new(store, rng, &format!("{name}.down{i}"), cin, cout, 4, 2, PadMode::Zero, i == 0)
                    .with_pad(1),
            );
            cin = cout;
        }
        let score = Conv2d::new(store, rng, &format!("{name}.score"), cin, 1, 3, 1, PadMode::Zero, true);
        PatchDiscriminator { downs, score }
    }

    pub fn conv_layers(&self) -> usize {
        self.downs.len() + 1
    }

    /// Score grid shape for an `h×w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.downs
            .iter()
            .chain(std::iter::once(&self.score))
            .try_fold((h, w), |(h, w), c| c.output_hw(h, w))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, c) in self.downs.iter().enumerate() {
            h = c.forward(tape, h)?;
            if i > 0 {
                h = tape.instance_norm(h);
            }
            h = tape.leaky_relu(h, SLOPE);
        }
        self.score.forward(tape, h)
    }
}
