//! Parameterized layers on top of the tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, PadMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the zero-mean Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

fn gaussian<T: Scalar, R: Rng>(rng: &mut R, shape: [usize; 4]) -> Tensor<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Square-kernel 2-D convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad_mode: PadMode,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            gaussian(rng, [out_channels, in_channels, kernel, kernel]),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1])));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
            pad_mode,
        }
    }

    /// Overrides the default `kernel / 2` padding.
    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        ConvGeom::new(self.in_channels, h, w, self.kernel, self.stride, self.pad, self.pad_mode)
            .map(|g| (g.out_h, g.out_w))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(x).shape();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let geom = ConvGeom::new(c, h, w, self.kernel, self.stride, self.pad, self.pad_mode)
            .ok_or_else(|| {
                Error::Shape(format!(
                    "{h}x{w} input too small for a {0}x{0} kernel (pad {1})",
                    self.kernel, self.pad
                ))
            })?;
        let wv = tape.param(self.weight);
        let bv = self.bias.map(|b| tape.param(b));
        Ok(tape.conv2d(x, wv, bv, geom))
    }
}

/// 3×3 stride-2 transposed convolution that exactly doubles the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    const KERNEL: usize = 3;
    const STRIDE: usize = 2;
    const PAD: usize = 1;

    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    ) -> Self {
        let k = Self::KERNEL;
        let weight = store.add(format!("{name}.weight"), gaussian(rng, [in_channels, out_channels, k, k]));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1])));
        ConvTranspose2d {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(x).shape();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "transposed conv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let geom = ConvGeom::new(
            self.out_channels,
            2 * h,
            2 * w,
            Self::KERNEL,
            Self::STRIDE,
            Self::PAD,
            PadMode::Zero,
        )
        .filter(|g| g.out_h == h && g.out_w == w)
        .ok_or_else(|| Error::Shape(format!("cannot upsample {h}x{w}")))?;
        let wv = tape.param(self.weight);
        let bv = self.bias.map(|b| tape.param(b));
        Ok(tape.conv_transpose2d(x, wv, bv, geom))
    }
}

/// Two reflect-padded 3×3 convolutions with instance normalization and an
/// identity skip.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, channels: usize) -> Self {
        let conv = |store: &mut ParamStore<T>, rng: &mut R, n: &str| {
            Conv2d::new(store, rng, &format!("{name}.{n}"), channels, channels, 3, 1, PadMode::Reflect, false)
        };
        let conv1 = conv(store, rng, "conv1");
        let conv2 = conv(store, rng, "conv2");
        ResBlock { conv1, conv2 }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, x)?;
        let y = tape.instance_norm(y);
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, y)?;
        let y = tape.instance_norm(y);
        Ok(tape.add(x, y))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.conv1.weight, self.conv2.weight]
    }
}
