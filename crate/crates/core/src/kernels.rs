//! Forward and backward kernels for the layers used by the models.
//!
//! Convolutions lower to a matrix product through `im2col`; the transposed
//! convolution reuses the same lowering with the roles of input and output
//! swapped.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Geometry of a strided 2-D correlation from a `channels×height×width`
/// plane stack onto an `out_h×out_w` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        pad_mode: PadMode,
    ) -> Option<Self> {
        if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
            return None;
        }
        if pad_mode == PadMode::Reflect && (pad >= height || pad >= width) {
            return None;
        }
        Some(ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            pad_mode,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Rows of the lowered matrix.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// For every kernel offset and output coordinate, the source coordinate
    /// along an axis of length `len` (None when it falls in zero padding).
    fn axis_map(&self, len: usize, out: usize) -> Vec<Option<usize>> {
        let mut map = Vec::with_capacity(self.kernel * out);
        for k in 0..self.kernel {
            for o in 0..out {
                let pos = (o * self.stride + k) as isize - self.pad as isize;
                let src = if pos >= 0 && (pos as usize) < len {
                    Some(pos as usize)
                } else {
                    match self.pad_mode {
                        PadMode::Zero => None,
                        PadMode::Reflect => {
                            let last = len as isize - 1;
                            let r = if pos < 0 { -pos } else { 2 * last - pos };
                            Some(r as usize)
                        }
                    }
                };
                map.push(src);
            }
        }
        map
    }
}

/// Lowers one sample (`channels×height×width`) into `cols`
/// (`col_rows × col_cols`, row-major).
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ymap = g.axis_map(g.height, g.out_h);
    let xmap = g.axis_map(g.width, g.out_w);
    let plane = g.height * g.width;
    let ncol = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match ymap[ki * g.out_h + oy] {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let srow = &src[iy * g.width..(iy + 1) * g.width];
                            let xm = &xmap[kj * g.out_w..(kj + 1) * g.out_w];
                            for (v, m) in line.iter_mut().zip(xm) {
                                *v = match m {
                                    Some(ix) => srow[*ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto a zeroed sample buffer,
/// accumulating overlapping contributions.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = T::zero());
    let ymap = g.axis_map(g.height, g.out_h);
    let xmap = g.axis_map(g.width, g.out_w);
    let plane = g.height * g.width;
    let ncol = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let dst = &mut x[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    if let Some(iy) = ymap[ki * g.out_h + oy] {
                        let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        let xm = &xmap[kj * g.out_w..(kj + 1) * g.out_w];
                        let drow = &mut dst[iy * g.width..(iy + 1) * g.width];
                        for (v, m) in line.iter().zip(xm) {
                            if let Some(ix) = m {
                                drow[*ix] += *v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Correlation of a batch. `x` is `n×cin×h×w`, `weight` is `cout×(cin·k·k)`.
/// Returns the output and the lowered inputs kept for the backward pass.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
) -> (Vec<T>, Vec<T>) {
    let k = g.col_rows();
    let ncol = g.col_cols();
    let in_per = g.channels * g.height * g.width;
    let mut cols = vec![T::zero(); batch * k * ncol];
    let mut out = vec![T::zero(); batch * cout * ncol];
    for n in 0..batch {
        let c = &mut cols[n * k * ncol..(n + 1) * k * ncol];
        im2col(&x[n * in_per..(n + 1) * in_per], g, c);
        let o = &mut out[n * cout * ncol..(n + 1) * cout * ncol];
        T::gemm(cout, k, ncol, weight, false, c, false, o, false);
        if let Some(b) = bias {
            for (ch, bv) in b.iter().enumerate() {
                o[ch * ncol..(ch + 1) * ncol].iter_mut().for_each(|v| *v += *bv);
            }
        }
    }
    (out, cols)
}

/// Gradients of [`conv2d_forward`]: returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<T: Scalar>(
    dout: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    cols: &[T],
    cout: usize,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let k = g.col_rows();
    let ncol = g.col_cols();
    let in_per = g.channels * g.height * g.width;
    let mut dw = vec![T::zero(); cout * k];
    let mut db = vec![T::zero(); cout];
    let mut dx = want_dx.then(|| vec![T::zero(); batch * in_per]);
    let mut dcols = vec![T::zero(); if want_dx { k * ncol } else { 0 }];
    for n in 0..batch {
        let d = &dout[n * cout * ncol..(n + 1) * cout * ncol];
        let c = &cols[n * k * ncol..(n + 1) * k * ncol];
        T::gemm(cout, ncol, k, d, false, c, true, &mut dw, true);
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += d[ch * ncol..(ch + 1) * ncol].iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(k, cout, ncol, weight, true, d, false, &mut dcols, false);
            col2im(&dcols, g, &mut dx[n * in_per..(n + 1) * in_per]);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution. `g` describes the forward correlation from the
/// (large) output onto the (small) input, so `g.out_h×g.out_w` is the input
/// grid and `g.channels` the output channel count. `weight` is
/// `cin×(cout·k·k)`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    cin: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let k = g.col_rows();
    let ncol = g.col_cols();
    let out_plane = g.height * g.width;
    let out_per = g.channels * out_plane;
    let mut cols = vec![T::zero(); k * ncol];
    let mut out = vec![T::zero(); batch * out_per];
    for n in 0..batch {
        let xn = &x[n * cin * ncol..(n + 1) * cin * ncol];
        T::gemm(k, cin, ncol, weight, true, xn, false, &mut cols, false);
        let o = &mut out[n * out_per..(n + 1) * out_per];
        col2im(&cols, g, o);
        if let Some(b) = bias {
            for (ch, bv) in b.iter().enumerate() {
                o[ch * out_plane..(ch + 1) * out_plane]
                    .iter_mut()
                    .for_each(|v| *v += *bv);
            }
        }
    }
    out
}

/// Gradients of [`conv_transpose2d_forward`]: returns `(dx, dweight, dbias)`.
pub fn conv_transpose2d_backward<T: Scalar>(
    dout: &[T],
    x: &[T],
    batch: usize,
    cin: usize,
    g: &ConvGeom,
    weight: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let k = g.col_rows();
    let ncol = g.col_cols();
    let out_plane = g.height * g.width;
    let out_per = g.channels * out_plane;
    let mut dw = vec![T::zero(); cin * k];
    let mut db = vec![T::zero(); g.channels];
    let mut dx = want_dx.then(|| vec![T::zero(); batch * cin * ncol]);
    let mut cols = vec![T::zero(); k * ncol];
    for n in 0..batch {
        let d = &dout[n * out_per..(n + 1) * out_per];
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += d[ch * out_plane..(ch + 1) * out_plane].iter().copied().sum::<T>();
        }
        im2col(d, g, &mut cols);
        let xn = &x[n * cin * ncol..(n + 1) * cin * ncol];
        T::gemm(cin, ncol, k, xn, false, &cols, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * cin * ncol..(n + 1) * cin * ncol];
            T::gemm(cin, k, ncol, weight, false, &cols, false, dxn, false);
        }
    }
    (dx, dw, db)
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-plane normalization. Returns `(y, inv_std per plane)`; `y` doubles as
/// the normalized input needed by the backward pass.
pub fn instance_norm_forward<T: Scalar>(x: &[T], planes: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::lit(INSTANCE_NORM_EPS);
    let count = T::from_usize_lossy(plane);
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(planes);
    for p in 0..planes {
        let src = &x[p * plane..(p + 1) * plane];
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in y[p * plane..(p + 1) * plane].iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        inv.push(is);
    }
    (y, inv)
}

pub fn instance_norm_backward<T: Scalar>(dy: &[T], y: &[T], inv: &[T], plane: usize) -> Vec<T> {
    let count = T::from_usize_lossy(plane);
    let mut dx = vec![T::zero(); dy.len()];
    for (p, &is) in inv.iter().enumerate() {
        let r = p * plane..(p + 1) * plane;
        let (d, yy) = (&dy[r.clone()], &y[r.clone()]);
        let mean_d = d.iter().copied().sum::<T>() / count;
        let mean_dy = d.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / count;
        for ((o, &dv), &yv) in dx[r].iter_mut().zip(d).zip(yy) {
            *o = is * (dv - mean_d - yv * mean_dy);
        }
    }
    dx
}
