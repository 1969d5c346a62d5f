//! Reverse-mode differentiation over a define-by-run tape.
//!
//! Parameters live in a [`ParamStore`]; a [`Tape`] borrows the store, records
//! every operation of one forward pass and replays it backwards. A parameter
//! used several times in one pass (shared layers) maps to a single tape node,
//! so its gradient is the sum over all uses.

use std::collections::HashMap;

use crate::kernels::{self, ConvGeom};
use crate::losses;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, addressed by insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.values
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (v, n))| (ParamId(i), n.as_str(), v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Add(Var, Var),
    Scale(Var, T),
    WeightedSum(Vec<(Var, T)>),
    MeanAbsDiff(Var, Var),
    MeanSquaredOffset(Var, T),
    BceWithLogits(Var, T),
    MeanSquare(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass.
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient with respect to an input created by [`Tape::input_with_grad`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Cuts the graph: same value, no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = self.push(t, Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    /// Correlation with weight `[cout, cin, k, k]` and optional bias `[1, cout, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let xs = self.value(x).shape();
        let cout = self.value(w).shape()[0];
        assert_eq!(xs[1..], [geom.channels, geom.height, geom.width], "conv2d input shape");
        let bias = b.map(|b| self.value(b).data().to_vec());
        let (out, cols) = kernels::conv2d_forward(
            self.value(x).data(),
            xs[0],
            &geom,
            self.value(w).data(),
            bias.as_deref(),
            cout,
        );
        let shape = [xs[0], cout, geom.out_h, geom.out_w];
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            Tensor::from_vec(shape, out).expect("conv output"),
            Op::Conv { x, w, b, geom, cols },
            needs,
        )
    }

    /// Transposed convolution with weight `[cin, cout, k, k]`. `geom` is the
    /// forward correlation from the output grid back to the input grid.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let xs = self.value(x).shape();
        assert_eq!(xs[2..], [geom.out_h, geom.out_w], "conv_transpose2d input shape");
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            xs[0],
            xs[1],
            &geom,
            self.value(w).data(),
            bias.as_deref(),
        );
        let shape = [xs[0], geom.channels, geom.height, geom.width];
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            Tensor::from_vec(shape, out).expect("conv_transpose output"),
            Op::ConvTranspose { x, w, b, geom },
            needs,
        )
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.value(x).shape();
        let (y, inv_std) = kernels::instance_norm_forward(self.value(x).data(), n * c, h * w);
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec([n, c, h, w], y).expect("norm output"),
            Op::InstanceNorm { x, inv_std },
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let needs = self.needs(x);
        self.push(y, Op::LeakyRelu(x, s), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Add(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::lit(k);
        let y = self.value(x).map(|v| v * k);
        let needs = self.needs(x);
        self.push(y, Op::Scale(x, k), needs)
    }

    /// `Σ wᵢ·xᵢ` over equally shaped values.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let shape = self.value(terms[0].0).shape();
        let mut y = Tensor::zeros(shape);
        let mut needs = false;
        let mut kept = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            let w = T::lit(w);
            for (o, &x) in y.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += w * x;
            }
            needs |= self.needs(v);
            kept.push((v, w));
        }
        self.push(y, Op::WeightedSum(kept), needs)
    }

    /// `mean |a - b|` as a scalar node.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mean_abs_diff shapes");
        let v = losses::mean_abs_diff(self.value(a).data(), self.value(b).data());
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::scalar(v), Op::MeanAbsDiff(a, b), needs)
    }

    /// `mean (x - target)²`.
    pub fn mean_squared_offset(&mut self, x: Var, target: f64) -> Var {
        let t = T::lit(target);
        let v = losses::mean_squared_offset(self.value(x).data(), t);
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::MeanSquaredOffset(x, t), needs)
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_with_logits(&mut self, x: Var, target: f64) -> Var {
        let t = T::lit(target);
        let v = losses::bce_with_logits(self.value(x).data(), t);
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::BceWithLogits(x, t), needs)
    }

    /// `mean x²`.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let v = losses::mean_square(self.value(x).data());
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::MeanSquare(x), needs)
    }

    pub fn scalar_value(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar");
        t.data()[0]
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, g);
                }
                Op::Param(id) => {
                    out.params.insert(*id, g);
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let cout = self.value(*w).shape()[0];
                    let batch = self.value(*x).batch();
                    let (dx, dw, db) = kernels::conv2d_backward(
                        g.data(),
                        batch,
                        geom,
                        self.value(*w).data(),
                        cols,
                        cout,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::ConvTranspose { x, w, b, geom } => {
                    let xs = self.value(*x).shape();
                    let (dx, dw, db) = kernels::conv_transpose2d_backward(
                        g.data(),
                        self.value(*x).data(),
                        xs[0],
                        xs[1],
                        geom,
                        self.value(*w).data(),
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::InstanceNorm { x, inv_std } => {
                    let [_, _, h, w] = node.value.shape();
                    let dx = kernels::instance_norm_backward(g.data(), node.value.data(), inv_std, h * w);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let dx = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &y)| if y > T::zero() { d } else { T::zero() })
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::LeakyRelu(x, s) => {
                    let dx = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&d, &v)| if v > T::zero() { d } else { d * *s })
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.data().to_vec());
                    self.accumulate(&mut grads, *b, g.into_vec());
                }
                Op::Scale(x, k) => {
                    let dx = g.data().iter().map(|&d| d * *k).collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        let dx = g.data().iter().map(|&d| d * *w).collect();
                        self.accumulate(&mut grads, *v, dx);
                    }
                }
                Op::MeanAbsDiff(a, b) => {
                    let up = g.data()[0];
                    let da: Vec<T> = losses::mean_abs_diff_grad(self.value(*a).data(), self.value(*b).data())
                        .into_iter()
                        .map(|d| d * up)
                        .collect();
                    if self.needs(*b) {
                        let db = da.iter().map(|&d| -d).collect();
                        self.accumulate(&mut grads, *b, db);
                    }
                    self.accumulate(&mut grads, *a, da);
                }
                Op::MeanSquaredOffset(x, t) => {
                    let up = g.data()[0];
                    let dx = losses::mean_squared_offset_grad(self.value(*x).data(), *t)
                        .into_iter()
                        .map(|d| d * up)
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::BceWithLogits(x, t) => {
                    let up = g.data()[0];
                    let dx = losses::bce_with_logits_grad(self.value(*x).data(), *t)
                        .into_iter()
                        .map(|d| d * up)
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::MeanSquare(x) => {
                    let up = g.data()[0];
                    let dx = losses::mean_square_grad(self.value(*x).data())
                        .into_iter()
                        .map(|d| d * up)
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
            }
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        let shape: Shape = self.value(v).shape();
        match grads[v.0].as_mut() {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            None => grads[v.0] = Some(Tensor::from_vec(shape, delta).expect("grad shape")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::PadMode;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central finite differences of `f` at `x`, compared with `analytic`.
    fn check_grad(x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = analytic.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-4, "elem {i}: fd {fd} analytic {an}");
        }
    }

    /// Scalar probe: `Σ r ⊙ y` with fixed random weights, so every output
    /// element contributes.
    fn probe(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Var {
        let r = rand_tensor(tape.value(y).shape(), seed);
        let rv = tape.constant(r);
        let d = tape.add(y, rv);
        // mean((y + r)^2) has gradient depending on every element of y
        tape.mean_square(d)
    }

    fn run_layer(
        x: &Tensor<f64>,
        store: &ParamStore<f64>,
        layer: &dyn Fn(&mut Tape<'_, f64>, Var) -> Var,
    ) -> (f64, Gradients<f64>, Var) {
        let mut tape = Tape::new(store);
        let xv = tape.input_with_grad(x.clone());
        let y = layer(&mut tape, xv);
        let l = probe(&mut tape, y, 99);
        let g = tape.backward(l);
        (tape.scalar_value(l), g, xv)
    }

    #[test]
    fn conv_layers_pass_gradient_checks() {
        for (stride, pad, mode) in [(1, 1, PadMode::Reflect), (2, 1, PadMode::Zero)] {
            let mut store = ParamStore::new();
            let w = store.add("w", rand_tensor([3, 2, 3, 3], 1));
            let b = store.add("b", rand_tensor([1, 3, 1, 1], 2));
            let x = rand_tensor([2, 2, 6, 6], 3);
            let geom = ConvGeom::new(2, 6, 6, 3, stride, pad, mode).unwrap();
            let layer = |t: &mut Tape<'_, f64>, xv: Var| {
                let (wv, bv) = (t.param(w), t.param(b));
                t.conv2d(xv, wv, Some(bv), geom)
            };
            let (_, grads, xv) = run_layer(&x, &store, &layer);
            check_grad(&x, grads.wrt(xv).unwrap(), |xx| run_layer(xx, &store, &layer).0);
            let wt = store.get(w).clone();
            check_grad(&wt, grads.param(w).unwrap(), |ww| {
                let mut s = store.clone();
                *s.get_mut(w) = ww.clone();
                run_layer(&x, &s, &layer).0
            });
        }
    }

    #[test]
    fn transposed_conv_and_norm_pass_gradient_checks() {
        let mut store = ParamStore::new();
        let w = store.add("w", rand_tensor([2, 3, 3, 3], 4));
        let b = store.add("b", rand_tensor([1, 3, 1, 1], 5));
        let x = rand_tensor([1, 2, 3, 3], 6);
        let geom = ConvGeom::new(3, 6, 6, 3, 2, 1, PadMode::Zero).unwrap();
        let layer = |t: &mut Tape<'_, f64>, xv: Var| {
            let (wv, bv) = (t.param(w), t.param(b));
            let y = t.conv_transpose2d(xv, wv, Some(bv), geom);
            let y = t.instance_norm(y);
            t.leaky_relu(y, 0.2)
        };
        let (_, grads, xv) = run_layer(&x, &store, &layer);
        check_grad(&x, grads.wrt(xv).unwrap(), |xx| run_layer(xx, &store, &layer).0);
        let wt = store.get(w).clone();
        check_grad(&wt, grads.param(w).unwrap(), |ww| {
            let mut s = store.clone();
            *s.get_mut(w) = ww.clone();
            run_layer(&x, &s, &layer).0
        });
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        // y = w*x + w*x  =>  dL/dw is twice the single-use gradient
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec([1, 1, 1, 1], vec![0.5]).unwrap());
        let geom = ConvGeom::new(1, 2, 2, 1, 1, 0, PadMode::Zero).unwrap();
        let x = rand_tensor([1, 1, 2, 2], 7);
        let grad_of = |uses: usize| {
            let mut tape = Tape::new(&store);
            let xv = tape.constant(x.clone());
            let mut ys = Vec::new();
            for _ in 0..uses {
                let wv = tape.param(w);
                ys.push((tape.conv2d(xv, wv, None, geom), 1.0));
            }
            let y = tape.weighted_sum(&ys);
            let l = tape.mean_square(y);
            tape.backward(l).param(w).unwrap().data()[0]
        };
        // d/dw mean((k w x)^2) = 2 k^2 w mean(x^2)
        let one = grad_of(1);
        let two = grad_of(2);
        assert!((two - 4.0 * one).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.input_with_grad(rand_tensor([1, 1, 2, 2], 8));
        let d = tape.detach(x);
        let l = tape.mean_square(d);
        let g = tape.backward(l);
        assert!(g.wrt(x).is_none());
    }
}
