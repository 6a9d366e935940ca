//! Dense ReLU networks with explicit backward passes and Adam.
//!
//! Batches are row-major in the sense that each sample is one row of an
//! `nalgebra` matrix: a layer maps `X (B×in)` to `X W + 1 bᵀ (B×out)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Rows per gradient chunk. Fixed so that summation order, and therefore
/// every bit of the result, does not depend on the thread count.
pub const CHUNK_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in × out`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    /// Uniform fan-in initialisation, `U(−1/√in, 1/√in)` for weights and bias.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(n_in, n_out, |_, _| rng.random_range(-bound..bound)),
            bias: DVector::from_fn(n_out, |_, _| rng.random_range(-bound..bound)),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weight;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        z
    }
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

/// Gradient with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (DMatrix::zeros(l.n_in(), l.n_out()), DVector::zeros(l.n_out())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            *w *= s;
            *b *= s;
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.layers.iter().map(|(w, b)| w.norm_squared() + b.norm_squared()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    /// Flat view in [`Mlp::param`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in &self.layers {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }

    /// Sums chunk gradients in order.
    pub fn sum(parts: impl IntoIterator<Item = Grads>) -> Option<Grads> {
        let mut it = parts.into_iter();
        let mut acc = it.next()?;
        for g in it {
            acc.add_assign(&g);
        }
        Some(acc)
    }
}

/// Scales a set of gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Grads], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, h₁, …, out]`; ReLU between layers, linear output.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in()];
        s.extend(self.layers.iter().map(Dense::n_out));
        s
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, Dense::n_out)
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if k < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn forward_tape(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Tape) {
        let last = self.layers.len() - 1;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            tape.inputs.push(h);
            h = if k < last { z.map(|v| v.max(0.0)) } else { z.clone() };
            tape.pre.push(z);
        }
        (h, tape)
    }

    /// Gradients of `Σ d_out ⊙ output` with respect to the parameters and
    /// the input.
    pub fn backward(&self, tape: &Tape, d_out: &DMatrix<f64>) -> (Grads, DMatrix<f64>) {
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for k in (0..self.layers.len()).rev() {
            if k < last {
                delta.zip_apply(&tape.pre[k], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let dw = tape.inputs[k].tr_mul(&delta);
            let db = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            let dx = &delta * self.layers[k].weight.transpose();
            grads.push((dw, db));
            delta = dx;
        }
        grads.reverse();
        (Grads { layers: grads }, delta)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (k, l) in self.layers.iter().enumerate() {
            if i < l.weight.len() {
                return (k, true, i);
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                return (k, false, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i` in flat order (per layer: weight column-major, then bias).
    pub fn param(&self, i: usize) -> f64 {
        match self.locate(i) {
            (k, true, j) => self.layers[k].weight.as_slice()[j],
            (k, false, j) => self.layers[k].bias[j],
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        match self.locate(i) {
            (k, true, j) => self.layers[k].weight.as_mut_slice()[j] = v,
            (k, false, j) => self.layers[k].bias[j] = v,
        }
    }

    /// `θ ← (1 − τ) θ + τ θ_online`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_apply(&o.weight, |a, b| *a = (1.0 - tau) * *a + tau * b);
            t.bias.zip_apply(&o.bias, |a, b| *a = (1.0 - tau) * *a + tau * b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Grads,
    pub v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, g: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        };
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let (mw, mb) = &mut self.m.layers[k];
            let (vw, vb) = &mut self.v.layers[k];
            let (gw, gb) = &g.layers[k];
            update(layer.weight.as_mut_slice(), mw.as_mut_slice(), vw.as_mut_slice(), gw.as_slice());
            update(layer.bias.as_mut_slice(), mb.as_mut_slice(), vb.as_mut_slice(), gb.as_slice());
        }
    }
}

/// Adam on a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub lr: f64,
    pub t: u64,
    pub m: f64,
    pub v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self { lr, t: 0, m: 0.0, v: 0.0 }
    }

    pub fn step(&mut self, p: &mut f64, g: f64) {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t as i32));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t as i32));
        *p -= self.lr * mh / (vh.sqrt() + 1e-8);
    }
}

/// Row ranges of a batch in fixed-size chunks.
pub fn chunks(rows: usize) -> Vec<std::ops::Range<usize>> {
    (0..rows)
        .step_by(CHUNK_ROWS)
        .map(|s| s..(s + CHUNK_ROWS).min(rows))
        .collect()
}

/// Copies rows `r` of `m`.
pub fn rows(m: &DMatrix<f64>, r: &std::ops::Range<usize>) -> DMatrix<f64> {
    m.rows(r.start, r.len()).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[3, 8, 8, 2], &mut rng);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let loss = |n: &Mlp| n.forward(&x).component_mul(&w).sum();
        let (_, tape) = net.forward_tape(&x);
        let (g, dx) = net.backward(&tape, &w);
        let flat = g.flat();
        let h = 1e-6;
        for (i, &analytic) in flat.iter().enumerate() {
            let p = net.param(i);
            net.set_param(i, p + h);
            let up = loss(&net);
            net.set_param(i, p - h);
            let down = loss(&net);
            net.set_param(i, p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {analytic}");
        }
        // input gradient
        let mut xp = x.clone();
        xp[(2, 1)] += h;
        let mut xm = x.clone();
        xm[(2, 1)] -= h;
        let fd = (net.forward(&xp).component_mul(&w).sum() - net.forward(&xm).component_mul(&w).sum()) / (2.0 * h);
        assert!((fd - dx[(2, 1)]).abs() < 1e-6);
    }

    #[test]
    fn soft_update_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let online = Mlp::new(&[2, 4, 1], &mut rng);
        let original = Mlp::new(&[2, 4, 1], &mut rng);
        let mut t = original.clone();
        t.soft_update_from(&online, 0.0);
        assert_eq!(t, original);
        t.soft_update_from(&online, 1.0);
        assert_eq!(t, online);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        let mut opt = Adam::new(&net, 0.05);
        let x = DMatrix::from_element(1, 1, 1.0);
        for _ in 0..2000 {
            let (y, tape) = net.forward_tape(&x);
            let d = y.map(|v| 2.0 * (v - 3.0));
            let (g, _) = net.backward(&tape, &d);
            opt.step(&mut net, &g);
        }
        assert!((net.forward(&x)[(0, 0)] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn clipping_bounds_joint_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[2, 3, 1], &mut rng);
        let mut a = Grads::zeros_like(&net);
        let mut b = Grads::zeros_like(&net);
        a.layers[0].0.fill(10.0);
        b.layers[1].1.fill(10.0);
        let before = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert!(before > 1.0);
        assert!(((a.norm_squared() + b.norm_squared()).sqrt() - 1.0).abs() < 1e-12);
    }
}
