//! Minimal dense-layer machinery with explicit backward passes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Named parameter tensors of a model. Gradients use the same type.
pub trait ParamSet {
    /// Visits each tensor as `(name, shape, column-major values)`.
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites every tensor from a flat vector in visit order.
    fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |_, v| {
            let n = v.len();
            v.copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = value));
    }

    /// Elementwise `self += scale * other` (same layout required).
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.to_flat();
        let mut off = 0;
        self.visit_mut(&mut |_, v| {
            let n = v.len();
            v.iter_mut().zip(&flat[off..off + n]).for_each(|(a, b)| *a += scale * b);
            off += n;
        });
    }

    /// Cheap content hash used to detect caches built from other weights.
    fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |x: u64| h = (h ^ x).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(29);
        self.visit(&mut |name, shape, v| {
            name.bytes().for_each(|b| eat(b as u64));
            shape.iter().for_each(|&d| eat(d as u64));
            v.iter().for_each(|x| eat(x.to_bits()));
        });
        h
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Returns a zero-valued copy with the same layout.
pub fn zeros_like<P: ParamSet + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.fill(0.0);
    z
}

/// Affine layer `y = x W + b` over row-major batches (`x` is `N x in`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: DMatrix::zeros(input, output),
            b: DVector::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(input, output, |_, _| rng.gen_range(-a..a)),
            b: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.w;
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Dense) -> DMatrix<f64> {
        grad.w += x.tr_mul(dy);
        for row in dy.row_iter() {
            grad.b += row.transpose();
        }
        dy * self.w.transpose()
    }

    /// Parameter-only backward, for layers whose input is constant.
    pub fn backward_params(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Dense) {
        grad.w += x.tr_mul(dy);
        for row in dy.row_iter() {
            grad.b += row.transpose();
        }
    }

    pub fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.w"), &[self.w.nrows(), self.w.ncols()], self.w.as_slice());
        f(&format!("{prefix}.b"), &[self.b.len()], self.b.as_slice());
    }

    pub fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_mut_slice());
        f(&format!("{prefix}.b"), self.b.as_mut_slice());
    }
}

pub fn tanh(x: DMatrix<f64>) -> DMatrix<f64> {
    x.map(f64::tanh)
}

/// Backward through `y = tanh(x)` given the forward output `y`.
pub fn tanh_backward(dy: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(y, |g, t| g * (1.0 - t * t))
}
