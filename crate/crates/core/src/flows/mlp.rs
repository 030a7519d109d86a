//! Dense conditioner networks used inside the affine couplings.

use alloc::vec::Vec;

use rand::Rng;

use crate::matrix::{self, Matrix};
use crate::real::Real;
use crate::rng;

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Selu => 0,
            Activation::LeakyRelu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Selu),
            1 => Some(Activation::LeakyRelu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Selu => {
                if x > T::zero() {
                    T::of(SELU_LAMBDA) * x
                } else {
                    T::of(SELU_LAMBDA * SELU_ALPHA) * x.exp_m1()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    T::of(LEAKY_SLOPE) * x
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Selu => {
                if x > T::zero() {
                    T::of(SELU_LAMBDA)
                } else {
                    T::of(SELU_LAMBDA * SELU_ALPHA) * x.exp()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(LEAKY_SLOPE)
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Fully connected layer, `weight` stored `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let n = x.rows();
        let mut out = Matrix::zeros(n, self.outputs());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        matrix::gemm_acc(n, self.inputs(), self.outputs(), x.as_slice(), self.weight.as_slice(), out.as_mut_slice());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub activation: Activation,
}

pub(crate) struct MlpCache<T> {
    /// Input of every layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation output of every hidden layer.
    pre: Vec<Matrix<T>>,
}

impl<T: Real> Mlp<T> {
    /// `inputs → hidden… → outputs`; hidden weights use LeCun-normal
    /// initialization and the output layer starts at zero.
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize, activation: Activation, seed: u64, stream: u64) -> Self {
        let mut rng = rng::seeded(seed, stream);
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(inputs);
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        let last = dims.len() - 2;
        let layers = (0..dims.len() - 1)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let std = 1.0 / libm::sqrt(fan_in.max(1) as f64);
                let weight = if l == last {
                    Matrix::zeros(fan_in, fan_out)
                } else {
                    Matrix::from_fn(fan_in, fan_out, |_, _| T::of(std * rng::standard_normal(&mut rng)))
                };
                Dense { weight, bias: alloc::vec![T::zero(); fan_out] }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn read_params(&mut self, src: &[T]) -> usize {
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&src[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        at
    }

    /// Perturbs every parameter (including the zero output layer) with
    /// `N(0, scale²)` noise; used to build non-trivial test models.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for l in &mut self.layers {
            for w in l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()) {
                *w = *w + T::of(scale * rng::standard_normal(rng));
            }
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        self.forward_impl(x, None)
    }

    pub(crate) fn forward_cached(&self, x: &Matrix<T>) -> (Matrix<T>, MlpCache<T>) {
        let mut cache = MlpCache { inputs: Vec::new(), pre: Vec::new() };
        let out = self.forward_impl(x, Some(&mut cache));
        (out, cache)
    }

    fn forward_impl(&self, x: &Matrix<T>, mut cache: Option<&mut MlpCache<T>>) -> Matrix<T> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h);
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(h);
            }
            if i == last {
                return pre;
            }
            let act = pre.map(|v| self.activation.apply(v));
            if let Some(c) = cache.as_deref_mut() {
                c.pre.push(pre);
            }
            h = act;
        }
        h
    }

    /// Back-propagates `d_out`; parameter gradients are accumulated into
    /// `grad` (laid out as [`Mlp::write_params`]) when given.
    pub(crate) fn backward(&self, cache: &MlpCache<T>, d_out: &Matrix<T>, mut grad: Option<&mut [T]>) -> Matrix<T> {
        let n = d_out.rows();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weight.as_slice().len() + l.bias.len();
        }
        let mut delta = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i + 1 < self.layers.len() {
                let pre = &cache.pre[i];
                for (d, &p) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *d = *d * self.activation.derivative(p);
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let (fan_in, fan_out) = (layer.inputs(), layer.outputs());
                let off = offsets[i];
                let (gw, rest) = g[off..].split_at_mut(fan_in * fan_out);
                matrix::gemm_tn_acc(n, fan_in, fan_out, cache.inputs[i].as_slice(), delta.as_slice(), gw);
                let gb = &mut rest[..fan_out];
                for r in 0..n {
                    for (b, &d) in gb.iter_mut().zip(delta.row(r)) {
                        *b = *b + d;
                    }
                }
            }
            delta = delta.matmul_t(&layer.weight);
        }
        delta
    }
}
