use alloc::vec;
use alloc::vec::Vec;

use super::layers::{ActNorm, AffineCoupling, ForwardCache, InverseCache, Layer, LuMixing, Permutation};
use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::{Real, LN_2PI};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// Unconditional single-source model: `(permutation, coupling)` steps.
    RealNvp,
    /// Conditional multi-source model: `(actnorm, LU mixing, coupling)` steps
    /// whose first `k_semantic` latent dims carry the source one-hot.
    GlowConditional,
}

impl FlowKind {
    pub fn tag(self) -> u32 {
        match self {
            FlowKind::RealNvp => 0,
            FlowKind::GlowConditional => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(FlowKind::RealNvp),
            1 => Some(FlowKind::GlowConditional),
            _ => None,
        }
    }

    pub fn layers_per_step(self) -> usize {
        match self {
            FlowKind::RealNvp => 2,
            FlowKind::GlowConditional => 3,
        }
    }
}

/// Shape of a flow: number of steps and conditioner MLP widths.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArchitecture {
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl FlowArchitecture {
    /// 16 steps, conditioners with four 128-unit SELU layers.
    pub fn realnvp_default() -> Self {
        Self { steps: 16, hidden: vec![128; 4], activation: Activation::Selu }
    }

    /// 32 steps, conditioners with three 1024-unit leaky-ReLU layers.
    pub fn glow_default() -> Self {
        Self { steps: 32, hidden: vec![1024; 3], activation: Activation::LeakyRelu }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<T> {
    pub kind: FlowKind,
    pub d: usize,
    pub k_semantic: usize,
    pub layers: Vec<Layer<T>>,
}

/// Per-layer caches recorded by [`FlowModel::forward_traced`].
pub struct ForwardTrace<T> {
    caches: Vec<ForwardCache<T>>,
}

/// Per-layer caches recorded by [`FlowModel::inverse_traced`].
pub struct InverseTrace<T> {
    caches: Vec<InverseCache<T>>,
}

impl<T> Default for InverseTrace<T> {
    fn default() -> Self {
        Self { caches: Vec::new() }
    }
}

/// Prior terms of one evaluation, per batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts<T> {
    pub semantic_mse: Vec<T>,
    pub nuisance_nll: Vec<T>,
    pub loss: Vec<T>,
}

fn check_finite<T: Real>(m: &Matrix<T>, logdet: &[T]) -> Result<()> {
    if m.all_finite() && logdet.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalOverflow)
    }
}

impl<T: Real> FlowModel<T> {
    /// Identity-initialized RealNVP model: random fixed permutations and
    /// couplings whose conditioner output layers are zero.
    pub fn realnvp(d: usize, arch: &FlowArchitecture, seed: u64) -> Self {
        assert!(d >= 2, "flows need at least two dimensions");
        let mut layers = Vec::with_capacity(2 * arch.steps);
        for s in 0..arch.steps {
            layers.push(Layer::Permutation(Permutation::random(d, seed.wrapping_add(s as u64))));
            layers.push(Layer::Coupling(Self::coupling(d, s, arch, seed)));
        }
        Self { kind: FlowKind::RealNvp, d, k_semantic: 0, layers }
    }

    /// Identity-initialized conditional Glow model. ActNorm layers start at
    /// scale 1, bias 0 and are flagged uninitialized.
    pub fn glow_conditional(d: usize, k_semantic: usize, arch: &FlowArchitecture, seed: u64) -> Self {
        assert!(d >= 2 && k_semantic < d, "semantic dims must leave room for nuisance dims");
        let mut layers = Vec::with_capacity(3 * arch.steps);
        for s in 0..arch.steps {
            layers.push(Layer::ActNorm(ActNorm::identity(d)));
            let perm = Permutation::random(d, seed.wrapping_add(s as u64));
            layers.push(Layer::LuMixing(LuMixing::identity(d, perm)));
            layers.push(Layer::Coupling(Self::coupling(d, s, arch, seed)));
        }
        Self { kind: FlowKind::GlowConditional, d, k_semantic, layers }
    }

    fn coupling(d: usize, step: usize, arch: &FlowArchitecture, seed: u64) -> AffineCoupling<T> {
        let a = AffineCoupling::<T>::conditioning_len(d);
        let mlp = Mlp::new(a, &arch.hidden, 2 * (d - a), arch.activation, seed, 0x4d4c_5000 + step as u64);
        AffineCoupling { d, flip: step % 2 == 1, mlp }
    }

    /// Perturbs all trainable parameters (mixing layers are redrawn as
    /// random rotations); builds non-trivial models for tests and benchmarks.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut r = rng::seeded(seed, 0x5241_4e44);
        for layer in &mut self.layers {
            match layer {
                Layer::LuMixing(m) => {
                    let d = m.d();
                    *m = LuMixing::random_rotation(d, &mut r);
                    layer.randomize(&mut r, scale * 0.1);
                }
                Layer::ActNorm(_) => layer.randomize(&mut r, scale * 0.5),
                _ => layer.randomize(&mut r, scale),
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.layers.len() / self.kind.layers_per_step()
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Layer::param_len).sum()
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_len());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, src: &[T]) {
        assert_eq!(src.len(), self.param_len(), "parameter vector length");
        let mut at = 0;
        for l in &mut self.layers {
            at += l.read_params(&src[at..]);
        }
    }

    pub fn cast<U: Real>(&self) -> FlowModel<U> {
        fn m<T: Real, U: Real>(x: &Matrix<T>) -> Matrix<U> {
            x.cast()
        }
        fn v<T: Real, U: Real>(x: &[T]) -> Vec<U> {
            x.iter().map(|a| U::of(a.as_f64())).collect()
        }
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Permutation(p) => Layer::Permutation(p.clone()),
                Layer::ActNorm(a) => Layer::ActNorm(ActNorm { log_scale: v(&a.log_scale), bias: v(&a.bias), initialized: a.initialized }),
                Layer::LuMixing(x) => Layer::LuMixing(LuMixing {
                    perm: x.perm.clone(),
                    lower: m(&x.lower),
                    upper: m(&x.upper),
                    log_diag: v(&x.log_diag),
                    sign: v(&x.sign),
                }),
                Layer::Coupling(c) => Layer::Coupling(AffineCoupling {
                    d: c.d,
                    flip: c.flip,
                    mlp: Mlp {
                        layers: c
                            .mlp
                            .layers
                            .iter()
                            .map(|dl| super::mlp::Dense { weight: m(&dl.weight), bias: v(&dl.bias) })
                            .collect(),
                        activation: c.mlp.activation,
                    },
                }),
            })
            .collect();
        FlowModel { kind: self.kind, d: self.d, k_semantic: self.k_semantic, layers }
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.d {
            return Err(Error::ShapeMismatch("flow input dimension"));
        }
        if !x.all_finite() {
            return Err(Error::InvalidArgument("non-finite flow input"));
        }
        Ok(())
    }

    /// Data → latent for each row of `x`, with per-row log|det ∂z/∂x|.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut logdet = vec![T::zero(); x.rows()];
        for layer in &self.layers {
            let (y, ld, _) = layer.forward(&h, false);
            for (a, b) in logdet.iter_mut().zip(ld) {
                *a = *a + b;
            }
            h = y;
        }
        check_finite(&h, &logdet)?;
        Ok((h, logdet))
    }

    pub fn forward_traced(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, ForwardTrace<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut logdet = vec![T::zero(); x.rows()];
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, ld, c) = layer.forward(&h, true);
            for (a, b) in logdet.iter_mut().zip(ld) {
                *a = *a + b;
            }
            caches.push(c);
            h = y;
        }
        check_finite(&h, &logdet)?;
        Ok((h, logdet, ForwardTrace { caches }))
    }

    /// Reverse pass of [`FlowModel::forward_traced`]: returns `dx` and the
    /// parameter gradient (layout of [`FlowModel::params`]).
    pub fn backward(&self, trace: &ForwardTrace<T>, dz: &Matrix<T>, dlogdet: &[T]) -> (Matrix<T>, Vec<T>) {
        let mut grad = vec![T::zero(); self.param_len()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.param_len();
        }
        let mut delta = dz.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let len = layer.param_len();
            let slice = &mut grad[offsets[i]..offsets[i] + len];
            delta = layer.backward(&trace.caches[i], &delta, dlogdet, Some(slice));
        }
        (delta, grad)
    }

    /// Latent → data for each row of `z`, with per-row log|det ∂x/∂z|.
    pub fn inverse(&self, z: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
        let (x, ld, _) = self.inverse_impl(z, false)?;
        Ok((x, ld))
    }

    pub fn inverse_traced(&self, z: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, InverseTrace<T>)> {
        self.inverse_impl(z, true)
    }

    fn inverse_impl(&self, z: &Matrix<T>, keep: bool) -> Result<(Matrix<T>, Vec<T>, InverseTrace<T>)> {
        self.check_input(z)?;
        let mut h = z.clone();
        let mut logdet = vec![T::zero(); z.rows()];
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for layer in self.layers.iter().rev() {
            let (x, ld, c) = layer.inverse(&h, keep);
            for (a, b) in logdet.iter_mut().zip(ld) {
                *a = *a + b;
            }
            if keep {
                caches.push(c);
            }
            h = x;
        }
        check_finite(&h, &logdet)?;
        caches.reverse();
        Ok((h, logdet, InverseTrace { caches }))
    }

    /// Gradient with respect to `z` of a loss depending on `x = inverse(z)`
    /// (through `dx`) and on the inverse log-determinant (through `dlogdet`).
    pub fn inverse_backward(&self, trace: &InverseTrace<T>, dx: &Matrix<T>, dlogdet: &[T]) -> Matrix<T> {
        let mut delta = dx.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            delta = layer.inverse_backward(&trace.caches[i], &delta, dlogdet);
        }
        delta
    }

    /// Standard-normal negative log-likelihood of each row.
    pub fn nll(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        self.require(FlowKind::RealNvp, "nll needs a single-source model")?;
        let (z, logdet) = self.forward(x)?;
        Ok(gaussian_nll(&z, 0, &logdet))
    }

    /// Mean nll over the rows of `x` with its gradient with respect to the
    /// parameters and to `x`.
    pub fn nll_with_grad(&self, x: &Matrix<T>) -> Result<(T, Vec<T>, Matrix<T>)> {
        self.require(FlowKind::RealNvp, "nll needs a single-source model")?;
        let (z, logdet, trace) = self.forward_traced(x)?;
        let n = T::of(x.rows() as f64);
        let values = gaussian_nll(&z, 0, &logdet);
        let mean = values.iter().copied().sum::<T>() / n;
        let dz = z.map(|v| v / n);
        let dld = vec![-T::one() / n; x.rows()];
        let (dx, grad) = self.backward(&trace, &dz, &dld);
        Ok((mean, grad, dx))
    }

    /// `alpha · ‖z_s − onehot‖²/K + nuisance nll` for each row.
    pub fn conditional_loss(&self, x: &Matrix<T>, labels: &[usize], alpha: T) -> Result<LossParts<T>> {
        self.require(FlowKind::GlowConditional, "conditional loss needs a conditional model")?;
        self.check_labels(x, labels)?;
        let (z, logdet) = self.forward(x)?;
        Ok(self.conditional_parts(&z, &logdet, labels, alpha))
    }

    /// Batch-mean conditional loss with gradients with respect to the
    /// parameters and to `x`.
    pub fn conditional_loss_with_grad(&self, x: &Matrix<T>, labels: &[usize], alpha: T) -> Result<(T, Vec<T>, Matrix<T>)> {
        self.require(FlowKind::GlowConditional, "conditional loss needs a conditional model")?;
        self.check_labels(x, labels)?;
        let (z, logdet, trace) = self.forward_traced(x)?;
        let parts = self.conditional_parts(&z, &logdet, labels, alpha);
        let n = T::of(x.rows() as f64);
        let k = self.k_semantic;
        let mean = parts.loss.iter().copied().sum::<T>() / n;
        let sem_w = T::of(2.0) * alpha / (T::of(k as f64) * n);
        let mut dz = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            for c in 0..self.d {
                let v = z[(r, c)];
                dz[(r, c)] = if c < k {
                    let target = if c == labels[r] { T::one() } else { T::zero() };
                    sem_w * (v - target)
                } else {
                    v / n
                };
            }
        }
        let dld = vec![-T::one() / n; x.rows()];
        let (dx, grad) = self.backward(&trace, &dz, &dld);
        Ok((mean, grad, dx))
    }

    fn conditional_parts(&self, z: &Matrix<T>, logdet: &[T], labels: &[usize], alpha: T) -> LossParts<T> {
        let k = self.k_semantic;
        let semantic_mse: Vec<T> = (0..z.rows())
            .map(|r| {
                let zs = &z.row(r)[..k];
                let se: T = zs
                    .iter()
                    .enumerate()
                    .map(|(c, &v)| {
                        let e = v - if c == labels[r] { T::one() } else { T::zero() };
                        e * e
                    })
                    .sum();
                se / T::of(k as f64)
            })
            .collect();
        let nuisance_nll = gaussian_nll(z, k, logdet);
        let loss = semantic_mse.iter().zip(&nuisance_nll).map(|(&s, &n)| alpha * s + n).collect();
        LossParts { semantic_mse, nuisance_nll, loss }
    }

    fn check_labels(&self, x: &Matrix<T>, labels: &[usize]) -> Result<()> {
        if labels.len() != x.rows() {
            return Err(Error::ShapeMismatch("one label per row required"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.k_semantic) {
            return Err(Error::UnknownSource { id: bad, k: self.k_semantic });
        }
        Ok(())
    }

    /// Latent codes `[onehot(label), z_n]` for each row.
    pub fn conditional_codes(&self, labels: &[usize], nuisance: &Matrix<T>) -> Result<Matrix<T>> {
        self.require(FlowKind::GlowConditional, "conditional generation needs a conditional model")?;
        let k = self.k_semantic;
        if nuisance.rows() != labels.len() || nuisance.cols() != self.d - k {
            return Err(Error::ShapeMismatch("nuisance codes must be (labels) × (d − K)"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::UnknownSource { id: bad, k });
        }
        Ok(Matrix::from_fn(labels.len(), self.d, |r, c| {
            if c < k {
                if c == labels[r] {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                nuisance[(r, c - k)]
            }
        }))
    }

    /// `inverse([onehot(label), z_n])` for each row.
    pub fn generate_conditional(&self, labels: &[usize], nuisance: &Matrix<T>) -> Result<Matrix<T>> {
        let codes = self.conditional_codes(labels, nuisance)?;
        Ok(self.inverse(&codes)?.0)
    }

    /// Data-dependent ActNorm initialization: each ActNorm layer, in order,
    /// normalizes the activations it receives from `batch`.
    pub fn init_actnorm(&mut self, batch: &Matrix<T>) -> Result<()> {
        self.check_input(batch)?;
        if batch.rows() < 2 {
            return Err(Error::InvalidArgument("actnorm initialization needs at least two rows"));
        }
        let mut h = batch.clone();
        for layer in &mut self.layers {
            if let Layer::ActNorm(a) = layer {
                if !a.initialized {
                    a.initialize_from(&h)?;
                }
            }
            let (y, _, _) = layer.forward(&h, false);
            if !y.all_finite() {
                return Err(Error::NumericalOverflow);
            }
            h = y;
        }
        Ok(())
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.layers.iter().all(|l| !matches!(l, Layer::ActNorm(a) if !a.initialized))
    }

    fn require(&self, kind: FlowKind, msg: &'static str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::WrongModelKind(msg))
        }
    }
}

/// `((d − skip)/2)·log 2π + ‖z[skip..]‖²/2 − logdet` per row.
pub fn gaussian_nll<T: Real>(z: &Matrix<T>, skip: usize, logdet: &[T]) -> Vec<T> {
    let dims = z.cols() - skip;
    let c = T::of(0.5 * dims as f64 * LN_2PI);
    (0..z.rows())
        .map(|r| {
            let sq: T = z.row(r)[skip..].iter().map(|&v| v * v).sum();
            c + sq * T::of(0.5) - logdet[r]
        })
        .collect()
}
