//! The four invertible layer types. Every layer maps rows of a batch
//! (`n × d`) and reports a per-row log-determinant.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::mlp::{Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::real::Real;
use crate::rng;

/// Bound on the coupling log-scale: `log s = SCALE_BOUND · tanh(raw)`.
pub const SCALE_BOUND: f64 = 2.0;

/// Fixed dimension shuffle, `y[i] = x[perm[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutation {
    pub perm: Vec<usize>,
    pub seed: u64,
}

impl Permutation {
    pub fn random(d: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut rng::seeded(seed, 0x5045_524d));
        Self { perm, seed }
    }

    pub fn identity(d: usize) -> Self {
        Self { perm: (0..d).collect(), seed: 0 }
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        self.perm.iter().all(|&p| p < seen.len() && !core::mem::replace(&mut seen[p], true))
    }

    pub fn apply<T: Real>(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let (src, dst) = (x.row(r), y.row_mut(r));
            for (d, &p) in dst.iter_mut().zip(&self.perm) {
                *d = src[p];
            }
        }
        y
    }

    pub fn apply_inverse<T: Real>(&self, y: &Matrix<T>) -> Matrix<T> {
        let mut x = Matrix::zeros(y.rows(), y.cols());
        for r in 0..y.rows() {
            let (src, dst) = (y.row(r), x.row_mut(r));
            for (&s, &p) in src.iter().zip(&self.perm) {
                dst[p] = s;
            }
        }
        x
    }
}

/// Per-dimension affine map `y = x · exp(log_scale) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm<T> {
    pub log_scale: Vec<T>,
    pub bias: Vec<T>,
    pub initialized: bool,
}

impl<T: Real> ActNorm<T> {
    pub fn identity(d: usize) -> Self {
        Self { log_scale: vec![T::zero(); d], bias: vec![T::zero(); d], initialized: false }
    }

    pub fn scale(&self) -> Vec<T> {
        self.log_scale.iter().map(|l| l.exp()).collect()
    }

    pub fn logdet(&self) -> T {
        self.log_scale.iter().copied().sum()
    }

    /// Sets scale and bias so this batch leaves the layer with zero mean
    /// and unit (population) standard deviation per dimension.
    pub fn initialize_from(&mut self, batch: &Matrix<T>) -> Result<()> {
        let n = batch.rows();
        if n < 2 {
            return Err(Error::InvalidArgument("actnorm initialization needs at least two rows"));
        }
        for j in 0..batch.cols() {
            let mean = (0..n).map(|r| batch[(r, j)].as_f64()).sum::<f64>() / n as f64;
            let var = (0..n).map(|r| { let e = batch[(r, j)].as_f64() - mean; e * e }).sum::<f64>() / n as f64;
            let std = libm::sqrt(var);
            if !(std > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::DegenerateBatchDimension(j));
            }
            self.log_scale[j] = T::of(-libm::log(std));
            self.bias[j] = T::of(-mean / std);
        }
        self.initialized = true;
        Ok(())
    }
}

/// Invertible mixing `y = P · L · U · x` with `L` unit lower triangular
/// and `U` upper triangular whose diagonal is `sign · exp(log_diag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuMixing<T> {
    pub perm: Permutation,
    /// Strictly lower part is used; diagonal and upper part are ignored.
    pub lower: Matrix<T>,
    /// Strictly upper part is used; diagonal and lower part are ignored.
    pub upper: Matrix<T>,
    pub log_diag: Vec<T>,
    pub sign: Vec<T>,
}

impl<T: Real> LuMixing<T> {
    pub fn identity(d: usize, perm: Permutation) -> Self {
        Self {
            perm,
            lower: Matrix::zeros(d, d),
            upper: Matrix::zeros(d, d),
            log_diag: vec![T::zero(); d],
            sign: vec![T::one(); d],
        }
    }

    pub fn d(&self) -> usize {
        self.log_diag.len()
    }

    pub fn diag(&self) -> Vec<T> {
        self.log_diag.iter().zip(&self.sign).map(|(l, s)| *s * l.exp()).collect()
    }

    pub fn logdet(&self) -> T {
        self.log_diag.iter().copied().sum()
    }

    /// The full mixing matrix `P·L·U`.
    pub fn weight(&self) -> Matrix<T> {
        let d = self.d();
        let diag = self.diag();
        let l = Matrix::from_fn(d, d, |r, c| match r.cmp(&c) {
            core::cmp::Ordering::Greater => self.lower[(r, c)],
            core::cmp::Ordering::Equal => T::one(),
            core::cmp::Ordering::Less => T::zero(),
        });
        let u = Matrix::from_fn(d, d, |r, c| match r.cmp(&c) {
            core::cmp::Ordering::Less => self.upper[(r, c)],
            core::cmp::Ordering::Equal => diag[r],
            core::cmp::Ordering::Greater => T::zero(),
        });
        self.perm.apply(&l.matmul(&u).transpose()).transpose()
    }

    /// Factorizes `w = P·L·U` with partial pivoting.
    pub fn from_matrix(w: &Matrix<f64>) -> Result<Self> {
        let d = w.rows();
        let mut a = w.clone();
        let mut piv: Vec<usize> = (0..d).collect();
        for c in 0..d {
            let p = (c..d)
                .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
                .ok_or(Error::ShapeMismatch("empty mixing matrix"))?;
            if a[(p, c)].abs() < 1e-12 {
                return Err(Error::InvalidArgument("singular mixing matrix"));
            }
            if p != c {
                for k in 0..d {
                    let t = a[(c, k)];
                    a[(c, k)] = a[(p, k)];
                    a[(p, k)] = t;
                }
                piv.swap(c, p);
            }
            for r in c + 1..d {
                let f = a[(r, c)] / a[(c, c)];
                a[(r, c)] = f;
                for k in c + 1..d {
                    a[(r, k)] -= f * a[(c, k)];
                }
            }
        }
        let mut perm = vec![0; d];
        for (k, &row) in piv.iter().enumerate() {
            perm[row] = k;
        }
        let lower = Matrix::from_fn(d, d, |r, c| if r > c { T::of(a[(r, c)]) } else { T::zero() });
        let upper = Matrix::from_fn(d, d, |r, c| if r < c { T::of(a[(r, c)]) } else { T::zero() });
        let log_diag = (0..d).map(|i| T::of(libm::log(a[(i, i)].abs()))).collect();
        let sign = (0..d).map(|i| if a[(i, i)] < 0.0 { -T::one() } else { T::one() }).collect();
        Ok(Self { perm: Permutation { perm, seed: 0 }, lower, upper, log_diag, sign })
    }

    /// LU factors of a random orthogonal matrix (Gram–Schmidt on Gaussian
    /// columns), the usual well-conditioned starting point for mixing layers.
    pub fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> Self {
        loop {
            let mut q = Matrix::from_fn(d, d, |_, _| rng::standard_normal(rng));
            let mut ok = true;
            for c in 0..d {
                for prev in 0..c {
                    let proj: f64 = (0..d).map(|r| q[(r, c)] * q[(r, prev)]).sum();
                    for r in 0..d {
                        q[(r, c)] -= proj * q[(r, prev)];
                    }
                }
                let norm = libm::sqrt((0..d).map(|r| q[(r, c)] * q[(r, c)]).sum::<f64>());
                if norm < 1e-8 {
                    ok = false;
                    break;
                }
                for r in 0..d {
                    q[(r, c)] /= norm;
                }
            }
            if ok {
                if let Ok(lu) = Self::from_matrix(&q) {
                    return lu;
                }
            }
        }
    }

    /// `u = U·x` and `l = L·u` for one row.
    #[inline]
    fn mix_row(&self, x: &[T], diag: &[T], u: &mut [T], l: &mut [T]) {
        let d = x.len();
        for i in 0..d {
            u[i] = diag[i] * x[i] + dot(&self.upper.row(i)[i + 1..], &x[i + 1..]);
        }
        for i in 0..d {
            l[i] = u[i] + dot(&self.lower.row(i)[..i], &u[..i]);
        }
    }
}

/// Affine coupling: the conditioning half `A` passes through and the other
/// half is transformed as `y_B = x_B · exp(2·tanh(raw)) + shift` where
/// `(raw, shift) = mlp(x_A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoupling<T> {
    pub d: usize,
    /// `false`: A is the first `d/2` dims. `true`: A is the last `d/2` dims.
    pub flip: bool,
    pub mlp: Mlp<T>,
}

impl<T: Real> AffineCoupling<T> {
    pub fn conditioning_len(d: usize) -> usize {
        d / 2
    }

    /// Index ranges `(A, B)`.
    pub fn split(&self) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let a = Self::conditioning_len(self.d);
        if self.flip {
            (self.d - a..self.d, 0..self.d - a)
        } else {
            (0..a, a..self.d)
        }
    }

    fn gather(x: &Matrix<T>, range: core::ops::Range<usize>) -> Matrix<T> {
        Matrix::from_fn(x.rows(), range.len(), |r, c| x[(r, range.start + c)])
    }

    /// `(log_scale, tanh(raw), shift)` as `n × |B|` matrices plus the MLP cache.
    fn conditioner(&self, x_a: &Matrix<T>, keep: bool) -> (Matrix<T>, Matrix<T>, Matrix<T>, Option<MlpCache<T>>) {
        let (out, cache) = if keep {
            let (o, c) = self.mlp.forward_cached(x_a);
            (o, Some(c))
        } else {
            (self.mlp.forward(x_a), None)
        };
        let nb = self.d - Self::conditioning_len(self.d);
        let n = x_a.rows();
        let bound = T::of(SCALE_BOUND);
        let tanh = Matrix::from_fn(n, nb, |r, c| out[(r, c)].tanh());
        let log_scale = tanh.map(|t| bound * t);
        let shift = Matrix::from_fn(n, nb, |r, c| out[(r, nb + c)]);
        (log_scale, tanh, shift, cache)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Permutation(Permutation),
    ActNorm(ActNorm<T>),
    LuMixing(LuMixing<T>),
    Coupling(AffineCoupling<T>),
}

pub(crate) enum ForwardCache<T> {
    None,
    ActNorm { x: Matrix<T> },
    Lu { x: Matrix<T>, u: Matrix<T> },
    Coupling { x_b: Matrix<T>, log_scale: Matrix<T>, tanh: Matrix<T>, mlp: MlpCache<T> },
}

pub(crate) enum InverseCache<T> {
    None,
    Coupling { x_b: Matrix<T>, log_scale: Matrix<T>, tanh: Matrix<T>, mlp: MlpCache<T> },
}

impl<T: Real> Layer<T> {
    pub fn param_len(&self) -> usize {
        match self {
            Layer::Permutation(_) => 0,
            Layer::ActNorm(a) => 2 * a.log_scale.len(),
            Layer::LuMixing(m) => {
                let d = m.d();
                d * (d - 1) + d
            }
            Layer::Coupling(c) => c.mlp.param_len(),
        }
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        match self {
            Layer::Permutation(_) => {}
            Layer::ActNorm(a) => {
                out.extend_from_slice(&a.log_scale);
                out.extend_from_slice(&a.bias);
            }
            Layer::LuMixing(m) => {
                let d = m.d();
                for i in 0..d {
                    out.extend_from_slice(&m.lower.row(i)[..i]);
                }
                for i in 0..d {
                    out.extend_from_slice(&m.upper.row(i)[i + 1..]);
                }
                out.extend_from_slice(&m.log_diag);
            }
            Layer::Coupling(c) => c.mlp.write_params(out),
        }
    }

    pub fn read_params(&mut self, src: &[T]) -> usize {
        match self {
            Layer::Permutation(_) => 0,
            Layer::ActNorm(a) => {
                let d = a.log_scale.len();
                a.log_scale.copy_from_slice(&src[..d]);
                a.bias.copy_from_slice(&src[d..2 * d]);
                2 * d
            }
            Layer::LuMixing(m) => {
                let d = m.d();
                let mut at = 0;
                for i in 0..d {
                    m.lower.row_mut(i)[..i].copy_from_slice(&src[at..at + i]);
                    at += i;
                }
                for i in 0..d {
                    let len = d - i - 1;
                    m.upper.row_mut(i)[i + 1..].copy_from_slice(&src[at..at + len]);
                    at += len;
                }
                m.log_diag.copy_from_slice(&src[at..at + d]);
                at + d
            }
            Layer::Coupling(c) => c.mlp.read_params(src),
        }
    }

    /// Adds `N(0, scale²)` noise to every trainable parameter.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        let mut p = Vec::with_capacity(self.param_len());
        self.write_params(&mut p);
        for v in &mut p {
            *v = *v + T::of(scale * rng::standard_normal(rng));
        }
        self.read_params(&p);
    }

    pub(crate) fn forward(&self, x: &Matrix<T>, keep: bool) -> (Matrix<T>, Vec<T>, ForwardCache<T>) {
        let n = x.rows();
        match self {
            Layer::Permutation(p) => (p.apply(x), vec![T::zero(); n], ForwardCache::None),
            Layer::ActNorm(a) => {
                let scale = a.scale();
                let mut y = x.clone();
                for r in 0..n {
                    for ((v, s), b) in y.row_mut(r).iter_mut().zip(&scale).zip(&a.bias) {
                        *v = *v * *s + *b;
                    }
                }
                let cache = if keep { ForwardCache::ActNorm { x: x.clone() } } else { ForwardCache::None };
                (y, vec![a.logdet(); n], cache)
            }
            Layer::LuMixing(m) => {
                let d = m.d();
                let diag = m.diag();
                let mut u = Matrix::zeros(n, d);
                let mut y = Matrix::zeros(n, d);
                let mut l = vec![T::zero(); d];
                for r in 0..n {
                    m.mix_row(x.row(r), &diag, u.row_mut(r), &mut l);
                    for (dst, &p) in y.row_mut(r).iter_mut().zip(&m.perm.perm) {
                        *dst = l[p];
                    }
                }
                let cache = if keep { ForwardCache::Lu { x: x.clone(), u } } else { ForwardCache::None };
                (y, vec![m.logdet(); n], cache)
            }
            Layer::Coupling(c) => {
                let (ra, rb) = c.split();
                let x_a = AffineCoupling::gather(x, ra);
                let x_b = AffineCoupling::gather(x, rb.clone());
                let (log_scale, tanh, shift, mlp) = c.conditioner(&x_a, keep);
                let mut y = x.clone();
                let mut logdet = vec![T::zero(); n];
                for r in 0..n {
                    let ls = log_scale.row(r);
                    for (j, dst) in y.row_mut(r)[rb.clone()].iter_mut().enumerate() {
                        *dst = x_b[(r, j)] * ls[j].exp() + shift[(r, j)];
                    }
                    logdet[r] = ls.iter().copied().sum();
                }
                let cache = match mlp {
                    Some(mlp) => ForwardCache::Coupling { x_b, log_scale, tanh, mlp },
                    None => ForwardCache::None,
                };
                (y, logdet, cache)
            }
        }
    }

    /// Given `dy` and per-row `dlogdet`, returns `dx` and accumulates
    /// parameter gradients into `grad` (this layer's slice).
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, dy: &Matrix<T>, dlogdet: &[T], grad: Option<&mut [T]>) -> Matrix<T> {
        let n = dy.rows();
        match (self, cache) {
            (Layer::Permutation(p), _) => p.apply_inverse(dy),
            (Layer::ActNorm(a), ForwardCache::ActNorm { x }) => {
                let d = a.log_scale.len();
                let scale = a.scale();
                let mut dx = dy.clone();
                for r in 0..n {
                    for (v, s) in dx.row_mut(r).iter_mut().zip(&scale) {
                        *v = *v * *s;
                    }
                }
                if let Some(g) = grad {
                    let (g_ls, g_b) = g.split_at_mut(d);
                    for r in 0..n {
                        for j in 0..d {
                            g_ls[j] = g_ls[j] + dy[(r, j)] * x[(r, j)] * scale[j] + dlogdet[r];
                            g_b[j] = g_b[j] + dy[(r, j)];
                        }
                    }
                }
                dx
            }
            (Layer::LuMixing(m), ForwardCache::Lu { x, u }) => {
                let d = m.d();
                let diag = m.diag();
                let mut dx = Matrix::zeros(n, d);
                let mut dl = vec![T::zero(); d];
                let mut du = vec![T::zero(); d];
                let mut grad = grad;
                let lower_len = d * (d - 1) / 2;
                for r in 0..n {
                    for (&g, &p) in dy.row(r).iter().zip(&m.perm.perm) {
                        dl[p] = g;
                    }
                    let (xr, ur) = (x.row(r), u.row(r));
                    // du = Lᵀ dl
                    du.copy_from_slice(&dl);
                    for i in 1..d {
                        let li = dl[i];
                        for (dst, &lv) in du[..i].iter_mut().zip(&m.lower.row(i)[..i]) {
                            *dst = *dst + lv * li;
                        }
                    }
                    if let Some(g) = grad.as_deref_mut() {
                        let (g_low, rest) = g.split_at_mut(lower_len);
                        let (g_up, g_diag) = rest.split_at_mut(lower_len);
                        let mut at = 0;
                        for i in 0..d {
                            for (gv, &uv) in g_low[at..at + i].iter_mut().zip(&ur[..i]) {
                                *gv = *gv + dl[i] * uv;
                            }
                            at += i;
                        }
                        let mut at = 0;
                        for i in 0..d {
                            let len = d - i - 1;
                            for (gv, &xv) in g_up[at..at + len].iter_mut().zip(&xr[i + 1..]) {
                                *gv = *gv + du[i] * xv;
                            }
                            at += len;
                            g_diag[i] = g_diag[i] + du[i] * xr[i] * diag[i] + dlogdet[r];
                        }
                    }
                    // dx = Uᵀ du
                    let dxr = dx.row_mut(r);
                    for i in 0..d {
                        dxr[i] = dxr[i] + diag[i] * du[i];
                        let ui = du[i];
                        for (dst, &uv) in dxr[i + 1..].iter_mut().zip(&m.upper.row(i)[i + 1..]) {
                            *dst = *dst + uv * ui;
                        }
                    }
                }
                dx
            }
            (Layer::Coupling(c), ForwardCache::Coupling { x_b, log_scale, tanh, mlp }) => {
                let (ra, rb) = c.split();
                let nb = rb.len();
                let bound = T::of(SCALE_BOUND);
                let mut dx = dy.clone();
                let mut d_out = Matrix::zeros(n, 2 * nb);
                for r in 0..n {
                    for j in 0..nb {
                        let g = dy[(r, rb.start + j)];
                        let s = log_scale[(r, j)].exp();
                        dx[(r, rb.start + j)] = g * s;
                        let d_ls = g * s * x_b[(r, j)] + dlogdet[r];
                        let th = tanh[(r, j)];
                        d_out[(r, j)] = d_ls * bound * (T::one() - th * th);
                        d_out[(r, nb + j)] = g;
                    }
                }
                let dx_a = c.mlp.backward(mlp, &d_out, grad);
                for r in 0..n {
                    for (j, dst) in dx.row_mut(r)[ra.clone()].iter_mut().enumerate() {
                        *dst = *dst + dx_a[(r, j)];
                    }
                }
                dx
            }
            _ => unreachable!("forward cache does not belong to this layer"),
        }
    }

    /// Inverse map; the returned log-determinant is that of `∂x/∂y`.
    pub(crate) fn inverse(&self, y: &Matrix<T>, keep: bool) -> (Matrix<T>, Vec<T>, InverseCache<T>) {
        let n = y.rows();
        match self {
            Layer::Permutation(p) => (p.apply_inverse(y), vec![T::zero(); n], InverseCache::None),
            Layer::ActNorm(a) => {
                let mut x = y.clone();
                for r in 0..n {
                    for ((v, l), b) in x.row_mut(r).iter_mut().zip(&a.log_scale).zip(&a.bias) {
                        *v = (*v - *b) * (-*l).exp();
                    }
                }
                (x, vec![-a.logdet(); n], InverseCache::None)
            }
            Layer::LuMixing(m) => {
                let d = m.d();
                let diag = m.diag();
                let mut x = Matrix::zeros(n, d);
                let mut w = vec![T::zero(); d];
                for r in 0..n {
                    for (&v, &p) in y.row(r).iter().zip(&m.perm.perm) {
                        w[p] = v;
                    }
                    // L w' = w
                    for i in 1..d {
                        let s = dot(&m.lower.row(i)[..i], &w[..i]);
                        w[i] = w[i] - s;
                    }
                    // U x = w'
                    let xr = x.row_mut(r);
                    for i in (0..d).rev() {
                        let s = dot(&m.upper.row(i)[i + 1..], &xr[i + 1..]);
                        xr[i] = (w[i] - s) / diag[i];
                    }
                }
                (x, vec![-m.logdet(); n], InverseCache::None)
            }
            Layer::Coupling(c) => {
                let (ra, rb) = c.split();
                let y_a = AffineCoupling::gather(y, ra);
                let (log_scale, tanh, shift, mlp) = c.conditioner(&y_a, keep);
                let mut x = y.clone();
                let nb = rb.len();
                let mut x_b = Matrix::zeros(n, nb);
                let mut logdet = vec![T::zero(); n];
                for r in 0..n {
                    let ls = log_scale.row(r);
                    for j in 0..nb {
                        let v = (y[(r, rb.start + j)] - shift[(r, j)]) * (-ls[j]).exp();
                        x[(r, rb.start + j)] = v;
                        x_b[(r, j)] = v;
                    }
                    logdet[r] = -ls.iter().copied().sum::<T>();
                }
                let cache = match mlp {
                    Some(mlp) => InverseCache::Coupling { x_b, log_scale, tanh, mlp },
                    None => InverseCache::None,
                };
                (x, logdet, cache)
            }
        }
    }

    /// Input gradient of the inverse map: given `dx` and per-row weights on
    /// the inverse log-determinant, returns `dy`.
    pub(crate) fn inverse_backward(&self, cache: &InverseCache<T>, dx: &Matrix<T>, dlogdet: &[T]) -> Matrix<T> {
        let n = dx.rows();
        match (self, cache) {
            (Layer::Permutation(p), _) => p.apply(dx),
            (Layer::ActNorm(a), _) => {
                let inv: Vec<T> = a.log_scale.iter().map(|l| (-*l).exp()).collect();
                let mut dy = dx.clone();
                for r in 0..n {
                    for (v, s) in dy.row_mut(r).iter_mut().zip(&inv) {
                        *v = *v * *s;
                    }
                }
                dy
            }
            (Layer::LuMixing(m), _) => {
                let d = m.d();
                let diag = m.diag();
                let mut dy = Matrix::zeros(n, d);
                let mut a = vec![T::zero(); d];
                for r in 0..n {
                    // Uᵀ a = dx (forward substitution, row-oriented).
                    a.copy_from_slice(dx.row(r));
                    for i in 0..d {
                        a[i] = a[i] / diag[i];
                        let ai = a[i];
                        for (dst, &uv) in a[i + 1..].iter_mut().zip(&m.upper.row(i)[i + 1..]) {
                            *dst = *dst - uv * ai;
                        }
                    }
                    // Lᵀ b = a (back substitution, row-oriented).
                    for i in (1..d).rev() {
                        let bi = a[i];
                        for (dst, &lv) in a[..i].iter_mut().zip(&m.lower.row(i)[..i]) {
                            *dst = *dst - lv * bi;
                        }
                    }
                    for (dst, &p) in dy.row_mut(r).iter_mut().zip(&m.perm.perm) {
                        *dst = a[p];
                    }
                }
                dy
            }
            (Layer::Coupling(c), InverseCache::Coupling { x_b, log_scale, tanh, mlp }) => {
                let (ra, rb) = c.split();
                let nb = rb.len();
                let bound = T::of(SCALE_BOUND);
                let mut dy = dx.clone();
                let mut d_out = Matrix::zeros(n, 2 * nb);
                for r in 0..n {
                    for j in 0..nb {
                        let g = dx[(r, rb.start + j)];
                        let inv_s = (-log_scale[(r, j)]).exp();
                        dy[(r, rb.start + j)] = g * inv_s;
                        let d_ls = -g * x_b[(r, j)] - dlogdet[r];
                        let th = tanh[(r, j)];
                        d_out[(r, j)] = d_ls * bound * (T::one() - th * th);
                        d_out[(r, nb + j)] = -g * inv_s;
                    }
                }
                let dy_a = c.mlp.backward(mlp, &d_out, None);
                for r in 0..n {
                    for (j, dst) in dy.row_mut(r)[ra.clone()].iter_mut().enumerate() {
                        *dst = *dst + dy_a[(r, j)];
                    }
                }
                dy
            }
            _ => unreachable!("inverse cache does not belong to this layer"),
        }
    }
}
