use alloc::vec;
use alloc::vec::Vec;

use crate::decompose::{check_models, ActivationState, DictionaryState, Models};
use crate::error::{Error, Result};
use crate::flows::{gaussian_nll, FlowModel, InverseTrace};
use crate::matrix::Matrix;
use crate::metrics::reconstruction_error;
use crate::real::Real;

/// Dictionary entries generated from the current codes.
pub struct Reconstruction<T> {
    pub s_hat: Matrix<T>,
    /// Unrectified dictionary entries, one per row: `M × D` (NMF, a copy of
    /// `Wᵀ`), `KT × D` ordered `(k, t)` (DDS-1) or `KN × D`.
    pub entries: Matrix<T>,
    /// Per-entry negative log-likelihood; empty for NMF.
    pub nlls: Vec<T>,
    traces: Vec<InverseTrace<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub recon: f64,
    /// Weighted likelihood term before multiplication by `lambda`.
    pub mle: f64,
    /// H summed to zero, so entry weights fell back to uniform.
    pub uniform_weights: bool,
}

/// Objective value with optional gradients.
pub struct Evaluation<T> {
    pub value: ObjectiveValue,
    pub s_hat: Matrix<T>,
    /// Gradient with respect to the trainable codes, in the dictionary's
    /// flattened storage order; empty unless requested.
    pub d_codes: Vec<T>,
    /// Gradient with respect to H; empty unless requested.
    pub d_h: Option<Matrix<T>>,
}

struct Group<'a, T> {
    model: &'a FlowModel<T>,
    codes: Matrix<T>,
    skip: usize,
}

fn groups<'a, T: Real>(dict: &DictionaryState<T>, models: &Models<'a, T>) -> Vec<Group<'a, T>> {
    match (dict, models) {
        (DictionaryState::Dds1 { z } | DictionaryState::Dds2 { z }, Models::PerSource(ms)) => {
            z.iter().zip(ms.iter()).map(|(c, m)| Group { model: m, codes: c.clone(), skip: 0 }).collect()
        }
        (DictionaryState::Dds3 { semantic, nuisance, .. }, Models::Conditional(m)) => {
            let k = semantic.cols();
            let codes = Matrix::from_fn(semantic.rows(), k + nuisance.cols(), |r, c| {
                if c < k {
                    semantic[(r, c)]
                } else {
                    nuisance[(r, c - k)]
                }
            });
            vec![Group { model: m, codes, skip: k }]
        }
        _ => Vec::new(),
    }
}

/// Forms `Ŝ` and the per-entry likelihoods from the current state.
pub fn reconstruct<T: Real>(dict: &DictionaryState<T>, act: &ActivationState<T>, models: &Models<'_, T>) -> Result<Reconstruction<T>> {
    build(dict, act, models, false)
}

fn build<T: Real>(dict: &DictionaryState<T>, act: &ActivationState<T>, models: &Models<'_, T>, keep: bool) -> Result<Reconstruction<T>> {
    let h = &act.h;
    match dict {
        DictionaryState::Nmf { w, .. } => {
            if w.cols() != h.rows() {
                return Err(Error::ShapeMismatch("H rows must match dictionary columns"));
            }
            let entries = w.transpose();
            return Ok(Reconstruction { s_hat: combine(dict, &entries, h), entries, nlls: Vec::new(), traces: Vec::new() });
        }
        DictionaryState::Dds1 { z } => {
            if h.rows() != z.len() || z.iter().any(|m| m.rows() != h.cols()) {
                return Err(Error::ShapeMismatch("dds1 needs K × T activations and T codes per source"));
            }
        }
        _ => {
            let expected = dict.row_sources().len();
            if h.rows() != expected {
                return Err(Error::ShapeMismatch("H rows must match dictionary columns"));
            }
        }
    }
    let d = groups(dict, models).first().map_or(0, |g| g.model.d);
    check_models(dict, models, d)?;
    let mut rows: Vec<T> = Vec::new();
    let mut nlls = Vec::new();
    let mut traces = Vec::new();
    for g in groups(dict, models) {
        let (x, logdet_inv, trace) = if keep {
            g.model.inverse_traced(&g.codes)?
        } else {
            let (x, ld) = g.model.inverse(&g.codes)?;
            (x, ld, InverseTrace::default())
        };
        let neg: Vec<T> = logdet_inv.iter().map(|&v| -v).collect();
        nlls.extend(gaussian_nll(&g.codes, g.skip, &neg));
        rows.extend_from_slice(x.as_slice());
        traces.push(trace);
    }
    let entries = Matrix::from_vec(nlls.len(), d, rows)?;
    let s_hat = combine(dict, &entries, h);
    Ok(Reconstruction { s_hat, entries, nlls, traces })
}

/// Generates the unrectified dictionary entries (one per row) from the
/// current codes, without recording anything for differentiation.
pub fn dictionary_entries<T: Real>(dict: &DictionaryState<T>, models: &Models<'_, T>) -> Result<Matrix<T>> {
    if let DictionaryState::Nmf { w, .. } = dict {
        return Ok(w.transpose());
    }
    let gs = groups(dict, models);
    let d = gs.first().map_or(0, |g| g.model.d);
    check_models(dict, models, d)?;
    let mut rows = Vec::new();
    let mut count = 0;
    for g in gs {
        rows.extend_from_slice(g.model.inverse(&g.codes)?.0.as_slice());
        count += g.codes.rows();
    }
    Matrix::from_vec(count, d, rows)
}

/// `Ŝ` from dictionary entries (one per row) and activations: the sum of
/// per-frame entries for DDS-1, `rect(W) · H` otherwise (NMF entries are
/// used as stored).
pub fn combine<T: Real>(dict: &DictionaryState<T>, entries: &Matrix<T>, h: &Matrix<T>) -> Matrix<T> {
    let d = entries.cols();
    // Products are formed as (Hᵀ · entries)ᵀ so the inner loop runs over D
    // and per-row overhead scales with T.
    match dict {
        DictionaryState::Nmf { .. } => h.t_matmul(entries).transpose(),
        DictionaryState::Dds1 { .. } => {
            let (k, t) = h.shape();
            let mut s = Matrix::zeros(d, t);
            for src in 0..k {
                for f in 0..t {
                    let a = h[(src, f)];
                    for (b, &w) in entries.row(src * t + f).iter().enumerate() {
                        s[(b, f)] = s[(b, f)] + w.max(T::zero()) * a;
                    }
                }
            }
            s
        }
        _ => h.t_matmul(&entries.map(|v| v.max(T::zero()))).transpose(),
    }
}

/// Mass of each dictionary entry in H: row sums, or single entries for DDS-1.
fn masses<T: Real>(dict: &DictionaryState<T>, h: &Matrix<T>) -> Vec<f64> {
    match dict {
        DictionaryState::Dds1 { .. } => h.as_slice().iter().map(|v| v.as_f64()).collect(),
        _ => (0..h.rows()).map(|j| h.row(j).iter().map(|v| v.as_f64()).sum()).collect(),
    }
}

/// `‖spec − s_hat‖_F + lambda · Σ_j ρ_j nll_j` with `ρ` the share of H carried
/// by each entry (uniform when H sums to zero).
pub fn objective<T: Real>(spec: &Matrix<T>, rec: &Reconstruction<T>, dict: &DictionaryState<T>, act: &ActivationState<T>, lambda_mle: f64) -> Result<ObjectiveValue> {
    if spec.shape() != rec.s_hat.shape() {
        return Err(Error::ShapeMismatch("spectrogram and reconstruction differ in shape"));
    }
    let recon = reconstruction_error(spec, &rec.s_hat)?;
    let (mle, uniform) = weighted_nll(&rec.nlls, &masses(dict, &act.h));
    Ok(ObjectiveValue { total: recon + lambda_mle * mle, recon, mle, uniform_weights: uniform })
}

pub(super) fn weighted_nll<T: Real>(nlls: &[T], masses: &[f64]) -> (f64, bool) {
    if nlls.is_empty() {
        return (0.0, false);
    }
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        (nlls.iter().zip(masses).map(|(n, m)| n.as_f64() * m).sum::<f64>() / total, false)
    } else {
        (nlls.iter().map(|n| n.as_f64()).sum::<f64>() / nlls.len() as f64, true)
    }
}

/// Objective value plus the gradients with respect to the codes and/or H.
pub fn evaluate<T: Real>(
    spec: &Matrix<T>,
    dict: &DictionaryState<T>,
    act: &ActivationState<T>,
    models: &Models<'_, T>,
    lambda_mle: f64,
    want_codes: bool,
    want_h: bool,
) -> Result<Evaluation<T>> {
    let want_codes = want_codes && dict.kind().uses_flows();
    let rec = build(dict, act, models, want_codes)?;
    let value = objective(spec, &rec, dict, act, lambda_mle)?;
    let h = &act.h;
    let (d, t) = spec.shape();
    // ∂‖S − Ŝ‖/∂Ŝ, zero at an exact fit.
    let g = if value.recon > 0.0 {
        let inv = T::of(1.0 / value.recon);
        Matrix::from_fn(d, t, |r, c| (rec.s_hat[(r, c)] - spec[(r, c)]) * inv)
    } else {
        Matrix::zeros(d, t)
    };
    let mass_total: f64 = masses(dict, h).iter().sum();
    let lambda = T::of(lambda_mle);

    let d_h = want_h.then(|| {
        let mut dh = match dict {
            DictionaryState::Nmf { w, .. } => w.t_matmul(&g),
            DictionaryState::Dds1 { .. } => {
                let gt = g.transpose();
                Matrix::from_fn(h.rows(), t, |src, f| {
                    rec.entries.row(src * t + f).iter().zip(gt.row(f)).map(|(&w, &gv)| w.max(T::zero()) * gv).sum()
                })
            }
            _ => rec.entries.map(|v| v.max(T::zero())).matmul(&g),
        };
        if !rec.nlls.is_empty() && !value.uniform_weights && lambda_mle > 0.0 {
            // ∂(Σ m_j nll_j / Σ m)/∂m_j = (nll_j − mle)/Σ m.
            let inv = 1.0 / mass_total;
            let mle = value.mle;
            let per_entry: Vec<T> = rec.nlls.iter().map(|n| T::of((n.as_f64() - mle) * inv) * lambda).collect();
            match dict {
                DictionaryState::Dds1 { .. } => {
                    for (v, &p) in dh.as_mut_slice().iter_mut().zip(&per_entry) {
                        *v = *v + p;
                    }
                }
                _ => {
                    for j in 0..dh.rows() {
                        for v in dh.row_mut(j) {
                            *v = *v + per_entry[j];
                        }
                    }
                }
            }
        }
        dh
    });

    let mut d_codes = Vec::new();
    if want_codes {
        let rho: Vec<f64> = {
            let m = masses(dict, h);
            if value.uniform_weights {
                vec![1.0 / m.len() as f64; m.len()]
            } else {
                m.iter().map(|v| v / mass_total).collect()
            }
        };
        let mask = |x: T| if x > T::zero() { T::one() } else { T::zero() };
        // ∂R/∂entries, rectification passing gradient through positive entries only.
        let d_entries = match dict {
            DictionaryState::Dds1 { .. } => {
                let (k, _) = h.shape();
                let gt = g.transpose();
                let mut de = Matrix::zeros(k * t, d);
                for src in 0..k {
                    for f in 0..t {
                        let a = h[(src, f)];
                        let e = src * t + f;
                        for b in 0..d {
                            de[(e, b)] = gt[(f, b)] * a * mask(rec.entries[(e, b)]);
                        }
                    }
                }
                de
            }
            _ => {
                let mut de = h.matmul_t(&g);
                for (v, &x) in de.as_mut_slice().iter_mut().zip(rec.entries.as_slice()) {
                    *v = *v * mask(x);
                }
                de
            }
        };
        let mut offset = 0;
        for (gi, grp) in groups(dict, models).iter().enumerate() {
            let rows = grp.codes.rows();
            let dx = Matrix::from_fn(rows, d, |r, c| d_entries[(offset + r, c)]);
            let w: Vec<T> = rho[offset..offset + rows].iter().map(|&p| lambda * T::of(p)).collect();
            let mut dz = grp.model.inverse_backward(&rec.traces[gi], &dx, &w);
            for r in 0..rows {
                for c in grp.skip..d {
                    dz[(r, c)] = dz[(r, c)] + w[r] * grp.codes[(r, c)];
                }
            }
            for r in 0..rows {
                d_codes.extend_from_slice(&dz.row(r)[grp.skip..]);
            }
            offset += rows;
        }
    }
    Ok(Evaluation { value, s_hat: rec.s_hat, d_codes, d_h })
}

/// Rescales each activation by the norm of its rectified dictionary entry and
/// sums rows by source, giving `K × T`.
pub fn postprocess<T: Real>(dict: &DictionaryState<T>, act: &ActivationState<T>, models: &Models<'_, T>) -> Result<Matrix<T>> {
    let rec = reconstruct(dict, act, models)?;
    let norms: Vec<T> = (0..rec.entries.rows())
        .map(|e| rec.entries.row(e).iter().map(|&v| { let r = v.max(T::zero()); r * r }).sum::<T>().sqrt())
        .collect();
    let h = &act.h;
    let t = h.cols();
    let k = dict.k();
    let mut out = Matrix::zeros(k, t);
    match dict {
        DictionaryState::Dds1 { .. } => {
            for src in 0..k {
                for f in 0..t {
                    out[(src, f)] = h[(src, f)] * norms[src * t + f];
                }
            }
        }
        _ => {
            for (j, &src) in dict.row_sources().iter().enumerate() {
                for f in 0..t {
                    out[(src, f)] = out[(src, f)] + h[(j, f)] * norms[j];
                }
            }
        }
    }
    Ok(out)
}
