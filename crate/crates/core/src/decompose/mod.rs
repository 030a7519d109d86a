//! Spectrogram decomposition into per-source activations.
//!
//! Four solvers share one alternating projected-gradient loop:
//!
//! * [`MethodKind::Nmf`]: a fixed dictionary of stored training frames.
//! * [`MethodKind::Dds1`]: one generated dictionary column per source and
//!   frame, `Ŝ[:, t] = Σ_k rect(F_k⁻¹(z_kt)) · h[k, t]`.
//! * [`MethodKind::Dds2`]: `N` generated columns per source, `Ŝ = rect(W) · H`.
//! * [`MethodKind::Dds3`]: one conditional model, columns `F⁻¹([onehot_k, z_n])`
//!   with only the nuisance codes `z_n` free.
//!
//! Generated entries can be negative, so they are rectified wherever they act
//! as dictionary columns.

mod init;
pub(crate) mod objective;
mod solver;

pub use init::{init_dds, init_nmf};
pub use objective::{combine, dictionary_entries, evaluate, objective, postprocess, reconstruct, Evaluation, ObjectiveValue, Reconstruction};
pub use solver::{decompose, decompose_with_clock, DecompositionResult, TraceRow};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flows::{FlowKind, FlowModel};
use crate::matrix::Matrix;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Nmf,
    Dds1,
    Dds2,
    Dds3,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Nmf, MethodKind::Dds1, MethodKind::Dds2, MethodKind::Dds3];

    pub fn tag(self) -> &'static str {
        match self {
            MethodKind::Nmf => "nmf",
            MethodKind::Dds1 => "dds1",
            MethodKind::Dds2 => "dds2",
            MethodKind::Dds3 => "dds3",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn uses_flows(self) -> bool {
        self != MethodKind::Nmf
    }
}

impl core::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// Bias-corrected Adam steps, one moment state for the codes and one for H.
    Adam,
    /// Plain gradient steps.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub window: usize,
    pub rel_threshold: f64,
    pub lr_factor: f64,
    pub max_reductions: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { window: 50, rel_threshold: 1e-4, lr_factor: 0.5, max_reductions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionConfig {
    pub max_steps: usize,
    pub step_size: f64,
    pub lambda_mle: f64,
    pub n_components: usize,
    pub plateau: PlateauConfig,
    pub update: UpdateRule,
    pub seed: u64,
}

impl DecompositionConfig {
    /// Defaults for `kind`: step size `1e-2` for NMF and `5e-3` otherwise.
    pub fn for_method(kind: MethodKind) -> Self {
        Self {
            max_steps: 1000,
            step_size: if kind == MethodKind::Nmf { 1e-2 } else { 5e-3 },
            lambda_mle: 1e-2,
            n_components: 64,
            plateau: PlateauConfig::default(),
            update: UpdateRule::Adam,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step size must be positive"));
        }
        if !(self.lambda_mle >= 0.0 && self.lambda_mle.is_finite()) {
            return Err(Error::InvalidArgument("lambda_mle must be >= 0"));
        }
        if self.n_components == 0 {
            return Err(Error::InvalidArgument("n_components must be at least 1"));
        }
        let p = &self.plateau;
        if p.window == 0 || !(p.lr_factor > 0.0 && p.lr_factor < 1.0) || !(p.rel_threshold >= 0.0) {
            return Err(Error::InvalidArgument("invalid plateau settings"));
        }
        Ok(())
    }
}

/// The trained models a solver draws its dictionary from.
#[derive(Debug, Clone, Copy)]
pub enum Models<'a, T> {
    /// NMF needs none.
    None,
    /// One single-source model per source (DDS-1, DDS-2).
    PerSource(&'a [FlowModel<T>]),
    /// One conditional model over all sources (DDS-3).
    Conditional(&'a FlowModel<T>),
}

/// Dictionary parameters. Latent codes are stored one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryState<T> {
    Nmf {
        /// `D × M`, one stored frame per column.
        w: Matrix<T>,
        /// Source of each column.
        source_of: Vec<usize>,
        k: usize,
    },
    /// `K` code matrices of shape `T × D`.
    Dds1 { z: Vec<Matrix<T>> },
    /// `K` code matrices of shape `N × D`.
    Dds2 { z: Vec<Matrix<T>> },
    Dds3 {
        /// `KN × K` one-hot rows, fixed.
        semantic: Matrix<T>,
        /// `KN × (D − K)` free codes.
        nuisance: Matrix<T>,
        n: usize,
    },
}

impl<T: Real> DictionaryState<T> {
    pub fn kind(&self) -> MethodKind {
        match self {
            Self::Nmf { .. } => MethodKind::Nmf,
            Self::Dds1 { .. } => MethodKind::Dds1,
            Self::Dds2 { .. } => MethodKind::Dds2,
            Self::Dds3 { .. } => MethodKind::Dds3,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Nmf { k, .. } => *k,
            Self::Dds1 { z } | Self::Dds2 { z } => z.len(),
            Self::Dds3 { semantic, .. } => semantic.cols(),
        }
    }

    /// Source of each row of the activation matrix.
    pub fn row_sources(&self) -> Vec<usize> {
        match self {
            Self::Nmf { source_of, .. } => source_of.clone(),
            Self::Dds1 { z } => (0..z.len()).collect(),
            Self::Dds2 { z } => z.iter().enumerate().flat_map(|(k, m)| core::iter::repeat(k).take(m.rows())).collect(),
            Self::Dds3 { semantic, n, .. } => (0..semantic.rows()).map(|j| j / n).collect(),
        }
    }

    /// Trainable codes, flattened in storage order.
    /// The optimized latent codes, flattened: every `z` matrix in order
    /// for DDS-1/2, the nuisance block for DDS-3, nothing for NMF.
    pub fn codes(&self) -> Vec<T> {
        match self {
            Self::Nmf { .. } => Vec::new(),
            Self::Dds1 { z } | Self::Dds2 { z } => z.iter().flat_map(|m| m.as_slice().iter().copied()).collect(),
            Self::Dds3 { nuisance, .. } => nuisance.as_slice().to_vec(),
        }
    }

    /// Inverse of [`codes`](Self::codes).
    pub fn set_codes(&mut self, src: &[T]) {
        match self {
            Self::Nmf { .. } => {}
            Self::Dds1 { z } | Self::Dds2 { z } => {
                let mut off = 0;
                for m in z {
                    let len = m.as_slice().len();
                    m.as_mut_slice().copy_from_slice(&src[off..off + len]);
                    off += len;
                }
            }
            Self::Dds3 { nuisance, .. } => nuisance.as_mut_slice().copy_from_slice(src),
        }
    }
}

/// Nonnegative activations: `M × T` (NMF), `K × T` (DDS-1) or `KN × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationState<T> {
    pub h: Matrix<T>,
}

pub(crate) fn check_models<T: Real>(dict: &DictionaryState<T>, models: &Models<'_, T>, d: usize) -> Result<()> {
    let k = dict.k();
    match (dict, models) {
        (DictionaryState::Nmf { .. }, _) => Ok(()),
        (DictionaryState::Dds1 { .. } | DictionaryState::Dds2 { .. }, Models::PerSource(ms)) => {
            if ms.len() != k {
                return Err(Error::ShapeMismatch("one model per source required"));
            }
            if ms.iter().any(|m| m.d != d) {
                return Err(Error::ShapeMismatch("model dimension differs from the spectrogram"));
            }
            Ok(())
        }
        (DictionaryState::Dds3 { .. }, Models::Conditional(m)) => {
            if m.kind != FlowKind::GlowConditional || m.k_semantic != k {
                return Err(Error::WrongModelKind("dds3 needs a conditional model with K semantic dims"));
            }
            if m.d != d {
                return Err(Error::ShapeMismatch("model dimension differs from the spectrogram"));
            }
            Ok(())
        }
        _ => Err(Error::WrongModelKind("models do not match the decomposition method")),
    }
}

#[cfg(test)]
mod tests;
