use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::flows::{FlowArchitecture, FlowModel};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::rng;
use crate::train::adam::{adam_step, AdamState};

const SHUFFLE_STREAM: u64 = 0x7472_6169_6e;
const SPLIT_STREAM: u64 = 0x7370_6c69_74;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping. Setting it to
    /// `epochs` disables early stopping.
    pub patience: usize,
    /// Weight of the semantic term in the conditional loss; `None` means K.
    pub alpha: Option<f64>,
}

impl TrainConfig {
    pub fn source_default() -> Self {
        Self { epochs: 2500, batch_size: 512, lr: 1e-3, seed: 0, patience: 100, alpha: None }
    }

    pub fn conditional_default() -> Self {
        Self { lr: 1e-5, ..Self::source_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1"));
        }
        if matches!(self.alpha, Some(a) if !(a >= 0.0)) {
            return Err(Error::InvalidArgument("alpha must be >= 0"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::source_default()
    }
}

/// Disjoint training and validation frames (one frame per row).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Matrix<T>,
    pub train_labels: Vec<usize>,
    pub validation: Matrix<T>,
    pub validation_labels: Vec<usize>,
}

impl<T: Real> DatasetSplit<T> {
    pub fn new(train: Matrix<T>, train_labels: Vec<usize>, validation: Matrix<T>, validation_labels: Vec<usize>) -> Result<Self> {
        if train.rows() == 0 || validation.rows() == 0 {
            return Err(Error::InvalidArgument("training and validation sets must be non-empty"));
        }
        if train.cols() != validation.cols() {
            return Err(Error::ShapeMismatch("training and validation frame sizes differ"));
        }
        if train_labels.len() != train.rows() || validation_labels.len() != validation.rows() {
            return Err(Error::ShapeMismatch("one label per frame required"));
        }
        Ok(Self { train, train_labels, validation, validation_labels })
    }

    /// Seeded random split with `round(train_fraction · n)` training rows,
    /// clamped so both parts keep at least one row.
    pub fn random(frames: &Matrix<T>, labels: &[usize], train_fraction: f64, seed: u64) -> Result<Self> {
        let n = frames.rows();
        if n < 2 {
            return Err(Error::InvalidArgument("at least two frames are required"));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch("one label per frame required"));
        }
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument("train fraction must lie in [0, 1]"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::seeded(seed, SPLIT_STREAM));
        let cut = (libm::round(train_fraction * n as f64) as usize).clamp(1, n - 1);
        let (a, b) = idx.split_at(cut);
        Self::new(gather(frames, a), a.iter().map(|&i| labels[i]).collect(), gather(frames, b), b.iter().map(|&i| labels[i]).collect())
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }
}

fn gather<T: Real>(m: &Matrix<T>, rows: &[usize]) -> Matrix<T> {
    Matrix::from_fn(rows.len(), m.cols(), |r, c| m[(rows[r], c)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_semantic_mse: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// The checkpoint with the lowest validation loss (possibly the initial one).
    pub model: FlowModel<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

#[derive(Clone, Copy)]
enum Objective {
    Nll,
    Conditional { alpha: f64 },
}

struct Validation {
    loss: f64,
    semantic_mse: Option<f64>,
}

/// Fits a single-source RealNVP density to `split.train`, selecting the
/// epoch with the lowest mean validation nll.
pub fn train_source_model<T: Real>(
    split: &DatasetSplit<T>,
    arch: &FlowArchitecture,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let model = FlowModel::realnvp(split.dim(), arch, cfg.seed);
    run(model, split, cfg, Objective::Nll, observer)
}

/// Fits a conditional Glow whose first `k` latent dimensions encode the
/// label as a one-hot vector.
pub fn train_conditional_model<T: Real>(
    split: &DatasetSplit<T>,
    k: usize,
    arch: &FlowArchitecture,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut distinct = split.train_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("conditional training needs at least two sources"));
    }
    if let Some(&bad) = split.train_labels.iter().chain(&split.validation_labels).find(|&&l| l >= k) {
        return Err(Error::UnknownSource { id: bad, k });
    }
    let mut model = FlowModel::glow_conditional(split.dim(), k, arch, cfg.seed);
    let mut order: Vec<usize> = (0..split.train.rows()).collect();
    order.shuffle(&mut rng::seeded(cfg.seed, SHUFFLE_STREAM ^ 1));
    let first = &order[..cfg.batch_size.min(order.len())];
    model.init_actnorm(&gather(&split.train, first))?;
    let alpha = cfg.alpha.unwrap_or(k as f64);
    run(model, split, cfg, Objective::Conditional { alpha }, observer)
}

fn batch_loss<T: Real>(model: &FlowModel<T>, x: &Matrix<T>, labels: &[usize], obj: Objective) -> Result<(T, Vec<T>)> {
    let (loss, grad, _) = match obj {
        Objective::Nll => model.nll_with_grad(x)?,
        Objective::Conditional { alpha } => model.conditional_loss_with_grad(x, labels, T::of(alpha))?,
    };
    Ok((loss, grad))
}

fn validate_model<T: Real>(model: &FlowModel<T>, split: &DatasetSplit<T>, chunk: usize, obj: Objective) -> Result<Validation> {
    let n = split.validation.rows();
    let (mut loss, mut sem) = (0.0, 0.0);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let x = gather(&split.validation, &rows);
        match obj {
            Objective::Nll => loss += model.nll(&x)?.iter().map(|v| v.as_f64()).sum::<f64>(),
            Objective::Conditional { alpha } => {
                let parts = model.conditional_loss(&x, &split.validation_labels[start..end], T::of(alpha))?;
                loss += parts.loss.iter().map(|v| v.as_f64()).sum::<f64>();
                sem += parts.semantic_mse.iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        start = end;
    }
    let semantic_mse = matches!(obj, Objective::Conditional { .. }).then_some(sem / n as f64);
    Ok(Validation { loss: loss / n as f64, semantic_mse })
}

fn run<T: Real>(
    mut model: FlowModel<T>,
    split: &DatasetSplit<T>,
    cfg: &TrainConfig,
    obj: Objective,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    let diverged = |epoch: usize| Error::TrainingDiverged { last_finite_epoch: epoch.saturating_sub(1) };
    let initial = validate_model(&model, split, cfg.batch_size, obj).map_err(|_| diverged(0))?;
    if !initial.loss.is_finite() {
        return Err(diverged(0));
    }
    let mut best = (model.params(), 0usize, initial.loss);
    let mut history = Vec::new();
    let mut state = AdamState::new(model.param_len());
    let mut shuffle = rng::seeded(cfg.seed, SHUFFLE_STREAM);
    let n = split.train.rows();
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = model.params();
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let batches = n / bs;
        for b in 0..batches {
            let rows = &order[b * bs..(b + 1) * bs];
            let x = gather(&split.train, rows);
            let labels: Vec<usize> = rows.iter().map(|&i| split.train_labels[i]).collect();
            let (loss, grad) = batch_loss(&model, &x, &labels, obj).map_err(|_| diverged(epoch))?;
            if !loss.is_finite() {
                return Err(diverged(epoch));
            }
            adam_step(&mut params, &grad, &mut state, cfg.lr).map_err(|_| diverged(epoch))?;
            model.set_params(&params);
            total += loss.as_f64();
        }
        let val = validate_model(&model, split, cfg.batch_size, obj).map_err(|_| diverged(epoch))?;
        if !val.loss.is_finite() {
            return Err(diverged(epoch));
        }
        let stats = EpochStats {
            epoch,
            train_loss: total / batches as f64,
            val_loss: val.loss,
            val_semantic_mse: val.semantic_mse,
            lr: cfg.lr,
        };
        observer(&stats);
        history.push(stats);
        if val.loss < best.2 {
            best = (params.clone(), epoch, val.loss);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    model.set_params(&best.0);
    Ok(TrainOutcome { model, best_epoch: best.1, best_val_loss: best.2, history, stopped_early })
}
