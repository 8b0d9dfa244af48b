//! Desk-scale proxy trainer.
//!
//! The model is embedding tables plus a linear head on logistic loss: the
//! logit is `bias + w . dense + sum_z proj_z . meanpool(rows_z)` with fixed
//! (untrained) projections. That keeps the learning dynamics that matter
//! here — embedding rows only update when touched, loss feedback drives the
//! scheduler — without a full DNN stack.
//!
//! Training state is split: the host owns every embedding row, the device
//! replica holds hot rows only, and the dense head is shared (it stands in
//! for the data-parallel MLP replicas that stay synchronized after every
//! batch). Hot batches read and write the device replica; cold batches the
//! host copy. Swap boundaries synchronize hot rows and feed test loss to the
//! rate rule.

mod split;

pub use split::{DeviceReplica, SplitState};

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Kind, MiniBatch, PackedDataset};
use crate::dataset::TrainingRecord;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::schema::DatasetSchema;
use crate::scheduler::{EpochPlanner, Rate, SwapSchedule, SyncDirection, TraceEvent};

/// Dense-feature head: weights, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead<R: Real> {
    pub weights: Vec<R>,
    pub bias: R,
}

/// Embedding tables plus the dense head. Embeddings and head start at zero;
/// projections are fixed at `1 / row_dim` so a row full of `s` contributes
/// exactly `s` to the logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyModel<R: Real> {
    pub schema: DatasetSchema,
    /// Row-major `num_rows * row_dim` per table.
    pub tables: Vec<Vec<R>>,
    pub head: DenseHead<R>,
    /// Fixed projection per table, length `row_dim`.
    pub projections: Vec<Vec<R>>,
}

impl<R: Real> ProxyModel<R> {
    pub fn new(schema: DatasetSchema) -> Result<Self> {
        schema.validate()?;
        let tables = schema
            .tables
            .iter()
            .map(|t| vec![R::zero(); (t.num_rows * u64::from(t.row_dim)) as usize])
            .collect();
        let projections = schema
            .tables
            .iter()
            .map(|t| {
                let inv = R::from_f64_lossy(1.0 / f64::from(t.row_dim));
                vec![inv; t.row_dim as usize]
            })
            .collect();
        let head = DenseHead {
            weights: vec![R::zero(); schema.dense_dim as usize],
            bias: R::zero(),
        };
        Ok(Self {
            schema,
            tables,
            head,
            projections,
        })
    }

    pub fn row(&self, table: usize, idx: u32) -> &[R] {
        let dim = self.schema.tables[table].row_dim as usize;
        let start = idx as usize * dim;
        &self.tables[table][start..start + dim]
    }

    pub fn row_mut(&mut self, table: usize, idx: u32) -> &mut [R] {
        let dim = self.schema.tables[table].row_dim as usize;
        let start = idx as usize * dim;
        &mut self.tables[table][start..start + dim]
    }
}

/// Read/write access to embedding rows; lets one SGD step run against either
/// the full host tables or the device hot-row replica.
pub trait EmbeddingRows<R: Real> {
    fn get_row(&self, table: usize, idx: u32) -> Result<&[R]>;
    fn get_row_mut(&mut self, table: usize, idx: u32) -> Result<&mut [R]>;
}

impl<R: Real> EmbeddingRows<R> for ProxyModel<R> {
    fn get_row(&self, table: usize, idx: u32) -> Result<&[R]> {
        Ok(self.row(table, idx))
    }

    fn get_row_mut(&mut self, table: usize, idx: u32) -> Result<&mut [R]> {
        Ok(self.row_mut(table, idx))
    }
}

fn sigmoid<R: Real>(z: R) -> R {
    R::one() / (R::one() + (-z).exp())
}

/// Numerically stable binary cross entropy with logits:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
fn bce_with_logits<R: Real>(z: R, y: R) -> R {
    z.max(R::zero()) - z * y + (R::one() + (-z.abs()).exp()).ln()
}

fn record_logit<R: Real, S: EmbeddingRows<R> + ?Sized>(
    rows: &S,
    head: &DenseHead<R>,
    projections: &[Vec<R>],
    record: &TrainingRecord,
) -> Result<R> {
    let mut z = head.bias;
    for (w, x) in head.weights.iter().zip(&record.dense) {
        z += *w * R::from_f64_lossy(f64::from(*x));
    }
    for (table, list) in record.sparse.iter().enumerate() {
        let inv_len = R::from_f64_lossy(1.0 / list.len() as f64);
        let proj = &projections[table];
        let mut pooled_dot = R::zero();
        for &idx in list {
            let row = rows.get_row(table, idx)?;
            for (r, p) in row.iter().zip(proj) {
                pooled_dot += *r * *p;
            }
        }
        z += pooled_dot * inv_len;
    }
    Ok(z)
}

fn batch_loss<R: Real, S: EmbeddingRows<R> + ?Sized>(
    rows: &S,
    head: &DenseHead<R>,
    projections: &[Vec<R>],
    records: &[TrainingRecord],
) -> Result<R> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = R::zero();
    for record in records {
        let z = record_logit(rows, head, projections, record)?;
        let y = if record.label { R::one() } else { R::zero() };
        total += bce_with_logits(z, y);
    }
    Ok(total / R::from_f64_lossy(records.len() as f64))
}

/// Mean logistic loss of a batch under the single-copy model.
pub fn forward_logloss<R: Real>(model: &ProxyModel<R>, records: &[TrainingRecord]) -> Result<R> {
    batch_loss(model, &model.head, &model.projections, records)
}

/// One SGD step over `records` against `rows`, updating `head` in place.
/// Gradients are analytic; only rows referenced by the batch change. Returns
/// the pre-update loss.
fn sgd_step_on<R: Real, S: EmbeddingRows<R> + ?Sized>(
    rows: &mut S,
    head: &mut DenseHead<R>,
    projections: &[Vec<R>],
    records: &[TrainingRecord],
    lr: R,
) -> Result<R> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let inv_batch = R::from_f64_lossy(1.0 / records.len() as f64);
    let mut loss = R::zero();
    let mut grad_bias = R::zero();
    let mut grad_w = vec![R::zero(); head.weights.len()];
    // Per (table, row) coefficient; the row gradient is coef * projection.
    // BTreeMap keeps the update order fixed so runs are bit-reproducible.
    let mut row_coef: BTreeMap<(usize, u32), R> = BTreeMap::new();

    for record in records {
        let z = record_logit(rows, head, projections, record)?;
        let y = if record.label { R::one() } else { R::zero() };
        loss += bce_with_logits(z, y);
        let g = (sigmoid(z) - y) * inv_batch;
        grad_bias += g;
        for (gw, x) in grad_w.iter_mut().zip(&record.dense) {
            *gw += g * R::from_f64_lossy(f64::from(*x));
        }
        for (table, list) in record.sparse.iter().enumerate() {
            let contrib = g * R::from_f64_lossy(1.0 / list.len() as f64);
            for &idx in list {
                *row_coef.entry((table, idx)).or_insert_with(R::zero) += contrib;
            }
        }
    }
    loss *= inv_batch;

    if !loss.is_finite() || !grad_bias.is_finite() {
        return Err(Error::NonFinite(format!(
            "sgd step: loss {loss}, bias gradient {grad_bias}"
        )));
    }

    head.bias -= lr * grad_bias;
    for (w, g) in head.weights.iter_mut().zip(&grad_w) {
        if !g.is_finite() {
            return Err(Error::NonFinite("dense weight gradient".into()));
        }
        *w -= lr * *g;
    }
    for ((table, idx), coef) in row_coef {
        if !coef.is_finite() {
            return Err(Error::NonFinite(format!(
                "embedding gradient for table {table} row {idx}"
            )));
        }
        let proj = &projections[table];
        let row = rows.get_row_mut(table, idx)?;
        for (r, p) in row.iter_mut().zip(proj) {
            *r -= lr * coef * *p;
        }
    }
    Ok(loss)
}

/// Single-copy SGD step (baseline path and gradient checks).
pub fn sgd_step<R: Real>(
    model: &mut ProxyModel<R>,
    records: &[TrainingRecord],
    lr: R,
) -> Result<R> {
    let mut head = model.head.clone();
    let projections = model.projections.clone();
    let loss = sgd_step_on(model, &mut head, &projections, records, lr)?;
    model.head = head;
    Ok(loss)
}

/// Training mode: the packed hot/cold schedule or the fully-shuffled
/// single-copy baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Fae,
    Baseline,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fae" => Ok(TrainMode::Fae),
            "baseline" => Ok(TrainMode::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "mode must be fae or baseline, got {other}"
            ))),
        }
    }
}

/// Training configuration shared by both modes.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: u32,
    pub lr: f64,
    pub rate_start: Rate,
    /// Successive-decrease window `u` for the rate rule.
    pub streak_window: usize,
    /// Seed for the baseline's full shuffle.
    pub seed: u64,
    /// Held-out records for swap-boundary and final loss. Never trained on.
    pub test_records: Vec<TrainingRecord>,
}

/// Outcome of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: u32,
    /// Test loss at every swap boundary (fae) or epoch end (baseline).
    pub boundary_losses: Vec<f64>,
    pub final_test_loss: f64,
    pub total_sync_bytes: u64,
    pub swaps: u64,
    pub rate_history: Vec<u32>,
    pub trace: Vec<TraceEvent>,
}

fn require_test_slice(cfg: &TrainConfig) -> Result<()> {
    if cfg.test_records.is_empty() {
        return Err(Error::InvalidArgument(
            "training requires a non-empty held-out test slice".into(),
        ));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    Ok(())
}

fn run_fae<R: Real>(
    packed: &PackedDataset,
    model: ProxyModel<R>,
    cfg: &TrainConfig,
) -> Result<(ProxyModel<R>, TrainReport)> {
    let lr = R::from_f64_lossy(cfg.lr);
    let mut state = SplitState::new(model, packed.hot_set.clone())?;
    let mut sched = SwapSchedule::new(cfg.rate_start, cfg.streak_window, 1);
    let hot_bytes = packed.hot_set.total_hot_bytes();
    let mut trace: Vec<TraceEvent> = Vec::new();
    let mut current_kind: Option<Kind> = None;

    for _ in 0..cfg.epochs {
        let mut planner =
            EpochPlanner::new(packed.hot_batches.len() as u64, packed.cold_batches.len() as u64);
        let mut hot_iter = packed.hot_batches.iter();
        let mut cold_iter = packed.cold_batches.iter();
        while let Some(phase) = planner.next_phase(sched.rate) {
            if let Some(prev) = current_kind {
                if prev != phase.kind {
                    // Swap boundary: synchronize hot rows toward the side
                    // about to execute, measure held-out loss, adapt rate.
                    let direction = match phase.kind {
                        Kind::Hot => SyncDirection::CpuToGpu,
                        Kind::Cold => SyncDirection::GpuToCpu,
                    };
                    state.sync_hot(direction)?;
                    let loss = forward_logloss(state.host(), &cfg.test_records)?
                        .to_f64_lossy();
                    sched.record_swap(loss, hot_bytes, phase.kind);
                    if let Some(ev) = trace.last_mut() {
                        ev.swap = sched.swaps;
                        ev.loss = Some(loss);
                        ev.sync_bytes = hot_bytes;
                    }
                }
            }
            let mut records = 0u64;
            for _ in 0..phase.batches {
                let batch: &MiniBatch = match phase.kind {
                    Kind::Hot => hot_iter.next(),
                    Kind::Cold => cold_iter.next(),
                }
                .expect("planner issues at most the batches each kind holds");
                records += batch.records.len() as u64;
                match phase.kind {
                    Kind::Hot => state.step_hot(&batch.records, lr)?,
                    Kind::Cold => state.step_cold(&batch.records, lr)?,
                };
            }
            trace.push(TraceEvent {
                swap: 0,
                rate: sched.rate.get(),
                kind: phase.kind,
                batches: phase.batches,
                records,
                loss: None,
                sync_bytes: 0,
            });
            current_kind = Some(phase.kind);
        }
    }

    // Shutdown reconciliation so the host copy is authoritative; not a swap,
    // so it is not logged.
    state.reconcile_to_host()?;
    let final_test_loss = forward_logloss(state.host(), &cfg.test_records)?.to_f64_lossy();
    let report = TrainReport {
        mode: TrainMode::Fae,
        epochs: cfg.epochs,
        boundary_losses: sched.losses.clone(),
        final_test_loss,
        total_sync_bytes: sched.total_sync_bytes(),
        swaps: sched.swaps,
        rate_history: sched.rate_history.clone(),
        trace,
    };
    Ok((state.into_host(), report))
}

fn run_baseline<R: Real>(
    packed: &PackedDataset,
    mut model: ProxyModel<R>,
    cfg: &TrainConfig,
) -> Result<(ProxyModel<R>, TrainReport)> {
    let lr = R::from_f64_lossy(cfg.lr);
    // Single copy, fully shuffled across kinds, same batch size.
    let mut records: Vec<&TrainingRecord> = packed
        .hot_batches
        .iter()
        .chain(&packed.cold_batches)
        .flat_map(|b| &b.records)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    records.shuffle(&mut rng);
    let batches: Vec<Vec<TrainingRecord>> = records
        .chunks(packed.batch_size as usize)
        .map(|c| c.iter().map(|r| (*r).clone()).collect())
        .collect();

    let mut boundary_losses = Vec::new();
    for _ in 0..cfg.epochs {
        for batch in &batches {
            sgd_step(&mut model, batch, lr)?;
        }
        boundary_losses.push(forward_logloss(&model, &cfg.test_records)?.to_f64_lossy());
    }
    let final_test_loss = *boundary_losses.last().unwrap();
    let report = TrainReport {
        mode: TrainMode::Baseline,
        epochs: cfg.epochs,
        boundary_losses,
        final_test_loss,
        total_sync_bytes: 0,
        swaps: 0,
        rate_history: Vec::new(),
        trace: Vec::new(),
    };
    Ok((model, report))
}

/// Trains `model` on the packed dataset. Hot batches execute against the
/// device replica, cold batches against the host copy; the baseline mode
/// ignores the packing and trains a single copy on a full shuffle.
pub fn run_training<R: Real>(
    packed: &PackedDataset,
    model: ProxyModel<R>,
    cfg: &TrainConfig,
) -> Result<(ProxyModel<R>, TrainReport)> {
    require_test_slice(cfg)?;
    packed.validate_against(&model.schema)?;
    if packed.hot_batches.is_empty() && packed.cold_batches.is_empty() {
        return Err(Error::InvalidArgument("packed dataset is empty".into()));
    }
    match cfg.mode {
        TrainMode::Fae => run_fae(packed, model, cfg),
        TrainMode::Baseline => run_baseline(packed, model, cfg),
    }
}
