//! Threshold calibration against a device-memory budget.
//!
//! The search walks a geometric threshold grid (ratio 10^(1/4) spanning
//! [1e-8, 1e-1]) from the largest threshold downward, invoking the profiler
//! per candidate, and keeps the smallest grid threshold whose upper-bound
//! footprint still fits the budget. It then bisects in log space between that
//! point and its infeasible left neighbor for eight steps. Checking the CI
//! *upper* bound against the budget keeps the overflow risk bounded by alpha.
//! All candidates share one chunk seed, so footprints are monotone in the
//! threshold and the search is well-ordered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::{estimate_hot, AccessLog, ThresholdEstimate};
use crate::schema::TableSchema;

/// Geometric grid bounds and shape.
const GRID_LOG10_MIN: f64 = -8.0;
const GRID_LOG10_MAX: f64 = -1.0;
const GRID_LOG10_STEP: f64 = 0.25;
const BISECTION_STEPS: u32 = 8;

/// Device-memory budget for hot embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Bytes of accelerator memory allocated to hot embeddings.
    pub budget_bytes: u64,
    pub alpha: f64,
    /// The hot set is replicated whole on every device; replication does not
    /// divide the budget.
    pub num_devices: u32,
    /// Chunks drawn per table when estimating.
    pub chunks: u32,
    /// Rows per chunk.
    pub chunk_size: u32,
}

impl BudgetSpec {
    pub fn new(budget_bytes: u64) -> Self {
        Self {
            budget_bytes,
            alpha: 0.001,
            num_devices: 1,
            chunks: 35,
            chunk_size: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_bytes == 0 {
            return Err(Error::InvalidArgument("budget must be > 0 bytes".into()));
        }
        if self.num_devices == 0 {
            return Err(Error::InvalidArgument("num_devices must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub t_final: f64,
    /// Estimates at `t_final`.
    pub estimate: ThresholdEstimate,
    /// Upper-bound hot footprint at `t_final` (small tables included whole).
    pub total_hot_bytes_upper: f64,
    /// Audit trail of every (threshold, upper-bound bytes) visited, in
    /// evaluation order.
    pub iterations: Vec<(f64, f64)>,
    /// Largest infeasible threshold examined below `t_final`; `None` when
    /// even the smallest grid point fit.
    pub lower_infeasible_t: Option<f64>,
    /// Set when the smallest grid threshold already fit the budget.
    pub budget_slack: bool,
}

/// Searches for the smallest threshold whose CI-upper-bound hot footprint
/// fits the budget. Deterministic given `(log, budget, seed)`.
pub fn calibrate(log: &AccessLog, budget: &BudgetSpec, seed: u64) -> Result<CalibrationResult> {
    budget.validate()?;
    log.validate()?;
    let budget_bytes = budget.budget_bytes as f64;
    let mut iterations = Vec::new();
    let mut eval = |t: f64| -> Result<(ThresholdEstimate, f64, bool)> {
        let est = estimate_hot(
            log,
            t,
            budget.chunks,
            budget.chunk_size,
            budget.alpha,
            seed,
        )?;
        let bytes = est.total_hot_bytes_upper();
        iterations.push((t, bytes));
        let fits = bytes <= budget_bytes;
        Ok((est, bytes, fits))
    };

    // Grid points from largest threshold (fewest hot rows) downward.
    let steps = ((GRID_LOG10_MAX - GRID_LOG10_MIN) / GRID_LOG10_STEP).round() as i64;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| 10f64.powf(GRID_LOG10_MAX - i as f64 * GRID_LOG10_STEP))
        .collect();

    let (mut best_est, mut best_bytes, fits) = eval(grid[0])?;
    if !fits {
        return Err(Error::BudgetInfeasible(format!(
            "hot footprint {:.0} bytes at the coarsest threshold {} exceeds budget {}",
            best_bytes, grid[0], budget.budget_bytes
        )));
    }
    let mut best_t = grid[0];
    let mut infeasible_t = None;
    for &t in &grid[1..] {
        let (est, bytes, fits) = eval(t)?;
        if fits {
            best_t = t;
            best_est = est;
            best_bytes = bytes;
        } else {
            infeasible_t = Some(t);
            break;
        }
    }

    let Some(mut lo) = infeasible_t else {
        // Ran off the fine end of the grid with budget to spare.
        return Ok(CalibrationResult {
            t_final: best_t,
            estimate: best_est,
            total_hot_bytes_upper: best_bytes,
            iterations,
            lower_infeasible_t: None,
            budget_slack: true,
        });
    };

    // Log-space bisection between the infeasible neighbor and the feasible
    // grid point.
    for _ in 0..BISECTION_STEPS {
        let mid = 10f64.powf((lo.log10() + best_t.log10()) / 2.0);
        let (est, bytes, fits) = eval(mid)?;
        if fits {
            best_t = mid;
            best_est = est;
            best_bytes = bytes;
        } else {
            lo = mid;
        }
    }

    Ok(CalibrationResult {
        t_final: best_t,
        estimate: best_est,
        total_hot_bytes_upper: best_bytes,
        iterations,
        lower_infeasible_t: Some(lo),
        budget_slack: false,
    })
}

/// Splits the budget across tables proportionally to their estimated hot
/// bytes and converts each share into a row capacity. Zero estimates fall
/// back to an even split.
pub fn hot_row_capacity(
    budget: &BudgetSpec,
    tables: &[TableSchema],
    est_hot_bytes: &[f64],
) -> Result<Vec<u64>> {
    budget.validate()?;
    if tables.len() != est_hot_bytes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tables but {} estimates",
            tables.len(),
            est_hot_bytes.len()
        )));
    }
    let total: f64 = est_hot_bytes.iter().sum();
    let budget_bytes = budget.budget_bytes as f64;
    Ok(tables
        .iter()
        .zip(est_hot_bytes)
        .map(|(schema, &est)| {
            let share = if total > 0.0 {
                budget_bytes * est / total
            } else {
                budget_bytes / tables.len() as f64
            };
            (share / schema.row_bytes() as f64).floor() as u64
        })
        .collect())
}
