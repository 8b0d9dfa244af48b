//! Access-skew profiling and hot-set size estimation.
//!
//! The profiler counts per-row accesses from the sampled inputs into one
//! logger per table, then estimates how many rows clear a candidate cutoff
//! without scanning whole tables: it draws `n` disjoint aligned chunks of `m`
//! rows, counts qualifying rows per chunk, and applies a Student-t interval
//! with the finite-population factor `sqrt((N - n) / N)` to the chunk mean.
//! Scaling the mean by the total chunk count `N` gives the table-level hot
//! count and its confidence bounds.

mod io;

pub use io::{read_faelg, write_faelg, ProfileSummary, TableProfile, FAELG_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::schema::TableSchema;

/// Chunk counts below this many samples would invalidate the CLT assumption.
pub const MIN_CHUNKS: u32 = 30;

/// Per-table access counters built from sampled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TableLog {
    pub schema: TableSchema,
    /// Sampled access count per row.
    pub counts: Vec<u32>,
    /// Total sampled accesses; always the sum of `counts`.
    pub sampled_total: u64,
    /// Accesses the full dataset would make into this table.
    pub full_total: u64,
}

impl TableLog {
    /// Exact number of rows at or above `cutoff`, by scanning every count.
    pub fn exact_hot_count(&self, cutoff: f64) -> u64 {
        self.counts
            .iter()
            .filter(|&&k| f64::from(k) >= cutoff)
            .count() as u64
    }
}

/// Access logs for every table plus the sampling rate that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessLog {
    /// Effective sampling percentage (100 * sampled records / full records).
    pub x_percent: f64,
    pub tables: Vec<TableLog>,
}

impl AccessLog {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_percent > 0.0 && self.x_percent <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "x_percent {} out of (0, 100]",
                self.x_percent
            )));
        }
        for t in &self.tables {
            let sum: u64 = t.counts.iter().map(|&c| u64::from(c)).sum();
            if sum != t.sampled_total {
                return Err(Error::SchemaMismatch(format!(
                    "table {} counts sum {} != sampled_total {}",
                    t.schema.table_id, sum, t.sampled_total
                )));
            }
            if t.full_total < t.sampled_total {
                return Err(Error::SchemaMismatch(format!(
                    "table {} full_total {} < sampled_total {}",
                    t.schema.table_id, t.full_total, t.sampled_total
                )));
            }
        }
        Ok(())
    }
}

/// Counts every sampled access per table row. `full_record_count` sizes the
/// full-dataset access totals the cutoff is scaled against.
pub fn build_access_log(sampled: &Dataset, full_record_count: u64) -> Result<AccessLog> {
    sampled.validate()?;
    if full_record_count < sampled.record_count() {
        return Err(Error::InvalidArgument(format!(
            "full_record_count {} below sampled count {}",
            full_record_count,
            sampled.record_count()
        )));
    }
    let x_percent = 100.0 * sampled.record_count() as f64 / full_record_count as f64;
    let per_table = u64::from(sampled.schema.indices_per_table);
    let tables: Vec<TableLog> = sampled
        .schema
        .tables
        .par_iter()
        .enumerate()
        .map(|(pos, schema)| {
            let mut counts = vec![0u32; schema.num_rows as usize];
            for record in &sampled.records {
                for &idx in &record.sparse[pos] {
                    counts[idx as usize] += 1;
                }
            }
            TableLog {
                schema: schema.clone(),
                counts,
                sampled_total: sampled.record_count() * per_table,
                full_total: full_record_count * per_table,
            }
        })
        .collect();
    Ok(AccessLog { x_percent, tables })
}

/// Cutoff applied to sampled counts for access-fraction threshold `t`:
/// `t * total_accesses * x / 100`.
pub fn scaled_cutoff(t: f64, total_accesses: f64, x_percent: f64) -> f64 {
    t * total_accesses * x_percent / 100.0
}

/// Disjoint aligned row ranges drawn from one table's logger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSample {
    pub table_id: u32,
    /// Rows per chunk (m).
    pub chunk_size: u32,
    /// Total aligned chunks in the table: ceil(num_rows / m).
    pub total_chunks: u64,
    /// Sorted start rows of the selected chunks.
    pub starts: Vec<u64>,
    /// True when the whole table is scanned instead of sampled.
    pub full_scan: bool,
}

/// Picks `n` disjoint chunks of `m` rows uniformly from the table's aligned
/// chunk grid. Tables smaller than `n * m` rows fall back to a flagged full
/// scan. Deterministic given `seed` (each table gets its own RNG stream).
pub fn sample_chunks(
    log: &AccessLog,
    table_id: u32,
    n: u32,
    m: u32,
    seed: u64,
) -> Result<ChunkSample> {
    let table = log
        .tables
        .iter()
        .find(|t| t.schema.table_id == table_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no table {table_id} in log")))?;
    if m == 0 {
        return Err(Error::InvalidArgument("chunk size m must be >= 1".into()));
    }
    let num_rows = table.schema.num_rows;
    let total_chunks = num_rows.div_ceil(u64::from(m));
    if u64::from(n) * u64::from(m) > num_rows {
        return Ok(ChunkSample {
            table_id,
            chunk_size: m,
            total_chunks,
            starts: (0..total_chunks).map(|c| c * u64::from(m)).collect(),
            full_scan: true,
        });
    }
    if n < MIN_CHUNKS {
        return Err(Error::InvalidArgument(format!(
            "n = {n} chunks is below the CLT minimum of {MIN_CHUNKS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(table_id));
    let mut chosen: Vec<usize> =
        rand::seq::index::sample(&mut rng, total_chunks as usize, n as usize).into_vec();
    chosen.sort_unstable();
    Ok(ChunkSample {
        table_id,
        chunk_size: m,
        total_chunks,
        starts: chosen.into_iter().map(|c| c as u64 * u64::from(m)).collect(),
        full_scan: false,
    })
}

/// Hot-set size estimate for one table at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEstimate {
    pub table_id: u32,
    /// Scaled cutoff applied to sampled counts.
    pub cutoff: f64,
    /// Small tables skip estimation and are kept hot whole.
    pub always_hot: bool,
    /// True when the value comes from a full scan (width-zero interval).
    pub exact: bool,
    pub chunk_size: u32,
    pub chunks_sampled: u32,
    pub total_chunks: u64,
    /// Mean qualifying rows per chunk.
    pub mean_hot_per_chunk: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: f64,
    /// Confidence bounds on the chunk mean.
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Chunk mean and bounds scaled to the whole table, clamped to
    /// [0, num_rows].
    pub est_hot_rows: f64,
    pub est_hot_rows_lower: f64,
    pub est_hot_rows_upper: f64,
    pub est_hot_bytes: f64,
    pub est_hot_bytes_upper: f64,
}

/// Estimates for every table at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// Access-fraction threshold (dimensionless fraction of total accesses).
    pub t: f64,
    pub alpha: f64,
    pub tables: Vec<TableEstimate>,
}

impl ThresholdEstimate {
    /// Budget-side footprint: upper confidence bound for estimated tables,
    /// full size for always-hot small tables.
    pub fn total_hot_bytes_upper(&self) -> f64 {
        self.tables.iter().map(|t| t.est_hot_bytes_upper).sum()
    }

    pub fn total_hot_bytes(&self) -> f64 {
        self.tables.iter().map(|t| t.est_hot_bytes).sum()
    }
}

/// Two-sided Student-t quantile `t_{alpha/2}` at `dof` degrees of freedom.
pub fn t_quantile_two_sided(alpha: f64, dof: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof).expect("valid t distribution");
    dist.inverse_cdf(1.0 - alpha / 2.0)
}

fn estimate_table(
    table: &TableLog,
    x_percent: f64,
    t: f64,
    n: u32,
    m: u32,
    alpha: f64,
    chunks: ChunkSample,
) -> TableEstimate {
    let schema = &table.schema;
    let cutoff = scaled_cutoff(t, table.full_total as f64, x_percent);
    let num_rows = schema.num_rows;
    let row_bytes = schema.row_bytes() as f64;

    if chunks.full_scan {
        let hot = table.exact_hot_count(cutoff) as f64;
        let mean = hot / chunks.total_chunks as f64;
        return TableEstimate {
            table_id: schema.table_id,
            cutoff,
            always_hot: false,
            exact: true,
            chunk_size: m,
            chunks_sampled: chunks.total_chunks as u32,
            total_chunks: chunks.total_chunks,
            mean_hot_per_chunk: mean,
            stddev: 0.0,
            ci_lower: mean,
            ci_upper: mean,
            est_hot_rows: hot,
            est_hot_rows_lower: hot,
            est_hot_rows_upper: hot,
            est_hot_bytes: hot * row_bytes,
            est_hot_bytes_upper: hot * row_bytes,
        };
    }

    let counts: Vec<f64> = chunks
        .starts
        .iter()
        .map(|&start| {
            let end = (start + u64::from(chunks.chunk_size)).min(num_rows);
            table.counts[start as usize..end as usize]
                .iter()
                .filter(|&&k| f64::from(k) >= cutoff)
                .count() as f64
        })
        .collect();
    let nf = f64::from(n);
    let mean = counts.iter().sum::<f64>() / nf;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let stddev = var.sqrt();
    let big_n = chunks.total_chunks as f64;
    let fpc = ((big_n - nf) / big_n).sqrt();
    let half_width = t_quantile_two_sided(alpha, nf - 1.0) * fpc * (var / nf).sqrt();
    let ci_lower = mean - half_width;
    let ci_upper = mean + half_width;

    let clamp_rows = |v: f64| (v * big_n).clamp(0.0, num_rows as f64);
    let est_hot_rows = clamp_rows(mean);
    let est_hot_rows_lower = clamp_rows(ci_lower);
    let est_hot_rows_upper = clamp_rows(ci_upper);

    TableEstimate {
        table_id: schema.table_id,
        cutoff,
        always_hot: false,
        exact: false,
        chunk_size: m,
        chunks_sampled: n,
        total_chunks: chunks.total_chunks,
        mean_hot_per_chunk: mean,
        stddev,
        ci_lower,
        ci_upper,
        est_hot_rows,
        est_hot_rows_lower,
        est_hot_rows_upper,
        est_hot_bytes: est_hot_rows * row_bytes,
        est_hot_bytes_upper: est_hot_rows_upper * row_bytes,
    }
}

/// One always-hot entry for a table kept whole (small tables).
fn always_hot_estimate(schema: &TableSchema, cutoff: f64, m: u32) -> TableEstimate {
    let rows = schema.num_rows as f64;
    let bytes = schema.table_bytes() as f64;
    let total_chunks = schema.num_rows.div_ceil(u64::from(m));
    TableEstimate {
        table_id: schema.table_id,
        cutoff,
        always_hot: true,
        exact: true,
        chunk_size: m,
        chunks_sampled: 0,
        total_chunks,
        mean_hot_per_chunk: rows / total_chunks as f64,
        stddev: 0.0,
        ci_lower: rows / total_chunks as f64,
        ci_upper: rows / total_chunks as f64,
        est_hot_rows: rows,
        est_hot_rows_lower: rows,
        est_hot_rows_upper: rows,
        est_hot_bytes: bytes,
        est_hot_bytes_upper: bytes,
    }
}

/// Estimates hot-set sizes for every table at threshold `t` from `n` chunks
/// of `m` rows, with a `1 - alpha` confidence interval. Tables under 1 MB are
/// tagged always-hot and skipped; tables too small to hold `n` disjoint
/// chunks are fully scanned and flagged exact.
pub fn estimate_hot(
    log: &AccessLog,
    t: f64,
    n: u32,
    m: u32,
    alpha: f64,
    seed: u64,
) -> Result<ThresholdEstimate> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold t must be in (0, 1], got {t}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 0.5], got {alpha}"
        )));
    }
    let tables = log
        .tables
        .iter()
        .map(|table| {
            let cutoff = scaled_cutoff(t, table.full_total as f64, log.x_percent);
            if table.schema.is_small() {
                Ok(always_hot_estimate(&table.schema, cutoff, m))
            } else {
                let chunks = sample_chunks(log, table.schema.table_id, n, m, seed)?;
                Ok(estimate_table(table, log.x_percent, t, n, m, alpha, chunks))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdEstimate { t, alpha, tables })
}
