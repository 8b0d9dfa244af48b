//! Synthetic dataset generation.
//!
//! Index draws follow a Zipf law per table, with ranks scattered across the
//! row space by a seeded permutation so popular rows are not clustered at low
//! indices (real tables assign IDs by hash, not by popularity). Labels come
//! from a planted logistic rule matching the proxy model's functional form,
//! so the signal is learnable. Generation is pure per record given
//! `(seed, ordinal)`: records are produced on independent RNG streams and
//! assembled in ordinal order, so output is independent of worker count.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::schema::{DatasetSchema, TableSchema};

use super::{Dataset, TrainingRecord};

/// Planted logistic labeling rule.
///
/// For a record with dense features `x` and index lists `I_z`, the logit is
/// `bias + w.x + embed_scale * sum_z mean_{j in I_z} score(z, j)` where
/// `score(z, j)` is a fixed pseudo-random value in [-1, 1] derived from
/// `(z, j)`. The label is Bernoulli(sigmoid(logit)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLogit {
    pub bias: f64,
    pub dense_weights: Vec<f64>,
    pub embed_scale: f64,
}

impl PlantedLogit {
    /// Hidden per-row score in [-1, 1].
    pub fn row_score(table_id: u32, row: u32) -> f64 {
        let mut key = [0u8; 8];
        key[..4].copy_from_slice(&table_id.to_le_bytes());
        key[4..].copy_from_slice(&row.to_le_bytes());
        let h = fnv1a64(&key);
        (h as f64 / u64::MAX as f64) * 2.0 - 1.0
    }

    /// Logit of the planted rule for a fully-drawn record.
    pub fn logit(&self, dense: &[f32], sparse: &[Vec<u32>]) -> f64 {
        let mut z = self.bias;
        for (w, x) in self.dense_weights.iter().zip(dense) {
            z += w * f64::from(*x);
        }
        for (table_pos, list) in sparse.iter().enumerate() {
            let mean: f64 = list
                .iter()
                .map(|&j| Self::row_score(table_pos as u32, j))
                .sum::<f64>()
                / list.len() as f64;
            z += self.embed_scale * mean;
        }
        z
    }
}

/// Configuration for [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_records: u64,
    /// (num_rows, row_dim) per table.
    pub tables: Vec<(u64, u32)>,
    /// Zipf exponent per table, > 0.
    pub zipf_exponents: Vec<f64>,
    pub indices_per_table: u32,
    pub label_model: PlantedLogit,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::InvalidArgument("no tables configured".into()));
        }
        if self.zipf_exponents.len() != self.tables.len() {
            return Err(Error::InvalidArgument(format!(
                "{} zipf exponents for {} tables",
                self.zipf_exponents.len(),
                self.tables.len()
            )));
        }
        if self.zipf_exponents.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(
                "zipf exponents must be > 0".into(),
            ));
        }
        if self.indices_per_table == 0 {
            return Err(Error::InvalidArgument(
                "indices_per_table must be >= 1".into(),
            ));
        }
        for &(rows, dim) in &self.tables {
            if rows == 0 || dim == 0 {
                return Err(Error::InvalidArgument(
                    "tables must have nonzero rows and dims".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> DatasetSchema {
        let tables = self
            .tables
            .iter()
            .enumerate()
            .map(|(i, &(rows, dim))| TableSchema::new(i as u32, rows, dim))
            .collect();
        DatasetSchema::new(
            tables,
            self.label_model.dense_weights.len() as u32,
            self.indices_per_table,
        )
    }
}

/// Rank-to-row scattering permutation for one table, seeded independently of
/// the per-record streams.
fn rank_permutation(num_rows: u64, seed: u64, table_pos: u32) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..num_rows as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream space: one stream per table for permutations, then one per
    // record ordinal (offset by the table count in `synthesize`).
    rng.set_stream(u64::from(table_pos));
    perm.shuffle(&mut rng);
    perm
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Generates a Zipf-skewed dataset with planted labels. Byte-identical output
/// for equal configs.
pub fn synthesize(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let schema = config.schema();

    let samplers: Vec<Zipf<f64>> = config
        .tables
        .iter()
        .zip(&config.zipf_exponents)
        .map(|(&(rows, _), &s)| {
            Zipf::new(rows, s)
                .map_err(|e| Error::InvalidArgument(format!("zipf parameters: {e}")))
        })
        .collect::<Result<_>>()?;
    let perms: Vec<Vec<u32>> = config
        .tables
        .iter()
        .enumerate()
        .map(|(i, &(rows, _))| rank_permutation(rows, config.seed, i as u32))
        .collect();

    let dense_dim = config.label_model.dense_weights.len();
    let records: Vec<TrainingRecord> = (0..config.num_records)
        .into_par_iter()
        .map(|ordinal| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(ordinal + config.tables.len() as u64);
            let dense: Vec<f32> = (0..dense_dim)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v as f32
                })
                .collect();
            let sparse: Vec<Vec<u32>> = samplers
                .iter()
                .zip(&perms)
                .map(|(sampler, perm)| {
                    (0..config.indices_per_table)
                        .map(|_| {
                            let rank = sampler.sample(&mut rng) as u64 - 1;
                            perm[rank as usize]
                        })
                        .collect()
                })
                .collect();
            let z = config.label_model.logit(&dense, &sparse);
            let label = rng.gen::<f64>() < sigmoid(z);
            TrainingRecord {
                label,
                dense,
                sparse,
            }
        })
        .collect();

    Ok(Dataset::new(schema, records))
}


#[cfg(test)]
mod tests {
    use super::*;

    fn config(records: u64, rows: u64, exponent: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            num_records: records,
            tables: vec![(rows, 8)],
            zipf_exponents: vec![exponent],
            indices_per_table: 1,
            label_model: PlantedLogit {
                bias: 0.0,
                dense_weights: vec![0.8, -0.5],
                embed_scale: 2.0,
            },
            seed,
        }
    }

    fn access_histogram(ds: &Dataset, table: usize, rows: usize) -> Vec<u64> {
        let mut counts = vec![0u64; rows];
        for r in &ds.records {
            for &idx in &r.sparse[table] {
                counts[idx as usize] += 1;
            }
        }
        counts
    }

    #[test]
    fn head_rows_dominate_accesses() {
        // Zipf(1.05) over 1e5 rows: top 6.8% of rows by count take >= 70% of
        // all accesses.
        let ds = synthesize(&config(1_000_000, 100_000, 1.05, 11)).unwrap();
        let mut counts = access_histogram(&ds, 0, 100_000);
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let total: u64 = counts.iter().sum();
        let head: u64 = counts.iter().take(6_800).sum();
        let share = head as f64 / total as f64;
        assert!(share >= 0.70, "head share {share}");
    }

    #[test]
    fn near_zero_exponent_is_uniform() {
        let ds = synthesize(&config(10_000, 100, 1e-6, 5)).unwrap();
        let counts = access_histogram(&ds, 0, 100);
        let max = *counts.iter().max().unwrap();
        assert!(
            (max as f64) <= 0.03 * 10_000.0,
            "max row share {} above 3%",
            max as f64 / 10_000.0
        );
    }

    #[test]
    fn rank_frequency_slope_matches_exponent() {
        let exponent = 1.05;
        let ds = synthesize(&config(1_000_000, 10_000, exponent, 23)).unwrap();
        let mut counts = access_histogram(&ds, 0, 10_000);
        counts.sort_unstable_by(|a, b| b.cmp(a));
        // Least-squares fit of ln(count) on ln(rank) over the well-populated
        // head of the curve.
        let pts: Vec<(f64, f64)> = counts
            .iter()
            .enumerate()
            .take(2000)
            .filter(|(_, &c)| c >= 20)
            .map(|(i, &c)| (((i + 1) as f64).ln(), (c as f64).ln()))
            .collect();
        assert!(pts.len() >= 500);
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + exponent).abs() <= 0.1,
            "slope {slope} vs exponent {exponent}"
        );
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = synthesize(&config(2_000, 1_000, 1.05, 77)).unwrap();
        let b = synthesize(&config(2_000, 1_000, 1.05, 77)).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&config(2_000, 1_000, 1.05, 78)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let cfg = config(5_000, 1_000, 1.05, 3);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| synthesize(&cfg).unwrap());
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| synthesize(&cfg).unwrap());
        assert_eq!(single, multi);
    }

    #[test]
    fn labels_carry_signal() {
        // With a strong planted rule the label should correlate with the
        // logit sign.
        let ds = synthesize(&config(20_000, 1_000, 1.05, 9)).unwrap();
        let cfg = config(20_000, 1_000, 1.05, 9);
        let mut agree = 0u32;
        for r in &ds.records {
            let z = cfg.label_model.logit(&r.dense, &r.sparse);
            if (z > 0.0) == r.label {
                agree += 1;
            }
        }
        let rate = f64::from(agree) / 20_000.0;
        assert!(rate > 0.6, "sign agreement {rate}");
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = config(10, 100, 1.0, 1);
        c.zipf_exponents = vec![0.0];
        assert!(synthesize(&c).is_err());
        let mut c = config(10, 100, 1.0, 1);
        c.indices_per_table = 0;
        assert!(synthesize(&c).is_err());
        let mut c = config(10, 100, 1.0, 1);
        c.zipf_exponents = vec![1.0, 1.0];
        assert!(synthesize(&c).is_err());
    }
}
