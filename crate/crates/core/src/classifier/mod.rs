//! Hot/cold tagging of embedding rows and inputs, and mini-batch packing.
//!
//! A row is hot when its sampled count clears the scaled cutoff at the
//! calibrated threshold (ties are hot). An input is hot only if every index
//! in every table is hot: one cold access poisons the record, because a
//! single cold lookup would stall an otherwise device-resident batch. Records
//! are then segregated by kind, shuffled within kind, and cut into
//! fixed-size mini-batches so every batch is entirely hot or entirely cold.

mod io;

pub use io::{read_faepd, write_faepd, FAEPD_MAGIC};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TrainingRecord};
use crate::error::{Error, Result};
use crate::profiler::{scaled_cutoff, AccessLog};
use crate::scalar::Real;
use crate::schema::DatasetSchema;

/// Batch or record kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Hot,
    Cold,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kind::Hot => write!(f, "hot"),
            Kind::Cold => write!(f, "cold"),
        }
    }
}

/// Hot-row membership for one table, bit-packed LSB-first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableHotSet {
    pub table_id: u32,
    pub num_rows: u64,
    bits: Vec<u8>,
    pub hot_rows: u64,
    pub hot_bytes: u64,
}

impl TableHotSet {
    pub fn new_cold(table_id: u32, num_rows: u64) -> Self {
        Self {
            table_id,
            num_rows,
            bits: vec![0u8; num_rows.div_ceil(8) as usize],
            hot_rows: 0,
            hot_bytes: 0,
        }
    }

    pub fn is_hot(&self, row: u64) -> bool {
        (self.bits[(row / 8) as usize] >> (row % 8)) & 1 == 1
    }

    fn set_hot(&mut self, row: u64) {
        self.bits[(row / 8) as usize] |= 1 << (row % 8);
    }

    pub fn bitmap(&self) -> &[u8] {
        &self.bits
    }

    pub(crate) fn from_bitmap(
        table_id: u32,
        num_rows: u64,
        bits: Vec<u8>,
        row_bytes: u64,
    ) -> Result<Self> {
        if bits.len() as u64 != num_rows.div_ceil(8) {
            return Err(Error::Format(format!(
                "bitmap for table {table_id} has {} bytes, expected {}",
                bits.len(),
                num_rows.div_ceil(8)
            )));
        }
        // Bits past num_rows must be zero.
        let tail_bits = (bits.len() as u64 * 8) - num_rows;
        if tail_bits > 0 {
            let last = *bits.last().unwrap();
            if last >> (8 - tail_bits) != 0 {
                return Err(Error::Format(format!(
                    "bitmap for table {table_id} has bits set past num_rows"
                )));
            }
        }
        let hot_rows: u64 = bits.iter().map(|b| u64::from(b.count_ones())).sum();
        Ok(Self {
            table_id,
            num_rows,
            bits,
            hot_rows,
            hot_bytes: hot_rows * row_bytes,
        })
    }
}

/// Hot-row membership for every table at the final threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotSet {
    /// Threshold the set was cut at, kept for provenance.
    pub t_final: f64,
    pub tables: Vec<TableHotSet>,
}

impl HotSet {
    pub fn total_hot_bytes(&self) -> u64 {
        self.tables.iter().map(|t| t.hot_bytes).sum()
    }

    pub fn total_hot_rows(&self) -> u64 {
        self.tables.iter().map(|t| t.hot_rows).sum()
    }
}

/// Tags every row of every table in one pass of the logger. Small tables are
/// hot whole.
pub fn classify_embeddings(log: &AccessLog, t_final: f64) -> Result<HotSet> {
    if !(t_final > 0.0 && t_final <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "t_final must be in (0, 1], got {t_final}"
        )));
    }
    let tables = log
        .tables
        .iter()
        .map(|table| {
            let schema = &table.schema;
            let mut set = TableHotSet::new_cold(schema.table_id, schema.num_rows);
            if schema.is_small() {
                for row in 0..schema.num_rows {
                    set.set_hot(row);
                }
                set.hot_rows = schema.num_rows;
            } else {
                let cutoff = scaled_cutoff(t_final, table.full_total as f64, log.x_percent);
                for (row, &k) in table.counts.iter().enumerate() {
                    if f64::from(k) >= cutoff {
                        set.set_hot(row as u64);
                        set.hot_rows += 1;
                    }
                }
            }
            set.hot_bytes = set.hot_rows * schema.row_bytes();
            set
        })
        .collect();
    Ok(HotSet { t_final, tables })
}

/// Hot iff every index in every table is hot.
pub fn classify_input(record: &TrainingRecord, hot_set: &HotSet) -> Kind {
    for (list, table) in record.sparse.iter().zip(&hot_set.tables) {
        for &idx in list {
            if !table.is_hot(u64::from(idx)) {
                return Kind::Cold;
            }
        }
    }
    Kind::Hot
}

/// A mini-batch of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniBatch {
    pub kind: Kind,
    pub records: Vec<TrainingRecord>,
}

impl MiniBatch {
    /// Exhaustive purity scan: no cold index anywhere in a hot batch.
    pub fn is_pure(&self, hot_set: &HotSet) -> bool {
        match self.kind {
            Kind::Hot => self
                .records
                .iter()
                .all(|r| classify_input(r, hot_set) == Kind::Hot),
            Kind::Cold => self
                .records
                .iter()
                .any(|r| classify_input(r, hot_set) == Kind::Cold),
        }
    }
}

/// Provenance stamped into the packed format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub t_final: f64,
    pub pack_seed: u64,
    pub schema_fingerprint: u64,
}

/// A dataset packed into all-hot and all-cold mini-batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedDataset {
    pub schema: DatasetSchema,
    pub hot_set: HotSet,
    pub batch_size: u32,
    pub hot_batches: Vec<MiniBatch>,
    pub cold_batches: Vec<MiniBatch>,
    pub hot_records: u64,
    pub cold_records: u64,
    /// Hot-input fraction.
    pub p_hot: f64,
    pub provenance: Provenance,
}

impl PackedDataset {
    pub fn total_records(&self) -> u64 {
        self.hot_records + self.cold_records
    }

    /// Rejects artifacts packed against a different schema.
    pub fn validate_against(&self, schema: &DatasetSchema) -> Result<()> {
        if self.provenance.schema_fingerprint != schema.fingerprint() {
            return Err(Error::SchemaMismatch(format!(
                "packed data was built for schema {:#x}, not {:#x}",
                self.provenance.schema_fingerprint,
                schema.fingerprint()
            )));
        }
        Ok(())
    }
}

/// Classifies records (in parallel; the result is order-independent), then
/// shuffles within each kind and cuts full-size batches with at most one
/// trailing partial batch per kind. Deterministic given `seed`.
pub fn pack_minibatches(
    dataset: &Dataset,
    hot_set: &HotSet,
    batch_size: u32,
    seed: u64,
) -> Result<PackedDataset> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if hot_set.tables.len() != dataset.schema.tables.len() {
        return Err(Error::SchemaMismatch(format!(
            "hot set covers {} tables, schema has {}",
            hot_set.tables.len(),
            dataset.schema.tables.len()
        )));
    }
    for (set, schema) in hot_set.tables.iter().zip(&dataset.schema.tables) {
        if set.table_id != schema.table_id || set.num_rows != schema.num_rows {
            return Err(Error::SchemaMismatch(format!(
                "hot set table {} ({} rows) does not match schema table {} ({} rows)",
                set.table_id, set.num_rows, schema.table_id, schema.num_rows
            )));
        }
    }

    let kinds: Vec<Kind> = dataset
        .records
        .par_iter()
        .map(|r| classify_input(r, hot_set))
        .collect();
    let mut hot: Vec<TrainingRecord> = Vec::new();
    let mut cold: Vec<TrainingRecord> = Vec::new();
    for (record, kind) in dataset.records.iter().zip(&kinds) {
        match kind {
            Kind::Hot => hot.push(record.clone()),
            Kind::Cold => cold.push(record.clone()),
        }
    }
    let hot_records = hot.len() as u64;
    let cold_records = cold.len() as u64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    hot.shuffle(&mut rng);
    rng.set_stream(1);
    cold.shuffle(&mut rng);

    let cut = |records: Vec<TrainingRecord>, kind: Kind| -> Vec<MiniBatch> {
        records
            .chunks(batch_size as usize)
            .map(|c| MiniBatch {
                kind,
                records: c.to_vec(),
            })
            .collect()
    };

    let total = hot_records + cold_records;
    let p_hot = if total == 0 {
        0.0
    } else {
        hot_records as f64 / total as f64
    };

    Ok(PackedDataset {
        schema: dataset.schema.clone(),
        hot_set: hot_set.clone(),
        batch_size,
        hot_batches: cut(hot, Kind::Hot),
        cold_batches: cut(cold, Kind::Cold),
        hot_records,
        cold_records,
        p_hot,
        provenance: Provenance {
            t_final: hot_set.t_final,
            pack_seed: seed,
            schema_fingerprint: dataset.schema.fingerprint(),
        },
    })
}

/// Probability that a naive (unsegregated) batch of `b` independent records
/// with hot probability `p` is entirely hot: `p^b`.
pub fn all_hot_probability<R: Real>(p: R, b: u32) -> Result<R> {
    if p < R::zero() || p > R::one() {
        return Err(Error::InvalidArgument(format!(
            "p must be in [0, 1], got {p}"
        )));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    Ok(p.powi(b as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::TableLog;
    use crate::schema::TableSchema;

    /// Log with two large tables whose first `hot_rows` rows have high
    /// counts. Row dim 64 keeps both tables above 1 MB.
    fn synthetic_log(rows: u64, hot_rows: u64) -> AccessLog {
        let mk = |table_id: u32| {
            let counts: Vec<u32> = (0..rows).map(|i| if i < hot_rows { 50 } else { 1 }).collect();
            let sampled_total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
            TableLog {
                schema: TableSchema::new(table_id, rows, 64),
                counts,
                sampled_total,
                full_total: sampled_total,
            }
        };
        AccessLog {
            x_percent: 100.0,
            tables: vec![mk(0), mk(1)],
        }
    }

    #[test]
    fn cutoff_tie_is_hot() {
        // Cutoff 302.5: 303 qualifies, 302 does not.
        let rows = 8192u64;
        let mut counts = vec![0u32; rows as usize];
        counts[1] = 303;
        counts[2] = 302;
        let sampled_total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let log = AccessLog {
            x_percent: 5.0,
            tables: vec![TableLog {
                schema: TableSchema::new(0, rows, 64),
                counts,
                sampled_total,
                full_total: 60_500_000,
            }],
        };
        let t = 1e-4;
        let hs = classify_embeddings(&log, t).unwrap();
        assert_eq!(
            scaled_cutoff(t, 60_500_000.0, 5.0),
            302.5
        );
        assert!(hs.tables[0].is_hot(1));
        assert!(!hs.tables[0].is_hot(2));
        assert_eq!(hs.tables[0].hot_rows, 1);
    }

    #[test]
    fn tiny_cutoff_keeps_everything_hot() {
        let log = synthetic_log(8192, 10);
        // t so small the cutoff drops below one access.
        let hs = classify_embeddings(&log, 1e-9).unwrap();
        assert_eq!(hs.tables[0].hot_rows, 8192);
        assert_eq!(hs.tables[1].hot_rows, 8192);
    }

    #[test]
    fn bitmap_matches_row_by_row_comparison() {
        use crate::dataset::synth::tests_support::small_synthetic;
        let ds = small_synthetic(3_000, 21);
        let log = crate::profiler::build_access_log(&ds, 3_000).unwrap();
        let t = 2e-4;
        let hs = classify_embeddings(&log, t).unwrap();
        for (table, set) in log.tables.iter().zip(&hs.tables) {
            let cutoff = scaled_cutoff(t, table.full_total as f64, log.x_percent);
            for (row, &k) in table.counts.iter().enumerate() {
                let expect = table.schema.is_small() || f64::from(k) >= cutoff;
                assert_eq!(set.is_hot(row as u64), expect, "row {row}");
            }
            assert_eq!(
                set.hot_rows,
                set.bitmap().iter().map(|b| u64::from(b.count_ones())).sum::<u64>()
            );
        }
    }

    #[test]
    fn small_tables_force_hot_inputs() {
        // Two tables under 1 MB: every record classifies hot.
        let mk = |table_id: u32| TableLog {
            schema: TableSchema::new(table_id, 100, 4),
            counts: vec![1; 100],
            sampled_total: 100,
            full_total: 100,
        };
        let log = AccessLog {
            x_percent: 100.0,
            tables: vec![mk(0), mk(1)],
        };
        let hs = classify_embeddings(&log, 0.99).unwrap();
        let record = TrainingRecord {
            label: false,
            dense: vec![],
            sparse: vec![vec![3], vec![97]],
        };
        assert_eq!(classify_input(&record, &hs), Kind::Hot);
    }

    /// Threshold putting the cutoff at 25 sampled accesses: qualifies the
    /// count-50 head rows, excludes the count-1 tail.
    fn head_only_threshold(log: &AccessLog) -> f64 {
        25.0 / log.tables[0].full_total as f64
    }

    #[test]
    fn one_cold_index_poisons_the_record() {
        let log = synthetic_log(8192, 100);
        let hs = classify_embeddings(&log, head_only_threshold(&log)).unwrap();
        assert!(hs.tables[0].hot_rows < 8192);
        // Hot in table 0, cold in table 1.
        let record = TrainingRecord {
            label: false,
            dense: vec![],
            sparse: vec![vec![5], vec![5000]],
        };
        assert!(hs.tables[0].is_hot(5));
        assert!(!hs.tables[1].is_hot(5000));
        assert_eq!(classify_input(&record, &hs), Kind::Cold);
    }

    #[test]
    fn packing_remainder_rule() {
        // 10 records: 7 hot (indices < 100 in both tables), 3 cold.
        let log = synthetic_log(8192, 100);
        let hs = classify_embeddings(&log, head_only_threshold(&log)).unwrap();
        let schema = DatasetSchema::new(
            vec![TableSchema::new(0, 8192, 64), TableSchema::new(1, 8192, 64)],
            0,
            1,
        );
        let mut records = Vec::new();
        for i in 0..10u32 {
            let idx = if i < 7 { i } else { 5000 + i };
            records.push(TrainingRecord {
                label: i % 2 == 0,
                dense: vec![],
                sparse: vec![vec![idx], vec![idx]],
            });
        }
        let ds = Dataset::new(schema, records);
        let packed = pack_minibatches(&ds, &hs, 4, 3).unwrap();
        assert_eq!(packed.hot_records, 7);
        assert_eq!(packed.cold_records, 3);
        let hot_sizes: Vec<usize> = packed.hot_batches.iter().map(|b| b.records.len()).collect();
        let cold_sizes: Vec<usize> = packed.cold_batches.iter().map(|b| b.records.len()).collect();
        assert_eq!(hot_sizes, vec![4, 3]);
        assert_eq!(cold_sizes, vec![3]);
        assert!((packed.p_hot - 0.7).abs() < 1e-12);
    }

    #[test]
    fn packed_batches_partition_the_dataset() {
        use crate::dataset::synth::tests_support::small_synthetic;
        let ds = small_synthetic(1_500, 8);
        let log = crate::profiler::build_access_log(&ds, 1_500).unwrap();
        let hs = classify_embeddings(&log, 1e-3).unwrap();
        let packed = pack_minibatches(&ds, &hs, 64, 9).unwrap();
        assert_eq!(packed.total_records(), ds.record_count());
        // Every record appears exactly once: compare sorted serializations.
        let mut original: Vec<String> = ds
            .records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let mut packed_recs: Vec<String> = packed
            .hot_batches
            .iter()
            .chain(&packed.cold_batches)
            .flat_map(|b| &b.records)
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        original.sort();
        packed_recs.sort();
        assert_eq!(original, packed_recs);
        // Purity of every batch.
        for b in packed.hot_batches.iter().chain(&packed.cold_batches) {
            assert!(b.is_pure(&packed.hot_set));
        }
    }

    #[test]
    fn all_hot_dataset_packs_hot_only() {
        use crate::dataset::synth::tests_support::small_synthetic;
        let ds = small_synthetic(300, 4);
        let log = crate::profiler::build_access_log(&ds, 300).unwrap();
        // Everything hot at a negligible threshold.
        let hs = classify_embeddings(&log, 1e-9).unwrap();
        let packed = pack_minibatches(&ds, &hs, 64, 2).unwrap();
        assert!(packed.cold_batches.is_empty());
        assert_eq!(packed.hot_batches.len(), 300usize.div_ceil(64));
        assert_eq!(packed.p_hot, 1.0);
    }

    #[test]
    fn classification_is_worker_count_invariant() {
        use crate::dataset::synth::tests_support::small_synthetic;
        let ds = small_synthetic(2_000, 19);
        let log = crate::profiler::build_access_log(&ds, 2_000).unwrap();
        let hs = classify_embeddings(&log, 5e-4).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| pack_minibatches(&ds, &hs, 32, 5).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn closed_form_probability() {
        let p = all_hot_probability(0.99f64, 256).unwrap();
        assert!((p - 0.0763149839065938).abs() < 1e-12);
        assert_eq!(all_hot_probability(1.0f64, 9999).unwrap(), 1.0);
        assert_eq!(all_hot_probability(0.0f64, 1).unwrap(), 0.0);
        assert!(all_hot_probability(1.2f64, 4).is_err());
        assert!(all_hot_probability(0.5f64, 0).is_err());
        // generic over the scalar
        let p32 = all_hot_probability(0.99f32, 256).unwrap();
        assert!((f64::from(p32) - 0.0763).abs() < 1e-3);
    }
}
