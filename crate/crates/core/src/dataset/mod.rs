//! Training datasets: records, uniform sampling, synthesis, parsing, and the
//! binary on-disk format.

mod criteo;
pub(crate) mod io;
pub(crate) mod synth;

pub use criteo::{parse_criteo_file, parse_criteo_record, read_criteo};
pub use io::{read_faeds, write_faeds, FAEDS_MAGIC};
pub use synth::{synthesize, PlantedLogit, SynthConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::DatasetSchema;

/// One labeled sample: dense features plus per-table sparse index lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub label: bool,
    pub dense: Vec<f32>,
    /// One index list per table, each of the schema's fixed width.
    pub sparse: Vec<Vec<u32>>,
}

impl TrainingRecord {
    pub fn validate(&self, schema: &DatasetSchema) -> Result<()> {
        if self.dense.len() != schema.dense_dim as usize {
            return Err(Error::SchemaMismatch(format!(
                "record has {} dense features, schema declares {}",
                self.dense.len(),
                schema.dense_dim
            )));
        }
        if self.sparse.len() != schema.tables.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} sparse lists, schema declares {} tables",
                self.sparse.len(),
                schema.tables.len()
            )));
        }
        for (list, table) in self.sparse.iter().zip(&schema.tables) {
            if list.len() != schema.indices_per_table as usize {
                return Err(Error::SchemaMismatch(format!(
                    "table {} index list has width {}, schema declares {}",
                    table.table_id,
                    list.len(),
                    schema.indices_per_table
                )));
            }
            for &idx in list {
                if u64::from(idx) >= table.num_rows {
                    return Err(Error::SchemaMismatch(format!(
                        "index {} out of range for table {} ({} rows)",
                        idx, table.table_id, table.num_rows
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An ordered, deterministic collection of records plus its schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub records: Vec<TrainingRecord>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, records: Vec<TrainingRecord>) -> Self {
        Self { schema, records }
    }

    pub fn record_count(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        for r in &self.records {
            r.validate(&self.schema)?;
        }
        Ok(())
    }
}

/// Draws `floor(record_count * x / 100)` records uniformly without
/// replacement, preserving their original order. Deterministic given `seed`.
pub fn sample_inputs(dataset: &Dataset, x: f64, seed: u64) -> Result<Dataset> {
    if !(x > 0.0 && x <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling percentage must be in (0, 100], got {x}"
        )));
    }
    let n = dataset.records.len();
    let k = ((n as f64) * x / 100.0).floor() as usize;
    if k == n {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let records = chosen.iter().map(|&i| dataset.records[i].clone()).collect();
    Ok(Dataset::new(dataset.schema.clone(), records))
}
