//! Embedding-table and dataset schemas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::Fnv1a64;

/// Tables at or above this byte size are "large" and participate in hot/cold
/// classification; smaller tables are kept hot unconditionally.
pub const LARGE_TABLE_BYTES: u64 = 1 << 20;

/// Shape of one embedding table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table_id: u32,
    pub num_rows: u64,
    /// Embedding vector length.
    pub row_dim: u32,
    /// Storage bytes per vector element (4 for f32).
    pub bytes_per_element: u32,
}

impl TableSchema {
    pub fn new(table_id: u32, num_rows: u64, row_dim: u32) -> Self {
        Self {
            table_id,
            num_rows,
            row_dim,
            bytes_per_element: 4,
        }
    }

    pub fn row_bytes(&self) -> u64 {
        u64::from(self.row_dim) * u64::from(self.bytes_per_element)
    }

    pub fn table_bytes(&self) -> u64 {
        self.num_rows * self.row_bytes()
    }

    /// Small tables are unconditionally hot.
    pub fn is_small(&self) -> bool {
        self.table_bytes() < LARGE_TABLE_BYTES
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_rows == 0 {
            return Err(Error::InvalidArgument(format!(
                "table {} has zero rows",
                self.table_id
            )));
        }
        if self.row_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "table {} has zero row_dim",
                self.table_id
            )));
        }
        if self.bytes_per_element == 0 {
            return Err(Error::InvalidArgument(format!(
                "table {} has zero bytes_per_element",
                self.table_id
            )));
        }
        Ok(())
    }
}

/// Schema of a whole dataset: table shapes plus the fixed per-record layout
/// (dense feature count and sparse indices per table), which gives records a
/// fixed stride in the binary format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub tables: Vec<TableSchema>,
    pub dense_dim: u32,
    /// Indices every record carries for every table (multi-hot width).
    pub indices_per_table: u32,
}

impl DatasetSchema {
    pub fn new(tables: Vec<TableSchema>, dense_dim: u32, indices_per_table: u32) -> Self {
        Self {
            tables,
            dense_dim,
            indices_per_table,
        }
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    /// Embedding lookups one record performs across all tables.
    pub fn lookups_per_record(&self) -> u64 {
        self.tables.len() as u64 * u64::from(self.indices_per_table)
    }

    /// Total embedding-table bytes.
    pub fn total_table_bytes(&self) -> u64 {
        self.tables.iter().map(TableSchema::table_bytes).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::InvalidArgument("schema has no tables".into()));
        }
        if self.indices_per_table == 0 {
            return Err(Error::InvalidArgument(
                "indices_per_table must be >= 1".into(),
            ));
        }
        for t in &self.tables {
            t.validate()?;
        }
        Ok(())
    }

    /// Stable fingerprint over the canonical little-endian encoding of every
    /// schema field. Stored in file headers so mismatched artifacts are
    /// rejected at load time.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a64::new();
        h.update(&(self.tables.len() as u32).to_le_bytes());
        h.update(&self.dense_dim.to_le_bytes());
        h.update(&self.indices_per_table.to_le_bytes());
        for t in &self.tables {
            h.update(&t.table_id.to_le_bytes());
            h.update(&t.num_rows.to_le_bytes());
            h.update(&t.row_dim.to_le_bytes());
            h.update(&t.bytes_per_element.to_le_bytes());
        }
        h.finish()
    }
}
