//! Logger binary format (magic `FAELG1`) and the JSON profile summary.
//!
//! Layout: magic, f64 sampling percentage, u32 table count, then per table
//! the schema fields, sampled/full access totals, and `num_rows` 32-bit
//! counts. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::TableSchema;

use super::{AccessLog, TableLog};

pub const FAELG_MAGIC: &[u8; 6] = b"FAELG1";

pub fn write_faelg(path: &Path, log: &AccessLog) -> Result<()> {
    log.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FAELG_MAGIC)?;
    w.write_f64::<LittleEndian>(log.x_percent)?;
    w.write_u32::<LittleEndian>(log.tables.len() as u32)?;
    for t in &log.tables {
        w.write_u32::<LittleEndian>(t.schema.table_id)?;
        w.write_u64::<LittleEndian>(t.schema.num_rows)?;
        w.write_u32::<LittleEndian>(t.schema.row_dim)?;
        w.write_u32::<LittleEndian>(t.schema.bytes_per_element)?;
        w.write_u64::<LittleEndian>(t.sampled_total)?;
        w.write_u64::<LittleEndian>(t.full_total)?;
        for &c in &t.counts {
            w.write_u32::<LittleEndian>(c)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_faelg(path: &Path) -> Result<AccessLog> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != FAELG_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected FAELG1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let x_percent = r.read_f64::<LittleEndian>()?;
    let table_count = r.read_u32::<LittleEndian>()?;
    let mut tables = Vec::with_capacity(table_count as usize);
    for _ in 0..table_count {
        let table_id = r.read_u32::<LittleEndian>()?;
        let num_rows = r.read_u64::<LittleEndian>()?;
        let row_dim = r.read_u32::<LittleEndian>()?;
        let bytes_per_element = r.read_u32::<LittleEndian>()?;
        let sampled_total = r.read_u64::<LittleEndian>()?;
        let full_total = r.read_u64::<LittleEndian>()?;
        let schema = TableSchema {
            table_id,
            num_rows,
            row_dim,
            bytes_per_element,
        };
        schema.validate()?;
        let mut counts = vec![0u32; num_rows as usize];
        r.read_u32_into::<LittleEndian>(&mut counts)?;
        tables.push(TableLog {
            schema,
            counts,
            sampled_total,
            full_total,
        });
    }
    let log = AccessLog { x_percent, tables };
    log.validate()?;
    Ok(log)
}

/// Human-readable per-table histogram digest, emitted as `profile.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableProfile {
    pub table_id: u32,
    pub num_rows: u64,
    pub row_dim: u32,
    pub table_bytes: u64,
    pub large: bool,
    pub sampled_accesses: u64,
    pub full_accesses: u64,
    pub nonzero_rows: u64,
    pub max_count: u32,
    /// Share of sampled accesses landing in the top 1% of rows by count.
    pub head_share_top1pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub x_percent: f64,
    pub tables: Vec<TableProfile>,
}

impl ProfileSummary {
    pub fn from_log(log: &AccessLog) -> Self {
        let tables = log
            .tables
            .iter()
            .map(|t| {
                let mut sorted: Vec<u32> = t.counts.clone();
                sorted.sort_unstable_by(|a, b| b.cmp(a));
                let head_rows = ((sorted.len() as f64) * 0.01).ceil() as usize;
                let head: u64 = sorted.iter().take(head_rows.max(1)).map(|&c| u64::from(c)).sum();
                TableProfile {
                    table_id: t.schema.table_id,
                    num_rows: t.schema.num_rows,
                    row_dim: t.schema.row_dim,
                    table_bytes: t.schema.table_bytes(),
                    large: !t.schema.is_small(),
                    sampled_accesses: t.sampled_total,
                    full_accesses: t.full_total,
                    nonzero_rows: t.counts.iter().filter(|&&c| c > 0).count() as u64,
                    max_count: t.counts.iter().copied().max().unwrap_or(0),
                    head_share_top1pct: if t.sampled_total == 0 {
                        0.0
                    } else {
                        head as f64 / t.sampled_total as f64
                    },
                }
            })
            .collect();
        Self {
            x_percent: log.x_percent,
            tables,
        }
    }
}
