//! Binary dataset format (magic `FAEDS1`).
//!
//! Little-endian layout: magic, schema block (table count, dense dim,
//! indices per table, record count, then per-table id/rows/dim/element
//! bytes), followed by fixed-stride record blocks (label byte, dense f32s,
//! u32 indices per table).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::schema::{DatasetSchema, TableSchema};

use super::{Dataset, TrainingRecord};

pub const FAEDS_MAGIC: &[u8; 6] = b"FAEDS1";

pub(crate) fn write_schema<W: Write>(w: &mut W, schema: &DatasetSchema) -> Result<()> {
    w.write_u32::<LittleEndian>(schema.tables.len() as u32)?;
    w.write_u32::<LittleEndian>(schema.dense_dim)?;
    w.write_u32::<LittleEndian>(schema.indices_per_table)?;
    for t in &schema.tables {
        w.write_u32::<LittleEndian>(t.table_id)?;
        w.write_u64::<LittleEndian>(t.num_rows)?;
        w.write_u32::<LittleEndian>(t.row_dim)?;
        w.write_u32::<LittleEndian>(t.bytes_per_element)?;
    }
    Ok(())
}

pub(crate) fn read_schema<R: Read>(r: &mut R) -> Result<DatasetSchema> {
    let table_count = r.read_u32::<LittleEndian>()?;
    let dense_dim = r.read_u32::<LittleEndian>()?;
    let indices_per_table = r.read_u32::<LittleEndian>()?;
    let mut tables = Vec::with_capacity(table_count as usize);
    for _ in 0..table_count {
        let table_id = r.read_u32::<LittleEndian>()?;
        let num_rows = r.read_u64::<LittleEndian>()?;
        let row_dim = r.read_u32::<LittleEndian>()?;
        let bytes_per_element = r.read_u32::<LittleEndian>()?;
        tables.push(TableSchema {
            table_id,
            num_rows,
            row_dim,
            bytes_per_element,
        });
    }
    let schema = DatasetSchema::new(tables, dense_dim, indices_per_table);
    schema.validate()?;
    Ok(schema)
}

pub(crate) fn write_record<W: Write>(
    w: &mut W,
    record: &TrainingRecord,
    schema: &DatasetSchema,
) -> Result<()> {
    w.write_u8(u8::from(record.label))?;
    debug_assert_eq!(record.dense.len(), schema.dense_dim as usize);
    for &d in &record.dense {
        w.write_f32::<LittleEndian>(d)?;
    }
    for list in &record.sparse {
        debug_assert_eq!(list.len(), schema.indices_per_table as usize);
        for &idx in list {
            w.write_u32::<LittleEndian>(idx)?;
        }
    }
    Ok(())
}

pub(crate) fn read_record<R: Read>(r: &mut R, schema: &DatasetSchema) -> Result<TrainingRecord> {
    let label = match r.read_u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format(format!(
                "record label byte must be 0 or 1, got {other}"
            )))
        }
    };
    let mut dense = Vec::with_capacity(schema.dense_dim as usize);
    for _ in 0..schema.dense_dim {
        dense.push(r.read_f32::<LittleEndian>()?);
    }
    let mut sparse = Vec::with_capacity(schema.tables.len());
    for _ in 0..schema.tables.len() {
        let mut list = Vec::with_capacity(schema.indices_per_table as usize);
        for _ in 0..schema.indices_per_table {
            list.push(r.read_u32::<LittleEndian>()?);
        }
        sparse.push(list);
    }
    Ok(TrainingRecord {
        label,
        dense,
        sparse,
    })
}

/// Serializes a dataset to `path`.
pub fn write_faeds(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FAEDS_MAGIC)?;
    write_schema(&mut w, &dataset.schema)?;
    w.write_u64::<LittleEndian>(dataset.record_count())?;
    for record in &dataset.records {
        write_record(&mut w, record, &dataset.schema)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset back, validating magic, schema, and every index range.
pub fn read_faeds(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != FAEDS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected FAEDS1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let schema = read_schema(&mut r)?;
    let record_count = r.read_u64::<LittleEndian>()?;
    let mut records = Vec::with_capacity(record_count as usize);
    for _ in 0..record_count {
        records.push(read_record(&mut r, &schema)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after records".into()));
    }
    let dataset = Dataset::new(schema, records);
    dataset.validate()?;
    Ok(dataset)
}
