//! Packed-dataset format (magic `FAEPD1`).
//!
//! Layout: magic, then a checksummed payload — header (schema fingerprint,
//! t_final, pack seed, hot fraction, batch size, record and batch counts),
//! the schema block, hot-set bitmaps (byte-packed, LSB-first), hot batches,
//! cold batches — and a trailing FNV-1a 64 checksum of the payload. The
//! reader loads the whole file before parsing, so a truncated or corrupted
//! file fails the checksum without yielding a partial result.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::dataset::io::{read_record, read_schema, write_record, write_schema};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;

use super::{HotSet, Kind, MiniBatch, PackedDataset, Provenance, TableHotSet};

pub const FAEPD_MAGIC: &[u8; 6] = b"FAEPD1";

pub fn write_faepd(path: &Path, packed: &PackedDataset) -> Result<()> {
    let mut payload = Vec::new();
    {
        let w = &mut payload;
        w.write_u64::<LittleEndian>(packed.provenance.schema_fingerprint)?;
        w.write_f64::<LittleEndian>(packed.provenance.t_final)?;
        w.write_u64::<LittleEndian>(packed.provenance.pack_seed)?;
        w.write_f64::<LittleEndian>(packed.p_hot)?;
        w.write_u32::<LittleEndian>(packed.batch_size)?;
        w.write_u64::<LittleEndian>(packed.hot_records)?;
        w.write_u64::<LittleEndian>(packed.cold_records)?;
        w.write_u64::<LittleEndian>(packed.hot_batches.len() as u64)?;
        w.write_u64::<LittleEndian>(packed.cold_batches.len() as u64)?;
        write_schema(w, &packed.schema)?;
        for set in &packed.hot_set.tables {
            w.write_u64::<LittleEndian>(set.hot_rows)?;
            w.write_all(set.bitmap())?;
        }
        for batch in packed.hot_batches.iter().chain(&packed.cold_batches) {
            w.write_u32::<LittleEndian>(batch.records.len() as u32)?;
            for record in &batch.records {
                write_record(w, record, &packed.schema)?;
            }
        }
    }
    let checksum = fnv1a64(&payload);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(FAEPD_MAGIC)?;
    file.write_all(&payload)?;
    file.write_u64::<LittleEndian>(checksum)?;
    file.flush()?;
    Ok(())
}

pub fn read_faepd(path: &Path) -> Result<PackedDataset> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 14 {
        return Err(Error::Format("file too short".into()));
    }
    if &bytes[..6] != FAEPD_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected FAEPD1",
            String::from_utf8_lossy(&bytes[..6])
        )));
    }
    let payload = &bytes[6..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {stored:#x}, computed {computed:#x}"
        )));
    }

    let mut r = Cursor::new(payload);
    let schema_fingerprint = r.read_u64::<LittleEndian>()?;
    let t_final = r.read_f64::<LittleEndian>()?;
    let pack_seed = r.read_u64::<LittleEndian>()?;
    let p_hot = r.read_f64::<LittleEndian>()?;
    let batch_size = r.read_u32::<LittleEndian>()?;
    let hot_records = r.read_u64::<LittleEndian>()?;
    let cold_records = r.read_u64::<LittleEndian>()?;
    let hot_batch_count = r.read_u64::<LittleEndian>()?;
    let cold_batch_count = r.read_u64::<LittleEndian>()?;
    let schema = read_schema(&mut r)?;
    if schema.fingerprint() != schema_fingerprint {
        return Err(Error::SchemaMismatch(format!(
            "embedded schema fingerprint {:#x} does not match header {:#x}",
            schema.fingerprint(),
            schema_fingerprint
        )));
    }

    let mut tables = Vec::with_capacity(schema.tables.len());
    for t in &schema.tables {
        let hot_rows = r.read_u64::<LittleEndian>()?;
        let mut bits = vec![0u8; t.num_rows.div_ceil(8) as usize];
        r.read_exact(&mut bits)?;
        let set = TableHotSet::from_bitmap(t.table_id, t.num_rows, bits, t.row_bytes())?;
        if set.hot_rows != hot_rows {
            return Err(Error::Format(format!(
                "table {} bitmap popcount {} does not match stored hot_rows {}",
                t.table_id, set.hot_rows, hot_rows
            )));
        }
        tables.push(set);
    }
    let hot_set = HotSet { t_final, tables };

    let mut read_batches = |count: u64, kind: Kind| -> Result<Vec<MiniBatch>> {
        let mut batches = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>()?;
            let mut records = Vec::with_capacity(len as usize);
            for _ in 0..len {
                records.push(read_record(&mut r, &schema)?);
            }
            batches.push(MiniBatch { kind, records });
        }
        Ok(batches)
    };
    let hot_batches = read_batches(hot_batch_count, Kind::Hot)?;
    let cold_batches = read_batches(cold_batch_count, Kind::Cold)?;
    if r.position() != payload.len() as u64 {
        return Err(Error::Format("trailing bytes in payload".into()));
    }

    let got_hot: u64 = hot_batches.iter().map(|b| b.records.len() as u64).sum();
    let got_cold: u64 = cold_batches.iter().map(|b| b.records.len() as u64).sum();
    if got_hot != hot_records || got_cold != cold_records {
        return Err(Error::Format(format!(
            "record counts disagree: header says {hot_records}/{cold_records}, \
             batches hold {got_hot}/{got_cold}"
        )));
    }

    Ok(PackedDataset {
        schema,
        hot_set,
        batch_size,
        hot_batches,
        cold_batches,
        hot_records,
        cold_records,
        p_hot,
        provenance: Provenance {
            t_final,
            pack_seed,
            schema_fingerprint,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{classify_embeddings, pack_minibatches};
    use crate::dataset::synth::tests_support::small_synthetic;
    use crate::profiler::build_access_log;

    fn sample_packed(seed: u64) -> PackedDataset {
        let ds = small_synthetic(800, seed);
        let log = build_access_log(&ds, 800).unwrap();
        let hs = classify_embeddings(&log, 1e-3).unwrap();
        pack_minibatches(&ds, &hs, 32, seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let packed = sample_packed(5);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.faepd");
        let p2 = dir.path().join("b.faepd");
        write_faepd(&p1, &packed).unwrap();
        let back = read_faepd(&p1).unwrap();
        assert_eq!(back, packed);
        write_faepd(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_fails_checksum_with_no_partial_result() {
        let packed = sample_packed(6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.faepd");
        write_faepd(&p, &packed).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        match read_faepd(&p) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn corruption_fails_checksum() {
        let packed = sample_packed(7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.faepd");
        write_faepd(&p, &packed).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_faepd(&p), Err(Error::Format(_))));
    }

    #[test]
    fn schema_provenance_mismatch_is_rejected() {
        let packed = sample_packed(8);
        packed.validate_against(&packed.schema).unwrap();
        let mut other = packed.schema.clone();
        other.tables[0].num_rows += 1;
        assert!(matches!(
            packed.validate_against(&other),
            Err(Error::SchemaMismatch(_))
        ));
    }
}
