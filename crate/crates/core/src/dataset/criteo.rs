//! Criteo-style click-log ingestion.
//!
//! Input is tab-separated: a 0/1 label, `dense_dim` integer fields, then one
//! categorical token per table. Empty fields are legal: dense defaults to 0.0
//! and categoricals to row 0. Non-empty categorical tokens are hashed with
//! FNV-1a 64 and reduced modulo the table's row count; the hash is frozen so
//! preprocessed artifacts stay reproducible.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::schema::DatasetSchema;

use super::{Dataset, TrainingRecord};

/// Hash a categorical token into a table's row space.
fn hash_categorical(token: &str, num_rows: u64) -> u32 {
    (fnv1a64(token.as_bytes()) % num_rows) as u32
}

/// Parses one TSV line into a record. `line_no` is 1-based and only used in
/// error messages.
pub fn parse_criteo_record(
    line: &str,
    schema: &DatasetSchema,
    line_no: usize,
) -> Result<TrainingRecord> {
    if schema.indices_per_table != 1 {
        return Err(Error::SchemaMismatch(
            "click-log parsing requires indices_per_table = 1".into(),
        ));
    }
    let mut fields = line.split('\t');
    let label = match fields.next() {
        Some("0") => false,
        Some("1") => true,
        other => {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("label must be 0 or 1, got {:?}", other.unwrap_or("")),
            })
        }
    };

    let dense_dim = schema.dense_dim as usize;
    let num_tables = schema.tables.len();

    let mut dense = Vec::with_capacity(dense_dim);
    for i in 0..dense_dim {
        let field = fields.next().unwrap_or("");
        if field.is_empty() {
            dense.push(0.0);
        } else {
            let v: i64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("dense field {} is not an integer: {:?}", i + 1, field),
            })?;
            dense.push(v as f32);
        }
    }

    let mut sparse = Vec::with_capacity(num_tables);
    for table in &schema.tables {
        let token = fields.next().unwrap_or("");
        let idx = if token.is_empty() {
            0
        } else {
            hash_categorical(token, table.num_rows)
        };
        sparse.push(vec![idx]);
    }

    if fields.next().is_some() {
        return Err(Error::Parse {
            line: line_no,
            msg: format!(
                "line has more than {} fields",
                1 + dense_dim + num_tables
            ),
        });
    }

    Ok(TrainingRecord {
        label,
        dense,
        sparse,
    })
}

/// Parses a whole reader of TSV lines. Blank lines are skipped.
pub fn parse_criteo_file<R: BufRead>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        records.push(parse_criteo_record(&line, schema, i + 1)?);
    }
    Ok(Dataset::new(schema.clone(), records))
}

/// Reads a click log from disk, transparently decompressing `.gz` files.
pub fn read_criteo(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    let file = File::open(path)?;
    let is_gz = path.extension().map(|e| e == "gz").unwrap_or(false);
    let reader: Box<dyn Read> = if is_gz {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_criteo_file(BufReader::new(reader), schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TableSchema;

    fn criteo_like_schema() -> DatasetSchema {
        let tables = (0..26)
            .map(|i| TableSchema::new(i, 10_000, 16))
            .collect();
        DatasetSchema::new(tables, 13, 1)
    }

    #[test]
    fn full_line_field_bookkeeping() {
        let schema = criteo_like_schema();
        let dense: Vec<String> = (1..=13).map(|i| i.to_string()).collect();
        let cats: Vec<String> = (0..26).map(|i| format!("{i:08x}")).collect();
        let line = format!("0\t{}\t{}", dense.join("\t"), cats.join("\t"));
        let rec = parse_criteo_record(&line, &schema, 1).unwrap();
        assert!(!rec.label);
        assert_eq!(rec.dense.len(), 13);
        assert_eq!(rec.dense[0], 1.0);
        assert_eq!(rec.sparse.len(), 26);
        assert!(rec.sparse.iter().all(|s| s.len() == 1));
        rec.validate(&schema).unwrap();
    }

    #[test]
    fn missing_fields_default() {
        let schema = criteo_like_schema();
        // Only the label present: all 39 feature fields missing.
        let rec = parse_criteo_record("1", &schema, 1).unwrap();
        assert!(rec.label);
        assert!(rec.dense.iter().all(|&d| d == 0.0));
        assert!(rec.sparse.iter().all(|s| s == &vec![0u32]));
        // Mixed: some empty fields in the middle.
        let rec = parse_criteo_record("1\t\t5", &schema, 1).unwrap();
        assert_eq!(rec.dense[0], 0.0);
        assert_eq!(rec.dense[1], 5.0);
    }

    #[test]
    fn hashed_fixture_matches_reference_values() {
        // Two tables with 1000 and 8192 rows; expected indices computed by
        // applying the published FNV-1a 64 parameters to each token by hand.
        let schema = DatasetSchema::new(
            vec![TableSchema::new(0, 1000, 8), TableSchema::new(1, 8192, 8)],
            1,
            1,
        );
        let fixture = "0\t7\t68fd1e64\t80e26c9b\n\
                       1\t\tfb936136\t7b4723c4\n\
                       0\t3\t\ta73ee510";
        let ds = parse_criteo_file(std::io::Cursor::new(fixture), &schema).unwrap();
        assert_eq!(ds.record_count(), 3);
        assert_eq!(ds.records[0].sparse, vec![vec![461], vec![6838]]);
        assert_eq!(ds.records[1].sparse, vec![vec![33], vec![6893]]);
        // empty token -> index 0, not the hash of ""
        assert_eq!(ds.records[2].sparse, vec![vec![0], vec![6962]]);
    }

    #[test]
    fn malformed_label_carries_line_number() {
        let schema = criteo_like_schema();
        let err = parse_criteo_record("2\t1", &schema, 17).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 17),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn excess_fields_rejected() {
        let schema = DatasetSchema::new(vec![TableSchema::new(0, 10, 4)], 1, 1);
        // label + 1 dense + 1 cat is full; a 4th field is an error
        assert!(parse_criteo_record("0\t1\tabc\tdef", &schema, 1).is_err());
    }

    #[test]
    fn gzip_round_trip() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let schema = DatasetSchema::new(vec![TableSchema::new(0, 100, 4)], 1, 1);
        let text = "0\t4\tdeadbeef\n1\t\tcafe\n";
        let dir = tempfile::tempdir().unwrap();
        let gz_path = dir.path().join("log.tsv.gz");
        let mut enc = GzEncoder::new(File::create(&gz_path).unwrap(), Default::default());
        enc.write_all(text.as_bytes()).unwrap();
        enc.finish().unwrap();
        let from_gz = read_criteo(&gz_path, &schema).unwrap();
        let plain = parse_criteo_file(std::io::Cursor::new(text), &schema).unwrap();
        assert_eq!(from_gz, plain);
    }
}
