//! File formats for ingestion: fvecs-compatible vector streams and a scalar
//! CSV whose first column is `id`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ScalarKind, ScalarRef, ScalarValue, Table, TableSchema, Tuple};
use crate::error::{Error, Result};

/// Reads `<u32 dim><dim × f32>` records until EOF.
pub fn read_fvecs<R: Read>(reader: R) -> Result<Vec<Vec<f32>>> {
    let mut reader = BufReader::new(reader);
    let mut out = Vec::new();
    loop {
        let dim = match reader.read_u32::<LittleEndian>() {
            Ok(d) => d as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut v = vec![0f32; dim];
        reader
            .read_f32_into::<LittleEndian>(&mut v)
            .map_err(|_| Error::format(format!("truncated fvecs record {}", out.len())))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_fvecs<W: Write>(writer: W, vectors: &[Vec<f32>]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for v in vectors {
        w.write_u32::<LittleEndian>(v.len() as u32)?;
        for x in v {
            w.write_f32::<LittleEndian>(*x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a scalar CSV against the schema. Columns may appear in any order
/// after `id`; every schema scalar column must be present.
pub fn read_scalar_csv<R: Read>(reader: R, schema: &TableSchema) -> Result<Vec<(u64, Vec<ScalarValue>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::format("scalar CSV must start with an `id` column"));
    }
    let mut positions = Vec::with_capacity(schema.num_scalar_columns());
    for col in &schema.scalar_columns {
        let pos = headers
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| Error::UnknownColumn(col.name.clone()))?;
        positions.push(pos);
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("row {line}: bad id `{}`", &rec[0])))?;
        let mut vals = Vec::with_capacity(positions.len());
        for (col, &pos) in schema.scalar_columns.iter().zip(&positions) {
            let raw = &rec[pos];
            vals.push(match col.kind {
                ScalarKind::Numeric => ScalarValue::Num(raw.trim().parse().map_err(|_| {
                    Error::format(format!("row {line}: column `{}` expects a number, got `{raw}`", col.name))
                })?),
                ScalarKind::Categorical => ScalarValue::Cat(raw.to_string()),
            });
        }
        rows.push((id, vals));
    }
    Ok(rows)
}

pub fn write_scalar_csv<W: Write>(writer: W, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(table.schema().scalar_columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for row in 0..table.len() {
        rec.clear();
        rec.push(table.id(row).to_string());
        for c in 0..table.schema().num_scalar_columns() {
            rec.push(match table.scalar(c, row) {
                ScalarRef::Num(v) => format!("{v}"),
                ScalarRef::Cat(s) => s.to_string(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `schema.json`, one `<column>.fvecs` per vector column and
/// `scalars.csv` into `dir`. Row order is preserved across files.
pub fn save_table(table: &Table, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(File::create(dir.join("schema.json"))?, table.schema())?;
    for (c, col) in table.schema().vector_columns.iter().enumerate() {
        let vecs: Vec<Vec<f32>> = (0..table.len()).map(|r| table.vector(c, r).to_vec()).collect();
        write_fvecs(File::create(dir.join(format!("{}.fvecs", col.name)))?, &vecs)?;
    }
    write_scalar_csv(File::create(dir.join("scalars.csv"))?, table)
}

pub fn load_table(dir: &Path) -> Result<Table> {
    let schema: TableSchema = serde_json::from_reader(BufReader::new(File::open(dir.join("schema.json"))?))?;
    let scalars = read_scalar_csv(File::open(dir.join("scalars.csv"))?, &schema)?;
    let mut columns = Vec::with_capacity(schema.num_vector_columns());
    for col in &schema.vector_columns {
        let vecs = read_fvecs(File::open(dir.join(format!("{}.fvecs", col.name)))?)?;
        if vecs.len() != scalars.len() {
            return Err(Error::format(format!(
                "column `{}` has {} vectors but scalars.csv has {} rows",
                col.name,
                vecs.len(),
                scalars.len()
            )));
        }
        columns.push(vecs);
    }
    let tuples: Vec<Tuple> = scalars
        .into_iter()
        .enumerate()
        .map(|(r, (id, vals))| Tuple::new(id, columns.iter_mut().map(|c| std::mem::take(&mut c[r])).collect(), vals))
        .collect();
    let mut table = Table::new(schema)?;
    table.insert_batch(tuples)?;
    table.clear_pending_updates();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Metric, ScalarColumnDef, VectorColumnDef};

    #[test]
    fn fvecs_layout_is_dim_then_floats() {
        let mut buf = Vec::new();
        write_fvecs(&mut buf, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(buf.len(), 2 * (4 + 8));
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[4..8], &1.0f32.to_le_bytes());
        assert_eq!(read_fvecs(&buf[..]).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn truncated_fvecs_is_an_error() {
        let mut buf = Vec::new();
        write_fvecs(&mut buf, &[vec![1.0, 2.0]]).unwrap();
        buf.truncate(9);
        assert!(matches!(read_fvecs(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn table_directory_round_trip() {
        let schema = TableSchema::new(
            vec![VectorColumnDef {
                name: "emb".into(),
                dim: 3,
                metric: Metric::L2,
            }],
            vec![
                ScalarColumnDef {
                    name: "price".into(),
                    kind: ScalarKind::Numeric,
                },
                ScalarColumnDef {
                    name: "brand".into(),
                    kind: ScalarKind::Categorical,
                },
            ],
        );
        let mut t = Table::new(schema).unwrap();
        t.insert_batch(
            (0..20)
                .map(|i| {
                    Tuple::new(
                        100 - i,
                        vec![vec![i as f32, 0.5, -1.25]],
                        vec![(i as f64 * 1.5).into(), if i % 3 == 0 { "x, y" } else { "z" }.into()],
                    )
                })
                .collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_table(&t, dir.path()).unwrap();
        let back = load_table(dir.path()).unwrap();
        assert_eq!(back.schema(), t.schema());
        assert_eq!(back.scan().collect::<Vec<_>>(), t.scan().collect::<Vec<_>>());
    }
}
