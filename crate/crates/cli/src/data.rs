//! Record tables on disk. CSV with a `recordId` column followed by feature
//! columns named `f<k>` where k is the flat position in the row-major
//! feature matrix. A party's file carries only the flat positions it owns,
//! so horizontally joining the split files reproduces the original table
//! cell for cell — split copies cell text verbatim, no reformatting.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use vertinfer_core::vpack::ColumnPartition;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// Flat feature positions, one per value column, strictly increasing.
    pub feature_indices: Vec<usize>,
    pub record_ids: Vec<String>,
    /// Raw cell text, one row per record, aligned with `feature_indices`.
    pub cells: Vec<Vec<String>>,
}

impl Table {
    pub fn parse_values(&self) -> Result<Vec<Vec<f64>>> {
        self.cells
            .iter()
            .zip(&self.record_ids)
            .map(|(row, id)| {
                row.iter()
                    .map(|cell| {
                        cell.trim()
                            .parse::<f64>()
                            .with_context(|| format!("record {id}: bad value {cell:?}"))
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let mut cols = headers.iter();
    if cols.next() != Some("recordId") {
        bail!("{}: first column must be recordId", path.display());
    }
    let feature_indices: Vec<usize> = cols
        .map(|h| {
            h.strip_prefix('f')
                .and_then(|k| k.parse::<usize>().ok())
                .with_context(|| format!("{}: bad feature column {h:?}", path.display()))
        })
        .collect::<Result<_>>()?;
    if feature_indices.windows(2).any(|w| w[1] <= w[0]) {
        bail!("{}: feature columns must strictly increase", path.display());
    }
    let mut record_ids = Vec::new();
    let mut cells = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != feature_indices.len() + 1 {
            bail!(
                "{}: record {} has {} fields, header has {}",
                path.display(),
                record_ids.len(),
                row.len(),
                feature_indices.len() + 1
            );
        }
        record_ids.push(row[0].to_string());
        cells.push(row.iter().skip(1).map(str::to_string).collect());
    }
    Ok(Table { feature_indices, record_ids, cells })
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["recordId".to_string()];
    header.extend(table.feature_indices.iter().map(|k| format!("f{k}")));
    writer.write_record(&header)?;
    for (id, row) in table.record_ids.iter().zip(&table.cells) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().cloned());
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// Splits a full table (flat positions 0..rows*cols) by matrix column: party
/// p keeps flat positions { r*cols + c : c in its column range }.
pub fn split_table(table: &Table, partition: &ColumnPartition) -> Result<Vec<Table>> {
    partition.validate()?;
    let cols = partition.width;
    let total = table.feature_indices.len();
    if total % cols != 0 {
        bail!("table has {total} features, not a multiple of partition width {cols}");
    }
    let rows = total / cols;
    if table.feature_indices != (0..total).collect::<Vec<_>>() {
        bail!("only a full table (columns f0..f{}) can be split", total - 1);
    }
    (0..partition.n_parties())
        .map(|p| {
            let range = partition.range(p)?;
            let mut feature_indices = Vec::with_capacity(rows * range.len());
            for r in 0..rows {
                feature_indices.extend(range.clone().map(|c| r * cols + c));
            }
            let cells = table
                .cells
                .iter()
                .map(|row| feature_indices.iter().map(|&k| row[k].clone()).collect())
                .collect();
            Ok(Table {
                feature_indices,
                record_ids: table.record_ids.clone(),
                cells,
            })
        })
        .collect()
}

/// Horizontal join on record order; inverse of `split_table`. Record ids
/// must agree row for row, and feature positions must tile 0..total without
/// overlap.
pub fn join_tables(parts: &[Table]) -> Result<Table> {
    let Some(first) = parts.first() else {
        bail!("nothing to join")
    };
    let mut by_position: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, t) in parts.iter().enumerate() {
        if t.record_ids != first.record_ids {
            bail!("part {p} lists different records than part 0");
        }
        for (j, &k) in t.feature_indices.iter().enumerate() {
            if by_position.insert(k, (p, j)).is_some() {
                bail!("feature f{k} appears in more than one part");
            }
        }
    }
    let total = by_position.len();
    if by_position.keys().last() != Some(&(total - 1)) {
        bail!("parts do not cover f0..f{}", total - 1);
    }
    let cells = (0..first.record_ids.len())
        .map(|row| {
            by_position
                .values()
                .map(|&(p, j)| parts[p].cells[row][j].clone())
                .collect()
        })
        .collect();
    Ok(Table {
        feature_indices: (0..total).collect(),
        record_ids: first.record_ids.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_table() -> Table {
        Table {
            feature_indices: (0..6).collect(),
            record_ids: vec!["a".into(), "b".into()],
            cells: vec![
                vec!["0.5".into(), "1".into(), "-2".into(), "3.25".into(), "4".into(), "5".into()],
                vec!["9".into(), "8".into(), "7".into(), "6".into(), "5".into(), "4".into()],
            ],
        }
    }

    #[test]
    fn split_then_join_is_identity() {
        let table = demo_table();
        // Fig.-3 style: 3 columns as 2 + 1 over a 2x3 matrix.
        let partition = ColumnPartition::new(3, vec![0, 2]).unwrap();
        let parts = split_table(&table, &partition).unwrap();
        assert_eq!(parts.len(), 2);
        // Party 0 owns columns 0..2 -> flats 0,1 (row 0) and 3,4 (row 1).
        assert_eq!(parts[0].feature_indices, vec![0, 1, 3, 4]);
        assert_eq!(parts[1].feature_indices, vec![2, 5]);
        assert_eq!(parts[0].cells[0], vec!["0.5", "1", "3.25", "4"]);
        let joined = join_tables(&parts).unwrap();
        assert_eq!(joined, table);
    }

    #[test]
    fn single_party_split_is_a_copy() {
        let table = demo_table();
        let partition = ColumnPartition::new(3, vec![0]).unwrap();
        let parts = split_table(&table, &partition).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], table);
    }

    #[test]
    fn overlapping_parts_refuse_to_join() {
        let table = demo_table();
        let partition = ColumnPartition::new(3, vec![0, 2]).unwrap();
        let mut parts = split_table(&table, &partition).unwrap();
        parts[1].feature_indices[0] = 0;
        assert!(join_tables(&parts).is_err());
    }

    #[test]
    fn csv_files_roundtrip(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let table = demo_table();
        write_table(&path, &table).unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back, table);
        let vals = back.parse_values().unwrap();
        assert_eq!(vals[0][3], 3.25);
    }
}
