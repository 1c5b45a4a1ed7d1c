//! CSV ingestion of the primary matrix, labels and co-data.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codata::{CoDataColumn, CoDataDesign, Monotonicity};
use crate::error::{CorfError, Result};
use crate::forest::{Matrix, PrimaryDataset};
use crate::pipeline::{CoData, GroupingCoData};

/// A numeric matrix with row and column ids, as read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub column_ids: Vec<String>,
    pub values: Matrix,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CorfError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CorfError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CorfError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CorfError::invalid(format!("{}: {e}", path.display()))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "inf" | "-inf" | "+inf" | "infinity" | "-infinity"
    )
}

fn parse_cell(cell: &str, row: &str, col: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(CorfError::invalid(format!("non-finite value at ({row},{col})"))),
        Err(_) if is_missing(cell) => {
            Err(CorfError::invalid(format!("non-finite value at ({row},{col})")))
        }
        Err(_) => Err(CorfError::invalid(format!(
            "non-numeric cell '{cell}' at ({row},{col})"
        ))),
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CorfError::invalid(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

/// Reads a numeric CSV: first row holds column ids, first column row ids.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<LabeledMatrix> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(CorfError::invalid(format!("{}: empty file", path.display()))),
    };
    let column_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_unique(&column_ids, "variable")?;
    let p = column_ids.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut row_ids = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let rid = rec.get(0).unwrap_or_default().to_string();
        for (j, cell) in rec.iter().skip(1).enumerate() {
            columns[j].push(parse_cell(cell, &rid, &column_ids[j])?);
        }
        row_ids.push(rid);
    }
    check_unique(&row_ids, "sample")?;
    let values = Matrix::from_columns(row_ids.len(), columns)?;
    Ok(LabeledMatrix {
        row_ids,
        column_ids,
        values,
    })
}

/// Reads `sample id, label` pairs; a header row is skipped when its
/// label field is not 0 or 1.
pub fn load_labels(path: impl AsRef<Path>) -> Result<HashMap<String, u8>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut out = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() < 2 {
            return Err(CorfError::invalid(format!(
                "{}: label row {} needs a sample id and a label",
                path.display(),
                k + 1
            )));
        }
        let (id, raw) = (&rec[0], &rec[1]);
        let label = match raw {
            "0" => 0,
            "1" => 1,
            _ if k == 0 => continue,
            _ => {
                return Err(CorfError::invalid(format!(
                    "label '{raw}' for sample '{id}' is not 0/1"
                )))
            }
        };
        if out.insert(id.to_string(), label).is_some() {
            return Err(CorfError::invalid(format!("duplicate sample id '{id}' in labels")));
        }
    }
    Ok(out)
}

/// Primary matrix plus labels aligned by sample id.
pub fn load_primary(matrix_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<PrimaryDataset> {
    let m = load_matrix(matrix_path)?;
    let labels = load_labels(labels_path)?;
    let y = m
        .row_ids
        .iter()
        .map(|id| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| CorfError::invalid(format!("no label for sample id '{id}'")))
        })
        .collect::<Result<Vec<u8>>>()?;
    if labels.len() > m.row_ids.len() {
        log::warn!(
            "{} labelled samples are absent from the matrix and ignored",
            labels.len() - m.row_ids.len()
        );
    }
    PrimaryDataset::new(m.values, y, m.column_ids, m.row_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Nominal,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaMonotonicity {
    Increasing,
    Decreasing,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaColumn {
    pub name: String,
    pub kind: SchemaKind,
    #[serde(default)]
    pub monotonicity: SchemaMonotonicity,
}

/// Declared kind and shape expectation of each co-data column.
///
/// With `grouping` set, the schema must hold exactly one nominal column,
/// whose levels define the variable groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoDataSchema {
    pub columns: Vec<SchemaColumn>,
    #[serde(default)]
    pub grouping: bool,
}

impl CoDataSchema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorfError::io(path, e))?;
        let schema: CoDataSchema = serde_json::from_str(&text)
            .map_err(|e| CorfError::invalid(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(CorfError::invalid(format!("schema lists column '{}' twice", c.name)));
            }
            if c.kind == SchemaKind::Nominal && c.monotonicity != SchemaMonotonicity::None {
                return Err(CorfError::invalid(format!(
                    "monotonicity declared on nominal column '{}'",
                    c.name
                )));
            }
        }
        if self.grouping
            && (self.columns.len() != 1 || self.columns[0].kind != SchemaKind::Nominal)
        {
            return Err(CorfError::invalid(
                "grouping schema needs exactly one nominal column",
            ));
        }
        Ok(())
    }
}

/// Reads co-data rows keyed by variable id and aligns them to `variable_ids`.
pub fn load_codata(
    matrix_path: impl AsRef<Path>,
    schema: &CoDataSchema,
    variable_ids: &[String],
) -> Result<CoData> {
    schema.validate()?;
    let path = matrix_path.as_ref();
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(CorfError::invalid(format!("{}: empty file", path.display()))),
    };
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    for c in &schema.columns {
        if !names.contains(&c.name) {
            return Err(CorfError::invalid(format!(
                "schema column '{}' is absent from the co-data header",
                c.name
            )));
        }
    }
    if let Some(extra) = names.iter().find(|n| !schema.columns.iter().any(|c| &c.name == *n)) {
        return Err(CorfError::invalid(format!(
            "co-data column '{extra}' is not described by the schema"
        )));
    }

    let mut rows: HashMap<String, Vec<String>> = HashMap::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let cells = rec.iter().skip(1).map(str::to_string).collect();
        if rows.insert(id.clone(), cells).is_some() {
            return Err(CorfError::invalid(format!("duplicate variable id '{id}' in co-data")));
        }
    }
    let aligned: Vec<&Vec<String>> = variable_ids
        .iter()
        .map(|id| {
            rows.get(id)
                .ok_or_else(|| CorfError::invalid(format!("variable id '{id}' has no co-data row")))
        })
        .collect::<Result<_>>()?;

    let p = variable_ids.len();
    let mut columns = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let k = names.iter().position(|n| n == &c.name).expect("checked above");
        let cells: Vec<&str> = aligned.iter().map(|r| r[k].as_str()).collect();
        match c.kind {
            SchemaKind::Nominal => {
                let mut levels: Vec<String> = cells.iter().map(|s| s.to_string()).collect();
                levels.sort();
                levels.dedup();
                if schema.grouping {
                    return Ok(CoData::Groups(GroupingCoData::from_labels(&cells)));
                }
                let codes = cells
                    .iter()
                    .map(|s| levels.binary_search_by(|l| l.as_str().cmp(s)).expect("level present"))
                    .collect();
                columns.push(CoDataColumn::nominal(c.name.clone(), levels, codes)?);
            }
            SchemaKind::Continuous => {
                let values = cells
                    .iter()
                    .zip(variable_ids)
                    .map(|(s, id)| parse_cell(s, id, &c.name))
                    .collect::<Result<Vec<f64>>>()?;
                let mono = match c.monotonicity {
                    SchemaMonotonicity::Increasing => Monotonicity::Increasing,
                    SchemaMonotonicity::Decreasing => Monotonicity::Decreasing,
                    SchemaMonotonicity::None => Monotonicity::None,
                };
                columns.push(CoDataColumn::continuous(c.name.clone(), values, mono)?);
            }
        }
    }
    Ok(CoData::Model(CoDataDesign::new(p, columns)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn primary_aligns_by_sample_id() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(&dir, "x.csv", "id,g1,g2\na,1,2\nb,3,4\nc,5,6\n");
        let l = write(&dir, "y.csv", "sample,label\nc,1\na,0\nb,1\n");
        let d = load_primary(&m, &l).unwrap();
        assert_eq!((d.n_samples(), d.n_variables()), (3, 2));
        assert_eq!(d.y(), &[0, 1, 1]);
        assert_eq!(d.x().get(2, 1), 6.0);
        assert_eq!(d.variable_ids(), &["g1".to_string(), "g2".to_string()]);
    }

    #[test]
    fn primary_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(&dir, "x.csv", "id,g1,g2\na,1,2\nb,3,4\nc,5,6\n");
        let l = write(&dir, "y.csv", "a,0\nb,1\n");
        let e = load_primary(&m, &l).unwrap_err().to_string();
        assert!(e.contains("'c'"), "{e}");

        let na = write(&dir, "na.csv", "id,g1,g2\na,1,NA\nb,3,4\n");
        let l2 = write(&dir, "y2.csv", "a,0\nb,1\n");
        let e = load_primary(&na, &l2).unwrap_err().to_string();
        assert!(e.contains("non-finite value at (a,g2)"), "{e}");

        let bad = write(&dir, "bad.csv", "id,g1\na,x1\nb,2\n");
        let e = load_primary(&bad, &l2).unwrap_err().to_string();
        assert!(e.contains("non-numeric") && e.contains("(a,g1)"), "{e}");

        let dup = write(&dir, "dup.csv", "id,g1,g1\na,1,2\nb,3,4\n");
        assert!(load_primary(&dup, &l2).is_err());
        let duprow = write(&dir, "duprow.csv", "id,g1\na,1\na,3\n");
        assert!(load_matrix(&duprow).is_err());
        let missing = dir.path().join("nope.csv");
        assert_eq!(load_primary(&missing, &l2).unwrap_err().exit_code(), 4);
    }

    fn schema(text: &str) -> Result<CoDataSchema> {
        let s: CoDataSchema = serde_json::from_str(text).map_err(|e| CorfError::invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    #[test]
    fn codata_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(&dir, "c.csv", "id,tau,signature\ng2,0.5,yes\ng1,0.1,no\ng3,0.9,no\n");
        let s = schema(
            r#"{"columns":[{"name":"tau","kind":"continuous","monotonicity":"increasing"},
                {"name":"signature","kind":"nominal"}]}"#,
        )
        .unwrap();
        let ids: Vec<String> = ["g1", "g2", "g3"].iter().map(|s| s.to_string()).collect();
        let CoData::Model(d) = load_codata(&c, &s, &ids).unwrap() else {
            panic!("expected model co-data")
        };
        assert_eq!(d.columns().len(), 2);
        assert_eq!(
            d.columns()[0].values,
            crate::codata::ColumnValues::Real(vec![0.1, 0.5, 0.9])
        );
        assert_eq!(d.columns()[1].values, crate::codata::ColumnValues::Levels(vec![0, 1, 0]));

        let more: Vec<String> = ["g1", "g2", "g3", "g4"].iter().map(|s| s.to_string()).collect();
        let e = load_codata(&c, &s, &more).unwrap_err().to_string();
        assert!(e.contains("'g4'"), "{e}");

        let s3 = schema(
            r#"{"columns":[{"name":"tau","kind":"continuous"},{"name":"signature","kind":"nominal"},
                {"name":"other","kind":"continuous"}]}"#,
        )
        .unwrap();
        assert!(load_codata(&c, &s3, &ids).is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(schema(r#"{"columns":[{"name":"s","kind":"nominal","monotonicity":"increasing"}]}"#)
            .unwrap_err()
            .to_string()
            .contains("monotonicity declared on nominal column"));
        assert!(schema(r#"{"columns":[],"extra":1}"#).is_err());
        assert!(schema(r#"{"columns":[{"name":"s","kind":"continuous","shape":"x"}]}"#).is_err());
        assert!(schema(r#"{"grouping":true,"columns":[{"name":"s","kind":"continuous"}]}"#).is_err());
    }

    #[test]
    fn grouping_schema_yields_groups() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(&dir, "c.csv", "id,pathway\ng1,a\ng2,b\ng3,a\n");
        let s = schema(r#"{"grouping":true,"columns":[{"name":"pathway","kind":"nominal"}]}"#).unwrap();
        let ids: Vec<String> = ["g1", "g2", "g3"].iter().map(|s| s.to_string()).collect();
        let CoData::Groups(g) = load_codata(&c, &s, &ids).unwrap() else {
            panic!("expected grouping")
        };
        assert_eq!(g.group_of(), &[0, 1, 0]);
        assert_eq!(g.group_sizes(), vec![2, 1]);
    }
}
