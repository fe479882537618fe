use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataio::schema::{validate_schema, FeatureDescriptor, FeatureGroup};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const REGION_COLUMN: &str = "region_id";
pub const YEAR_COLUMN: &str = "year";
pub const TARGET_COLUMN: &str = "yield_t_ha";

/// Instances (region, year) × described feature columns with a yield target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub descriptors: Vec<FeatureDescriptor>,
    pub features: Matrix,
    /// Yield in t·ha⁻¹.
    pub target: Vec<f64>,
    pub region_id: Vec<String>,
    pub year: Vec<i32>,
    /// Rows whose season was shorter than the weekly window and got padded.
    pub padded: Vec<bool>,
}

impl FeatureTable {
    pub fn new(
        descriptors: Vec<FeatureDescriptor>,
        features: Matrix,
        target: Vec<f64>,
        region_id: Vec<String>,
        year: Vec<i32>,
    ) -> Result<Self> {
        validate_schema(&descriptors)?;
        let n = features.rows();
        if features.cols() != descriptors.len() {
            return Err(Error::Dimension {
                expected: descriptors.len(),
                got: features.cols(),
            });
        }
        for len in [target.len(), region_id.len(), year.len()] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: len,
                });
            }
        }
        if features
            .as_slice()
            .iter()
            .chain(&target)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Schema("table contains non-finite values".into()));
        }
        let mut seen = HashSet::new();
        for (r, y) in region_id.iter().zip(&year) {
            if !seen.insert((r.as_str(), *y)) {
                return Err(Error::Duplicate {
                    region: r.clone(),
                    year: *y,
                });
            }
        }
        Ok(FeatureTable {
            descriptors,
            features,
            target,
            region_id,
            year,
            padded: vec![false; n],
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.descriptors.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.descriptors.iter().map(|d| d.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.descriptors.iter().position(|d| d.name == name)
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.year.iter().copied().collect()
    }

    pub fn group_columns(&self, group: FeatureGroup) -> Vec<usize> {
        self.descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| d.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            descriptors: self.descriptors.clone(),
            features: self.features.select_rows(idx),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            region_id: idx.iter().map(|&i| self.region_id[i].clone()).collect(),
            year: idx.iter().map(|&i| self.year[i]).collect(),
            padded: idx.iter().map(|&i| self.padded[i]).collect(),
        }
    }

    /// Column subset in the given order; rows unchanged.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureTable {
        FeatureTable {
            descriptors: cols.iter().map(|&j| self.descriptors[j].clone()).collect(),
            features: self.features.select_cols(cols),
            target: self.target.clone(),
            region_id: self.region_id.clone(),
            year: self.year.clone(),
            padded: self.padded.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            REGION_COLUMN.to_string(),
            YEAR_COLUMN.to_string(),
            TARGET_COLUMN.to_string(),
        ];
        header.extend(self.feature_names());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.region_id[i].clone(),
                self.year[i].to_string(),
                fmt_f64(self.target[i]),
            ];
            rec.extend(self.features.row(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.write_csv(f)
    }
}

// Shortest representation that parses back to the identical f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a CSV whose header contains `region_id`, `year`, `yield_t_ha` and
/// every schema column. Extra columns are ignored. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn load_table(path: &Path, schema: &[FeatureDescriptor]) -> Result<FeatureTable> {
    let f = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_table(f, schema)
}

pub fn read_table<R: Read>(input: R, schema: &[FeatureDescriptor]) -> Result<FeatureTable> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| {
        pos.get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let region_col = locate(REGION_COLUMN)?;
    let year_col = locate(YEAR_COLUMN)?;
    let target_col = locate(TARGET_COLUMN)?;
    let feature_cols = schema
        .iter()
        .map(|d| locate(&d.name))
        .collect::<Result<Vec<_>>>()?;

    let mut data = Vec::new();
    let mut target = Vec::new();
    let mut region_id = Vec::new();
    let mut year = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |col: usize| rec.get(col).unwrap_or("");
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = cell(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        region_id.push(cell(region_col).to_string());
        let y = cell(year_col);
        year.push(y.parse::<i32>().map_err(|_| Error::Parse {
            row,
            column: YEAR_COLUMN.into(),
            value: y.to_string(),
        })?);
        target.push(number(target_col, TARGET_COLUMN)?);
        for (d, &col) in schema.iter().zip(&feature_cols) {
            data.push(number(col, &d.name)?);
        }
    }
    let n = target.len();
    let features = Matrix::from_vec(n, schema.len(), data)?;
    FeatureTable::new(schema.to_vec(), features, target, region_id, year)
}

/// Train/test row indices for a temporal hold-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalSplit {
    pub test_year: i32,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl TemporalSplit {
    /// `(first, last)` training year, if any rows precede the test year.
    pub fn train_years(&self, table: &FeatureTable) -> Option<(i32, i32)> {
        let ys = self.train.iter().map(|&i| table.year[i]);
        let lo = ys.clone().min()?;
        Some((lo, ys.max()?))
    }
}

/// Training rows are all years strictly before `test_year`; test rows are
/// exactly `test_year`. Later years are excluded from both.
pub fn temporal_split(table: &FeatureTable, test_year: i32) -> Result<TemporalSplit> {
    if !table.year.contains(&test_year) {
        return Err(Error::MissingYear(test_year));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &y) in table.year.iter().enumerate() {
        if y < test_year {
            train.push(i);
        } else if y == test_year {
            test.push(i);
        }
    }
    Ok(TemporalSplit {
        test_year,
        train,
        test,
    })
}
