//! CSV and libsvm ingestion, normalization and train/test splitting.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSeed;
use crate::sparse::SparseDataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "libsvm" | "svmlight" => Ok(DataFormat::Libsvm),
            other => Err(Error::invalid(format!(
                "unknown data format {other:?}; use csv or libsvm"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadOptions {
    /// CSV only: skip the first record.
    pub has_header: bool,
    /// CSV only: zero-based target column; `None` means the last one.
    pub target_column: Option<usize>,
    /// CSV only: field separator, comma when `None`.
    pub delimiter: Option<u8>,
    /// Standardize every feature, then rescale so the largest squared column
    /// norm equals this radius.
    pub normalize_radius: Option<f64>,
}

/// What normalization did, so new points can be mapped the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub global_scale: f64,
}

impl Normalization {
    pub fn apply(&self, x: &SparseDataMatrix) -> Result<SparseDataMatrix> {
        if x.n_rows() != self.feature_mean.len() {
            return Err(Error::invalid("feature count differs from the normalization"));
        }
        let dense = x.to_dense();
        let out = nalgebra::DMatrix::from_fn(dense.nrows(), dense.ncols(), |i, c| {
            (dense[(i, c)] - self.feature_mean[i]) / self.feature_scale[i] * self.global_scale
        });
        SparseDataMatrix::from_dense(&out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d x n`, one column per point.
    pub features: SparseDataMatrix,
    pub targets: Vec<f64>,
    pub test: Option<(SparseDataMatrix, Vec<f64>)>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(features: SparseDataMatrix, targets: Vec<f64>) -> Result<Self> {
        if features.n_cols() != targets.len() {
            return Err(Error::invalid(format!(
                "{} points but {} targets",
                features.n_cols(),
                targets.len()
            )));
        }
        Ok(Dataset {
            features,
            targets,
            test: None,
            normalization: None,
        })
    }

    pub fn n_points(&self) -> usize {
        self.features.n_cols()
    }

    pub fn dim(&self) -> usize {
        self.features.n_rows()
    }

    /// Moves a random `fraction` of the points into the test split.
    pub fn split(mut self, fraction: f64, seed: RandomSeed) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let n = self.n_points();
        let n_test = ((n as f64) * fraction).round() as usize;
        if n_test == 0 || n_test == n {
            return Err(Error::invalid(format!(
                "a {fraction} split of {n} points leaves one side empty"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed.stream("split", 0));
        let (test_idx, train_idx) = order.split_at(n_test);
        let mut test_idx = test_idx.to_vec();
        let mut train_idx = train_idx.to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.targets[i]).collect::<Vec<_>>();
        let test = (self.features.select_columns(&test_idx)?, pick(&test_idx));
        self.targets = pick(&train_idx);
        self.features = self.features.select_columns(&train_idx)?;
        self.test = Some(test);
        Ok(self)
    }

    /// Standardizes every feature (zero mean, unit variance over the training
    /// points) and rescales so the largest squared column norm is `radius`.
    /// The same map is applied to the test split.
    pub fn normalize(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }
        let dense = self.features.to_dense();
        let n = dense.ncols() as f64;
        let mean: Vec<f64> = dense.row_iter().map(|r| r.sum() / n).collect();
        let scale: Vec<f64> = dense
            .row_iter()
            .zip(&mean)
            .map(|(r, m)| {
                let var = r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut norm = Normalization {
            feature_mean: mean,
            feature_scale: scale,
            global_scale: 1.0,
        };
        let standardized = norm.apply(&self.features)?;
        let max_sq = standardized.column_norms_sq().into_iter().fold(0.0, f64::max);
        if max_sq > 0.0 {
            norm.global_scale = (radius / max_sq).sqrt();
        }
        self.features = norm.apply(&self.features)?;
        if let Some((x, y)) = self.test.take() {
            self.test = Some((norm.apply(&x)?, y));
        }
        self.normalization = Some(norm);
        Ok(self)
    }
}

/// Reads a dataset from disk.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat, options: &LoadOptions) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    let data = match format {
        DataFormat::Csv => parse_csv(file, options)?,
        DataFormat::Libsvm => parse_libsvm(BufReader::new(file))?,
    };
    match options.normalize_radius {
        Some(r) => data.normalize(r),
        None => Ok(data),
    }
}

/// Comma-separated numeric records, one point per line.
pub fn parse_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter.unwrap_or(b','))
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut columns = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric field {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let w = *width.get_or_insert(values.len());
        if values.len() != w || w < 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {w} fields (at least 2), found {}", values.len()),
            });
        }
        let t = options.target_column.unwrap_or(w - 1);
        if t >= w {
            return Err(Error::invalid(format!("target column {t} but records have {w} fields")));
        }
        targets.push(values[t]);
        let feats: Vec<(usize, f64)> = values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .enumerate()
            .filter(|&(_, (_, &v))| v != 0.0)
            .map(|(k, (_, &v))| (k, v))
            .collect();
        columns.push(feats);
    }
    let d = width.ok_or_else(|| Error::invalid("no data records"))? - 1;
    Dataset::new(SparseDataMatrix::from_columns(d, columns)?, targets)
}

/// `<target> <index>:<value> ...` with 1-based, increasing indices. The
/// dimension is the largest index seen.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut columns = Vec::new();
    let mut targets = Vec::new();
    let mut d = 0;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let mut fields = content.split_whitespace();
        let target = fields.next().expect("nonempty line");
        let target: f64 = target
            .parse()
            .map_err(|_| parse_err(format!("non-numeric target {target:?}")))?;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut last = 0;
        for f in fields {
            let (i, v) = f
                .split_once(':')
                .ok_or_else(|| parse_err(format!("expected index:value, found {f:?}")))?;
            let i: usize = i.parse().map_err(|_| parse_err(format!("bad index {i:?}")))?;
            let v: f64 = v.parse().map_err(|_| parse_err(format!("bad value {v:?}")))?;
            if i == 0 {
                return Err(parse_err("indices are 1-based".into()));
            }
            if i <= last {
                return Err(parse_err("indices must be strictly increasing".into()));
            }
            last = i;
            d = d.max(i);
            if v != 0.0 {
                entries.push((i - 1, v));
            }
        }
        columns.push(entries);
        targets.push(target);
    }
    if columns.is_empty() {
        return Err(Error::invalid("no data records"));
    }
    Dataset::new(SparseDataMatrix::from_columns(d, columns)?, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_target_last() {
        let data = parse_csv("1,0,2.5\n0,1,3.5\n".as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(data.dim(), 2);
        assert_eq!(data.n_points(), 2);
        assert_eq!(data.targets, vec![2.5, 3.5]);
        assert_eq!(data.features.nnz(), 2);
        assert_eq!(data.features.get(0, 0), 1.0);
        assert_eq!(data.features.get(1, 1), 1.0);
    }

    #[test]
    fn csv_header_and_target_column() {
        let opts = LoadOptions {
            has_header: true,
            target_column: Some(0),
            ..Default::default()
        };
        let data = parse_csv("y,a,b\n7,1,2\n8,3,0\n".as_bytes(), &opts).unwrap();
        assert_eq!(data.targets, vec![7.0, 8.0]);
        assert_eq!(data.features.get(0, 1), 3.0);
        assert_eq!(data.features.get(1, 1), 0.0);
        let opts = LoadOptions {
            has_header: true,
            delimiter: Some(b';'),
            ..Default::default()
        };
        let data = parse_csv("\"a\";\"y\"\n1.5;6\n".as_bytes(), &opts).unwrap();
        assert_eq!(data.targets, vec![6.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = parse_csv("1,2,3\n4,x,6\n".as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_csv("1,2,3\n4,5\n".as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn libsvm_line() {
        let data = parse_libsvm("3.5 1:0.5 4:2\n".as_bytes()).unwrap();
        assert_eq!(data.dim(), 4);
        assert_eq!(data.targets, vec![3.5]);
        let (rows, vals) = data.features.column(0);
        assert_eq!(rows, &[0, 3]);
        assert_eq!(vals, &[0.5, 2.0]);
    }

    #[test]
    fn libsvm_errors() {
        for bad in ["abc 1:2\n", "1 0:2\n", "1 2:1 1:1\n", "1 2-1\n"] {
            assert!(
                matches!(parse_libsvm(bad.as_bytes()), Err(Error::Parse { line: 1, .. })),
                "{bad}"
            );
        }
        assert!(matches!(
            parse_libsvm("1 1:1\n2 x:1\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn normalization_hits_the_radius() {
        let text = "1,5,0,1\n2,-1,3,2\n0,2,2,3\n4,4,-2,4\n";
        let data = parse_csv(text.as_bytes(), &LoadOptions::default()).unwrap();
        let data = data.normalize(1.0).unwrap();
        let max = data.features.column_norms_sq().into_iter().fold(0.0, f64::max);
        assert!((max.sqrt() - 1.0).abs() < 1e-9);
        let data = data.normalize(2.5).unwrap();
        let max = data.features.column_norms_sq().into_iter().fold(0.0, f64::max);
        assert!((max - 2.5).abs() < 1e-9);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let cols: Vec<Vec<(usize, f64)>> = (0..10).map(|i| vec![(0, i as f64 + 1.0)]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let data = Dataset::new(SparseDataMatrix::from_columns(1, cols).unwrap(), y).unwrap();
        let a = data.clone().split(0.3, RandomSeed(1)).unwrap();
        let b = data.split(0.3, RandomSeed(1)).unwrap();
        assert_eq!(a, b);
        let (_, test_y) = a.test.as_ref().unwrap();
        assert_eq!(test_y.len(), 3);
        assert_eq!(a.targets.len(), 7);
        let mut all: Vec<f64> = a.targets.iter().chain(test_y).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }
}
