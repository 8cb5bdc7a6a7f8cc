//! Tabular datasets: loading, encoding, splitting and standardization.

mod libsvm;
mod split;
mod standardize;
mod table;

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use libsvm::{load_libsvm, read_libsvm, write_libsvm, LibsvmTable};
pub use split::{split_provider, split_random, split_stratified, Fractions, Split};
pub use standardize::{column_stats, Standardizer};
pub use table::{load_csv, one_hot, parse_real, read_csv, OneHotEncoder, RawTable};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::semnet::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Libsvm,
}

/// How to turn a table into features and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub task: Task,
    /// Target column; the last column when unset. Ignored for LIBSVM.
    pub target: Option<String>,
    pub categorical: Vec<String>,
}

impl Schema {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            target: None,
            categorical: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Class ids index into `names`, which is sorted (numerically when every
    /// label is a number).
    Classes {
        labels: Vec<usize>,
        names: Vec<String>,
    },
    /// `N × d` real targets.
    Values { values: Matrix, names: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub feature_names: Vec<String>,
    pub target: Target,
}

/// Numeric labels first, by value, then the rest lexically.
fn label_order(a: &String, b: &String) -> Ordering {
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| !v.is_nan());
    match (num(a), num(b)) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

fn encode_labels(raw: Vec<String>) -> Target {
    let mut names = raw.clone();
    names.sort_by(label_order);
    names.dedup();
    let labels = raw
        .iter()
        .map(|l| {
            names
                .binary_search_by(|n| label_order(n, l))
                .expect("label present")
        })
        .collect();
    Target::Classes { labels, names }
}

impl Dataset {
    pub fn load(path: impl AsRef<Path>, format: Format, schema: &Schema) -> Result<Self> {
        match format {
            Format::Csv => Self::from_table(&load_csv(path)?, schema),
            Format::Libsvm => Self::from_libsvm(load_libsvm(path, None)?, schema.task),
        }
    }

    pub fn from_table(table: &RawTable, schema: &Schema) -> Result<Self> {
        let target_name = match &schema.target {
            Some(t) => t.clone(),
            None => table
                .headers
                .last()
                .cloned()
                .ok_or_else(|| Error::invalid("table has no columns"))?,
        };
        if schema.categorical.contains(&target_name) {
            return Err(Error::invalid(format!(
                "target {target_name:?} cannot be categorical"
            )));
        }
        let t = one_hot(table, &schema.categorical)?;
        let tc = t
            .column_index(&target_name)
            .ok_or_else(|| Error::invalid(format!("no target column named {target_name:?}")))?;
        if t.headers.len() < 2 {
            return Err(Error::invalid("table has no feature columns"));
        }
        if t.is_empty() {
            return Err(Error::invalid("table has no rows"));
        }
        let feature_names: Vec<String> = t
            .headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != tc)
            .map(|(_, h)| h.clone())
            .collect();
        let n = feature_names.len();
        let mut data = Vec::with_capacity(t.len() * n);
        for (row, &line) in t.rows.iter().zip(&t.lines) {
            for (c, cell) in row.iter().enumerate() {
                if c != tc {
                    data.push(parse_real(cell, line, &t.headers[c])?);
                }
            }
        }
        let features = Matrix::from_vec(t.len(), n, data)?;
        let target = match schema.task {
            Task::Classification => encode_labels(t.rows.iter().map(|r| r[tc].clone()).collect()),
            Task::Regression => {
                let vals = t
                    .rows
                    .iter()
                    .zip(&t.lines)
                    .map(|(r, &line)| parse_real(&r[tc], line, &target_name))
                    .collect::<Result<Vec<f64>>>()?;
                Target::Values {
                    values: Matrix::from_vec(vals.len(), 1, vals)?,
                    names: vec![target_name],
                }
            }
        };
        Ok(Self {
            features,
            feature_names,
            target,
        })
    }

    pub fn from_libsvm(table: LibsvmTable, task: Task) -> Result<Self> {
        if table.labels.is_empty() {
            return Err(Error::invalid("LIBSVM file has no rows"));
        }
        if table.features.cols() == 0 {
            return Err(Error::invalid("LIBSVM file has no features"));
        }
        let feature_names = (1..=table.features.cols())
            .map(|i| format!("f{i}"))
            .collect();
        let target = match task {
            Task::Classification => {
                encode_labels(table.labels.iter().map(f64::to_string).collect())
            }
            Task::Regression => Target::Values {
                values: Matrix::from_vec(table.labels.len(), 1, table.labels)?,
                names: vec!["label".into()],
            },
        };
        Ok(Self {
            features: table.features,
            feature_names,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Task {
        match self.target {
            Target::Classes { .. } => Task::Classification,
            Target::Values { .. } => Task::Regression,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.target {
            Target::Classes { names, .. } => Some(names.len()),
            Target::Values { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.target {
            Target::Classes { labels, .. } => Some(labels),
            Target::Values { .. } => None,
        }
    }

    pub fn values(&self) -> Option<&Matrix> {
        match &self.target {
            Target::Values { values, .. } => Some(values),
            Target::Classes { .. } => None,
        }
    }

    pub fn outputs(&self) -> usize {
        self.values().map_or(0, Matrix::cols)
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |m: &Matrix| {
            let mut out = Matrix::zeros(indices.len(), m.cols());
            for (i, &r) in indices.iter().enumerate() {
                out.row_mut(i).copy_from_slice(m.row(r));
            }
            out
        };
        let target = match &self.target {
            Target::Classes { labels, names } => Target::Classes {
                labels: indices.iter().map(|&r| labels[r]).collect(),
                names: names.clone(),
            },
            Target::Values { values, names } => Target::Values {
                values: pick(values),
                names: names.clone(),
            },
        };
        Self {
            features: pick(&self.features),
            feature_names: self.feature_names.clone(),
            target,
        }
    }

    pub fn split(&self, fractions: Fractions, seed: u64) -> Result<Split> {
        match self.labels() {
            Some(labels) => split_stratified(labels, fractions, seed),
            None => split_random(self.len(), fractions, seed),
        }
    }
}

/// Split datasets after standardization with training statistics.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub split: Split,
    pub standardizer: Standardizer,
}

/// Splits `data` and standardizes features (and regression targets) with
/// statistics from the training rows.
pub fn prepare(data: &Dataset, split: Split) -> Result<Prepared> {
    if split.train.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }
    let standardizer = Standardizer::fit(&data.features, data.values(), &split.train);
    let part = |idx: &[usize]| -> Result<Dataset> {
        let mut d = data.subset(idx);
        standardizer.transform(&mut d.features)?;
        if let Target::Values { values, .. } = &mut d.target {
            standardizer.transform_targets(values)?;
        }
        Ok(d)
    };
    Ok(Prepared {
        train: part(&split.train)?,
        val: part(&split.val)?,
        test: part(&split.test)?,
        split,
        standardizer,
    })
}
