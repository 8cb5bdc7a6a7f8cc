use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-column `(x − mean) / std` with population std; a zero std is stored as 1.
/// Target statistics are present for regression only, one entry per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_std: Option<Vec<f64>>,
}

/// Mean and population std of each column over `rows`.
pub fn column_stats(m: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut means = vec![0.0; m.cols()];
    for &r in rows {
        for (acc, v) in means.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    means.iter_mut().for_each(|v| *v /= n);
    let mut stds = vec![0.0; m.cols()];
    for &r in rows {
        for ((acc, v), mu) in stds.iter_mut().zip(m.row(r)).zip(&means) {
            *acc += (v - mu) * (v - mu);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    (means, stds)
}

fn apply(m: &mut Matrix, means: &[f64], stds: &[f64]) {
    for r in 0..m.rows() {
        for ((v, mu), sd) in m.row_mut(r).iter_mut().zip(means).zip(stds) {
            *v = (*v - mu) / sd;
        }
    }
}

impl Standardizer {
    /// Fits on the `train` rows only.
    pub fn fit(features: &Matrix, targets: Option<&Matrix>, train: &[usize]) -> Self {
        let (means, stds) = column_stats(features, train);
        let (target_mean, target_std) = match targets.map(|t| column_stats(t, train)) {
            Some((m, s)) => (Some(m), Some(s)),
            None => (None, None),
        };
        Self {
            means,
            stds,
            target_mean,
            target_std,
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, features: &mut Matrix) -> Result<()> {
        if features.cols() != self.dim() {
            return Err(Error::invalid(format!(
                "standardizer has {} columns, data has {}",
                self.dim(),
                features.cols()
            )));
        }
        apply(features, &self.means, &self.stds);
        Ok(())
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn transform_targets(&self, targets: &mut Matrix) -> Result<()> {
        match (&self.target_mean, &self.target_std) {
            (Some(m), Some(s)) if m.len() == targets.cols() => {
                apply(targets, m, s);
                Ok(())
            }
            _ => Err(Error::invalid(
                "standardizer has no matching target statistics",
            )),
        }
    }

    /// Maps a standardized prediction back to original target units.
    pub fn inverse_target(&self, y: &[f64]) -> Vec<f64> {
        match (&self.target_mean, &self.target_std) {
            (Some(m), Some(s)) => y
                .iter()
                .zip(m)
                .zip(s)
                .map(|((v, m), s)| v * s + m)
                .collect(),
            _ => y.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |m: &[f64], s: &[f64]| {
            m.len() == s.len()
                && m.iter().all(|v| v.is_finite())
                && s.iter().all(|v| v.is_finite() && *v > 0.0)
        };
        if !ok(&self.means, &self.stds) {
            return Err(Error::invalid("standardizer means/stds are inconsistent"));
        }
        match (&self.target_mean, &self.target_std) {
            (None, None) => Ok(()),
            (Some(m), Some(s)) if ok(m, s) => Ok(()),
            _ => Err(Error::invalid(
                "standardizer target statistics are inconsistent",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values() {
        let mut m = Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let s = Standardizer::fit(&m, None, &[0, 1]);
        assert_eq!((s.means[0], s.stds[0]), (3.0, 1.0));
        s.transform(&mut m).unwrap();
        assert_eq!(m.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column() {
        let mut m = Matrix::from_rows(&[vec![5.0], vec![5.0], vec![5.0]]).unwrap();
        let s = Standardizer::fit(&m, None, &[0, 1, 2]);
        assert_eq!(s.stds[0], 1.0);
        s.transform(&mut m).unwrap();
        assert_eq!(m.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn fitted_on_train_only() {
        let mut m = Matrix::from_rows(&[vec![0.0], vec![2.0], vec![100.0], vec![102.0]]).unwrap();
        let s = Standardizer::fit(&m, None, &[0, 1]);
        s.transform(&mut m).unwrap();
        assert_eq!(m[(0, 0)] + m[(1, 0)], 0.0);
        assert!((m[(2, 0)] + m[(3, 0)]) / 2.0 > 50.0);
    }

    #[test]
    fn targets_roundtrip() {
        let f = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let mut t = Matrix::from_rows(&[vec![10.0], vec![20.0]]).unwrap();
        let s = Standardizer::fit(&f, Some(&t), &[0, 1]);
        s.transform_targets(&mut t).unwrap();
        assert_eq!(t.as_slice(), &[-1.0, 1.0]);
        assert_eq!(s.inverse_target(&[1.0]), vec![20.0]);
        s.validate().unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("target_mean"));
        assert_eq!(serde_json::from_str::<Standardizer>(&json).unwrap(), s);
    }
}
