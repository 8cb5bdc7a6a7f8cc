//! Named datasets. Small files ship inside the crate with SHA-256 checksums;
//! the rest are read from `$DTSEMNET_DATA_DIR/<name>.csv`.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::data::{read_csv, Dataset, Fractions, Schema};
use crate::error::{Error, Result};
use crate::semnet::Task;

pub const DATA_DIR_ENV: &str = "DTSEMNET_DATA_DIR";

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    pub task: Task,
    pub target: &'static str,
    pub categorical: &'static [&'static str],
    /// Columns present in the file but not used as features.
    pub drop: &'static [&'static str],
    pub fractions: Fractions,
    /// Header the CSV must carry.
    pub columns: &'static [&'static str],
    pub vendored: Option<(&'static [u8], &'static str)>,
}

const CLASSIFICATION: Fractions = Fractions::CLASSIFICATION;

pub const ENTRIES: &[Entry] = &[
    Entry {
        name: "balance_scale",
        task: Task::Classification,
        target: "class",
        categorical: &[],
        drop: &[],
        fractions: CLASSIFICATION,
        columns: &[
            "class",
            "left_weight",
            "left_distance",
            "right_weight",
            "right_distance",
        ],
        vendored: Some((
            include_bytes!("../data/balance_scale.csv"),
            "00e2a5c172e7aa3b01bc1087b327e88772a07c0e450762e5730f4d0c24af4258",
        )),
    },
    Entry {
        name: "breast_cancer",
        task: Task::Classification,
        target: "class",
        categorical: &[],
        drop: &[],
        fractions: CLASSIFICATION,
        columns: &[
            "clump_thickness",
            "cell_size_uniformity",
            "cell_shape_uniformity",
            "marginal_adhesion",
            "epithelial_cell_size",
            "bare_nuclei",
            "bland_chromatin",
            "normal_nucleoli",
            "mitoses",
            "class",
        ],
        vendored: Some((
            include_bytes!("../data/breast_cancer.csv"),
            "c9aa4485b1b55365e509e9f80169d46de19c00ceec0e1636fe5fc4b8f872c0e5",
        )),
    },
    Entry {
        name: "abalone",
        task: Task::Regression,
        target: "rings",
        categorical: &["sex"],
        drop: &[],
        fractions: Fractions(0.5, 0.1, 0.4),
        columns: &[
            "sex",
            "length",
            "diameter",
            "height",
            "whole_weight",
            "shucked_weight",
            "viscera_weight",
            "shell_weight",
            "rings",
        ],
        vendored: Some((
            include_bytes!("../data/abalone.csv"),
            "b36baf97dbcb1ae8d70ae95dd06794ce7878aef96cefc29cd0c8ca0fd9f8aee1",
        )),
    },
    Entry {
        name: "banknote",
        task: Task::Classification,
        target: "class",
        categorical: &[],
        drop: &[],
        fractions: CLASSIFICATION,
        columns: &["variance", "skewness", "curtosis", "entropy", "class"],
        vendored: None,
    },
    Entry {
        name: "acute_inflammations_1",
        task: Task::Classification,
        target: "inflammation",
        categorical: &[],
        drop: &["nephritis"],
        fractions: CLASSIFICATION,
        columns: ACUTE,
        vendored: None,
    },
    Entry {
        name: "acute_inflammations_2",
        task: Task::Classification,
        target: "nephritis",
        categorical: &[],
        drop: &["inflammation"],
        fractions: CLASSIFICATION,
        columns: ACUTE,
        vendored: None,
    },
    Entry {
        name: "blood_transfusion",
        task: Task::Classification,
        target: "donated",
        categorical: &[],
        drop: &[],
        fractions: CLASSIFICATION,
        columns: &["recency", "frequency", "monetary", "time", "donated"],
        vendored: None,
    },
];

const ACUTE: &[&str] = &[
    "temperature",
    "nausea",
    "lumbar_pain",
    "urine_pushing",
    "micturition_pains",
    "burning",
    "inflammation",
    "nephritis",
];

pub fn lookup(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name)
}

pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Entry {
    pub fn schema(&self) -> Schema {
        Schema {
            task: self.task,
            target: Some(self.target.to_string()),
            categorical: self.categorical.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn path(&self) -> PathBuf {
        data_dir().join(format!("{}.csv", self.name))
    }

    /// Whether [`Entry::load`] can succeed without further files.
    pub fn available(&self) -> bool {
        self.vendored.is_some() || self.path().is_file()
    }

    pub fn bytes(&self) -> Result<Vec<u8>> {
        match self.vendored {
            Some((bytes, expected)) => {
                let actual = sha256_hex(bytes);
                if actual != expected {
                    return Err(Error::Checksum {
                        name: self.name.into(),
                        expected: expected.into(),
                        actual,
                    });
                }
                Ok(bytes.to_vec())
            }
            None => {
                let path = self.path();
                std::fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::DatasetMissing {
                        name: self.name.into(),
                        path,
                    },
                    _ => Error::Io(e),
                })
            }
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        let mut table = read_csv(self.bytes()?.as_slice())?;
        for col in self.columns {
            if table.column_index(col).is_none() {
                return Err(Error::invalid(format!(
                    "{}: missing column {col:?}",
                    self.name
                )));
            }
        }
        for col in self.drop {
            let c = table.column_index(col).expect("checked above");
            table.headers.remove(c);
            for row in &mut table.rows {
                row.remove(c);
            }
        }
        Dataset::from_table(&table, &self.schema())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vendored_sets_load() {
        let bs = lookup("balance_scale").unwrap().load().unwrap();
        assert_eq!((bs.len(), bs.dim(), bs.num_classes()), (625, 4, Some(3)));
        let bc = lookup("breast_cancer").unwrap().load().unwrap();
        assert_eq!((bc.len(), bc.dim(), bc.num_classes()), (683, 9, Some(2)));
        let ab = lookup("abalone").unwrap().load().unwrap();
        assert_eq!((ab.len(), ab.dim(), ab.outputs()), (4177, 10, 1));
        assert_eq!(&ab.feature_names[..3], &["sex=M", "sex=F", "sex=I"]);
    }

    #[test]
    fn balance_scale_counts() {
        let bs = lookup("balance_scale").unwrap().load().unwrap();
        let mut counts = [0; 3];
        bs.labels().unwrap().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [49, 288, 288]);
    }

    #[test]
    fn unknown_and_missing() {
        assert!(lookup("mnist").is_none());
        let e = lookup("banknote").unwrap();
        if !e.available() {
            assert!(matches!(e.load(), Err(Error::DatasetMissing { .. })));
        }
    }
}
