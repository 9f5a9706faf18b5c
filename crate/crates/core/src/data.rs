//! Labelled datasets: the synthetic two-spirals problem and a plain CSV
//! format (`x0,…,x{d−1},label`).

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Full turns each spiral arm makes.
pub const SPIRAL_TURNS: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: Option<u64>,
    pub num_classes: usize,
    pub features: Vec<Vector>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        features: Vec<Vector>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            seed: None,
            num_classes,
            features,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        if let Some(first) = self.features.first() {
            let d = first.dim();
            if let Some(i) = self.features.iter().position(|f| f.dim() != d) {
                return Err(Error::Validation(format!(
                    "row {i} has {} features, expected {d}",
                    self.features[i].dim()
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vector::dim)
    }

    pub fn sample(&self, i: usize) -> (&Vector, usize) {
        (&self.features[i], self.labels[i])
    }

    /// Writes the dataset as CSV with header `x0,…,x{d−1},label`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for (f, l) in self.features.iter().zip(&self.labels) {
            let mut row: Vec<String> = f.iter().map(|v| format!("{v}")).collect();
            row.push(l.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Noiseless point at arm position `t ∈ [0, 1]` of spiral `class` (0 or 1).
/// The second arm is the first rotated by π.
pub fn spiral_point(t: f64, class: usize) -> [f64; 2] {
    let angle = 2.0 * PI * SPIRAL_TURNS * t + PI * class as f64;
    let radius = t;
    [radius * angle.cos(), radius * angle.sin()]
}

/// `n` points on two interleaved spirals, `n / 2` per class, with isotropic
/// Gaussian noise of standard deviation `noise`. Arm positions are drawn
/// uniformly from `[0.05, 1]`. Samples alternate between classes.
pub fn make_two_spirals(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "two-spirals size must be a positive even number, got {n}"
        )));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).expect("finite non-negative std");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = rng.random_range(0.05..=1.0);
        let [a, b] = spiral_point(t, class);
        let (na, nb) = if noise > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        features.push(Vector::from(vec![a + na, b + nb]));
        labels.push(class);
    }
    Ok(Dataset {
        name: "two_spirals".into(),
        seed: Some(seed),
        num_classes: 2,
        features,
        labels,
    })
}

/// Reads a CSV with header `x0,…,x{d−1},label`; `d` comes from the header.
pub fn load_dataset_csv(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let d = headers.len().saturating_sub(1);
    let expected: Vec<String> = (0..d)
        .map(|i| format!("x{i}"))
        .chain(["label".to_string()])
        .collect();
    if d == 0
        || headers
            .iter()
            .map(str::trim)
            .ne(expected.iter().map(String::as_str))
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for field in record.iter().take(d) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite feature `{field}`"),
                });
            }
            row.push(v);
        }
        let label_field = record[d].trim();
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid label `{label_field}`"),
        })?;
        if label >= num_classes {
            return Err(Error::Validation(format!(
                "line {line}: label {label} out of range for {num_classes} classes"
            )));
        }
        features.push(Vector::from(row));
        labels.push(label);
    }

    Ok(Dataset {
        name: path
            .file_stem()
            .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned()),
        seed: None,
        num_classes,
        features,
        labels,
    })
}
