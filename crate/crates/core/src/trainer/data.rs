//! Synthetic and CSV classification datasets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    GaussianBlobs,
    TwoSpirals,
    Csv,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::GaussianBlobs => "gaussian-blobs",
            DatasetKind::TwoSpirals => "two-spirals",
            DatasetKind::Csv => "csv",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" | "blobs" => Ok(DatasetKind::GaussianBlobs),
            "two-spirals" | "spirals" => Ok(DatasetKind::TwoSpirals),
            "csv" => Ok(DatasetKind::Csv),
            other => Err(Error::config(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Row-major features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::config(format!(
                "{} features do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(x) = features.iter().find(|x| !x.is_finite()) {
            return Err(Error::config(format!("dataset contains non-finite feature {x}")));
        }
        let classes = labels.iter().max().map_or(0, |&c| c + 1);
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers rows `idx` into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// `classes` isotropic clusters with standard deviation `spread`. Centers
    /// sit evenly on a radius-3 circle in the first two dimensions.
    pub fn gaussian_blobs<R: Rng + ?Sized>(
        samples: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 || dim < 2 {
            return Err(Error::config("blobs need at least 2 classes and 2 dimensions"));
        }
        let noise = Normal::new(0.0, spread).map_err(|e| Error::config(format!("spread: {e}")))?;
        let mut features = Vec::with_capacity(samples * dim);
        let mut labels = Vec::with_capacity(samples);
        for i in 0..samples {
            let c = i % classes;
            let angle = std::f64::consts::TAU * c as f64 / classes as f64;
            for d in 0..dim {
                let center = match d {
                    0 => 3.0 * angle.cos(),
                    1 => 3.0 * angle.sin(),
                    _ => 0.0,
                };
                features.push(center + noise.sample(rng));
            }
            labels.push(c);
        }
        Self::new(features, labels, dim)
    }

    /// Two interleaved spirals in the plane, one per class.
    pub fn two_spirals<R: Rng + ?Sized>(samples: usize, noise: f64, rng: &mut R) -> Result<Self> {
        let jitter = Normal::new(0.0, noise).map_err(|e| Error::config(format!("noise: {e}")))?;
        let mut features = Vec::with_capacity(samples * 2);
        let mut labels = Vec::with_capacity(samples);
        for i in 0..samples {
            let c = i % 2;
            let t: f64 = rng.gen_range(0.25..1.0);
            let angle = 3.0 * std::f64::consts::PI * t + c as f64 * std::f64::consts::PI;
            let r = 2.0 * t;
            features.push(r * angle.cos() + jitter.sample(rng));
            features.push(r * angle.sin() + jitter.sample(rng));
            labels.push(c);
        }
        Self::new(features, labels, 2)
    }

    /// Reads numeric rows whose last column is the integer label. A first
    /// row that does not parse is taken as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let row = match parsed {
                Ok(row) => row,
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::config(format!("{} line {}: {e}", path.display(), line + 1))),
            };
            if row.len() < 2 {
                return Err(Error::config(format!("{} line {}: need features and a label", path.display(), line + 1)));
            }
            let d = row.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::config(format!("{} line {}: ragged row", path.display(), line + 1)));
            }
            let label = row[d];
            if label < 0.0 || label.fract() != 0.0 {
                return Err(Error::config(format!("{} line {}: label {label} is not a class index", path.display(), line + 1)));
            }
            features.extend_from_slice(&row[..d]);
            labels.push(label as usize);
        }
        let dim = dim.ok_or_else(|| Error::config(format!("{} has no rows", path.display())))?;
        Self::new(features, labels, dim)
    }

    /// Shuffled split; the second part holds `round(fraction * len)` rows.
    pub fn split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config(format!("validation fraction {fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let held = (fraction * self.len() as f64).round() as usize;
        let (val, train) = idx.split_at(held);
        let part = |rows: &[usize]| {
            let (x, y) = self.gather(rows);
            Dataset {
                features: x,
                labels: y,
                dim: self.dim,
                classes: self.classes,
            }
        };
        Ok((part(train), part(val)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::io::Write;

    #[test]
    fn blobs_are_balanced_and_reproducible() {
        let a = Dataset::gaussian_blobs(100, 4, 2, 0.5, &mut rng::stream(3, 2)).unwrap();
        let b = Dataset::gaussian_blobs(100, 4, 2, 0.5, &mut rng::stream(3, 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.classes(), 4);
        assert_eq!(a.labels().iter().filter(|&&c| c == 1).count(), 25);
    }

    #[test]
    fn csv_with_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,y,label\n0.5,1,0\n-2,3.5,1").unwrap();
        let d = Dataset::from_csv(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), &[-2.0, 3.5]);
        assert_eq!(d.classes(), 2);
    }

    #[test]
    fn split_partitions_rows() {
        let d = Dataset::two_spirals(50, 0.0, &mut rng::stream(1, 2)).unwrap();
        let (t, v) = d.split(0.2, &mut rng::stream(1, 5)).unwrap();
        assert_eq!((t.len(), v.len()), (40, 10));
    }
}
