//! Datasets: the synthetic peaks problem and seeded train/validation splits.
//!
//! File ingestion lives in the `layertime` crate; this module only defines
//! the in-memory [`Dataset`] and the deterministic generators.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::Batch;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    /// `generate_peaks(samples, seed)`.
    Generated { generator: String, samples: usize, seed: u64 },
    /// Loaded from a file with the given SHA-256 hex digest.
    Loaded { path: String, sha256: String },
    /// Rows selected from another dataset by a seeded split.
    Split { parent: alloc::boxed::Box<Provenance>, seed: u64, part: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    /// One-hot rows.
    pub labels: Matrix,
    /// Row numbers in the source the samples were taken from.
    pub ids: Vec<usize>,
    pub class_names: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Checks shapes, finiteness and one-hot labels.
    pub fn new(
        features: Matrix,
        labels: Matrix,
        class_names: Option<Vec<String>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let ids = (0..features.rows()).collect();
        let ds = Self {
            features,
            labels,
            ids,
            class_names,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.labels.rows() || self.ids.len() != self.features.rows() {
            return Err(Error::InvalidShape(alloc::format!(
                "{} feature rows but {} label rows",
                self.features.rows(),
                self.labels.rows()
            )));
        }
        if self.labels.cols() < 2 {
            return Err(Error::InvalidShape("at least two classes are required".into()));
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.labels.cols() {
                return Err(Error::InvalidShape(alloc::format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.labels.cols()
                )));
            }
        }
        if !self.features.is_finite() {
            return Err(Error::InvalidShape("non-finite feature value".into()));
        }
        for k in 0..self.labels.rows() {
            if one_hot_class(self.labels.row(k)).is_none() {
                return Err(Error::InvalidShape(alloc::format!("label row {k} is not one-hot")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.cols()
    }

    /// Class index of each row.
    pub fn classes(&self) -> Vec<usize> {
        (0..self.len())
            .map(|k| one_hot_class(self.labels.row(k)).expect("validated one-hot"))
            .collect()
    }

    /// The whole dataset as one batch.
    pub fn to_batch(&self) -> Batch {
        Batch::new(self.features.clone(), self.labels.clone(), self.ids.clone())
            .expect("one-hot labels are probability vectors")
    }

    fn select(&self, rows: &[usize], provenance: Provenance) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            class_names: self.class_names.clone(),
            provenance,
        }
    }
}

/// Index of the single 1 in an exactly one-hot row.
pub fn one_hot_class(row: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (j, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(j);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

pub fn one_hot(classes: &[usize], n_classes: usize) -> Matrix {
    Matrix::from_fn(classes.len(), n_classes, |k, j| if classes[k] == j { 1.0 } else { 0.0 })
}

/// The classical peaks surface.
pub fn peaks_value(x: f64, y: f64) -> f64 {
    use libm::exp;
    3.0 * (1.0 - x) * (1.0 - x) * exp(-x * x - (y + 1.0) * (y + 1.0))
        - 10.0 * (x / 5.0 - x * x * x - libm::pow(y, 5.0)) * exp(-x * x - y * y)
        - exp(-(x + 1.0) * (x + 1.0) - y * y) / 3.0
}

pub const PEAKS_CLASSES: usize = 5;
pub const PEAKS_DOMAIN: f64 = 3.0;
/// Points per axis of the grid the class boundaries are computed on.
pub const PEAKS_GRID: usize = 201;

/// Quintile boundaries of `peaks_value` over the `PEAKS_GRID²` grid on
/// `[-3, 3]²`, as produced by [`compute_peaks_thresholds`].
pub const PEAKS_THRESHOLDS: [f64; 4] = [
    -0.2969669138832424,
    0.0015050129845009216,
    0.14550863043375975,
    1.2911633881653015,
];

/// Evaluates the surface at `x_i = -3 + 6 i / 200` (same for `y`), sorts the
/// `M = 201²` values and returns `sorted[⌊k M / 5⌋]` for `k = 1..4`.
pub fn compute_peaks_thresholds() -> [f64; 4] {
    let coord = |i: usize| -PEAKS_DOMAIN + 2.0 * PEAKS_DOMAIN * i as f64 / (PEAKS_GRID - 1) as f64;
    let mut values: Vec<f64> = (0..PEAKS_GRID)
        .flat_map(|i| (0..PEAKS_GRID).map(move |j| peaks_value(coord(i), coord(j))))
        .collect();
    values.sort_by(f64::total_cmp);
    let m = values.len();
    core::array::from_fn(|k| values[(k + 1) * m / PEAKS_CLASSES])
}

/// Class of a surface value: the number of boundaries at or below it.
pub fn peaks_class(value: f64) -> usize {
    PEAKS_THRESHOLDS.partition_point(|&t| t <= value)
}

/// Draws `samples` points uniformly from `[-3, 3]²` with ChaCha8 seeded by
/// `seed` (x then y per sample) and labels each by its peaks quintile.
pub fn generate_peaks(samples: usize, seed: u64) -> Result<Dataset> {
    if samples == 0 {
        return Err(Error::InvalidConfig("peaks dataset needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Matrix::zeros(samples, 2);
    let mut classes = Vec::with_capacity(samples);
    for k in 0..samples {
        let x = rng.random_range(-PEAKS_DOMAIN..=PEAKS_DOMAIN);
        let y = rng.random_range(-PEAKS_DOMAIN..=PEAKS_DOMAIN);
        features[(k, 0)] = x;
        features[(k, 1)] = y;
        classes.push(peaks_class(peaks_value(x, y)));
    }
    Dataset::new(
        features,
        one_hot(&classes, PEAKS_CLASSES),
        None,
        Provenance::Generated {
            generator: "peaks".into(),
            samples,
            seed,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
}

/// Shuffles the row indices with ChaCha8 seeded by `seed`; the first
/// `train_count` go to training, the next `val_count` to validation.
pub fn split(ds: &Dataset, train_count: usize, val_count: usize, seed: u64) -> Result<Split> {
    let requested = train_count + val_count;
    if requested > ds.len() {
        return Err(Error::SplitTooLarge {
            requested,
            available: ds.len(),
        });
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |name: &str| Provenance::Split {
        parent: alloc::boxed::Box::new(ds.provenance.clone()),
        seed,
        part: name.into(),
    };
    Ok(Split {
        train: ds.select(&perm[..train_count], part("train")),
        validation: ds.select(&perm[train_count..requested], part("validation")),
    })
}
