//! In-memory sample containers.
//!
//! Covariates are stored row-major. Class labels are 0-based class indices
//! internally; the CSV layer converts to and from the 1-based labels used on
//! disk.

use crate::error::{Error, Result};

/// Unlabeled target covariates `D_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    covariates: Vec<f64>,
    n_rows: usize,
    dim: usize,
}

impl UnlabeledDataset {
    pub fn new(covariates: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("covariate dimension must be at least 1"));
        }
        if covariates.is_empty() {
            return Err(Error::EmptyDataset("unlabeled dataset has no rows".into()));
        }
        if !covariates.len().is_multiple_of(dim) {
            return Err(Error::arg(format!(
                "{} covariate values do not split into rows of dimension {dim}",
                covariates.len()
            )));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite covariate in row {}",
                pos / dim
            )));
        }
        let n_rows = covariates.len() / dim;
        Ok(Self {
            covariates,
            n_rows,
            dim,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.covariates.chunks_exact(self.dim)
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }
}

/// A labeled source sample `D_j` together with its per-class partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    covariates: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    class_index: Vec<Vec<usize>>,
}

impl LabeledDataset {
    /// Builds a dataset over `num_classes` classes; every label must be below
    /// `num_classes`.
    pub fn new(
        covariates: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::arg("number of classes must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::arg("covariate dimension must be at least 1"));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset("labeled dataset has no rows".into()));
        }
        if covariates.len() != labels.len() * dim {
            return Err(Error::arg(format!(
                "{} covariate values for {} labels of dimension {dim}",
                covariates.len(),
                labels.len()
            )));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "non-finite covariate in row {}",
                pos / dim
            )));
        }
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::arg(format!(
                    "label {} in row {i} exceeds the {num_classes} classes",
                    y + 1
                )));
            }
            class_index[y].push(i);
        }
        Ok(Self {
            covariates,
            labels,
            dim,
            num_classes,
            class_index,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    /// Row indices of class `k`, in ascending order.
    pub fn class_rows(&self, k: usize) -> &[usize] {
        &self.class_index[k]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    /// Copies the covariates of class `k` into a contiguous row-major buffer.
    pub fn class_covariates(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.class_index[k].len() * self.dim);
        for &i in &self.class_index[k] {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    /// Returns a copy with the labels replaced; covariates are untouched.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.covariates.clone(), labels, self.dim, self.num_classes)
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            covariates: self.covariates.clone(),
            n_rows: self.labels.len(),
            dim: self.dim,
        }
    }

    /// Fails unless every class has at least `required` samples.
    pub fn require_class_counts(&self, required: usize) -> Result<()> {
        for (class, rows) in self.class_index.iter().enumerate() {
            if rows.len() < required {
                return Err(Error::DegenerateSource {
                    class,
                    count: rows.len(),
                    required,
                });
            }
        }
        Ok(())
    }
}
