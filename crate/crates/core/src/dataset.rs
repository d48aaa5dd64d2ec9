//! Grouped regression data and per-subgroup standardization.

use std::collections::HashSet;

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::CoefficientMatrix;

/// One subgroup: an `n_k x p` design and its `n_k` responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: String,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Group {
    pub fn new(id: impl Into<String>, x: Array2<f64>, y: Array1<f64>) -> Self {
        Self { id: id.into(), x, y }
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }
}

/// Ordered collection of subgroups sharing one covariate set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    groups: Vec<Group>,
    n_features: usize,
}

impl GroupedDataset {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::InvalidData("dataset has no groups".into()))?;
        let n_features = first.x.ncols();
        let mut seen = HashSet::new();
        for g in &groups {
            if !seen.insert(g.id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate group id `{}`", g.id)));
            }
            if g.x.ncols() != n_features {
                return Err(Error::DimensionMismatch(format!(
                    "group `{}` has {} covariates, expected {}",
                    g.id,
                    g.x.ncols(),
                    n_features
                )));
            }
            if g.x.nrows() != g.y.len() {
                return Err(Error::DimensionMismatch(format!(
                    "group `{}` has {} design rows but {} responses",
                    g.id,
                    g.x.nrows(),
                    g.y.len()
                )));
            }
            if g.y.is_empty() {
                return Err(Error::InvalidData(format!("group `{}` is empty", g.id)));
            }
        }
        Ok(Self { groups, n_features })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, k: usize) -> &Group {
        &self.groups[k]
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_samples(&self) -> usize {
        self.groups.iter().map(Group::n_samples).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::n_samples).collect()
    }

    pub fn group_ids(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.id.clone()).collect()
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.id == id)
    }

    /// New dataset keeping only the listed rows of each group (indices per group, in order).
    pub fn select_rows(&self, rows: &[Vec<usize>]) -> Result<Self> {
        if rows.len() != self.n_groups() {
            return Err(Error::DimensionMismatch(format!(
                "row selection has {} groups, dataset has {}",
                rows.len(),
                self.n_groups()
            )));
        }
        let groups = self
            .groups
            .iter()
            .zip(rows)
            .map(|(g, idx)| Group::new(g.id.clone(), g.x.select(Axis(0), idx), g.y.select(Axis(0), idx)))
            .collect();
        Self::new(groups)
    }

    /// All groups stacked into one design and response, in group order.
    pub fn stacked(&self) -> (Array2<f64>, Array1<f64>) {
        let xs: Vec<_> = self.groups.iter().map(|g| g.x.view()).collect();
        let ys: Vec<_> = self.groups.iter().map(|g| g.y.view()).collect();
        (
            concatenate(Axis(0), &xs).expect("groups share the covariate count"),
            concatenate(Axis(0), &ys).expect("responses are one-dimensional"),
        )
    }

    pub(crate) fn check_coefficients(&self, b: &CoefficientMatrix) -> Result<()> {
        if b.n_features() != self.n_features || b.n_groups() != self.n_groups() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients are {}x{}, data needs {}x{}",
                b.n_features(),
                b.n_groups(),
                self.n_features,
                self.n_groups()
            )));
        }
        Ok(())
    }

    /// Standardizes each group's covariates and response within the group.
    ///
    /// Columns are centered and divided by their unbiased sample standard deviation.
    /// Constant columns are only centered and their scale is recorded as 1.
    pub fn standardize_by_group(&self) -> Result<(GroupedDataset, StandardizationRecord)> {
        let mut groups = Vec::with_capacity(self.n_groups());
        let mut stats = Vec::with_capacity(self.n_groups());
        for g in &self.groups {
            if g.n_samples() < 2 {
                return Err(Error::InsufficientSamples {
                    group: g.id.clone(),
                    n: g.n_samples(),
                });
            }
            let (x_mean, x_scale) = column_moments(&g.x);
            let (y_mean, y_scale) = vector_moments(&g.y);
            let x = (&g.x - &x_mean) / &x_scale;
            let y = (&g.y - y_mean) / y_scale;
            groups.push(Group::new(g.id.clone(), x, y));
            stats.push(GroupScaling {
                id: g.id.clone(),
                x_mean,
                x_scale,
                y_mean,
                y_scale,
            });
        }
        Ok((Self::new(groups)?, StandardizationRecord { groups: stats }))
    }
}

/// Per-group location and scale, kept so standardized fits can be applied to raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationRecord {
    pub groups: Vec<GroupScaling>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScaling {
    pub id: String,
    pub x_mean: Array1<f64>,
    pub x_scale: Array1<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl StandardizationRecord {
    pub fn scaling(&self, id: &str) -> Result<&GroupScaling> {
        self.groups
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))
    }

    /// Applies the recorded covariate and response transforms to raw-unit data.
    pub fn transform(&self, data: &GroupedDataset) -> Result<GroupedDataset> {
        let groups = data
            .groups()
            .iter()
            .map(|g| {
                let s = self.scaling(&g.id)?;
                if s.x_mean.len() != g.x.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "group `{}` has {} covariates, record has {}",
                        g.id,
                        g.x.ncols(),
                        s.x_mean.len()
                    )));
                }
                Ok(Group::new(
                    g.id.clone(),
                    (&g.x - &s.x_mean) / &s.x_scale,
                    (&g.y - s.y_mean) / s.y_scale,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        GroupedDataset::new(groups)
    }
}

/// Predicts responses for raw-unit covariates, in raw response units.
///
/// Column `k` of `b` is used for the group whose id matches the record entry `k`, so the
/// dataset may contain any subset of the fitted groups in any order.
pub fn predict(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    record: &StandardizationRecord,
) -> Result<Vec<Array1<f64>>> {
    if b.n_groups() != record.groups.len() || b.n_features() != data.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, record has {} groups and data {} covariates",
            b.n_features(),
            b.n_groups(),
            record.groups.len(),
            data.n_features()
        )));
    }
    data.groups()
        .iter()
        .map(|g| {
            let k = record
                .groups
                .iter()
                .position(|s| s.id == g.id)
                .ok_or_else(|| Error::UnknownGroup(g.id.clone()))?;
            let s = &record.groups[k];
            let z = (&g.x - &s.x_mean) / &s.x_scale;
            Ok(z.dot(&b.column(k)) * s.y_scale + s.y_mean)
        })
        .collect()
}

fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty design");
    let mut scale = Array1::ones(x.ncols());
    for (j, col) in x.columns().into_iter().enumerate() {
        let ss: f64 = col.iter().map(|v| (v - mean[j]).powi(2)).sum();
        scale[j] = usable_scale((ss / (n - 1.0)).sqrt(), mean[j]);
    }
    (mean, scale)
}

fn vector_moments(y: &Array1<f64>) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, usable_scale((ss / (n - 1.0)).sqrt(), mean))
}

// Treats a spread that is round-off relative to the column's magnitude as constant.
fn usable_scale(sd: f64, mean: f64) -> f64 {
    if sd <= 1e-12 * mean.abs().max(1.0) {
        1.0
    } else {
        sd
    }
}
