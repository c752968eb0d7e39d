//! Covariate encoding shared by all learners.

use crate::dataset::{Covariate, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum SchemaColumn {
    Numeric(String),
    /// Levels sorted; the first is the reference and gets no indicator.
    Categorical(String, Vec<String>),
}

/// Covariate layout learned from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    columns: Vec<SchemaColumn>,
}

/// Column-major design matrix without an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub cols: Vec<Vec<f64>>,
    /// `true` for continuous columns, `false` for level indicators.
    pub continuous: Vec<bool>,
}

impl FeatureMatrix {
    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: rows.len(),
            cols: self
                .cols
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            continuous: self.continuous.clone(),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }
}

impl FeatureSchema {
    /// Learn the schema from every covariate of `data`.
    pub fn from_dataset(data: &Dataset) -> Self {
        let columns = data
            .covariates()
            .iter()
            .map(|c| match c {
                Covariate::Numeric { name, .. } => SchemaColumn::Numeric(name.clone()),
                Covariate::Categorical { name, values } => {
                    let mut levels = values.clone();
                    levels.sort();
                    levels.dedup();
                    SchemaColumn::Categorical(name.clone(), levels)
                }
            })
            .collect();
        FeatureSchema { columns }
    }

    pub fn n_features(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                SchemaColumn::Numeric(_) => 1,
                SchemaColumn::Categorical(_, levels) => levels.len().saturating_sub(1),
            })
            .sum()
    }

    /// Encode `data` under this schema. Returns the matrix and the number of
    /// categorical cells whose level was not seen in training (those are
    /// encoded as the reference level).
    pub fn encode(&self, data: &Dataset) -> Result<(FeatureMatrix, usize)> {
        let n = data.n_obs();
        let mut cols = Vec::with_capacity(self.n_features());
        let mut continuous = Vec::with_capacity(self.n_features());
        let mut unseen = 0;
        for col in &self.columns {
            match col {
                SchemaColumn::Numeric(name) => match data.covariate(name) {
                    Some(Covariate::Numeric { values, .. }) => {
                        cols.push(values.clone());
                        continuous.push(true);
                    }
                    Some(_) => {
                        return Err(Error::data(format!(
                            "schema mismatch: {name} is not numeric"
                        )))
                    }
                    None => {
                        return Err(Error::data(format!(
                            "schema mismatch: missing covariate {name}"
                        )))
                    }
                },
                SchemaColumn::Categorical(name, levels) => match data.covariate(name) {
                    Some(Covariate::Categorical { values, .. }) => {
                        let mut indicators = vec![vec![0.0; n]; levels.len().saturating_sub(1)];
                        for (i, v) in values.iter().enumerate() {
                            match levels.binary_search(v) {
                                Ok(0) => {}
                                Ok(l) => indicators[l - 1][i] = 1.0,
                                Err(_) => unseen += 1,
                            }
                        }
                        continuous.extend(std::iter::repeat_n(false, indicators.len()));
                        cols.extend(indicators);
                    }
                    Some(_) => {
                        return Err(Error::data(format!(
                            "schema mismatch: {name} is not categorical"
                        )))
                    }
                    None => {
                        return Err(Error::data(format!(
                            "schema mismatch: missing covariate {name}"
                        )))
                    }
                },
            }
        }
        Ok((
            FeatureMatrix {
                n_rows: n,
                cols,
                continuous,
            },
            unseen,
        ))
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Natural cubic spline basis for one covariate, without intercept.
///
/// `df` columns: the linear term plus `df - 1` truncated-power terms that are
/// linear beyond the boundary knots. Knots sit at the minimum, the quantiles
/// `1/df, ..., (df-1)/df` and the maximum of the training values.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    knots: Vec<f64>,
}

impl NaturalSpline {
    pub fn fit(values: &[f64], df: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let df = df.max(1);
        let mut knots: Vec<f64> = (0..=df)
            .map(|i| quantile_sorted(&sorted, i as f64 / df as f64))
            .collect();
        knots.dedup();
        NaturalSpline { knots }
    }

    pub fn n_columns(&self) -> usize {
        self.knots.len().saturating_sub(1).max(1)
    }

    fn d(&self, k: usize, x: f64) -> f64 {
        let last = *self.knots.last().unwrap();
        let cube = |t: f64| if t > 0.0 { t * t * t } else { 0.0 };
        (cube(x - self.knots[k]) - cube(x - last)) / (last - self.knots[k])
    }

    pub fn expand(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![values.to_vec()];
        let nk = self.knots.len();
        if nk >= 3 {
            for k in 0..nk - 2 {
                out.push(
                    values
                        .iter()
                        .map(|&x| self.d(k, x) - self.d(nk - 2, x))
                        .collect(),
                );
            }
        }
        out
    }
}

/// Per-column centering and scaling; zero-variance columns are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    keep: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(cols: &[Vec<f64>]) -> Self {
        let mut keep = Vec::new();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        for (j, c) in cols.iter().enumerate() {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                keep.push(j);
                center.push(mean);
                scale.push(sd);
            }
        }
        Standardizer {
            keep,
            center,
            scale,
        }
    }

    pub fn apply(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.keep
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(&j, (&m, &s))| cols[j].iter().map(|v| (v - m) / s).collect())
            .collect()
    }
}
