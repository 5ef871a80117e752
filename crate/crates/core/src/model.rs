//! Versioned on-disk representation of a fitted model.
//!
//! Everything lives in one JSON document: mixture parameters, energy-function
//! parameters, and a free-form metadata map recording provenance. Matrices
//! are stored row-major.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clf::{AsymmetricTerm, ClfParams};
use crate::error::{Error, Result};
use crate::gmm::MixtureParams;

pub const MODEL_FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: u32,
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub eps_pd: f64,
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "P0")]
    pub p0: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "mu")]
    pub mu: Vec<Vec<f64>>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Schema("empty matrix in model file".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema("ragged matrix in model file".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn from_params(
        mix: &MixtureParams,
        clf: &ClfParams,
        meta: BTreeMap<String, String>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT,
            d: mix.dims(),
            k: mix.num_components(),
            l: clf.num_terms(),
            eps_pd: mix.eps_pd(),
            priors: mix.priors().to_vec(),
            means: mix.means().iter().map(|m| m.iter().cloned().collect()).collect(),
            covariances: mix.covariances().iter().map(matrix_rows).collect(),
            p0: matrix_rows(clf.p0()),
            p: clf.terms().iter().map(|t| matrix_rows(&t.p)).collect(),
            mu: clf
                .terms()
                .iter()
                .map(|t| t.mu.iter().cloned().collect())
                .collect(),
            meta,
        }
    }

    pub fn into_params(self) -> Result<(MixtureParams, ClfParams, BTreeMap<String, String>)> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported model format {} (expected {MODEL_FORMAT})",
                self.format
            )));
        }
        if self.priors.len() != self.k
            || self.means.len() != self.k
            || self.covariances.len() != self.k
            || self.p.len() != self.l
            || self.mu.len() != self.l
        {
            return Err(Error::Schema(
                "component counts do not match the declared K and L".into(),
            ));
        }
        let means = self
            .means
            .iter()
            .map(|m| DVector::from_row_slice(m))
            .collect();
        let covariances = self
            .covariances
            .iter()
            .map(|c| rows_matrix(c))
            .collect::<Result<Vec<_>>>()?;
        let mix = MixtureParams::new(self.d, self.eps_pd, self.priors, means, covariances)?;
        let terms = self
            .p
            .iter()
            .zip(&self.mu)
            .map(|(p, mu)| {
                Ok(AsymmetricTerm {
                    p: rows_matrix(p)?,
                    mu: DVector::from_row_slice(mu),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let clf = ClfParams::new(rows_matrix(&self.p0)?, terms)?;
        Ok((mix, clf, self.meta))
    }
}

/// Writes the model as pretty-printed JSON; byte-deterministic for equal
/// parameters.
pub fn save_model<P: AsRef<Path>>(
    path: P,
    mix: &MixtureParams,
    clf: &ClfParams,
    meta: BTreeMap<String, String>,
) -> Result<()> {
    let file = ModelFile::from_params(mix, clf, meta);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Numerical(format!("model serialization failed: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(
    path: P,
) -> Result<(MixtureParams, ClfParams, BTreeMap<String, String>)> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Data(format!(
            "cannot read model file {}: {e}",
            path.as_ref().display()
        ))
    })?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("model file does not parse: {e}")))?;
    file.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_shape, Shape};
    use crate::gmm::{em_fit, kmeans_init};

    fn fitted_pair() -> (MixtureParams, ClfParams) {
        let set = synth_shape(Shape::Sine, 2, 60, 0.03, 1).unwrap();
        let init = kmeans_init(&set, 3, 0).unwrap();
        let mix = em_fit(&init, &set, 30, 1e-8).unwrap();
        let clf = ClfParams::identity(2, 2);
        (mix, clf)
    }

    #[test]
    fn round_trip_preserves_parameters_exactly() {
        let (mix, clf) = fitted_pair();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut meta = BTreeMap::new();
        meta.insert("shape".to_string(), "Sine".to_string());
        save_model(&path, &mix, &clf, meta.clone()).unwrap();
        let (mix2, clf2, meta2) = load_model(&path).unwrap();
        assert_eq!(mix, mix2);
        assert_eq!(clf, clf2);
        assert_eq!(meta, meta2);
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let (mix, clf) = fitted_pair();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save_model(&a, &mix, &clf, BTreeMap::new()).unwrap();
        save_model(&b, &mix, &clf, BTreeMap::new()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_unknown_format_version() {
        let (mix, clf) = fitted_pair();
        let mut file = ModelFile::from_params(&mix, &clf, BTreeMap::new());
        file.format = 2;
        assert!(matches!(file.into_params().unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn rejects_inconsistent_counts() {
        let (mix, clf) = fitted_pair();
        let mut file = ModelFile::from_params(&mix, &clf, BTreeMap::new());
        file.priors.pop();
        assert!(matches!(file.into_params().unwrap_err(), Error::Schema(_)));
    }
}
