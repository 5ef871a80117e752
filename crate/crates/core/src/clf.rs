//! Asymmetric bi-quadratic energy function: value, gradient, Hessian.
//!
//! The candidate is V(x) = x' P0 x + sum_l step(sigma_l) sigma_l(x)^2 with
//! sigma_l(x) = x' P_l (x - mu_l) and step the indicator of sigma_l >= 0.
//! With P0 positive definite V is positive definite regardless of the
//! asymmetric terms, which only ever add non-negative quartics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One asymmetric quartic term.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricTerm {
    /// Shape matrix; only P + P' must be positive definite, a skew part is
    /// allowed.
    pub p: DMatrix<f64>,
    /// Offset vector providing the asymmetry.
    pub mu: DVector<f64>,
}

/// Parameters of the energy function.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfParams {
    p0: DMatrix<f64>,
    terms: Vec<AsymmetricTerm>,
}

impl ClfParams {
    pub fn new(p0: DMatrix<f64>, terms: Vec<AsymmetricTerm>) -> Result<Self> {
        let params = Self { p0, terms };
        params.validate(0.0)?;
        Ok(params)
    }

    /// Identity shape matrices and zero offsets; the standard starting point
    /// before joint optimization.
    pub fn identity(d: usize, l: usize) -> Self {
        Self {
            p0: DMatrix::identity(d, d),
            terms: (0..l)
                .map(|_| AsymmetricTerm {
                    p: DMatrix::identity(d, d),
                    mu: DVector::zeros(d),
                })
                .collect(),
        }
    }

    /// Checks symmetry of P0 and positive definiteness of every P_l + P_l'.
    ///
    /// `floor` is the required lower bound on the symmetrized eigenvalues;
    /// zero means plain strict positivity.
    pub fn validate(&self, floor: f64) -> Result<()> {
        let d = self.p0.nrows();
        if self.p0.ncols() != d || d == 0 {
            return Err(Error::Argument("P0 must be square and non-empty".into()));
        }
        let asym = (&self.p0 - self.p0.transpose()).norm();
        if asym > 1e-9 * self.p0.norm().max(1.0) {
            return Err(Error::Numerical(format!(
                "P0 is not symmetric (defect {asym:e})"
            )));
        }
        let check = |m: &DMatrix<f64>, label: &str| -> Result<()> {
            let sym = (m + m.transpose()) * 0.5;
            let min_eig = sym
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            // Strictness: 2 * min eig of the symmetric part must clear the floor.
            if 2.0 * min_eig <= floor || min_eig <= 0.0 {
                return Err(Error::Numerical(format!(
                    "{label} + transpose has min eigenvalue {:e}, floor {floor:e}",
                    2.0 * min_eig
                )));
            }
            Ok(())
        };
        check(&self.p0, "P0")?;
        for (l, term) in self.terms.iter().enumerate() {
            if term.p.nrows() != d || term.p.ncols() != d || term.mu.len() != d {
                return Err(Error::Argument(format!(
                    "term {l} has dimensions inconsistent with d = {d}"
                )));
            }
            check(&term.p, &format!("P{}", l + 1))?;
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.p0.nrows()
    }

    /// Number of asymmetric terms L.
    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn terms(&self) -> &[AsymmetricTerm] {
        &self.terms
    }

    /// sigma_l(x) = x' P_l (x - mu_l). Zero-based term index.
    pub fn sigma(&self, l: usize, x: &DVector<f64>) -> f64 {
        let term = &self.terms[l];
        (x.transpose() * &term.p * (x - &term.mu))[(0, 0)]
    }

    fn sigma_gradient(&self, l: usize, x: &DVector<f64>) -> DVector<f64> {
        let term = &self.terms[l];
        (&term.p + term.p.transpose()) * x - &term.p * &term.mu
    }

    /// Energy value; zero exactly at the origin, positive elsewhere.
    pub fn lyapunov(&self, x: &DVector<f64>) -> f64 {
        let mut v = (x.transpose() * &self.p0 * x)[(0, 0)];
        for l in 0..self.terms.len() {
            let s = self.sigma(l, x);
            if s > 0.0 {
                v += s * s;
            }
        }
        v
    }

    /// Gradient of the energy.
    ///
    /// Uses the general expression valid for non-symmetric shape matrices,
    /// grad sigma_l = (P_l + P_l') x - P_l mu_l; it reduces to the symmetric
    /// form 2 sigma_l P_l (2x - mu_l) when P_l = P_l'. Inactive terms
    /// contribute nothing and the switching surfaces are gradient-continuous
    /// because sigma_l vanishes there.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = (&self.p0 + self.p0.transpose()) * x;
        for l in 0..self.terms.len() {
            let s = self.sigma(l, x);
            if s > 0.0 {
                g += self.sigma_gradient(l, x) * (2.0 * s);
            }
        }
        g
    }

    /// Piecewise Hessian, taking the active-set expression at sigma_l >= 0.
    ///
    /// Not defined in the distributional sense on the switching surfaces;
    /// callers sampling random points never land there.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = &self.p0 + self.p0.transpose();
        for (l, term) in self.terms.iter().enumerate() {
            let s = self.sigma(l, x);
            if s >= 0.0 {
                let gs = self.sigma_gradient(l, x);
                h += (&gs * gs.transpose() + (&term.p + term.p.transpose()) * s) * 2.0;
            }
        }
        h
    }
}
