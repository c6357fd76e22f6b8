//! Weighted partialling-out of the regressors onto the fixed-effect span.

use crate::error::{Error, Result};
use crate::family::DerivativeArrays;
use crate::panel::{Structure, ValidatedPanel};
use crate::scalar::Scalar;
use crate::solver::{normalize_phi, stack, weight_scale, FitResult};
use crate::spec::{FeSpec, SpecId};
use crate::sweep;

/// Level-sum tolerance (scaled by 1/T) for the projections feeding the bias formulas.
pub const WLS_TOL: f64 = 1e-11;
pub const WLS_MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRegressors<S> {
    /// Fitted values x̂, one column per regressor.
    pub x_hat: Vec<Vec<S>>,
    /// x − x̂.
    pub residual: Vec<Vec<S>>,
    pub weights_used: Vec<S>,
    /// Normalized block coefficients ϑ̂_k, stacked (empty for the dense fallback).
    pub coefficients: Vec<Vec<S>>,
    pub sweeps: Vec<usize>,
}

/// (D̂_π^r) = d̂^rψ ⊙ (x − x̂), one column per regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedResidualArrays<S> {
    pub dpi1: Vec<Vec<S>>,
    pub dpi2: Vec<Vec<S>>,
    pub dpi3: Vec<Vec<S>>,
    /// Observations with positive weight; zero-weight rows are dropped observations.
    pub n_used: usize,
}

/// Projects each column of `x` on the span of the blocks of `spec` with weights `d2_hat`.
/// Zero weights mark observations that take no part (dropped levels).
pub fn wls_project<S: Scalar>(
    panel: &ValidatedPanel<S>,
    spec: &FeSpec,
    d2_hat: &[S],
    x: &[Vec<S>],
) -> Result<ProjectedRegressors<S>> {
    wls_project_with(panel, spec, d2_hat, x, WLS_TOL, WLS_MAX_SWEEPS)
}

pub fn wls_project_with<S: Scalar>(
    panel: &ValidatedPanel<S>,
    spec: &FeSpec,
    d2_hat: &[S],
    x: &[Vec<S>],
    tol: f64,
    max_sweeps: usize,
) -> Result<ProjectedRegressors<S>> {
    let n = panel.n_obs();
    if d2_hat.len() != n || x.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension(format!("weights and regressors must have {n} entries")));
    }
    if d2_hat.iter().any(|&w| !(w >= S::zero()) || !w.is_finite()) {
        return Err(Error::InvalidConfig("projection weights must be finite and non-negative".into()));
    }
    let owned;
    let panel = if spec != panel.spec() {
        owned = panel.with_spec(spec)?;
        &owned
    } else {
        panel
    };
    let design = panel.design();
    let mut out = ProjectedRegressors {
        x_hat: Vec::with_capacity(x.len()),
        residual: Vec::with_capacity(x.len()),
        weights_used: d2_hat.to_vec(),
        coefficients: Vec::new(),
        sweeps: Vec::new(),
    };
    for col in x {
        let fitted = if design.has_twin() {
            crate::dense::dense_wls_fitted(design, d2_hat, col)?
        } else {
            let p = sweep::wls_sweeps(design, d2_hat, col, weight_scale(panel), S::lit(tol), max_sweeps)?;
            out.coefficients.push(normalize_phi(&stack(&p.coef), design.constraints()));
            out.sweeps.push(p.sweeps);
            p.fitted
        };
        out.residual.push(col.iter().zip(&fitted).map(|(&a, &b)| a - b).collect());
        out.x_hat.push(fitted);
    }
    Ok(out)
}

/// Projection of the fitted panel's regressors with the fit's own weights d̂²ψ.
pub fn project_fit<S: Scalar>(fit: &FitResult<S>) -> Result<ProjectedRegressors<S>> {
    wls_project(&fit.panel, fit.panel.spec(), &fit.derivatives.d2, fit.panel.x())
}

/// Closed-form unit-weight projection for bipartite spec 3.b:
/// x̂_ijt = x̄_ij· + x̄_·jt + x̄_i·t − x̄_i·· − x̄_·j· − x̄_··t + x̄_···.
pub fn ols_between_transform<S: Scalar>(panel: &ValidatedPanel<S>, x: &[S]) -> Result<Vec<S>> {
    if panel.structure() != Structure::Bipartite || panel.spec().id() != SpecId::S3b {
        return Err(Error::StructureViolation(
            "the closed-form between transformation needs bipartite data with spec 3.b".into(),
        ));
    }
    let (n1, n2, t) = (panel.n1(), panel.n2(), panel.t());
    if x.len() != n1 * n2 * t {
        return Err(Error::Dimension(format!("column has {} entries, expected {}", x.len(), n1 * n2 * t)));
    }
    let at = |i: usize, j: usize, s: usize| x[(i * n2 + j) * t + s];
    let (f1, f2, ft) = (S::from_usize_lossy(n1), S::from_usize_lossy(n2), S::from_usize_lossy(t));
    let mut m_ij = vec![S::zero(); n1 * n2];
    let mut m_jt = vec![S::zero(); n2 * t];
    let mut m_it = vec![S::zero(); n1 * t];
    let mut m_i = vec![S::zero(); n1];
    let mut m_j = vec![S::zero(); n2];
    let mut m_t = vec![S::zero(); t];
    let mut m = S::zero();
    for i in 0..n1 {
        for j in 0..n2 {
            for s in 0..t {
                let v = at(i, j, s);
                m_ij[i * n2 + j] += v / ft;
                m_jt[j * t + s] += v / f1;
                m_it[i * t + s] += v / f2;
                m_i[i] += v / (f2 * ft);
                m_j[j] += v / (f1 * ft);
                m_t[s] += v / (f1 * f2);
                m += v / (f1 * f2 * ft);
            }
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for i in 0..n1 {
        for j in 0..n2 {
            for s in 0..t {
                out.push(m_ij[i * n2 + j] + m_jt[j * t + s] + m_it[i * t + s] - m_i[i] - m_j[j] - m_t[s] + m);
            }
        }
    }
    Ok(out)
}

pub fn residual_arrays<S: Scalar>(
    projected: &ProjectedRegressors<S>,
    derivs: &DerivativeArrays<S>,
) -> Result<WeightedResidualArrays<S>> {
    let n = derivs.len();
    if projected.residual.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("residuals and derivative arrays differ in length".into()));
    }
    let times = |d: &[S]| -> Vec<Vec<S>> {
        projected.residual.iter().map(|r| r.iter().zip(d).map(|(&a, &b)| a * b).collect()).collect()
    };
    Ok(WeightedResidualArrays {
        dpi1: times(&derivs.d1),
        dpi2: times(&derivs.d2),
        dpi3: times(&derivs.d3),
        n_used: derivs.d2.iter().filter(|&&w| w > S::zero()).count(),
    })
}
