//! Brute-force oracle: full Newton on the stacked (β, φ) with the penalized Hessian.
//!
//! Only meant for small problems and for checking the iterative backend.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::family::Family;
use crate::linalg::Matrix;
use crate::panel::{Structure, ValidatedPanel};
use crate::scalar::Scalar;
use crate::solver::{
    finish, gradient_at, index_stacked, objective_value, separation_mask, weight_scale, Backend, FitOptions, FitResult,
};
use crate::spec::{Design, FeSpec};

pub const ORACLE_MAX_OBS: usize = 20_000;
pub const ORACLE_MAX_LEVELS: usize = 2_000;

/// Dense-oracle fit, routed like [`crate::fit`] (undirected data is doubled first).
pub fn dense_oracle_fit<S: Scalar>(
    panel: &ValidatedPanel<S>,
    spec: &FeSpec,
    family: Family,
    options: &FitOptions,
) -> Result<FitResult<S>> {
    let opts = FitOptions { backend: Backend::DenseOracle, ..options.clone() };
    crate::solver::fit(panel, spec, family, &opts)
}

/// Dense-oracle fit of the panel exactly as given. For undirected panels this fits the
/// symmetric specification on the unique pairs (α_it + α_jt style twin blocks), which is
/// the reference the doubled route is checked against.
pub fn dense_oracle_fit_direct<S: Scalar>(
    panel: &ValidatedPanel<S>,
    family: Family,
    options: &FitOptions,
) -> Result<FitResult<S>> {
    options.validate()?;
    family.check_support(panel.y())?;
    dense_fit_on(Arc::new(panel.clone()), family, options, panel.structure(), panel.spec().clone())
}

/// Observation → stacked φ columns (one per block, two for twin blocks).
fn fe_columns(design: &Design, o: usize) -> Vec<usize> {
    let mut cols = Vec::with_capacity(design.blocks().len() * 2);
    for (b, &off) in design.blocks().iter().zip(design.offsets()) {
        cols.push(off + b.level(o));
        if let Some(l) = b.twin_level(o) {
            cols.push(off + l);
        }
    }
    cols
}

/// λ𝒞𝒞' as a dense L × L matrix.
fn penalty_matrix<S: Scalar>(design: &Design, lambda: S) -> Matrix<S> {
    let l = design.total_levels();
    let mut m = Matrix::zeros(l, l);
    for col in design.constraints().columns() {
        for &(r, a) in col {
            for &(c, b) in col {
                m[(r, c)] += lambda * S::lit(a * b);
            }
        }
    }
    m
}

pub(crate) fn dense_fit_on<S: Scalar>(
    panel: Arc<ValidatedPanel<S>>,
    family: Family,
    options: &FitOptions,
    source_structure: Structure,
    spec: FeSpec,
) -> Result<FitResult<S>> {
    let design = panel.design();
    let (n, k, l) = (panel.n_obs(), panel.k(), design.total_levels());
    if n > ORACLE_MAX_OBS || l > ORACLE_MAX_LEVELS {
        return Err(Error::OracleTooLarge { n, l });
    }
    let active = separation_mask(family, panel.y(), design, options.separation)?;
    let p = k + l;
    let lambda = S::lit(options.penalty_weight);
    let w = weight_scale(&panel);
    let pen = penalty_matrix(design, lambda);
    let cols: Vec<Vec<usize>> = (0..n).map(|o| fe_columns(design, o)).collect();
    let y = panel.y();

    let mut theta = vec![S::zero(); p];
    let obj_at = |th: &[S]| {
        let pi = index_stacked(&panel, &th[..k], &th[k..]);
        objective_value(family, y, &pi, &active, design, &th[k..], lambda, w)
    };
    let mut obj = obj_at(&theta);
    let mut path = vec![obj];
    let tol = S::lit(options.tol_score);
    let mut iter = 0;
    loop {
        let grad = gradient_at(family, &panel, &active, &theta[..k], &theta[k..], lambda);
        let gnorm = grad.iter().fold(S::zero(), |m, v| m.max(v.abs()));
        if gnorm < tol {
            break;
        }
        if iter >= options.max_outer {
            return Err(Error::Convergence {
                stage: "dense Newton",
                iterations: iter,
                score: gnorm.as_f64(),
                beta: theta[..k].iter().map(|v| v.as_f64()).collect(),
            });
        }
        iter += 1;
        let pi = index_stacked(&panel, &theta[..k], &theta[k..]);
        let mut h = Matrix::<S>::zeros(p, p);
        for o in 0..n {
            if !active[o] {
                continue;
            }
            let d2 = family.score_weight(pi[o], y[o]).1;
            let mut z: Vec<(usize, S)> = (0..k).map(|a| (a, panel.x()[a][o])).collect();
            z.extend(cols[o].iter().map(|&c| (k + c, S::one())));
            for &(a, va) in &z {
                for &(b, vb) in &z {
                    h[(a, b)] += d2 * va * vb;
                }
            }
        }
        for r in 0..l {
            for c in 0..l {
                h[(k + r, k + c)] += pen[(r, c)];
            }
        }
        for v in 0..p {
            for u in 0..p {
                h[(v, u)] = h[(v, u)] / w;
            }
        }
        let chol = match h.cholesky(S::lit(1e-11)) {
            Some(c) => c,
            None if options.ridge_on_singular > 0.0 => {
                let mut hr = h.clone();
                for a in 0..k {
                    hr[(a, a)] += S::lit(options.ridge_on_singular);
                }
                hr.cholesky(S::lit(1e-14)).ok_or(Error::SingularHessian)?
            }
            None => return Err(Error::SingularHessian),
        };
        let step: Vec<S> = chol.solve(&grad).into_iter().map(|v| -v).collect();
        let mut scale = S::one();
        let mut accepted = false;
        for _ in 0..=40 {
            let trial: Vec<S> = theta.iter().zip(&step).map(|(&t, &d)| t + scale * d).collect();
            let o_try = obj_at(&trial);
            if o_try <= obj + S::lit(1e-13) * (S::one() + obj.abs()) {
                theta = trial;
                obj = o_try;
                accepted = true;
                break;
            }
            scale = scale * S::lit(0.5);
        }
        if !accepted {
            return Err(Error::Convergence {
                stage: "dense line search",
                iterations: iter,
                score: gnorm.as_f64(),
                beta: theta[..k].iter().map(|v| v.as_f64()).collect(),
            });
        }
        path.push(obj);
    }
    let beta = theta[..k].to_vec();
    let phi = theta[k..].to_vec();
    finish(panel, family, Backend::DenseOracle, active, beta, phi, iter, 0, path, source_structure, spec)
}

/// Weighted least-squares fit of `x` on the block span by a dense penalized normal-equation
/// solve. Works for twin designs too.
pub fn dense_wls_fitted<S: Scalar>(design: &Design, weights: &[S], x: &[S]) -> Result<Vec<S>> {
    let n = x.len();
    let l = design.total_levels();
    if n > ORACLE_MAX_OBS || l > ORACLE_MAX_LEVELS {
        return Err(Error::OracleTooLarge { n, l });
    }
    let mut a = penalty_matrix(design, S::one());
    let mut rhs = vec![S::zero(); l];
    for o in 0..n {
        let cols = fe_columns(design, o);
        for &r in &cols {
            rhs[r] += weights[o] * x[o];
            for &c in &cols {
                a[(r, c)] += weights[o];
            }
        }
    }
    let theta = a.solve_psd_consistent(&rhs, S::lit(1e-12));
    Ok(design.fitted(&theta, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{validate, PanelDataset};
    use crate::spec::SpecId;

    #[test]
    fn guard_rejects_large_problems() {
        let mut ds = PanelDataset::new(Structure::Bipartite, 50, 50, 10, 1);
        for i in 0..50 {
            for j in 0..50 {
                for t in 0..10 {
                    ds.push(i, j, t, (i + j + t) as f64, vec![(i * j + t) as f64]);
                }
            }
        }
        let spec = FeSpec::new(SpecId::S3b, Structure::Bipartite).unwrap();
        let p = validate(&ds, &spec).unwrap();
        let err = dense_oracle_fit(&p, &spec, Family::Linear, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::OracleTooLarge { .. }));
    }
}
