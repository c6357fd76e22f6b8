//! Joint estimation of (β, φ): profile Newton over β with grouped sweeps for φ.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{DerivativeArrays, Family};
use crate::linalg::Matrix;
use crate::panel::{double_undirected, validate, Structure, ValidatedPanel};
use crate::scalar::Scalar;
use crate::spec::{ConstraintSystem, Design, FeSpec};
use crate::sweep;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Iterative,
    #[serde(rename = "dense")]
    DenseOracle,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Iterative => "iterative",
            Backend::DenseOracle => "dense",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iterative" => Ok(Backend::Iterative),
            "dense" | "dense-oracle" | "denseoracle" => Ok(Backend::DenseOracle),
            _ => Err(Error::InvalidConfig(format!("unknown backend '{s}'"))),
        }
    }
}

/// What to do with fixed-effect levels whose outcomes leave the estimate at infinity
/// (binary levels with constant outcomes, Poisson levels with only zeros).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeparationPolicy {
    #[default]
    Error,
    /// Drop the observations of separated levels, repeating until none remain. The usual
    /// practice for fixed-effects logit; the dropped observations carry no information on β.
    DropLevels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub backend: Backend,
    pub tol_score: f64,
    pub tol_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub ridge_on_singular: f64,
    pub separation: SeparationPolicy,
    /// Weight on φ'𝒞𝒞'φ/2 in the dense oracle objective.
    pub penalty_weight: f64,
    /// Newton sweeps at β = 0 before the first outer step, binary families only.
    pub warmup_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Iterative,
            tol_score: 1e-9,
            tol_inner: 1e-11,
            max_outer: 100,
            max_inner: 10_000,
            ridge_on_singular: 0.0,
            separation: SeparationPolicy::Error,
            penalty_weight: 1.0,
            warmup_sweeps: 4,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.tol_score) || !pos(self.tol_inner) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidConfig("iteration limits must be positive".into()));
        }
        if !(self.ridge_on_singular >= 0.0) || !pos(self.penalty_weight) {
            return Err(Error::InvalidConfig("ridge must be >= 0 and penalty weight > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<S> {
    pub beta: Vec<S>,
    /// Normalized effects, one vector per block of `panel.design()`.
    pub phi: Vec<Vec<S>>,
    pub objective: S,
    /// Max-norm of the full gradient of the objective at the returned point.
    pub score_inf_norm: S,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_sweeps: usize,
    /// Objective after each accepted outer step (first entry: starting point).
    pub objective_path: Vec<S>,
    /// Linear index at the optimum.
    pub pi: Vec<S>,
    /// Criterion derivatives at the optimum, zero on dropped observations.
    pub derivatives: DerivativeArrays<S>,
    /// Observations kept after separation handling.
    pub active: Vec<bool>,
    pub family: Family,
    pub backend: Backend,
    /// The panel the model was fitted on (the doubled panel for undirected input).
    pub panel: Arc<ValidatedPanel<S>>,
    /// Structure of the data as supplied.
    pub source_structure: Structure,
    /// Specification as requested (before any undirected doubling).
    pub spec: FeSpec,
}

impl<S: Scalar> FitResult<S> {
    pub fn design(&self) -> &Design {
        self.panel.design()
    }

    pub fn phi_stacked(&self) -> Vec<S> {
        self.phi.iter().flatten().copied().collect()
    }

    /// Max-norm of 𝒞'φ.
    pub fn constraint_residual(&self) -> S {
        self.design().constraints().residuals(&self.phi_stacked()).into_iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn dropped(&self) -> usize {
        self.active.iter().filter(|a| !**a).count()
    }

    /// Objective at an arbitrary stacked (β, φ), for derivative checks.
    pub fn objective_at(&self, beta: &[S], phi_stacked: &[S]) -> S {
        let (pi, w) = (index_stacked(&self.panel, beta, phi_stacked), weight_scale(&self.panel));
        objective_value(self.family, self.panel.y(), &pi, &self.active, self.design(), phi_stacked, S::one(), w)
    }

    /// Analytic gradient of the objective at the returned point, β first then stacked φ.
    pub fn gradient(&self) -> Vec<S> {
        self.gradient_at_point(&self.beta, &self.phi_stacked())
    }

    /// Analytic gradient of [`FitResult::objective_at`] at an arbitrary point.
    pub fn gradient_at_point(&self, beta: &[S], phi_stacked: &[S]) -> Vec<S> {
        gradient_at(self.family, &self.panel, &self.active, beta, phi_stacked, S::one())
    }
}

pub(crate) fn weight_scale<S: Scalar>(panel: &ValidatedPanel<S>) -> S {
    S::from_usize_lossy(panel.t())
}

pub(crate) fn linear_part<S: Scalar>(x: &[Vec<S>], beta: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n];
    for (col, &b) in x.iter().zip(beta) {
        for (v, &xv) in out.iter_mut().zip(col) {
            *v += xv * b;
        }
    }
    out
}

pub(crate) fn index_stacked<S: Scalar>(panel: &ValidatedPanel<S>, beta: &[S], phi: &[S]) -> Vec<S> {
    let n = panel.n_obs();
    let mut pi = linear_part(panel.x(), beta, n);
    for (v, f) in pi.iter_mut().zip(panel.design().fitted(phi, n)) {
        *v += f;
    }
    pi
}

pub(crate) fn stack<S: Scalar>(phi: &[Vec<S>]) -> Vec<S> {
    phi.iter().flatten().copied().collect()
}

pub(crate) fn unstack<S: Scalar>(design: &Design, stacked: &[S]) -> Vec<Vec<S>> {
    design.blocks().iter().zip(design.offsets()).map(|(b, &off)| stacked[off..off + b.level_count].to_vec()).collect()
}

/// (Σψ + λ φ'𝒞𝒞'φ/2) / w over active observations.
pub(crate) fn objective_value<S: Scalar>(
    family: Family,
    y: &[S],
    pi: &[S],
    active: &[bool],
    design: &Design,
    phi: &[S],
    penalty: S,
    w: S,
) -> S {
    let mut acc = S::zero();
    for o in 0..pi.len() {
        if active[o] {
            acc += family.criterion(pi[o], y[o]);
        }
    }
    if penalty != S::zero() {
        let pen: S = design.constraints().residuals(phi).iter().map(|&v| v * v).sum();
        acc += penalty * pen * S::lit(0.5);
    }
    acc / w
}

/// 𝒞 v for a vector indexed by constraint.
pub(crate) fn constraint_apply<S: Scalar>(cs: &ConstraintSystem, v: &[S], len: usize) -> Vec<S> {
    let mut out = vec![S::zero(); len];
    for (col, &a) in cs.columns().iter().zip(v) {
        for &(r, c) in col {
            out[r] += S::lit(c) * a;
        }
    }
    out
}

pub(crate) fn gradient_at<S: Scalar>(
    family: Family,
    panel: &ValidatedPanel<S>,
    active: &[bool],
    beta: &[S],
    phi: &[S],
    penalty: S,
) -> Vec<S> {
    let design = panel.design();
    let w = weight_scale(panel);
    let pi = index_stacked(panel, beta, phi);
    let d1: Vec<S> =
        (0..pi.len()).map(|o| if active[o] { family.score_weight(pi[o], panel.y()[o]).0 } else { S::zero() }).collect();
    let mut g: Vec<S> = panel.x().iter().map(|col| col.iter().zip(&d1).map(|(&a, &b)| a * b).sum::<S>() / w).collect();
    let mut gphi = vec![S::zero(); design.total_levels()];
    for (b, &off) in design.blocks().iter().zip(design.offsets()) {
        for (o, &v) in d1.iter().enumerate() {
            gphi[off + b.level(o)] += v;
            if let Some(l) = b.twin_level(o) {
                gphi[off + l] += v;
            }
        }
    }
    let cs = design.constraints();
    let cphi = cs.residuals(phi);
    let pen = constraint_apply(cs, &cphi, gphi.len());
    g.extend(gphi.iter().zip(&pen).map(|(&a, &p)| (a + penalty * p) / w));
    g
}

/// Projects φ onto {𝒞'φ = 0} along the invariance directions (columns of 𝒞), so the fitted
/// index is unchanged.
pub fn normalize_phi<S: Scalar>(phi: &[S], constraints: &ConstraintSystem) -> Vec<S> {
    let m = constraints.count();
    if m == 0 {
        return phi.to_vec();
    }
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); phi.len()];
    for (a, col) in constraints.columns().iter().enumerate() {
        for &(r, c) in col {
            by_row[r].push((a, c));
        }
    }
    let mut gram = Matrix::<S>::zeros(m, m);
    for entries in &by_row {
        for &(a, ca) in entries {
            for &(b, cb) in entries {
                gram[(a, b)] += S::lit(ca * cb);
            }
        }
    }
    let mut out = phi.to_vec();
    // two passes: the second removes rounding left by the first
    for _ in 0..2 {
        let rhs = constraints.residuals(&out);
        let z = gram.solve_psd_consistent(&rhs, S::lit(1e-10));
        for (v, s) in out.iter_mut().zip(constraint_apply(constraints, &z, phi.len())) {
            *v -= s;
        }
    }
    out
}

/// Marks the observations kept after separation handling.
pub(crate) fn separation_mask<S: Scalar>(
    family: Family,
    y: &[S],
    design: &Design,
    policy: SeparationPolicy,
) -> Result<Vec<bool>> {
    let n = y.len();
    let mut active = vec![true; n];
    if family == Family::Linear {
        return Ok(active);
    }
    let positive = |v: S| v > S::zero();
    loop {
        let mut changed = false;
        for b in design.blocks() {
            // per level: (active count, count of positive outcomes)
            let mut cnt = vec![(0usize, 0usize); b.level_count];
            let mut visit = |o: usize, l: usize| {
                cnt[l].0 += 1;
                if positive(y[o]) {
                    cnt[l].1 += 1;
                }
            };
            for o in 0..n {
                if active[o] {
                    visit(o, b.level(o));
                    if let Some(l) = b.twin_level(o) {
                        visit(o, l);
                    }
                }
            }
            let separated =
                |&(c, p): &(usize, usize)| c > 0 && if family.is_binary() { p == 0 || p == c } else { p == 0 };
            if let Some(level) = cnt.iter().position(separated) {
                if policy == SeparationPolicy::Error {
                    return Err(Error::Separation { block: b.key.to_string(), level: level + 1 });
                }
                for o in 0..n {
                    let hit = separated(&cnt[b.level(o)]) || b.twin_level(o).is_some_and(|l| separated(&cnt[l]));
                    if active[o] && hit {
                        active[o] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    if !active.iter().any(|&a| a) {
        return Err(Error::Separation { block: "all".into(), level: 0 });
    }
    Ok(active)
}

/// Routes undirected data through the doubled directed panel.
pub(crate) fn working_panel<S: Scalar>(panel: &ValidatedPanel<S>, spec: &FeSpec) -> Result<ValidatedPanel<S>> {
    let panel = if spec != panel.spec() { panel.with_spec(spec)? } else { panel.clone() };
    if panel.structure() == Structure::Undirected {
        let doubled = double_undirected(&panel.to_dataset())?;
        validate(&doubled, &spec.doubled()?)
    } else {
        Ok(panel)
    }
}

/// Estimates (β, φ) for `family` with the fixed effects of `spec`.
pub fn fit<S: Scalar>(
    panel: &ValidatedPanel<S>,
    spec: &FeSpec,
    family: Family,
    options: &FitOptions,
) -> Result<FitResult<S>> {
    options.validate()?;
    family.check_support(panel.y())?;
    let source_structure = panel.structure();
    let work = Arc::new(working_panel(panel, spec)?);
    match options.backend {
        Backend::Iterative => fit_iterative(work, family, options, source_structure, spec.clone()),
        Backend::DenseOracle => crate::dense::dense_fit_on(work, family, options, source_structure, spec.clone()),
    }
}

/// Minimises the objective over φ at fixed β from an optional warm start; the result is
/// normalized. Undirected panels are doubled first, so the effects refer to the doubled design.
pub fn inner_fe_solve<S: Scalar>(
    panel: &ValidatedPanel<S>,
    spec: &FeSpec,
    family: Family,
    beta: &[S],
    warm_phi: Option<&[Vec<S>]>,
    options: &FitOptions,
) -> Result<Vec<Vec<S>>> {
    options.validate()?;
    family.check_support(panel.y())?;
    let work = working_panel(panel, spec)?;
    if beta.len() != work.k() {
        return Err(Error::Dimension(format!("beta has {} entries, panel has K={}", beta.len(), work.k())));
    }
    let design = work.design();
    let active = separation_mask(family, work.y(), design, options.separation)?;
    let phi = match warm_phi {
        Some(w) => {
            if w.len() != design.blocks().len() || w.iter().zip(design.blocks()).any(|(v, b)| v.len() != b.level_count)
            {
                return Err(Error::Dimension("warm start does not match the design".into()));
            }
            w.to_vec()
        }
        None => design.blocks().iter().map(|b| vec![S::zero(); b.level_count]).collect(),
    };
    let xb = linear_part(work.x(), beta, work.n_obs());
    let out = sweep::inner_solve(
        family,
        work.y(),
        &xb,
        &active,
        design,
        phi,
        weight_scale(&work),
        S::lit(options.tol_inner),
        options.max_inner,
    )?;
    Ok(unstack(design, &normalize_phi(&stack(&out.phi), design.constraints())))
}

/// Accuracy of the weighted projections used for the outer Newton direction.
const DIRECTION_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;

struct Inner<S> {
    phi: Vec<Vec<S>>,
    pi: Vec<S>,
    objective: S,
}

fn fit_iterative<S: Scalar>(
    panel: Arc<ValidatedPanel<S>>,
    family: Family,
    options: &FitOptions,
    source_structure: Structure,
    spec: FeSpec,
) -> Result<FitResult<S>> {
    let design = panel.design();
    let (n, k) = (panel.n_obs(), panel.k());
    let y = panel.y();
    let x = panel.x();
    let w = weight_scale(&panel);
    let tol_inner = S::lit(options.tol_inner);
    let active = separation_mask(family, y, design, options.separation)?;

    let mut inner_sweeps = 0usize;
    let solve = |beta: &[S], phi: Vec<Vec<S>>, sweeps: &mut usize| -> Result<Inner<S>> {
        let xb = linear_part(x, beta, n);
        let out = sweep::inner_solve(family, y, &xb, &active, design, phi, w, tol_inner, options.max_inner)?;
        *sweeps += out.sweeps;
        let objective = objective_value(family, y, &out.pi, &active, design, &[], S::zero(), w);
        Ok(Inner { phi: out.phi, pi: out.pi, objective })
    };

    let mut beta = vec![S::zero(); k];
    let mut phi: Vec<Vec<S>> = design.blocks().iter().map(|b| vec![S::zero(); b.level_count]).collect();
    if family.is_binary() && options.warmup_sweeps > 0 {
        sweep::warm_up(family, y, &vec![S::zero(); n], &active, design, &mut phi, options.warmup_sweeps)?;
        inner_sweeps += options.warmup_sweeps;
    }
    let mut cur = solve(&beta, phi, &mut inner_sweeps)?;
    let mut path = vec![cur.objective];
    let mut outer = 0usize;
    let tol_score = S::lit(options.tol_score);
    let slack = |v: S| S::lit(1e-13) * (S::one() + v.abs());

    let converged = loop {
        let (d1, d2): (Vec<S>, Vec<S>) = (0..n)
            .map(|o| if active[o] { family.score_weight(cur.pi[o], y[o]) } else { (S::zero(), S::zero()) })
            .unzip();
        let grad: Vec<S> = x.iter().map(|col| col.iter().zip(&d1).map(|(&a, &b)| a * b).sum::<S>() / w).collect();
        let gnorm = grad.iter().fold(S::zero(), |m, v| m.max(v.abs()));
        if gnorm < tol_score {
            break true;
        }
        if outer >= options.max_outer {
            break false;
        }
        outer += 1;

        // profile Hessian from partialled-out regressors
        let mut tilde = Vec::with_capacity(k);
        let mut theta = Vec::with_capacity(k);
        for col in x {
            let p = sweep::wls_sweeps(design, &d2, col, w, S::lit(DIRECTION_TOL), options.max_inner)?;
            tilde.push(col.iter().zip(&p.fitted).map(|(&a, &b)| a - b).collect::<Vec<S>>());
            theta.push(p.coef);
        }
        let mut hess = Matrix::<S>::zeros(k, k);
        let mut raw = vec![S::zero(); k];
        for a in 0..k {
            raw[a] = (0..n).map(|o| d2[o] * x[a][o] * x[a][o]).sum::<S>() / w;
            for b in 0..k {
                hess[(a, b)] = (0..n).map(|o| d2[o] * tilde[a][o] * x[b][o]).sum::<S>() / w;
            }
        }
        let hess = hess.symmetrized();
        let step = newton_direction(&hess, &raw, &grad, S::lit(options.ridge_on_singular))?;

        let mut scale = S::one();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let b_try: Vec<S> = beta.iter().zip(&step).map(|(&b, &d)| b + scale * d).collect();
            // warm start: φ moves by −ϑΔ to first order
            let phi_try: Vec<Vec<S>> = cur
                .phi
                .iter()
                .enumerate()
                .map(|(m, ph)| {
                    ph.iter()
                        .enumerate()
                        .map(|(l, &v)| v - scale * (0..k).map(|a| theta[a][m][l] * step[a]).sum::<S>())
                        .collect()
                })
                .collect();
            if let Ok(next) = solve(&b_try, phi_try, &mut inner_sweeps) {
                if next.objective <= cur.objective + slack(cur.objective) {
                    accepted = Some((b_try, next));
                    break;
                }
            }
            scale = scale * S::lit(0.5);
        }
        match accepted {
            Some((b, next)) => {
                beta = b;
                cur = next;
                path.push(cur.objective);
            }
            None => {
                return Err(Error::Convergence {
                    stage: "outer line search",
                    iterations: outer,
                    score: gnorm.as_f64(),
                    beta: beta.iter().map(|v| v.as_f64()).collect(),
                })
            }
        }
    };
    if !converged {
        let gnorm = gradient_at(family, &panel, &active, &beta, &stack(&cur.phi), S::zero())
            .into_iter()
            .fold(S::zero(), |m, v| m.max(v.abs()));
        return Err(Error::Convergence {
            stage: "outer Newton",
            iterations: outer,
            score: gnorm.as_f64(),
            beta: beta.iter().map(|v| v.as_f64()).collect(),
        });
    }
    let phi = stack(&cur.phi);
    finish(panel, family, Backend::Iterative, active, beta, phi, outer, inner_sweeps, path, source_structure, spec)
}

/// Newton step −H⁻¹g with singularity judged against the unprojected curvature `raw`.
fn newton_direction<S: Scalar>(hess: &Matrix<S>, raw: &[S], grad: &[S], ridge: S) -> Result<Vec<S>> {
    let k = grad.len();
    if raw.iter().any(|&r| !(r > S::zero())) && ridge == S::zero() {
        return Err(Error::SingularHessian);
    }
    let sc: Vec<S> = raw.iter().map(|&r| if r > S::zero() { r.sqrt() } else { S::one() }).collect();
    let mut h = Matrix::<S>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            h[(a, b)] = hess[(a, b)] / (sc[a] * sc[b]);
        }
    }
    let chol = match h.cholesky_with_floor(S::lit(1e-10)) {
        Some(c) => c,
        None if ridge > S::zero() => {
            let mut hr = hess.clone();
            hr.add_diagonal(ridge);
            let c = hr.cholesky(S::lit(1e-14)).ok_or(Error::SingularHessian)?;
            return Ok(c.solve(grad).into_iter().map(|v| -v).collect());
        }
        None => return Err(Error::SingularHessian),
    };
    let gs: Vec<S> = grad.iter().zip(&sc).map(|(&g, &s)| g / s).collect();
    Ok(chol.solve(&gs).into_iter().zip(&sc).map(|(v, &s)| -v / s).collect())
}

/// Normalizes φ and assembles the result with derivatives and diagnostics at the optimum.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish<S: Scalar>(
    panel: Arc<ValidatedPanel<S>>,
    family: Family,
    backend: Backend,
    active: Vec<bool>,
    beta: Vec<S>,
    phi_stacked: Vec<S>,
    outer_iterations: usize,
    inner_sweeps: usize,
    objective_path: Vec<S>,
    source_structure: Structure,
    spec: FeSpec,
) -> Result<FitResult<S>> {
    let design = panel.design();
    let phi_n = normalize_phi(&phi_stacked, design.constraints());
    let w = weight_scale(&panel);
    let pi = index_stacked(&panel, &beta, &phi_n);
    let mut derivatives = crate::family::eval_derivatives(family, &pi, panel.y())?;
    derivatives.apply_mask(&active);
    let objective = objective_value(family, panel.y(), &pi, &active, design, &phi_n, S::one(), w);
    let score_inf_norm = gradient_at(family, &panel, &active, &beta, &phi_n, S::one())
        .into_iter()
        .fold(S::zero(), |m, v| m.max(v.abs()));
    Ok(FitResult {
        beta,
        phi: unstack(design, &phi_n),
        objective,
        score_inf_norm,
        converged: true,
        outer_iterations,
        inner_sweeps,
        objective_path,
        pi,
        derivatives,
        active,
        family,
        backend,
        panel,
        source_structure,
        spec,
    })
}
