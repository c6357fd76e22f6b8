//! Plug-in bias components, sandwich variance and the debiased estimator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::panel::Structure;
use crate::projection::{project_fit, residual_arrays, WeightedResidualArrays};
use crate::scalar::Scalar;
use crate::solver::FitResult;
use crate::spec::{BlockKey, FeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BandwidthRule {
    #[default]
    Auto,
    Fixed(usize),
}

impl Serialize for BandwidthRule {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BandwidthRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl BandwidthRule {
    /// Auto resolves to max(1, round(T^{1/10})).
    pub fn resolve(self, t: usize) -> usize {
        match self {
            BandwidthRule::Fixed(h) => h,
            BandwidthRule::Auto => ((t as f64).powf(0.1).round() as usize).max(1),
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::Auto => f.write_str("auto"),
            BandwidthRule::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BandwidthRule::Auto);
        }
        s.parse::<usize>()
            .map(BandwidthRule::Fixed)
            .map_err(|_| Error::InvalidConfig(format!("bandwidth must be 'auto' or a non-negative integer, got '{s}'")))
    }
}

/// Which bias components a specification triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComponentSet {
    pub alpha: bool,
    pub gamma: bool,
    pub rho: bool,
}

impl ComponentSet {
    pub fn is_empty(&self) -> bool {
        !(self.alpha || self.gamma || self.rho)
    }
}

/// Interacted blocks map to components (it → α, jt → γ, ij → ρ); one-way blocks to none.
/// For undirected data the γ component is the α component.
pub fn select_components(spec: &FeSpec) -> ComponentSet {
    let mut set = ComponentSet::default();
    for b in spec.blocks() {
        match b.key {
            BlockKey::It => set.alpha = true,
            BlockKey::Jt => set.gamma = true,
            BlockKey::Ij => set.rho = true,
            _ => {}
        }
    }
    if spec.structure() == Structure::Undirected && set.gamma {
        set.alpha = true;
        set.gamma = false;
    }
    set
}

/// Every term of every bias component, signed and weighted so that a component is the sum
/// of its terms. Each term is a K-vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTerms<S> {
    /// [cross-moment term, d³ curvature term]
    pub alpha: [Vec<S>; 2],
    pub gamma: [Vec<S>; 2],
    /// The seven lag-truncated pair terms. The second one, Σ_t (Σ_{t'≥t} d²) (Σ_{t''=t}^{t+h} 𝔇²) d¹,
    /// is the truncated counterpart of a population term whose untruncated sample version
    /// vanishes identically; together with the third it equals the first without its factor 2.
    pub rho: [Vec<S>; 7],
}

fn sum_terms<S: Scalar>(terms: &[Vec<S>]) -> Vec<S> {
    let k = terms[0].len();
    (0..k).map(|a| terms.iter().map(|t| t[a]).sum()).collect()
}

impl<S: Scalar> BiasTerms<S> {
    pub fn alpha_total(&self) -> Vec<S> {
        sum_terms(&self.alpha)
    }
    pub fn gamma_total(&self) -> Vec<S> {
        sum_terms(&self.gamma)
    }
    pub fn rho_total(&self) -> Vec<S> {
        sum_terms(&self.rho)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasComponents<S> {
    pub alpha: Option<Vec<S>>,
    pub gamma: Option<Vec<S>>,
    pub rho: Option<Vec<S>>,
}

/// Dimensions entering the correction weights, from the data as supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub structure: Structure,
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
}

/// Grouped two-term sums over groups of observations (the α and γ components).
fn group_terms<S: Scalar>(
    groups: &[usize],
    group_count: usize,
    arrays: &WeightedResidualArrays<S>,
    d1: &[S],
    d2: &[S],
    active: &[bool],
    label: impl Fn(usize) -> String,
) -> Result<[Vec<S>; 2]> {
    let k = arrays.dpi2.len();
    let mut s2 = vec![S::zero(); group_count];
    let mut q = vec![S::zero(); group_count];
    let mut present = vec![false; group_count];
    let mut cross = vec![vec![S::zero(); group_count]; k];
    let mut curv = vec![vec![S::zero(); group_count]; k];
    for (o, &g) in groups.iter().enumerate() {
        if !active[o] {
            continue;
        }
        present[g] = true;
        s2[g] += d2[o];
        q[g] += d1[o] * d1[o];
        for a in 0..k {
            cross[a][g] += arrays.dpi2[a][o] * d1[o];
            curv[a][g] += arrays.dpi3[a][o];
        }
    }
    let mut t1 = vec![S::zero(); k];
    let mut t2 = vec![S::zero(); k];
    let mut count = 0usize;
    for g in 0..group_count {
        if !present[g] {
            continue;
        }
        if !(s2[g] > S::zero()) {
            return Err(Error::DegenerateGroup { group: label(g) });
        }
        count += 1;
        for a in 0..k {
            t1[a] -= cross[a][g] / s2[g];
            t2[a] += S::lit(0.5) * curv[a][g] * q[g] / (s2[g] * s2[g]);
        }
    }
    let c = S::from_usize_lossy(count.max(1));
    Ok([t1.into_iter().map(|v| v / c).collect(), t2.into_iter().map(|v| v / c).collect()])
}

/// Σ_t c[t] · (Σ_{t'<t} b[t']) · (Σ_{t''=t}^{(t+h)∧T} a[t'']), in O(T) by prefix sums.
fn lag_triple<S: Scalar>(c: &[S], b: &[S], a: &[S], h: usize) -> S {
    lag_triple_split(c, b, a, h).0
}

/// (Σ_t c[t]·B_<(t)·A_h(t), Σ_t c[t]·B_≥(t)·A_h(t)) with B_< / B_≥ the sums of `b` before / from t
/// and A_h(t) = Σ_{t''=t}^{(t+h)∧T} a[t''].
fn lag_triple_split<S: Scalar>(c: &[S], b: &[S], a: &[S], h: usize) -> (S, S) {
    let t = c.len();
    let mut cum = vec![S::zero(); t + 1];
    for s in 0..t {
        cum[s + 1] = cum[s] + a[s];
    }
    let total_b: S = b.iter().copied().sum();
    let mut prefix_b = S::zero();
    let (mut before, mut after) = (S::zero(), S::zero());
    for s in 0..t {
        let hi = (s + h).min(t - 1);
        let ca = c[s] * (cum[hi + 1] - cum[s]);
        before += ca * prefix_b;
        after += ca * (total_b - prefix_b);
        prefix_b += b[s];
    }
    (before, after)
}

/// Σ_t c[t] · Σ_{t'=t}^{(t+h)∧T} a[t'].
fn lag_double<S: Scalar>(c: &[S], a: &[S], h: usize) -> S {
    let t = c.len();
    let mut cum = vec![S::zero(); t + 1];
    for s in 0..t {
        cum[s + 1] = cum[s] + a[s];
    }
    (0..t).map(|s| c[s] * (cum[(s + h).min(t - 1) + 1] - cum[s])).sum()
}

fn rho_terms<S: Scalar>(fit: &FitResult<S>, arrays: &WeightedResidualArrays<S>, h: usize) -> Result<[Vec<S>; 7]> {
    let ps = fit.panel.pair_set();
    let big_t = ps.t;
    let k = arrays.dpi2.len();
    let der = &fit.derivatives;
    let mut terms: [Vec<S>; 7] = std::array::from_fn(|_| vec![S::zero(); k]);
    let mut count = 0usize;
    for (p, &(i, j)) in ps.pairs().iter().enumerate() {
        let r = p * big_t..(p + 1) * big_t;
        if !fit.active[r.clone()].iter().any(|&a| a) {
            continue;
        }
        let (d1, d2, d3) = (&der.d1[r.clone()], &der.d2[r.clone()], &der.d3[r.clone()]);
        let s2: S = d2.iter().copied().sum();
        if !(s2 > S::zero()) {
            return Err(Error::DegenerateGroup { group: format!("pair ({}, {})", i + 1, j + 1) });
        }
        count += 1;
        let s2sq = s2 * s2;
        let s2cu = s2sq * s2;
        let q: S = d1.iter().map(|&v| v * v).sum();
        let sum_d3: S = d3.iter().copied().sum();
        let d1d1d2 = lag_triple(d1, d1, d2, h);
        for a in 0..k {
            let dd2 = &arrays.dpi2[a][r.clone()];
            let dd3 = &arrays.dpi3[a][r.clone()];
            let sum_dd3: S = dd3.iter().copied().sum();
            let (past, future) = lag_triple_split(d1, d2, dd2, h);
            terms[0][a] += S::lit(-2.0) * lag_double(d1, dd2, h) / s2;
            terms[1][a] += future / s2sq;
            terms[2][a] += past / s2sq;
            terms[3][a] += S::lit(0.5) * sum_dd3 * q / s2sq;
            terms[4][a] += lag_triple(d1, d1, dd3, h) / s2sq;
            terms[5][a] += S::lit(-2.0) * sum_dd3 * d1d1d2 / s2cu;
            terms[6][a] -= sum_d3 * lag_triple(d1, d1, dd2, h) / s2cu;
        }
    }
    let c = S::from_usize_lossy(count.max(1));
    for t in terms.iter_mut() {
        t.iter_mut().for_each(|v| *v /= c);
    }
    Ok(terms)
}

/// Evaluates every bias term on the fitted (for undirected data: doubled) panel. For
/// undirected data the α terms are the sums over all pairs containing the node, which is the
/// α and γ terms of the doubled panel added together.
pub fn bias_terms<S: Scalar>(fit: &FitResult<S>, arrays: &WeightedResidualArrays<S>, h: usize) -> Result<BiasTerms<S>> {
    let ps = fit.panel.pair_set();
    let big_t = ps.t;
    let n = ps.n_obs();
    let k = fit.panel.k();
    if arrays.dpi2.len() != k || arrays.dpi2.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("residual arrays do not match the fitted panel".into()));
    }
    let mut g_alpha = Vec::with_capacity(n);
    let mut g_gamma = Vec::with_capacity(n);
    for &(i, j) in ps.pairs() {
        for t in 0..big_t {
            g_alpha.push(i * big_t + t);
            g_gamma.push(j * big_t + t);
        }
    }
    let der = &fit.derivatives;
    let label = |g: usize| format!("({}, t={})", g / big_t + 1, g % big_t + 1);
    let mut alpha = group_terms(&g_alpha, ps.n1 * big_t, arrays, &der.d1, &der.d2, &fit.active, |g| {
        format!("i-t group {}", label(g))
    })?;
    let mut gamma = group_terms(&g_gamma, ps.n2 * big_t, arrays, &der.d1, &der.d2, &fit.active, |g| {
        format!("j-t group {}", label(g))
    })?;
    if fit.source_structure == Structure::Undirected {
        for (a, g) in alpha.iter_mut().zip(gamma.iter_mut()) {
            for (u, v) in a.iter_mut().zip(g.iter_mut()) {
                *u += *v;
                *v = S::zero();
            }
        }
    }
    let rho = rho_terms(fit, arrays, h)?;
    Ok(BiasTerms { alpha, gamma, rho })
}

/// The components the fitted specification triggers.
pub fn compute_bias_components<S: Scalar>(
    fit: &FitResult<S>,
    arrays: &WeightedResidualArrays<S>,
    h: usize,
) -> Result<BiasComponents<S>> {
    let set = select_components(&fit.spec);
    if set.is_empty() {
        return Ok(BiasComponents::default());
    }
    let terms = bias_terms(fit, arrays, h)?;
    Ok(BiasComponents {
        alpha: set.alpha.then(|| terms.alpha_total()),
        gamma: set.gamma.then(|| terms.gamma_total()),
        rho: set.rho.then(|| terms.rho_total()),
    })
}

/// Ŵ = (1/n) Σ (D̂_π²) x', symmetrized. `n` counts the observations taking part.
pub fn compute_w_hat<S: Scalar>(arrays: &WeightedResidualArrays<S>, x: &[Vec<S>]) -> Result<Matrix<S>> {
    let k = x.len();
    let n = S::from_usize_lossy(arrays.n_used.max(1));
    let mut w = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            w[(a, b)] = arrays.dpi2[a].iter().zip(&x[b]).map(|(&d, &v)| d * v).sum::<S>() / n;
        }
    }
    let w = w.symmetrized();
    if w.cholesky(S::lit(1e-12)).is_none() {
        return Err(Error::SingularW);
    }
    Ok(w)
}

/// V̂ = (1/n) Σ (D̂_π¹)(D̂_π¹)'.
pub fn compute_v_hat<S: Scalar>(arrays: &WeightedResidualArrays<S>) -> Matrix<S> {
    let k = arrays.dpi1.len();
    let n = S::from_usize_lossy(arrays.n_used.max(1));
    let mut v = Matrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let s = arrays.dpi1[a].iter().zip(&arrays.dpi1[b]).map(|(&p, &q)| p * q).sum::<S>() / n;
            v[(a, b)] = s;
            v[(b, a)] = s;
        }
    }
    v
}

/// β̃ = β̂ + Ŵ⁻¹(N₂⁻¹B̂_α + N₁⁻¹B̂_γ + T⁻¹B̂_ρ); for undirected data N₁⁻¹B̂_α + T⁻¹B̂_ρ.
pub fn debias<S: Scalar>(
    beta_hat: &[S],
    components: &BiasComponents<S>,
    w_hat: &Matrix<S>,
    dims: Dims,
) -> Result<Vec<S>> {
    let k = beta_hat.len();
    let alpha_weight = match dims.structure {
        Structure::Undirected => dims.n1,
        _ => dims.n2,
    };
    let mut total = vec![S::zero(); k];
    let mut add = |c: &Option<Vec<S>>, m: usize| {
        if let Some(v) = c {
            for (t, &b) in total.iter_mut().zip(v) {
                *t += b / S::from_usize_lossy(m);
            }
        }
    };
    add(&components.alpha, alpha_weight);
    add(&components.gamma, dims.n1);
    add(&components.rho, dims.t);
    let chol = w_hat.cholesky(S::lit(1e-12)).ok_or(Error::SingularW)?;
    if total.iter().all(|&v| v == S::zero()) {
        return Ok(beta_hat.to_vec());
    }
    Ok(beta_hat.iter().zip(chol.solve(&total)).map(|(&b, c)| b + c).collect())
}

/// se_k = sqrt((Ŵ⁻¹V̂Ŵ⁻¹)_kk / n).
pub fn standard_errors<S: Scalar>(w_hat: &Matrix<S>, v_hat: &Matrix<S>, n: usize) -> Result<Vec<S>> {
    let inv = w_hat.cholesky(S::lit(1e-12)).ok_or(Error::SingularW)?.inverse();
    let sandwich = inv.matmul(v_hat).matmul(&inv);
    let n = S::from_usize_lossy(n);
    Ok(sandwich.diagonal().into_iter().map(|v| (v.max(S::zero()) / n).sqrt()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport<S> {
    pub b_alpha: Option<Vec<S>>,
    pub b_gamma: Option<Vec<S>>,
    pub b_rho: Option<Vec<S>>,
    pub w_hat: Matrix<S>,
    pub v_hat: Matrix<S>,
    pub h: usize,
    pub beta_hat: Vec<S>,
    pub beta_tilde: Vec<S>,
    pub se_uncorrected: Vec<S>,
    /// Same sandwich as `se_uncorrected` (Ŵ and V̂ are evaluated at β̂).
    pub se_debiased: Vec<S>,
    /// Sample size entering the standard errors (unique observations taking part).
    pub n_eff: usize,
}

/// Sample size of the data as supplied: undirected fits run on the doubled panel.
fn effective_n<S: Scalar>(fit: &FitResult<S>, n_used: usize) -> usize {
    if fit.source_structure == Structure::Undirected {
        n_used / 2
    } else {
        n_used
    }
}

pub fn dims_of<S: Scalar>(fit: &FitResult<S>) -> Dims {
    Dims { structure: fit.source_structure, n1: fit.panel.n1(), n2: fit.panel.n2(), t: fit.panel.t() }
}

/// Projection, bias components, sandwich variance and β̃ in one pass.
pub fn bias_report<S: Scalar>(fit: &FitResult<S>, bandwidth: BandwidthRule) -> Result<BiasReport<S>> {
    let projected = project_fit(fit)?;
    let arrays = residual_arrays(&projected, &fit.derivatives)?;
    let h = bandwidth.resolve(fit.panel.t());
    report_from_arrays(fit, &arrays, &[h]).map(|mut v| v.remove(0))
}

/// Reports for several bandwidths sharing one projection.
pub fn bias_reports<S: Scalar>(fit: &FitResult<S>, bandwidths: &[usize]) -> Result<Vec<BiasReport<S>>> {
    let projected = project_fit(fit)?;
    let arrays = residual_arrays(&projected, &fit.derivatives)?;
    report_from_arrays(fit, &arrays, bandwidths)
}

fn report_from_arrays<S: Scalar>(
    fit: &FitResult<S>,
    arrays: &WeightedResidualArrays<S>,
    bandwidths: &[usize],
) -> Result<Vec<BiasReport<S>>> {
    let w_hat = compute_w_hat(arrays, fit.panel.x())?;
    let v_hat = compute_v_hat(arrays);
    let n_eff = effective_n(fit, arrays.n_used);
    let se = standard_errors(&w_hat, &v_hat, n_eff)?;
    let dims = dims_of(fit);
    let set = select_components(&fit.spec);
    let group_terms = if set.alpha || set.gamma { Some(bias_terms(fit, arrays, 0)?) } else { None };
    bandwidths
        .iter()
        .map(|&h| {
            let components = if set.is_empty() {
                BiasComponents::default()
            } else {
                let rho = if set.rho { Some(sum_terms(&rho_terms(fit, arrays, h)?)) } else { None };
                let g = group_terms.as_ref();
                BiasComponents {
                    alpha: if set.alpha { g.map(|t| t.alpha_total()) } else { None },
                    gamma: if set.gamma { g.map(|t| t.gamma_total()) } else { None },
                    rho,
                }
            };
            let beta_tilde = debias(&fit.beta, &components, &w_hat, dims)?;
            Ok(BiasReport {
                b_alpha: components.alpha,
                b_gamma: components.gamma,
                b_rho: components.rho,
                w_hat: w_hat.clone(),
                v_hat: v_hat.clone(),
                h,
                beta_hat: fit.beta.clone(),
                beta_tilde,
                se_uncorrected: se.clone(),
                se_debiased: se.clone(),
                n_eff,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::SpecId;

    #[test]
    fn bandwidth_rule() {
        assert_eq!(BandwidthRule::Auto.resolve(12), 1);
        assert_eq!(BandwidthRule::Auto.resolve(1), 1);
        assert_eq!(BandwidthRule::Auto.resolve(100_000), 3);
        assert_eq!("3".parse::<BandwidthRule>().unwrap(), BandwidthRule::Fixed(3));
        assert_eq!("AUTO".parse::<BandwidthRule>().unwrap(), BandwidthRule::Auto);
        assert!("-1".parse::<BandwidthRule>().is_err());
    }

    #[test]
    fn component_selection() {
        let sel = |id, s| select_components(&FeSpec::new(id, s).unwrap());
        let all = ComponentSet { alpha: true, gamma: true, rho: true };
        assert_eq!(sel(SpecId::S3b, Structure::Bipartite), all);
        assert!(sel(SpecId::S3a, Structure::Bipartite).is_empty());
        assert_eq!(sel(SpecId::S2_3c, Structure::Bipartite), ComponentSet { rho: true, ..Default::default() });
        assert_eq!(sel(SpecId::S3b, Structure::Undirected), ComponentSet { alpha: true, gamma: false, rho: true });
    }

    #[test]
    fn lag_sums_match_loops() {
        let c: [f64; 5] = [0.3, -1.2, 0.7, 2.0, -0.4];
        let b = [1.0, 0.5, -0.25, 0.8, 1.5];
        let a = [-0.6, 0.9, 1.1, -2.0, 0.2];
        for h in 0..6 {
            let mut naive = 0.0f64;
            let mut naive2 = 0.0f64;
            let mut naive3 = 0.0f64;
            for t in 0..5 {
                for t2 in t..=(t + h).min(4) {
                    naive2 += c[t] * a[t2];
                    for t1 in 0..5 {
                        if t1 < t {
                            naive += c[t] * b[t1] * a[t2];
                        } else {
                            naive3 += c[t] * b[t1] * a[t2];
                        }
                    }
                }
            }
            assert!((lag_triple(&c, &b, &a, h) - naive).abs() < 1e-13);
            assert!((lag_triple_split(&c, &b, &a, h).1 - naive3).abs() < 1e-13);
            assert!((lag_double(&c, &a, h) - naive2).abs() < 1e-13);
        }
    }

    #[test]
    fn standard_error_arithmetic() {
        let w = Matrix::from_rows(&[vec![2.0]]);
        let v = Matrix::from_rows(&[vec![8.0]]);
        let se = standard_errors(&w, &v, 100).unwrap();
        assert!((se[0] - (0.02f64).sqrt()).abs() < 1e-15);
        assert!(matches!(standard_errors(&Matrix::from_rows(&[vec![0.0]]), &v, 100), Err(Error::SingularW)));
    }
}
