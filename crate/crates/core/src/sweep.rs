//! Grouped blockwise sweeps over fixed-effect levels.
//!
//! Two programs share this machinery: the nonlinear inner problem (minimise Σψ over φ at
//! fixed β by scalar Newton updates per level) and the weighted least-squares projection
//! of a regressor column onto the span of the blocks. Neither ever forms the dummy matrix.

use crate::error::{Error, Result};
use crate::family::Family;
use crate::scalar::Scalar;
use crate::spec::Design;

/// Largest per-level Newton step in the nonlinear sweeps.
const MAX_LEVEL_STEP: f64 = 2.0;

#[derive(Debug, Clone)]
pub(crate) struct InnerOutcome<S> {
    pub phi: Vec<Vec<S>>,
    pub pi: Vec<S>,
    pub sweeps: usize,
}

fn ensure_no_twin(design: &Design) -> Result<()> {
    if design.has_twin() {
        return Err(Error::UnsupportedSpec(
            "grouped sweeps need a directed or bipartite design; double undirected data first".into(),
        ));
    }
    Ok(())
}

pub(crate) fn index_from<S: Scalar>(design: &Design, xb: &[S], phi: &[Vec<S>]) -> Vec<S> {
    let mut pi = xb.to_vec();
    for (b, ph) in design.blocks().iter().zip(phi) {
        for (o, v) in pi.iter_mut().enumerate() {
            *v += ph[b.level(o)];
        }
    }
    pi
}

/// Max-norm of the φ-score D'd¹ψ / w over all blocks.
pub(crate) fn phi_score<S: Scalar>(design: &Design, d1: &[S], w: S) -> S {
    let mut worst = S::zero();
    for b in design.blocks() {
        let mut acc = vec![S::zero(); b.level_count];
        for (o, &g) in d1.iter().enumerate() {
            acc[b.level(o)] += g;
            if let Some(l) = b.twin_level(o) {
                acc[l] += g;
            }
        }
        worst = acc.into_iter().fold(worst, |m, v| m.max(v.abs()));
    }
    worst / w
}

/// One pass of scalar Newton updates, block by block. Returns nothing; `phi` and `pi` are
/// updated in place.
fn newton_sweep<S: Scalar>(
    family: Family,
    y: &[S],
    active: &[bool],
    design: &Design,
    phi: &mut [Vec<S>],
    pi: &mut [S],
) {
    let cap = S::lit(MAX_LEVEL_STEP);
    for (b, ph) in design.blocks().iter().zip(phi.iter_mut()) {
        let mut g1 = vec![S::zero(); b.level_count];
        let mut g2 = vec![S::zero(); b.level_count];
        let idx = b.levels();
        for o in 0..pi.len() {
            if active[o] {
                let (a, w) = family.score_weight(pi[o], y[o]);
                let l = idx[o] as usize;
                g1[l] += a;
                g2[l] += w;
            }
        }
        let delta: Vec<S> = g1
            .iter()
            .zip(&g2)
            .map(|(&a, &w)| if w > S::zero() { (-a / w).max(-cap).min(cap) } else { S::zero() })
            .collect();
        for (p, d) in ph.iter_mut().zip(&delta) {
            *p += *d;
        }
        for (o, v) in pi.iter_mut().enumerate() {
            *v += delta[idx[o] as usize];
        }
    }
}

fn masked_scores<S: Scalar>(family: Family, y: &[S], active: &[bool], pi: &[S]) -> Vec<S> {
    pi.iter()
        .zip(y)
        .zip(active)
        .map(|((&p, &yy), &a)| if a { family.score_weight(p, yy).0 } else { S::zero() })
        .collect()
}

/// Runs `sweeps` Newton sweeps without a convergence test.
pub(crate) fn warm_up<S: Scalar>(
    family: Family,
    y: &[S],
    xb: &[S],
    active: &[bool],
    design: &Design,
    phi: &mut [Vec<S>],
    sweeps: usize,
) -> Result<()> {
    ensure_no_twin(design)?;
    let mut pi = index_from(design, xb, phi);
    for _ in 0..sweeps {
        newton_sweep(family, y, active, design, phi, &mut pi);
    }
    Ok(())
}

/// Minimises Σψ over φ at fixed Xβ, starting from `phi`.
pub(crate) fn inner_solve<S: Scalar>(
    family: Family,
    y: &[S],
    xb: &[S],
    active: &[bool],
    design: &Design,
    phi: Vec<Vec<S>>,
    w: S,
    tol: S,
    max_sweeps: usize,
) -> Result<InnerOutcome<S>> {
    ensure_no_twin(design)?;
    let mut phi = phi;
    let mut pi = index_from(design, xb, &phi);
    let mut score = phi_score(design, &masked_scores(family, y, active, &pi), w);
    let mut sweeps = 0;
    while !(score < tol) {
        if sweeps >= max_sweeps {
            return Err(Error::Convergence {
                stage: "inner fixed-effect solve",
                iterations: sweeps,
                score: score.as_f64(),
                beta: Vec::new(),
            });
        }
        newton_sweep(family, y, active, design, &mut phi, &mut pi);
        sweeps += 1;
        score = phi_score(design, &masked_scores(family, y, active, &pi), w);
    }
    Ok(InnerOutcome { phi, pi, sweeps })
}

#[derive(Debug, Clone)]
pub(crate) struct WlsOutcome<S> {
    pub fitted: Vec<S>,
    pub coef: Vec<Vec<S>>,
    pub sweeps: usize,
}

/// Weighted least-squares projection of `x` onto the block span, by alternating weighted
/// group means (Gauss–Seidel over blocks). Levels with zero total weight are left at zero.
pub(crate) fn wls_sweeps<S: Scalar>(
    design: &Design,
    weights: &[S],
    x: &[S],
    w_scale: S,
    tol: S,
    max_sweeps: usize,
) -> Result<WlsOutcome<S>> {
    ensure_no_twin(design)?;
    let blocks = design.blocks();
    let n = x.len();
    let den: Vec<Vec<S>> = blocks
        .iter()
        .map(|b| {
            let mut d = vec![S::zero(); b.level_count];
            for o in 0..n {
                d[b.level(o)] += weights[o];
            }
            d
        })
        .collect();
    let mut coef: Vec<Vec<S>> = blocks.iter().map(|b| vec![S::zero(); b.level_count]).collect();
    let mut resid = x.to_vec();
    let mut sweeps = 0;
    loop {
        // weighted level sums of the residual, for every block
        let mut worst = S::zero();
        for b in blocks {
            let mut acc = vec![S::zero(); b.level_count];
            for o in 0..n {
                acc[b.level(o)] += weights[o] * resid[o];
            }
            worst = acc.into_iter().fold(worst, |m, v| m.max(v.abs()));
        }
        if worst / w_scale < tol {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(Error::Convergence {
                stage: "weighted least-squares projection",
                iterations: sweeps,
                score: (worst / w_scale).as_f64(),
                beta: Vec::new(),
            });
        }
        for ((b, c), d) in blocks.iter().zip(coef.iter_mut()).zip(&den) {
            let idx = b.levels();
            let mut num = vec![S::zero(); b.level_count];
            for o in 0..n {
                num[idx[o] as usize] += weights[o] * resid[o];
            }
            let delta: Vec<S> =
                num.iter().zip(d).map(|(&a, &w)| if w > S::zero() { a / w } else { S::zero() }).collect();
            for (cv, dv) in c.iter_mut().zip(&delta) {
                *cv += *dv;
            }
            for o in 0..n {
                resid[o] -= delta[idx[o] as usize];
            }
        }
        sweeps += 1;
    }
    let fitted = x.iter().zip(&resid).map(|(&a, &r)| a - r).collect();
    Ok(WlsOutcome { fitted, coef, sweeps })
}
