#![allow(dead_code)]

pub mod criteria;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use tripanel::*;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Random balanced panel with K regressors and an outcome drawn from `family` around
/// x'β + smooth effects.
pub fn random_panel(
    seed: u64,
    attempt: u64,
    family: Family,
    structure: Structure,
    n1: usize,
    n2: usize,
    t: usize,
    k: usize,
) -> Panel {
    let mut r = rng(seed, attempt);
    let ps = build_pair_set(structure, n1, n2, t).unwrap();
    let beta: Vec<f64> = (0..k).map(|a| 0.5 - 0.3 * a as f64).collect();
    let a: Vec<f64> = (0..n1 * t).map(|_| 0.3 * normal(&mut r)).collect();
    let g: Vec<f64> = (0..n2 * t).map(|_| 0.3 * normal(&mut r)).collect();
    let mut ds = PanelDataset::new(structure, n1, n2, t, k);
    for &(i, j) in ps.pairs() {
        let rho = 0.3 * normal(&mut r);
        for s in 0..t {
            let x: Vec<f64> = (0..k).map(|_| normal(&mut r) + a[i * t + s] - rho).collect();
            let gj = if structure == Structure::Bipartite { g[j * t + s] } else { a[j * t + s] };
            let idx: f64 = x.iter().zip(&beta).map(|(u, b)| u * b).sum::<f64>() + a[i * t + s] + gj + rho;
            let y = match family {
                Family::Linear => idx + 0.5 * normal(&mut r),
                Family::Logit | Family::Probit => {
                    let p = if family == Family::Logit {
                        1.0 / (1.0 + (-idx).exp())
                    } else {
                        0.5 * libm::erfc(-idx / 2f64.sqrt())
                    };
                    if r.gen::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
                Family::Poisson => Poisson::new((1.2 + 0.5 * idx).exp()).unwrap().sample(&mut r),
            };
            ds.push(i, j, s, y, x);
        }
    }
    ds
}

pub fn strict_options() -> FitOptions {
    FitOptions { tol_score: 1e-11, ..FitOptions::default() }
}

/// First draw (attempt 0, 1, ...) on which the dense oracle converges without separation
/// and with moderate estimates, i.e. the maximum-likelihood estimate exists and the data are
/// not nearly separated (|β|, |φ| < 8). Returns the panel and the number of draws.
pub fn screened_case(
    seed: u64,
    family: Family,
    spec_id: SpecId,
    structure: Structure,
    dims: (usize, usize, usize),
    max_attempts: u64,
) -> Option<(Validated, FeSpec, u64)> {
    let spec = FeSpec::new(spec_id, structure).unwrap();
    for attempt in 0..max_attempts {
        let ds = random_panel(seed, attempt, family, structure, dims.0, dims.1, dims.2, 2);
        let Ok(p) = validate(&ds, &spec) else { continue };
        let opts = FitOptions { max_outer: 60, ..strict_options() };
        if let Ok(f) = dense_oracle_fit(&p, &spec, family, &opts) {
            if f.beta.iter().chain(&f.phi_stacked()).all(|b| b.abs() < 8.0) {
                return Some((p, spec, attempt + 1));
            }
        }
    }
    None
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central finite differences of the objective against the analytic gradient at a point
/// displaced from the optimum; returns the largest relative error over all coordinates.
pub fn fd_gradient_error(fit: &Fit, seed: u64) -> f64 {
    let mut r = rng(seed, 99);
    let beta: Vec<f64> = fit.beta.iter().map(|b| b + 0.05 * normal(&mut r)).collect();
    let phi: Vec<f64> = fit.phi_stacked().iter().map(|p| p + 0.05 * normal(&mut r)).collect();
    let grad = fit.gradient_at_point(&beta, &phi);
    let k = beta.len();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for c in 0..grad.len() {
        let (mut bp, mut bm, mut pp, mut pm) = (beta.clone(), beta.clone(), phi.clone(), phi.clone());
        if c < k {
            bp[c] += eps;
            bm[c] -= eps;
        } else {
            pp[c - k] += eps;
            pm[c - k] -= eps;
        }
        let fd = (fit.objective_at(&bp, &pp) - fit.objective_at(&bm, &pm)) / (2.0 * eps);
        worst = worst.max((fd - grad[c]).abs() / (1.0 + grad[c].abs()));
    }
    worst
}

/// Per-observation arrays in (i, j, t) coordinates of the fitted panel, for the naive oracle.
pub struct Cube {
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
    pub present: Vec<bool>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
    /// [regressor][cell]
    pub dd2: Vec<Vec<f64>>,
    pub dd3: Vec<Vec<f64>>,
}

impl Cube {
    pub fn new(fit: &Fit, arrays: &WeightedResidualArrays<f64>) -> Self {
        let ps = fit.panel.pair_set();
        let (n1, n2, t) = (ps.n1, ps.n2, ps.t);
        let cells = n1 * n2 * t;
        let k = arrays.dpi2.len();
        let mut c = Cube {
            n1,
            n2,
            t,
            present: vec![false; n1 * n2],
            d1: vec![0.0; cells],
            d2: vec![0.0; cells],
            d3: vec![0.0; cells],
            dd2: vec![vec![0.0; cells]; k],
            dd3: vec![vec![0.0; cells]; k],
        };
        for (p, &(i, j)) in ps.pairs().iter().enumerate() {
            c.present[i * n2 + j] = true;
            for s in 0..t {
                let (o, cell) = (p * t + s, (i * n2 + j) * t + s);
                c.d1[cell] = fit.derivatives.d1[o];
                c.d2[cell] = fit.derivatives.d2[o];
                c.d3[cell] = fit.derivatives.d3[o];
                for a in 0..k {
                    c.dd2[a][cell] = arrays.dpi2[a][o];
                    c.dd3[a][cell] = arrays.dpi3[a][o];
                }
            }
        }
        c
    }

    pub fn at(&self, i: usize, j: usize, s: usize) -> usize {
        (i * self.n2 + j) * self.t + s
    }
}

/// Naive evaluation of the bias sums. `structure` is the structure of the data as supplied:
/// for undirected input the cube holds the doubled panel and sums run over unique pairs j > i,
/// with the node-level groups taken over all neighbours.
pub fn naive_bias_terms(c: &Cube, structure: Structure, h: usize) -> BiasTerms<f64> {
    let k = c.dd2.len();
    let (n1, n2, tt) = (c.n1, c.n2, c.t);
    let ft = tt as f64;
    let mut alpha = [vec![0.0; k], vec![0.0; k]];
    let mut gamma = [vec![0.0; k], vec![0.0; k]];
    let mut rho: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; k]);

    // node-time groups
    let group = |members: Vec<(usize, usize)>, s: usize, a: usize| -> (f64, f64) {
        let (mut cross, mut curv, mut q, mut den) = (0.0, 0.0, 0.0, 0.0);
        for (i, j) in members {
            let o = c.at(i, j, s);
            cross += c.dd2[a][o] * c.d1[o];
            curv += c.dd3[a][o];
            q += c.d1[o] * c.d1[o];
            den += c.d2[o];
        }
        (cross / den, curv * q / (den * den))
    };
    for a in 0..k {
        match structure {
            Structure::Bipartite | Structure::Directed => {
                let (na, nb) = (n1, if structure == Structure::Bipartite { n2 } else { n1 });
                for i in 0..na {
                    for s in 0..tt {
                        let m = (0..nb).filter(|&j| c.present[i * n2 + j]).map(|j| (i, j)).collect();
                        let (x, y) = group(m, s, a);
                        alpha[0][a] -= x / (na as f64 * ft);
                        alpha[1][a] += 0.5 * y / (na as f64 * ft);
                    }
                }
                for j in 0..nb {
                    for s in 0..tt {
                        let m = (0..na).filter(|&i| c.present[i * n2 + j]).map(|i| (i, j)).collect();
                        let (x, y) = group(m, s, a);
                        gamma[0][a] -= x / (nb as f64 * ft);
                        gamma[1][a] += 0.5 * y / (nb as f64 * ft);
                    }
                }
            }
            Structure::Undirected => {
                for i in 0..n1 {
                    for s in 0..tt {
                        // neighbours of i, each unique pair in its stored orientation (min, max)
                        let m = (0..n1).filter(|&j| j != i).map(|j| (i.min(j), i.max(j))).collect();
                        let (x, y) = group(m, s, a);
                        alpha[0][a] -= 2.0 * x / (n1 as f64 * ft);
                        alpha[1][a] += y / (n1 as f64 * ft);
                    }
                }
            }
        }
    }

    // pair terms
    let pairs: Vec<(usize, usize)> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .filter(|&(i, j)| c.present[i * n2 + j] && (structure != Structure::Undirected || i < j))
        .collect();
    let npairs = pairs.len() as f64;
    // printed outer weights: s = 1, 2 -> 1/|pairs|; s = 3 -> 2/(N1(N1-1)) = 1/|unique pairs|
    let wgt = 1.0 / npairs;
    for a in 0..k {
        for &(i, j) in &pairs {
            let o = |s: usize| c.at(i, j, s);
            let s2: f64 = (0..tt).map(|s| c.d2[o(s)]).sum();
            let q: f64 = (0..tt).map(|s| c.d1[o(s)] * c.d1[o(s)]).sum();
            let sd3: f64 = (0..tt).map(|s| c.d3[o(s)]).sum();
            let sdd3: f64 = (0..tt).map(|s| c.dd3[a][o(s)]).sum();
            let hi = |s: usize| (s + h).min(tt - 1);
            let (mut r1, mut r7, mut r2, mut r4, mut r5, mut r6) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for t in 0..tt {
                for t1 in t..=hi(t) {
                    r1 += c.dd2[a][o(t1)] * c.d1[o(t)];
                }
                for t1 in 0..tt {
                    for t2 in t..=hi(t) {
                        if t1 >= t {
                            r7 += c.dd2[a][o(t2)] * c.d2[o(t1)] * c.d1[o(t)];
                        } else {
                            r2 += c.dd2[a][o(t2)] * c.d2[o(t1)] * c.d1[o(t)];
                            r4 += c.dd3[a][o(t2)] * c.d1[o(t1)] * c.d1[o(t)];
                            r5 += c.d2[o(t2)] * c.d1[o(t1)] * c.d1[o(t)];
                            r6 += c.dd2[a][o(t2)] * c.d1[o(t1)] * c.d1[o(t)];
                        }
                    }
                }
            }
            rho[0][a] += wgt * -2.0 * r1 / s2;
            rho[1][a] += wgt * r7 / (s2 * s2);
            rho[2][a] += wgt * r2 / (s2 * s2);
            rho[3][a] += wgt * 0.5 * sdd3 * q / (s2 * s2);
            rho[4][a] += wgt * r4 / (s2 * s2);
            rho[5][a] += wgt * -2.0 * sdd3 * r5 / (s2 * s2 * s2);
            rho[6][a] += wgt * -sd3 * r6 / (s2 * s2 * s2);
        }
    }
    BiasTerms { alpha, gamma, rho }
}

/// Largest absolute deviation between two term sets, over every term and regressor.
pub fn terms_diff(a: &BiasTerms<f64>, b: &BiasTerms<f64>) -> f64 {
    let flat = |t: &BiasTerms<f64>| -> Vec<f64> {
        t.alpha.iter().chain(t.gamma.iter()).chain(t.rho.iter()).flatten().copied().collect()
    };
    max_abs_diff(&flat(a), &flat(b))
}

/// Replaces the fit's derivative arrays by arbitrary positive-curvature values and returns
/// matching residual arrays, so every bias term is generically non-zero.
pub fn scrambled(fit: &Fit, seed: u64) -> (Fit, WeightedResidualArrays<f64>) {
    let mut r = rng(seed, 7);
    let mut f = fit.clone();
    let ps = f.panel.pair_set().clone();
    let t = ps.t;
    for (p, &(i, j)) in ps.pairs().iter().enumerate() {
        // undirected fits live on the doubled panel: keep mirrored rows equal
        let mirror = if f.source_structure == Structure::Undirected { ps.ordinal(j, i) } else { None };
        if mirror.is_some_and(|m| m < p) {
            continue;
        }
        for s in 0..t {
            let v = [normal(&mut r), 0.2 + r.gen::<f64>(), normal(&mut r)];
            for q in std::iter::once(p).chain(mirror) {
                let o = q * t + s;
                f.derivatives.d1[o] = v[0];
                f.derivatives.d2[o] = v[1];
                f.derivatives.d3[o] = v[2];
            }
        }
    }
    comparison_case(&f)
}

/// Fit and residual arrays as the bias oracle compares them. Undirected fits live on the
/// doubled panel, where mirrored rows agree only up to the solver tolerances while the
/// library and the naive sums read different mirrors; averaging the mirrors (derivatives,
/// then the projected arrays) keeps that noise out of the comparison.
pub fn comparison_case(fit: &Fit) -> (Fit, WeightedResidualArrays<f64>) {
    let mut f = fit.clone();
    if f.source_structure == Structure::Undirected {
        let d = &mut f.derivatives;
        average_mirrors(&f.panel, [&mut d.d1, &mut d.d2, &mut d.d3]);
    }
    let proj = project_fit(&f).unwrap();
    let mut arrays = residual_arrays(&proj, &f.derivatives).unwrap();
    if f.source_structure == Structure::Undirected {
        for cols in [&mut arrays.dpi1, &mut arrays.dpi2, &mut arrays.dpi3] {
            average_mirrors(&f.panel, cols.iter_mut());
        }
    }
    (f, arrays)
}

fn average_mirrors<'a>(panel: &Validated, cols: impl IntoIterator<Item = &'a mut Vec<f64>>) {
    let ps = panel.pair_set();
    let t = ps.t;
    for col in cols {
        for (p, &(i, j)) in ps.pairs().iter().enumerate() {
            let Some(m) = ps.ordinal(j, i).filter(|&m| m > p) else { continue };
            for s in 0..t {
                let avg = 0.5 * (col[p * t + s] + col[m * t + s]);
                col[p * t + s] = avg;
                col[m * t + s] = avg;
            }
        }
    }
}
