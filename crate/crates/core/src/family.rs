//! Criterion functions ψ, links g and the derivatives d^rψ with respect to the linear index.
//!
//! Criterion conventions (all minimised):
//! - Linear: ψ = (y − π)² / 2
//! - Logit: ψ = log(1 + e^π) − yπ
//! - Probit: ψ = −[y log Φ(π) + (1 − y) log(1 − Φ(π))]
//! - Poisson: ψ = e^π − yπ

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logit,
    Probit,
    Poisson,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Linear, Family::Logit, Family::Probit, Family::Poisson];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Logit => "logit",
            Family::Probit => "probit",
            Family::Poisson => "poisson",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Family::Logit | Family::Probit)
    }

    /// Whether `y` lies in the outcome support of the family.
    pub fn supports<S: Scalar>(self, y: S) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            Family::Linear => true,
            Family::Logit | Family::Probit => y == S::zero() || y == S::one(),
            Family::Poisson => y >= S::zero(),
        }
    }

    pub fn check_support<S: Scalar>(self, y: &[S]) -> Result<()> {
        match y.iter().position(|&v| !self.supports(v)) {
            None => Ok(()),
            Some(row) => Err(Error::Support { family: self.as_str().into(), row, value: y[row].as_f64() }),
        }
    }

    /// ψ(π; y).
    pub fn criterion<S: Scalar>(self, pi: S, y: S) -> S {
        match self {
            Family::Linear => {
                let r = y - pi;
                r * r * S::lit(0.5)
            }
            Family::Logit => softplus(pi) - y * pi,
            Family::Probit => {
                let p = pi.as_f64();
                let yf = y.as_f64();
                let mut v = 0.0;
                if yf != 0.0 {
                    v -= yf * log_norm_cdf(p);
                }
                if yf != 1.0 {
                    v -= (1.0 - yf) * log_norm_cdf(-p);
                }
                S::lit(v)
            }
            Family::Poisson => pi.exp() - y * pi,
        }
    }

    /// (d¹ψ, d²ψ, d³ψ) at π for outcome y.
    #[inline]
    pub fn derivatives<S: Scalar>(self, pi: S, y: S) -> (S, S, S) {
        match self {
            Family::Linear => (pi - y, S::one(), S::zero()),
            Family::Logit => {
                let p = logistic(pi);
                let q = logistic(-pi);
                let d2 = p * q;
                (p - y, d2, d2 * (q - p))
            }
            Family::Probit => {
                let (a, b, c) = probit_derivatives(pi.as_f64(), y.as_f64());
                (S::lit(a), S::lit(b), S::lit(c))
            }
            Family::Poisson => {
                let m = pi.exp();
                (m - y, m, m)
            }
        }
    }

    /// First two derivatives only (the inner solver's hot path).
    #[inline]
    pub fn score_weight<S: Scalar>(self, pi: S, y: S) -> (S, S) {
        match self {
            Family::Linear => (pi - y, S::one()),
            Family::Logit => {
                let p = logistic(pi);
                (p - y, p * logistic(-pi))
            }
            Family::Probit => {
                let (a, b, _) = probit_derivatives(pi.as_f64(), y.as_f64());
                (S::lit(a), S::lit(b))
            }
            Family::Poisson => {
                let m = pi.exp();
                (m - y, m)
            }
        }
    }

    /// Conditional mean g(π).
    pub fn mean<S: Scalar>(self, pi: S) -> S {
        match self {
            Family::Linear => pi,
            Family::Logit => logistic(pi),
            Family::Probit => S::lit(norm_cdf(pi.as_f64())),
            Family::Poisson => pi.exp(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown family '{s}'")))
    }
}

/// Criterion derivatives d¹ψ, d²ψ, d³ψ evaluated elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeArrays<S> {
    pub d1: Vec<S>,
    pub d2: Vec<S>,
    pub d3: Vec<S>,
}

impl<S: Scalar> DerivativeArrays<S> {
    pub fn len(&self) -> usize {
        self.d1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d1.is_empty()
    }

    /// Zeroes every entry of the masked-out observations.
    pub(crate) fn apply_mask(&mut self, active: &[bool]) {
        for (o, &a) in active.iter().enumerate() {
            if !a {
                self.d1[o] = S::zero();
                self.d2[o] = S::zero();
                self.d3[o] = S::zero();
            }
        }
    }
}

pub fn eval_derivatives<S: Scalar>(family: Family, pi: &[S], y: &[S]) -> Result<DerivativeArrays<S>> {
    if pi.len() != y.len() {
        return Err(Error::Dimension(format!("index has {} entries, outcome {}", pi.len(), y.len())));
    }
    family.check_support(y)?;
    let n = pi.len();
    let mut out = DerivativeArrays { d1: Vec::with_capacity(n), d2: Vec::with_capacity(n), d3: Vec::with_capacity(n) };
    for (&p, &yy) in pi.iter().zip(y) {
        let (a, b, c) = family.derivatives(p, yy);
        out.d1.push(a);
        out.d2.push(b);
        out.d3.push(c);
    }
    Ok(out)
}

pub fn link_mean<S: Scalar>(family: Family, pi: &[S]) -> Vec<S> {
    pi.iter().map(|&p| family.mean(p)).collect()
}

#[inline]
fn logistic<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Below this argument Φ is evaluated through the continued fraction for the Mills ratio.
const PROBIT_TAIL: f64 = -8.0;

fn norm_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

/// (1 − Φ(x)) / φ(x) for large positive x, by the Laplace continued fraction.
fn mills_ratio_tail(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=60).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

fn log_norm_cdf(u: f64) -> f64 {
    if u < PROBIT_TAIL {
        -0.5 * u * u - LN_SQRT_2PI + mills_ratio_tail(-u).ln()
    } else {
        norm_cdf(u).ln()
    }
}

/// φ(u)/Φ(u).
fn inverse_mills(u: f64) -> f64 {
    if u < PROBIT_TAIL {
        1.0 / mills_ratio_tail(-u)
    } else {
        FRAC_1_SQRT_2PI * (-0.5 * u * u).exp() / norm_cdf(u)
    }
}

/// Derivatives of f(u) = −log Φ(u): (−λ, λ(u+λ), λ[1 − (u+λ)(u+2λ)]).
fn neg_log_cdf_derivatives(u: f64) -> (f64, f64, f64) {
    let lam = inverse_mills(u);
    let a = u + lam;
    (-lam, lam * a, lam * (1.0 - a * (u + 2.0 * lam)))
}

fn probit_derivatives(pi: f64, y: f64) -> (f64, f64, f64) {
    let mut out = (0.0, 0.0, 0.0);
    if y != 0.0 {
        let (a, b, c) = neg_log_cdf_derivatives(pi);
        out = (y * a, y * b, y * c);
    }
    if y != 1.0 {
        // ψ(π) = f(−π): odd derivatives flip sign
        let (a, b, c) = neg_log_cdf_derivatives(-pi);
        let w = 1.0 - y;
        out = (out.0 - w * a, out.1 + w * b, out.2 - w * c);
    }
    out
}
