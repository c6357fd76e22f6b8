//! Panel data model: observation-set structures, the raw dataset, validation and
//! the undirected doubling transform.
//!
//! Indices are 0-based everywhere in this module. The CSV boundary in [`crate::io`]
//! converts from the 1-based external convention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spec::{Design, FeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Bipartite,
    Directed,
    Undirected,
}

impl Structure {
    pub fn is_network(self) -> bool {
        !matches!(self, Structure::Bipartite)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Bipartite => "bipartite",
            Structure::Directed => "directed",
            Structure::Undirected => "undirected",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bipartite" => Ok(Structure::Bipartite),
            "directed" => Ok(Structure::Directed),
            "undirected" => Ok(Structure::Undirected),
            other => Err(Error::InvalidConfig(format!("unknown structure '{other}'"))),
        }
    }
}

/// The enumerated cross-sectional pair set together with the panel length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub structure: Structure,
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
    pairs: Vec<(usize, usize)>,
    /// `lookup[i * n2 + j]` is the ordinal of pair `(i, j)` or `u32::MAX`.
    lookup: Vec<u32>,
}

impl PairSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Total observation count n_s.
    pub fn n_obs(&self) -> usize {
        self.pairs.len() * self.t
    }

    pub fn ordinal(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n1 || j >= self.n2 {
            return None;
        }
        match self.lookup[i * self.n2 + j] {
            u32::MAX => None,
            p => Some(p as usize),
        }
    }

    /// Canonical observation index: pairs are outer, time is inner.
    #[inline]
    pub fn obs_index(&self, pair: usize, t: usize) -> usize {
        pair * self.t + t
    }
}

/// Enumerates 𝒟_s for the given structure and returns it with n_s.
pub fn build_pair_set(structure: Structure, n1: usize, n2: usize, t: usize) -> Result<PairSet> {
    if t < 1 {
        return Err(Error::Dimension(format!("T must be at least 1, got {t}")));
    }
    match structure {
        Structure::Bipartite => {
            if n1 < 2 || n2 < 2 {
                return Err(Error::Dimension(format!("bipartite panels need N1 >= 2 and N2 >= 2, got ({n1}, {n2})")));
            }
        }
        Structure::Directed | Structure::Undirected => {
            if n2 != n1 {
                return Err(Error::Dimension(format!("network panels need N2 = N1, got ({n1}, {n2})")));
            }
            if n1 < 3 {
                return Err(Error::Dimension(format!("network panels need N1 >= 3, got {n1}")));
            }
        }
    }
    let mut pairs = Vec::new();
    let mut lookup = vec![u32::MAX; n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            let keep = match structure {
                Structure::Bipartite => true,
                Structure::Directed => i != j,
                Structure::Undirected => i < j,
            };
            if keep {
                lookup[i * n2 + j] = pairs.len() as u32;
                pairs.push((i, j));
            }
        }
    }
    Ok(PairSet { structure, n1, n2, t, pairs, lookup })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row<S> {
    pub i: usize,
    pub j: usize,
    pub t: usize,
    pub y: S,
    pub x: Vec<S>,
}

/// Raw, unvalidated panel: rows in arbitrary order.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<S> {
    pub structure: Structure,
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
    pub k: usize,
    pub rows: Vec<Row<S>>,
}

impl<S: Scalar> PanelDataset<S> {
    pub fn new(structure: Structure, n1: usize, n2: usize, t: usize, k: usize) -> Self {
        Self { structure, n1, n2, t, k, rows: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, t: usize, y: S, x: Vec<S>) {
        self.rows.push(Row { i, j, t, y, x });
    }
}

/// A balanced panel in canonical order (observation `pair * T + t`) annotated with the
/// fixed-effect design of one specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPanel<S> {
    pairs: PairSet,
    k: usize,
    y: Vec<S>,
    /// Regressors, one column of length n per coefficient.
    x: Vec<Vec<S>>,
    design: Design,
}

impl<S: Scalar> ValidatedPanel<S> {
    pub fn structure(&self) -> Structure {
        self.pairs.structure
    }
    pub fn n1(&self) -> usize {
        self.pairs.n1
    }
    pub fn n2(&self) -> usize {
        self.pairs.n2
    }
    pub fn t(&self) -> usize {
        self.pairs.t
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
    pub fn pair_set(&self) -> &PairSet {
        &self.pairs
    }
    pub fn y(&self) -> &[S] {
        &self.y
    }
    pub fn x(&self) -> &[Vec<S>] {
        &self.x
    }
    pub fn design(&self) -> &Design {
        &self.design
    }
    pub fn spec(&self) -> &FeSpec {
        self.design.spec()
    }

    /// Rebuilds the raw dataset (canonical row order).
    pub fn to_dataset(&self) -> PanelDataset<S> {
        let mut ds = PanelDataset::new(self.structure(), self.n1(), self.n2(), self.t(), self.k);
        for (p, &(i, j)) in self.pairs.pairs().iter().enumerate() {
            for t in 0..self.t() {
                let o = self.pairs.obs_index(p, t);
                ds.push(i, j, t, self.y[o], self.x.iter().map(|c| c[o]).collect());
            }
        }
        ds
    }

    /// Same data with a different fixed-effect specification.
    pub fn with_spec(&self, spec: &FeSpec) -> Result<Self> {
        let design = Design::new(spec, &self.pairs)?;
        Ok(Self { pairs: self.pairs.clone(), k: self.k, y: self.y.clone(), x: self.x.clone(), design })
    }

    /// Same panel and design with replaced regressor columns.
    pub fn with_regressors(&self, x: Vec<Vec<S>>) -> Result<Self> {
        if x.iter().any(|c| c.len() != self.n_obs()) {
            return Err(Error::Dimension("regressor column length differs from n".into()));
        }
        Ok(Self { pairs: self.pairs.clone(), k: x.len(), y: self.y.clone(), x, design: self.design.clone() })
    }

    /// Same panel and design with a replaced outcome vector.
    pub fn with_outcome(&self, y: Vec<S>) -> Result<Self> {
        if y.len() != self.n_obs() {
            return Err(Error::Dimension("outcome length differs from n".into()));
        }
        Ok(Self { pairs: self.pairs.clone(), k: self.k, y, x: self.x.clone(), design: self.design.clone() })
    }
}

/// Checks balancedness, structure-consistent pairs, finiteness and FE level coverage,
/// and annotates the panel with the block level indices of `spec`.
pub fn validate<S: Scalar>(dataset: &PanelDataset<S>, spec: &FeSpec) -> Result<ValidatedPanel<S>> {
    if spec.structure() != dataset.structure {
        return Err(Error::StructureViolation(format!(
            "specification is for {} data but the panel is {}",
            spec.structure(),
            dataset.structure
        )));
    }
    let pairs = build_pair_set(dataset.structure, dataset.n1, dataset.n2, dataset.t)?;
    let n = pairs.n_obs();
    let k = dataset.k;
    let mut seen = vec![false; n];
    let mut y = vec![S::zero(); n];
    let mut x = vec![vec![S::zero(); n]; k];
    for row in &dataset.rows {
        if row.i >= dataset.n1 || row.j >= dataset.n2 || row.t >= dataset.t {
            return Err(Error::StructureViolation(format!(
                "index (i={}, j={}, t={}) outside the declared dimensions",
                row.i + 1,
                row.j + 1,
                row.t + 1
            )));
        }
        let p = pairs.ordinal(row.i, row.j).ok_or_else(|| {
            let why = match dataset.structure {
                Structure::Undirected if row.i != row.j => "undirected rows need i < j",
                _ => "self-tie in network data",
            };
            Error::StructureViolation(format!("pair (i={}, j={}): {why}", row.i + 1, row.j + 1))
        })?;
        if row.x.len() != k {
            return Err(Error::Dimension(format!("row has {} regressors, expected {k}", row.x.len())));
        }
        if !row.y.is_finite() || row.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::StructureViolation(format!(
                "non-finite value at (i={}, j={}, t={})",
                row.i + 1,
                row.j + 1,
                row.t + 1
            )));
        }
        let o = pairs.obs_index(p, row.t);
        if seen[o] {
            return Err(Error::DuplicateRow { i: row.i + 1, j: row.j + 1, t: row.t + 1 });
        }
        seen[o] = true;
        y[o] = row.y;
        for (col, v) in x.iter_mut().zip(&row.x) {
            col[o] = *v;
        }
    }
    if let Some(o) = seen.iter().position(|s| !s) {
        let (i, j) = pairs.pairs()[o / pairs.t];
        return Err(Error::UnbalancedPanel(format!(
            "missing observation (i={}, j={}, t={}); expected {n} rows, found {}",
            i + 1,
            j + 1,
            o % pairs.t + 1,
            dataset.rows.len()
        )));
    }
    let design = Design::new(spec, &pairs)?;
    for block in design.blocks() {
        let mut count = vec![0usize; block.level_count];
        for o in 0..n {
            count[block.level(o)] += 1;
            if let Some(l) = block.twin_level(o) {
                count[l] += 1;
            }
        }
        if let Some(l) = count.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateLevel { block: block.key.to_string(), level: l + 1 });
        }
    }
    Ok(ValidatedPanel { pairs, k, y, x, design })
}

/// Mirrors every undirected row `(i, j, t)` into `(j, i, t)` and relabels the panel as directed.
pub fn double_undirected<S: Scalar>(dataset: &PanelDataset<S>) -> Result<PanelDataset<S>> {
    if dataset.structure != Structure::Undirected {
        return Err(Error::StructureViolation(format!("doubling needs undirected data, got {}", dataset.structure)));
    }
    let mut out = PanelDataset::new(Structure::Directed, dataset.n1, dataset.n2, dataset.t, dataset.k);
    out.rows.reserve(2 * dataset.rows.len());
    for r in &dataset.rows {
        out.rows.push(r.clone());
        out.rows.push(Row { i: r.j, j: r.i, t: r.t, y: r.y, x: r.x.clone() });
    }
    Ok(out)
}
