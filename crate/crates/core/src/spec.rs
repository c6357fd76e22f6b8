//! The seventeen additive fixed-effect specifications, their expansion into grouping
//! blocks, and the identification constraints on the stacked effect vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{build_pair_set, PairSet, Structure};

/// Grouping key of one fixed-effect block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKey {
    I,
    J,
    T,
    It,
    Jt,
    Ij,
}

impl BlockKey {
    pub fn is_interacted(self) -> bool {
        matches!(self, BlockKey::It | BlockKey::Jt | BlockKey::Ij)
    }

    fn indices(self) -> (bool, bool, bool) {
        match self {
            BlockKey::I => (true, false, false),
            BlockKey::J => (false, true, false),
            BlockKey::T => (false, false, true),
            BlockKey::It => (true, false, true),
            BlockKey::Jt => (false, true, true),
            BlockKey::Ij => (true, true, false),
        }
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKey::I => "i",
            BlockKey::J => "j",
            BlockKey::T => "t",
            BlockKey::It => "it",
            BlockKey::Jt => "jt",
            BlockKey::Ij => "ij",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecId {
    S1_1a,
    S1_1b,
    S1_2a,
    S1_2b,
    S1_3a,
    S1_3b,
    S2_1a,
    S2_1b,
    S2_1c,
    S2_2a,
    S2_2b,
    S2_2c,
    S2_3a,
    S2_3b,
    S2_3c,
    S3a,
    S3b,
}

impl SpecId {
    pub const ALL: [SpecId; 17] = [
        SpecId::S1_1a,
        SpecId::S1_1b,
        SpecId::S1_2a,
        SpecId::S1_2b,
        SpecId::S1_3a,
        SpecId::S1_3b,
        SpecId::S2_1a,
        SpecId::S2_1b,
        SpecId::S2_1c,
        SpecId::S2_2a,
        SpecId::S2_2b,
        SpecId::S2_2c,
        SpecId::S2_3a,
        SpecId::S2_3b,
        SpecId::S2_3c,
        SpecId::S3a,
        SpecId::S3b,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SpecId::S1_1a => "1.1.a",
            SpecId::S1_1b => "1.1.b",
            SpecId::S1_2a => "1.2.a",
            SpecId::S1_2b => "1.2.b",
            SpecId::S1_3a => "1.3.a",
            SpecId::S1_3b => "1.3.b",
            SpecId::S2_1a => "2.1.a",
            SpecId::S2_1b => "2.1.b",
            SpecId::S2_1c => "2.1.c",
            SpecId::S2_2a => "2.2.a",
            SpecId::S2_2b => "2.2.b",
            SpecId::S2_2c => "2.2.c",
            SpecId::S2_3a => "2.3.a",
            SpecId::S2_3b => "2.3.b",
            SpecId::S2_3c => "2.3.c",
            SpecId::S3a => "3.a",
            SpecId::S3b => "3.b",
        }
    }

    /// Block keys in the order they appear in μ_ijt(φ).
    pub fn keys(self) -> &'static [BlockKey] {
        use BlockKey::*;
        match self {
            SpecId::S1_1a => &[I],
            SpecId::S1_1b => &[It],
            SpecId::S1_2a => &[J],
            SpecId::S1_2b => &[Jt],
            SpecId::S1_3a => &[T],
            SpecId::S1_3b => &[Ij],
            SpecId::S2_1a => &[I, J],
            SpecId::S2_1b => &[It, Jt],
            SpecId::S2_1c => &[I, Jt],
            SpecId::S2_2a => &[I, T],
            SpecId::S2_2b => &[It, Ij],
            SpecId::S2_2c => &[J, It],
            SpecId::S2_3a => &[J, T],
            SpecId::S2_3b => &[Jt, Ij],
            SpecId::S2_3c => &[T, Ij],
            SpecId::S3a => &[I, J, T],
            SpecId::S3b => &[It, Jt, Ij],
        }
    }
}

impl fmt::Display for SpecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SpecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpecId::ALL
            .iter()
            .copied()
            .find(|id| id.label() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown specification id '{s}'")))
    }
}

/// One block of a specification. `twin` marks an undirected node block that enters
/// the index through both endpoints of a pair (α_it + α_jt).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub key: BlockKey,
    pub twin: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeSpec {
    id: SpecId,
    structure: Structure,
    blocks: Vec<BlockSpec>,
}

impl FeSpec {
    pub fn new(id: SpecId, structure: Structure) -> Result<Self> {
        let keys = id.keys();
        let blocks = if structure == Structure::Undirected {
            collapse_undirected(id, keys)?
        } else {
            keys.iter().map(|&key| BlockSpec { key, twin: false }).collect()
        };
        Ok(Self { id, structure, blocks })
    }

    pub fn id(&self) -> SpecId {
        self.id
    }
    pub fn structure(&self) -> Structure {
        self.structure
    }
    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// The specification used on the doubled (directed) sample of undirected data.
    pub fn doubled(&self) -> Result<FeSpec> {
        match self.structure {
            Structure::Undirected => FeSpec::new(self.id, Structure::Directed),
            _ => Err(Error::StructureViolation("only undirected specifications are doubled".into())),
        }
    }
}

fn collapse_undirected(id: SpecId, keys: &[BlockKey]) -> Result<Vec<BlockSpec>> {
    let has = |k| keys.contains(&k);
    let symmetric = has(BlockKey::I) == has(BlockKey::J) && has(BlockKey::It) == has(BlockKey::Jt);
    if !symmetric {
        return Err(Error::UnsupportedSpec(format!(
            "{id} is not symmetric in (i, j) and cannot be used with undirected data"
        )));
    }
    let mut out = Vec::new();
    for &key in keys {
        match key {
            BlockKey::I | BlockKey::It => out.push(BlockSpec { key, twin: true }),
            BlockKey::J | BlockKey::Jt => {}
            BlockKey::T | BlockKey::Ij => out.push(BlockSpec { key, twin: false }),
        }
    }
    Ok(out)
}

/// A fixed-effect block realised on a pair set: the observation → level map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeBlock {
    pub key: BlockKey,
    pub level_count: usize,
    index: Vec<u32>,
    twin_index: Option<Vec<u32>>,
}

impl FeBlock {
    #[inline]
    pub fn level(&self, obs: usize) -> usize {
        self.index[obs] as usize
    }

    /// Second level hit by `obs` in an undirected node block.
    #[inline]
    pub fn twin_level(&self, obs: usize) -> Option<usize> {
        self.twin_index.as_ref().map(|v| v[obs] as usize)
    }

    pub fn is_twin(&self) -> bool {
        self.twin_index.is_some()
    }

    pub fn levels(&self) -> &[u32] {
        &self.index
    }
}

fn level_of(key: BlockKey, pair: usize, i: usize, j: usize, t: usize, big_t: usize) -> usize {
    match key {
        BlockKey::I => i,
        BlockKey::J => j,
        BlockKey::T => t,
        BlockKey::It => i * big_t + t,
        BlockKey::Jt => j * big_t + t,
        BlockKey::Ij => pair,
    }
}

fn level_count_of(key: BlockKey, ps: &PairSet) -> usize {
    match key {
        BlockKey::I => ps.n1,
        BlockKey::J => ps.n2,
        BlockKey::T => ps.t,
        BlockKey::It => ps.n1 * ps.t,
        BlockKey::Jt => ps.n2 * ps.t,
        BlockKey::Ij => ps.len(),
    }
}

/// Sparse linear restrictions 𝒞'φ = 0 on the stacked effect vector. Each column of 𝒞 is
/// a direction along which the fitted index is invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    columns: Vec<Vec<(usize, f64)>>,
}

impl ConstraintSystem {
    pub fn count(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<(usize, f64)>] {
        &self.columns
    }

    /// 𝒞'φ.
    pub fn residuals<S: crate::Scalar>(&self, phi: &[S]) -> Vec<S> {
        self.columns.iter().map(|col| col.iter().map(|&(r, c)| S::lit(c) * phi[r]).sum()).collect()
    }

    fn build(blocks: &[FeBlock], offsets: &[usize], ps: &PairSet) -> Result<Self> {
        let mut columns = Vec::new();
        let keys: Vec<BlockKey> = blocks.iter().map(|b| b.key).collect();
        let any_twin = blocks.iter().any(|b| b.is_twin());
        if any_twin {
            return Self::build_twin(blocks, offsets, ps);
        }
        let all_one_way = keys.iter().all(|k| !k.is_interacted());
        let mut block_pairs = Vec::new();
        if all_one_way {
            for m in 1..blocks.len() {
                block_pairs.push((m - 1, m));
            }
        } else {
            for a in 0..blocks.len() {
                for b in a + 1..blocks.len() {
                    block_pairs.push((a, b));
                }
            }
        }
        for (a, b) in block_pairs {
            let (ai, aj, at) = keys[a].indices();
            let (bi, bj, bt) = keys[b].indices();
            let shared = (ai && bi, aj && bj, at && bt);
            // group id of a level of the given block under the shared grouping
            let group_count = match shared {
                (false, false, false) => 1,
                (true, false, false) => ps.n1,
                (false, true, false) => ps.n2,
                (false, false, true) => ps.t,
                _ => return Err(Error::UnsupportedSpec("blocks share more than one index".into())),
            };
            let mut cols = vec![Vec::new(); group_count];
            for (m, sign) in [(a, 1.0), (b, -1.0)] {
                for level in 0..blocks[m].level_count {
                    let g = shared_group(keys[m], level, shared, ps);
                    cols[g].push((offsets[m] + level, sign));
                }
            }
            columns.extend(cols);
        }
        Ok(Self { columns })
    }

    fn build_twin(blocks: &[FeBlock], offsets: &[usize], ps: &PairSet) -> Result<Self> {
        let keys: Vec<BlockKey> = blocks.iter().map(|b| b.key).collect();
        let mut columns = Vec::new();
        match keys.as_slice() {
            [_] => {}
            [BlockKey::I, BlockKey::T] => {
                let mut col: Vec<(usize, f64)> = (0..ps.n1).map(|l| (offsets[0] + l, 1.0)).collect();
                col.extend((0..ps.t).map(|l| (offsets[1] + l, -2.0)));
                columns.push(col);
            }
            [BlockKey::It, BlockKey::Ij] => {
                for node in 0..ps.n1 {
                    let mut col: Vec<(usize, f64)> = (0..ps.t).map(|s| (offsets[0] + node * ps.t + s, 1.0)).collect();
                    for (p, &(i, j)) in ps.pairs().iter().enumerate() {
                        if i == node || j == node {
                            col.push((offsets[1] + p, -1.0));
                        }
                    }
                    columns.push(col);
                }
            }
            _ => return Err(Error::UnsupportedSpec(format!("no undirected constraint rule for {keys:?}"))),
        }
        Ok(Self { columns })
    }
}

fn shared_group(key: BlockKey, level: usize, shared: (bool, bool, bool), ps: &PairSet) -> usize {
    let (i, j, t) = match key {
        BlockKey::I => (level, 0, 0),
        BlockKey::J => (0, level, 0),
        BlockKey::T => (0, 0, level),
        BlockKey::It => (level / ps.t, 0, level % ps.t),
        BlockKey::Jt => (0, level / ps.t, level % ps.t),
        BlockKey::Ij => {
            let (i, j) = ps.pairs()[level];
            (i, j, 0)
        }
    };
    match shared {
        (true, false, false) => i,
        (false, true, false) => j,
        (false, false, true) => t,
        _ => 0,
    }
}

/// A specification realised on a pair set: blocks, stacked offsets and constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    spec: FeSpec,
    blocks: Vec<FeBlock>,
    offsets: Vec<usize>,
    constraints: ConstraintSystem,
}

impl Design {
    pub fn new(spec: &FeSpec, ps: &PairSet) -> Result<Self> {
        if spec.structure() != ps.structure {
            return Err(Error::StructureViolation(format!(
                "specification is for {} data but the pair set is {}",
                spec.structure(),
                ps.structure
            )));
        }
        let big_t = ps.t;
        let n = ps.n_obs();
        let mut blocks = Vec::with_capacity(spec.blocks().len());
        for bs in spec.blocks() {
            let mut index = Vec::with_capacity(n);
            let mut twin = bs.twin.then(|| Vec::with_capacity(n));
            for (p, &(i, j)) in ps.pairs().iter().enumerate() {
                for t in 0..big_t {
                    index.push(level_of(bs.key, p, i, j, t, big_t) as u32);
                    if let Some(tw) = twin.as_mut() {
                        let twin_key = match bs.key {
                            BlockKey::I => BlockKey::J,
                            BlockKey::It => BlockKey::Jt,
                            k => k,
                        };
                        tw.push(level_of(twin_key, p, i, j, t, big_t) as u32);
                    }
                }
            }
            blocks.push(FeBlock { key: bs.key, level_count: level_count_of(bs.key, ps), index, twin_index: twin });
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut acc = 0;
        for b in &blocks {
            offsets.push(acc);
            acc += b.level_count;
        }
        let constraints = ConstraintSystem::build(&blocks, &offsets, ps)?;
        Ok(Self { spec: spec.clone(), blocks, offsets, constraints })
    }

    pub fn spec(&self) -> &FeSpec {
        &self.spec
    }
    pub fn blocks(&self) -> &[FeBlock] {
        &self.blocks
    }
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
    pub fn constraints(&self) -> &ConstraintSystem {
        &self.constraints
    }
    /// Stacked fixed-effect dimension L.
    pub fn total_levels(&self) -> usize {
        self.blocks.iter().map(|b| b.level_count).sum()
    }
    pub fn has_twin(&self) -> bool {
        self.blocks.iter().any(|b| b.is_twin())
    }

    /// Fixed-effect part of the index, (Dφ)_o, from a stacked vector.
    pub fn fitted<S: crate::Scalar>(&self, phi: &[S], n: usize) -> Vec<S> {
        let mut out = vec![S::zero(); n];
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            for (o, v) in out.iter_mut().enumerate() {
                *v += phi[off + b.level(o)];
                if let Some(l) = b.twin_level(o) {
                    *v += phi[off + l];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDimensions {
    pub total: usize,
    pub per_block: Vec<usize>,
    pub constraints: usize,
}

/// Stacked FE dimension, per-block level counts and number of identification restrictions.
pub fn spec_dimensions(spec: &FeSpec, n1: usize, n2: usize, t: usize) -> Result<SpecDimensions> {
    let ps = build_pair_set(spec.structure(), n1, n2, t)?;
    let design = Design::new(spec, &ps)?;
    Ok(SpecDimensions {
        total: design.total_levels(),
        per_block: design.blocks().iter().map(|b| b.level_count).collect(),
        constraints: design.constraints().count(),
    })
}
