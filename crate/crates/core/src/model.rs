//! LorentzFM and the Euclidean factorization-machine baseline.
//!
//! LorentzFM scores an instance by triangle pooling over every ordered pair
//! of distinct entries, `sum_{i != j} T(v_i, v_j) x_i x_j`. With
//! `p = 1/v_0` and `q = v_{1..}/v_0` the pair score factors as
//! `T = 1 + p_i p_j - p_i - p_j - q_i . q_j`, so the pooled sum reduces to
//! running totals over the entries and costs `O(d k)` instead of `O(d^2 k)`,
//! the same rearrangement the FM baseline uses for its pairwise term.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, LorentzPoint};

/// Half-width of the uniform range for initial spatial coordinates.
pub const INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub field: u32,
    pub index: u32,
    pub value: f64,
}

impl Entry {
    pub fn new(field: u32, index: u32, value: f64) -> Self {
        Entry {
            field,
            index,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseInstance {
    pub entries: Vec<Entry>,
    pub label: u8,
}

impl SparseInstance {
    pub fn new(entries: Vec<Entry>, label: u8) -> Self {
        SparseInstance { entries, label }
    }

    pub fn target(&self) -> f64 {
        f64::from(self.label)
    }

    pub fn validate(&self, count: usize) -> Result<()> {
        for e in &self.entries {
            if e.index as usize >= count {
                return Err(Error::Lookup {
                    index: e.index as usize,
                    count,
                });
            }
        }
        Ok(())
    }
}

/// Row-major `count x dim` table; every row is a point on the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    count: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    /// Rows at the origin.
    pub fn at_origin(count: usize, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        let mut data = vec![0.0; count * dim];
        for row in data.chunks_exact_mut(dim) {
            row[0] = 1.0;
        }
        Ok(EmbeddingTable { count, dim, data })
    }

    /// Spatial coordinates uniform in `[-INIT_RANGE, INIT_RANGE]`, then lifted.
    pub fn init(count: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::at_origin(count, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for row in table.data.chunks_exact_mut(dim) {
            for c in &mut row[1..] {
                *c = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
            }
            geometry::relift(row);
        }
        Ok(table)
    }

    /// Builds a table from raw row-major storage, checking every row.
    pub fn from_raw(count: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        if data.len() != count * dim {
            return Err(Error::Dimension {
                expected: count * dim,
                actual: data.len(),
            });
        }
        for row in data.chunks_exact(dim) {
            LorentzPoint::from_ambient(row.to_vec())?;
        }
        Ok(EmbeddingTable { count, dim, data })
    }

    pub fn from_points(points: &[LorentzPoint]) -> Result<Self> {
        let dim = points.first().map(|p| p.dim()).unwrap_or(2);
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: p.dim(),
                });
            }
            data.extend_from_slice(p.ambient());
        }
        Ok(EmbeddingTable {
            count: points.len(),
            dim,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Ambient dimension `k`; each row has `k - 1` free coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn point(&self, index: usize) -> Result<LorentzPoint> {
        if index >= self.count {
            return Err(Error::Lookup {
                index,
                count: self.count,
            });
        }
        LorentzPoint::from_ambient(self.row(index).to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Raw mutable access; callers must keep rows on the hyperboloid.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn free_parameters(&self) -> usize {
        (self.dim - 1) * self.count
    }

    /// Largest `|<x, x>_L + 1|` over all rows.
    pub fn max_residual(&self) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .map(|r| geometry::manifold_residual(r).abs())
            .fold(0.0, f64::max)
    }
}

/// Pooled triangle score of an instance.
pub fn lfm_forward(inst: &SparseInstance, table: &EmbeddingTable) -> Result<f64> {
    inst.validate(table.count())?;
    Ok(lfm_score(&inst.entries, table))
}

pub fn lfm_predict(inst: &SparseInstance, table: &EmbeddingTable) -> Result<f64> {
    lfm_forward(inst, table).map(sigmoid)
}

/// Unchecked forward over entries with in-range indices.
pub(crate) fn lfm_score(entries: &[Entry], table: &EmbeddingTable) -> f64 {
    let sums = PoolSums::accumulate(entries, table);
    sums.score()
}

struct PoolSums {
    sum_x: f64,
    sum_x2: f64,
    sum_xp: f64,
    sum_x2p: f64,
    sum_x2p2: f64,
    sum_x2q2: f64,
    sum_xq: Vec<f64>,
}

impl PoolSums {
    fn accumulate(entries: &[Entry], table: &EmbeddingTable) -> Self {
        let n = table.dim() - 1;
        let mut s = PoolSums {
            sum_x: 0.0,
            sum_x2: 0.0,
            sum_xp: 0.0,
            sum_x2p: 0.0,
            sum_x2p2: 0.0,
            sum_x2q2: 0.0,
            sum_xq: vec![0.0; n],
        };
        for e in entries {
            let row = table.row(e.index as usize);
            let x = e.value;
            let p = 1.0 / row[0];
            let x2 = x * x;
            s.sum_x += x;
            s.sum_x2 += x2;
            s.sum_xp += x * p;
            s.sum_x2p += x2 * p;
            s.sum_x2p2 += x2 * p * p;
            let mut q2 = 0.0;
            for (acc, &c) in s.sum_xq.iter_mut().zip(&row[1..]) {
                let q = c * p;
                *acc += x * q;
                q2 += q * q;
            }
            s.sum_x2q2 += x2 * q2;
        }
        s
    }

    fn score(&self) -> f64 {
        let pp = self.sum_xp * self.sum_xp - self.sum_x2p2;
        let ones = self.sum_x * self.sum_x - self.sum_x2;
        let qq = self.sum_xq.iter().map(|c| c * c).sum::<f64>() - self.sum_x2q2;
        let lin = 2.0 * (self.sum_xp * self.sum_x - self.sum_x2p);
        pp + ones - qq - lin
    }
}

/// Sparse ambient gradient: one `(feature, dim-vector)` per distinct feature,
/// in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseGrad {
    pub fn get(&self, index: u32) -> Option<&[f64]> {
        self.indices
            .iter()
            .position(|&i| i == index)
            .map(|p| &self.values[p * self.dim..(p + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.indices
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.dim.max(1)))
    }

    fn slot(&mut self, index: u32) -> usize {
        match self.indices.iter().position(|&i| i == index) {
            Some(p) => p,
            None => {
                self.indices.push(index);
                self.values.extend(std::iter::repeat_n(0.0, self.dim));
                self.indices.len() - 1
            }
        }
    }
}

/// BCE-loss gradient with respect to every ambient coordinate of each
/// feature present in the instance, plus the loss itself.
///
/// Coordinates are treated as independent; the optimizer owns the manifold
/// constraint.
pub fn lfm_grad(inst: &SparseInstance, table: &EmbeddingTable) -> Result<(SparseGrad, f64)> {
    inst.validate(table.count())?;
    Ok(lfm_grad_unchecked(inst, table))
}

pub(crate) fn lfm_grad_unchecked(
    inst: &SparseInstance,
    table: &EmbeddingTable,
) -> (SparseGrad, f64) {
    let dim = table.dim();
    let sums = PoolSums::accumulate(&inst.entries, table);
    let score = sums.score();
    let p = sigmoid(score);
    let y = inst.target();
    let residual = p - y;

    let mut grad = SparseGrad {
        dim,
        indices: Vec::with_capacity(inst.entries.len()),
        values: Vec::with_capacity(inst.entries.len() * dim),
    };
    for e in &inst.entries {
        let row = table.row(e.index as usize);
        let x = e.value;
        let inv = 1.0 / row[0];
        // dS/dp_a and dS/dq_a for this occurrence
        let ds_dp = 2.0 * x * ((sums.sum_xp - x * inv) - (sums.sum_x - x));
        let slot = grad.slot(e.index);
        let g = &mut grad.values[slot * dim..(slot + 1) * dim];
        let mut d0 = -ds_dp * inv * inv;
        for ((gi, &c), &tot) in g[1..].iter_mut().zip(&row[1..]).zip(&sums.sum_xq) {
            let ds_dq = -2.0 * x * (tot - x * c * inv);
            *gi += residual * ds_dq * inv;
            d0 -= ds_dq * c * inv * inv;
        }
        g[0] += residual * d0;
    }
    (grad, bce(p, y))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability clamp used by every log-loss computation.
pub const PROB_EPS: f64 = 1e-7;

pub(crate) fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// Parameters of the second-order factorization machine.
#[derive(Debug, Clone, PartialEq)]
pub struct FmParameters {
    pub bias: f64,
    pub linear: Vec<f64>,
    /// Row-major `count x dim`.
    pub factors: Vec<f64>,
    pub dim: usize,
}

impl FmParameters {
    pub fn zeros(count: usize, dim: usize) -> Self {
        FmParameters {
            bias: 0.0,
            linear: vec![0.0; count],
            factors: vec![0.0; count * dim],
            dim,
        }
    }

    /// Factors drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`; bias and
    /// linear weights start at zero.
    pub fn init(count: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Config("factor dimension must be positive".into()));
        }
        let mut params = Self::zeros(count, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in &mut params.factors {
            *f = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
        Ok(params)
    }

    pub fn count(&self) -> usize {
        self.linear.len()
    }

    pub fn factor(&self, index: usize) -> &[f64] {
        &self.factors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn free_parameters(&self) -> usize {
        1 + self.count() + self.factors.len()
    }

    /// Flattened `[bias, linear.., factors..]`, the layout Adam works on.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_parameters());
        out.push(self.bias);
        out.extend_from_slice(&self.linear);
        out.extend_from_slice(&self.factors);
        out
    }

    pub fn from_flat(count: usize, dim: usize, flat: &[f64]) -> Result<Self> {
        let expected = 1 + count + count * dim;
        if flat.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: flat.len(),
            });
        }
        Ok(FmParameters {
            bias: flat[0],
            linear: flat[1..1 + count].to_vec(),
            factors: flat[1 + count..].to_vec(),
            dim,
        })
    }
}

pub fn fm_forward(inst: &SparseInstance, params: &FmParameters) -> Result<f64> {
    inst.validate(params.count())?;
    Ok(fm_score(&inst.entries, params))
}

pub(crate) fn fm_score(entries: &[Entry], params: &FmParameters) -> f64 {
    let mut linear = params.bias;
    let mut sum = vec![0.0; params.dim];
    let mut sq = 0.0;
    for e in entries {
        let i = e.index as usize;
        linear += params.linear[i] * e.value;
        for (s, &f) in sum.iter_mut().zip(params.factor(i)) {
            let v = f * e.value;
            *s += v;
            sq += v * v;
        }
    }
    linear + 0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq)
}

/// Gradient of the FM baseline's BCE loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FmGrad {
    pub bias: f64,
    /// Per distinct feature: linear-weight gradient.
    pub linear: Vec<(u32, f64)>,
    /// Factor gradients aligned with `linear`.
    pub factors: Vec<f64>,
    pub dim: usize,
}

impl FmGrad {
    pub fn factor(&self, slot: usize) -> &[f64] {
        &self.factors[slot * self.dim..(slot + 1) * self.dim]
    }
}

pub fn fm_grad(inst: &SparseInstance, params: &FmParameters) -> Result<(FmGrad, f64)> {
    inst.validate(params.count())?;
    Ok(fm_grad_unchecked(inst, params))
}

pub(crate) fn fm_grad_unchecked(inst: &SparseInstance, params: &FmParameters) -> (FmGrad, f64) {
    let dim = params.dim;
    let mut sum = vec![0.0; dim];
    for e in &inst.entries {
        for (s, &f) in sum.iter_mut().zip(params.factor(e.index as usize)) {
            *s += f * e.value;
        }
    }
    let p = sigmoid(fm_score(&inst.entries, params));
    let y = inst.target();
    let r = p - y;

    let mut grad = FmGrad {
        bias: r,
        linear: Vec::with_capacity(inst.entries.len()),
        factors: Vec::with_capacity(inst.entries.len() * dim),
        dim,
    };
    for e in &inst.entries {
        let slot = match grad.linear.iter().position(|&(i, _)| i == e.index) {
            Some(s) => s,
            None => {
                grad.linear.push((e.index, 0.0));
                grad.factors.extend(std::iter::repeat_n(0.0, dim));
                grad.linear.len() - 1
            }
        };
        grad.linear[slot].1 += r * e.value;
        let f = params.factor(e.index as usize);
        let g = &mut grad.factors[slot * dim..(slot + 1) * dim];
        for ((gi, &s), &fi) in g.iter_mut().zip(&sum).zip(f) {
            *gi += r * e.value * (s - fi * e.value);
        }
    }
    (grad, bce(p, y))
}

/// Which scorer a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    LorentzFm,
    Fm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::LorentzFm => "lorentzfm",
            ModelKind::Fm => "fm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lorentzfm" => Ok(ModelKind::LorentzFm),
            "fm" => Ok(ModelKind::Fm),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Trained parameters of either scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lorentz(EmbeddingTable),
    Fm(FmParameters),
}

impl Model {
    /// Freshly initialised parameters; `dim` is the embedding size `k`.
    pub fn init(kind: ModelKind, count: usize, dim: usize, seed: u64) -> Result<Self> {
        match kind {
            ModelKind::LorentzFm => EmbeddingTable::init(count, dim, seed).map(Model::Lorentz),
            ModelKind::Fm => FmParameters::init(count, dim, seed).map(Model::Fm),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lorentz(_) => ModelKind::LorentzFm,
            Model::Fm(_) => ModelKind::Fm,
        }
    }

    pub fn feature_count(&self) -> usize {
        match self {
            Model::Lorentz(t) => t.count(),
            Model::Fm(p) => p.count(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Lorentz(t) => t.dim(),
            Model::Fm(p) => p.dim,
        }
    }

    pub fn free_parameters(&self) -> usize {
        match self {
            Model::Lorentz(t) => t.free_parameters(),
            Model::Fm(p) => p.free_parameters(),
        }
    }

    /// Largest hyperboloid residual over rows; `None` for the baseline.
    pub fn max_residual(&self) -> Option<f64> {
        match self {
            Model::Lorentz(t) => Some(t.max_residual()),
            Model::Fm(_) => None,
        }
    }

    /// Logit of an instance.
    pub fn forward(&self, inst: &SparseInstance) -> Result<f64> {
        inst.validate(self.feature_count())?;
        Ok(self.score(&inst.entries))
    }

    pub(crate) fn score(&self, entries: &[Entry]) -> f64 {
        match self {
            Model::Lorentz(t) => lfm_score(entries, t),
            Model::Fm(p) => fm_score(entries, p),
        }
    }
}
