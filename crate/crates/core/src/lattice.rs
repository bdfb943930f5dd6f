//! Commuting-square data from bipartite inclusion graphs.
//!
//! Convention: `Gamma` has even vertices as rows and odd vertices as
//! columns, `Gamma Gamma^t s = mu s` with `mu = |Gamma|^2`, and the weights
//! are normalized so the distinguished vertex has weight 1. The square has
//! `beta = s` on even vertices and `alpha = Gamma^t s / mu` on odd ones, so
//! `beta = Gamma alpha` holds by construction.
//!
//! Weights are computed in floating point and promoted to exact rationals
//! only when a small-denominator candidate satisfies the eigen-equation
//! exactly. Everything else stays tagged inexact.

use std::collections::VecDeque;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::square::CommutingSquareData;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: u64 = 1_000_000;
/// Tolerance for consistency checks on inexact data.
pub const INEXACT_TOL: f64 = 1e-9;
const MAX_DENOMINATOR: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("graph is disconnected: {0} unreachable")]
    Disconnected(String),
    #[error("degenerate inclusion: {0}")]
    Degenerate(String),
    #[error("power iteration did not converge in {iterations} steps (last change {change:e})")]
    NonConvergence { iterations: u64, change: f64 },
    #[error("trace identity fails at row {row}: residual {residual:e}")]
    Inconsistent { row: usize, residual: f64 },
}

/// Vertex names; JSON accepts strings or integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct VertexId(pub String);

impl<'de> Deserialize<'de> for VertexId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) => Ok(VertexId(s)),
            serde_json::Value::Number(n) => Ok(VertexId(n.to_string())),
            other => Err(serde::de::Error::custom(format!("vertex id must be a string or integer, got {other}"))),
        }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        VertexId(s.to_string())
    }
}

/// Edges are `[even index, odd index, multiplicity]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BipartiteGraph {
    pub even: Vec<VertexId>,
    pub odd: Vec<VertexId>,
    pub edges: Vec<(usize, usize, u32)>,
    pub star: VertexId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Even,
    Odd,
}

impl BipartiteGraph {
    /// The path `A_n` on `n` vertices, split by parity, star at an end.
    pub fn path(n: usize) -> Self {
        assert!(n >= 2, "A_n needs at least two vertices");
        let even: Vec<VertexId> = (0..n).step_by(2).map(|v| VertexId(format!("v{v}"))).collect();
        let odd: Vec<VertexId> = (1..n).step_by(2).map(|v| VertexId(format!("v{v}"))).collect();
        let edges = (0..n - 1)
            .map(|v| if v % 2 == 0 { (v / 2, v / 2, 1) } else { (v.div_ceil(2), v / 2, 1) })
            .collect();
        BipartiteGraph { even, odd, edges, star: VertexId("v0".into()) }
    }

    /// One edge of multiplicity `k`: the inclusion `C in M_k`.
    pub fn multi_edge(k: u32) -> Self {
        BipartiteGraph {
            even: vec!["a".into()],
            odd: vec!["b".into()],
            edges: vec![(0, 0, k)],
            star: "a".into(),
        }
    }

    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut m = vec![vec![0u32; self.odd.len()]; self.even.len()];
        for &(i, j, k) in &self.edges {
            m[i][j] += k;
        }
        m
    }

    pub fn star_position(&self) -> Result<(Side, usize), LatticeError> {
        if let Some(i) = self.even.iter().position(|v| v == &self.star) {
            return Ok((Side::Even, i));
        }
        if let Some(j) = self.odd.iter().position(|v| v == &self.star) {
            return Ok((Side::Odd, j));
        }
        Err(LatticeError::Invalid(format!("star `{}` is not a vertex", self.star)))
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        if self.even.is_empty() || self.odd.is_empty() {
            return Err(LatticeError::Invalid("both sides need vertices".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in self.even.iter().chain(&self.odd) {
            if !seen.insert(v) {
                return Err(LatticeError::Invalid(format!("duplicate vertex `{v}`")));
            }
        }
        for &(i, j, k) in &self.edges {
            if i >= self.even.len() || j >= self.odd.len() {
                return Err(LatticeError::Invalid(format!("edge [{i}, {j}] out of range")));
            }
            if k == 0 {
                return Err(LatticeError::Invalid(format!("edge [{i}, {j}] has multiplicity 0")));
            }
        }
        self.star_position()?;
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), LatticeError> {
        let adj = self.adjacency();
        let (ne, no) = (self.even.len(), self.odd.len());
        let mut seen_e = vec![false; ne];
        let mut seen_o = vec![false; no];
        let mut queue = VecDeque::from([(Side::Even, 0usize)]);
        seen_e[0] = true;
        while let Some((side, v)) = queue.pop_front() {
            match side {
                Side::Even => {
                    for j in 0..no {
                        if adj[v][j] > 0 && !seen_o[j] {
                            seen_o[j] = true;
                            queue.push_back((Side::Odd, j));
                        }
                    }
                }
                Side::Odd => {
                    for i in 0..ne {
                        if adj[i][v] > 0 && !seen_e[i] {
                            seen_e[i] = true;
                            queue.push_back((Side::Even, i));
                        }
                    }
                }
            }
        }
        let missing: Vec<String> = self
            .even
            .iter()
            .zip(&seen_e)
            .chain(self.odd.iter().zip(&seen_o))
            .filter(|(_, s)| !**s)
            .map(|(v, _)| v.to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(LatticeError::Disconnected(missing.join(", ")))
        }
    }
}

/// Perron–Frobenius data. `exact_*` are present when the weights are
/// rational and satisfy the eigen-equation exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub even: Vec<f64>,
    /// `Gamma^t s / sqrt(mu)`, the odd half of the adjacency eigenvector.
    pub odd: Vec<f64>,
    /// Estimate of `mu = |Gamma|^2`.
    pub eigenvalue: f64,
    /// `|Gamma Gamma^t s - mu s|_inf / |s|_inf`.
    pub error_bound: f64,
    pub iterations: u64,
    pub exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_even: Option<Vec<Scalar>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_eigenvalue: Option<Scalar>,
}

fn gram(adj: &[Vec<u32>]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut g = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            g[a][b] = adj[a].iter().zip(&adj[b]).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
        }
    }
    g
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Power iteration on `Gamma Gamma^t`. The matrix is nonnegative with a
/// positive diagonal, so connectivity makes it primitive and the iteration
/// converges to the positive eigenvector.
pub fn pf_weights(graph: &BipartiteGraph, tol: f64, max_iter: u64) -> Result<WeightVector, LatticeError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(LatticeError::Invalid(format!("tolerance {tol} must be positive")));
    }
    graph.validate()?;
    let adj = graph.adjacency();
    let g = gram(&adj);
    let n = adj.len();
    let mut s = vec![1.0 / n as f64; n];
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut next = mat_vec(&g, &s);
        let norm = sup_norm(&next);
        next.iter_mut().for_each(|x| *x /= norm);
        change = next.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        s = next;
        if change < tol {
            break;
        }
    }
    if change >= tol {
        return Err(LatticeError::NonConvergence { iterations, change });
    }
    let gs = mat_vec(&g, &s);
    let mu = gs.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|x| x * x).sum::<f64>();

    let (side, star) = graph.star_position()?;
    let odd_of = |s: &[f64]| -> Vec<f64> {
        (0..graph.odd.len())
            .map(|j| (0..n).map(|i| f64::from(adj[i][j]) * s[i]).sum::<f64>() / mu.sqrt())
            .collect()
    };
    let pivot = match side {
        Side::Even => s[star],
        Side::Odd => odd_of(&s)[star],
    };
    s.iter_mut().for_each(|x| *x /= pivot);
    let odd = odd_of(&s);
    let residual: Vec<f64> = mat_vec(&g, &s).iter().zip(&s).map(|(a, b)| a - mu * b).collect();
    let error_bound = sup_norm(&residual) / sup_norm(&s);

    let exact = exact_weights(&adj, &s, mu);
    Ok(WeightVector {
        even: s,
        odd,
        eigenvalue: mu,
        error_bound,
        iterations,
        exact: exact.is_some(),
        exact_even: exact.as_ref().map(|(s, _)| s.iter().cloned().map(Scalar::from).collect()),
        exact_eigenvalue: exact.map(|(_, mu)| Scalar::from(mu)),
    })
}

/// Best rational approximation with denominator at most `max_den`.
pub fn rationalize(x: f64, max_den: i64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor();
        if a.abs() > 1e15 {
            break;
        }
        let a = a as i64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = v - a as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        v = 1.0 / frac;
    }
    (k1 != 0).then(|| BigRational::new(BigInt::from(h1), BigInt::from(k1)))
}

fn exact_weights(adj: &[Vec<u32>], s: &[f64], mu: f64) -> Option<(Vec<BigRational>, BigRational)> {
    let sr: Vec<BigRational> = s.iter().map(|&x| rationalize(x, MAX_DENOMINATOR)).collect::<Option<_>>()?;
    let mur = rationalize(mu, MAX_DENOMINATOR)?;
    if sr.iter().any(|x| !x.is_positive()) {
        return None;
    }
    let n = adj.len();
    for a in 0..n {
        let lhs: BigRational = (0..n)
            .map(|b| {
                let gab: u64 = adj[a].iter().zip(&adj[b]).map(|(&x, &y)| u64::from(x) * u64::from(y)).sum();
                &sr[b] * BigRational::from_integer(gab.into())
            })
            .sum();
        if lhs != &mur * &sr[a] {
            return None;
        }
    }
    Some((sr, mur))
}

/// Square data from a weighted inclusion. Exact weights give a
/// [`CommutingSquareData`]; inexact ones carry floating values only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestedSquare {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub mult: Vec<Vec<u32>>,
    /// Row order relative to the graph's even vertices; the star's row comes first.
    pub rows: Vec<VertexId>,
    pub exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<CommutingSquareData>,
    /// Largest `|beta(i) - sum_j n_ij alpha(j)|` relative to `max beta`.
    pub residual: f64,
}

impl IngestedSquare {
    pub fn normalized_betas(&self) -> Vec<f64> {
        let total: f64 = self.betas.iter().sum();
        self.betas.iter().map(|b| b / total).collect()
    }

    /// `sum beta^2 - sum alpha^2` after normalizing `sum beta = 1`.
    pub fn beta_alpha_gap(&self) -> f64 {
        let total: f64 = self.betas.iter().sum();
        let b2: f64 = self.betas.iter().map(|b| (b / total).powi(2)).sum();
        let a2: f64 = self.alphas.iter().map(|a| (a / total).powi(2)).sum();
        b2 - a2
    }
}

pub fn square_from_inclusion(graph: &BipartiteGraph, weights: &WeightVector) -> Result<IngestedSquare, LatticeError> {
    graph.validate()?;
    let adj = graph.adjacency();
    if adj.len() == 1 && adj[0].len() == 1 && adj[0][0] == 1 {
        return Err(LatticeError::Degenerate("a single simple edge gives C = C".into()));
    }
    if weights.even.len() != adj.len() {
        return Err(LatticeError::Invalid("weight vector does not match the graph".into()));
    }
    let mut order: Vec<usize> = (0..adj.len()).collect();
    if let (Side::Even, star) = graph.star_position()? {
        order.retain(|&i| i != star);
        order.insert(0, star);
    }
    let mult: Vec<Vec<u32>> = order.iter().map(|&i| adj[i].clone()).collect();
    let rows: Vec<VertexId> = order.iter().map(|&i| graph.even[i].clone()).collect();
    let mu = weights.eigenvalue;
    let betas: Vec<f64> = order.iter().map(|&i| weights.even[i]).collect();
    let alphas: Vec<f64> = (0..graph.odd.len())
        .map(|j| (0..mult.len()).map(|i| f64::from(mult[i][j]) * betas[i]).sum::<f64>() / mu)
        .collect();
    let scale = betas.iter().fold(0.0, |m: f64, b| m.max(*b));
    let mut residual: f64 = 0.0;
    for (i, row) in mult.iter().enumerate() {
        let sum: f64 = row.iter().zip(&alphas).map(|(&k, a)| f64::from(k) * a).sum();
        let r = (sum - betas[i]).abs() / scale;
        residual = residual.max(r);
        if r > INEXACT_TOL {
            return Err(LatticeError::Inconsistent { row: i, residual: r });
        }
    }
    let data = match (&weights.exact_even, &weights.exact_eigenvalue) {
        (Some(s), Some(mu)) => Some(exact_square(s, mu, &order, &mult)?),
        _ => None,
    };
    Ok(IngestedSquare { betas, alphas, mult, rows, exact: data.is_some(), data, residual })
}

fn exact_square(
    s: &[Scalar],
    mu: &Scalar,
    order: &[usize],
    mult: &[Vec<u32>],
) -> Result<CommutingSquareData, LatticeError> {
    let bad = |e: crate::scalar::ArithError| LatticeError::Invalid(e.to_string());
    let mu = mu.to_rational().map_err(bad)?;
    let betas: Vec<BigRational> =
        order.iter().map(|&i| s[i].to_rational()).collect::<Result<_, _>>().map_err(bad)?;
    let n_cols = mult.first().map_or(0, Vec::len);
    let alphas: Vec<BigRational> = (0..n_cols)
        .map(|j| {
            let sum: BigRational =
                mult.iter().zip(&betas).map(|(row, b)| b * BigRational::from_integer(row[j].into())).sum();
            sum / &mu
        })
        .collect();
    let data = CommutingSquareData::new(
        betas.into_iter().map(Scalar::from).collect(),
        alphas.into_iter().map(Scalar::from).collect(),
        mult.to_vec(),
    )
    .normalized();
    data.validate().map_err(|v| LatticeError::Invalid(v.to_string()))?;
    Ok(data)
}

/// `4 cos^2(pi / (n + 1))`, the squared norm of `A_n`.
pub fn path_norm_sq(n: usize) -> f64 {
    let c = (std::f64::consts::PI / (n as f64 + 1.0)).cos();
    4.0 * c * c
}

/// Fraction to float for comparisons against inexact data.
pub fn to_f64(r: &BigRational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}
