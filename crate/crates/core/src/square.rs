//! Trace data of an inclusion `B ⊂ A` with `B` commutative and `A` type I:
//! `betas[i]` is the trace of the minimal projection `p_i` of `B`,
//! `alphas[j]` the trace of a minimal projection under the central support
//! `q_j` of `A`, and `mult[i][j]` the number of minimal projections of `A`
//! under `p_i q_j`.
//!
//! Indices are 0-based. Index `0` of `I` plays the distinguished role of the
//! first projection `p_1`.

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{ArithError, FreeParam, Scalar};
use crate::sequence::ClosedForm;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum SquareViolation {
    #[error("the index set I is empty")]
    Empty,
    #[error("shape mismatch: {detail}")]
    Shape { detail: String },
    #[error("{what}[{index}] = {value} must be a positive rational")]
    NotPositiveRational { what: String, index: usize, value: String },
    #[error("consistency fails at row {row}: beta = {beta} but sum_j n_ij alpha(j) = {sum}")]
    Inconsistent { row: usize, beta: String, sum: String },
    #[error("the bipartite graph of (I, J) is disconnected (component of row 0 misses {missing})")]
    Disconnected { missing: String },
    #[error("invalid tail: {detail}")]
    Tail { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SquareError {
    #[error(transparent)]
    Invalid(#[from] SquareViolation),
    #[error("no eligible summand for row {0}")]
    NoEligible(usize),
    #[error("gamma selection does not fit the square: {0}")]
    BadSelection(String),
    #[error("{0}")]
    MissingTail(String),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// Declared behaviour of rows `i = n+1, n+2, ...` (1-based, `n` the prefix
/// length) of an infinite index set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareTail {
    pub betas: ClosedForm,
    /// `gamma(i)` for tail rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<ClosedForm>,
    /// `sum_{j in J_i} alpha(j)^2` for tail rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_sq: Option<ClosedForm>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sum_gamma_sq_diverges: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub r_infinite: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutingSquareData {
    pub betas: Vec<Scalar>,
    pub alphas: Vec<Scalar>,
    pub mult: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<SquareTail>,
}

fn rational_entry(what: &str, index: usize, s: &Scalar) -> Result<BigRational, SquareViolation> {
    match s.as_rational() {
        Some(r) if r > &BigRational::zero() => Ok(r.clone()),
        _ => Err(SquareViolation::NotPositiveRational {
            what: what.to_string(),
            index,
            value: s.to_string(),
        }),
    }
}

impl CommutingSquareData {
    pub fn new(betas: Vec<Scalar>, alphas: Vec<Scalar>, mult: Vec<Vec<u32>>) -> Self {
        CommutingSquareData { betas, alphas, mult, tail: None }
    }

    /// `C ⊂ M_K`: one row of trace 1, one summand of minimal trace `1/K`.
    pub fn matrix_algebra(k: u32) -> Self {
        CommutingSquareData::new(
            vec![Scalar::one()],
            vec![Scalar::ratio(1, k as i64)],
            vec![vec![k]],
        )
    }

    pub fn n_rows(&self) -> usize {
        self.betas.len()
    }

    pub fn n_cols(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_infinite(&self) -> bool {
        self.tail.is_some()
    }

    pub fn beta(&self, i: usize) -> BigRational {
        self.betas[i].as_rational().cloned().expect("validated square")
    }

    pub fn alpha(&self, j: usize) -> BigRational {
        self.alphas[j].as_rational().cloned().expect("validated square")
    }

    pub fn beta_rationals(&self) -> Vec<BigRational> {
        (0..self.n_rows()).map(|i| self.beta(i)).collect()
    }

    pub fn support(&self, i: usize) -> Vec<usize> {
        (0..self.n_cols()).filter(|&j| self.mult[i][j] > 0).collect()
    }

    /// Checks shape, positivity, the consistency identity, and connectivity;
    /// reports the first failure.
    pub fn validate(&self) -> Result<(), SquareViolation> {
        let n = self.n_rows();
        if n == 0 {
            return Err(SquareViolation::Empty);
        }
        if self.mult.len() != n {
            return Err(SquareViolation::Shape {
                detail: format!("{} betas but {} multiplicity rows", n, self.mult.len()),
            });
        }
        for (i, row) in self.mult.iter().enumerate() {
            if row.len() != self.n_cols() {
                return Err(SquareViolation::Shape {
                    detail: format!("row {i} has {} entries, expected {}", row.len(), self.n_cols()),
                });
            }
        }
        let betas = self
            .betas
            .iter()
            .enumerate()
            .map(|(i, b)| rational_entry("beta", i, b))
            .collect::<Result<Vec<_>, _>>()?;
        let alphas = self
            .alphas
            .iter()
            .enumerate()
            .map(|(j, a)| rational_entry("alpha", j, a))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, beta) in betas.iter().enumerate() {
            let sum: BigRational = self.mult[i]
                .iter()
                .zip(&alphas)
                .map(|(&n, a)| a * BigRational::from_integer(n.into()))
                .sum();
            if &sum != beta {
                return Err(SquareViolation::Inconsistent {
                    row: i,
                    beta: self.betas[i].to_string(),
                    sum: Scalar::from(sum).to_string(),
                });
            }
        }
        let (rows, cols) = self.component_of_first_row();
        let missing: Vec<String> = (0..n)
            .filter(|i| !rows[*i])
            .map(|i| format!("row {i}"))
            .chain((0..self.n_cols()).filter(|j| !cols[*j]).map(|j| format!("summand {j}")))
            .collect();
        if !missing.is_empty() {
            return Err(SquareViolation::Disconnected { missing: missing.join(", ") });
        }
        if let Some(t) = &self.tail {
            for (name, f) in [("betas", Some(&t.betas)), ("gammas", t.gammas.as_ref()), ("alpha_sq", t.alpha_sq.as_ref())] {
                if let Some(f) = f {
                    f.validate().map_err(|e| SquareViolation::Tail { detail: format!("{name}: {e}") })?;
                }
            }
        }
        Ok(())
    }

    fn component_of_first_row(&self) -> (Vec<bool>, Vec<bool>) {
        let mut rows = vec![false; self.n_rows()];
        let mut cols = vec![false; self.n_cols()];
        let mut stack = vec![0usize];
        rows[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.support(i) {
                if !cols[j] {
                    cols[j] = true;
                    for (k, seen) in rows.iter_mut().enumerate() {
                        if !*seen && self.mult[k][j] > 0 {
                            *seen = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
        (rows, cols)
    }

    /// Rows permuted so that `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> CommutingSquareData {
        CommutingSquareData {
            betas: order.iter().map(|&i| self.betas[i].clone()).collect(),
            alphas: self.alphas.clone(),
            mult: order.iter().map(|&i| self.mult[i].clone()).collect(),
            tail: self.tail.clone(),
        }
    }

    /// Every trace multiplied by `1 / sum(betas)`; finite squares only.
    pub fn normalized(&self) -> CommutingSquareData {
        let total: BigRational = self.beta_rationals().into_iter().sum();
        let scale = |s: &Scalar| Scalar::from(s.as_rational().expect("validated square") / &total);
        CommutingSquareData {
            betas: self.betas.iter().map(scale).collect(),
            alphas: self.alphas.iter().map(scale).collect(),
            mult: self.mult.clone(),
            tail: self.tail.clone(),
        }
    }

    /// The same square with all traces multiplied by `f`.
    pub fn scaled(&self, f: &BigRational) -> CommutingSquareData {
        let scale = |s: &Scalar| Scalar::from(s.as_rational().expect("validated square") * f);
        CommutingSquareData {
            betas: self.betas.iter().map(scale).collect(),
            alphas: self.alphas.iter().map(scale).collect(),
            mult: self.mult.clone(),
            tail: self.tail.clone(),
        }
    }
}

/// Greedy connectivity-respecting order of `I` with row 0 fixed: repeatedly
/// take the smallest unplaced row sharing a summand with a placed row.
pub fn connectivity_order(data: &CommutingSquareData) -> Vec<usize> {
    let n = data.n_rows();
    let mut placed = vec![false; n];
    let mut covered = vec![false; data.n_cols()];
    let mut order = Vec::with_capacity(n);
    let mut place = |i: usize, placed: &mut Vec<bool>, covered: &mut Vec<bool>| {
        placed[i] = true;
        for j in data.support(i) {
            covered[j] = true;
        }
        order.push(i);
    };
    place(0, &mut placed, &mut covered);
    while let Some(i) = (0..n).find(|&i| !placed[i] && data.support(i).iter().any(|&j| covered[j])) {
        place(i, &mut placed, &mut covered);
    }
    order
}

/// A validated square in connectivity order, with the permutation used.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedSquare {
    pub data: CommutingSquareData,
    /// `order[new] = old`.
    pub order: Vec<usize>,
}

pub fn prepare(data: &CommutingSquareData) -> Result<PreparedSquare, SquareViolation> {
    data.validate()?;
    let order = connectivity_order(data);
    Ok(PreparedSquare { data: data.permuted(&order), order })
}

/// `J_m`, `K_m = J_0 ∪ ... ∪ J_m`, and the split of `K_m` by whether the
/// summand meets row `m + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partitions {
    pub j: Vec<Vec<usize>>,
    pub k: Vec<Vec<usize>>,
    pub k1: Vec<Vec<usize>>,
    pub k0: Vec<Vec<usize>>,
}

pub fn compute_partitions(data: &CommutingSquareData) -> Partitions {
    let n = data.n_rows();
    let mut seen = vec![false; data.n_cols()];
    let mut p = Partitions { j: vec![], k: vec![], k1: vec![], k0: vec![] };
    for m in 0..n {
        let jm: Vec<usize> = data.support(m).into_iter().filter(|&j| !seen[j]).collect();
        for &j in &jm {
            seen[j] = true;
        }
        let km: Vec<usize> = (0..data.n_cols()).filter(|&j| seen[j]).collect();
        let (k1, k0): (Vec<usize>, Vec<usize>) = if m + 1 < n {
            km.iter().partition(|&&j| data.mult[m + 1][j] > 0)
        } else {
            (vec![], km.clone())
        };
        p.j.push(jm);
        p.k.push(km);
        p.k1.push(k1);
        p.k0.push(k0);
    }
    p
}

/// `j(m)` for every row `m >= 1`: a summand meeting both row `m` and some
/// earlier row.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GammaSelection {
    /// `choices[m - 1] = j(m)`.
    pub choices: Vec<usize>,
}

impl GammaSelection {
    pub fn j(&self, m: usize) -> usize {
        self.choices[m - 1]
    }

    pub fn gamma(&self, data: &CommutingSquareData, m: usize) -> BigRational {
        data.alpha(self.j(m))
    }

    pub fn gammas(&self, data: &CommutingSquareData) -> Vec<BigRational> {
        (1..data.n_rows()).map(|m| self.gamma(data, m)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    /// Largest `alpha(j)`, ties to the smallest `j`.
    #[default]
    MaxAlpha,
    Explicit(Vec<usize>),
}

pub fn eligible(data: &CommutingSquareData, m: usize) -> Vec<usize> {
    data.support(m)
        .into_iter()
        .filter(|&j| (0..m).any(|i| data.mult[i][j] > 0))
        .collect()
}

pub fn select_gamma(
    data: &CommutingSquareData,
    policy: &GammaPolicy,
) -> Result<GammaSelection, SquareError> {
    let n = data.n_rows();
    match policy {
        GammaPolicy::MaxAlpha => {
            let mut choices = Vec::with_capacity(n.saturating_sub(1));
            for m in 1..n {
                let best = eligible(data, m)
                    .into_iter()
                    .max_by(|&a, &b| data.alpha(a).cmp(&data.alpha(b)).then(b.cmp(&a)))
                    .ok_or(SquareError::NoEligible(m))?;
                choices.push(best);
            }
            Ok(GammaSelection { choices })
        }
        GammaPolicy::Explicit(choices) => {
            if choices.len() + 1 != n {
                return Err(SquareError::BadSelection(format!(
                    "{} choices for {} rows after the first",
                    choices.len(),
                    n - 1
                )));
            }
            for (m, &j) in (1..n).zip(choices) {
                if !eligible(data, m).contains(&j) {
                    return Err(SquareError::BadSelection(format!("summand {j} is not eligible for row {m}")));
                }
            }
            Ok(GammaSelection { choices: choices.clone() })
        }
    }
}

/// Every eligible selection, in lexicographic order.
pub fn all_selections(data: &CommutingSquareData) -> Result<Vec<GammaSelection>, SquareError> {
    let mut out = vec![Vec::new()];
    for m in 1..data.n_rows() {
        let el = eligible(data, m);
        if el.is_empty() {
            return Err(SquareError::NoEligible(m));
        }
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                el.iter().map(move |&j| {
                    let mut v = prefix.clone();
                    v.push(j);
                    v
                })
            })
            .collect();
    }
    Ok(out.into_iter().map(|choices| GammaSelection { choices }).collect())
}

fn sum_sq(data: &CommutingSquareData, js: &[usize]) -> BigRational {
    js.iter().map(|&j| {
        let a = data.alpha(j);
        &a * &a
    }).sum()
}

/// Per-row contributions to `r`, before division by `beta(0)^2`:
/// `beta(0)^2 - sum_{J_0} alpha^2` for the first row and
/// `beta(m)^2 - gamma(m)^2 - sum_{J_m} alpha^2` after it.
pub fn r_contributions(data: &CommutingSquareData, sel: &GammaSelection) -> Vec<BigRational> {
    let parts = compute_partitions(data);
    (0..data.n_rows())
        .map(|m| {
            let b = data.beta(m);
            let mut c = &b * &b - sum_sq(data, &parts.j[m]);
            if m > 0 {
                let g = sel.gamma(data, m);
                c -= &g * &g;
            }
            c
        })
        .collect()
}

/// `r = beta(0)^-2 [ (beta(0)^2 - sum_{J_0} alpha^2) + sum_{m>=1} (beta(m)^2 - gamma(m)^2 - sum_{J_m} alpha^2) ]`.
///
/// With an infinite tail: `+inf` when declared, or when the tail's
/// `sum beta^2` diverges while the gamma and alpha series converge; the
/// exact value when all three tail series have closed-form sums; an error
/// otherwise.
pub fn compute_r(data: &CommutingSquareData, sel: &GammaSelection) -> Result<FreeParam, SquareError> {
    let b0 = data.beta(0);
    let b0_sq = &b0 * &b0;
    let prefix: BigRational = r_contributions(data, sel).into_iter().sum();
    let Some(tail) = &data.tail else {
        return Ok(FreeParam::Finite(prefix / b0_sq));
    };
    if tail.r_infinite {
        return Ok(FreeParam::Infinite);
    }
    let missing = || {
        SquareError::MissingTail(
            "r over an infinite index set needs tail gammas and alpha_sq, or r_infinite".into(),
        )
    };
    let (Some(g), Some(a)) = (&tail.gammas, &tail.alpha_sq) else {
        return Err(missing());
    };
    let b_sq = tail.betas.squared()?;
    let g_sq = g.squared()?;
    let start = data.n_rows() as u64 + 1;
    match (b_sq.series_converges(), g_sq.series_converges(), a.series_converges()) {
        (false, true, true) => Ok(FreeParam::Infinite),
        (true, true, true) => {
            let t = b_sq.series_sum(start)? - g_sq.series_sum(start)? - a.series_sum(start)?;
            Ok(FreeParam::Finite((prefix + t) / b0_sq))
        }
        _ => Err(SquareError::MissingTail(
            "tail series for r are not determined by the declared closed forms; declare r_infinite".into(),
        )),
    }
}

/// Free dimension of `p_m A p_m`: `1 - sum_{j : n_mj > 0} (alpha(j) / beta(m))^2`.
pub fn free_dimension(data: &CommutingSquareData, m: usize) -> BigRational {
    let b = data.beta(m);
    BigRational::one() - sum_sq(data, &data.support(m)) / (&b * &b)
}

/// `sum_i beta(i)^2 - sum_j alpha(j)^2`, i.e. `fdim(A) - fdim(B)` for
/// normalized data.
pub fn beta_alpha_gap(data: &CommutingSquareData) -> BigRational {
    let b: BigRational = data.beta_rationals().iter().map(|b| b * b).sum();
    b - sum_sq(data, &(0..data.n_cols()).collect::<Vec<_>>())
}
