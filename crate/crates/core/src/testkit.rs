//! Verification machinery: random instances, the exponent-semantics
//! oracle, closed-form cross-checks and a greedy shrinker.
//!
//! The oracle reads every generic atom `Q` as an interpolated free group
//! factor `L(F_x)` with `x` drawn at random. Agreement under random `x` is
//! a coherence test of the calculus, nothing more.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::{prop21_decompose, prop31_with_selection, thm_subfin, LambdaChoice, PairInput, Prop21Input};
use crate::ir::{exponent_semantics, AlgebraExpr, FactorAtom, FreeProductForm, FspTerm};
use crate::rewrite::{normalize, normalize_with, Strategy};
use crate::scalar::{FreeParam, Scalar};
use crate::square::{all_selections, prepare, CommutingSquareData};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSquareSpec {
    pub seed: u64,
    #[serde(default = "default_rows")]
    pub max_rows: usize,
    #[serde(default = "default_cols")]
    pub max_cols: usize,
    #[serde(default = "default_mult")]
    pub max_mult: u32,
    #[serde(default = "default_den")]
    pub alpha_den: u32,
}

fn default_rows() -> usize {
    6
}
fn default_cols() -> usize {
    8
}
fn default_mult() -> u32 {
    3
}
fn default_den() -> u32 {
    12
}

impl RandomSquareSpec {
    pub fn new(seed: u64) -> Self {
        RandomSquareSpec { seed, max_rows: 6, max_cols: 8, max_mult: 3, alpha_den: 12 }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn random_fraction(r: &mut impl Rng, max_num: i64, max_den: i64) -> BigRational {
    rat(r.gen_range(1..=max_num), r.gen_range(1..=max_den))
}

/// Multiplicities and `alpha`; `beta` is derived, so the trace identity
/// holds by construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareSeed {
    pub mult: Vec<Vec<u32>>,
    pub alphas: Vec<Scalar>,
}

impl SquareSeed {
    pub fn to_square(&self) -> CommutingSquareData {
        let betas = self
            .mult
            .iter()
            .map(|row| {
                let s: BigRational = row
                    .iter()
                    .zip(&self.alphas)
                    .map(|(&k, a)| a.as_rational().cloned().unwrap_or_default() * BigRational::from_integer(k.into()))
                    .sum();
                Scalar::from(s)
            })
            .collect();
        CommutingSquareData::new(betas, self.alphas.clone(), self.mult.clone()).normalized()
    }

    fn is_valid(&self) -> bool {
        !self.mult.is_empty()
            && !self.alphas.is_empty()
            && self.mult.iter().all(|r| r.iter().any(|&k| k > 0))
            && (0..self.alphas.len()).all(|j| self.mult.iter().any(|r| r[j] > 0))
            && self.to_square().validate().is_ok()
    }
}

fn gen_seed(spec: &RandomSquareSpec) -> SquareSeed {
    let mut r = rng(spec.seed);
    loop {
        let n = r.gen_range(1..=spec.max_rows.max(1));
        let k = r.gen_range(1..=spec.max_cols.max(1));
        let mult: Vec<Vec<u32>> =
            (0..n).map(|_| (0..k).map(|_| r.gen_range(0..=spec.max_mult)).collect()).collect();
        let den = i64::from(spec.alpha_den.max(1));
        let alphas = (0..k).map(|_| Scalar::from(random_fraction(&mut r, 2 * den, den))).collect();
        let seed = SquareSeed { mult, alphas };
        if seed.is_valid() {
            return seed;
        }
    }
}

/// Valid, connected, normalized square; rejection-sampled, deterministic per seed.
pub fn gen_square(spec: &RandomSquareSpec) -> CommutingSquareData {
    gen_seed(spec).to_square()
}

/// Normalized beta vector with `m <= max_m` entries and denominators `<= max_den`.
pub fn gen_betas(seed: u64, max_m: usize, max_den: i64) -> Vec<BigRational> {
    let mut r = rng(seed);
    let m = r.gen_range(1..=max_m);
    let raw: Vec<BigRational> = (0..m).map(|_| random_fraction(&mut r, max_den, max_den)).collect();
    let total: BigRational = raw.iter().sum();
    raw.into_iter().map(|b| b / &total).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<FreeParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<String>,
}

impl CheckOutcome {
    fn ok(t: Option<FreeParam>) -> Self {
        CheckOutcome { pass: true, t, diff: None }
    }

    fn fail(diff: impl Into<String>) -> Self {
        CheckOutcome { pass: false, t: None, diff: Some(diff.into()) }
    }
}

fn compare(actual: &FreeProductForm, expected: &FreeProductForm, t: FreeParam) -> CheckOutcome {
    if actual == expected {
        CheckOutcome::ok(Some(t))
    } else {
        CheckOutcome { pass: false, t: Some(t), diff: Some(format!("pipeline {actual}, closed form {expected}")) }
    }
}

/// Compares `prop21` against `N * Q(1)_{1/beta(1)} * ... * L(F_t)` with
/// `t = -m + sum beta(i)^2`, for normalized `beta`.
pub fn cross_check_cor22a(base: &FactorAtom, betas: &[BigRational], atoms: &[FactorAtom]) -> CheckOutcome {
    let total: BigRational = betas.iter().sum();
    if !total.is_one() {
        return CheckOutcome::fail(format!("betas sum to {total}, not 1"));
    }
    let input = Prop21Input {
        base: base.clone(),
        betas: betas.iter().cloned().map(Scalar::from).collect(),
        atoms: atoms.to_vec(),
        tail: None,
    };
    let report = match prop21_decompose(&input) {
        Ok(r) => r,
        Err(e) => return CheckOutcome::fail(e.to_string()),
    };
    let m = betas.len();
    let qs: Vec<FactorAtom> = match atoms.len() {
        0 => (1..=m).map(|i| FactorAtom::generic(format!("Q{i}"))).collect(),
        1 => vec![atoms[0].clone(); m],
        _ => atoms.to_vec(),
    };
    let t = -BigRational::from_integer((m as i64).into()) + betas.iter().map(|b| b * b).sum::<BigRational>();
    let mut expected = vec![base.unit()];
    expected.extend(qs.iter().zip(betas).map(|(q, b)| q.at(Scalar::from(b.recip()))));
    let expected = FreeProductForm::finite(expected, FreeParam::Finite(t.clone()));
    compare(report.result(), &expected, FreeParam::Finite(t))
}

/// Compares `prop31` against `Q(1)_{1/beta(1)} * ... * L(F_t)` with
/// `t = -n + 1 + sum beta^2 - sum alpha^2`, for every eligible gamma selection.
pub fn cross_check_cor32a(square: &CommutingSquareData, atoms: &[FactorAtom]) -> CheckOutcome {
    let data = square.normalized();
    let n = data.n_rows();
    let qs: Vec<FactorAtom> = match atoms.len() {
        0 => (1..=n).map(|i| FactorAtom::generic(format!("Q{i}"))).collect(),
        1 => vec![atoms[0].clone(); n],
        _ => atoms.to_vec(),
    };
    let betas = data.beta_rationals();
    let b2: BigRational = betas.iter().map(|b| b * b).sum();
    let a2: BigRational = (0..data.n_cols()).map(|j| data.alpha(j) * data.alpha(j)).sum();
    let t = BigRational::from_integer((1 - n as i64).into()) + b2 - a2;
    let expected = FreeProductForm::finite(
        qs.iter().zip(&betas).map(|(q, b)| q.at(Scalar::from(b.recip()))).collect(),
        FreeParam::Finite(t.clone()),
    );
    let prepared = match prepare(&data) {
        Ok(p) => p,
        Err(e) => return CheckOutcome::fail(e.to_string()),
    };
    let rows: Vec<AlgebraExpr> = prepared.order.iter().map(|&i| AlgebraExpr::unit_atom(&qs[i])).collect();
    let selections = match all_selections(&prepared.data) {
        Ok(s) => s,
        Err(e) => return CheckOutcome::fail(e.to_string()),
    };
    for sel in &selections {
        let report = match prop31_with_selection(&prepared, sel, &rows, None, serde_json::Value::Null, false) {
            Ok(r) => r,
            Err(e) => return CheckOutcome::fail(format!("selection {:?}: {e}", sel.choices)),
        };
        let out = compare(report.result(), &expected, FreeParam::Finite(t.clone()));
        if !out.pass {
            let diff = out.diff.unwrap_or_default();
            return CheckOutcome { diff: Some(format!("selection {:?}: {diff}", sel.choices)), ..out };
        }
    }
    CheckOutcome::ok(Some(FreeParam::Finite(t)))
}

/// Random values `x > 1` for every generic atom.
pub fn random_assignment(exprs: &[&AlgebraExpr], r: &mut impl Rng) -> BTreeMap<String, BigRational> {
    let mut out = BTreeMap::new();
    for e in exprs {
        if let Ok(decls) = e.atom_declarations() {
            for id in decls.keys() {
                out.entry(id.clone())
                    .or_insert_with(|| BigRational::one() + random_fraction(&mut *r, 40, 12));
            }
        }
    }
    out
}

/// Equal semantics at `trials` random assignments and identical normal forms.
pub fn semantic_diff(e1: &AlgebraExpr, e2: &AlgebraExpr, trials: usize, seed: u64) -> CheckOutcome {
    let mut r = rng(seed);
    for i in 0..trials {
        let assign = random_assignment(&[e1, e2], &mut r);
        match (exponent_semantics(e1, &assign), exponent_semantics(e2, &assign)) {
            (Ok(a), Ok(b)) if a == b => {}
            (Ok(a), Ok(b)) => return CheckOutcome::fail(format!("trial {i}: {a} vs {b}")),
            (Err(e), _) | (_, Err(e)) => return CheckOutcome::fail(format!("trial {i}: {e}")),
        }
    }
    match (normalize(e1), normalize(e2)) {
        (Ok(a), Ok(b)) if a.form == b.form => CheckOutcome::ok(None),
        (Ok(a), Ok(b)) => CheckOutcome::fail(format!("normal forms {} vs {}", a.form, b.form)),
        (Err(e), _) | (_, Err(e)) => CheckOutcome::fail(e.to_string()),
    }
}

fn random_scale(r: &mut impl Rng) -> Scalar {
    if r.gen_bool(0.15) {
        // an irrational scale whose square is rational
        let sq = random_fraction(r, 8, 4);
        Scalar::from_square(sq).expect("positive square")
    } else {
        Scalar::from(random_fraction(r, 6, 4))
    }
}

/// Finite expression of depth at most `depth` over atoms `Q1..Q3` and a
/// free-group atom.
pub fn gen_expr(r: &mut impl Rng, depth: usize) -> AlgebraExpr {
    let atoms = [
        FactorAtom::generic("Q1"),
        FactorAtom::generic("Q2"),
        FactorAtom::generic("Q3"),
        FactorAtom::free_group("F", FreeParam::ratio(5, 2)).expect("valid parameter"),
    ];
    if depth == 0 || r.gen_bool(0.3) {
        return if r.gen_bool(0.8) {
            let a = &atoms[r.gen_range(0..atoms.len())];
            let s = if r.gen_bool(0.5) { Scalar::one() } else { random_scale(r) };
            AlgebraExpr::Atom(a.at(s))
        } else {
            let t = rat(r.gen_range(-6..=12), r.gen_range(1..=4));
            AlgebraExpr::lf(FreeParam::Finite(t))
        };
    }
    match r.gen_range(0..3) {
        0 => {
            let n = r.gen_range(1..=3);
            AlgebraExpr::join((0..n).map(|_| gen_expr(r, depth - 1)).collect())
        }
        1 => {
            let base = gen_expr(r, depth - 1);
            let n = r.gen_range(0..=2);
            let terms = (0..n).map(|_| FspTerm::new(random_scale(r), gen_expr(r, depth - 1))).collect();
            AlgebraExpr::fsp(base, terms)
        }
        _ => AlgebraExpr::rescale(gen_expr(r, depth - 1), random_scale(r)),
    }
}

/// Innermost and randomized rule orders agree, and the normal form keeps
/// the semantics of the input.
pub fn check_confluence(expr: &AlgebraExpr, seed: u64, orders: usize) -> CheckOutcome {
    let reference = match normalize_with(expr, Strategy::Innermost) {
        Ok(n) => n.form,
        Err(e) => return CheckOutcome::fail(format!("{expr}: {e}")),
    };
    for k in 0..orders {
        let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64);
        match normalize_with(expr, Strategy::Random(s)) {
            Ok(n) if n.form == reference => {}
            Ok(n) => return CheckOutcome::fail(format!("{expr}: {reference} vs {}", n.form)),
            Err(e) => return CheckOutcome::fail(format!("{expr}: {e}")),
        }
    }
    semantic_diff(expr, &reference.to_expr(), 2, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    #[serde(rename = "cor22A")]
    Cor22A,
    #[serde(rename = "cor32A")]
    Cor32A,
    #[serde(rename = "confluence")]
    Confluence,
    #[serde(rename = "gamma-independence")]
    GammaIndependence,
    #[serde(rename = "scale-invariance")]
    ScaleInvariance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyJob {
    pub suite: Suite,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cases")]
    pub cases: usize,
}

fn default_cases() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub case: usize,
    pub detail: String,
    /// Smallest failing instance found by shrinking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shrunk: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub cases: usize,
    pub passed: usize,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Per-case seed derived from the master seed.
pub fn case_seed(master: u64, case: usize) -> u64 {
    let mut r = rng(master ^ (case as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    r.gen()
}

fn gamma_independent(square: &CommutingSquareData) -> CheckOutcome {
    let prepared = match prepare(square) {
        Ok(p) => p,
        Err(e) => return CheckOutcome::fail(e.to_string()),
    };
    let q = FactorAtom::generic("Q");
    let rows = vec![AlgebraExpr::unit_atom(&q); square.n_rows()];
    let mut first: Option<FreeProductForm> = None;
    let selections = match all_selections(&prepared.data) {
        Ok(s) => s,
        Err(e) => return CheckOutcome::fail(e.to_string()),
    };
    for sel in selections {
        let corner = match prop31_with_selection(&prepared, &sel, &rows, None, serde_json::Value::Null, false) {
            Ok(r) => r.corner,
            Err(e) => return CheckOutcome::fail(e.to_string()),
        };
        match &first {
            None => first = Some(corner),
            Some(f) if *f == corner => {}
            Some(f) => return CheckOutcome::fail(format!("selection {:?}: {corner} vs {f}", sel.choices)),
        }
    }
    CheckOutcome::ok(None)
}

fn scale_invariant(square: &CommutingSquareData, factor: &BigRational) -> CheckOutcome {
    let run = |s: &CommutingSquareData| {
        thm_subfin(&PairInput::new(s.clone(), CommutingSquareData::matrix_algebra(2)), &LambdaChoice::default())
            .map(|r| (r.level0.result().clone(), r.p0))
    };
    match (run(square), run(&square.scaled(factor))) {
        (Ok(a), Ok(b)) if a == b => CheckOutcome::ok(None),
        (Ok(a), Ok(b)) => CheckOutcome::fail(format!("factor {factor}: {} vs {}", a.1, b.1)),
        (Err(e), _) | (_, Err(e)) => CheckOutcome::fail(e.to_string()),
    }
}

pub fn run_suite(job: &VerifyJob) -> SuiteReport {
    let mut failures = Vec::new();
    for case in 0..job.cases {
        let seed = case_seed(job.seed, case);
        let (outcome, shrunk) = match job.suite {
            Suite::Cor22A => {
                let betas = gen_betas(seed, 6, 12);
                let check = |b: &Vec<BigRational>| cross_check_cor22a(&FactorAtom::generic("N"), b, &[]);
                let out = check(&betas);
                let shrunk = (!out.pass).then(|| serde_json::json!(shrink_betas(betas, |b| !check(b).pass)
                    .iter()
                    .map(|b| Scalar::from(b.clone()).to_string())
                    .collect::<Vec<_>>()));
                (out, shrunk)
            }
            Suite::Cor32A | Suite::GammaIndependence | Suite::ScaleInvariance => {
                let square_seed = gen_seed(&RandomSquareSpec::new(seed));
                let factor = random_fraction(&mut rng(seed), 9, 7);
                let check = |s: &SquareSeed| match job.suite {
                    Suite::Cor32A => cross_check_cor32a(&s.to_square(), &[]),
                    Suite::GammaIndependence => gamma_independent(&s.to_square()),
                    _ => scale_invariant(&s.to_square(), &factor),
                };
                let out = check(&square_seed);
                let shrunk = (!out.pass).then(|| {
                    let s = shrink_square(square_seed, |s| !check(s).pass);
                    serde_json::to_value(s.to_square()).expect("squares serialize")
                });
                (out, shrunk)
            }
            Suite::Confluence => {
                let expr = gen_expr(&mut rng(seed), 5);
                let out = check_confluence(&expr, seed, 2);
                let shrunk = (!out.pass).then(|| serde_json::to_value(&expr).expect("expressions serialize"));
                (out, shrunk)
            }
        };
        if !outcome.pass {
            failures.push(Failure { case, detail: outcome.diff.unwrap_or_default(), shrunk });
        }
    }
    SuiteReport { suite: job.suite, seed: job.seed, cases: job.cases, passed: job.cases - failures.len(), failures }
}

/// Greedy shrinking: keep taking the first candidate that still fails.
pub fn shrink<T: Clone>(mut x: T, candidates: impl Fn(&T) -> Vec<T>, fails: impl Fn(&T) -> bool) -> T {
    'outer: loop {
        for c in candidates(&x) {
            if fails(&c) {
                x = c;
                continue 'outer;
            }
        }
        return x;
    }
}

/// Fewer entries first, then unit weights.
pub fn shrink_betas(betas: Vec<BigRational>, fails: impl Fn(&Vec<BigRational>) -> bool) -> Vec<BigRational> {
    let renorm = |v: Vec<BigRational>| {
        let total: BigRational = v.iter().sum();
        v.into_iter().map(|b| b / &total).collect::<Vec<_>>()
    };
    shrink(
        betas,
        |b| {
            let mut out = Vec::new();
            if b.len() > 1 {
                for i in 0..b.len() {
                    let mut c = b.clone();
                    c.remove(i);
                    out.push(renorm(c));
                }
            }
            for i in 0..b.len() {
                if !b[i].denom().is_one() || !b[i].numer().is_one() {
                    let mut c = b.clone();
                    c[i] = BigRational::one() / BigRational::from_integer(b.len().into());
                    if c != *b {
                        out.push(renorm(c));
                    }
                }
            }
            out
        },
        fails,
    )
}

/// Fewer rows, then smaller alpha denominators, then smaller multiplicities.
pub fn shrink_square(seed: SquareSeed, fails: impl Fn(&SquareSeed) -> bool) -> SquareSeed {
    shrink(
        seed,
        |s| {
            let mut out = Vec::new();
            for i in 0..s.mult.len() {
                if s.mult.len() > 1 {
                    let mut c = s.clone();
                    c.mult.remove(i);
                    out.push(drop_unused_columns(c));
                }
            }
            for j in 0..s.alphas.len() {
                let one = Scalar::one();
                if s.alphas[j] != one {
                    let mut c = s.clone();
                    c.alphas[j] = one;
                    out.push(c);
                }
            }
            for i in 0..s.mult.len() {
                for j in 0..s.alphas.len() {
                    if s.mult[i][j] > 1 {
                        let mut c = s.clone();
                        c.mult[i][j] -= 1;
                        out.push(c);
                    }
                }
            }
            out.retain(SquareSeed::is_valid);
            out
        },
        fails,
    )
}

fn drop_unused_columns(mut s: SquareSeed) -> SquareSeed {
    let keep: Vec<usize> = (0..s.alphas.len()).filter(|&j| s.mult.iter().any(|r| r[j] > 0)).collect();
    s.alphas = keep.iter().map(|&j| s.alphas[j].clone()).collect();
    s.mult = s.mult.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_squares_are_valid_and_deterministic() {
        for seed in 0..50 {
            let spec = RandomSquareSpec::new(seed);
            let s = gen_square(&spec);
            assert!(s.validate().is_ok());
            assert_eq!(s, gen_square(&spec));
            assert!(s.beta_rationals().iter().sum::<BigRational>().is_one());
        }
        let small = RandomSquareSpec { max_rows: 2, ..RandomSquareSpec::new(0) };
        assert!(gen_square(&small).n_rows() <= 2);
    }

    #[test]
    fn single_row_cross_check_examples() {
        let n = FactorAtom::generic("N");
        let out = cross_check_cor22a(&n, &[rat(1, 3), rat(2, 3)], &[]);
        assert!(out.pass);
        assert_eq!(out.t, Some(FreeParam::ratio(-13, 9)));
        let out = cross_check_cor22a(&n, &[rat(1, 2), rat(1, 2)], &[]);
        assert_eq!(out.t, Some(FreeParam::ratio(-3, 2)));
        let out = cross_check_cor22a(&n, &[BigRational::one()], &[]);
        assert_eq!(out.t, Some(FreeParam::zero()));
    }

    #[test]
    fn square_cross_check_examples() {
        let worked = CommutingSquareData::new(
            vec![Scalar::ratio(1, 3), Scalar::ratio(2, 3)],
            vec![Scalar::ratio(1, 3), Scalar::ratio(1, 3)],
            vec![vec![1, 0], vec![1, 1]],
        );
        let out = cross_check_cor32a(&worked, &[]);
        assert!(out.pass, "{:?}", out.diff);
        assert_eq!(out.t, Some(FreeParam::ratio(-2, 3)));
        for k in 2..6 {
            let out = cross_check_cor32a(&CommutingSquareData::matrix_algebra(k), &[]);
            assert_eq!(out.t, Some(FreeParam::Finite(BigRational::one() - rat(1, i64::from(k * k)))));
        }
    }

    #[test]
    fn semantic_diff_detects_mutations() {
        let q = FactorAtom::generic("Q");
        let e = AlgebraExpr::term(Scalar::int(2), AlgebraExpr::unit_atom(&q));
        assert!(semantic_diff(&e, &e, 5, 1).pass);
        let flat = AlgebraExpr::join(vec![
            AlgebraExpr::Atom(q.at(Scalar::ratio(1, 2))),
            AlgebraExpr::lf(FreeParam::int(3)),
        ]);
        assert!(semantic_diff(&e, &flat, 5, 1).pass);
        let perturbed = AlgebraExpr::join(vec![
            AlgebraExpr::Atom(q.at(Scalar::ratio(1, 2))),
            AlgebraExpr::lf(FreeParam::ratio(7, 2)),
        ]);
        assert!(!semantic_diff(&e, &perturbed, 5, 1).pass);
    }

    #[test]
    fn shrinker_reaches_a_minimal_failure() {
        let seed = SquareSeed {
            mult: vec![vec![2, 1, 0], vec![0, 3, 1], vec![1, 0, 2]],
            alphas: vec![Scalar::ratio(3, 7), Scalar::ratio(5, 4), Scalar::ratio(2, 9)],
        };
        // "fails" whenever some multiplicity exceeds 1
        let shrunk = shrink_square(seed, |s| s.mult.iter().flatten().any(|&k| k > 1));
        assert_eq!(shrunk.mult.len(), 1);
        assert!(shrunk.alphas.iter().all(|a| a.is_one()));
        assert_eq!(shrunk.mult[0].iter().max(), Some(&2));
    }

    #[test]
    fn small_suites_pass() {
        for suite in [Suite::Cor22A, Suite::Cor32A, Suite::Confluence, Suite::GammaIndependence, Suite::ScaleInvariance] {
            let rep = run_suite(&VerifyJob { suite, seed: 7, cases: 20 });
            assert!(rep.all_passed(), "{suite:?}: {:?}", rep.failures);
        }
    }
}
