//! Corner decompositions of amalgamated free products over a commutative
//! algebra, and the subfactor parameters built from them.
//!
//! Every pipeline builds the free scaled product expression for the corner
//! cut by the first minimal projection, normalizes it with the rewrite
//! engine, and, where a closed form exists, compares against it exactly.
//!
//! Scales come out in the orientation `beta(1)/beta(i)`: a term
//! `[g/beta(1)]{Q_{g/beta(i)}}` flattens to `Q_{beta(1)/beta(i)}` whatever
//! `g` is.

use std::collections::BTreeSet;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{validity_check, AlgebraExpr, AtomFamily, FactorAtom, FreeProductForm, FspTerm};
use crate::rewrite::{
    normalize, rescale, solve_lambda_zero_excess, DerivationTrace, Normalizer, RewriteError, Strategy,
};
use crate::scalar::{ArithError, FreeParam, Scalar};
use crate::sequence::ClosedForm;
use crate::square::{
    beta_alpha_gap, compute_r, prepare, select_gamma, CommutingSquareData, GammaPolicy,
    GammaSelection, PreparedSquare, SquareError, SquareViolation,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecompError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid square: {0}")]
    Square(#[from] SquareViolation),
    #[error(transparent)]
    SquareOp(#[from] SquareError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error("not covered: {0}")]
    NotCovered(String),
    #[error("depth mismatch: {0}")]
    Depth(String),
    #[error("atom `{0}` must be declared with fundamental_group_all_positive")]
    MissingFlag(String),
    #[error("lambda: {0}")]
    Lambda(String),
    #[error("pipeline and closed form disagree: {0}")]
    CrossCheck(String),
}

impl From<ArithError> for DecompError {
    fn from(e: ArithError) -> Self {
        DecompError::Rewrite(RewriteError::Arith(e))
    }
}

impl DecompError {
    /// Input that fails validation, as opposed to valid input outside the
    /// calculus.
    pub fn is_schema(&self) -> bool {
        match self {
            DecompError::Input(_) | DecompError::Square(_) => true,
            DecompError::SquareOp(e) => {
                matches!(e, SquareError::Invalid(_) | SquareError::BadSelection(_) | SquareError::MissingTail(_))
            }
            DecompError::Rewrite(RewriteError::Ir(_)) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ambient {
    #[serde(rename = "II1")]
    TypeII1,
    #[serde(rename = "IIinf")]
    TypeIIInf,
}

/// II1 exactly when the total trace `sum beta(i)` is finite.
pub fn classify_ambient(betas: &[Scalar], tail: Option<&ClosedForm>) -> Ambient {
    let finite_prefix = betas.iter().all(|b| !b.is_infinite());
    let finite_tail = tail.is_none_or(|t| t.series_converges());
    if finite_prefix && finite_tail {
        Ambient::TypeII1
    } else {
        Ambient::TypeIIInf
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    pub t: FreeParam,
    pub expected: FreeProductForm,
    pub agrees: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub kind: String,
    pub input: serde_json::Value,
    pub ambient: Ambient,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSelection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<FreeParam>,
    pub expression: AlgebraExpr,
    pub corner: FreeProductForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplified: Option<FreeProductForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form: Option<ClosedFormCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<DerivationTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification_trace: Option<DerivationTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl DecompositionReport {
    pub fn strip_traces(&mut self) {
        self.trace = None;
        self.amplification_trace = None;
    }

    /// The II1 factor itself when it exists, else the corner.
    pub fn result(&self) -> &FreeProductForm {
        self.amplified.as_ref().unwrap_or(&self.corner)
    }
}

/// Atoms attached to an infinite tail of the index set: either one fixed
/// atom repeated, or distinct copies `id(i)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailAtom {
    pub atom: FactorAtom,
    #[serde(default)]
    pub indexed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop21Tail {
    /// `beta(i)` for `i = n+1, n+2, ...`, `n` the prefix length.
    pub betas: ClosedForm,
    pub atom: TailAtom,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sum_beta_sq_diverges: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop21Input {
    pub base: FactorAtom,
    pub betas: Vec<Scalar>,
    /// One atom per index, a single atom used for every index, or empty for
    /// distinct generic atoms `Q1, Q2, ...`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<FactorAtom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<Prop21Tail>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop31Input {
    pub square: CommutingSquareData,
    /// Same conventions as [`Prop21Input::atoms`], in the input order of rows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<FactorAtom>,
    /// Explicit choices index rows after connectivity reordering.
    #[serde(default)]
    pub gamma: GammaPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_atom: Option<TailAtom>,
}

fn positive_rationals(what: &str, xs: &[Scalar]) -> Result<Vec<BigRational>, DecompError> {
    if xs.is_empty() {
        return Err(DecompError::Input(format!("{what} is empty")));
    }
    xs.iter()
        .enumerate()
        .map(|(i, s)| match s.as_rational() {
            Some(r) if r > &BigRational::zero() => Ok(r.clone()),
            _ => Err(DecompError::Input(format!("{what}[{i}] = {s} must be a positive rational"))),
        })
        .collect()
}

fn expand_atoms(atoms: &[FactorAtom], n: usize) -> Result<Vec<FactorAtom>, DecompError> {
    match atoms.len() {
        0 => Ok((1..=n).map(|i| FactorAtom::generic(format!("Q{i}"))).collect()),
        1 => Ok(vec![atoms[0].clone(); n]),
        k if k == n => Ok(atoms.to_vec()),
        k => Err(DecompError::Input(format!("{k} atoms for {n} indices"))),
    }
}

fn default_tail_atom(atoms: &[FactorAtom]) -> TailAtom {
    match atoms {
        [single] => TailAtom { atom: single.clone(), indexed: false },
        _ => TailAtom { atom: FactorAtom::generic("Q"), indexed: true },
    }
}

fn sc(r: BigRational) -> Scalar {
    Scalar::from(r)
}

/// `E_u` for a unit-scale expression `E`, written as a scaled atom when `E` is one.
fn at_scale(e: &AlgebraExpr, u: Scalar) -> AlgebraExpr {
    match e {
        AlgebraExpr::Atom(sa) if sa.scale.is_one() => AlgebraExpr::Atom(sa.atom.at(u)),
        _ if u.is_one() => e.clone(),
        _ => AlgebraExpr::rescale(e.clone(), u),
    }
}

fn to_json<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("input types serialize")
}

/// The tail as a family with scales `beta(1) / beta(i)`.
fn tail_family(tail: &TailAtom, betas: &ClosedForm, beta1: &BigRational, start: u64) -> Result<AtomFamily, DecompError> {
    Ok(AtomFamily {
        atom: tail.atom.clone(),
        indexed: tail.indexed,
        scales: betas.recip()?.scaled(&sc(beta1.clone()))?,
        start,
    })
}

/// `base_{beta(1)} ⊛ [beta(i)/beta(1), row(i)]`, built one index at a time.
/// With `include_first` unset the `i = 1` term is left out.
fn prop21_expression(
    base: &AlgebraExpr,
    betas: &[BigRational],
    rows: &[AlgebraExpr],
    include_first: bool,
    tail: Option<AtomFamily>,
) -> AlgebraExpr {
    let b1 = &betas[0];
    let mut acc = at_scale(base, sc(b1.clone()));
    if let Some(f) = tail {
        acc = AlgebraExpr::join(vec![acc, AlgebraExpr::Infinite(vec![f])]);
    }
    let first = if include_first { 0 } else { 1 };
    for i in first..betas.len() {
        let c = sc(&betas[i] / b1);
        acc = AlgebraExpr::fsp(acc, vec![FspTerm::new(c, rows[i].clone())]);
    }
    acc
}

fn atom_exprs(atoms: &[FactorAtom]) -> Vec<AlgebraExpr> {
    atoms.iter().map(AlgebraExpr::unit_atom).collect()
}

/// Normalizes `[closed-form atoms] * L(F_t)` with the same structural rules,
/// so absorption and collapse flags treat both sides alike.
fn closed_form_check(
    atoms: Vec<(FactorAtom, Scalar)>,
    t: BigRational,
    actual: &FreeProductForm,
) -> Result<ClosedFormCheck, DecompError> {
    let mut items: Vec<AlgebraExpr> =
        atoms.into_iter().map(|(a, s)| AlgebraExpr::Atom(a.at(s))).collect();
    items.push(AlgebraExpr::lf(FreeParam::Finite(t.clone())));
    let expected = normalize(&AlgebraExpr::join(items))?.form;
    Ok(ClosedFormCheck { t: FreeParam::Finite(t), agrees: &expected == actual, expected })
}

fn amplify(
    corner: &FreeProductForm,
    by: &Scalar,
) -> Result<(FreeProductForm, DerivationTrace), DecompError> {
    amplify_with(corner, by, true)
}

fn amplify_with(
    corner: &FreeProductForm,
    by: &Scalar,
    record: bool,
) -> Result<(FreeProductForm, DerivationTrace), DecompError> {
    let n = normalizer(record).run(&AlgebraExpr::rescale(corner.to_expr(), by.clone()))?;
    Ok((n.form, n.trace))
}

fn normalizer(record: bool) -> Normalizer {
    if record {
        Normalizer::new(Strategy::Innermost)
    } else {
        Normalizer::quiet(Strategy::Innermost)
    }
}

pub fn prop21_decompose(input: &Prop21Input) -> Result<DecompositionReport, DecompError> {
    if input.tail.is_some() {
        return prop21_infinite(input);
    }
    let betas = positive_rationals("betas", &input.betas)?;
    let m = betas.len();
    let atoms = expand_atoms(&input.atoms, m)?;
    let base = AlgebraExpr::unit_atom(&input.base);
    let expr = prop21_expression(&base, &betas, &atom_exprs(&atoms), true, None);
    let n = normalize(&expr)?;

    let total: BigRational = betas.iter().sum();
    let lambda = sc(&total / &betas[0]);
    let (amplified, amp_trace) = amplify(&n.form, &lambda)?;
    let t = BigRational::from_integer((-(m as i64)).into())
        + betas.iter().map(|b| (b / &total) * (b / &total)).sum::<BigRational>();
    let mut expected = vec![(input.base.clone(), sc(total.clone()))];
    expected.extend(atoms.iter().zip(&betas).map(|(a, b)| (a.clone(), sc(&total / b))));
    let check = closed_form_check(expected, t, &amplified)?;
    if !check.agrees {
        return Err(DecompError::CrossCheck(format!("{} vs {}", amplified, check.expected)));
    }
    Ok(DecompositionReport {
        kind: "prop21".into(),
        input: to_json(input),
        ambient: Ambient::TypeII1,
        permutation: None,
        gamma: None,
        r: None,
        expression: expr,
        corner: n.form,
        amplification: Some(lambda),
        amplified: Some(amplified),
        closed_form: Some(check),
        conditions: vec![],
        trace: Some(n.trace),
        amplification_trace: Some(amp_trace),
        notes: vec![],
    })
}

/// Infinite index set: gated by an atom absorbing `L(F_inf)`, an absorbing
/// base, or `sum beta(i)^2 = inf`.
pub fn prop21_infinite(input: &Prop21Input) -> Result<DecompositionReport, DecompError> {
    let tail = input
        .tail
        .as_ref()
        .ok_or_else(|| DecompError::Input("infinite decomposition needs a tail".into()))?;
    let betas = positive_rationals("betas", &input.betas)?;
    let atoms = expand_atoms(&input.atoms, betas.len())?;
    tail.betas.validate().map_err(|e| DecompError::Input(format!("tail betas: {e}")))?;
    let conditions = vec![
        ConditionCheck {
            condition: "some Q(i) absorbs L(F_inf)".into(),
            holds: atoms.iter().any(|a| a.absorbs_lf_inf) || tail.atom.atom.absorbs_lf_inf,
        },
        ConditionCheck { condition: "N absorbs L(F_inf)".into(), holds: input.base.absorbs_lf_inf },
        ConditionCheck {
            condition: "sum beta(i)^2 = inf".into(),
            holds: tail.sum_beta_sq_diverges || !tail.betas.squared()?.series_converges(),
        },
    ];
    infinite_core(
        "prop21",
        to_json(input),
        conditions,
        classify_ambient(&input.betas, Some(&tail.betas)),
        |fam| {
            prop21_expression(&AlgebraExpr::unit_atom(&input.base), &betas, &atom_exprs(&atoms), true, Some(fam))
        },
        tail_family(&tail.atom, &tail.betas, &betas[0], betas.len() as u64 + 1)?,
        None,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
fn infinite_core(
    kind: &str,
    input: serde_json::Value,
    conditions: Vec<ConditionCheck>,
    ambient: Ambient,
    build: impl FnOnce(AtomFamily) -> AlgebraExpr,
    family: AtomFamily,
    permutation: Option<(Vec<usize>, GammaSelection)>,
    r: Option<FreeParam>,
) -> Result<DecompositionReport, DecompError> {
    if !conditions.iter().any(|c| c.holds) {
        let names: Vec<&str> = conditions.iter().map(|c| c.condition.as_str()).collect();
        return Err(DecompError::NotCovered(format!(
            "infinite index set with none of: {}",
            names.join("; ")
        )));
    }
    let expr = build(family);
    let n = normalize(&expr)?;
    let (permutation, gamma) = match permutation {
        Some((p, g)) => (Some(p), Some(g)),
        None => (None, None),
    };
    Ok(DecompositionReport {
        kind: kind.into(),
        input,
        ambient,
        permutation,
        gamma,
        r,
        expression: expr,
        corner: n.form,
        amplification: None,
        amplified: None,
        closed_form: None,
        conditions,
        trace: Some(n.trace),
        amplification_trace: None,
        notes: vec!["tail terms are entered already flattened, at scales beta(1)/beta(i)".into()],
    })
}

/// `(row(1) * L(F_r)) ⊛_{m>=2} [gamma(m)/beta(1)]{row(m)_{gamma(m)/beta(m)}}`.
fn prop31_expression(
    data: &CommutingSquareData,
    sel: &GammaSelection,
    rows: &[AlgebraExpr],
    r: Option<&FreeParam>,
    tail: Option<AtomFamily>,
) -> AlgebraExpr {
    let b1 = data.beta(0);
    let mut base = vec![rows[0].clone()];
    if let Some(r) = r {
        base.push(AlgebraExpr::lf(r.clone()));
    }
    if let Some(f) = tail {
        base.push(AlgebraExpr::Infinite(vec![f]));
    }
    let terms = (1..data.n_rows())
        .map(|m| {
            let g = sel.gamma(data, m);
            FspTerm::new(sc(&g / &b1), at_scale(&rows[m], sc(&g / data.beta(m))))
        })
        .collect();
    AlgebraExpr::fsp(AlgebraExpr::join(base), terms)
}

/// Finite square with row expressions already in connectivity order.
pub fn prop31_with_selection(
    prepared: &PreparedSquare,
    sel: &GammaSelection,
    rows: &[AlgebraExpr],
    closed_form_atoms: Option<&[FactorAtom]>,
    input: serde_json::Value,
    record: bool,
) -> Result<DecompositionReport, DecompError> {
    let data = &prepared.data;
    let r = compute_r(data, sel)?;
    let expr = prop31_expression(data, sel, rows, Some(&r), None);
    let n = normalizer(record).run(&expr)?;
    let betas = data.beta_rationals();
    let total: BigRational = betas.iter().sum();
    let lambda = sc(&total / &betas[0]);
    let (amplified, amp_trace) = amplify_with(&n.form, &lambda, record)?;
    let closed_form = match closed_form_atoms {
        Some(atoms) => {
            let rows = data.n_rows() as i64;
            let t = BigRational::from_integer((1 - rows).into()) + beta_alpha_gap(&data.normalized());
            let expected =
                atoms.iter().zip(&betas).map(|(a, b)| (a.clone(), sc(&total / b))).collect();
            let check = closed_form_check(expected, t, &amplified)?;
            if !check.agrees {
                return Err(DecompError::CrossCheck(format!("{} vs {}", amplified, check.expected)));
            }
            Some(check)
        }
        None => None,
    };
    Ok(DecompositionReport {
        kind: "prop31".into(),
        input,
        ambient: Ambient::TypeII1,
        permutation: Some(prepared.order.clone()),
        gamma: Some(sel.clone()),
        r: Some(r),
        expression: expr,
        corner: n.form,
        amplification: Some(lambda),
        amplified: Some(amplified),
        closed_form,
        conditions: vec![],
        trace: record.then_some(n.trace),
        amplification_trace: record.then_some(amp_trace),
        notes: vec![],
    })
}

fn permute<T: Clone>(xs: &[T], order: &[usize]) -> Vec<T> {
    order.iter().map(|&i| xs[i].clone()).collect()
}

pub fn prop31_decompose(input: &Prop31Input) -> Result<DecompositionReport, DecompError> {
    if input.square.is_infinite() {
        return prop31_infinite(input);
    }
    let prepared = prepare(&input.square)?;
    let atoms = permute(&expand_atoms(&input.atoms, input.square.n_rows())?, &prepared.order);
    let sel = select_gamma(&prepared.data, &input.gamma)?;
    prop31_with_selection(&prepared, &sel, &atom_exprs(&atoms), Some(&atoms), to_json(input), true)
}

/// Infinite index set: gated by an atom absorbing `L(F_inf)`,
/// `sum gamma(i)^2 = inf`, or `r = inf`.
pub fn prop31_infinite(input: &Prop31Input) -> Result<DecompositionReport, DecompError> {
    let atoms = expand_atoms(&input.atoms, input.square.n_rows())?;
    let tail_atom = input.tail_atom.clone().unwrap_or_else(|| default_tail_atom(&input.atoms));
    let absorbing = atoms.iter().any(|a| a.absorbs_lf_inf) || tail_atom.atom.absorbs_lf_inf;
    let rows = atom_exprs(&atoms);
    prop31_infinite_rows(input, &rows, absorbing, &tail_atom, to_json(input))
}

fn prop31_infinite_rows(
    input: &Prop31Input,
    rows: &[AlgebraExpr],
    absorbing: bool,
    tail_atom: &TailAtom,
    json: serde_json::Value,
) -> Result<DecompositionReport, DecompError> {
    let prepared = prepare(&input.square)?;
    let data = &prepared.data;
    let tail = data.tail.as_ref().ok_or_else(|| DecompError::Input("square has no tail".into()))?;
    let rows = permute(rows, &prepared.order);
    let sel = select_gamma(data, &input.gamma)?;
    let r = compute_r(data, &sel);
    let gamma_diverges = tail.sum_gamma_sq_diverges
        || match &tail.gammas {
            Some(g) => !g.squared()?.series_converges(),
            None => false,
        };
    let conditions = vec![
        ConditionCheck { condition: "some Q(i) absorbs L(F_inf)".into(), holds: absorbing },
        ConditionCheck { condition: "sum gamma(i)^2 = inf".into(), holds: gamma_diverges },
        ConditionCheck {
            condition: "r = inf".into(),
            holds: matches!(r, Ok(FreeParam::Infinite)),
        },
    ];
    let r = r.ok();
    let family = tail_family(tail_atom, &tail.betas, &data.beta(0), data.n_rows() as u64 + 1)?;
    let ambient = classify_ambient(&data.betas, Some(&tail.betas));
    let perm = Some((prepared.order.clone(), sel.clone()));
    let mut report = infinite_core(
        "prop31",
        json,
        conditions,
        ambient,
        |fam| prop31_expression(data, &sel, &rows, r.as_ref(), Some(fam)),
        family,
        perm,
        r.clone(),
    )?;
    if r.is_none() {
        report.notes.push("r is not determined by the tail data; its L(F_r) factor is absorbed".into());
    }
    Ok(report)
}

/// How the free parameter of the subfactor construction is fixed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LambdaChoice {
    Value(Scalar),
    /// Choose `lambda` so that the excess of `P_0` vanishes.
    ZeroA,
    /// Choose `lambda` so that the excess of `P_-1` vanishes.
    ZeroB,
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Value(Scalar::one())
    }
}

impl std::str::FromStr for LambdaChoice {
    type Err = ArithError;

    fn from_str(s: &str) -> Result<Self, ArithError> {
        match s.trim() {
            "zero-a" => Ok(LambdaChoice::ZeroA),
            "zero-b" => Ok(LambdaChoice::ZeroB),
            other => other.parse().map(LambdaChoice::Value),
        }
    }
}

impl std::fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaChoice::Value(s) => write!(f, "{s}"),
            LambdaChoice::ZeroA => f.write_str("zero-a"),
            LambdaChoice::ZeroB => f.write_str("zero-b"),
        }
    }
}

impl Serialize for LambdaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Value(v) => v.serialize(s),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            _ => Scalar::deserialize(v).map(LambdaChoice::Value).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    #[default]
    Finite,
    Infinite,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsubVariant {
    #[default]
    Fin,
    Inf,
}

fn default_q() -> FactorAtom {
    FactorAtom::generic("Q")
}

fn default_m0() -> FactorAtom {
    FactorAtom::generic("M0")
}

fn default_m1() -> FactorAtom {
    FactorAtom::generic("M-1")
}

/// The two commuting squares (levels `0` and `-1`) of a standard lattice,
/// plus the atoms used by the subfactor constructions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairInput {
    pub square0: CommutingSquareData,
    pub square_m1: CommutingSquareData,
    #[serde(default = "default_q")]
    pub atom: FactorAtom,
    /// Opaque name of the standard invariant; echoed, never interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub gamma0: GammaPolicy,
    #[serde(default)]
    pub gamma_m1: GammaPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Depth>,
    #[serde(default = "default_m0")]
    pub base0: FactorAtom,
    #[serde(default = "default_m1")]
    pub base_m1: FactorAtom,
    #[serde(default)]
    pub variant: MsubVariant,
}

impl PairInput {
    pub fn new(square0: CommutingSquareData, square_m1: CommutingSquareData) -> Self {
        PairInput {
            square0,
            square_m1,
            atom: default_q(),
            label: None,
            gamma0: GammaPolicy::default(),
            gamma_m1: GammaPolicy::default(),
            depth: None,
            base0: default_m0(),
            base_m1: default_m1(),
            variant: MsubVariant::default(),
        }
    }

    fn declared_depth(&self) -> Result<Depth, DecompError> {
        let inf0 = self.square0.is_infinite();
        let inf1 = self.square_m1.is_infinite();
        if inf0 != inf1 {
            return Err(DecompError::Depth("one square is finite and the other infinite".into()));
        }
        let data = if inf0 { Depth::Infinite } else { Depth::Finite };
        match self.depth {
            Some(d) if d != data => Err(DecompError::Depth(format!(
                "{d:?} depth requested but the squares are {}",
                if inf0 { "infinite" } else { "finite" }
            ))),
            _ => Ok(data),
        }
    }
}

/// Parameters of one side: finite atom scales, scales of infinite plain
/// repetitions `Q_s * Q_s * ...`, other infinite families, and the excess.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormParams {
    pub count: usize,
    pub scales: Vec<Scalar>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repeated_scales: Vec<Scalar>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub families: Vec<AtomFamily>,
    pub excess: FreeParam,
}

impl FormParams {
    fn of(form: &FreeProductForm, skip: Option<&FactorAtom>) -> Self {
        let atoms: Vec<_> = form.atoms().iter().filter(|a| Some(&a.atom) != skip).collect();
        let (rep, other): (Vec<&AtomFamily>, Vec<&AtomFamily>) =
            form.tail().iter().partition(|f| f.is_plain_repetition());
        FormParams {
            count: atoms.len(),
            scales: atoms.iter().map(|a| a.scale.clone()).collect(),
            repeated_scales: rep.iter().map(|f| f.scales.coef.clone()).collect(),
            families: other.into_iter().cloned().collect(),
            excess: form.excess().clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubfactorPairReport {
    pub theorem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub lambda_choice: LambdaChoice,
    /// `lambda` relative to the reference trace of level 0.
    pub lambda: Scalar,
    /// `Tr(q)` for the finite projection `q` cutting both levels.
    pub trace_q: Scalar,
    /// `Tr(q) / beta(0,1)` and `Tr(q) / beta(-1,1)`, the factors applied to the corners.
    pub corner_factors: [Scalar; 2],
    pub p0: FreeProductForm,
    pub p_m1: FreeProductForm,
    pub params0: FormParams,
    pub params_m1: FormParams,
    pub level0: DecompositionReport,
    pub level_m1: DecompositionReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SubfactorPairReport {
    pub fn strip_traces(&mut self) {
        self.level0.strip_traces();
        self.level_m1.strip_traces();
    }
}

const ORIENTATION_NOTE: &str = "corner scales are beta(l,1)/beta(l,i); the reciprocal \
    beta(l,i)/beta(l,1) would contradict the free scaled product flattening used throughout";

struct Levels {
    reports: [DecompositionReport; 2],
    corner_betas: [BigRational; 2],
}

/// `lambda -> Tr(q)` given the reference trace, and the per-level factors.
fn resolve_lambda(
    choice: &LambdaChoice,
    levels: &Levels,
    reference: &[Scalar; 2],
) -> Result<(Scalar, Scalar), DecompError> {
    let solve_level = |l: usize| -> Result<Scalar, DecompError> {
        // zero excess of Tr(q)/beta(l,1) * corner, expressed back in Tr(q)
        let corner = &levels.reports[l].corner;
        let f = solve_lambda_zero_excess(corner)
            .map_err(|e| DecompError::Lambda(e.to_string()))?;
        Ok(f.mul(&sc(levels.corner_betas[l].clone()))?)
    };
    let trace_q = match choice {
        LambdaChoice::Value(l) => {
            if !l.is_positive_finite() {
                return Err(DecompError::Lambda(format!("{l} is not a positive finite scalar")));
            }
            l.mul(&reference[0])?
        }
        LambdaChoice::ZeroA => solve_level(0)?,
        LambdaChoice::ZeroB => solve_level(1)?,
    };
    Ok((trace_q.div(&reference[0])?, trace_q))
}

fn finish_pair(
    theorem: &str,
    input: &PairInput,
    choice: &LambdaChoice,
    levels: Levels,
    reference: [Scalar; 2],
    skip_atoms: [Option<&FactorAtom>; 2],
    mut notes: Vec<String>,
) -> Result<SubfactorPairReport, DecompError> {
    let (lambda, trace_q) = resolve_lambda(choice, &levels, &reference)?;
    let f0 = trace_q.div(&sc(levels.corner_betas[0].clone()))?;
    let f1 = trace_q.div(&sc(levels.corner_betas[1].clone()))?;
    let p0 = rescale(&levels.reports[0].corner, &f0)?;
    let p_m1 = rescale(&levels.reports[1].corner, &f1)?;
    validity_check(&p0).map_err(RewriteError::from)?;
    validity_check(&p_m1).map_err(RewriteError::from)?;
    if *choice == LambdaChoice::ZeroA && !p0.excess().is_zero() {
        return Err(DecompError::Lambda("solver left a nonzero excess at level 0".into()));
    }
    if *choice == LambdaChoice::ZeroB && !p_m1.excess().is_zero() {
        return Err(DecompError::Lambda("solver left a nonzero excess at level -1".into()));
    }
    notes.insert(0, ORIENTATION_NOTE.into());
    let [level0, level_m1] = levels.reports;
    Ok(SubfactorPairReport {
        theorem: theorem.into(),
        label: input.label.clone(),
        lambda_choice: choice.clone(),
        lambda,
        trace_q,
        corner_factors: [f0, f1],
        params0: FormParams::of(&p0, skip_atoms[0]),
        params_m1: FormParams::of(&p_m1, skip_atoms[1]),
        p0,
        p_m1,
        level0,
        level_m1,
        notes,
    })
}

fn square_betas_total(d: &CommutingSquareData) -> BigRational {
    d.beta_rationals().into_iter().sum()
}

fn prop31_level(
    square: &CommutingSquareData,
    policy: &GammaPolicy,
    atom: &FactorAtom,
) -> Result<DecompositionReport, DecompError> {
    prop31_decompose(&Prop31Input {
        square: square.clone(),
        atoms: vec![atom.clone()],
        gamma: policy.clone(),
        tail_atom: None,
    })
}

/// Finite depth, factors `Q_{s_1} * ... * Q_{s_m} * L(F_a)`.
///
/// `lambda` is `Tr(q) / sum_i beta(0,i)`, so `lambda = 1` gives the level-0
/// factor at its own normalization.
pub fn thm_subfin(input: &PairInput, choice: &LambdaChoice) -> Result<SubfactorPairReport, DecompError> {
    if input.declared_depth()? != Depth::Finite {
        return Err(DecompError::Depth("finite depth needs finite squares".into()));
    }
    let r0 = prop31_level(&input.square0, &input.gamma0, &input.atom)?;
    let r1 = prop31_level(&input.square_m1, &input.gamma_m1, &input.atom)?;
    let levels = Levels {
        // connectivity reordering keeps row 0 in place
        corner_betas: [input.square0.beta(0), input.square_m1.beta(0)],
        reports: [r0, r1],
    };
    let reference = [sc(square_betas_total(&input.square0)), sc(square_betas_total(&input.square_m1))];
    finish_pair("subfin", input, choice, levels, reference, [None, None], vec![])
}

/// `Q * Q * ...` with every copy at scale 1.
fn infinite_copies(q: &FactorAtom) -> AlgebraExpr {
    AlgebraExpr::Infinite(vec![AtomFamily::repeated(q.clone(), Scalar::one())])
}

/// `Q * L(F_inf)`.
fn with_lf_inf(q: &FactorAtom) -> AlgebraExpr {
    AlgebraExpr::join(vec![AlgebraExpr::unit_atom(q), AlgebraExpr::lf(FreeParam::Infinite)])
}

fn subinf_level(
    square: &CommutingSquareData,
    policy: &GammaPolicy,
    q: &FactorAtom,
    depth: Depth,
) -> Result<DecompositionReport, DecompError> {
    let prepared = prepare(square)?;
    let n = square.n_rows();
    let json = to_json(square);
    match depth {
        Depth::Finite => {
            let rows = vec![infinite_copies(q); n];
            let sel = select_gamma(&prepared.data, policy)?;
            let mut rep = prop31_with_selection(&prepared, &sel, &rows, None, json, true)?;
            rep.kind = "prop31-infinite-copies".into();
            Ok(rep)
        }
        Depth::Infinite => {
            let input = Prop31Input {
                square: square.clone(),
                atoms: vec![q.clone()],
                gamma: policy.clone(),
                tail_atom: Some(TailAtom { atom: q.clone(), indexed: false }),
            };
            let rows = vec![with_lf_inf(q); n];
            let tail = TailAtom { atom: q.clone(), indexed: false };
            let mut rep = prop31_infinite_rows(&input, &rows, true, &tail, json)?;
            rep.kind = "prop31-absorbing".into();
            Ok(rep)
        }
    }
}

/// Factors that are infinite free products of rescalings of `Q`. Finite
/// depth runs the finite construction with `Q * Q * ...` in place of `Q`;
/// infinite depth uses `Q * L(F_inf)`.
///
/// `lambda` is relative to `sum_i beta(0,i)` for finite depth and to
/// `beta(0,1)` for infinite depth; only explicit values are accepted.
pub fn thm_subinf(input: &PairInput, choice: &LambdaChoice) -> Result<SubfactorPairReport, DecompError> {
    if !matches!(choice, LambdaChoice::Value(_)) {
        return Err(DecompError::Lambda(
            "the excess of an infinite free product is always absorbed; zero-a/zero-b do not apply".into(),
        ));
    }
    let depth = input.declared_depth()?;
    let r0 = subinf_level(&input.square0, &input.gamma0, &input.atom, depth)?;
    let r1 = subinf_level(&input.square_m1, &input.gamma_m1, &input.atom, depth)?;
    let reference = match depth {
        Depth::Finite => [sc(square_betas_total(&input.square0)), sc(square_betas_total(&input.square_m1))],
        Depth::Infinite => [input.square0.betas[0].clone(), input.square_m1.betas[0].clone()],
    };
    let levels = Levels {
        corner_betas: [input.square0.beta(0), input.square_m1.beta(0)],
        reports: [r0, r1],
    };
    let theorem = match depth {
        Depth::Finite => "subinf-finite-depth",
        Depth::Infinite => "subinf-infinite-depth",
    };
    let report = finish_pair(theorem, input, choice, levels, reference, [None, None], vec![])?;
    for p in [&report.p0, &report.p_m1] {
        if !p.excess().is_zero() || !p.is_infinite() {
            return Err(DecompError::CrossCheck(format!("expected an infinite form with no excess, got {p}")));
        }
    }
    Ok(report)
}

fn msub_level(
    square: &CommutingSquareData,
    base: &FactorAtom,
    q: &FactorAtom,
    variant: MsubVariant,
) -> Result<DecompositionReport, DecompError> {
    square.validate()?;
    let betas = square.beta_rationals();
    let n = betas.len();
    let base_expr = AlgebraExpr::unit_atom(base);
    let (rows, tail, conditions) = match (variant, &square.tail) {
        (MsubVariant::Fin, None) => (atom_exprs(&vec![q.clone(); n]), None, vec![]),
        (MsubVariant::Inf, None) => (vec![infinite_copies(q); n], None, vec![]),
        (MsubVariant::Inf, Some(t)) => {
            let fam = tail_family(&TailAtom { atom: q.clone(), indexed: false }, &t.betas, &betas[0], n as u64 + 1)?;
            let cond = ConditionCheck { condition: "Q * L(F_inf) absorbs L(F_inf)".into(), holds: true };
            (vec![with_lf_inf(q); n], Some(fam), vec![cond])
        }
        (MsubVariant::Fin, Some(_)) => {
            return Err(DecompError::Depth("the finite variant needs finite squares".into()))
        }
    };
    let expr = prop21_expression(&base_expr, &betas, &rows, false, tail);
    let nf = normalize(&expr)?;
    Ok(DecompositionReport {
        kind: "msub-corner".into(),
        input: to_json(square),
        ambient: classify_ambient(&square.betas, square.tail.as_ref().map(|t| &t.betas)),
        permutation: None,
        gamma: None,
        r: None,
        expression: expr,
        corner: nf.form,
        amplification: None,
        amplified: None,
        closed_form: None,
        conditions,
        trace: Some(nf.trace),
        amplification_trace: None,
        notes: vec!["terms start at i = 2; the first index contributes the base alone".into()],
    })
}

/// `M_0 * Q_{s_1} * ... * L(F_a)` (finite variant) or `M_0 * (*_i Q_{s_i})`
/// (infinite variant).
///
/// `lambda` here is `Tr(q)` itself, so the default `1` puts `M_0` and
/// `M_-1` at scale 1.
pub fn thm_msub(input: &PairInput, choice: &LambdaChoice) -> Result<SubfactorPairReport, DecompError> {
    let depth = input.declared_depth()?;
    if input.variant == MsubVariant::Fin && depth == Depth::Infinite {
        return Err(DecompError::Depth("the finite variant needs finite squares".into()));
    }
    if input.variant == MsubVariant::Inf && !matches!(choice, LambdaChoice::Value(_)) {
        return Err(DecompError::Lambda("zero-a/zero-b do not apply to the infinite variant".into()));
    }
    let r0 = msub_level(&input.square0, &input.base0, &input.atom, input.variant)?;
    let r1 = msub_level(&input.square_m1, &input.base_m1, &input.atom, input.variant)?;
    let levels = Levels {
        corner_betas: [input.square0.beta(0), input.square_m1.beta(0)],
        reports: [r0, r1],
    };
    let theorem = match input.variant {
        MsubVariant::Fin => "msub-fin",
        MsubVariant::Inf => "msub-inf",
    };
    finish_pair(
        theorem,
        input,
        choice,
        levels,
        [Scalar::one(), Scalar::one()],
        [Some(&input.base0), Some(&input.base_m1)],
        vec![],
    )
}

/// `Q` with full fundamental group: every output collapses to `Q * Q * ...`
/// (and `M_l * Q * Q * ...` for the `msub` variant).
pub fn thm_univ(input: &PairInput, choice: &LambdaChoice, with_base: bool) -> Result<SubfactorPairReport, DecompError> {
    if !input.atom.fundamental_group_all_positive {
        return Err(DecompError::MissingFlag(input.atom.id.clone()));
    }
    let mut report = if with_base {
        let mut inf = input.clone();
        inf.variant = MsubVariant::Inf;
        thm_msub(&inf, choice)?
    } else {
        thm_subinf(input, choice)?
    };
    let collapsed = AtomFamily::repeated(input.atom.clone(), Scalar::one());
    for (l, form) in [&report.p0, &report.p_m1].into_iter().enumerate() {
        let others: BTreeSet<&FactorAtom> =
            form.atoms().iter().map(|a| &a.atom).filter(|a| **a != input.atom).collect();
        let expected_atoms = if with_base {
            let base = if l == 0 { &input.base0 } else { &input.base_m1 };
            vec![base.at(report.trace_q.clone())]
        } else {
            vec![]
        };
        let square = if l == 0 { &input.square0 } else { &input.square_m1 };
        // a one-row level cuts down to the base alone
        let blocks = if with_base && square.n_rows() == 1 && !square.is_infinite() {
            vec![]
        } else {
            vec![collapsed.clone()]
        };
        let expected = FreeProductForm::new(expected_atoms, blocks, FreeParam::zero());
        if *form != expected || others.len() > usize::from(with_base) {
            return Err(DecompError::CrossCheck(format!("{form} did not collapse to {expected}")));
        }
    }
    report.theorem = if with_base { "univ-msub" } else { "univ" }.into();
    report.notes.push("Q_s = Q for all s, so every block is Q * Q * ...".into());
    Ok(report)
}
