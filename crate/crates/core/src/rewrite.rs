//! Small-step normalizer from [`AlgebraExpr`] to [`FreeProductForm`].
//!
//! Every step rewrites one node. Steps are recorded with the path of the node
//! (child indices from the root, in the order of `AlgebraExpr::children`) so
//! a trace can be replayed against the input.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    amplified_exponent, exponent_semantics, validity_check, AlgebraExpr, AtomFamily, AtomKind,
    FreeProductForm, FspTerm, IrError, ScaledAtom, ValidityViolation,
};
use crate::scalar::{ArithError, FreeParam, Scalar};
use crate::sequence::ClosedForm;

const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Validity(Box<ValidityViolation>),
    #[error("no rule applies but the expression is not in normal form: {0}")]
    Stuck(String),
    #[error("rewriting did not terminate within {0} steps")]
    StepLimit(usize),
    #[error("zero-excess solver: {0}")]
    Solver(String),
    #[error("replay failed at step {step}: {reason}")]
    Replay { step: usize, reason: String },
}

impl From<ValidityViolation> for RewriteError {
    fn from(v: ValidityViolation) -> Self {
        RewriteError::Validity(Box::new(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "ASSOC")]
    Assoc,
    #[serde(rename = "UNIT")]
    Unit,
    #[serde(rename = "FSP-EMPTY")]
    FspEmpty,
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
    R10,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Assoc => "ASSOC",
            Rule::Unit => "UNIT",
            Rule::FspEmpty => "FSP-EMPTY",
            Rule::R1 => "R1",
            Rule::R2 => "R2",
            Rule::R3 => "R3",
            Rule::R4 => "R4",
            Rule::R5 => "R5",
            Rule::R6 => "R6",
            Rule::R7 => "R7",
            Rule::R8 => "R8",
            Rule::R9 => "R9",
            Rule::R10 => "R10",
        }
    }

    /// The identity the rule instantiates.
    pub fn cite(self) -> &'static str {
        match self {
            Rule::Assoc => "free products are associative; the empty product is trivial",
            Rule::Unit => "L(F_0) stands for no free group factor",
            Rule::FspEmpty => "a free scaled product without terms is its base",
            Rule::R1 => "(Q_s)_l = Q_{sl}",
            Rule::R2 => "[c]{L(F_s)} = L(F_{c^2 s})",
            Rule::R3 => "[c]{A * B} = [c]{A} * [c]{B} and [c]{A * [d]{B}} = [c]{A} * [cd]{B}",
            Rule::R4 => "[c]{Q_u} = [c/u]{Q} * L(F_{c^2 (1 - u^-2)})",
            Rule::R5 => "L(F_x) * L(F_y) = L(F_{x+y})",
            Rule::R6 => "[c]{Q_u} = Q_{u/c} * L(F_{c^2 - 1})",
            Rule::R7 => {
                "(Q_{u_1} * ... * Q_{u_k} * L(F_a'))_l = Q_{l u_1} * ... * Q_{l u_k} * L(F_a), \
                 a = l^-2 a' + (k-1)(l^-2 - 1)"
            }
            Rule::R8 => {
                "an infinite free product of II1-factors, or a factor Q with Q = Q * L(F_inf), \
                 absorbs any L(F_t)"
            }
            Rule::R9 => "rescaling an infinite free product rescales each factor",
            Rule::R10 => "Q_s = Q for every s > 0 when the fundamental group of Q is R_+",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: Rule,
    pub cite: String,
    pub path: Vec<usize>,
    pub before: AlgebraExpr,
    pub after: AlgebraExpr,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationTrace {
    pub steps: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DerivationTrace {
    pub fn rules(&self) -> Vec<Rule> {
        self.steps.iter().map(|s| s.rule).collect()
    }

    pub fn uses(&self, rule: Rule) -> bool {
        self.steps.iter().any(|s| s.rule == rule)
    }

    pub fn append(&mut self, mut other: DerivationTrace) {
        self.steps.append(&mut other.steps);
        self.warnings.append(&mut other.warnings);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Rewrite the first node in post-order that has a redex, using the
    /// highest-priority rule there (R6 before R4).
    Innermost,
    /// Pick uniformly among all redexes in the tree.
    Random(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub form: FreeProductForm,
    pub trace: DerivationTrace,
}

/// A rule instance at one node. `slot` selects the FSP term or join member
/// the rule acts on, where that matters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Redex {
    rule: Rule,
    slot: usize,
}

impl Redex {
    fn new(rule: Rule, slot: usize) -> Self {
        Redex { rule, slot }
    }
}

fn absorbs(sa: &ScaledAtom) -> bool {
    sa.atom.absorbs_lf_inf && sa.atom.kind == AtomKind::Generic
}

fn collapses(sa: &ScaledAtom) -> bool {
    sa.atom.fundamental_group_all_positive && sa.atom.kind == AtomKind::Generic
}

fn is_flat_join(items: &[AlgebraExpr]) -> bool {
    let mut lfs = 0;
    for it in items {
        match it {
            AlgebraExpr::Atom(_) | AlgebraExpr::Infinite(_) => {}
            AlgebraExpr::Lf(_) => lfs += 1,
            _ => return false,
        }
    }
    lfs <= 1
}

fn family_collapses(f: &AtomFamily) -> bool {
    f.atom.fundamental_group_all_positive
        && f.atom.kind == AtomKind::Generic
        && !(f.scales.is_constant() && f.scales.coef.is_one())
}

fn redexes(node: &AlgebraExpr) -> Vec<Redex> {
    let mut out = Vec::new();
    match node {
        AlgebraExpr::Atom(sa) => {
            if matches!(sa.atom.kind, AtomKind::FreeGroup(_)) {
                out.push(Redex::new(Rule::R7, 0));
            } else if collapses(sa) && !sa.scale.is_one() {
                out.push(Redex::new(Rule::R10, 0));
            }
        }
        AlgebraExpr::Lf(_) => {}
        AlgebraExpr::Infinite(fams) => {
            if let Some(i) = fams.iter().position(family_collapses) {
                out.push(Redex::new(Rule::R10, i));
            }
        }
        AlgebraExpr::Join(items) => {
            for (i, it) in items.iter().enumerate() {
                match it {
                    AlgebraExpr::Join(_) => out.push(Redex::new(Rule::Assoc, i)),
                    AlgebraExpr::Infinite(f) if f.is_empty() => {
                        out.push(Redex::new(Rule::Assoc, i))
                    }
                    _ => {}
                }
            }
            let infinite = items.iter().filter(|e| matches!(e, AlgebraExpr::Infinite(_))).count();
            if infinite >= 2 {
                out.push(Redex::new(Rule::Assoc, usize::MAX));
            }
            if items.len() == 1 {
                out.push(Redex::new(Rule::Assoc, usize::MAX - 1));
            }
            let lfs: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(_, e)| matches!(e, AlgebraExpr::Lf(_)))
                .map(|(i, _)| i)
                .collect();
            if !lfs.is_empty() {
                let absorbing = items.iter().any(|e| match e {
                    AlgebraExpr::Infinite(f) => !f.is_empty(),
                    AlgebraExpr::Atom(sa) => absorbs(sa),
                    _ => false,
                });
                if absorbing {
                    out.push(Redex::new(Rule::R8, 0));
                }
                if items.len() > 1 {
                    for &i in &lfs {
                        if matches!(&items[i], AlgebraExpr::Lf(t) if t.is_zero()) {
                            out.push(Redex::new(Rule::Unit, i));
                        }
                    }
                }
                if lfs.len() >= 2 {
                    out.push(Redex::new(Rule::R5, 0));
                }
            }
        }
        AlgebraExpr::Fsp { terms, .. } => {
            if terms.is_empty() {
                out.push(Redex::new(Rule::FspEmpty, 0));
            }
            for (i, t) in terms.iter().enumerate() {
                match &t.expr {
                    AlgebraExpr::Atom(sa) => {
                        out.push(Redex::new(Rule::R6, i));
                        if !sa.scale.is_one() {
                            out.push(Redex::new(Rule::R4, i));
                        }
                    }
                    AlgebraExpr::Lf(_) => out.push(Redex::new(Rule::R2, i)),
                    AlgebraExpr::Join(_) | AlgebraExpr::Fsp { .. } => {
                        out.push(Redex::new(Rule::R3, i))
                    }
                    AlgebraExpr::Infinite(_) => out.push(Redex::new(Rule::R9, i)),
                    AlgebraExpr::Rescale { .. } => {}
                }
            }
        }
        AlgebraExpr::Rescale { expr, by } => {
            if by.is_one() {
                out.push(Redex::new(Rule::R1, 0));
            } else {
                match expr.as_ref() {
                    AlgebraExpr::Atom(_) | AlgebraExpr::Rescale { .. } => {
                        out.push(Redex::new(Rule::R1, 0))
                    }
                    AlgebraExpr::Lf(_) => out.push(Redex::new(Rule::R7, 0)),
                    AlgebraExpr::Infinite(_) => out.push(Redex::new(Rule::R9, 0)),
                    AlgebraExpr::Join(items) if is_flat_join(items) => {
                        if items.iter().any(|e| matches!(e, AlgebraExpr::Infinite(_))) {
                            out.push(Redex::new(Rule::R9, 0));
                        } else {
                            out.push(Redex::new(Rule::R7, 0));
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

fn lf_if_nonzero(t: FreeParam) -> Option<AlgebraExpr> {
    if t.is_zero() {
        None
    } else {
        Some(AlgebraExpr::Lf(t))
    }
}

/// Moves the contributions of term `slot` into the base.
fn replace_term(
    base: &AlgebraExpr,
    terms: &[FspTerm],
    slot: usize,
    into_base: Vec<AlgebraExpr>,
    new_terms: Vec<FspTerm>,
) -> AlgebraExpr {
    let mut items = vec![base.clone()];
    items.extend(into_base);
    let base = if items.len() == 1 { items.pop().unwrap() } else { AlgebraExpr::Join(items) };
    let mut rest: Vec<FspTerm> = Vec::with_capacity(terms.len() + new_terms.len());
    rest.extend_from_slice(&terms[..slot]);
    rest.extend(new_terms);
    rest.extend_from_slice(&terms[slot + 1..]);
    AlgebraExpr::fsp(base, rest)
}

fn rescale_flat(items: &[AlgebraExpr], by: &Scalar) -> Result<AlgebraExpr, RewriteError> {
    let mut out = Vec::with_capacity(items.len());
    let mut k: i64 = 0;
    let mut excess = FreeParam::zero();
    for it in items {
        match it {
            AlgebraExpr::Atom(sa) => {
                k += 1;
                out.push(AlgebraExpr::Atom(sa.atom.at(sa.scale.mul(by)?)));
            }
            AlgebraExpr::Lf(t) => excess = t.clone(),
            _ => unreachable!("flat join checked by caller"),
        }
    }
    out.extend(lf_if_nonzero(a_formula(&excess, k, by)?));
    Ok(AlgebraExpr::Join(out))
}

/// `a = l^-2 a' + (k-1)(l^-2 - 1)`.
pub fn a_formula(a_prime: &FreeParam, k: i64, lambda: &Scalar) -> Result<FreeParam, ArithError> {
    let inv_sq = lambda.square()?.recip();
    let shift = BigRational::from_integer((k - 1).into()) * (&inv_sq - BigRational::one());
    Ok(a_prime.scale(&inv_sq)?.add_rational(&shift))
}

fn apply(node: &AlgebraExpr, rx: Redex) -> Result<AlgebraExpr, RewriteError> {
    use AlgebraExpr as E;
    Ok(match (node, rx.rule) {
        (E::Atom(sa), Rule::R7) => match &sa.atom.kind {
            AtomKind::FreeGroup(t) => E::Lf(amplified_exponent(t, &sa.scale)?),
            AtomKind::Generic => unreachable!(),
        },
        (E::Atom(sa), Rule::R10) => E::Atom(sa.atom.unit()),
        (E::Infinite(fams), Rule::R10) => {
            let mut fams = fams.clone();
            fams[rx.slot].scales = ClosedForm::constant(Scalar::one());
            E::Infinite(fams)
        }
        (E::Join(items), Rule::Assoc) => {
            if rx.slot == usize::MAX {
                let mut fams = Vec::new();
                let mut rest = Vec::new();
                for it in items {
                    match it {
                        E::Infinite(f) => fams.extend(f.iter().cloned()),
                        other => rest.push(other.clone()),
                    }
                }
                rest.push(E::Infinite(fams));
                E::Join(rest)
            } else if rx.slot == usize::MAX - 1 {
                items[0].clone()
            } else {
                let mut out = Vec::with_capacity(items.len());
                for (i, it) in items.iter().enumerate() {
                    match it {
                        E::Join(inner) if i == rx.slot => out.extend(inner.iter().cloned()),
                        E::Infinite(_) if i == rx.slot => {}
                        other => out.push(other.clone()),
                    }
                }
                E::Join(out)
            }
        }
        (E::Join(items), Rule::Unit) => {
            let mut out = items.clone();
            out.remove(rx.slot);
            E::Join(out)
        }
        (E::Join(items), Rule::R5) => {
            let mut total = FreeParam::zero();
            let mut out = Vec::with_capacity(items.len());
            let mut placed = false;
            for it in items {
                if let E::Lf(t) = it {
                    total = total.add(t);
                    if !placed {
                        out.push(E::Lf(FreeParam::zero()));
                        placed = true;
                    }
                } else {
                    out.push(it.clone());
                }
            }
            for it in out.iter_mut() {
                if let E::Lf(t) = it {
                    *t = total.clone();
                }
            }
            E::Join(out)
        }
        (E::Join(items), Rule::R8) => {
            E::Join(items.iter().filter(|e| !matches!(e, E::Lf(_))).cloned().collect())
        }
        (E::Fsp { base, .. }, Rule::FspEmpty) => base.as_ref().clone(),
        (E::Fsp { base, terms }, rule) => {
            let FspTerm { c, expr } = &terms[rx.slot];
            let c_sq = c.square()?;
            match (rule, expr) {
                (Rule::R6, E::Atom(sa)) => {
                    let mut add = vec![E::Atom(sa.atom.at(sa.scale.div(c)?))];
                    add.extend(lf_if_nonzero(FreeParam::Finite(&c_sq - BigRational::one())));
                    replace_term(base, terms, rx.slot, add, vec![])
                }
                (Rule::R4, E::Atom(sa)) => {
                    let u_sq = sa.scale.square()?;
                    let corr = &c_sq * (BigRational::one() - u_sq.recip());
                    let add = lf_if_nonzero(FreeParam::Finite(corr)).into_iter().collect();
                    let term = FspTerm::new(c.div(&sa.scale)?, E::Atom(sa.atom.unit()));
                    replace_term(base, terms, rx.slot, add, vec![term])
                }
                (Rule::R2, E::Lf(s)) => {
                    let add = lf_if_nonzero(s.scale(&c_sq)?).into_iter().collect();
                    replace_term(base, terms, rx.slot, add, vec![])
                }
                (Rule::R3, E::Join(items)) => {
                    let split = items.iter().map(|e| FspTerm::new(c.clone(), e.clone())).collect();
                    replace_term(base, terms, rx.slot, vec![], split)
                }
                (Rule::R3, E::Fsp { base: b2, terms: t2 }) => {
                    let mut split = vec![FspTerm::new(c.clone(), b2.as_ref().clone())];
                    for t in t2 {
                        split.push(FspTerm::new(c.mul(&t.c)?, t.expr.clone()));
                    }
                    replace_term(base, terms, rx.slot, vec![], split)
                }
                (Rule::R9, E::Infinite(fams)) => {
                    let inv = c.recip()?;
                    let fams = fams.iter().map(|f| f.rescaled(&inv)).collect::<Result<_, _>>()?;
                    replace_term(base, terms, rx.slot, vec![E::Infinite(fams)], vec![])
                }
                _ => unreachable!("redex mismatch"),
            }
        }
        (E::Rescale { expr, by }, Rule::R1) => {
            if by.is_one() {
                expr.as_ref().clone()
            } else {
                match expr.as_ref() {
                    E::Atom(sa) => E::Atom(sa.atom.at(sa.scale.mul(by)?)),
                    E::Rescale { expr: inner, by: mu } => E::rescale(inner.as_ref().clone(), mu.mul(by)?),
                    _ => unreachable!(),
                }
            }
        }
        (E::Rescale { expr, by }, Rule::R7) => match expr.as_ref() {
            E::Lf(t) => E::Lf(amplified_exponent(t, by)?),
            E::Join(items) => rescale_flat(items, by)?,
            _ => unreachable!(),
        },
        (E::Rescale { expr, by }, Rule::R9) => match expr.as_ref() {
            E::Infinite(fams) => {
                E::Infinite(fams.iter().map(|f| f.rescaled(by)).collect::<Result<_, _>>()?)
            }
            E::Join(items) => {
                let mut out = Vec::with_capacity(items.len());
                for it in items {
                    out.push(match it {
                        E::Atom(sa) => E::Atom(sa.atom.at(sa.scale.mul(by)?)),
                        E::Infinite(fams) => E::Infinite(
                            fams.iter().map(|f| f.rescaled(by)).collect::<Result<_, _>>()?,
                        ),
                        other => other.clone(),
                    });
                }
                E::Join(out)
            }
            _ => unreachable!(),
        },
        _ => unreachable!("redex mismatch"),
    })
}

fn find_innermost(node: &AlgebraExpr, path: &mut Vec<usize>) -> Option<Redex> {
    for (i, c) in node.children().into_iter().enumerate() {
        path.push(i);
        if let Some(r) = find_innermost(c, path) {
            return Some(r);
        }
        path.pop();
    }
    redexes(node).into_iter().next()
}

fn collect_all(node: &AlgebraExpr, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, Redex)>) {
    for (i, c) in node.children().into_iter().enumerate() {
        path.push(i);
        collect_all(c, path, out);
        path.pop();
    }
    for r in redexes(node) {
        out.push((path.clone(), r));
    }
}

/// Reads a fully rewritten expression as a form.
fn read_form(e: &AlgebraExpr) -> Result<FreeProductForm, RewriteError> {
    let mut atoms = Vec::new();
    let mut tail = Vec::new();
    let mut excess = FreeParam::zero();
    let mut take = |x: &AlgebraExpr| -> Result<(), RewriteError> {
        match x {
            AlgebraExpr::Atom(sa) => atoms.push(sa.clone()),
            AlgebraExpr::Infinite(f) => tail.extend(f.iter().cloned()),
            AlgebraExpr::Lf(t) => excess = excess.add(t),
            other => return Err(RewriteError::Stuck(other.to_string())),
        }
        Ok(())
    };
    match e {
        AlgebraExpr::Join(items) => items.iter().try_for_each(&mut take)?,
        other => take(other)?,
    }
    Ok(FreeProductForm::new(atoms, tail, excess))
}

fn coefficient_warnings(e: &AlgebraExpr, out: &mut Vec<String>) {
    if let AlgebraExpr::Fsp { terms, .. } = e {
        for t in terms {
            if t.c > Scalar::one() {
                out.push(format!("free scaled product coefficient {} > 1 in [{}]{{{}}}", t.c, t.c, t.expr));
            }
        }
    }
    for c in e.children() {
        coefficient_warnings(c, out);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Normalizer {
    pub strategy: Strategy,
    pub record: bool,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { strategy: Strategy::Innermost, record: true }
    }
}

impl Normalizer {
    pub fn new(strategy: Strategy) -> Self {
        Normalizer { strategy, record: true }
    }

    pub fn quiet(strategy: Strategy) -> Self {
        Normalizer { strategy, record: false }
    }

    /// Rewrites to normal form. The result may be provisional (violate the
    /// top-level bound); see [`normalize_top`] for the checked variant.
    pub fn run(&self, expr: &AlgebraExpr) -> Result<Normalized, RewriteError> {
        expr.validate()?;
        let mut trace = DerivationTrace::default();
        coefficient_warnings(expr, &mut trace.warnings);
        let mut cur = expr.clone();
        let mut rng = match self.strategy {
            Strategy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Strategy::Innermost => None,
        };
        let mut all = Vec::new();
        for _ in 0..MAX_STEPS {
            let chosen = match rng.as_mut() {
                None => {
                    let mut path = Vec::new();
                    find_innermost(&cur, &mut path).map(|r| (path, r))
                }
                Some(rng) => {
                    all.clear();
                    collect_all(&cur, &mut Vec::new(), &mut all);
                    if all.is_empty() {
                        None
                    } else {
                        let i = rng.gen_range(0..all.len());
                        Some(all.swap_remove(i))
                    }
                }
            };
            let Some((path, rx)) = chosen else {
                let form = read_form(&cur)?;
                return Ok(Normalized { form, trace });
            };
            let node = cur.at_path_mut(&path).expect("redex path is valid");
            let after = apply(node, rx)?;
            if self.record {
                trace.steps.push(TraceStep {
                    rule: rx.rule,
                    cite: rx.rule.cite().to_string(),
                    path,
                    before: node.clone(),
                    after: after.clone(),
                });
            }
            *node = after;
        }
        Err(RewriteError::StepLimit(MAX_STEPS))
    }
}

pub fn normalize(expr: &AlgebraExpr) -> Result<Normalized, RewriteError> {
    Normalizer::default().run(expr)
}

pub fn normalize_with(expr: &AlgebraExpr, strategy: Strategy) -> Result<Normalized, RewriteError> {
    Normalizer::new(strategy).run(expr)
}

/// Normalizes and enforces the top-level validity bound.
pub fn normalize_top(expr: &AlgebraExpr) -> Result<Normalized, RewriteError> {
    let n = normalize(expr)?;
    validity_check(&n.form)?;
    Ok(n)
}

pub fn equivalent(e1: &AlgebraExpr, e2: &AlgebraExpr) -> Result<bool, RewriteError> {
    Ok(normalize(e1)?.form == normalize(e2)?.form)
}

/// Applies the trace to `input` step by step, checking each recorded
/// `before` fragment, and reads off the resulting form.
pub fn replay(input: &AlgebraExpr, trace: &DerivationTrace) -> Result<FreeProductForm, RewriteError> {
    let mut cur = input.clone();
    for (i, step) in trace.steps.iter().enumerate() {
        let node = cur.at_path_mut(&step.path).ok_or_else(|| RewriteError::Replay {
            step: i,
            reason: format!("no node at path {:?}", step.path),
        })?;
        if *node != step.before {
            return Err(RewriteError::Replay { step: i, reason: "fragment mismatch".into() });
        }
        let sound = redexes(node).into_iter().any(|r| {
            r.rule == step.rule && apply(node, r).ok().as_ref() == Some(&step.after)
        });
        if !sound {
            return Err(RewriteError::Replay {
                step: i,
                reason: format!("{} does not produce the recorded fragment", step.rule),
            });
        }
        *node = step.after.clone();
    }
    read_form(&cur).map_err(|e| RewriteError::Replay { step: trace.steps.len(), reason: format!("trace ends early: {e}") })
}

/// Amplifies a normal form by `lambda`.
pub fn rescale(form: &FreeProductForm, lambda: &Scalar) -> Result<FreeProductForm, RewriteError> {
    if !lambda.is_positive_finite() {
        return Err(IrError::InvalidRescale(lambda.to_string()).into());
    }
    if lambda.is_one() {
        return Ok(form.clone());
    }
    let atoms = form
        .atoms()
        .iter()
        .map(|a| Ok(a.atom.at(a.scale.mul(lambda)?)))
        .collect::<Result<Vec<_>, ArithError>>()?;
    let out = if form.is_infinite() {
        let tail = form.tail().iter().map(|f| f.rescaled(lambda)).collect::<Result<_, _>>()?;
        FreeProductForm::new(atoms, tail, FreeParam::zero())
    } else {
        let a = a_formula(form.excess(), form.k() as i64, lambda)?;
        FreeProductForm::finite(atoms, a)
    };
    // atoms with full fundamental group return to scale 1
    let collapsible = out.atoms().iter().any(|a| collapses(a) && !a.scale.is_one())
        || out.tail().iter().any(family_collapses);
    if collapsible {
        return Ok(normalize(&out.to_expr())?.form);
    }
    Ok(out)
}

/// The `lambda` for which `rescale(form, lambda)` has excess exactly 0:
/// `lambda^2 = (a' + k - 1) / (k - 1)`.
pub fn solve_lambda_zero_excess(form: &FreeProductForm) -> Result<Scalar, RewriteError> {
    if form.is_infinite() {
        return Err(RewriteError::Solver("form is infinite".into()));
    }
    let k = form.k();
    if form.excess().is_zero() {
        return Ok(Scalar::one());
    }
    if k < 2 {
        return Err(RewriteError::Solver(format!(
            "needs at least two atoms to cancel the excess, found {k}"
        )));
    }
    let a = form
        .excess()
        .as_rational()
        .ok_or_else(|| RewriteError::Solver("infinite excess cannot be cancelled".into()))?;
    let km1 = BigRational::from_integer(((k - 1) as i64).into());
    let num = a + &km1;
    if num <= BigRational::from_integer(0.into()) {
        return Err(RewriteError::Solver(format!(
            "excess {a} <= 1 - k = {} would force lambda^2 <= 0",
            -&km1
        )));
    }
    Ok(Scalar::from_square(num / km1)?)
}

/// Semantic value of a normal form under an assignment; shorthand for tests.
pub fn form_semantics(
    form: &FreeProductForm,
    assign: &BTreeMap<String, BigRational>,
) -> Result<FreeParam, IrError> {
    exponent_semantics(&form.to_expr(), assign)
}
