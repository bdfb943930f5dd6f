//! Expression types for isomorphism classes of free products of rescaled
//! II1-factors, and the canonical normal form the rewrite engine targets.
//!
//! Notation: `Q_s` is the amplification (or compression) of `Q` by `s`,
//! `L(F_t)` an interpolated free group factor with `t` possibly negative
//! inside a larger product, `*` the free product, and `[c]{E}` a free scaled
//! product term attaching `E` at relative weight `c` to a base.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{ArithError, FreeParam, Scalar};
use crate::sequence::ClosedForm;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("scale of atom `{0}` must be positive and finite, got {1}")]
    InvalidScale(String, String),
    #[error("free scaled product coefficient must be positive and finite, got {0}")]
    InvalidCoefficient(String),
    #[error("rescaling factor must be positive and finite, got {0}")]
    InvalidRescale(String),
    #[error("interpolated free group atom `{0}` needs a parameter > 1, got {1}")]
    InvalidFreeGroupParam(String, String),
    #[error("atom `{0}` is declared twice with different kinds or properties")]
    InconsistentAtom(String),
    #[error("no parameter assigned to generic atom `{0}`")]
    MissingAssignment(String),
    #[error("assigned parameter for `{0}` must be a rational > 1")]
    InvalidAssignment(String),
    #[error("exponent semantics is only defined for finite expressions")]
    InfiniteExpression,
    #[error("invalid sequence in infinite family `{0}`: {1}")]
    InvalidFamily(String, ArithError),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AtomKind {
    #[default]
    Generic,
    /// `L(F_t)` with `t > 1` or `t = inf`.
    FreeGroup(FreeParam),
}

impl AtomKind {
    fn is_generic(&self) -> bool {
        matches!(self, AtomKind::Generic)
    }
}

/// A named factor. Property flags are declarations supplied by the caller;
/// nothing here infers them.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "AtomInput", into = "AtomDecl")]
pub struct FactorAtom {
    pub id: String,
    pub kind: AtomKind,
    /// `Q ~= Q * L(F_inf)`.
    pub absorbs_lf_inf: bool,
    /// Fundamental group is all of the positive reals, so `Q_s ~= Q`.
    pub fundamental_group_all_positive: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AtomDecl {
    id: String,
    #[serde(default, skip_serializing_if = "AtomKind::is_generic")]
    kind: AtomKind,
    #[serde(default, skip_serializing_if = "is_false")]
    absorbs_lf_inf: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    fundamental_group_all_positive: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AtomInput {
    Name(String),
    Decl(AtomDecl),
}

impl TryFrom<AtomDecl> for FactorAtom {
    type Error = IrError;

    fn try_from(d: AtomDecl) -> Result<Self, IrError> {
        let atom = FactorAtom {
            id: d.id,
            kind: d.kind,
            absorbs_lf_inf: d.absorbs_lf_inf,
            fundamental_group_all_positive: d.fundamental_group_all_positive,
        };
        atom.validate()?;
        Ok(atom)
    }
}

impl TryFrom<AtomInput> for FactorAtom {
    type Error = IrError;

    fn try_from(input: AtomInput) -> Result<Self, IrError> {
        match input {
            AtomInput::Name(id) => Ok(FactorAtom::generic(id)),
            AtomInput::Decl(d) => d.try_into(),
        }
    }
}

impl From<FactorAtom> for AtomDecl {
    fn from(a: FactorAtom) -> Self {
        AtomDecl {
            id: a.id,
            kind: a.kind,
            absorbs_lf_inf: a.absorbs_lf_inf,
            fundamental_group_all_positive: a.fundamental_group_all_positive,
        }
    }
}

impl FactorAtom {
    pub fn generic(id: impl Into<String>) -> Self {
        FactorAtom {
            id: id.into(),
            kind: AtomKind::Generic,
            absorbs_lf_inf: false,
            fundamental_group_all_positive: false,
        }
    }

    pub fn free_group(id: impl Into<String>, t: FreeParam) -> Result<Self, IrError> {
        let atom = FactorAtom { kind: AtomKind::FreeGroup(t), ..FactorAtom::generic(id) };
        atom.validate()?;
        Ok(atom)
    }

    pub fn absorbing(mut self) -> Self {
        self.absorbs_lf_inf = true;
        self
    }

    pub fn with_full_fundamental_group(mut self) -> Self {
        self.fundamental_group_all_positive = true;
        self
    }

    pub fn validate(&self) -> Result<(), IrError> {
        if let AtomKind::FreeGroup(t) = &self.kind {
            if *t <= FreeParam::int(1) {
                return Err(IrError::InvalidFreeGroupParam(self.id.clone(), t.to_string()));
            }
        }
        Ok(())
    }

    pub fn at(&self, scale: Scalar) -> ScaledAtom {
        ScaledAtom { atom: self.clone(), scale }
    }

    pub fn unit(&self) -> ScaledAtom {
        self.at(Scalar::one())
    }

    /// The name of the `i`-th member of an indexed family built from this atom.
    pub fn indexed_name(&self, i: u64) -> String {
        format!("{}({})", self.id, i)
    }
}

/// `Q_s`: an atom together with its amplification parameter.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ScaledInput", into = "ScaledDecl")]
pub struct ScaledAtom {
    pub atom: FactorAtom,
    pub scale: Scalar,
}

fn scalar_one() -> Scalar {
    Scalar::one()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScaledDecl {
    #[serde(flatten)]
    atom: AtomDecl,
    #[serde(default = "scalar_one", skip_serializing_if = "Scalar::is_one")]
    scale: Scalar,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScaledInput {
    Name(String),
    Decl(ScaledDecl),
}

impl TryFrom<ScaledInput> for ScaledAtom {
    type Error = IrError;

    fn try_from(input: ScaledInput) -> Result<Self, IrError> {
        let sa = match input {
            ScaledInput::Name(id) => FactorAtom::generic(id).unit(),
            ScaledInput::Decl(d) => ScaledAtom { atom: d.atom.try_into()?, scale: d.scale },
        };
        sa.validate()?;
        Ok(sa)
    }
}

impl From<ScaledAtom> for ScaledDecl {
    fn from(a: ScaledAtom) -> Self {
        ScaledDecl { atom: a.atom.into(), scale: a.scale }
    }
}

impl ScaledAtom {
    pub fn validate(&self) -> Result<(), IrError> {
        self.atom.validate()?;
        if !self.scale.is_positive_finite() {
            return Err(IrError::InvalidScale(self.atom.id.clone(), self.scale.to_string()));
        }
        Ok(())
    }
}

impl PartialOrd for ScaledAtom {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ScaledAtom {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.atom.id, &self.scale, &self.atom).cmp(&(&other.atom.id, &other.scale, &other.atom))
    }
}

fn default_start() -> u64 {
    1
}

/// Infinitely many atoms: the atom (or, when `indexed`, the distinct copy
/// `id(i)`) at scale `scales(i)` for every `i >= start`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomFamily {
    pub atom: FactorAtom,
    #[serde(default, skip_serializing_if = "is_false")]
    pub indexed: bool,
    pub scales: ClosedForm,
    #[serde(default = "default_start")]
    pub start: u64,
}

impl AtomFamily {
    /// `Q * Q * ...` with every copy at scale `s`.
    pub fn repeated(atom: FactorAtom, s: Scalar) -> Self {
        AtomFamily { atom, indexed: false, scales: ClosedForm::constant(s), start: 1 }
    }

    pub fn validate(&self) -> Result<(), IrError> {
        self.atom.validate()?;
        self.scales.validate().map_err(|e| IrError::InvalidFamily(self.atom.id.clone(), e))
    }

    pub fn rescaled(&self, by: &Scalar) -> Result<AtomFamily, ArithError> {
        Ok(AtomFamily { scales: self.scales.scaled(by)?, ..self.clone() })
    }

    pub fn with_scales(&self, scales: ClosedForm) -> AtomFamily {
        AtomFamily { scales, ..self.clone() }
    }

    fn canonical(mut self) -> Self {
        if self.scales.is_constant() && !self.indexed {
            self.start = 1;
        }
        self
    }

    pub fn is_plain_repetition(&self) -> bool {
        !self.indexed && self.scales.is_constant()
    }
}

/// One `[c]{E}` term of a free scaled product.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FspTerm {
    pub c: Scalar,
    pub expr: AlgebraExpr,
}

impl FspTerm {
    pub fn new(c: Scalar, expr: AlgebraExpr) -> Self {
        FspTerm { c, expr }
    }
}

/// General expression fed to the normalizer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "ExprInput")]
pub enum AlgebraExpr {
    Atom(ScaledAtom),
    /// Free product of the members; the empty join is the trivial fragment.
    Join(Vec<AlgebraExpr>),
    Fsp { base: Box<AlgebraExpr>, terms: Vec<FspTerm> },
    Rescale { expr: Box<AlgebraExpr>, by: Scalar },
    Lf(FreeParam),
    Infinite(Vec<AtomFamily>),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ExprInput {
    Atom(ScaledAtom),
    Join(Vec<AlgebraExpr>),
    Fsp { base: Box<AlgebraExpr>, terms: Vec<FspTerm> },
    /// A detached `[c]{E}` fragment, i.e. a free scaled product over the trivial base.
    Term(FspTerm),
    Rescale { expr: Box<AlgebraExpr>, by: Scalar },
    Lf(FreeParam),
    Infinite(Vec<AtomFamily>),
}

impl TryFrom<ExprInput> for AlgebraExpr {
    type Error = IrError;

    fn try_from(input: ExprInput) -> Result<Self, IrError> {
        let e = match input {
            ExprInput::Atom(a) => AlgebraExpr::Atom(a),
            ExprInput::Join(v) => AlgebraExpr::Join(v),
            ExprInput::Fsp { base, terms } => AlgebraExpr::Fsp { base, terms },
            ExprInput::Term(t) => AlgebraExpr::term(t.c, t.expr),
            ExprInput::Rescale { expr, by } => AlgebraExpr::Rescale { expr, by },
            ExprInput::Lf(t) => AlgebraExpr::Lf(t),
            ExprInput::Infinite(f) => AlgebraExpr::Infinite(f),
        };
        e.validate_node()?;
        Ok(e)
    }
}

impl AlgebraExpr {
    pub fn atom(a: ScaledAtom) -> Self {
        AlgebraExpr::Atom(a)
    }

    pub fn unit_atom(a: &FactorAtom) -> Self {
        AlgebraExpr::Atom(a.unit())
    }

    pub fn lf(t: FreeParam) -> Self {
        AlgebraExpr::Lf(t)
    }

    pub fn join(items: Vec<AlgebraExpr>) -> Self {
        AlgebraExpr::Join(items)
    }

    pub fn fsp(base: AlgebraExpr, terms: Vec<FspTerm>) -> Self {
        AlgebraExpr::Fsp { base: Box::new(base), terms }
    }

    /// `[c]{E}` on its own.
    pub fn term(c: Scalar, expr: AlgebraExpr) -> Self {
        AlgebraExpr::fsp(AlgebraExpr::Join(vec![]), vec![FspTerm::new(c, expr)])
    }

    pub fn rescale(expr: AlgebraExpr, by: Scalar) -> Self {
        AlgebraExpr::Rescale { expr: Box::new(expr), by }
    }

    pub fn children(&self) -> Vec<&AlgebraExpr> {
        match self {
            AlgebraExpr::Join(v) => v.iter().collect(),
            AlgebraExpr::Fsp { base, terms } => {
                std::iter::once(base.as_ref()).chain(terms.iter().map(|t| &t.expr)).collect()
            }
            AlgebraExpr::Rescale { expr, .. } => vec![expr.as_ref()],
            _ => vec![],
        }
    }

    /// Mutable access to the `idx`-th child, in the order of [`children`](Self::children).
    pub fn child_mut(&mut self, idx: usize) -> Option<&mut AlgebraExpr> {
        match self {
            AlgebraExpr::Join(v) => v.get_mut(idx),
            AlgebraExpr::Fsp { base, terms } => {
                if idx == 0 {
                    Some(base.as_mut())
                } else {
                    terms.get_mut(idx - 1).map(|t| &mut t.expr)
                }
            }
            AlgebraExpr::Rescale { expr, .. } if idx == 0 => Some(expr.as_mut()),
            _ => None,
        }
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&AlgebraExpr> {
        let mut cur = self;
        for &i in path {
            cur = *cur.children().get(i)?;
        }
        Some(cur)
    }

    pub fn at_path_mut(&mut self, path: &[usize]) -> Option<&mut AlgebraExpr> {
        let mut cur = self;
        for &i in path {
            cur = cur.child_mut(i)?;
        }
        Some(cur)
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, AlgebraExpr::Infinite(_)) || self.children().iter().any(|c| c.is_infinite())
    }

    fn validate_node(&self) -> Result<(), IrError> {
        match self {
            AlgebraExpr::Atom(a) => a.validate(),
            AlgebraExpr::Fsp { terms, .. } => {
                for t in terms {
                    if !t.c.is_positive_finite() {
                        return Err(IrError::InvalidCoefficient(t.c.to_string()));
                    }
                }
                Ok(())
            }
            AlgebraExpr::Rescale { by, .. } => {
                if by.is_positive_finite() {
                    Ok(())
                } else {
                    Err(IrError::InvalidRescale(by.to_string()))
                }
            }
            AlgebraExpr::Infinite(fams) => fams.iter().try_for_each(|f| f.validate()),
            AlgebraExpr::Join(_) | AlgebraExpr::Lf(_) => Ok(()),
        }
    }

    /// Checks every node's local invariants and that atom declarations agree.
    pub fn validate(&self) -> Result<(), IrError> {
        self.validate_tree()?;
        self.atom_declarations().map(|_| ())
    }

    fn validate_tree(&self) -> Result<(), IrError> {
        self.validate_node()?;
        self.children().iter().try_for_each(|c| c.validate_tree())
    }

    /// All atoms by id; errors if one id carries two different declarations.
    pub fn atom_declarations(&self) -> Result<BTreeMap<String, FactorAtom>, IrError> {
        let mut out = BTreeMap::new();
        self.collect_atoms(&mut out)?;
        Ok(out)
    }

    fn collect_atoms(&self, out: &mut BTreeMap<String, FactorAtom>) -> Result<(), IrError> {
        let mut add = |a: &FactorAtom| -> Result<(), IrError> {
            match out.get(&a.id) {
                Some(prev) if prev != a => Err(IrError::InconsistentAtom(a.id.clone())),
                Some(_) => Ok(()),
                None => {
                    out.insert(a.id.clone(), a.clone());
                    Ok(())
                }
            }
        };
        match self {
            AlgebraExpr::Atom(sa) => add(&sa.atom)?,
            AlgebraExpr::Infinite(fams) => {
                for f in fams {
                    add(&f.atom)?;
                }
            }
            _ => {}
        }
        for c in self.children() {
            c.collect_atoms(out)?;
        }
        Ok(())
    }
}

/// Amplification of a free-group exponent: `(L(F_e))_s = L(F_{1 + (e-1)/s^2})`.
pub fn amplified_exponent(e: &FreeParam, scale: &Scalar) -> Result<FreeParam, ArithError> {
    let inv_sq = scale.square()?.recip();
    match e {
        FreeParam::Infinite => Ok(FreeParam::Infinite),
        FreeParam::Finite(x) => {
            Ok(FreeParam::Finite(BigRational::one() + (x - BigRational::one()) * inv_sq))
        }
    }
}

/// The interpolated exponent of `expr` when each generic atom `Q` is read as
/// `L(F_x)` with `x = assign[Q]`.
///
/// This is a verification oracle: it is computed straight from the
/// definitions and shares no code with the rewrite engine.
pub fn exponent_semantics(
    expr: &AlgebraExpr,
    assign: &BTreeMap<String, BigRational>,
) -> Result<FreeParam, IrError> {
    match expr {
        AlgebraExpr::Atom(sa) => {
            let base = match &sa.atom.kind {
                AtomKind::FreeGroup(t) => t.clone(),
                AtomKind::Generic => {
                    let x = assign
                        .get(&sa.atom.id)
                        .ok_or_else(|| IrError::MissingAssignment(sa.atom.id.clone()))?;
                    if *x <= BigRational::one() {
                        return Err(IrError::InvalidAssignment(sa.atom.id.clone()));
                    }
                    FreeParam::Finite(x.clone())
                }
            };
            Ok(amplified_exponent(&base, &sa.scale)?)
        }
        AlgebraExpr::Join(items) => items.iter().try_fold(FreeParam::zero(), |acc, e| {
            Ok(acc.add(&exponent_semantics(e, assign)?))
        }),
        AlgebraExpr::Lf(t) => Ok(t.clone()),
        AlgebraExpr::Fsp { base, terms } => {
            let mut acc = exponent_semantics(base, assign)?;
            for t in terms {
                let inner = exponent_semantics(&t.expr, assign)?;
                acc = acc.add(&inner.scale(&t.c.square()?)?);
            }
            Ok(acc)
        }
        AlgebraExpr::Rescale { expr, by } => {
            Ok(amplified_exponent(&exponent_semantics(expr, assign)?, by)?)
        }
        AlgebraExpr::Infinite(_) => Err(IrError::InfiniteExpression),
    }
}

/// Canonical normal form: a multiset of scaled atoms (finite part plus
/// infinite families) and one aggregated free group parameter, the excess.
/// Excess `0` means there is no `L(F)` factor at all.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FormRepr", into = "FormRepr")]
pub struct FreeProductForm {
    atoms: Vec<ScaledAtom>,
    tail: Vec<AtomFamily>,
    excess: FreeParam,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormRepr {
    atoms: Vec<ScaledAtom>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tail: Vec<AtomFamily>,
    excess: FreeParam,
    #[serde(default)]
    provisional: bool,
}

impl TryFrom<FormRepr> for FreeProductForm {
    type Error = IrError;

    fn try_from(r: FormRepr) -> Result<Self, IrError> {
        for a in &r.atoms {
            a.validate()?;
        }
        for f in &r.tail {
            f.validate()?;
        }
        Ok(FreeProductForm::new(r.atoms, r.tail, r.excess))
    }
}

impl From<FreeProductForm> for FormRepr {
    fn from(f: FreeProductForm) -> Self {
        let provisional = f.is_provisional();
        FormRepr { atoms: f.atoms, tail: f.tail, excess: f.excess, provisional }
    }
}

/// Why a form fails the top-level bound `excess > 1 - k`.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("validity bound violated: {atoms} atom(s) with excess {excess}, need excess > {bound}{}", if *atoms >= 1 { " or excess = 0" } else { "" })]
pub struct ValidityViolation {
    pub atoms: usize,
    pub excess: FreeParam,
    pub bound: FreeParam,
}

impl FreeProductForm {
    /// Builds a form in canonical order. Finite atoms that duplicate a plain
    /// infinite repetition are dropped (infinite multiplicity absorbs them).
    pub fn new(atoms: Vec<ScaledAtom>, tail: Vec<AtomFamily>, excess: FreeParam) -> Self {
        let mut tail: Vec<AtomFamily> = tail.into_iter().map(AtomFamily::canonical).collect();
        tail.sort();
        tail.dedup_by(|a, b| a == b && a.is_plain_repetition());
        let mut atoms: Vec<ScaledAtom> = atoms
            .into_iter()
            .filter(|a| {
                !tail.iter().any(|f| {
                    f.is_plain_repetition() && f.atom == a.atom && f.scales.coef == a.scale
                })
            })
            .collect();
        atoms.sort();
        FreeProductForm { atoms, tail, excess }
    }

    pub fn finite(atoms: Vec<ScaledAtom>, excess: FreeParam) -> Self {
        FreeProductForm::new(atoms, vec![], excess)
    }

    pub fn pure_lf(t: FreeParam) -> Self {
        FreeProductForm::finite(vec![], t)
    }

    pub fn atoms(&self) -> &[ScaledAtom] {
        &self.atoms
    }

    pub fn tail(&self) -> &[AtomFamily] {
        &self.tail
    }

    pub fn excess(&self) -> &FreeParam {
        &self.excess
    }

    pub fn is_infinite(&self) -> bool {
        !self.tail.is_empty()
    }

    /// Number of finite atoms (the `k` of the validity bound).
    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_provisional(&self) -> bool {
        validity_check(self).is_err()
    }

    pub fn scales(&self) -> Vec<Scalar> {
        self.atoms.iter().map(|a| a.scale.clone()).collect()
    }

    pub fn to_expr(&self) -> AlgebraExpr {
        let mut items: Vec<AlgebraExpr> =
            self.atoms.iter().cloned().map(AlgebraExpr::Atom).collect();
        if !self.tail.is_empty() {
            items.push(AlgebraExpr::Infinite(self.tail.clone()));
        }
        if !self.excess.is_zero() {
            items.push(AlgebraExpr::Lf(self.excess.clone()));
        }
        AlgebraExpr::Join(items)
    }

    pub fn with_excess(&self, excess: FreeParam) -> Self {
        FreeProductForm { excess, ..self.clone() }
    }
}

/// Top-level bound: with `k >= 1` finite atoms the excess is `0` (no `L(F)`
/// factor) or `> 1 - k`; with no atoms it must exceed `1`. Infinite forms
/// are valid once their excess has been absorbed.
#[allow(clippy::result_large_err)]
pub fn validity_check(form: &FreeProductForm) -> Result<(), ValidityViolation> {
    let k = form.atoms.len();
    let violation = |bound: FreeParam| ValidityViolation {
        atoms: k,
        excess: form.excess.clone(),
        bound,
    };
    if form.is_infinite() {
        return if form.excess.is_zero() { Ok(()) } else { Err(violation(FreeParam::zero())) };
    }
    if k == 0 {
        let bound = FreeParam::int(1);
        return if form.excess > bound { Ok(()) } else { Err(violation(bound)) };
    }
    let bound = FreeParam::int(1 - k as i64);
    if form.excess.is_zero() || form.excess > bound {
        Ok(())
    } else {
        Err(violation(bound))
    }
}

impl fmt::Display for FactorAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AtomKind::Generic => f.write_str(&self.id),
            AtomKind::FreeGroup(t) => write!(f, "{}[L(F_{})]", self.id, t),
        }
    }
}

impl fmt::Display for ScaledAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale.is_one() {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "{}_{{{}}}", self.atom, self.scale)
        }
    }
}

impl fmt::Display for AtomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if self.indexed { format!("{}(i)", self.atom.id) } else { self.atom.to_string() };
        if self.is_plain_repetition() {
            let a = ScaledAtom { atom: self.atom.clone(), scale: self.scales.coef.clone() };
            write!(f, "({a} * {a} * ...)")
        } else {
            write!(f, "*_{{i>={}}} {}_{{{}}}", self.start, name, self.scales)
        }
    }
}

fn fmt_lf(t: &FreeParam) -> String {
    format!("L(F_{t})")
}

impl fmt::Display for AlgebraExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgebraExpr::Atom(a) => write!(f, "{a}"),
            AlgebraExpr::Lf(t) => f.write_str(&fmt_lf(t)),
            AlgebraExpr::Join(items) if items.is_empty() => f.write_str("1"),
            AlgebraExpr::Join(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|e| match e {
                        AlgebraExpr::Join(v) if v.len() > 1 => format!("({e})"),
                        AlgebraExpr::Fsp { .. } => format!("({e})"),
                        _ => e.to_string(),
                    })
                    .collect();
                f.write_str(&parts.join(" * "))
            }
            AlgebraExpr::Fsp { base, terms } => {
                let mut parts = Vec::new();
                let trivial_base = matches!(base.as_ref(), AlgebraExpr::Join(v) if v.is_empty());
                if !trivial_base {
                    parts.push(match base.as_ref() {
                        AlgebraExpr::Join(v) if v.len() > 1 => format!("({base})"),
                        _ => base.to_string(),
                    });
                }
                for t in terms {
                    parts.push(format!("[{}]{{{}}}", t.c, t.expr));
                }
                if parts.is_empty() {
                    f.write_str("1")
                } else {
                    f.write_str(&parts.join(" * "))
                }
            }
            AlgebraExpr::Rescale { expr, by } => write!(f, "({expr})_{{{by}}}"),
            AlgebraExpr::Infinite(fams) => {
                let parts: Vec<String> = fams.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(" * "))
            }
        }
    }
}

impl fmt::Display for FreeProductForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.atoms.iter().map(|a| a.to_string()).collect();
        parts.extend(self.tail.iter().map(|x| x.to_string()));
        if !self.excess.is_zero() || parts.is_empty() {
            parts.push(fmt_lf(&self.excess));
        }
        f.write_str(&parts.join(" * "))
    }
}

pub fn fmt_scale_list(scales: &[Scalar]) -> String {
    let parts: Vec<String> = scales.iter().map(|s| s.to_string()).collect();
    format!("({})", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::int;

    fn q() -> FactorAtom {
        FactorAtom::generic("Q")
    }

    fn assign(x: i64) -> BTreeMap<String, BigRational> {
        BTreeMap::from([("Q".to_string(), int(x))])
    }

    #[test]
    fn rescaled_lf_exponent() {
        // LF(3) at 1/2: 1 + 2*4 = 9
        let e = AlgebraExpr::rescale(AlgebraExpr::lf(FreeParam::int(3)), Scalar::ratio(1, 2));
        assert_eq!(exponent_semantics(&e, &BTreeMap::new()).unwrap(), FreeParam::int(9));
    }

    #[test]
    fn fsp_term_contributes_c_squared() {
        let e = AlgebraExpr::term(Scalar::int(3), AlgebraExpr::lf(FreeParam::int(2)));
        assert_eq!(exponent_semantics(&e, &BTreeMap::new()).unwrap(), FreeParam::int(18));
    }

    #[test]
    fn unit_atom_is_its_parameter() {
        let e = AlgebraExpr::unit_atom(&q());
        assert_eq!(exponent_semantics(&e, &assign(5)).unwrap(), FreeParam::int(5));
    }

    #[test]
    fn semantics_errors() {
        let e = AlgebraExpr::unit_atom(&q());
        assert_eq!(
            exponent_semantics(&e, &BTreeMap::new()),
            Err(IrError::MissingAssignment("Q".into()))
        );
        let inf = AlgebraExpr::Infinite(vec![AtomFamily::repeated(q(), Scalar::one())]);
        assert_eq!(exponent_semantics(&inf, &assign(2)), Err(IrError::InfiniteExpression));
    }

    #[test]
    fn validity_examples() {
        let ok = FreeProductForm::finite(
            vec![q().at(Scalar::int(3)), q().at(Scalar::ratio(3, 2))],
            FreeParam::ratio(-2, 3),
        );
        assert!(validity_check(&ok).is_ok());
        let bad = FreeProductForm::finite(vec![q().at(Scalar::int(2))], FreeParam::ratio(-3, 4));
        let v = validity_check(&bad).unwrap_err();
        assert_eq!(v.atoms, 1);
        assert_eq!(v.bound, FreeParam::zero());
        assert!(validity_check(&FreeProductForm::pure_lf(FreeParam::int(5))).is_ok());
        assert!(validity_check(&FreeProductForm::pure_lf(FreeParam::int(1))).is_err());
        // a lone atom with no L(F) factor
        assert!(validity_check(&FreeProductForm::finite(vec![q().unit()], FreeParam::zero())).is_ok());
    }

    #[test]
    fn canonical_order_and_infinite_multiplicity() {
        let r = FactorAtom::generic("R");
        let f = FreeProductForm::finite(
            vec![r.unit(), q().at(Scalar::int(2)), q().unit()],
            FreeParam::zero(),
        );
        let ids: Vec<String> = f.atoms().iter().map(|a| a.to_string()).collect();
        assert_eq!(ids, vec!["Q", "Q_{2}", "R"]);
        let g = FreeProductForm::new(
            vec![q().unit(), q().at(Scalar::int(2))],
            vec![AtomFamily::repeated(q(), Scalar::one()), AtomFamily::repeated(q(), Scalar::one())],
            FreeParam::zero(),
        );
        assert_eq!(g.k(), 1);
        assert_eq!(g.tail().len(), 1);
    }

    #[test]
    fn json_shapes() {
        let e: AlgebraExpr =
            serde_json::from_str(r#"{"term": {"c": "1/2", "expr": {"atom": "Q"}}}"#).unwrap();
        assert_eq!(e, AlgebraExpr::term(Scalar::ratio(1, 2), AlgebraExpr::unit_atom(&q())));
        let e: AlgebraExpr = serde_json::from_str(
            r#"{"join": [{"atom": {"id": "Q", "scale": "3/2"}}, {"lf": "-2/3"}]}"#,
        )
        .unwrap();
        let back: AlgebraExpr = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<AlgebraExpr>(r#"{"rescale": {"expr": {"lf": "2"}, "by": "0"}}"#).is_err());
        assert!(serde_json::from_str::<AlgebraExpr>(r#"{"atom": {"id": "F", "kind": {"free_group": "1"}}}"#).is_err());
        let form = FreeProductForm::finite(vec![q().at(Scalar::int(2))], FreeParam::ratio(-3, 4));
        let s = serde_json::to_string(&form).unwrap();
        assert!(s.contains("\"provisional\":true"));
        assert_eq!(serde_json::from_str::<FreeProductForm>(&s).unwrap(), form);
    }

    #[test]
    fn inconsistent_declarations_rejected() {
        let e = AlgebraExpr::join(vec![
            AlgebraExpr::unit_atom(&q()),
            AlgebraExpr::unit_atom(&q().absorbing()),
        ]);
        assert_eq!(e.validate(), Err(IrError::InconsistentAtom("Q".into())));
    }

    #[test]
    fn display_notation() {
        let form = FreeProductForm::finite(vec![q().unit()], FreeParam::ratio(3, 4));
        assert_eq!(form.to_string(), "Q * L(F_3/4)");
        let e = AlgebraExpr::fsp(
            AlgebraExpr::unit_atom(&q()),
            vec![FspTerm::new(Scalar::int(2), AlgebraExpr::unit_atom(&FactorAtom::generic("R")))],
        );
        assert_eq!(e.to_string(), "Q * [2]{R}");
    }
}
