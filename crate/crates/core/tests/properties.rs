//! Property tests for the invariants of each module.

use std::collections::BTreeMap;

use freeprod::cli::{NormalizeReport, ReplayInput};
use freeprod::decompose::{
    prop21_decompose, prop31_decompose, thm_subfin, DecompositionReport, LambdaChoice, PairInput, Prop21Input,
    Prop31Input, SubfactorPairReport,
};
use freeprod::ir::{exponent_semantics, validity_check, AlgebraExpr, FactorAtom, FreeProductForm, FspTerm};
use freeprod::lattice::{pf_weights, square_from_inclusion, BipartiteGraph, DEFAULT_MAX_ITER, DEFAULT_TOL};
use freeprod::rewrite::{normalize, replay, rescale, Normalizer, Strategy as Order};
use freeprod::scalar::{FreeParam, Scalar};
use freeprod::square::{
    all_selections, compute_partitions, free_dimension, prepare, CommutingSquareData, GammaPolicy,
};
use freeprod::testkit::{
    cross_check_cor22a, cross_check_cor32a, gen_betas, gen_expr, gen_square, random_assignment, RandomSquareSpec,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent fraction arithmetic on machine integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Frac(i128, i128);

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    fn new(p: i128, q: i128) -> Self {
        let g = gcd(p, q).max(1);
        let s = if q < 0 { -1 } else { 1 };
        Frac(s * p / g, s * q / g)
    }
    fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn sub(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
    fn mul(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1, self.1 * o.0)
    }
    fn scalar(self) -> Scalar {
        Scalar::ratio(self.0 as i64, self.1 as i64)
    }
    fn param(self) -> FreeParam {
        FreeParam::ratio(self.0 as i64, self.1 as i64)
    }
}

fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn positive_frac() -> impl Strategy<Value = Frac> {
    (1i128..500, 1i128..500).prop_map(|(p, q)| Frac::new(p, q))
}

fn signed_frac() -> impl Strategy<Value = Frac> {
    (-500i128..500, 1i128..500).prop_map(|(p, q)| Frac::new(p, q))
}

/// Positive scalars, sometimes irrational with a rational square.
fn scale() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        3 => positive_frac().prop_map(Frac::scalar),
        1 => positive_frac().prop_map(|f| Scalar::from_square(rat(f.0 as i64, f.1 as i64)).unwrap()),
    ]
}

fn small_square(seed: u64) -> CommutingSquareData {
    gen_square(&RandomSquareSpec { max_rows: 4, max_cols: 5, ..RandomSquareSpec::new(seed) })
}

fn q() -> FactorAtom {
    FactorAtom::generic("Q")
}

fn assignment(exprs: &[&AlgebraExpr], seed: u64) -> BTreeMap<String, BigRational> {
    random_assignment(exprs, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scalar_arithmetic_matches_fraction_oracle(a in positive_frac(), b in positive_frac()) {
        let (sa, sb) = (a.scalar(), b.scalar());
        prop_assert_eq!(sa.add(&sb).unwrap(), a.add(b).scalar());
        prop_assert_eq!(sa.mul(&sb).unwrap(), a.mul(b).scalar());
        prop_assert_eq!(sa.div(&sb).unwrap(), a.div(b).scalar());
        let d = a.sub(b);
        match sa.sub(&sb) {
            Ok(s) => prop_assert_eq!(s, d.scalar()),
            Err(_) => prop_assert!(d.0 < 0),
        }
        prop_assert_eq!(sa.to_string().parse::<Scalar>().unwrap(), sa);
    }

    #[test]
    fn free_params_add_like_fractions(a in signed_frac(), b in signed_frac(), c in positive_frac()) {
        prop_assert_eq!(a.param().add(&b.param()), a.add(b).param());
        let scaled = a.param().scale(&rat(c.0 as i64, c.1 as i64)).unwrap();
        prop_assert_eq!(scaled, a.mul(c).param());
        prop_assert_eq!(a.param().to_string().parse::<FreeParam>().unwrap(), a.param());
    }

    #[test]
    fn radicals_keep_their_square(f in positive_frac()) {
        let sq = rat(f.0 as i64, f.1 as i64);
        let r = Scalar::from_square(sq.clone()).unwrap();
        prop_assert_eq!(r.square().unwrap(), sq.clone());
        prop_assert_eq!(r.mul(&r).unwrap(), Scalar::from(sq));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn normal_forms_preserve_semantics(seed in any::<u64>()) {
        let expr = gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let form = normalize(&expr).unwrap().form;
        let back = form.to_expr();
        for k in 0..3 {
            let a = assignment(&[&expr], seed ^ k);
            prop_assert_eq!(exponent_semantics(&expr, &a).unwrap(), exponent_semantics(&back, &a).unwrap());
        }
    }

    #[test]
    fn serialization_is_identity_on_normal_forms(seed in any::<u64>()) {
        let expr = gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let form = normalize(&expr).unwrap().form;
        let json = serde_json::to_string(&form).unwrap();
        let back: FreeProductForm = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &form);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn every_rewrite_step_preserves_semantics(seed in any::<u64>()) {
        let expr = gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let n = Normalizer::new(Order::Random(seed)).run(&expr).unwrap();
        let a = assignment(&[&expr], seed);
        for step in &n.trace.steps {
            let before = exponent_semantics(&step.before, &a).unwrap();
            let after = exponent_semantics(&step.after, &a).unwrap();
            prop_assert_eq!(before, after, "rule {} at {:?}", step.rule.name(), step.path);
        }
    }

    #[test]
    fn random_rule_orders_agree(seed in any::<u64>()) {
        let expr = gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        let reference = normalize(&expr).unwrap().form;
        for k in 0..3 {
            let other = Normalizer::quiet(Order::Random(seed.wrapping_add(k))).run(&expr).unwrap().form;
            prop_assert_eq!(&other, &reference);
        }
    }

    #[test]
    fn traces_replay_to_the_normal_form(seed in any::<u64>()) {
        let expr = gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let n = normalize(&expr).unwrap();
        prop_assert_eq!(replay(&expr, &n.trace).unwrap(), n.form.clone());
        let report = NormalizeReport { input: expr, form: n.form, warnings: vec![], trace: Some(n.trace) };
        let json = serde_json::to_value(&report).unwrap();
        let back: NormalizeReport = serde_json::from_value(json.clone()).unwrap();
        prop_assert_eq!(&back, &report);
        let as_replay: ReplayInput = serde_json::from_value(json).unwrap();
        prop_assert_eq!(replay(&as_replay.input, &as_replay.trace).unwrap(), report.form);
    }

    #[test]
    fn rescale_is_an_action(seed in any::<u64>(), l in scale(), m in scale()) {
        let form = normalize(&gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 3)).unwrap().form;
        prop_assert_eq!(rescale(&form, &Scalar::one()).unwrap(), form.clone());
        let there = rescale(&form, &l).unwrap();
        prop_assert_eq!(rescale(&there, &l.recip().unwrap()).unwrap(), form.clone());
        let lm = l.mul(&m).unwrap();
        prop_assert_eq!(rescale(&form, &lm).unwrap(), rescale(&there, &m).unwrap());
        // the closed-form action agrees with rewriting the rescaled expression
        let rewritten = normalize(&AlgebraExpr::rescale(form.to_expr(), l.clone())).unwrap().form;
        prop_assert_eq!(rewritten, there);
    }

    #[test]
    fn flatten_agrees_with_term_merge(c in scale(), x in signed_frac()) {
        let xp = x.param();
        let c2 = c.square().unwrap();
        let expected = FreeProductForm::pure_lf(xp.scale(&c2).unwrap());
        let lf_term = AlgebraExpr::term(c.clone(), AlgebraExpr::lf(xp.clone()));
        prop_assert_eq!(normalize(&lf_term).unwrap().form, expected.clone());
        if let FreeParam::Finite(v) = &xp {
            if *v > BigRational::from_integer(1.into()) {
                let f = FactorAtom::free_group("F", xp.clone()).unwrap();
                let atom_term = AlgebraExpr::term(c, AlgebraExpr::unit_atom(&f));
                prop_assert_eq!(normalize(&atom_term).unwrap().form, expected);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partitions_cover_the_used_summands(seed in any::<u64>()) {
        let data = prepare(&gen_square(&RandomSquareSpec::new(seed))).unwrap().data;
        let p = compute_partitions(&data);
        let mut seen = vec![0u32; data.n_cols()];
        for jm in &p.j {
            for &j in jm {
                seen[j] += 1;
            }
        }
        for j in 0..data.n_cols() {
            let used = data.mult.iter().any(|r| r[j] > 0);
            prop_assert_eq!(seen[j], u32::from(used));
        }
    }

    #[test]
    fn free_dimension_matches_its_definition(seed in any::<u64>()) {
        let data = gen_square(&RandomSquareSpec::new(seed));
        for m in 0..data.n_rows() {
            let b = data.beta(m);
            let mut expected = BigRational::from_integer(1.into());
            for j in 0..data.n_cols() {
                if data.mult[m][j] > 0 {
                    let ratio = data.alpha(j) / &b;
                    expected -= &ratio * &ratio;
                }
            }
            prop_assert_eq!(free_dimension(&data, m), expected);
        }
    }

    #[test]
    fn single_row_pipeline_matches_closed_form(seed in any::<u64>()) {
        let betas = gen_betas(seed, 6, 12);
        let out = cross_check_cor22a(&FactorAtom::generic("N"), &betas, &[]);
        prop_assert!(out.pass, "{:?}", out.diff);
    }

    #[test]
    fn square_pipeline_matches_closed_form(seed in any::<u64>()) {
        let out = cross_check_cor32a(&small_square(seed), &[]);
        prop_assert!(out.pass, "{:?}", out.diff);
    }

    #[test]
    fn subfin_is_gamma_independent(seed in any::<u64>()) {
        let square = small_square(seed);
        let prepared = prepare(&square).unwrap();
        let m2 = CommutingSquareData::matrix_algebra(2);
        let base = thm_subfin(&PairInput::new(square.clone(), m2.clone()), &LambdaChoice::default()).unwrap();
        for sel in all_selections(&prepared.data).unwrap().into_iter().take(50) {
            let mut pair = PairInput::new(square.clone(), m2.clone());
            pair.gamma0 = GammaPolicy::Explicit(sel.choices.clone());
            let other = thm_subfin(&pair, &LambdaChoice::default()).unwrap();
            prop_assert_eq!(&other.p0, &base.p0);
            prop_assert_eq!(&other.p_m1, &base.p_m1);
        }
    }

    #[test]
    fn trace_scale_does_not_change_normalized_outputs(seed in any::<u64>(), f in positive_frac()) {
        let factor = rat(f.0 as i64, f.1 as i64);
        let square = small_square(seed);
        let scaled = square.scaled(&factor);
        let run = |s: &CommutingSquareData| {
            prop31_decompose(&Prop31Input { square: s.clone(), atoms: vec![], gamma: GammaPolicy::MaxAlpha, tail_atom: None })
                .unwrap()
        };
        let (a, b) = (run(&square), run(&scaled));
        prop_assert_eq!(&a.corner, &b.corner);
        prop_assert_eq!(a.amplified, b.amplified);
        let pair = |s: &CommutingSquareData| {
            thm_subfin(&PairInput::new(s.clone(), CommutingSquareData::matrix_algebra(3)), &LambdaChoice::default()).unwrap()
        };
        prop_assert_eq!(pair(&square).p0, pair(&scaled).p0);

        // prop21: only the base scale follows the total trace
        let betas = gen_betas(seed, 5, 9);
        let p21 = |bs: Vec<BigRational>| {
            prop21_decompose(&Prop21Input {
                base: FactorAtom::generic("N"),
                betas: bs.into_iter().map(Scalar::from).collect(),
                atoms: vec![],
                tail: None,
            })
            .unwrap()
            .amplified
            .unwrap()
        };
        let plain = p21(betas.clone());
        let big = p21(betas.iter().map(|b| b * &factor).collect());
        let strip = |form: &FreeProductForm| {
            form.atoms().iter().filter(|a| a.atom.id != "N").cloned().collect::<Vec<_>>()
        };
        prop_assert_eq!(strip(&plain), strip(&big));
        prop_assert_eq!(plain.excess(), big.excess());
    }

    #[test]
    fn permuting_later_rows_permutes_atoms_only(seed in any::<u64>(), rot in 0usize..5) {
        let square = small_square(seed);
        let n = square.n_rows();
        let atoms: Vec<FactorAtom> = (1..=n).map(|i| FactorAtom::generic(format!("Q{i}"))).collect();
        let mut order: Vec<usize> = (0..n).collect();
        if n > 2 {
            order[1..].rotate_left(rot % (n - 1));
        }
        let permuted = square.permuted(&order);
        let permuted_atoms: Vec<FactorAtom> = order.iter().map(|&i| atoms[i].clone()).collect();
        let run = |s: CommutingSquareData, a: Vec<FactorAtom>| {
            prop31_decompose(&Prop31Input { square: s, atoms: a, gamma: GammaPolicy::MaxAlpha, tail_atom: None })
                .unwrap()
                .amplified
                .unwrap()
        };
        prop_assert_eq!(run(square, atoms), run(permuted, permuted_atoms));
    }

    #[test]
    fn emitted_forms_are_valid(seed in any::<u64>()) {
        let square = gen_square(&RandomSquareSpec::new(seed));
        let r = prop31_decompose(&Prop31Input { square: square.clone(), atoms: vec![q()], gamma: GammaPolicy::MaxAlpha, tail_atom: None }).unwrap();
        prop_assert!(validity_check(r.amplified.as_ref().unwrap()).is_ok());
        let pair = thm_subfin(&PairInput::new(square, CommutingSquareData::matrix_algebra(2)), &LambdaChoice::default()).unwrap();
        prop_assert!(validity_check(&pair.p0).is_ok() && validity_check(&pair.p_m1).is_ok());
        let betas = gen_betas(seed, 6, 12);
        let r = prop21_decompose(&Prop21Input { base: FactorAtom::generic("N"), betas: betas.into_iter().map(Scalar::from).collect(), atoms: vec![], tail: None }).unwrap();
        prop_assert!(validity_check(r.amplified.as_ref().unwrap()).is_ok());
    }

    #[test]
    fn reports_round_trip(seed in any::<u64>()) {
        let square = small_square(seed);
        let r = prop31_decompose(&Prop31Input { square: square.clone(), atoms: vec![], gamma: GammaPolicy::MaxAlpha, tail_atom: None }).unwrap();
        let back: DecompositionReport = serde_json::from_value(serde_json::to_value(&r).unwrap()).unwrap();
        prop_assert_eq!(back, r);
        let p = thm_subfin(&PairInput::new(square, CommutingSquareData::matrix_algebra(2)), &LambdaChoice::ZeroA);
        if let Ok(p) = p {
            let back: SubfactorPairReport = serde_json::from_value(serde_json::to_value(&p).unwrap()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}

fn random_graph(seed: u64) -> BipartiteGraph {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let ne = r.gen_range(1..=4);
        let no = r.gen_range(1..=4);
        let mut edges = vec![];
        for i in 0..ne {
            for j in 0..no {
                if r.gen_bool(0.5) {
                    edges.push((i, j, r.gen_range(1..=3)));
                }
            }
        }
        let g = BipartiteGraph {
            even: (0..ne).map(|i| format!("e{i}").as_str().into()).collect(),
            odd: (0..no).map(|j| format!("o{j}").as_str().into()).collect(),
            edges,
            star: "e0".into(),
        };
        if g.validate().is_ok() && g.adjacency() != vec![vec![1]] {
            return g;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ingested_squares_validate(seed in any::<u64>()) {
        let g = random_graph(seed);
        let w = pf_weights(&g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        prop_assert!(w.even.iter().chain(&w.odd).all(|x| *x > 0.0));
        let sq = square_from_inclusion(&g, &w).unwrap();
        prop_assert!(sq.residual < 1e-9);
        if let Some(data) = &sq.data {
            prop_assert!(data.validate().is_ok());
        }
    }
}

#[test]
fn path_graph_norms_within_ten_tolerances() {
    for n in 2..=10 {
        let w = pf_weights(&BipartiteGraph::path(n), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let c = (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((w.eigenvalue - 4.0 * c * c).abs() < 10.0 * DEFAULT_TOL, "A_{n}: {}", w.eigenvalue);
    }
}

#[test]
fn fsp_terms_flatten_to_rescaled_atoms() {
    // [c]{Q} has semantics c^2 x = (1 + (x - 1) c^2) + (c^2 - 1)
    let e = AlgebraExpr::fsp(
        AlgebraExpr::unit_atom(&q()),
        vec![FspTerm::new(Scalar::int(3), AlgebraExpr::unit_atom(&FactorAtom::generic("R")))],
    );
    let form = normalize(&e).unwrap().form;
    let expected = FreeProductForm::finite(
        vec![q().unit(), FactorAtom::generic("R").at(Scalar::ratio(1, 3))],
        FreeParam::int(8),
    );
    assert_eq!(form, expected);
}
