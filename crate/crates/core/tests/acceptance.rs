//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use freeprod::decompose::{
    prop21_decompose, prop31_decompose, thm_msub, thm_subfin, thm_univ, DecompError, LambdaChoice, PairInput,
    Prop21Input, Prop21Tail, Prop31Input, TailAtom,
};
use freeprod::ir::{exponent_semantics, validity_check, AlgebraExpr, AtomFamily, FactorAtom, FreeProductForm};
use freeprod::lattice::{pf_weights, BipartiteGraph, DEFAULT_MAX_ITER, DEFAULT_TOL};
use freeprod::rewrite::{a_formula, form_semantics, normalize, rescale, solve_lambda_zero_excess};
use freeprod::scalar::{FreeParam, Scalar};
use freeprod::sequence::ClosedForm;
use freeprod::square::{all_selections, prepare, CommutingSquareData, GammaPolicy};
use freeprod::testkit::{
    check_confluence, cross_check_cor22a, cross_check_cor32a, gen_betas, gen_expr, gen_square, semantic_diff,
    RandomSquareSpec,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn int(n: i64) -> BigRational {
    BigRational::from_integer(n.into())
}

fn rand_pos(r: &mut impl Rng, num: i64, den: i64) -> BigRational {
    rat(r.gen_range(1..=num), r.gen_range(1..=den))
}

fn rand_scale(r: &mut impl Rng) -> Scalar {
    let q = rand_pos(r, 9, 5);
    if r.gen_bool(0.25) {
        Scalar::from_square(q).unwrap()
    } else {
        Scalar::from(q)
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_freeprod"));
    c.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    c
}

fn run_cli(args: &[&str], stdin: &str) -> (Option<i32>, Vec<u8>) {
    use std::io::Write;
    let mut child = bin().args(args).spawn().unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    (out.status.code(), out.stdout)
}

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn q() -> FactorAtom {
    FactorAtom::generic("Q")
}

/// Flattening a scaled term must agree with merging free-group terms and
/// with the closed form for a single summand.
fn criterion_1() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let cases = 1000;
    for i in 0..cases {
        let c = rand_scale(&mut r);
        let c2 = c.square().unwrap();
        let x = int(1) + rand_pos(&mut r, 20, 7);
        let lhs = &c2 * &x;
        let rhs = (int(1) + (&x - int(1)) * &c2) + (&c2 - int(1));
        ensure(lhs == rhs, || format!("case {i}: identity fails at c^2={c2}, x={x}"))?;

        let assign = BTreeMap::from([("Q".to_string(), x.clone())]);
        let term = AlgebraExpr::term(c.clone(), AlgebraExpr::unit_atom(&q()));
        let form = normalize(&term).map_err(|e| e.to_string())?.form;
        let expected = FreeProductForm::finite(
            vec![q().at(c.recip().unwrap())],
            FreeParam::Finite(&c2 - int(1)),
        );
        ensure(form == expected, || format!("case {i}: [{c}]{{Q}} gave {form}, want {expected}"))?;
        let sem_term = exponent_semantics(&term, &assign).map_err(|e| e.to_string())?;
        let sem_form = form_semantics(&form, &assign).map_err(|e| e.to_string())?;
        ensure(sem_term == FreeParam::Finite(lhs.clone()) && sem_form == FreeParam::Finite(rhs), || {
            format!("case {i}: semantics {sem_term} vs {sem_form}")
        })?;

        // a scaled atom through the R4 route, then flattening
        let u = rand_scale(&mut r);
        let direct = AlgebraExpr::term(c.clone(), AlgebraExpr::atom(q().at(u.clone())));
        let u2 = u.square().unwrap();
        let via_r4 = AlgebraExpr::join(vec![
            AlgebraExpr::term(c.div(&u).unwrap(), AlgebraExpr::unit_atom(&q())),
            AlgebraExpr::lf(FreeParam::Finite(&c2 * (int(1) - u2.recip()))),
        ]);
        let diff = semantic_diff(&direct, &via_r4, 2, i);
        ensure(diff.pass, || format!("case {i}: routes differ: {:?}", diff.diff))?;
    }
    Ok(format!("{cases} random (c, x, u)"))
}

fn prop21(betas: &[BigRational]) -> Result<FreeProductForm, String> {
    let input = Prop21Input {
        base: FactorAtom::generic("N"),
        betas: betas.iter().cloned().map(Scalar::from).collect(),
        atoms: vec![],
        tail: None,
    };
    let report = prop21_decompose(&input).map_err(|e| e.to_string())?;
    Ok(report.result().clone())
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cases = 500u64;
    for seed in 0..cases {
        let betas = gen_betas(seed, 6, 12);
        let out = cross_check_cor22a(&FactorAtom::generic("N"), &betas, &[]);
        ensure(out.pass, || format!("seed {seed} betas {betas:?}: {:?}", out.diff))?;
    }
    let g = |id: &str| FactorAtom::generic(id);
    for (betas, base) in [(vec![rat(1, 3), rat(2, 3)], int(1)), (vec![int(1), int(2)], int(3))] {
        let form = prop21(&betas)?;
        let expected = FreeProductForm::finite(
            vec![g("N").at(Scalar::from(base)), g("Q1").at(Scalar::int(3)), g("Q2").at(Scalar::ratio(3, 2))],
            FreeParam::ratio(-13, 9),
        );
        ensure(form == expected, || format!("beta={betas:?}: {form}, want {expected}"))?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("{cases} random beta vectors plus the worked case, {took:.2?}"))
}

fn worked_square() -> CommutingSquareData {
    CommutingSquareData::new(
        vec![Scalar::ratio(1, 3), Scalar::ratio(2, 3)],
        vec![Scalar::ratio(1, 3), Scalar::ratio(1, 3)],
        vec![vec![1, 0], vec![1, 1]],
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cases = 500u64;
    let mut selections = 0usize;
    for seed in 0..cases {
        let square = gen_square(&RandomSquareSpec::new(seed));
        selections += all_selections(&prepare(&square).map_err(|e| e.to_string())?.data)
            .map_err(|e| e.to_string())?
            .len();
        let out = cross_check_cor32a(&square, &[]);
        ensure(out.pass, || format!("seed {seed}: {:?}", out.diff))?;
    }
    let square = worked_square();
    let data = prepare(&square).map_err(|e| e.to_string())?.data;
    for sel in all_selections(&data).map_err(|e| e.to_string())? {
        let input = Prop31Input {
            square: square.clone(),
            atoms: vec![],
            gamma: GammaPolicy::Explicit(sel.choices.clone()),
            tail_atom: None,
        };
        let report = prop31_decompose(&input).map_err(|e| e.to_string())?;
        ensure(report.r == Some(FreeParam::int(2)), || format!("r = {:?}", report.r))?;
        let excess = report.result().excess().clone();
        ensure(excess == FreeParam::ratio(-2, 3), || format!("excess {excess}"))?;
    }
    Ok(format!("{cases} random squares, {selections} gamma selections, {:.2?}", start.elapsed()))
}

fn criterion_4() -> Outcome {
    for k in 2..=6u32 {
        let input = Prop31Input {
            square: CommutingSquareData::matrix_algebra(k),
            atoms: vec![q()],
            gamma: GammaPolicy::MaxAlpha,
            tail_atom: None,
        };
        let form = prop31_decompose(&input).map_err(|e| e.to_string())?.corner;
        let expected = FreeProductForm::finite(vec![q().unit()], FreeParam::Finite(int(1) - rat(1, i64::from(k * k))));
        ensure(form == expected, || format!("K={k}: {form}"))?;
    }
    Ok("K = 2..6 give Q * L(F_{1-K^-2})".into())
}

fn random_form(r: &mut impl Rng, k: usize) -> FreeProductForm {
    let atoms = (0..k).map(|i| FactorAtom::generic(format!("Q{i}")).at(rand_scale(r))).collect();
    let excess = rat(r.gen_range(-30..=30), r.gen_range(1..=6));
    FreeProductForm::finite(atoms, FreeParam::Finite(excess))
}

fn criterion_5() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let cases = 1000;
    let mut solved = 0;
    for i in 0..cases {
        let k = r.gen_range(0..=5);
        let form = random_form(&mut r, k);
        let l = rand_scale(&mut r);
        let err = |e: &dyn std::fmt::Display| format!("case {i}: {e}");
        ensure(rescale(&form, &Scalar::one()).map_err(|e| err(&e))? == form, || format!("case {i}: identity"))?;
        let there = rescale(&form, &l).map_err(|e| err(&e))?;
        let back = rescale(&there, &l.recip().unwrap()).map_err(|e| err(&e))?;
        ensure(back == form, || format!("case {i}: {form} -> {there} -> {back}"))?;

        // a = l^-2 a' + (k-1)(l^-2 - 1), computed here by hand
        let a_prime = form.excess().as_rational().unwrap().clone();
        let inv = l.square().unwrap().recip();
        let kk = int(k as i64);
        let expected = &inv * &a_prime + (&kk - int(1)) * (&inv - int(1));
        let got = a_formula(form.excess(), k as i64, &l).map_err(|e| err(&e))?;
        ensure(got == FreeParam::Finite(expected.clone()), || format!("case {i}: a-formula {got} vs {expected}"))?;
        let rescaled_excess = if k == 0 { expected.clone() } else { there.excess().as_rational().unwrap().clone() };
        ensure(k == 0 || rescaled_excess == expected, || format!("case {i}: rescale excess {rescaled_excess}"))?;

        // semantics of the amplified expression against the rescaled form
        if k > 0 {
            let assign: BTreeMap<String, BigRational> =
                (0..k).map(|j| (format!("Q{j}"), int(1) + rand_pos(&mut r, 9, 4))).collect();
            let amp = AlgebraExpr::rescale(form.to_expr(), l.clone());
            let s1 = exponent_semantics(&amp, &assign).map_err(|e| err(&e))?;
            let s2 = form_semantics(&there, &assign).map_err(|e| err(&e))?;
            ensure(s1 == s2, || format!("case {i}: semantics {s1} vs {s2}"))?;
        }

        if k >= 2 && a_prime > int(1) - kk.clone() {
            let lambda = solve_lambda_zero_excess(&form).map_err(|e| err(&e))?;
            let sq = lambda.square().map_err(|e| err(&e))?;
            ensure(sq > BigRational::zero(), || format!("case {i}: lambda^2 = {sq}"))?;
            let zeroed = rescale(&form, &lambda).map_err(|e| err(&e))?;
            ensure(zeroed.excess().is_zero(), || format!("case {i}: excess {} after solving", zeroed.excess()))?;
            solved += 1;
        }
    }
    Ok(format!("{cases} random forms, {solved} zero-excess solves"))
}

fn emitted_forms(seed: u64) -> Result<Vec<FreeProductForm>, String> {
    let square = gen_square(&RandomSquareSpec { max_rows: 4, max_cols: 5, ..RandomSquareSpec::new(seed) });
    let mut out = vec![];
    let p31 = prop31_decompose(&Prop31Input { square: square.clone(), atoms: vec![], gamma: GammaPolicy::MaxAlpha, tail_atom: None })
        .map_err(|e| e.to_string())?;
    out.push(p31.result().clone());
    out.push(prop21(&gen_betas(seed, 6, 12))?);
    let pair = PairInput::new(square.clone(), CommutingSquareData::matrix_algebra(2));
    if let Ok(p) = thm_subfin(&pair, &LambdaChoice::default()) {
        out.extend([p.p0, p.p_m1]);
    }
    if let Ok(p) = thm_subfin(&pair, &LambdaChoice::ZeroA) {
        out.extend([p.p0, p.p_m1]);
    }
    if let Ok(p) = thm_msub(&pair, &LambdaChoice::default()) {
        out.extend([p.p0, p.p_m1]);
    }
    Ok(out)
}

fn criterion_6() -> Outcome {
    let mut checked = 0;
    let mut mutated = 0;
    let mut cli_runs = 0;
    for seed in 0..200u64 {
        for form in emitted_forms(seed)? {
            validity_check(&form).map_err(|e| format!("seed {seed}: {form}: {e}"))?;
            checked += 1;
            if form.is_infinite() {
                continue;
            }
            let k = form.k() as i64;
            let bound = if k == 0 { int(1) } else { int(1) - int(k) };
            for delta in [int(0), rat(1, 2), int(3)] {
                let bad_excess = &bound - delta;
                if bad_excess.is_zero() {
                    continue;
                }
                let bad = form.with_excess(FreeParam::Finite(bad_excess));
                ensure(validity_check(&bad).is_err(), || format!("seed {seed}: {bad} accepted"))?;
                mutated += 1;
                if cli_runs < 25 {
                    let json = serde_json::to_string(&bad.to_expr()).unwrap();
                    let (code, _) = run_cli(&["normalize"], &json);
                    ensure(code == Some(3), || format!("seed {seed}: {bad} exited {code:?}"))?;
                    cli_runs += 1;
                }
            }
        }
    }
    Ok(format!("{checked} emitted forms valid, {mutated} mutants rejected ({cli_runs} through the CLI, exit 3)"))
}

fn tail_scales_ok(form: &FreeProductForm, beta1: &BigRational, betas: &ClosedForm, first: u64) -> Result<(), String> {
    let fam = form.tail().first().ok_or_else(|| format!("{form} has no infinite block"))?;
    for i in first..first + 5 {
        let want = Scalar::from(beta1.clone()).div(&betas.value(i).unwrap()).unwrap();
        let got = fam.scales.value(i).unwrap();
        ensure(got == want, || format!("scale at {i}: {got}, want {want}"))?;
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let n = FactorAtom::generic("N");
    let convergent = ClosedForm::geometric(Scalar::one(), rat(1, 2));
    let divergent = ClosedForm::constant(Scalar::ratio(1, 2));
    let base = |tail: ClosedForm, base: FactorAtom, atom: FactorAtom, flag: bool| Prop21Input {
        base,
        betas: vec![Scalar::one(), Scalar::ratio(1, 2)],
        atoms: vec![],
        tail: Some(Prop21Tail { betas: tail, atom: TailAtom { atom, indexed: true }, sum_beta_sq_diverges: flag }),
    };
    let covered = [
        ("sum beta^2 = inf", base(divergent.clone(), n.clone(), q(), false)),
        ("declared divergence", base(convergent.clone(), n.clone(), q(), true)),
        ("Q absorbs", base(convergent.clone(), n.clone(), q().absorbing(), false)),
        ("N absorbs", base(convergent.clone(), n.clone().absorbing(), q(), false)),
    ];
    for (name, input) in &covered {
        let report = prop21_decompose(input).map_err(|e| format!("prop21 {name}: {e}"))?;
        let form = report.result();
        ensure(form.is_infinite() && form.excess().is_zero(), || format!("prop21 {name}: {form}"))?;
        let tail = &input.tail.as_ref().unwrap().betas;
        tail_scales_ok(form, &int(1), tail, 3).map_err(|e| format!("prop21 {name}: {e}"))?;
        validity_check(form).map_err(|e| format!("prop21 {name}: {e}"))?;
    }
    let refused = base(convergent.clone(), n.clone(), q(), false);
    ensure(matches!(prop21_decompose(&refused), Err(DecompError::NotCovered(_))), || "prop21 ran uncovered".into())?;

    let square = |tail: serde_json::Value| -> CommutingSquareData {
        serde_json::from_value(serde_json::json!({
            "betas": ["1"], "alphas": ["1/2"], "mult": [[2]], "tail": tail
        }))
        .unwrap()
    };
    let run = |sq: CommutingSquareData, atom: FactorAtom| {
        prop31_decompose(&Prop31Input { square: sq, atoms: vec![atom], gamma: GammaPolicy::MaxAlpha, tail_atom: None })
    };
    let cases = [
        ("sum gamma^2 = inf", square(serde_json::json!({"betas": {"coef": "1"}, "sum_gamma_sq_diverges": true})), q()),
        ("r = inf", square(serde_json::json!({"betas": {"coef": "1"}, "r_infinite": true})), q()),
        ("Q absorbs", square(serde_json::json!({"betas": {"coef": "1"}})), q().absorbing()),
    ];
    for (name, sq, atom) in cases {
        let betas = sq.tail.as_ref().unwrap().betas.clone();
        let report = run(sq, atom).map_err(|e| format!("prop31 {name}: {e}"))?;
        let form = report.result();
        ensure(form.is_infinite() && form.excess().is_zero(), || format!("prop31 {name}: {form}"))?;
        tail_scales_ok(form, &int(1), &betas, 2).map_err(|e| format!("prop31 {name}: {e}"))?;
    }
    let bare = square(serde_json::json!({"betas": {"coef": "1"}}));
    ensure(matches!(run(bare, q()), Err(DecompError::NotCovered(_))), || "prop31 ran uncovered".into())?;
    Ok(format!("{} prop21 and 3 prop31 covered cases, uncovered inputs refused", covered.len()))
}

fn criterion_8() -> Outcome {
    let flagged = q().with_full_fundamental_group();
    let collapsed = FreeProductForm::new(vec![], vec![AtomFamily::repeated(flagged.clone(), Scalar::one())], FreeParam::zero());
    let mut pairs = 0;
    for seed in 0..100u64 {
        let spec = |s| RandomSquareSpec { max_rows: 4, max_cols: 5, ..RandomSquareSpec::new(s) };
        let mut input = PairInput::new(gen_square(&spec(seed)), gen_square(&spec(seed + 10_000)));
        input.atom = flagged.clone();
        let report = thm_univ(&input, &LambdaChoice::default(), false).map_err(|e| format!("seed {seed}: {e}"))?;
        for form in [&report.p0, &report.p_m1] {
            ensure(*form == collapsed, || format!("seed {seed}: {form}"))?;
            let again = normalize(&form.to_expr()).map_err(|e| e.to_string())?.form;
            ensure(again == collapsed, || format!("seed {seed}: renormalized to {again}"))?;
        }
        let with_base = thm_univ(&input, &LambdaChoice::default(), true).map_err(|e| format!("seed {seed}: {e}"))?;
        for form in [&with_base.p0, &with_base.p_m1] {
            let q_parts: Vec<_> = form.tail().to_vec();
            ensure(q_parts.iter().all(|f| *f == collapsed.tail()[0]), || format!("seed {seed}: {form}"))?;
        }
        pairs += 1;
    }
    let fixture_pair: PairInput = serde_json::from_str(&fixture("pair_univ.json")).unwrap();
    let report = thm_univ(&fixture_pair, &LambdaChoice::default(), false).map_err(|e| e.to_string())?;
    ensure(report.p0 == collapsed && report.p_m1 == collapsed, || format!("fixture: {}", report.p0))?;
    Ok(format!("{pairs} random square pairs collapse to Q * Q * ..."))
}

fn criterion_9() -> Outcome {
    let mut worst = 0f64;
    for n in 3..=8usize {
        let start = Instant::now();
        let w = pf_weights(&BipartiteGraph::path(n), DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        let c = (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        let err = (w.eigenvalue - 4.0 * c * c).abs();
        worst = worst.max(err);
        ensure(err < 1e-9, || format!("A_{n}: {} off by {err:e}", w.eigenvalue))?;
        ensure(took < Duration::from_secs(1), || format!("A_{n} took {took:?}"))?;
    }
    let graph: serde_json::Value = serde_json::from_str(&fixture("graph_a6.json")).unwrap();
    let job = serde_json::json!({"graph": graph, "tol": 1e-15, "max_iter": 2});
    let (code, _) = run_cli(&["pf-weights"], &job.to_string());
    ensure(code == Some(4), || format!("non-convergence exited {code:?}"))?;
    Ok(format!("A_3..A_8 within {worst:.1e}, non-convergence exits 4"))
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let cases = 10_000u64;
    for seed in 0..cases {
        let expr = gen_expr(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        ensure(expr.depth() <= 6, || format!("seed {seed}: depth {}", expr.depth()))?;
        let out = check_confluence(&expr, seed, 2);
        ensure(out.pass, || format!("seed {seed}: {:?}", out.diff))?;
    }
    let took = start.elapsed();
    let runs = [
        ("normalize", "unit_term.json"),
        ("decompose-prop21", "prop21_beta_1_2.json"),
        ("decompose-prop31", "prop31_worked.json"),
        ("subfactor-subfin", "pair_worked.json"),
        ("subfactor-univ", "pair_univ.json"),
        ("pf-weights", "graph_a4.json"),
    ];
    for (cmd, f) in runs {
        let input = fixture(f);
        let (c1, a) = run_cli(&[cmd, "--trace"], &input);
        let (c2, b) = run_cli(&[cmd, "--trace"], &input);
        ensure(c1 == Some(0) && c2 == Some(0), || format!("{cmd} {f}: exit {c1:?}"))?;
        ensure(a == b, || format!("{cmd} {f}: output differs between runs"))?;
    }
    Ok(format!("{cases} expressions under randomized orders in {took:.2?}, {} CLI commands byte-identical", runs.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("flatten derivation", criterion_1),
        ("single-row closed form", criterion_2),
        ("square closed form, every gamma", criterion_3),
        ("matrix algebra fixture", criterion_4),
        ("rescaling laws", criterion_5),
        ("validity bound", criterion_6),
        ("infinite-case gating", criterion_7),
        ("full fundamental group collapse", criterion_8),
        ("Perron-Frobenius weights", criterion_9),
        ("confluence and determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{took:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
