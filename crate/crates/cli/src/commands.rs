use anyhow::{bail, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use lve_core::bounds::{self, ClusterMode, QuadratureTarget};
use lve_core::cleaning::{self, CleaningOptions, WordEvaluator};
use lve_core::covariance::{lattice_covariance, ContinuumCovariance, CutoffMode, LatticeShape};
use lve_core::forest::{all_ones, bkar_decompose, forest_sum, PairFunction, PairPolynomial};
use lve_core::graph::trees::{min_eigenvalue, random_tree};
use lve_core::graph::{enumerate_labeled_trees, path_infimum_matrix, DecoratedTree, LabeledTree, WeakeningAssignment};
use lve_core::lve::{self, DerivationConvention};
use lve_core::wick::{self, QuarticModel};

use crate::output::{num, Check, Outcome, Table};
use crate::RunConfig;

fn ring_model(cfg: &RunConfig) -> Result<QuarticModel> {
    let mode = CutoffMode::SliceSum { slice_ratio: cfg.slice_ratio, j_max: cfg.jmax };
    let lattice = lattice_covariance(LatticeShape::chain(cfg.sites), cfg.spacing, cfg.mass, mode)?;
    Ok(QuarticModel::from_lattice(&lattice))
}

fn per_sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Runs `work(i)` for `0..count` on `threads` workers and returns the results in index order.
fn parallel_map<T: Send>(count: usize, threads: usize, work: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, count.max(1));
    let chunk = count.div_ceil(threads);
    let mut out: Vec<T> = Vec::with_capacity(count);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let work = &work;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(count)).map(work).collect::<Vec<T>>())
            })
            .collect();
        for h in handles {
            out.extend(h.join().expect("worker panicked"));
        }
    });
    out
}

pub fn trees(cfg: &RunConfig, n: usize) -> Result<Outcome> {
    if n == 0 {
        bail!(crate::UsageError("--n must be at least 1".into()));
    }
    let expected = if n == 1 { 1u64 } else { (n as u64).pow(n as u32 - 2) };
    if expected > cfg.cap as u64 {
        bail!(crate::UsageError(format!("{expected} trees exceed --cap {}", cfg.cap)));
    }
    let trees = enumerate_labeled_trees(n)?;
    let mut table = Table::new(&["index", "prufer", "edges"]);
    for (i, t) in trees.iter().enumerate() {
        let code: Vec<String> = t.prufer_code().iter().map(|c| c.to_string()).collect();
        let edges: Vec<String> = t.edges().iter().map(|(a, b)| format!("{a}-{b}")).collect();
        table.push(vec![i.to_string(), code.join(" "), edges.join(" ")]);
    }
    let payload = json!({
        "n": n,
        "count": trees.len(),
        "expected": expected,
        "trees": trees.iter().map(LabeledTree::to_json).collect::<Vec<_>>(),
    });
    let ok = trees.len() as u64 == expected;
    Ok(Outcome::new(payload, table).with_check(Check::new(ok, format!("{} trees, n^(n-2) = {expected}", trees.len()))))
}

pub fn bkar_check(cfg: &RunConfig, samples: usize, n_max: usize, psd_draws: usize) -> Result<Outcome> {
    if !(2..=lve_core::forest::MAX_FOREST_VERTICES).contains(&n_max) {
        bail!(crate::UsageError(format!("--n must lie in 2..={}", lve_core::forest::MAX_FOREST_VERTICES)));
    }
    let bkar: Vec<Result<(usize, f64, f64)>> = parallel_map(samples, cfg.threads, |i| {
        let mut rng = per_sample_rng(cfg.seed, i);
        let n = rng.gen_range(2..=n_max);
        let f = PairPolynomial::random_multilinear(n, &mut rng);
        let direct = f.eval(&all_ones(n));
        let sum = forest_sum(&bkar_decompose(&f)?);
        Ok((n, direct, sum))
    });
    let bkar: Vec<(usize, f64, f64)> = bkar.into_iter().collect::<Result<_>>()?;
    let psd: Vec<Result<(usize, f64)>> = parallel_map(psd_draws, cfg.threads, |i| {
        let mut rng = per_sample_rng(cfg.seed ^ 0x5eed, i);
        let n = rng.gen_range(2..=8);
        let t = random_tree(n, &mut rng);
        let w = WeakeningAssignment::new((0..n - 1).map(|_| rng.gen::<f64>()).collect())?;
        Ok((n, min_eigenvalue(&path_infimum_matrix(&t, &w)?)))
    });
    let psd: Vec<(usize, f64)> = psd.into_iter().collect::<Result<_>>()?;
    let rel = |d: f64, s: f64| (d - s).abs() / d.abs().max(1e-300);
    let max_rel = bkar.iter().map(|&(_, d, s)| rel(d, s)).fold(0.0, f64::max);
    let min_eig = psd.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut table = Table::new(&["kind", "index", "n", "direct_or_min_eig", "forest_sum"]);
    for (i, (n, d, s)) in bkar.iter().enumerate() {
        table.push(vec!["bkar".into(), i.to_string(), n.to_string(), num(*d), num(*s)]);
    }
    for (i, (n, e)) in psd.iter().enumerate() {
        table.push(vec!["psd".into(), i.to_string(), n.to_string(), num(*e), String::new()]);
    }
    let payload = json!({
        "bkar": bkar.iter().map(|(n, d, s)| json!({"n": n, "direct": d, "forest_sum": s})).collect::<Vec<_>>(),
        "max_relative_error": max_rel,
        "psd_min_eigenvalues": psd.iter().map(|p| p.1).collect::<Vec<_>>(),
        "min_eigenvalue": if psd.is_empty() { Value::Null } else { json!(min_eig) },
    });
    let ok = max_rel <= 1e-9 && (psd.is_empty() || min_eig >= -1e-10);
    let msg = format!("BKAR max relative error {max_rel:e}; path-infimum min eigenvalue {min_eig:e}");
    Ok(Outcome::new(payload, table).with_check(Check::new(ok, msg)))
}

pub fn covariance(cfg: &RunConfig) -> Result<Outcome> {
    let cont = ContinuumCovariance::new(cfg.mass, cfg.slice_ratio, cfg.jmax)?;
    let tad = cont.tadpole_table()?;
    let target = cfg.slice_ratio.ln() / (2.0 * std::f64::consts::PI);
    let mut table = Table::new(&["j", "T_j", "T_cumulative", "T_j_over_logM_2pi"]);
    for j in 0..=cfg.jmax as usize {
        table.push(vec![j.to_string(), num(tad.slices[j]), num(tad.cumulative[j]), num(tad.slices[j] / target)]);
    }
    let growth = if cfg.jmax >= 10 { Some(bounds::tadpole_growth(&cont, 8)?) } else { None };
    let worst = (8..=cfg.jmax as usize).map(|j| (tad.slices[j] / target - 1.0).abs()).fold(0.0, f64::max);
    let shape = LatticeShape::square(cfg.sites);
    let mode = CutoffMode::SliceSum { slice_ratio: cfg.slice_ratio, j_max: cfg.jmax };
    let lattice = lattice_covariance(shape, cfg.spacing, cfg.mass, mode)?;
    let payload = json!({
        "continuum": {
            "tadpoles": tad.slices,
            "cumulative": tad.cumulative,
            "log_m_over_2pi": target,
            "max_relative_deviation_from_j8": worst,
            "growth": growth,
        },
        "lattice": {
            "shape": [shape.nx, shape.ny],
            "generator": lattice.generator_json(),
            "tadpole": lattice.tadpole,
        },
    });
    let ok = worst <= 0.01 && growth.map(|g| g.r_squared >= 0.999).unwrap_or(true);
    let msg = format!(
        "slice tadpoles within {:.3}% of log M/2π from j = 8; cumulative fit R² = {}",
        100.0 * worst,
        growth.map(|g| g.r_squared.to_string()).unwrap_or_else(|| "n/a (jmax < 10)".into())
    );
    Ok(Outcome::new(payload, table).with_check(Check::new(ok, msg)))
}

fn series_table(coeffs: &[f64], errs: &[f64]) -> Table {
    let mut table = Table::new(&["n", "a_n", "abs_err"]);
    for (n, (a, e)) in coeffs.iter().zip(errs).enumerate() {
        table.push(vec![n.to_string(), num(*a), num(*e)]);
    }
    table
}

pub fn series(cfg: &RunConfig) -> Result<Outcome> {
    let model = ring_model(cfg)?;
    let s = wick::log_z_series(&model, cfg.order)?;
    let table = series_table(&s.coefficients, &s.abs_err);
    Ok(Outcome::new(s.to_json(), table))
}

pub fn lve(cfg: &RunConfig) -> Result<Outcome> {
    let model = ring_model(cfg)?;
    let cmp = lve::compare_conventions(&model, cfg.nmax, cfg.order, 1e-8)?;
    let conv = cmp.selected.unwrap_or(DerivationConvention::SingleDerivation);
    let s = lve::lve_log_z_series(&model, cfg.nmax, cfg.order, conv)?;
    let table = series_table(&s.coefficients, &s.abs_err);
    let mut payload = s.to_json();
    payload["convention_comparison"] = serde_json::to_value(&cmp)?;
    let mut out = Outcome::new(payload, table);
    out.notes = json!({ "derivation_convention": cmp.selected.map(|c| c.name()) });
    let msg = match cmp.selected {
        Some(c) => format!("oracle matched by the {} convention only", c.name()),
        None => "no unique derivation convention matches the oracle".to_string(),
    };
    Ok(out.with_check(Check::new(cmp.selected.is_some(), msg)))
}

pub fn cancel(cfg: &RunConfig, n: u32) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = BigRational::new(BigInt::from(rng.gen_range(-99i64..=99)), BigInt::from(rng.gen_range(1i64..=99)));
    let prefactor = BigRational::new(BigInt::from(rng.gen_range(1i64..=9)), BigInt::from(rng.gen_range(1i64..=9)));
    let mut table = Table::new(&["k", "planar_sum", "zero"]);
    let mut rows = Vec::new();
    let mut all_zero = true;
    for k in 1..=n {
        let v = lve::renormalized_planar_sum(k, &a, &a, &prefactor);
        let zero = lve::is_exact_zero(&v);
        all_zero &= zero;
        table.push(vec![k.to_string(), v.to_string(), zero.to_string()]);
        rows.push(json!({"k": k, "value": v.to_string(), "zero": zero}));
    }
    // order-λ sector on the configured ring
    let model = ring_model(cfg)?;
    let v = model.sites() as f64;
    let t = model.tadpole;
    let single = DecoratedTree::undecorated(LabeledTree::single_vertex());
    let loop_one = lve::tree_amplitude_series(&single, &model, 1, DerivationConvention::SingleDerivation)?[1];
    let first = lve::constant_counterterm(&model) + loop_one;
    let pair = DecoratedTree::new(LabeledTree::new(2, [(0, 1)])?, vec![true, true])?;
    let second = lve::tree_amplitude_series(&pair, &model, 1, DerivationConvention::SingleDerivation)?[1] / 2.0;
    let expected = 2.0 * v * t * t;
    let order_one_ok = (first - expected).abs() <= 1e-10 * expected.max(1.0) && (second + expected).abs() <= 1e-10 * expected.max(1.0);
    let a1 = first + second;
    let payload = json!({
        "a": a.to_string(),
        "prefactor": prefactor.to_string(),
        "planar_sums": rows,
        "order_one": {"vertex_plus_constant": first, "counterterm_pair": second, "two_v_t2": expected, "a1": a1},
    });
    let ok = all_zero && order_one_ok && a1.abs() <= 1e-12;
    let msg = format!("(A-A)^k prefactor sums zero for k ≤ {n}: {all_zero}; a_1 = {a1:e}");
    Ok(Outcome::new(payload, table).with_check(Check::new(ok, msg)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
pub enum StartWord {
    TwoResolvent,
    Loop,
}

pub fn cleaning(cfg: &RunConfig, start: StartWord, loops: usize, evaluate: bool, lambda: f64) -> Result<Outcome> {
    let j = cfg.jmax as i32;
    let word = match start {
        StartWord::TwoResolvent => cleaning::two_resolvent_example(j),
        StartWord::Loop => cleaning::single_loop_word(loops.max(1), j),
    };
    let mut opts = CleaningOptions::new(cfg.a, j);
    opts.cap = cfg.cap;
    opts.slice_ratio = cfg.slice_ratio;
    let ledger = cleaning::run_cleaning(&word, &opts)?;
    let paired = cleaning::pair_tadpoles(&ledger)?;
    let bound = cleaning::bound_product(&ledger, cfg.slice_ratio, opts.line_constant);
    let net: Vec<Value> = cleaning::net_tadpole_coefficients(&paired)
        .into_iter()
        .map(|(j, c)| json!({"scale": j, "net": c.to_string()}))
        .collect();
    let mut table = Table::new(&["index", "classification", "sign", "stop_scale", "bound_factor", "twin", "word"]);
    for (i, r) in paired.records.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            r.classification.name().into(),
            r.sign.to_string(),
            r.stop_scale.map(|s| s.to_string()).unwrap_or_default(),
            num(r.bound_factor),
            r.twin.to_string(),
            r.word_string(),
        ]);
    }
    let counts: Value = [
        cleaning::Classification::InnerTadpole,
        cleaning::Classification::Remainder,
    ]
    .iter()
    .map(|c| (c.name().to_string(), json!(ledger.count(*c))))
    .collect::<serde_json::Map<_, _>>()
    .into();
    let mut payload = json!({
        "start": cleaning::word_to_string(&word),
        "records": ledger.records.len(),
        "counts": counts,
        "stop_scale": ledger.stop_scale,
        "truncated": ledger.truncated,
        "twins": paired.records.len() - ledger.records.len(),
        "net_tadpole_coefficients": net,
        "bound": bound,
    });
    let mut check = Check::new(true, format!("{} records, tadpoles paired with zero net", ledger.records.len()));
    if evaluate {
        let ev = WordEvaluator::ring(cfg.sites, cfg.spacing, cfg.mass, cfg.slice_ratio, j, lambda, 24)?;
        let v0 = ev.value(&word)?;
        let v = ev.ledger_value(&ledger)?;
        let rel = (v - v0).norm() / v0.norm().max(1e-300);
        payload["conservation"] = json!({"start": [v0.re, v0.im], "ledger": [v.re, v.im], "relative_difference": rel});
        check = Check::new(rel <= 1e-9, format!("ledger value sum differs from the start value by {rel:e} (relative)"));
    }
    let mut out = Outcome::new(payload, table).with_check(check);
    out.extra.push(("cleaning.jsonl".into(), paired.to_jsonl()));
    Ok(out)
}

pub fn cluster(cfg: &RunConfig, c: f64, radius: i32, size: usize, exhaustive: bool) -> Result<Outcome> {
    let mode = if exhaustive { ClusterMode::Exhaustive } else { ClusterMode::Connected };
    let r = bounds::cluster_sum(c, radius, size, mode, cfg.cap as u64)?;
    let mut table = Table::new(&["k", "count", "increment", "partial_sum"]);
    for k in 0..r.partial_sums.len() {
        table.push(vec![(k + 1).to_string(), r.counts[k].to_string(), num(r.increments[k]), num(r.partial_sums[k])]);
    }
    let decaying = r.increments.windows(2).skip(1).all(|w| w[1] < w[0]);
    let ratios: Vec<f64> = r.increments.windows(2).map(|w| w[1] / w[0]).collect();
    let shrinking = ratios.last().map(|x| *x < 1.0).unwrap_or(true);
    let msg = format!("last size changes the partial sum by {:.3}%", 100.0 * r.last_relative_change);
    let mut payload = serde_json::to_value(&r)?;
    payload["increment_ratios"] = json!(ratios);
    Ok(Outcome::new(payload, table).with_check(Check::new(decaying && shrinking, msg)))
}

pub fn nelson(cfg: &RunConfig, lambda: f64, j_from: u32, j_to: u32) -> Result<Outcome> {
    if j_from > j_to {
        bail!(crate::UsageError("--j-from exceeds --j-to".into()));
    }
    let cont = ContinuumCovariance::new(cfg.mass, cfg.slice_ratio, cfg.jmax.max(10))?;
    let growth = bounds::tadpole_growth(&cont, 8)?;
    let s = growth.slope;
    let scan = bounds::nelson_scan(cfg.a, lambda, s, j_from..=j_to);
    let mut table = Table::new(&["j", "log_value", "value", "below_one"]);
    for v in &scan {
        table.push(vec![v.j.to_string(), num(v.log_value), num(v.value), v.below_one.to_string()]);
    }
    let payload = json!({
        "a": cfg.a,
        "lambda": lambda,
        "slope": growth,
        "critical_a": bounds::nelson_critical_a(lambda, s),
        "last_j_not_below_one": bounds::nelson_crossover(&scan),
        "all_below_one": scan.iter().all(|v| v.below_one),
        "all_above_one": scan.iter().all(|v| !v.below_one),
        "values": scan,
    });
    Ok(Outcome::new(payload, table))
}

pub fn borel(cfg: &RunConfig, lambdas: &[f64], u_max: f64, gh_order: usize) -> Result<Outcome> {
    if lambdas.is_empty() {
        bail!(crate::UsageError("--lambda needs at least one value".into()));
    }
    let one_site = RunConfig { sites: 1, ..cfg.clone() };
    let model = ring_model(&one_site)?;
    let target = QuadratureTarget::new(model.clone(), gh_order)?;
    let mut reports = Vec::new();
    let mut points = Vec::new();
    let mut table = Table::new(&["N", "lambda", "direct", "integral", "integral_difference", "agreement"]);
    for n in 0..=cfg.order {
        for &l in lambdas {
            let r = bounds::taylor_remainder(&target, n, l)?;
            table.push(vec![n.to_string(), num(l), num(r.direct), num(r.integral), num(r.integral_difference), num(r.agreement)]);
            points.push((n, l, r.direct));
            reports.push(r);
        }
    }
    let fit = bounds::factorial_bound_fit(&points)?;
    let coeffs = wick::log_z_series(&model, cfg.order.max(1))?.coefficients;
    let grid: Vec<f64> = (0..=10).map(|i| u_max * i as f64 / 10.0).collect();
    let transform = bounds::borel_partial_transform(&coeffs, &grid)?;
    let worst = reports.iter().map(|r| r.agreement).fold(0.0, f64::max);
    let payload = json!({
        "tadpole": model.tadpole,
        "remainders": reports,
        "fit": fit,
        "coefficients": coeffs,
        "borel": transform,
    });
    let ok = worst <= 1e-5 && fit.violations == 0 && fit.a_bound.is_finite() && fit.b_fit.is_finite();
    let msg = format!("remainder methods agree to {worst:e}; fit A = {}, B = {}", fit.a_bound, fit.b_fit);
    Ok(Outcome::new(payload, table).with_check(Check::new(ok, msg)))
}
