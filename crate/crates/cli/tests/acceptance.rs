//! Acceptance run: one pass/fail line per criterion.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use poisson_malliavin::expansions::{
    chaotic_sum, co_suite, pco_suite, pseudo_chaotic_sum, within_tolerance, DEFAULT_TOLERANCE,
};
use poisson_malliavin::integrals::{
    eval_compensated, eval_uncompensated, symmetrize, to_compensated, to_uncompensated, KernelRef, TensorIndicator,
};
use poisson_malliavin::library;
use poisson_malliavin::measure::MarkSpace;
use poisson_malliavin::montecarlo::{isometry_check, isometry_oracle, replicate};
use poisson_malliavin::processes::{hawkes_suite, ExcitationKernel, HawkesModel, RENEWAL_STEPS};
use poisson_malliavin::{Configuration, Functional, MarkSet, ProductIntensity, Seed, TimeInterval, Window};
use serde_json::Value;

const SEED: Seed = Seed(20_240_601);
const Z_MAX: f64 = 4.0;

/// `ρ(X) = 5`: unit horizon, marks uniform on `[0, 1]` with density 5.
fn rho() -> ProductIntensity {
    ProductIntensity::new(1.0, MarkSpace::uniform(1.0, 5.0).unwrap()).unwrap()
}

fn a() -> Window {
    Window::new(TimeInterval::half_open(0.0, 0.6), MarkSet::Interval { lo: 0.0, hi: 0.5 })
}

fn b() -> Window {
    Window::new(TimeInterval::closed(0.3, 1.0), MarkSet::Interval { lo: 0.25, hi: 1.0 })
}

fn hawkes_model() -> HawkesModel {
    HawkesModel::new(1.0, ExcitationKernel::Exp { alpha: 0.5, beta: 1.0 }, 10.0, 20.0).unwrap()
}

fn paths(n: usize, seed: Seed) -> Vec<Configuration> {
    let rho = rho();
    replicate(n, seed, |_, rng| rho.sample_with(rng))
}

/// Runs the CLI in-process and parses its JSON lines.
fn cli(args: &[&str]) -> (i32, Vec<Value>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("poisson-malliavin").chain(args.iter().copied());
    let code = poisson_malliavin_cli::run(argv, &mut out, &mut err);
    let lines = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    (code, lines)
}

fn all_pass(lines: &[Value]) -> bool {
    !lines.is_empty() && lines.iter().all(|l| l.get("pass").and_then(Value::as_bool).unwrap_or(true))
}

fn max_z(lines: &[Value]) -> f64 {
    lines.iter().filter_map(|l| l.get("z").and_then(Value::as_f64)).fold(0.0, |m, z| m.max(z.abs()))
}

type Outcome = (bool, String);

fn pseudo_clark_ocone() -> Outcome {
    let start = Instant::now();
    let rho = rho();
    let functionals: Vec<Functional> = vec![
        library::count_full(a(), &rho).unwrap(),
        library::count_squared_full(a(), &rho).unwrap(),
        library::product_counts_full(a(), b(), &rho).unwrap(),
        library::exp_count_full(a(), 0.5, &rho).unwrap(),
    ];
    let mut ok = true;
    let mut worst = 0.0f64;
    for (i, f) in functionals.iter().enumerate() {
        let r = pco_suite(f, &rho, 10_000, SEED.derive(i as u64), DEFAULT_TOLERANCE).unwrap();
        ok &= r.pass && r.samples == 10_000;
        worst = worst.max(r.max_scaled_residual);
    }
    let h = hawkes_suite(&hawkes_model(), 10_000, SEED.derive(9), DEFAULT_TOLERANCE, Z_MAX).unwrap();
    ok &= h.pco.pass;
    worst = worst.max(h.pco.max_scaled_residual);
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    (
        ok,
        format!(
            "5 functionals x 10^4 paths, max scaled residual {worst:.1e}, hawkes excluded {} paths, {secs:.1}s",
            h.pco.excluded
        ),
    )
}

fn pseudo_chaotic_exactness() -> Outcome {
    let rho = rho();
    // |ω| ≤ 12, drawn by rejection within each replication stream
    let sample: Vec<Configuration> = replicate(1000, SEED.derive(2), |_, rng| loop {
        let w = rho.sample_with(rng);
        if w.len() <= 12 {
            break w;
        }
    });
    let mut ok = true;
    let mut worst = 0.0f64;
    for (f, degree) in [(library::count(a()), 1), (library::count_squared(a()), 2)] {
        for w in &sample {
            let r = pseudo_chaotic_sum(&f, w, w.len(), DEFAULT_TOLERANCE).unwrap();
            let residual = r.final_residual();
            worst = worst.max(residual.abs() / (1.0 + r.value.abs()));
            ok &= within_tolerance(residual, r.value, DEFAULT_TOLERANCE);
            ok &= r.terms.iter().skip(degree + 1).all(|&t| t == 0.0);
        }
    }
    (ok, format!("count, count^2 on 1000 paths with |w| <= 12, max scaled residual {worst:.1e}, higher terms all 0"))
}

fn chaotic_exactness() -> Outcome {
    let rho = rho();
    let m = rho.window_mass(&a());
    let first = TensorIndicator::new(vec![a()], 2.0 * m + 1.0);
    let second = TensorIndicator::power(a(), 2);
    let f = library::count_squared_full(a(), &rho).unwrap();
    let mut ok = true;
    let mut worst = 0.0f64;
    for w in paths(1000, SEED.derive(3)) {
        let value = f.eval(&w);
        let explicit = m + m * m
            + eval_compensated(&first, &w, &rho).unwrap()
            + eval_compensated(&second, &w, &rho).unwrap();
        let annotated = chaotic_sum(&f, &w, &rho, 2, DEFAULT_TOLERANCE).unwrap();
        let r = (explicit - value).abs().max(annotated.final_residual().abs());
        worst = worst.max(r / (1.0 + value.abs()));
        ok &= within_tolerance(explicit - value, value, DEFAULT_TOLERANCE);
        ok &= within_tolerance(annotated.final_residual(), value, DEFAULT_TOLERANCE);
    }
    (ok, format!("N(A)^2 on 1000 paths, rho(A) = {m}, max scaled residual {worst:.1e}"))
}

fn span_round_trip() -> Outcome {
    let rho = rho();
    let kernels: Vec<(&str, KernelRef)> = vec![
        ("1_A", Arc::new(TensorIndicator::power(a(), 1))),
        ("1_B", Arc::new(TensorIndicator::power(b(), 1))),
        ("1_A(x)1_A", Arc::new(TensorIndicator::power(a(), 2))),
        ("sym(1_A(x)1_B)", symmetrize(Arc::new(TensorIndicator::new(vec![a(), b()], 1.0))).unwrap()),
    ];
    let conversions: Vec<_> = kernels
        .iter()
        .map(|(_, k)| (to_compensated(k.clone(), &rho).unwrap(), to_uncompensated(k.clone(), &rho).unwrap()))
        .collect();
    let mut ok = true;
    let mut worst = 0.0f64;
    for w in paths(1000, SEED.derive(4)) {
        for ((_, k), (forward, inverse)) in kernels.iter().zip(&conversions) {
            let direct = eval_uncompensated(k.as_ref(), &w).unwrap();
            let via = forward.evaluate(&w, &rho).unwrap();
            let comp = eval_compensated(k.as_ref(), &w, &rho).unwrap();
            let back = inverse.evaluate(&w, &rho).unwrap();
            ok &= within_tolerance(direct - via, direct, 1e-9) && within_tolerance(comp - back, comp, 1e-9);
            worst = worst.max((direct - via).abs() / (1.0 + direct.abs()));
            worst = worst.max((comp - back).abs() / (1.0 + comp.abs()));
        }
    }
    let names: Vec<&str> = kernels.iter().map(|(n, _)| *n).collect();
    (ok, format!("{} both directions on 1000 paths, max scaled residual {worst:.1e}", names.join(", ")))
}

fn mecke_and_ibp() -> Outcome {
    let start = Instant::now();
    let (mecke_code, mecke) = cli(&["verify-mecke", "--samples", "100000"]);
    let (ibp_code, ibp) = cli(&["verify-ibp", "--samples", "100000"]);
    let secs = start.elapsed().as_secs_f64();
    let checks = |lines: &[Value]| lines.iter().filter(|l| l["check"] != "suite").count();
    let ok = mecke_code == 0 && ibp_code == 0 && all_pass(&mecke) && all_pass(&ibp) && secs < 120.0;
    (
        ok,
        format!(
            "{} mecke + {} ibp pairs at n = 10^5, max |z| {:.2} / {:.2}, {secs:.1}s",
            checks(&mecke),
            checks(&ibp),
            max_z(&mecke),
            max_z(&ibp)
        ),
    )
}

fn isometry_constant() -> Outcome {
    let rho = rho();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [1, 2] {
        let oracle = isometry_oracle(&a(), n, &rho, SEED.derive(60 + n as u64)).unwrap();
        let f: KernelRef = Arc::new(TensorIndicator::power(a(), n));
        let mc = isometry_check(f, &rho, 100_000, SEED.derive(6 + n as u64), Z_MAX).unwrap();
        let norm = oracle.norm_squared;
        let z = (mc.mean / norm - oracle.constant) / (mc.stderr / norm);
        ok &= z.abs() < Z_MAX && (oracle.constant - [1.0, 2.0][n - 1]).abs() < 1e-9;
        parts.push(format!("n={n} oracle {:.12} mc ratio {:.4} z {z:.2}", oracle.constant, mc.mean / norm));
    }
    (ok, parts.join("; "))
}

fn standard_clark_ocone() -> Outcome {
    let rho = rho();
    let f = library::count_squared_full(a(), &rho).unwrap();
    let r = co_suite(&f, &rho, 1000, SEED.derive(8), 1e-8).unwrap();
    let (code, lines) = cli(&["verify-co", "--functional", "count_squared:A", "--probes", "100"]);
    let probes = lines.iter().find(|l| l["check"] == "co_projection_probes").cloned().unwrap_or_default();
    let ok = r.pass && r.samples == 1000 && code == 0 && all_pass(&lines) && probes["probes"] == 100;
    (
        ok,
        format!(
            "N(A)^2 on 1000 paths, max scaled residual {:.1e}; 100 nested-MC probes, max |z| {:.2}",
            r.max_scaled_residual,
            probes["max_abs_z"].as_f64().unwrap_or(f64::NAN)
        ),
    )
}

fn hawkes_imbedding() -> Outcome {
    let h = hawkes_suite(&hawkes_model(), 10_000, SEED.derive(10), DEFAULT_TOLERANCE, Z_MAX).unwrap();
    let ok = h.imbedding.pass
        && h.pco.pass
        && h.integrand_deviation == 0.0
        && h.count.pass == Some(true)
        && h.overflow_fraction < 1e-3
        && h.paths == 10_000;
    (
        ok,
        format!(
            "10^4 paths, max imbedding residual {:.1e}, mean H_T {:.4} +- {:.4} vs renewal ({RENEWAL_STEPS} steps) {:.4}, z {:.2}, overflow {}",
            h.imbedding.max_abs_residual,
            h.count.mean,
            h.count.stderr,
            h.count.target.unwrap_or(f64::NAN),
            h.count.z.unwrap_or(f64::NAN),
            h.overflow_fraction
        ),
    )
}

fn window_demo() -> Outcome {
    let (code, lines) = cli(&["windows-demo", "--samples", "10000"]);
    let rows: Vec<&Value> = lines.iter().filter(|l| l["check"] == "window").collect();
    let means: Vec<f64> = rows.iter().map(|r| r["restricted"]["mean"].as_f64().unwrap()).collect();
    let targets: Vec<f64> = rows.iter().map(|r| r["target"].as_f64().unwrap()).collect();
    let decreasing = means.windows(2).all(|m| m[1] < m[0] || (m[1] == 0.0 && m[0] == 0.0));
    let ok = code == 0 && all_pass(&lines) && rows.len() == 4 && decreasing;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" > ");
    (ok, format!("E|F - F_j| {} vs excluded mass {}, max |z| {:.2}", fmt(&means), fmt(&targets), max_z(&lines)))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_poisson-malliavin");
    let runs: [&[&str]; 8] = [
        &["verify-pco", "--samples", "500"],
        &["expand", "--samples", "200"],
        &["verify-mecke", "--samples", "2000"],
        &["verify-ibp", "--samples", "2000"],
        &["verify-isometry", "--samples", "5000"],
        &["verify-co", "--samples", "200", "--probes", "10", "--inner", "500"],
        &["simulate-hawkes", "--samples", "1000"],
        &["windows-demo", "--samples", "1000"],
    ];
    let mut failures = Vec::new();
    for args in runs {
        let outputs: Vec<_> = ["1", "4"]
            .iter()
            .map(|t| {
                Command::new(bin)
                    .args(args)
                    .args(["--seed", "4242", "--threads", t])
                    .env_remove("POISSON_MALLIAVIN_SEED")
                    .output()
                    .unwrap()
            })
            .collect();
        if outputs[0].stdout.is_empty() || outputs[0].stdout != outputs[1].stdout {
            failures.push(args[0]);
        }
    }
    let ok = failures.is_empty();
    let detail = if ok {
        format!("{} subcommands byte-identical at --threads 1 and 4", runs.len())
    } else {
        format!("differing output: {}", failures.join(", "))
    };
    (ok, detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("pseudo-Clark-Ocone exactness", pseudo_clark_ocone),
        ("pseudo-chaotic finite exactness", pseudo_chaotic_exactness),
        ("chaotic expansion of N(A)^2", chaotic_exactness),
        ("span round trip", span_round_trip),
        ("Mecke and integration by parts", mecke_and_ibp),
        ("isometry constant", isometry_constant),
        ("Clark-Ocone with predictable projection", standard_clark_ocone),
        ("Hawkes imbedding", hawkes_imbedding),
        ("nested window demo", window_demo),
        ("determinism across thread counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        println!("criterion {}: {} {name}: {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
