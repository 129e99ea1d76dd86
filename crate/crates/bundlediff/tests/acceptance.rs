//! Acceptance criteria, one PASS/FAIL line each with its runtime. A criterion
//! that exceeds its runtime budget fails.

use bundlediff::geometry::Derivatives;
use bundlediff::group::Irrep;
use bundlediff::harness::{self, Check, RunConfig, Status, Suite};
use bundlediff::models::{make_model, AnyModel, ModelParams, Potential, TestProfile};
use bundlediff::pdecheck;
use bundlediff::sde::SimConfig;
use std::process::Command;
use std::time::Instant;

struct Outcome {
    pass: bool,
    summary: String,
}

fn model(name: &str, tilt: f64) -> AnyModel {
    let p = ModelParams { tilt, ..ModelParams::default() };
    make_model(name, &p, 0.5).unwrap()
}

fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.status == Status::Pass)
}

fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .filter(|c| c.status != Status::Pass)
        .map(|c| format!("{}={:.3e}({:?})", c.name, c.measured, c.status))
        .collect::<Vec<_>>()
        .join(" ")
}

fn geometry_invariants() -> Outcome {
    let mut worst = [0.0_f64; 2];
    let mut pass = true;
    for (name, tilt) in [("flat", 0.0), ("hopf", 0.0), ("hopf", 0.3), ("warped", 0.3)] {
        let m = model(name, tilt);
        let pts = harness::sample_points(&m, 1000, 11, 0x6e0);
        let angles: Vec<f64> = (0..1000).map(|k| (k as f64 * 0.618_033_988_75).fract() * 6.0 - 3.0).collect();
        for (i, (d, tol)) in [(Derivatives::Analytic, 1e-10), (Derivatives::Fd, 1e-6)].into_iter().enumerate() {
            let r = harness::geometry_invariants(&m, &pts, &angles, d).unwrap();
            let w = r.projectors.max(r.pseudoinverse).max(r.determinant);
            worst[i] = worst[i].max(w);
            pass &= w < tol;
        }
    }
    Outcome { pass, summary: format!("max residual analytic {:.2e} (< 1e-10), fd {:.2e} (< 1e-6), 1000 points x 4 models", worst[0], worst[1]) }
}

fn jacobian_integrand() -> Outcome {
    let cfg = RunConfig::default();
    let mut checks = Vec::new();
    for (name, tilt) in [("flat", 0.0), ("hopf", 0.0), ("hopf", 0.3)] {
        let m = model(name, tilt);
        let pts = harness::sample_points(&m, 200, 5, 0x6e0);
        checks.extend(harness::jtilde_checks(&cfg, &m, &pts).unwrap());
    }
    let worst = checks.iter().fold(0.0_f64, |a, c| a.max(c.measured));
    Outcome { pass: all_pass(&checks) && checks.len() > 9, summary: format!("{} checks, worst {:.2e} {}", checks.len(), worst, describe(&checks)) }
}

fn operator_identity() -> Outcome {
    let sim = SimConfig::default();
    let mut worst = 0.0_f64;
    for tilt in [0.0, 0.3] {
        let m = model("hopf", tilt);
        for lambda in [0, 1] {
            let r = pdecheck::operator_identity_residual(&m, &Irrep::u1(lambda), &sim, 50, 20, Derivatives::Analytic, 3).unwrap();
            worst = worst.max(r.operator_2_vs_h_kappa).max(r.op2_vs_total_space).max(r.op2_vs_conjugated);
        }
    }
    Outcome { pass: worst < 1e-8, summary: format!("max relative residual {worst:.2e} (< 1e-8), Hopf, charges 0 and 1, 20 sections x 50 points") }
}

fn girsanov() -> Outcome {
    let cases = [("hopf", 0.3, 100_000), ("flat", 0.0, 2_000), ("warped", 0.3, 10_000)];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, tilt, paths) in cases {
        let m = model(name, tilt);
        let sim = SimConfig { n_paths: paths, n_steps: 200, t_b: 0.5, seed: 21, ..SimConfig::default() };
        let g = harness::girsanov_residual(&m, &Irrep::u1(1), &sim, &harness::default_start(&m), &harness::default_profile(&m)).unwrap();
        let r = (g.diff_geometric.value[0]).norm();
        let s = g.diff_geometric.stderr[0];
        let scale = g.f1.value[0].norm();
        let ok = if name == "flat" { g.exact && r == 0.0 } else { r <= 3.0 * s + harness::ROUNDING_FLOOR * scale };
        pass &= ok;
        parts.push(format!("{name}: |res| {r:.2e} sigma {s:.2e}{}", if g.exact { " (exact)" } else { "" }));
    }
    Outcome { pass, summary: parts.join("; ") }
}

fn reduction() -> Outcome {
    let tol = harness::Tolerances::default();
    let mut parts = Vec::new();
    let mut pass = true;
    // flat: both sides and the closed form
    let flat = model("flat", 0.0);
    let sim = SimConfig { n_paths: 100_000, n_steps: 50, seed: 31, ..SimConfig::default() };
    let r = harness::reduction_residual(&flat, &Irrep::u1(1), &sim, &harness::default_start(&flat), &harness::default_profile(&flat), 32).unwrap();
    let ex = r.exact.clone().unwrap()[0];
    let checks = [
        Check::statistical(Suite::Reduction, "flat lhs-rhs", r.comparison.residual, r.comparison.sigma, ex.norm(), &tol),
        Check::statistical(Suite::Reduction, "flat lhs-exact", (r.lhs.value[0] - ex).norm(), r.lhs.stderr[0], ex.norm(), &tol),
        Check::statistical(Suite::Reduction, "flat rhs-exact", (r.rhs.value[0] - ex).norm(), r.rhs.stderr[0], ex.norm(), &tol),
    ];
    for c in &checks {
        pass &= c.status == Status::Pass;
        parts.push(format!("{} {:.1}σ", c.name, c.measured / c.sigma.unwrap()));
    }
    // Hopf with a tilted gauge and a potential
    let params = ModelParams { tilt: 0.3, potential: Potential::Quadratic { c: 0.5 }, ..ModelParams::default() };
    let hopf = make_model("hopf", &params, 0.5).unwrap();
    let sim = SimConfig { n_paths: 200_000, n_steps: 100, seed: 32, ..SimConfig::default() };
    let r = harness::reduction_residual(&hopf, &Irrep::u1(1), &sim, &harness::default_start(&hopf), &TestProfile::Smooth { beta: 0.5, c: [0.4, -0.3] }, 32).unwrap();
    let c = Check::statistical(Suite::Reduction, "hopf lhs-rhs", r.comparison.residual, r.comparison.sigma, r.lhs.value[0].norm(), &tol);
    pass &= c.status == Status::Pass;
    parts.push(format!("hopf lhs {:.4} rhs {:.4} |res| {:.2e} = {:.1}σ", r.lhs.value[0], r.rhs.value[0], c.measured, c.measured / c.sigma.unwrap()));
    Outcome { pass, summary: parts.join("; ") }
}

fn mc_pde() -> Outcome {
    let m = model("hopf", 0.3);
    let profile = TestProfile::Smooth { beta: 0.5, c: [0.4, -0.3] };
    let points = harness::cross_check_points(&m, 4);
    let mut parts = Vec::new();
    let mut pass = true;
    for lambda in [0, 1] {
        let sim = SimConfig { n_paths: 25_000, n_steps: 100, t_b: 0.5, seed: 41 + lambda as u64, ..SimConfig::default() };
        let r = harness::mc_pde_cross_check(&m, &Irrep::u1(lambda), &sim, &profile, &points, 0.02, 0.01).unwrap();
        pass &= r.l2_relative < 0.03;
        parts.push(format!("charge {lambda}: L2 rel {:.2e} (sigma {:.2e}, {} nodes)", r.l2_relative, r.sigma_relative, r.active_nodes));
    }
    Outcome { pass, summary: format!("{} (< 3e-2, 1e5 paths, h=0.02)", parts.join("; ")) }
}

fn convergence() -> Outcome {
    let w = harness::weak_order_study(&[4, 8, 16, 32], 512, 10_000, 51).unwrap();
    let h = harness::grid_order_study(&[0.2, 0.1, 0.05], 1).unwrap();
    let (rres, rsig) = w.reference_check;
    let pass = (w.slope - 1.0).abs() <= 0.15 && (h.slope - 2.0).abs() <= 0.2 && rres.abs() <= 3.0 * rsig + 0.01;
    Outcome { pass, summary: format!("weak slope {:.3} (1 ± 0.15), grid slope {:.3} (2 ± 0.2)", w.slope, h.slope) }
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("bundlediff-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut texts = Vec::new();
    for threads in ["1", "3"] {
        // same command line in separate directories
        let cwd = dir.join(format!("threads_{threads}"));
        std::fs::create_dir_all(&cwd).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_bundlediff"))
            .args(["verify", "all", "--model", "hopf", "--seed", "7", "--out", "verdict.json"])
            .current_dir(&cwd)
            .env("BUNDLEDIFF_THREADS", threads)
            .output()
            .unwrap();
        assert!(status.status.code().is_some());
        texts.push(harness::strip_timestamp(&std::fs::read_to_string(cwd.join("verdict.json")).unwrap()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    let same = texts[0] == texts[1];
    Outcome { pass: same && !texts[0].is_empty(), summary: format!("verify all --model hopf --seed 7 at 1 and 3 threads: {}", if same { "byte-identical" } else { "differ" }) }
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("1 geometry invariants", 30.0, geometry_invariants),
        ("2 jacobian integrand", 60.0, jacobian_integrand),
        ("3 operator identity", 60.0, operator_identity),
        ("4 girsanov factorization", 180.0, girsanov),
        ("5 reduction identity", 300.0, reduction),
        ("6 mc-pde cross-check", 300.0, mc_pde),
        ("7 convergence orders", 120.0, convergence),
        ("8 determinism", f64::INFINITY, determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        let ok = o.pass && secs <= budget;
        if !ok {
            failed += 1;
        }
        let limit = if budget.is_finite() { format!(", limit {budget:.0} s") } else { String::new() };
        println!("{} criterion {name}: {} [{secs:.1} s{limit}]", if ok { "PASS" } else { "FAIL" }, o.summary);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
