use bundlediff::cmat::{CVec, C64};
use bundlediff::geometry::{self, Derivatives};
use bundlediff::greens;
use bundlediff::group::Irrep;
use bundlediff::harness::{self, fmt_f64, RunConfig, Status, Suite};
use bundlediff::holonomy::{IrrepTables, JacobianForm, Kernel, Multiplier};
use bundlediff::models::{BundleModel, ChartPoint, NP};
use bundlediff::pdecheck::grid::{self, AssembledOperator, Grid, GridSection, TimeScheme};
use bundlediff::pdecheck::{OperatorLabel, TestSection};
use bundlediff::sde::{self, Variant};
use bundlediff::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::process::ExitCode;
use std::sync::Mutex;

#[derive(Parser)]
#[command(name = "bundlediff", version, about = "Reduced diffusion on principal bundles: simulation and verification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tensors and invariant residuals at random Σ points.
    GeometryReport(GeometryArgs),
    /// Path ensembles of the bundle processes.
    Simulate(SimulateArgs),
    /// Grid evolution of a generator, dumped as CSV.
    Evolve(EvolveArgs),
    /// Verification suites with a JSON verdict.
    Verify(VerifyArgs),
    /// Convergence studies in dt or h.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// flat, hopf, warped or file
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    /// Gauge tilt of Σ.
    #[arg(long)]
    tilt: Option<f64>,
    /// Model file (with --model file).
    #[arg(long)]
    model_file: Option<String>,
    /// JSON run config; flags override it.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{path}: {e}")))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(r) = self.radius {
            cfg.model_params.radius = r;
        }
        if let Some(t) = self.tilt {
            cfg.model_params.tilt = t;
        }
        if let Some(f) = &self.model_file {
            cfg.model_params.file = Some(f.clone());
        }
        if let Some(s) = self.seed {
            cfg.sim.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DerivArg {
    Analytic,
    Fd,
}

impl From<DerivArg> for Derivatives {
    fn from(d: DerivArg) -> Self {
        match d {
            DerivArg::Analytic => Derivatives::Analytic,
            DerivArg::Fd => Derivatives::Fd,
        }
    }
}

#[derive(Args)]
struct GeometryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, value_enum, default_value = "analytic")]
    derivatives: DerivArg,
    /// Also dump the irrep generators and Casimir for this label.
    #[arg(long)]
    dump_irreps: Option<String>,
    #[arg(long, default_value = "report.json")]
    out: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Original,
    SigmaFull,
    SigmaReduced,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    F1,
    F2,
    F3,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "sigma-full")]
    variant: VariantArg,
    #[arg(long = "tA", alias = "t-a")]
    t_a: Option<f64>,
    #[arg(long = "tB", alias = "t-b")]
    t_b: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Weighted multiplicative integral to average along Σ paths.
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long, default_value = "1")]
    irrep: String,
    #[arg(long, default_value = "ensemble.json")]
    out: String,
    /// Trajectory CSV of the first (at most 100) paths.
    #[arg(long)]
    dump_paths: Option<String>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "1")]
    irrep: String,
    /// op2, operator_2, operator_3_plus_casimir, H_kappa or total_space
    #[arg(long, default_value = "H_kappa")]
    label: String,
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long = "t", default_value_t = 0.5)]
    t_span: f64,
    #[arg(long)]
    explicit: bool,
    #[arg(long, default_value = "field.csv")]
    out: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Geometry,
    Operators,
    Girsanov,
    Reduction,
    Pde,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: SuiteArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    irrep: Option<String>,
    /// Paths of every MC suite.
    #[arg(long)]
    paths: Option<usize>,
    /// Steps of every MC suite.
    #[arg(long)]
    steps: Option<usize>,
    /// Random points of the geometry and identity checks.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    sections: Option<usize>,
    #[arg(long, value_enum)]
    derivatives: Option<DerivArg>,
    #[arg(long)]
    quad_order: Option<usize>,
    #[arg(long, default_value = "verdict.json")]
    out: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Dt,
    H,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    kind: SweepKind,
    #[arg(long, default_value_t = 20_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "sweep.csv")]
    out: String,
}

fn write(path: &str, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{path}: {e}")))
}

fn geometry_report(a: &GeometryArgs) -> Result<i32> {
    let cfg = a.model.run_config()?;
    let model = cfg.build_model()?;
    let deriv: Derivatives = a.derivatives.into();
    let pts = harness::sample_points(&model, a.points, cfg.sim.seed, 0x6e0);
    let angles: Vec<f64> = (0..a.points).map(|k| 0.7 * k as f64).collect();
    let summary = harness::geometry_invariants(&model, &pts, &angles, deriv)?;
    let reports = pts.iter().map(|p| geometry::geometry_report(&model, p, deriv).map(|r| r.to_json())).collect::<Result<Vec<_>>>()?;
    let mut out = json!({
        "schema_version": "bundlediff.geometry/1",
        "model": cfg.model,
        "descriptor": model.descriptor(),
        "derivatives": deriv,
        "seed": cfg.sim.seed,
        "summary": summary,
        "points": reports,
    });
    if let Some(label) = &a.dump_irreps {
        let ir = Irrep::parse(model.group(), label)?;
        let gens: Vec<Vec<Vec<[f64; 2]>>> = ir.generators.iter().map(|g| (0..ir.dim).map(|i| (0..ir.dim).map(|j| [g.a[i][j].re, g.a[i][j].im]).collect()).collect()).collect();
        out["irrep"] = json!({ "label": ir.label_string(), "dim": ir.dim, "generators": gens });
    }
    write(&a.out, &harness::to_json_string(&out)?)?;
    println!("geometry-report: {} points, max residuals {:?}", a.points, summary);
    Ok(0)
}

fn simulate(a: &SimulateArgs) -> Result<i32> {
    let cfg = a.model.run_config()?;
    let model = cfg.build_model()?;
    let mut sim = cfg.sim.clone();
    sim.variant = match a.variant {
        VariantArg::Original => Variant::Original,
        VariantArg::SigmaFull => Variant::SigmaFull,
        VariantArg::SigmaReduced => Variant::SigmaReduced,
    };
    if let Some(v) = a.t_a {
        sim.t_a = v;
    }
    if let Some(v) = a.t_b {
        sim.t_b = v;
    }
    if let Some(v) = a.steps {
        sim.n_steps = v;
    }
    if let Some(v) = a.paths {
        sim.n_paths = v;
    }
    if let Some(v) = a.mu2 {
        sim.mu2 = v;
    }
    if let Some(v) = a.kappa {
        sim.kappa = v;
    }
    sim.validate()?;
    let start = harness::default_start(&model);
    let (stats, _) = sde::simulate_paths(&model, &sim, &start, &|_| {})?;
    let mut out = json!({ "schema_version": "bundlediff.ensemble/1", "model": cfg.model, "config": sim, "start": start.q, "stats": stats });
    if let Some(k) = a.kernel {
        let irrep = Irrep::parse(model.group(), &a.irrep)?;
        let t = IrrepTables::new(&irrep);
        let kernel = match k {
            KernelArg::F1 => Kernel::F1,
            KernelArg::F2 => Kernel::F2,
            KernelArg::F3 => Kernel::F3,
        };
        let profile = harness::default_profile(&model);
        let phi = |p: &ChartPoint<NP>| CVec::from_slice(&[model.test_function(&profile, irrep.label, p.chart, &p.q)]);
        let est = greens::semigroup_apply_mc(&model, &t, &sim, kernel, JacobianForm::Geometric, Multiplier::Euler, &start, &phi)?;
        out["semigroup"] = json!({ "irrep": irrep.label_string(), "profile": profile, "estimate": est });
    }
    if let Some(path) = &a.dump_paths {
        let rows = Mutex::new(Vec::new());
        for i in 0..sim.n_paths.min(100) {
            let end = sde::run_path::<_, NP, 1>(&model, &sim, &start, i as u64, &|e| {
                rows.lock().unwrap().push(format!("{i},{},{},{},{},{},{}", e.step, fmt_f64(e.t), e.point.chart, fmt_f64(e.point.q[0]), fmt_f64(e.point.q[1]), fmt_f64(e.point.q[2])));
            })?;
            rows.lock().unwrap().push(format!("{i},{},{},{},{},{},{}", sim.n_steps, fmt_f64(sim.t_b), end.point.chart, fmt_f64(end.point.q[0]), fmt_f64(end.point.q[1]), fmt_f64(end.point.q[2])));
        }
        let mut csv = String::from("path,step,t,chart,q0,q1,q2\n");
        for r in rows.into_inner().unwrap() {
            csv.push_str(&r);
            csv.push('\n');
        }
        write(path, &csv)?;
    }
    write(&a.out, &harness::to_json_string(&out)?)?;
    println!("simulate: {} paths x {} steps -> {}", sim.n_paths, sim.n_steps, a.out);
    Ok(0)
}

fn evolve(a: &EvolveArgs) -> Result<i32> {
    let cfg = a.model.run_config()?;
    let model = cfg.build_model()?;
    let irrep = Irrep::parse(model.group(), &a.irrep)?;
    let t = IrrepTables::new(&irrep);
    let label = OperatorLabel::parse(&a.label)?;
    let grid = Grid::new(&model, &t, a.h)?;
    let op = AssembledOperator::new(label, &model, &t, &cfg.sim, &grid, cfg.derivatives)?;
    let section = TestSection { model: &model, profile: harness::default_profile(&model), charge: irrep.label };
    let u0 = GridSection::from_section(&grid, &section);
    let scheme = if a.explicit { TimeScheme::Explicit } else { TimeScheme::CrankNicolson };
    let (u, diag) = grid::evolve(&op, &grid, &u0, a.t_span, a.dt, scheme)?;
    let mut csv = String::from("chart,x,y");
    for k in 0..grid.dim {
        csv.push_str(&format!(",re_initial_{k},im_initial_{k},re_{k},im_{k}"));
    }
    csv.push('\n');
    for &(c, i) in &grid.active {
        let x = grid.charts[c].coords(i);
        csv.push_str(&format!("{c},{},{}", fmt_f64(x[0]), fmt_f64(x[1])));
        for k in 0..grid.dim {
            let (v0, v): (C64, C64) = (u0.values[c][i].a[k], u.values[c][i].a[k]);
            csv.push_str(&format!(",{},{},{},{}", fmt_f64(v0.re), fmt_f64(v0.im), fmt_f64(v.re), fmt_f64(v.im)));
        }
        csv.push('\n');
    }
    write(&a.out, &csv)?;
    println!("evolve: {} nodes, {:?}", grid.active.len(), diag);
    Ok(0)
}

fn verify(a: &VerifyArgs) -> Result<i32> {
    let mut cfg = a.model.run_config()?;
    cfg.suites = vec![match a.suite {
        SuiteArg::Geometry => Suite::Geometry,
        SuiteArg::Operators => Suite::Operators,
        SuiteArg::Girsanov => Suite::Girsanov,
        SuiteArg::Reduction => Suite::Reduction,
        SuiteArg::Pde => Suite::Pde,
        SuiteArg::All => Suite::All,
    }];
    if let Some(i) = &a.irrep {
        cfg.irrep = i.clone();
    }
    let b = &mut cfg.budgets;
    if let Some(p) = a.paths {
        b.girsanov_paths = p;
        b.reduction_paths = p;
        b.pde_paths = p;
    }
    if let Some(s) = a.steps {
        b.girsanov_steps = s;
        b.reduction_steps = s;
        b.pde_steps = s;
    }
    if let Some(p) = a.points {
        b.geometry_points = p;
        b.identity_points = p;
    }
    if let Some(s) = a.sections {
        b.identity_sections = s;
    }
    if let Some(q) = a.quad_order {
        b.quad_order = q;
    }
    if let Some(d) = a.derivatives {
        cfg.derivatives = d.into();
    }
    cfg.out = Some(a.out.clone());
    let v = harness::run_suite(&cfg)?;
    write(&a.out, &v.to_json()?)?;
    for c in &v.checks {
        let status = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        match c.sigma {
            Some(s) => println!("{status:<12} {}/{}  measured {:.3e}  sigma {:.3e}", c.suite, c.name, c.measured, s),
            None => println!("{status:<12} {}/{}  measured {:.3e}  tolerance {:.1e}", c.suite, c.name, c.measured, c.tolerance),
        }
    }
    println!("verdict: {:?} -> {}", v.status, a.out);
    Ok(v.exit_code())
}

fn sweep(a: &SweepArgs) -> Result<i32> {
    let study = match a.kind {
        SweepKind::Dt => harness::weak_order_study(&[4, 8, 16, 32], 512, a.paths, a.seed)?,
        SweepKind::H => harness::grid_order_study(&[0.2, 0.1, 0.05], 1)?,
    };
    let mut csv = String::from("step,error,stderr\n");
    for k in 0..study.steps.len() {
        csv.push_str(&format!("{},{},{}\n", fmt_f64(study.steps[k]), fmt_f64(study.errors[k]), fmt_f64(study.stderr[k])));
    }
    write(&a.out, &csv)?;
    println!("sweep: slope {:.4}", study.slope);
    Ok(0)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BUNDLEDIFF_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("BUNDLEDIFF_THREADS: not a number: `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = init_threads().and_then(|_| match &cli.cmd {
        Cmd::GeometryReport(a) => geometry_report(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Evolve(a) => evolve(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Sweep(a) => sweep(a),
    });
    match r {
        Ok(code) => ExitCode::from(code as u8),
        Err(e @ (Error::Config(_) | Error::UnknownModel(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
