//! Command-line front end: reproducible verification runs, geodesic and
//! Jacobi data exports, and measure-contraction experiments.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cvlab_core::comparison::sample_points;
use cvlab_core::geodesics::{exp_eps, sr_exp};
use cvlab_core::jacobi::{closed_form, jacobi_propagate, transport, ClosedFormCase, Connection};
use cvlab_core::kernels::kernel_bundle;
use cvlab_core::models::parse_model_name;
use cvlab_core::report::{
    fmt_f64, run, summary_lines, write_reports, ReportFormat, RunConfig, FORMAT_VERSION,
};
use cvlab_core::shooting::distance;

#[derive(Parser)]
#[command(name = "cvlab", about = "canonical-variation geometry laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the scalar kernel grid (mu, r, phi, dphi, psi, dpsi, ddpsi, PsiCap) as CSV
    Kernels(KernelsArgs),
    /// Distance between two chart points
    Dist(DistArgs),
    /// Integrate a geodesic and export the arc samples as CSV
    Exp(ExpArgs),
    /// Closed-form vs propagated Jacobi field components as CSV
    Jacobi(JacobiArgs),
    /// Hessian comparison sweep at one eps
    Hessian(HessianArgs),
    /// Run verification suites and write reports
    Verify(VerifyArgs),
    /// Diameter scan and Bonnet-Myers checks
    Diameter(DiameterArgs),
    /// Measure contraction probes
    Mcp(McpArgs),
    /// Print the model descriptor JSON
    Model(ModelArgs),
}

#[derive(Args)]
struct KernelsArgs {
    /// comma-separated mu values
    #[arg(long, default_value = "-2,-1,-0.5,0,0.5,1,2")]
    mu: String,
    #[arg(long, default_value_t = 0.0)]
    r_min: f64,
    #[arg(long, default_value_t = 2.5)]
    r_max: f64,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistArgs {
    #[arg(long)]
    model: String,
    /// chart coordinates, comma separated
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// metric parameter; 0 asks for the sub-Riemannian distance
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 64)]
    seeds: usize,
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value = "")]
    x0: String,
    /// initial frame velocity (eps > 0) or horizontal velocity (eps = 0)
    #[arg(long)]
    v0: String,
    /// vertical charge for eps = 0
    #[arg(long, default_value_t = 0.0)]
    charge: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct JacobiArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// closed-form case: a, b or c
    #[arg(long)]
    case: String,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = 80)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HessianArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// JSON config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// comma-separated eps grid
    #[arg(long)]
    eps_grid: Option<String>,
    /// hessian, laplacian, vertical, diameter, injectivity or all
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json or table
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DiameterArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 60)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct McpArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// region center in chart coordinates
    #[arg(long, default_value = "0,0,0.25")]
    center: String,
    /// region half-widths
    #[arg(long, default_value = "0.18,0.18,0.08")]
    region: String,
    /// contraction parameters t in (0,1)
    #[arg(long, default_value = "0.3,0.5,0.7")]
    t_grid: String,
    #[arg(long, default_value_t = 40000)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: String,
}

fn parse_coords(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad coordinate '{p}'")))
        .collect()
}

fn write_or_print(out: &Option<PathBuf>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{body}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    // worker pool: flag > env > default
    let workers_env = std::env::var("CVLAB_WORKERS").ok().and_then(|v| v.parse::<usize>().ok());
    match cli.command {
        Command::Kernels(a) => {
            let mus = parse_coords(&a.mu)?;
            let mut body = String::from("mu,r,phi,dphi,psi,dpsi,ddpsi,PsiCap\n");
            for &mu in &mus {
                for i in 0..=a.count {
                    let r = a.r_min + (a.r_max - a.r_min) * i as f64 / a.count.max(1) as f64;
                    let b = kernel_bundle(mu, r);
                    body.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        fmt_f64(mu),
                        fmt_f64(r),
                        fmt_f64(b.phi),
                        fmt_f64(b.dphi),
                        fmt_f64(b.psi),
                        fmt_f64(b.dpsi),
                        fmt_f64(b.ddpsi),
                        fmt_f64(b.psi_cap)
                    ));
                }
            }
            write_or_print(&a.out, &body)?;
        }
        Command::Dist(a) => {
            let model = Arc::new(parse_model_name(&a.model)?);
            let from = parse_coords(&a.from)?;
            let to = parse_coords(&a.to)?;
            let d = distance(&model, a.eps, &from, &to, a.seeds)?;
            println!("length {:.6}", d.length);
            println!("length15 {}", fmt_f64(d.length));
            println!("lambda {}", fmt_f64(d.lambda));
            println!("ambiguous {}", d.ambiguous);
            if let Some(ex) = d.extrapolated {
                println!("extrapolated {}", fmt_f64(ex));
                for (e, v) in &d.continuation {
                    println!("continuation {} {}", fmt_f64(*e), fmt_f64(*v));
                }
            }
        }
        Command::Exp(a) => {
            let model = Arc::new(parse_model_name(&a.model)?);
            let x0 = if a.x0.is_empty() { vec![0.0; model.dim] } else { parse_coords(&a.x0)? };
            let v0 = nalgebra::DVector::from_vec(parse_coords(&a.v0)?);
            let arc = if a.eps > 0.0 {
                exp_eps(&model, a.eps, &x0, &v0, a.t)?
            } else {
                sr_exp(&model, &x0, &v0, a.charge, a.t)?
            };
            let (ds, dm) = arc.conservation_drift();
            let mut body = String::new();
            body.push_str("# columns: t, chart, frame velocity, lambda, p\n");
            body.push_str(&format!("# conservation_drift speed={} momentum={}\n", fmt_f64(ds), fmt_f64(dm)));
            for row in arc.sample_rows(a.samples)? {
                let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                body.push_str(&cells.join(","));
                body.push('\n');
            }
            write_or_print(&a.out, &body)?;
        }
        Command::Jacobi(a) => {
            let model = Arc::new(parse_model_name(&a.model)?);
            let case = match a.case.as_str() {
                "a" | "A" => ClosedFormCase::A,
                "b" | "B" => ClosedFormCase::B,
                "c" | "C" => ClosedFormCase::C,
                other => bail!("unknown case '{other}' (expected a, b or c)"),
            };
            let x0 = vec![0.0; model.dim];
            let dim = model.dim;
            // a representative arc and boundary vector per case
            let (dir, v0) = match case {
                ClosedFormCase::A => {
                    if model.n < 4 {
                        bail!("case a needs horizontal dimension >= 4 (try heisenberg5)");
                    }
                    let mut d = nalgebra::DVector::zeros(dim);
                    d[0] = 0.8;
                    d[model.n / 2] = 0.2;
                    d[model.n] = 0.3;
                    let mut v = nalgebra::DVector::zeros(dim);
                    v[1] = 1.0;
                    (d, Some(v))
                }
                ClosedFormCase::B => {
                    let mut d = nalgebra::DVector::zeros(dim);
                    d[0] = 1.0;
                    (d, None)
                }
                ClosedFormCase::C => {
                    let mut d = nalgebra::DVector::zeros(dim);
                    d[model.n] = 1.0;
                    let mut v = nalgebra::DVector::zeros(dim);
                    v[0] = 1.0;
                    (d, Some(v))
                }
            };
            let n = model.g_eps_inner(a.eps, &dir, &dir).sqrt();
            let arc = exp_eps(&model, a.eps, &x0, &(dir / n), a.r)?;
            let tr = transport(&arc, Connection::Hat)?;
            let cf = closed_form(case, &arc, &tr, v0.as_ref())?;
            let (_, dy0) = cf.eval(0.0);
            let dy0_adapted = tr.to_adapted(0.0, &dy0);
            let jf = jacobi_propagate(&arc, &nalgebra::DVector::zeros(dim), &dy0_adapted)?;
            let mut body = String::new();
            body.push_str("# columns: t, closed-form components, propagated components (parallel frame)\n");
            for i in 0..=a.samples {
                let t = arc.time * i as f64 / a.samples.max(1) as f64;
                let (yc, _) = cf.eval(t);
                let yo = tr.to_parallel(t, &jf.y_at(t));
                let mut cells = vec![fmt_f64(t)];
                cells.extend(yc.iter().map(|v| fmt_f64(*v)));
                cells.extend(yo.iter().map(|v| fmt_f64(*v)));
                body.push_str(&cells.join(","));
                body.push('\n');
            }
            write_or_print(&a.out, &body)?;
        }
        Command::Hessian(a) => {
            let mut config = RunConfig::new(&a.model);
            config.eps_grid = vec![a.eps];
            config.suites = vec!["hessian".into()];
            config.samples = a.samples;
            config.seed = a.seed;
            if let Some(dir) = a.out.clone() {
                config.out_dir = Some(dir);
            }
            run_and_report(config, workers_env)?;
        }
        Command::Verify(a) => {
            let mut config = match &a.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<RunConfig>(&text).context("parsing config")?
                }
                None => RunConfig::new(a.model.as_deref().unwrap_or("heisenberg3")),
            };
            if let Some(m) = a.model {
                config.model = m;
            }
            if let Some(g) = a.eps_grid {
                config.eps_grid = parse_coords(&g)?;
            }
            if let Some(s) = a.suite {
                config.suites = s.split(',').map(|x| x.trim().to_string()).collect();
            }
            if let Some(n) = a.samples {
                config.samples = n;
            }
            if let Some(s) = a.seed {
                config.seed = s;
            }
            if let Some(o) = a.out {
                config.out_dir = Some(o);
            }
            if let Some(f) = a.format {
                config.format = match f.as_str() {
                    "csv" => ReportFormat::Csv,
                    "json" => ReportFormat::Json,
                    "table" => ReportFormat::Table,
                    other => bail!("unknown format '{other}'"),
                };
            }
            config.workers = a.workers.or(workers_env);
            run_and_report(config, workers_env)?;
        }
        Command::Diameter(a) => {
            let mut config = RunConfig::new(&a.model);
            config.suites = vec!["diameter".into()];
            config.samples = a.samples;
            config.seed = a.seed;
            run_and_report(config, workers_env)?;
        }
        Command::Mcp(a) => {
            run_mcp(a)?;
        }
        Command::Model(a) => {
            let model = parse_model_name(&a.model)?;
            println!("{}", serde_json::to_string_pretty(&model.descriptor())?);
        }
    }
    Ok(())
}

fn run_and_report(config: RunConfig, workers_env: Option<usize>) -> Result<()> {
    if let Some(w) = config.workers.or(workers_env) {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().ok();
    }
    let report = run(&config)?;
    for line in summary_lines(&report) {
        println!("{line}");
    }
    if let Some(dir) = &config.out_dir {
        for p in write_reports(&report, dir)? {
            println!("wrote {}", p.display());
        }
    }
    if !report.all_pass() {
        std::process::exit(1);
    }
    Ok(())
}

fn run_mcp(a: McpArgs) -> Result<()> {
    use cvlab_core::mcp::{mcp_exponent_probe, theta_bound_check, Region};
    let model = Arc::new(parse_model_name(&a.model)?);
    let x0 = vec![0.0; model.dim];
    let center = parse_coords(&a.center)?;
    let half = parse_coords(&a.region)?;
    let t_grid = parse_coords(&a.t_grid)?;
    let region = Region::center(&center, &half);
    let mut body = String::new();
    let mut worst_exponent: f64 = 0.0;
    let mut violations = 0usize;
    if model.k1 == 0.0 {
        let n_exp = if a.eps > 0.0 { model.n as f64 + 4.0 } else { model.n as f64 + 3.0 };
        let probes =
            mcp_exponent_probe(&model, a.eps, &x0, &region, &t_grid, n_exp, a.samples, a.seed, 0)?;
        body.push_str("# probe rows: t, samples, measured_ratio, std_error, theoretical, exponent, pass\n");
        for p in &probes {
            worst_exponent = worst_exponent.max(p.exponent_estimate);
            if !p.pass {
                violations += 1;
            }
            body.push_str(&format!(
                "probe,{},{},{},{},{},{},{}\n",
                fmt_f64(p.t),
                p.samples,
                fmt_f64(p.measured_ratio),
                fmt_f64(p.std_error),
                fmt_f64(p.theoretical_factor),
                fmt_f64(p.exponent_estimate),
                p.pass
            ));
        }
    }
    if a.eps > 0.0 {
        // pointwise Theta-density rows on validated samples
        let spec = cvlab_core::comparison::SampleSpec { count: 12, seed: a.seed, bvp_seeds: 24 };
        let pts: Vec<Vec<f64>> = sample_points(&model, a.eps, &spec)?
            .into_iter()
            .filter(|s| !s.cut_flag)
            .map(|s| s.x)
            .collect();
        for &t in &t_grid {
            for rec in theta_bound_check(&model, a.eps, &x0, &pts, t, 1e-3)? {
                if rec.flags.is_empty() && rec.margin < 0.0 {
                    violations += 1;
                }
                body.push_str(&format!(
                    "theta,{},{},{},{},{},{}\n",
                    fmt_f64(rec.t),
                    fmt_f64(rec.r),
                    fmt_f64(rec.lambda),
                    fmt_f64(rec.measured_jacobian),
                    fmt_f64(rec.bound),
                    rec.flags.join("+")
                ));
            }
        }
    }
    let summary = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "model": a.model,
        "eps": a.eps,
        "worst_exponent": worst_exponent,
        "violations": violations,
    });
    println!("{summary}");
    println!("summary exponent {:.3}", worst_exponent);
    write_or_print(&a.out, &body)?;
    if violations > 0 {
        std::process::exit(1);
    }
    Ok(())
}
