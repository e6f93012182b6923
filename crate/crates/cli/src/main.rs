//! `hjb`: value functions, PDE solves, traveling-wave benchmarks, convergence
//! studies and strategy surfaces from the command line.

mod io;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hjb_core::pde::{solve_pde, BoundaryCondition, PdeProblem, PhiField, Scheme, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use hjb_core::portfolio::{model_from_path, PipelineConfig};
use hjb_core::verification::grid_size;
use hjb_core::wave::DEFAULT_REL_TOL;
use hjb_core::{ConstraintSet, EocStudy, KRule, MarketModel, PiecewiseAlpha, PriceHistory, WaveBenchmark};
use serde::Serialize;

use crate::io::{aligned, header, index_list, num, parse_constraints, CsvOut};
use crate::manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "hjb", version, about = "Constrained dynamic allocation via the Riccati-transformed HJB equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate alpha(phi), alpha'(phi) and the optimal weights.
    Alpha(AlphaArgs),
    /// Solve the transformed PDE for a constant terminal condition.
    Solve(SolveArgs),
    /// Compute the traveling-wave profile (eps = r = 0).
    Wave(WaveArgs),
    /// Convergence study against the traveling wave.
    Eoc(EocArgs),
    /// Prices or moments -> phi(x, t) -> optimal strategy surface.
    Portfolio(PortfolioArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SchemeArg {
    /// Fully implicit with micro-iterations.
    Implicit,
    /// Coefficients lagged one layer.
    Semi,
}

fn scheme(arg: SchemeArg, tol: f64, max_iters: usize) -> Scheme {
    match arg {
        SchemeArg::Implicit => Scheme::FullyImplicit { tol, max_iters },
        SchemeArg::Semi => Scheme::SemiImplicit,
    }
}

/// `dirichlet:<value>`, `robin:<d>` or `neumann`.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum BcArg {
    Dirichlet(f64),
    Robin(f64),
    Neumann,
}

impl FromStr for BcArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, value) = s.split_once(':').unwrap_or((s, ""));
        let value = || value.parse::<f64>().map_err(|_| format!("bad boundary value in '{s}'"));
        match kind {
            "neumann" if value().is_err() => Ok(BcArg::Neumann),
            "robin" => Ok(BcArg::Robin(value()?)),
            "dirichlet" => Ok(BcArg::Dirichlet(value()?)),
            _ => Err(format!("boundary must be dirichlet:<v>, robin:<d> or neumann, got '{s}'")),
        }
    }
}

impl BcArg {
    fn condition(self) -> BoundaryCondition {
        match self {
            BcArg::Dirichlet(v) => BoundaryCondition::Dirichlet(Arc::new(move |_| v)),
            BcArg::Robin(d) => BoundaryCondition::Robin(d),
            BcArg::Neumann => BoundaryCondition::Neumann,
        }
    }
}

fn constraints_arg(s: &str) -> Result<ConstraintSet, String> {
    parse_constraints(s)
}

#[derive(Args, Debug, Serialize)]
struct AlphaArgs {
    /// Model CSV: first row mu, then the rows of Sigma.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    phi_min: f64,
    #[arg(long, default_value_t = 10.0)]
    phi_max: f64,
    /// Number of sample points.
    #[arg(long, default_value_t = 1000)]
    points: usize,
    /// simplex (sum = 1) or merton (sum <= 1).
    #[arg(long, default_value = "simplex", value_parser = constraints_arg)]
    constraints: ConstraintSet,
    /// Also write the closed-form pieces to pieces.csv.
    #[arg(long)]
    pieces: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[arg(long, conflicts_with = "alpha_csv", required_unless_present = "alpha_csv")]
    model: Option<PathBuf>,
    /// Pieces file written by `alpha --pieces`.
    #[arg(long)]
    alpha_csv: Option<PathBuf>,
    #[arg(long, default_value = "simplex", value_parser = constraints_arg)]
    constraints: ConstraintSet,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    x_lo: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    x_hi: f64,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// c*h or c*h^2.
    #[arg(long, default_value = "0.1*h^2")]
    k_rule: KRule,
    /// Constant terminal value phi(x, T).
    #[arg(long, default_value_t = 9.0)]
    terminal: f64,
    #[arg(long, default_value = "robin:1")]
    left_bc: BcArg,
    #[arg(long, default_value = "neumann")]
    right_bc: BcArg,
    #[arg(long, value_enum, default_value_t = SchemeArg::Implicit)]
    scheme: SchemeArg,
    /// Micro-iteration tolerance (max norm of consecutive iterates).
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Lower end of the alpha table.
    #[arg(long, default_value_t = 1e-3)]
    phi_min: f64,
    /// Write every n-th time layer.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct WaveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    v_minus: f64,
    #[arg(long, default_value_t = 1.5)]
    v_plus: f64,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    x_lo: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    x_hi: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    horizon: f64,
    /// Relative tolerance of the profile integrator.
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    rel_tol: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EocArgs {
    #[arg(long)]
    model: PathBuf,
    /// Strictly decreasing spatial steps.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125")]
    levels: Vec<f64>,
    /// c*h (first-order regime) or c*h^2 (second-order regime).
    #[arg(long, default_value = "0.1*h")]
    k_rule: KRule,
    #[arg(long, default_value_t = 0.3)]
    v_minus: f64,
    #[arg(long, default_value_t = 1.5)]
    v_plus: f64,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    x_lo: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    x_hi: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Implicit)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    rel_tol: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PortfolioArgs {
    /// Price CSV with header `date,<ticker>...`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    prices: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Return observations per year, used to annualize estimated moments.
    #[arg(long, default_value_t = 252.0)]
    periods_per_year: f64,
    /// Constant absolute risk aversion (> 1).
    #[arg(long, default_value_t = 9.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    #[arg(long = "T", default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    y_lo: f64,
    #[arg(long, default_value_t = 10.0)]
    y_hi: f64,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value = "0.1*h^2")]
    k_rule: KRule,
    /// Robin coefficient d in phi_x = d phi at the left end.
    #[arg(long, default_value_t = 1.0)]
    robin_d: f64,
    #[arg(long, default_value = "simplex", value_parser = constraints_arg)]
    constraints: ConstraintSet,
    #[arg(long, value_enum, default_value_t = SchemeArg::Implicit)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> Result<MarketModel> {
    manifest.add_input(path)?;
    model_from_path(path).with_context(|| format!("loading model {}", path.display()))
}

fn write_alpha_table(path: &Path, alpha: &PiecewiseAlpha, lo: f64, hi: f64, points: usize) -> Result<()> {
    let n = alpha.pieces()[0].a_vec.len();
    let mut head = header(&["phi", "alpha", "alpha_prime"], "theta", n);
    head.push("active_set".into());
    let mut out = CsvOut::create(path, &head)?;
    let last = points.max(2) - 1;
    for i in 0..=last {
        let phi = if i == last { hi } else { lo + (hi - lo) * i as f64 / last as f64 };
        let (value, deriv) = alpha.eval(phi)?;
        let piece = &alpha.pieces()[alpha.piece_index(phi)];
        let mut cells = vec![num(phi), num(value), num(deriv)];
        cells.extend(piece.theta(phi).into_iter().map(num));
        cells.push(index_list(&piece.active_set));
        out.row(cells.iter().map(String::as_str))?;
    }
    out.finish()
}

fn write_phi(path: &Path, field: &PhiField, stride: usize) -> Result<()> {
    let mut out = CsvOut::create(path, &["tau".into(), "x".into(), "phi".into()])?;
    for j in layers(field.n_layers(), stride) {
        let tau = num(field.times[j]);
        for (x, v) in field.grid.iter().zip(field.layer(j)) {
            out.row([tau.as_str(), &num(*x), &num(*v)])?;
        }
    }
    out.finish()
}

/// Every `stride`-th layer plus the last one.
fn layers(n: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    (0..n).filter(move |j| j % stride == 0 || *j == n - 1)
}

fn summarize_warnings(field: &PhiField, manifest: &mut RunManifest) {
    if field.clamped > 0 {
        manifest.warnings.push(format!(
            "{} face values clamped on {} layers",
            field.clamped,
            field.warnings.len()
        ));
        manifest.warnings.extend(field.warnings.iter().take(10).cloned());
    }
}

fn cmd_alpha(args: &AlphaArgs) -> Result<()> {
    if args.points < 2 {
        bail!("--points must be at least 2");
    }
    prepare_out(&args.out)?;
    let mut manifest = RunManifest::new("alpha", serde_json::to_value(args)?);
    let model = load_model(&args.model, &mut manifest)?;
    let clock = Instant::now();
    let alpha = PiecewiseAlpha::build(&model, args.phi_min, args.phi_max, args.constraints)?;
    manifest.time("alpha", clock.elapsed().as_secs_f64());
    write_alpha_table(&args.out.join("alpha.csv"), &alpha, args.phi_min, args.phi_max, args.points)?;
    manifest.outputs.push("alpha.csv".into());
    if args.pieces {
        io::write_pieces(&args.out.join("pieces.csv"), &alpha)?;
        manifest.outputs.push("pieces.csv".into());
    }
    manifest.results = serde_json::json!({
        "breakpoints": alpha.breakpoints(),
        "held_assets": alpha.held_assets().iter().map(|i| i + 1).collect::<Vec<_>>(),
    });
    manifest.write(&args.out)
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    if !(args.terminal > 0.0) {
        bail!("--terminal must be positive");
    }
    prepare_out(&args.out)?;
    let mut manifest = RunManifest::new("solve", serde_json::to_value(args)?);
    let clock = Instant::now();
    let alpha = match (&args.model, &args.alpha_csv) {
        (_, Some(path)) => {
            manifest.add_input(path)?;
            io::read_pieces(path)?
        }
        (Some(path), None) => {
            let model = load_model(path, &mut manifest)?;
            let mut phi_max = args.terminal;
            for bc in [args.left_bc, args.right_bc] {
                if let BcArg::Dirichlet(v) = bc {
                    phi_max = phi_max.max(v);
                }
            }
            PiecewiseAlpha::build(&model, args.phi_min, phi_max, args.constraints)?
        }
        (None, None) => bail!("one of --model or --alpha-csv is required"),
    };
    manifest.time("alpha", clock.elapsed().as_secs_f64());

    let (n, m) = grid_size(args.x_hi - args.x_lo, args.horizon, args.h, args.k_rule.k(args.h))?;
    let terminal = args.terminal;
    let problem = PdeProblem {
        epsilon: args.epsilon,
        r: args.r,
        x_lo: args.x_lo,
        x_hi: args.x_hi,
        n_interior: n,
        m_steps: m,
        horizon: args.horizon,
        terminal: Arc::new(move |_| terminal),
        left_bc: args.left_bc.condition(),
        right_bc: args.right_bc.condition(),
        alpha: Arc::new(alpha),
    };
    let clock = Instant::now();
    let field = solve_pde(&problem, scheme(args.scheme, args.tol, args.max_iters))?;
    manifest.time("solve", clock.elapsed().as_secs_f64());
    write_phi(&args.out.join("phi.csv"), &field, args.stride)?;
    manifest.outputs.push("phi.csv".into());
    summarize_warnings(&field, &mut manifest);
    manifest.results = serde_json::json!({
        "n_interior": n,
        "m_steps": m,
        "h": problem.h(),
        "k": problem.k(),
        "phi_min": field.min_interior(),
        "phi_max": field.max_interior(),
        "max_iterations": field.iterations.iter().max(),
    });
    manifest.write(&args.out)
}

/// `alpha` on a range comfortably containing `[v-, v+]`.
fn wave_alpha(model: &MarketModel, v_minus: f64, v_plus: f64) -> Result<PiecewiseAlpha> {
    if !(v_minus > 0.0 && v_minus < v_plus) {
        bail!("need 0 < --v-minus < --v-plus");
    }
    Ok(PiecewiseAlpha::build(model, 0.5 * v_minus, 2.0 * v_plus, ConstraintSet::Simplex)?)
}

fn cmd_wave(args: &WaveArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let mut manifest = RunManifest::new("wave", serde_json::to_value(args)?);
    let model = load_model(&args.model, &mut manifest)?;
    let clock = Instant::now();
    let alpha = Arc::new(wave_alpha(&model, args.v_minus, args.v_plus)?);
    let bench = WaveBenchmark::new(alpha, args.v_minus, args.v_plus, args.x_lo, args.x_hi, args.horizon, args.rel_tol)?;
    manifest.time("profile", clock.elapsed().as_secs_f64());
    let prof = &bench.profile;
    let mut out = CsvOut::create(
        &args.out.join("wave.csv"),
        &["xi".into(), "z".into(), "v".into(), "dv_dxi".into()],
    )?;
    for k in 0..prof.xi.len() {
        out.row([num(prof.xi[k]), num(prof.z[k]), num(prof.v[k]), num(prof.slope[k])].iter().map(String::as_str))?;
    }
    out.finish()?;
    manifest.outputs.push("wave.csv".into());
    let p = bench.params;
    println!("c = {}", num(p.c));
    println!("K0 = {}", num(p.k0));
    manifest.results = serde_json::json!({
        "c": p.c, "k0": p.k0, "z_minus": p.z_minus, "z_plus": p.z_plus, "samples": prof.xi.len(),
    });
    manifest.write(&args.out)
}

fn cmd_eoc(args: &EocArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let mut manifest = RunManifest::new("eoc", serde_json::to_value(args)?);
    let model = load_model(&args.model, &mut manifest)?;
    let clock = Instant::now();
    let alpha = Arc::new(wave_alpha(&model, args.v_minus, args.v_plus)?);
    let study = EocStudy::new(
        alpha,
        args.v_minus,
        args.v_plus,
        args.x_lo,
        args.x_hi,
        args.horizon,
        args.k_rule,
        scheme(args.scheme, args.tol, args.max_iters),
        args.rel_tol,
    )?;
    let reports = study.run(&args.levels)?;
    manifest.time("study", clock.elapsed().as_secs_f64());

    let head = ["h", "k", "err_linf_l2", "eoc_linf_l2", "err_l2_w12", "eoc_l2_w12", "max_iterations"];
    let opt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                num(r.h),
                num(r.k),
                num(r.err_linf_l2),
                opt(r.eoc_linf),
                num(r.err_l2_w12),
                opt(r.eoc_l2),
                r.max_iterations.to_string(),
            ]
        })
        .collect();
    let mut out = CsvOut::create(&args.out.join("eoc.csv"), &head.map(String::from))?;
    for r in &rows {
        out.row(r.iter().map(String::as_str))?;
    }
    out.finish()?;
    let table = aligned(&head, &rows);
    std::fs::write(args.out.join("eoc.txt"), &table)?;
    print!("{table}");
    manifest.outputs.extend(["eoc.csv".into(), "eoc.txt".into()]);
    manifest.results = serde_json::to_value(&reports)?;
    manifest.write(&args.out)
}

fn cmd_portfolio(args: &PortfolioArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let mut manifest = RunManifest::new("portfolio", serde_json::to_value(args)?);
    let clock = Instant::now();
    let (model, tickers) = match (&args.prices, &args.model) {
        (Some(path), _) => {
            manifest.add_input(path)?;
            let history = PriceHistory::from_path(path)?;
            let model = hjb_core::estimate_moments(&history, args.periods_per_year)?;
            (model, Some(history.tickers))
        }
        (None, Some(path)) => (load_model(path, &mut manifest)?, None),
        (None, None) => bail!("one of --prices or --model is required"),
    };
    manifest.time("estimate", clock.elapsed().as_secs_f64());

    let config = PipelineConfig {
        a: args.a,
        epsilon: args.epsilon,
        r: args.r,
        horizon: args.horizon,
        y_lo: args.y_lo,
        y_hi: args.y_hi,
        h: args.h,
        k_rule: args.k_rule,
        robin_d: args.robin_d,
        constraints: args.constraints,
        fully_implicit: matches!(args.scheme, SchemeArg::Implicit),
        tol: args.tol,
        max_iters: args.max_iters,
        ..PipelineConfig::default()
    };
    let result = hjb_core::run_pipeline(&model, &config)?;
    for (stage, secs) in &result.timings {
        manifest.time(stage, *secs);
    }

    let clock = Instant::now();
    write_phi(&args.out.join("phi.csv"), &result.field, args.stride)?;
    let s = &result.strategy;
    let n = model.n();
    let mut head = header(&["t", "x", "y"], "theta", n);
    head.push("active_set".into());
    let mut out = CsvOut::create(&args.out.join("strategy.csv"), &head)?;
    for j in layers(s.t.len(), args.stride) {
        let t = num(s.t[j]);
        for i in 0..s.x.len() {
            let mut cells = vec![t.clone(), num(s.x[i]), num(s.y[i])];
            cells.extend(s.weights[j][i].iter().map(|&w| num(w)));
            cells.push(index_list(&s.active_sets[j][i]));
            out.row(cells.iter().map(String::as_str))?;
        }
    }
    out.finish()?;
    write_alpha_table(
        &args.out.join("alpha.csv"),
        &result.alpha,
        result.alpha.phi_min(),
        result.alpha.phi_max(),
        1000,
    )?;
    manifest.time("write", clock.elapsed().as_secs_f64());
    manifest.outputs.extend(["phi.csv".into(), "strategy.csv".into(), "alpha.csv".into()]);
    summarize_warnings(&result.field, &mut manifest);
    manifest.results = serde_json::json!({
        "pipeline": config,
        "tickers": tickers,
        "phi_min": result.field.min_interior(),
        "phi_max": result.field.max_interior(),
        "max_iterations": result.field.iterations.iter().max(),
        "breakpoints": result.alpha.breakpoints(),
    });
    manifest.write(&args.out)
}

/// Collapses a possibly multi-line message to one line.
fn one_line(msg: &str) -> String {
    let msg = msg.split("\n\nUsage:").next().unwrap_or(msg);
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let text = one_line(&text);
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            eprintln!("error: {text}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::Alpha(a) => cmd_alpha(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Wave(a) => cmd_wave(a),
        Command::Eoc(a) => cmd_eoc(a),
        Command::Portfolio(a) => cmd_portfolio(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // core errors already print their sources; skip repeats in the chain
            let mut msg = String::new();
            for cause in err.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {}", one_line(&msg));
            let numerical = err
                .chain()
                .filter_map(|e| e.downcast_ref::<hjb_core::Error>())
                .any(|e| e.is_numerical());
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
