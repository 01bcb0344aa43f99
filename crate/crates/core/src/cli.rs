//! Command-line front end: synthetic data, evaluations, trace experiments,
//! fitting, kriging and timing sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{PointSet, QuadTree};
use crate::io::{emit, format_observations, format_table, parse_list, read_observations, read_points, Report};
use crate::kernel::{Anisotropy, Family, KernelModel, Nugget, Which};
use crate::likelihood::{evaluate, krige, param_rng, sample_observations, EvalOptions, LikelihoodReport, PredictMode};
use crate::optimize::{fit, FitConfig, ToleranceSchedule};
use crate::oracle::{dense_trace, DENSE_LIMIT};
use crate::peel::{build_symmetrized_product, hutchinson_trace, peel_trace, PeelOptions};
use crate::rskelf::{FactorOptions, ProxyAnnulus, SkelFactorization};

/// Grid extent: synthetic points fill `[0, EXTENT]²`.
pub const EXTENT: f64 = 100.0;

#[derive(Parser, Debug)]
#[command(name = "skelgp", version, about = "Fast Gaussian-process likelihoods on scattered 2D data")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a Gaussian process on a grid or at given points.
    Gen(GenArgs),
    /// Log-likelihood, gradient and diagnostics at one θ.
    Eval(EvalArgs),
    /// Peeling vs Hutchinson trace estimates.
    TraceBench(TraceBenchArgs),
    /// Maximum-likelihood fit.
    Fit(FitArgs),
    /// Conditional mean or draw at test points.
    Krige(KrigeArgs),
    /// Evaluation time across grid sizes.
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelName {
    Rq,
    Matern12,
    Matern32,
    Matern52,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "matern32")]
    pub kernel: KernelName,
    /// Rational-quadratic shape α.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Lengths (one for isotropic, two for per-axis), then σ_N² if the
    /// nugget is free.
    #[arg(long, default_value = "10,7")]
    pub theta: String,
    /// Nugget value, or `free` to estimate it.
    #[arg(long, default_value = "1e-4")]
    pub nugget: String,
    /// Lower bound for a free nugget.
    #[arg(long, default_value_t = crate::kernel::DEFAULT_NUGGET_LOWER)]
    pub nugget_lower: f64,
}

impl ModelArgs {
    pub fn build(&self) -> Result<KernelModel> {
        let family = match self.kernel {
            KernelName::Rq => Family::RationalQuadratic { alpha: self.alpha },
            KernelName::Matern12 => Family::Matern12,
            KernelName::Matern32 => Family::Matern32,
            KernelName::Matern52 => Family::Matern52,
        };
        let theta = parse_list(&self.theta)?;
        let nugget = if self.nugget.eq_ignore_ascii_case("free") {
            Nugget::Free { lower: self.nugget_lower }
        } else {
            Nugget::Fixed(
                self.nugget
                    .parse()
                    .map_err(|_| Error::input(format!("--nugget expects a number or `free`, got {:?}", self.nugget)))?,
            )
        };
        let lengths = theta.len() - usize::from(matches!(nugget, Nugget::Free { .. }));
        let anisotropy = match lengths {
            1 => Anisotropy::Isotropic,
            2 => Anisotropy::PerAxis,
            k => return Err(Error::input(format!("--theta needs 1 or 2 lengths (plus σ_N² for a free nugget), got {k}"))),
        };
        KernelModel::new(family, anisotropy, nugget, theta)
    }

    fn describe(&self, model: &KernelModel) -> Vec<String> {
        vec![
            format!("kernel = {}", model.family().name()),
            format!("theta = {}", join(model.theta())),
            format!("nugget = {}", self.nugget),
        ]
    }
}

#[derive(Args, Debug, Clone)]
pub struct AccuracyArgs {
    #[arg(long, default_value_t = 1e-9)]
    pub eps_fact: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_peel: f64,
    /// Leaf occupancy of the quadtree.
    #[arg(long, default_value_t = 64)]
    pub nocc: usize,
    /// Proxy points per box.
    #[arg(long, default_value_t = 256)]
    pub nprox: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl AccuracyArgs {
    pub fn options(&self, profile: bool) -> Result<EvalOptions> {
        if !(self.eps_fact > 0.0 && self.eps_peel > 0.0) {
            return Err(Error::input("tolerances must be positive"));
        }
        if self.nocc == 0 {
            return Err(Error::input("--nocc must be positive"));
        }
        let opts = EvalOptions {
            fact: FactorOptions {
                tol: self.eps_fact,
                proxy: ProxyAnnulus::with_count(self.nprox)?,
            },
            peel: PeelOptions {
                tol: self.eps_peel,
                ..PeelOptions::default()
            },
            n_occ: self.nocc,
            seed: self.seed,
            profile,
            params: None,
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub acc: AccuracyArgs,
    /// Grid side; points fill [0, 100]². Ignored with --points.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Sample at these locations instead of a grid.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub acc: AccuracyArgs,
    #[arg(long)]
    pub obs: PathBuf,
    /// Profile out a constant mean and variance level.
    #[arg(long)]
    pub profile: bool,
    /// Gradient components to compute (comma-separated indices, or `none`).
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TraceBenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub acc: AccuracyArgs,
    /// Grid sides for the peeling rows.
    #[arg(long, default_value = "32,64")]
    pub sizes: String,
    /// Hutchinson probe counts.
    #[arg(long, default_value = "16,64,256,1024")]
    pub qs: String,
    /// Grid side for the Hutchinson rows (defaults to the first size).
    #[arg(long)]
    pub hutch_side: Option<usize>,
    /// Independent Hutchinson repetitions (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// Parameter whose trace term is estimated.
    #[arg(long, default_value_t = 0)]
    pub param: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Starting point θ₀ is --theta.
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub acc: AccuracyArgs,
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub profile: bool,
    #[arg(long)]
    pub lower: Option<String>,
    #[arg(long)]
    pub upper: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Relative reduction of the projected-gradient ∞-norm.
    #[arg(long, default_value_t = 1e-5)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub step_tol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub obj_tol: f64,
    /// Largest factor by which one step may change a parameter.
    #[arg(long, default_value_t = 4.0)]
    pub max_ratio: f64,
    /// Start 1000× looser and tighten by this factor per iteration.
    #[arg(long)]
    pub tighten: Option<f64>,
    /// Per-iteration CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeName {
    Mean,
    Sample,
}

#[derive(Args, Debug)]
pub struct KrigeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub acc: AccuracyArgs,
    /// Training observations.
    #[arg(long)]
    pub obs: PathBuf,
    /// Test locations.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub mode: ModeName,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub acc: AccuracyArgs,
    /// Grid sides.
    #[arg(long, default_value = "32,64,128")]
    pub sizes: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::input(format!("expected positive integers, got {s:?}")))
        })
        .collect()
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::input(format!("input file not found: {}", path.display())))
    }
}

impl Command {
    /// Checks that need no computation: tolerance ordering, model, inputs.
    pub fn validate(&self) -> Result<()> {
        let (model, acc) = self.common();
        model.build()?;
        acc.options(false)?;
        match self {
            Command::Gen(a) => a.points.as_deref().map_or(Ok(()), require_file),
            Command::Eval(a) => require_file(&a.obs),
            Command::Fit(a) => require_file(&a.obs),
            Command::Krige(a) => require_file(&a.obs).and_then(|_| require_file(&a.points)),
            Command::TraceBench(a) => parse_sizes(&a.sizes).and(parse_sizes(&a.qs)).map(|_| ()),
            Command::Scaling(a) => parse_sizes(&a.sizes).map(|_| ()),
        }
    }

    fn common(&self) -> (&ModelArgs, &AccuracyArgs) {
        match self {
            Command::Gen(a) => (&a.model, &a.acc),
            Command::Eval(a) => (&a.model, &a.acc),
            Command::TraceBench(a) => (&a.model, &a.acc),
            Command::Fit(a) => (&a.model, &a.acc),
            Command::Krige(a) => (&a.model, &a.acc),
            Command::Scaling(a) => (&a.model, &a.acc),
        }
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    cli.command.validate()?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| Error::input(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::TraceBench(a) => cmd_trace_bench(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Krige(a) => cmd_krige(a),
        Command::Scaling(a) => cmd_scaling(a),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let model = a.model.build()?;
    let opts = a.acc.options(false)?;
    let points = match &a.points {
        Some(p) => read_points(p)?,
        None => PointSet::grid(a.grid, EXTENT)?,
    };
    let obs = sample_observations(points, &model, &opts)?;
    let mut comments = vec![format!("seed = {}", a.acc.seed)];
    comments.extend(a.model.describe(&model));
    emit(a.out.as_deref(), &format_observations(&obs, &comments))
}

/// Every field of a likelihood report as `key = value` lines.
pub fn likelihood_report(rep: &LikelihoodReport, model: &KernelModel, opts: &EvalOptions) -> Report {
    let mut r = Report::new();
    let d = &rep.diagnostics;
    r.push("n", d.n)
        .push("kernel", model.family().name())
        .push_list("theta", model.theta())
        .push("profile", opts.profile)
        .push("loglik", rep.loglik)
        .push_list("params", &rep.params)
        .push_list("gradient", &rep.gradient)
        .push("grad_inf", rep.grad_inf_norm())
        .push("quad_form", rep.quad_form)
        .push("logdet", rep.logdet);
    let terms = &rep.terms;
    r.push_list("trace", &terms.iter().map(|t| t.trace).collect::<Vec<_>>())
        .push_list("quad", &terms.iter().map(|t| t.quad).collect::<Vec<_>>())
        .push_list("abs_diag_sum", &terms.iter().map(|t| t.abs_diag_sum).collect::<Vec<_>>())
        .push_list("matvecs", &terms.iter().map(|t| t.matvecs).collect::<Vec<_>>())
        .push_list("max_rank", &terms.iter().map(|t| t.max_rank).collect::<Vec<_>>())
        .push_list("capped", &terms.iter().map(|t| t.capped).collect::<Vec<_>>());
    if let Some(p) = &rep.profile {
        r.push("mu", p.mu).push("sigma2", p.sigma2).push("q", p.q);
    }
    r.push("eps_fact", d.eps_fact)
        .push("eps_peel", d.eps_peel)
        .push("nocc", opts.n_occ)
        .push("nprox", opts.fact.proxy.n_prox())
        .push("seed", opts.seed)
        .push("tree_depth", d.tree_depth)
        .push("top_size", d.top_size)
        .push("max_skeleton", d.max_skeleton)
        .push("indefinite_blocks", d.indefinite_blocks)
        .push("t_factor", d.t_factor)
        .push("t_peel", d.t_peel)
        .push("t_total", d.t_total);
    r
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = a.model.build()?;
    let mut opts = a.acc.options(a.profile)?;
    opts.params = match a.params.as_deref() {
        None => None,
        Some("none") => Some(vec![]),
        Some(s) => Some(parse_sizes_or_zero(s)?),
    };
    let obs = read_observations(&a.obs)?;
    let rep = evaluate(&obs, &model, &opts)?;
    emit(a.out.as_deref(), &likelihood_report(&rep, &model, &opts).render())
}

fn parse_sizes_or_zero(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::input(format!("bad index list {s:?}"))))
        .collect()
}

fn cmd_trace_bench(a: &TraceBenchArgs) -> Result<()> {
    let model = a.model.build()?;
    let opts = a.acc.options(false)?;
    if a.param >= model.p() {
        return Err(Error::input(format!("--param {} out of range 0..{}", a.param, model.p())));
    }
    let sizes = parse_sizes(&a.sizes)?;
    let qs = parse_sizes(&a.qs)?;
    let hutch_side = a.hutch_side.unwrap_or(sizes[0]);
    let mut all_sides = sizes.clone();
    if !all_sides.contains(&hutch_side) {
        all_sides.push(hutch_side);
    }
    let mut rows = Vec::new();
    for &side in &all_sides {
        let points = PointSet::grid(side, EXTENT)?;
        let n = points.len();
        let tree = QuadTree::build(&points, opts.n_occ)?;
        let f = SkelFactorization::factor(&model, &points, &tree, Which::Sigma, &opts.fact)?;
        let fi = SkelFactorization::factor(&model, &points, &tree, Which::Deriv(a.param), &opts.fact)?;
        let op = build_symmetrized_product(&f, &fi)?;
        let exact = if n <= DENSE_LIMIT {
            Some(dense_trace(&model, &points, a.param)?)
        } else {
            None
        };
        let err = |est: f64| exact.map_or(String::new(), |t| ((est - t) / t).abs().to_string());
        if sizes.contains(&side) {
            let t0 = Instant::now();
            let peel = peel_trace(&op, &tree, &opts.peel, &mut param_rng(opts.seed, a.param))?;
            let secs = t0.elapsed().as_secs_f64();
            rows.push(vec![
                "peel".into(),
                n.to_string(),
                String::new(),
                opts.seed.to_string(),
                peel.matvecs.to_string(),
                peel.trace.to_string(),
                err(peel.trace),
                secs.to_string(),
            ]);
        }
        if side == hutch_side {
            for r in 0..a.repeats {
                let seed = opts.seed + r;
                for &q in &qs {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(q as u64);
                    let t0 = Instant::now();
                    let h = hutchinson_trace(&op, q, &mut rng)?;
                    let secs = t0.elapsed().as_secs_f64();
                    rows.push(vec![
                        "hutchinson".into(),
                        n.to_string(),
                        q.to_string(),
                        seed.to_string(),
                        h.matvecs.to_string(),
                        h.estimate.to_string(),
                        err(h.estimate),
                        secs.to_string(),
                    ]);
                }
            }
        }
    }
    let mut comments = a.model.describe(&model);
    comments.push(format!("param = {}", a.param));
    comments.push(format!("eps_fact = {}, eps_peel = {}", opts.fact.tol, opts.peel.tol));
    let header = ["method", "n", "q", "seed", "matvecs", "estimate", "error", "seconds"];
    emit(a.out.as_deref(), &format_table(&comments, &header, &rows))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let model = a.model.build()?;
    let opts = a.acc.options(a.profile)?;
    let obs = read_observations(&a.obs)?;
    let mut cfg = FitConfig::for_model(&model, model.theta().to_vec());
    if let Some(l) = &a.lower {
        cfg.lower = parse_list(l)?;
    }
    if let Some(u) = &a.upper {
        cfg.upper = parse_list(u)?;
    }
    cfg.max_iter = a.max_iter;
    cfg.grad_tol = a.grad_tol;
    cfg.step_tol = a.step_tol;
    cfg.obj_tol = a.obj_tol;
    cfg.max_ratio = a.max_ratio;
    if let Some(factor) = a.tighten {
        cfg.schedule = ToleranceSchedule::Tightening {
            fact: opts.fact.tol * 1e3,
            peel: opts.peel.tol * 1e3,
            factor,
        };
    }
    let start = Instant::now();
    let fitted = fit(&obs, &model, &opts, &cfg)?;
    let out = &fitted.outcome;
    let mut r = Report::new();
    r.push("n", obs.len())
        .push("kernel", model.family().name())
        .push("profile", a.profile)
        .push_list("theta0", &cfg.theta0)
        .push_list("theta_hat", &out.theta)
        .push("objective", out.objective)
        .push_list("gradient", &out.gradient)
        .push("grad_inf_initial", out.trace.initial_grad())
        .push("grad_inf_final", out.trace.final_grad())
        .push("grad_reduction", out.trace.grad_reduction())
        .push("iterations", out.trace.iterations())
        .push("evaluations", out.trace.evaluations)
        .push("gradients", out.trace.gradients)
        .push("termination", &out.trace.termination);
    if let Some(p) = &fitted.profile {
        r.push("mu", p.mu).push("sigma2", p.sigma2);
    }
    r.push("seed", opts.seed).push("t_total", start.elapsed().as_secs_f64());
    if let Some(path) = &a.trace_out {
        let p = model.p();
        let mut header: Vec<String> = vec!["iter".into()];
        header.extend((0..p).map(|i| format!("theta{i}")));
        header.extend(["objective", "grad_inf", "step", "seconds"].map(String::from));
        let rows: Vec<Vec<String>> = out
            .trace
            .records
            .iter()
            .map(|rec| {
                let mut row = vec![rec.iter.to_string()];
                row.extend(rec.theta.iter().map(f64::to_string));
                row.extend([rec.objective, rec.grad_inf, rec.step, rec.seconds].map(|v| v.to_string()));
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let comments = vec![format!("termination = {}", out.trace.termination)];
        emit(Some(path), &format_table(&comments, &header, &rows))?;
    }
    emit(a.out.as_deref(), &r.render())
}

fn cmd_krige(a: &KrigeArgs) -> Result<()> {
    let model = a.model.build()?;
    let opts = a.acc.options(false)?;
    let train = read_observations(&a.obs)?;
    let test = read_points(&a.points)?;
    let mode = match a.mode {
        ModeName::Mean => PredictMode::Mean,
        ModeName::Sample => PredictMode::Sample,
    };
    let values = krige(&train, &test, &model, &opts, mode)?;
    let rows: Vec<Vec<String>> = test
        .coords()
        .iter()
        .zip(&values)
        .map(|(p, v)| vec![p[0].to_string(), p[1].to_string(), v.to_string()])
        .collect();
    let mut comments = vec![format!("mode = {:?}", a.mode).to_lowercase(), format!("seed = {}", a.acc.seed)];
    comments.extend(a.model.describe(&model));
    emit(a.out.as_deref(), &format_table(&comments, &["x", "y", "value"], &rows))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn cmd_scaling(a: &ScalingArgs) -> Result<()> {
    let model = a.model.build()?;
    let opts = a.acc.options(false)?;
    let sizes = parse_sizes(&a.sizes)?;
    let mut rows = Vec::new();
    let (mut ns, mut totals) = (Vec::new(), Vec::new());
    for side in sizes {
        let obs = sample_observations(PointSet::grid(side, EXTENT)?, &model, &opts)?;
        let rep = evaluate(&obs, &model, &opts)?;
        let d = &rep.diagnostics;
        ns.push(d.n as f64);
        totals.push(d.t_total);
        rows.push(vec![
            d.n.to_string(),
            d.t_factor.to_string(),
            d.t_peel.to_string(),
            d.t_total.to_string(),
            rep.loglik.to_string(),
        ]);
    }
    let mut text = format_table(&a.model.describe(&model), &["n", "t_factor", "t_peel", "t_total", "loglik"], &rows);
    let summary = if ns.len() >= 2 {
        format!("slope_total = {}", loglog_slope(&ns, &totals))
    } else {
        "slope_total = nan".to_string()
    };
    text.push_str(&format!("# {summary}\n"));
    if a.out.is_some() {
        println!("{summary}");
    }
    emit(a.out.as_deref(), &text)
}
