//! Command-line front end. `run_cli` is the whole program minus process
//! exit, so it can be driven from tests.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, Approach, BenchError, BenchPlan};
use crate::engine::{should_stop, Engine, EngineError, GenerationReport, Objective, RunConfig, RunObserver, RunState, TargetSpec};
use crate::eval::{EngineKind, Evaluator};
use crate::expr::parse;
use crate::persistence::{self, export_image, format_fitness, PersistError, RunFolder, RunLogger};
use crate::primitives::PrimitiveSet;
use crate::tensor::{rmse, DomainSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vecgp", version, about = "Vectorized genetic programming over tensor domains")]
pub struct Cli {
    /// Worker threads for the evaluation kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Start an evolutionary run in a new run folder.
    Run(RunArgs),
    /// Continue a run from its folder's state file.
    Resume(ResumeArgs),
    /// Time raw population evaluation across domain sizes.
    BenchEval(BenchArgs),
    /// Time full evolutionary runs across domain sizes.
    BenchEvolve(BenchArgs),
    /// Evaluate one expression and print its RMSE against a target.
    Eval(EvalArgs),
    /// Render an expression's phenotype as a PNG.
    Render(RenderArgs),
    /// Validate a population file line by line.
    Check(CheckArgs),
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Config file (`key: value` lines); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Population size.
    #[arg(long)]
    pub pop: Option<usize>,
    /// Number of generations after generation 0.
    #[arg(long)]
    pub gens: Option<usize>,
    /// Maximum tree depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Minimum depth for initialization.
    #[arg(long)]
    pub min_depth: Option<usize>,
    /// Resolution such as 64x64 or 128x128x3.
    #[arg(long)]
    pub domain: Option<String>,
    /// `pagie`, a tensor file, or an expression.
    #[arg(long)]
    pub target: Option<String>,
    /// vectorized or iterative.
    #[arg(long)]
    pub engine: Option<EngineKind>,
    /// Subtree cache size in bytes (0 disables the cache).
    #[arg(long)]
    pub cache_budget: Option<usize>,
    #[arg(long)]
    pub acceptable_error: Option<f64>,
    /// min or max.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Comma-separated operator names.
    #[arg(long)]
    pub functions: Option<String>,
    /// Population file with one expression per line.
    #[arg(long)]
    pub initial_pop: Option<PathBuf>,
    #[arg(long)]
    pub elitism: Option<usize>,
    #[arg(long)]
    pub tournament: Option<usize>,
    #[arg(long)]
    pub crossover: Option<f64>,
    #[arg(long)]
    pub mutation: Option<f64>,
    /// Directory that receives the run folder.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Also render the best phenotype of every generation.
    #[arg(long)]
    pub images: bool,
}

#[derive(Args, Debug)]
pub struct ResumeArgs {
    /// Run folder containing state.txt.
    pub path: PathBuf,
    /// Raise the generation limit before continuing.
    #[arg(long)]
    pub gens: Option<usize>,
    #[arg(long)]
    pub images: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated square sides, e.g. 64,128,256.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Use the full ladder 64..2048.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Comma-separated subset of iterative, vectorized-nocache, vectorized-cache.
    #[arg(long, value_delimiter = ',')]
    pub approaches: Option<Vec<Approach>>,
    #[arg(long, default_value_t = 50)]
    pub pop: usize,
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    /// Generations per run (bench-evolve only).
    #[arg(long, default_value_t = 50)]
    pub gens: usize,
    /// Seconds per cell before it is marked DNF; 0 disables the limit.
    #[arg(long, default_value_t = 300.0)]
    pub time_budget: f64,
    #[arg(long)]
    pub cache_budget: Option<usize>,
    #[arg(long)]
    pub functions: Option<String>,
    /// Free-text notes recorded with the results.
    #[arg(long, default_value = "")]
    pub notes: String,
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub expr: String,
    #[arg(long, default_value = "64x64")]
    pub domain: String,
    #[arg(long, default_value = "pagie")]
    pub target: String,
    #[arg(long, default_value = "vectorized")]
    pub engine: EngineKind,
    /// Write the phenotype as a PNG.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Write the phenotype as a tensor text file.
    #[arg(long)]
    pub tensor: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    pub expr: String,
    /// Resolution such as 256x256 or 256x256x3.
    #[arg(long, default_value = "256x256")]
    pub domain: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    pub file: PathBuf,
    /// Maximum allowed depth.
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    /// Domain whose rank fixes the available variables.
    #[arg(long, default_value = "64x64")]
    pub domain: String,
    #[arg(long)]
    pub functions: Option<String>,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }
}

impl From<PersistError> for Failure {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Io { .. } | PersistError::Image(_) | PersistError::Locked(_) => Failure::io(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Io { .. } | EngineError::Observer(_) => Failure::io(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Io { .. } => Failure::io(e.to_string()),
            BenchError::Engine(e) => e.into(),
            _ => Failure::usage(e.to_string()),
        }
    }
}

type Out<'a> = &'a mut (dyn Write + Send);

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: Out, err: Out) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            let _ = writeln!(err, "error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: thread pool: {e}");
            return EXIT_IO;
        }
    };
    let result = pool.install(|| dispatch(cli.command, out, err));
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: Out, err: Out) -> Result<i32, Failure> {
    match cmd {
        Command::Run(a) => cmd_run(a, out),
        Command::Resume(a) => cmd_resume(a, out),
        Command::BenchEval(a) => cmd_bench(a, false, out),
        Command::BenchEvolve(a) => cmd_bench(a, true, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Check(a) => cmd_check(a, out, err),
    }
}

fn parse_domain(s: &str) -> Result<DomainSpec, Failure> {
    s.parse::<DomainSpec>().map_err(|e| Failure::usage(format!("--domain: {e}")))
}

fn split_functions(s: &str) -> Vec<String> {
    s.split(',').map(|f| f.trim().to_string()).filter(|f| !f.is_empty()).collect()
}

fn function_set(list: Option<&str>) -> Result<PrimitiveSet, Failure> {
    match list {
        None => Ok(PrimitiveSet::default()),
        Some(l) => PrimitiveSet::default()
            .restrict(&split_functions(l))
            .map_err(|e| Failure::usage(format!("--functions: {e}"))),
    }
}

/// Defaults, then the config file, then flags.
pub fn build_config(a: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => persistence::load_config(p, RunConfig::default())?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $slot:expr) => {
            if let Some(v) = $flag.clone() {
                $slot = v;
            }
        };
    }
    set!(a.seed, cfg.seed);
    set!(a.pop, cfg.pop_size);
    set!(a.gens, cfg.generations);
    set!(a.depth, cfg.max_depth);
    set!(a.min_depth, cfg.min_depth);
    set!(a.engine, cfg.engine);
    set!(a.cache_budget, cfg.cache_budget);
    set!(a.objective, cfg.objective);
    set!(a.elitism, cfg.elitism);
    set!(a.tournament, cfg.tournament_size);
    set!(a.crossover, cfg.crossover_rate);
    set!(a.mutation, cfg.mutation_rate);
    if let Some(e) = a.acceptable_error {
        cfg.acceptable_error = Some(e);
    }
    if let Some(d) = &a.domain {
        let res = parse_domain(d)?;
        cfg.domain = DomainSpec::new(res.resolution().to_vec(), cfg.domain.range_lo(), cfg.domain.range_hi())
            .map_err(|e| Failure::usage(format!("--domain: {e}")))?;
    }
    if let Some(t) = &a.target {
        cfg.target = TargetSpec::parse(t);
    }
    if let Some(f) = &a.functions {
        cfg.function_list = split_functions(f);
    }
    if let Some(p) = &a.initial_pop {
        cfg.initial_population = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Prints one line per generation.
struct Progress<'a> {
    out: Out<'a>,
}

impl RunObserver for Progress<'_> {
    fn on_generation(&mut self, _state: &RunState, r: &GenerationReport) -> Result<(), EngineError> {
        let _ = writeln!(
            self.out,
            "generation {:>4}  best {}  eval {:.3}s  cache hits {}",
            r.generation,
            format_fitness(r.best_fitness),
            r.stats.wall_time.as_secs_f64(),
            r.cumulative_cache_hits
        );
        Ok(())
    }
}

fn finish(state: &RunState, reason: crate::engine::StopReason, folder: &Path, out: Out) {
    let _ = writeln!(out, "stopped: {reason} at generation {}", state.generation);
    let _ = writeln!(out, "best: {}", state.best.tree);
    let _ = writeln!(out, "best fitness: {}", format_fitness(state.best_fitness()));
    let _ = writeln!(out, "run folder: {}", folder.display());
}

fn cmd_run(a: RunArgs, out: Out) -> Result<i32, Failure> {
    let cfg = build_config(&a)?;
    let mut engine = Engine::new(cfg.clone(), PrimitiveSet::default())?;
    let folder = RunFolder::create(&a.out, cfg.seed)?;
    folder.write_config(&cfg)?;
    let path = folder.path().to_path_buf();
    let _ = writeln!(out, "run folder: {}", path.display());
    let mut logger = RunLogger::new(folder);
    if a.images {
        logger = logger.with_images(&cfg.domain)?;
    }
    let (state, report) = engine.initialize()?;
    logger.on_generation(&state, &report)?;
    let mut progress = Progress { out: &mut *out };
    progress.on_generation(&state, &report)?;
    let (state, reason) = engine.run(state, &mut [&mut logger, &mut progress])?;
    finish(&state, reason, &path, out);
    Ok(EXIT_OK)
}

fn cmd_resume(a: ResumeArgs, out: Out) -> Result<i32, Failure> {
    if !a.path.join("state.txt").is_file() {
        return Err(Failure::usage(format!("{}: no state file", a.path.display())));
    }
    let folder = RunFolder::open(&a.path)?;
    let mut state = persistence::load_state(&folder.state_path(), &PrimitiveSet::default())?;
    if let Some(g) = a.gens {
        state.config.generations = g;
        folder.write_config(&state.config)?;
    }
    if let Some(reason) = should_stop(&state) {
        let _ = writeln!(out, "run already finished ({reason}) at generation {}", state.generation);
        return Ok(EXIT_OK);
    }
    let mut engine = Engine::new(state.config.clone(), PrimitiveSet::default())?;
    let path = folder.path().to_path_buf();
    let mut logger = RunLogger::new(folder);
    if a.images {
        logger = logger.with_images(&state.config.domain)?;
    }
    let _ = writeln!(out, "resuming {} at generation {}", path.display(), state.generation);
    let mut progress = Progress { out: &mut *out };
    let (state, reason) = engine.run(state, &mut [&mut logger, &mut progress])?;
    finish(&state, reason, &path, out);
    Ok(EXIT_OK)
}

fn cmd_bench(a: BenchArgs, evolve: bool, out: Out) -> Result<i32, Failure> {
    let mut plan = if a.full { BenchPlan::full() } else { BenchPlan::default() };
    if let Some(s) = a.sizes {
        plan.sizes = s;
    }
    if let Some(ap) = a.approaches {
        plan.approaches = ap;
    }
    if let Some(c) = a.cache_budget {
        plan.cache_budget = c;
    }
    if let Some(f) = &a.functions {
        plan.function_list = split_functions(f);
    }
    plan.runs = a.runs;
    plan.pop_size = a.pop;
    plan.max_depth = a.depth;
    plan.generations = a.gens;
    plan.notes = a.notes;
    if !(a.time_budget >= 0.0) || !a.time_budget.is_finite() {
        return Err(Failure::usage("--time-budget must be a non-negative number of seconds"));
    }
    plan.time_budget = (a.time_budget > 0.0).then(|| Duration::from_secs_f64(a.time_budget));
    let result = if evolve { bench::bench_evolution(&plan, a.seed)? } else { bench::bench_tree_eval(&plan, a.seed)? };
    bench::write_all(&result, &a.out)?;
    let _ = bench::print_summary(&result, &mut *out);
    let _ = writeln!(out, "results written to {}", a.out.display());
    Ok(EXIT_OK)
}

fn parse_expr(text: &str, set: &PrimitiveSet, rank: usize) -> Result<crate::expr::Tree, Failure> {
    parse(text, set, rank).map_err(|e| Failure::usage(format!("cannot parse expression\n{}", e.render(text))))
}

fn cmd_eval(a: EvalArgs, out: Out) -> Result<i32, Failure> {
    let domain = parse_domain(&a.domain)?;
    let set = PrimitiveSet::default();
    let tree = parse_expr(&a.expr, &set, domain.rank())?;
    let evaluator = Evaluator::new(&domain).map_err(|e| Failure::usage(e.to_string()))?;
    let target = TargetSpec::parse(&a.target).build(&domain, &set)?;
    let (phenotype, stats) = evaluator.eval_with(&tree, a.engine, None).map_err(|e| Failure::usage(e.to_string()))?;
    let error = rmse(&phenotype, &target).map_err(|e| Failure::usage(e.to_string()))?;
    let _ = writeln!(out, "rmse: {}", format_fitness(error));
    let _ = writeln!(out, "seconds: {:.6}", stats.wall_time.as_secs_f64());
    if let Some(p) = &a.image {
        export_image(&phenotype, p)?;
    }
    if let Some(p) = &a.tensor {
        persistence::write_tensor(&phenotype, p)?;
    }
    Ok(EXIT_OK)
}

fn cmd_render(a: RenderArgs, out: Out) -> Result<i32, Failure> {
    let domain = parse_domain(&a.domain)?;
    let res = domain.resolution();
    if !(res.len() == 2 || (res.len() == 3 && res[2] == 3)) {
        return Err(Failure::usage(format!("cannot render domain {}: need WxH or WxHx3", a.domain)));
    }
    let set = PrimitiveSet::default();
    let tree = parse_expr(&a.expr, &set, domain.rank())?;
    let evaluator = Evaluator::new(&domain).map_err(|e| Failure::usage(e.to_string()))?;
    let (t, _) = evaluator.eval_vectorized(&tree, None).map_err(|e| Failure::usage(e.to_string()))?;
    export_image(&t, &a.out)?;
    let _ = writeln!(out, "wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn cmd_check(a: CheckArgs, out: Out, err: Out) -> Result<i32, Failure> {
    let domain = parse_domain(&a.domain)?;
    let set = function_set(a.functions.as_deref())?;
    let text = std::fs::read_to_string(&a.file).map_err(|e| Failure::io(format!("{}: {e}", a.file.display())))?;
    let mut checked = 0;
    let mut bad = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        checked += 1;
        let verdict = match parse(line, &set, domain.rank()) {
            Ok(t) if t.depth() > a.depth => Err(format!("depth {} exceeds {}", t.depth(), a.depth)),
            Ok(_) => Ok(()),
            Err(e) => Err(e.to_string()),
        };
        match verdict {
            Ok(()) => {
                let _ = writeln!(out, "line {}: ok", n + 1);
            }
            Err(m) => {
                bad += 1;
                let _ = writeln!(out, "line {}: error: {m}", n + 1);
            }
        }
    }
    if checked == 0 {
        let _ = writeln!(err, "warning: {} contains no expressions", a.file.display());
    }
    let _ = writeln!(out, "{checked} checked, {bad} invalid");
    Ok(if bad == 0 { EXIT_OK } else { EXIT_FINDINGS })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut full = vec!["vecgp"];
        full.extend_from_slice(args);
        let code = run_cli(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(call(&["run", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        let (code, _, help) = call(&["run", "--help"]);
        assert_eq!(code, EXIT_OK);
        for flag in ["--seed", "--pop", "--gens", "--depth", "--domain", "--target", "--engine", "--cache-budget", "--threads", "--out", "--acceptable-error", "--objective", "--functions", "--initial-pop"] {
            assert!(help.contains(flag), "missing {flag}");
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "seed: 5\npop_size: 30\n").unwrap();
        let a = RunArgs { config: Some(p), pop: Some(20), ..Default::default() };
        let cfg = build_config(&a).unwrap();
        assert_eq!((cfg.seed, cfg.pop_size, cfg.generations), (5, 20, 50));
    }

    #[test]
    fn invalid_config_names_field() {
        let (code, _, err) = call(&["run", "--pop", "1", "--elitism", "1"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("pop_size") || err.contains("elitism"), "{err}");
    }

    #[test]
    fn eval_reports_rmse_and_caret() {
        let (code, out, _) = call(&["eval", "x", "--domain", "16x16", "--target", "pagie"]);
        assert_eq!(code, EXIT_OK);
        let v: f64 = out.lines().next().unwrap().strip_prefix("rmse: ").unwrap().parse().unwrap();
        assert!(v > 0.0);
        let (code, _, err) = call(&["eval", "add(x"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("add(x\n") && err.contains('^'), "{err}");
    }

    #[test]
    fn render_rejects_bad_rank() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let p = p.to_str().unwrap();
        assert_eq!(call(&["render", "x", "--domain", "8x8x2", "--out", p]).0, EXIT_USAGE);
        assert_eq!(call(&["render", "x", "--domain", "8x8x3", "--out", p]).0, EXIT_OK);
    }

    #[test]
    fn check_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pop.txt");
        std::fs::write(&p, "add(x, y)\n# note\nsin(x)\n").unwrap();
        assert_eq!(call(&["check", p.to_str().unwrap()]).0, EXIT_OK);
        std::fs::write(&p, "add(x, y)\nadd(x\n").unwrap();
        let (code, out, _) = call(&["check", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_FINDINGS);
        assert!(out.contains("line 2: error"));
        std::fs::write(&p, "").unwrap();
        let (code, _, err) = call(&["check", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
        assert!(err.contains("warning"));
        assert_eq!(call(&["check", "/nonexistent/pop.txt"]).0, EXIT_IO);
    }
}
