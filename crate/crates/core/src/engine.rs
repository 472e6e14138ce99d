//! The generational loop: initialization, tournament selection, subtree
//! crossover and mutation, elitism, and the stop criteria.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{EngineKind, EvalCache, EvalError, EvalStats, Evaluator, DEFAULT_CACHE_BUDGET, DEFAULT_CACHE_MIN_NODES};
use crate::expr::{parse, Generator, Individual, Method, ParseError, Tree};
use crate::primitives::{PrimitiveError, PrimitiveSet};
use crate::tensor::{DomainSpec, Tensor, TensorError};

/// Function set used when none is configured: arithmetic with protected
/// division, half-turn trigonometry, exponential and protected logarithm.
pub const DEFAULT_FUNCTIONS: [&str; 8] = ["add", "sub", "mult", "div", "sin", "cos", "exp", "log"];

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("initial population line {line}: {source}")]
    PopulationParse { line: usize, source: ParseError },
    #[error("initial population line {line}: depth {depth} exceeds maximum {max}")]
    PopulationDepth { line: usize, depth: usize, max: usize },
    #[error("target: {0}")]
    Target(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("observer: {0}")]
    Observer(String),
}

impl EngineError {
    fn config(field: &'static str, message: impl Into<String>) -> Self {
        EngineError::Config { field, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Minimize,
    Maximize,
}

impl Objective {
    /// Sort key where smaller is better. Non-finite fitness is always worst.
    pub fn key(self, fitness: f64) -> f64 {
        if !fitness.is_finite() {
            return f64::INFINITY;
        }
        match self {
            Objective::Minimize => fitness,
            Objective::Maximize => -fitness,
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        self.key(a) < self.key(b)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Minimize => "min",
            Objective::Maximize => "max",
        }
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" | "minimize" => Ok(Objective::Minimize),
            "max" | "maximize" => Ok(Objective::Maximize),
            other => Err(format!("unknown objective `{other}` (expected min or max)")),
        }
    }
}

/// What the phenotype is compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Pagie,
    /// A prefix expression evaluated over the domain.
    Expression(String),
    /// A tensor file as written by `persistence::write_tensor`.
    File(PathBuf),
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Pagie => f.write_str("pagie"),
            TargetSpec::Expression(e) => write!(f, "expr:{e}"),
            TargetSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl TargetSpec {
    /// `pagie`, `file:<path>`, `expr:<expression>`, an existing file path,
    /// or an expression.
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        if s == "pagie" {
            TargetSpec::Pagie
        } else if let Some(e) = s.strip_prefix("expr:") {
            TargetSpec::Expression(e.trim().to_string())
        } else if let Some(p) = s.strip_prefix("file:") {
            TargetSpec::File(PathBuf::from(p))
        } else if !s.contains('(') && std::path::Path::new(s).is_file() {
            TargetSpec::File(PathBuf::from(s))
        } else {
            TargetSpec::Expression(s.to_string())
        }
    }

    /// Materializes the target tensor over `domain`.
    pub fn build(&self, domain: &DomainSpec, set: &PrimitiveSet) -> Result<Tensor, EngineError> {
        match self {
            TargetSpec::Pagie => crate::bench::pagie_target(domain).map_err(|e| EngineError::Target(e.to_string())),
            TargetSpec::Expression(text) => {
                let tree = parse(text, set, domain.rank()).map_err(|e| EngineError::Target(e.to_string()))?;
                Ok(Evaluator::new(domain)?.eval_vectorized(&tree, None)?.0)
            }
            TargetSpec::File(path) => {
                let t = crate::persistence::read_tensor(path).map_err(|e| EngineError::Target(e.to_string()))?;
                if t.shape() != domain.resolution() {
                    return Err(EngineError::Target(format!(
                        "tensor shape {:?} does not match domain {:?}",
                        t.shape(),
                        domain.resolution()
                    )));
                }
                Ok(t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub pop_size: usize,
    pub min_depth: usize,
    pub max_depth: usize,
    pub generations: usize,
    pub acceptable_error: Option<f64>,
    pub objective: Objective,
    pub domain: DomainSpec,
    pub target: TargetSpec,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub elitism: usize,
    pub engine: EngineKind,
    pub cache_budget: usize,
    pub cache_min_nodes: usize,
    /// Maximum depth of subtrees grown by mutation.
    pub mutation_depth: usize,
    pub function_list: Vec<String>,
    pub initial_population: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pop_size: 50,
            min_depth: 2,
            max_depth: 12,
            generations: 50,
            acceptable_error: None,
            objective: Objective::Minimize,
            domain: DomainSpec::square(64).expect("valid default domain"),
            target: TargetSpec::Pagie,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            tournament_size: 3,
            elitism: 1,
            engine: EngineKind::Vectorized,
            cache_budget: DEFAULT_CACHE_BUDGET,
            cache_min_nodes: DEFAULT_CACHE_MIN_NODES,
            mutation_depth: 4,
            function_list: DEFAULT_FUNCTIONS.iter().map(|s| s.to_string()).collect(),
            initial_population: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.pop_size < 2 {
            return Err(EngineError::config("pop_size", "must be at least 2"));
        }
        if self.elitism >= self.pop_size {
            return Err(EngineError::config("elitism", format!("{} must be below pop_size {}", self.elitism, self.pop_size)));
        }
        if self.tournament_size < 1 {
            return Err(EngineError::config("tournament_size", "must be at least 1"));
        }
        if self.min_depth > self.max_depth {
            return Err(EngineError::config("min_depth", format!("{} exceeds max_depth {}", self.min_depth, self.max_depth)));
        }
        for (field, rate) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(EngineError::config(field, format!("{rate} is outside [0, 1]")));
            }
        }
        if self.crossover_rate + self.mutation_rate > 1.0 + 1e-12 {
            return Err(EngineError::config("mutation_rate", "crossover_rate + mutation_rate exceeds 1"));
        }
        if self.function_list.is_empty() {
            return Err(EngineError::config("functions", "function list is empty"));
        }
        if let Some(e) = self.acceptable_error {
            if e.is_nan() {
                return Err(EngineError::config("acceptable_error", "is NaN"));
            }
        }
        if self.domain.resolution().iter().any(|&n| n < 2) {
            return Err(EngineError::config("domain", "every axis needs at least 2 points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GenerationLimit,
    AcceptableError,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::GenerationLimit => "generation-limit",
            StopReason::AcceptableError => "acceptable-error",
        })
    }
}

/// Everything needed to continue a run: the population, the RNG stream
/// position, the best-so-far and the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub generation: usize,
    pub population: Vec<Individual>,
    pub rng: ChaCha8Rng,
    pub best: Individual,
    pub config: RunConfig,
}

impl RunState {
    pub fn best_fitness(&self) -> f64 {
        self.best.fitness.unwrap_or(f64::INFINITY)
    }
}

/// Decides whether the run is over.
pub fn should_stop(state: &RunState) -> Option<StopReason> {
    let cfg = &state.config;
    if let Some(threshold) = cfg.acceptable_error {
        let best = state.best_fitness();
        let reached = match cfg.objective {
            Objective::Minimize => best <= threshold,
            Objective::Maximize => best.is_finite() && best >= threshold,
        };
        if reached {
            return Some(StopReason::AcceptableError);
        }
    }
    if state.generation >= cfg.generations {
        return Some(StopReason::GenerationLimit);
    }
    None
}

/// Per-generation summary handed to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    pub stats: EvalStats,
    pub best_fitness: f64,
    pub cumulative_cache_hits: u64,
}

/// Receives every generation, including generation 0.
pub trait RunObserver {
    fn on_generation(&mut self, state: &RunState, report: &GenerationReport) -> Result<(), EngineError>;

    fn on_finish(&mut self, _state: &RunState, _reason: StopReason) -> Result<(), EngineError> {
        Ok(())
    }
}

impl<F> RunObserver for F
where
    F: FnMut(&RunState, &GenerationReport),
{
    fn on_generation(&mut self, state: &RunState, report: &GenerationReport) -> Result<(), EngineError> {
        self(state, report);
        Ok(())
    }
}

/// Runtime context built from a configuration: resolved operator sets,
/// evaluator, target tensor and the subtree cache.
pub struct Engine {
    config: RunConfig,
    set: PrimitiveSet,
    functions: PrimitiveSet,
    evaluator: Evaluator,
    target: Arc<Tensor>,
    cache: Option<EvalCache>,
}

impl Engine {
    /// `set` resolves names in population files and targets; the active
    /// generation set is `config.function_list` taken from it.
    pub fn new(config: RunConfig, set: PrimitiveSet) -> Result<Self, EngineError> {
        config.validate()?;
        let functions = set
            .restrict(&config.function_list)
            .map_err(|e| EngineError::config("functions", e.to_string()))?;
        let evaluator = Evaluator::new(&config.domain)?;
        let target = Arc::new(config.target.build(&config.domain, &set)?);
        let cache = (config.engine == EngineKind::Vectorized && config.cache_budget > 0)
            .then(|| EvalCache::with_min_nodes(config.cache_budget, config.cache_min_nodes));
        Ok(Self { config, set, functions, evaluator, target, cache })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn cache(&self) -> Option<&EvalCache> {
        self.cache.as_ref()
    }

    pub fn primitive_set(&self) -> &PrimitiveSet {
        &self.set
    }

    fn generator(&self) -> Generator<'_> {
        Generator::new(&self.functions, self.config.domain.rank())
    }

    fn cumulative_hits(&self) -> u64 {
        self.cache.as_ref().map_or(0, |c| c.hits())
    }

    /// Evaluates every individual lacking a fitness.
    pub fn evaluate(&mut self, population: &mut [Individual]) -> Result<EvalStats, EngineError> {
        Ok(self
            .evaluator
            .eval_population(population, &self.target, self.cache.as_mut(), self.config.engine)?)
    }

    /// Loads trees from a population file: one prefix expression per line,
    /// blank lines and `#` comments ignored.
    pub fn load_population_file(&self, text: &str) -> Result<Vec<Tree>, EngineError> {
        let rank = self.config.domain.rank();
        let mut trees = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tree = parse(line, &self.set, rank).map_err(|source| EngineError::PopulationParse { line: n + 1, source })?;
            if tree.depth() > self.config.max_depth {
                return Err(EngineError::PopulationDepth { line: n + 1, depth: tree.depth(), max: self.config.max_depth });
            }
            trees.push(tree);
        }
        Ok(trees)
    }

    /// Builds and evaluates generation 0.
    pub fn initialize(&mut self) -> Result<(RunState, GenerationReport), EngineError> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut trees = match &cfg.initial_population {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| EngineError::Io { context: path.display().to_string(), source })?;
                let mut loaded = self.load_population_file(&text)?;
                loaded.truncate(cfg.pop_size);
                loaded
            }
            None => Vec::new(),
        };
        let missing = cfg.pop_size - trees.len();
        if missing > 0 {
            trees.extend(self.generator().ramped_half_and_half(missing, cfg.min_depth, cfg.max_depth, &mut rng));
        }
        let mut population: Vec<Individual> = trees.into_iter().map(Individual::new).collect();
        let stats = self.evaluate(&mut population)?;
        let best = self.best_of(&population).clone();
        let state = RunState { generation: 0, population, rng, best, config: self.config.clone() };
        let report = self.report(&state, stats);
        Ok((state, report))
    }

    fn report(&self, state: &RunState, stats: EvalStats) -> GenerationReport {
        GenerationReport {
            generation: state.generation,
            stats,
            best_fitness: state.best_fitness(),
            cumulative_cache_hits: self.cumulative_hits(),
        }
    }

    /// First individual with the best fitness.
    fn best_of<'p>(&self, population: &'p [Individual]) -> &'p Individual {
        let obj = self.config.objective;
        population
            .iter()
            .reduce(|best, i| {
                if obj.better(i.fitness.unwrap_or(f64::INFINITY), best.fitness.unwrap_or(f64::INFINITY)) {
                    i
                } else {
                    best
                }
            })
            .expect("population is never empty")
    }

    fn tournament<'p>(&self, population: &'p [Individual], rng: &mut ChaCha8Rng) -> &'p Individual {
        let obj = self.config.objective;
        let mut best = &population[rng.gen_range(0..population.len())];
        for _ in 1..self.config.tournament_size {
            let c = &population[rng.gen_range(0..population.len())];
            if obj.better(c.fitness.unwrap_or(f64::INFINITY), best.fitness.unwrap_or(f64::INFINITY)) {
                best = c;
            }
        }
        best
    }

    /// Replaces a uniformly chosen node of `receiver` with a uniformly
    /// chosen subtree of `donor`.
    pub fn crossover(&self, receiver: &Tree, donor: &Tree, rng: &mut ChaCha8Rng) -> Tree {
        let at = rng.gen_range(0..receiver.node_count());
        let from = rng.gen_range(0..donor.node_count());
        let piece = donor.subtree(from).expect("index within donor").clone();
        receiver.replace(at, piece).expect("index within receiver")
    }

    /// Replaces a uniformly chosen node with a freshly grown subtree.
    pub fn mutate(&self, tree: &Tree, rng: &mut ChaCha8Rng) -> Tree {
        let at = rng.gen_range(0..tree.node_count());
        let fresh = self.generator().random_tree(Method::Grow, 0, self.config.mutation_depth, rng);
        tree.replace(at, fresh).expect("index within tree")
    }

    /// Produces and evaluates the next generation.
    pub fn step(&mut self, state: &mut RunState) -> Result<GenerationReport, EngineError> {
        let cfg = self.config.clone();
        let obj = cfg.objective;
        let mut order: Vec<usize> = (0..state.population.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = obj.key(state.population[a].fitness.unwrap_or(f64::INFINITY));
            let fb = obj.key(state.population[b].fitness.unwrap_or(f64::INFINITY));
            fa.total_cmp(&fb)
        });
        let mut next: Vec<Individual> = order[..cfg.elitism].iter().map(|&i| state.population[i].clone()).collect();
        let rng = &mut state.rng;
        while next.len() < cfg.pop_size {
            let roll: f64 = rng.gen();
            let child = if roll < cfg.crossover_rate {
                let a = self.tournament(&state.population, rng);
                let b = self.tournament(&state.population, rng);
                let t = self.crossover(&a.tree, &b.tree, rng);
                if t.depth() <= cfg.max_depth { Individual::new(t) } else { a.clone() }
            } else if roll < cfg.crossover_rate + cfg.mutation_rate {
                let a = self.tournament(&state.population, rng);
                let t = self.mutate(&a.tree, rng);
                if t.depth() <= cfg.max_depth { Individual::new(t) } else { a.clone() }
            } else {
                self.tournament(&state.population, rng).clone()
            };
            next.push(child);
        }
        let stats = self.evaluate(&mut next)?;
        state.population = next;
        state.generation += 1;
        let gen_best = self.best_of(&state.population);
        if obj.better(gen_best.fitness.unwrap_or(f64::INFINITY), state.best_fitness()) {
            state.best = gen_best.clone();
        }
        Ok(self.report(state, stats))
    }

    /// Steps until a stop criterion holds. Observers see every generation
    /// produced here; the caller reports generation 0 after `initialize`.
    pub fn run(&mut self, mut state: RunState, observers: &mut [&mut dyn RunObserver]) -> Result<(RunState, StopReason), EngineError> {
        loop {
            if let Some(reason) = should_stop(&state) {
                for o in observers.iter_mut() {
                    o.on_finish(&state, reason)?;
                }
                return Ok((state, reason));
            }
            let report = self.step(&mut state)?;
            for o in observers.iter_mut() {
                o.on_generation(&state, &report)?;
            }
        }
    }
}

/// Initializes (reporting generation 0) and runs to completion.
pub fn run(config: RunConfig, set: PrimitiveSet, observers: &mut [&mut dyn RunObserver]) -> Result<(RunState, StopReason), EngineError> {
    let mut engine = Engine::new(config, set)?;
    let (state, report) = engine.initialize()?;
    for o in observers.iter_mut() {
        o.on_generation(&state, &report)?;
    }
    engine.run(state, observers)
}
