//! Run folders, CSV logs, the key-value state format, tensor text files and
//! PNG export.
//!
//! State and config files share one grammar: `key: value` lines, `#`
//! comments, and an optional `begin population` / `end population` block
//! holding one prefix expression per line.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::engine::{EngineError, GenerationReport, Objective, RunConfig, RunObserver, RunState, StopReason, TargetSpec};
use crate::eval::Evaluator;
use crate::expr::{parse, Individual};
use crate::primitives::PrimitiveSet;
use crate::tensor::{DomainSpec, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const EVOLUTION_HEADER: &str = "generation,individual,fitness,depth,nodes";
pub const TIMINGS_HEADER: &str = "generation,seconds,primitive_applications,cache_hits,cache_misses,cache_evictions";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("run folder {} is locked by another writer", .0.display())]
    Locked(PathBuf),
    #[error("cannot export tensor of shape {0:?} as an image")]
    UnsupportedShape(Vec<usize>),
    #[error("image encoding: {0}")]
    Image(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

fn bad(key: &str, message: impl Into<String>) -> PersistError {
    PersistError::BadValue { key: key.to_string(), message: message.into() }
}

/// Parsed `key: value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pub pairs: IndexMap<String, String>,
    pub population: Option<Vec<String>>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, PersistError> {
        let mut out = KvFile::default();
        let mut block: Option<Vec<String>> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(lines) = block.as_mut() {
                if line == "end population" {
                    out.population = block.take();
                } else if !line.is_empty() && !line.starts_with('#') {
                    lines.push(line.to_string());
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "begin population" {
                if out.population.is_some() {
                    return Err(PersistError::Syntax { line: n + 1, message: "second population block".into() });
                }
                block = Some(Vec::new());
                continue;
            }
            let Some((key, value)) = line.split_once(':') else {
                return Err(PersistError::Syntax { line: n + 1, message: format!("expected `key: value`, got `{line}`") });
            };
            let key = key.trim().to_string();
            if out.pairs.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(PersistError::Syntax { line: n + 1, message: format!("duplicate key `{key}`") });
            }
        }
        if block.is_some() {
            return Err(PersistError::MissingKey("end population".into()));
        }
        Ok(out)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, PersistError> {
        self.get(key).ok_or_else(|| PersistError::MissingKey(key.to_string()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, PersistError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| bad(key, format!("`{v}`: {e}"))))
            .transpose()
    }
}

/// Keys accepted in config files, in the order they are written.
pub const CONFIG_KEYS: [&str; 20] = [
    "seed",
    "pop_size",
    "min_depth",
    "max_depth",
    "generations",
    "acceptable_error",
    "objective",
    "domain",
    "range",
    "target",
    "crossover_rate",
    "mutation_rate",
    "tournament_size",
    "elitism",
    "engine",
    "cache_budget",
    "cache_min_nodes",
    "mutation_depth",
    "functions",
    "initial_population",
];

pub fn config_pairs(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    vec![
        ("seed", cfg.seed.to_string()),
        ("pop_size", cfg.pop_size.to_string()),
        ("min_depth", cfg.min_depth.to_string()),
        ("max_depth", cfg.max_depth.to_string()),
        ("generations", cfg.generations.to_string()),
        ("acceptable_error", opt(cfg.acceptable_error.map(|e| e.to_string()))),
        ("objective", cfg.objective.as_str().into()),
        ("domain", cfg.domain.resolution_string()),
        ("range", format!("{} {}", cfg.domain.range_lo(), cfg.domain.range_hi())),
        ("target", cfg.target.to_string()),
        ("crossover_rate", cfg.crossover_rate.to_string()),
        ("mutation_rate", cfg.mutation_rate.to_string()),
        ("tournament_size", cfg.tournament_size.to_string()),
        ("elitism", cfg.elitism.to_string()),
        ("engine", cfg.engine.as_str().into()),
        ("cache_budget", cfg.cache_budget.to_string()),
        ("cache_min_nodes", cfg.cache_min_nodes.to_string()),
        ("mutation_depth", cfg.mutation_depth.to_string()),
        ("functions", cfg.function_list.join(",")),
        ("initial_population", opt(cfg.initial_population.as_ref().map(|p| p.display().to_string()))),
    ]
}

pub fn config_to_string(cfg: &RunConfig) -> String {
    let mut s = String::new();
    for (k, v) in config_pairs(cfg) {
        s.push_str(&format!("{k}: {v}\n"));
    }
    s
}

/// Overrides fields of `cfg` with the config keys present in `kv`. With
/// `require_all`, every config key must be present.
pub fn apply_config(cfg: &mut RunConfig, kv: &KvFile, require_all: bool) -> Result<(), PersistError> {
    if require_all {
        for k in CONFIG_KEYS {
            kv.require(k)?;
        }
    }
    macro_rules! field {
        ($key:literal, $slot:expr) => {
            if let Some(v) = kv.parsed($key)? {
                $slot = v;
            }
        };
    }
    field!("seed", cfg.seed);
    field!("pop_size", cfg.pop_size);
    field!("min_depth", cfg.min_depth);
    field!("max_depth", cfg.max_depth);
    field!("generations", cfg.generations);
    field!("crossover_rate", cfg.crossover_rate);
    field!("mutation_rate", cfg.mutation_rate);
    field!("tournament_size", cfg.tournament_size);
    field!("elitism", cfg.elitism);
    field!("cache_budget", cfg.cache_budget);
    field!("cache_min_nodes", cfg.cache_min_nodes);
    field!("mutation_depth", cfg.mutation_depth);
    if let Some(v) = kv.get("acceptable_error") {
        cfg.acceptable_error = match v {
            "none" => None,
            _ => Some(v.parse().map_err(|e| bad("acceptable_error", format!("`{v}`: {e}")))?),
        };
    }
    if let Some(v) = kv.get("objective") {
        cfg.objective = v.parse::<Objective>().map_err(|e| bad("objective", e))?;
    }
    if let Some(v) = kv.get("engine") {
        cfg.engine = v.parse().map_err(|e: String| bad("engine", e))?;
    }
    let (mut lo, mut hi) = (cfg.domain.range_lo(), cfg.domain.range_hi());
    if let Some(v) = kv.get("range") {
        let parts: Vec<f32> = v
            .split_whitespace()
            .map(|p| p.parse::<f32>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad("range", format!("`{v}`: {e}")))?;
        let [a, b] = parts[..] else {
            return Err(bad("range", format!("expected `lo hi`, got `{v}`")));
        };
        (lo, hi) = (a, b);
    }
    let resolution = match kv.get("domain") {
        Some(v) => v.parse::<DomainSpec>().map_err(|e| bad("domain", e.to_string()))?.resolution().to_vec(),
        None => cfg.domain.resolution().to_vec(),
    };
    cfg.domain = DomainSpec::new(resolution, lo, hi).map_err(|e| bad("range", e.to_string()))?;
    if let Some(v) = kv.get("target") {
        cfg.target = TargetSpec::parse(v);
    }
    if let Some(v) = kv.get("functions") {
        cfg.function_list = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(v) = kv.get("initial_population") {
        cfg.initial_population = (v != "none").then(|| PathBuf::from(v));
    }
    Ok(())
}

/// Reads a config file; unknown keys are rejected so typos do not pass
/// silently.
pub fn load_config(path: &Path, base: RunConfig) -> Result<RunConfig, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let kv = KvFile::parse(&text)?;
    if let Some(k) = kv.pairs.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(bad(k, "unknown key"));
    }
    let mut cfg = base;
    apply_config(&mut cfg, &kv, false)?;
    Ok(cfg)
}

/// Seed, stream and word position, concatenated as lowercase hex.
pub fn rng_to_hex(rng: &ChaCha8Rng) -> String {
    let mut s = String::with_capacity(112);
    for b in rng.get_seed() {
        s.push_str(&format!("{b:02x}"));
    }
    s.push_str(&format!("{:016x}{:032x}", rng.get_stream(), rng.get_word_pos()));
    s
}

pub fn rng_from_hex(hex: &str) -> Result<ChaCha8Rng, PersistError> {
    if hex.len() != 112 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad("rng", "expected 112 hex digits"));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("validated hex");
    }
    let stream = u64::from_str_radix(&hex[64..80], 16).expect("validated hex");
    let word_pos = u128::from_str_radix(&hex[80..112], 16).expect("validated hex");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

fn fitness_to_string(f: Option<f64>) -> String {
    match f {
        Some(v) => v.to_string(),
        None => "none".into(),
    }
}

fn fitness_from_str(key: &str, s: &str) -> Result<Option<f64>, PersistError> {
    if s == "none" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| bad(key, format!("`{s}`: {e}")))
}

pub fn state_to_string(state: &RunState) -> String {
    let mut s = format!("format_version: {FORMAT_VERSION}\n");
    s.push_str(&config_to_string(&state.config));
    s.push_str(&format!("generation: {}\n", state.generation));
    s.push_str(&format!("rng: {}\n", rng_to_hex(&state.rng)));
    s.push_str(&format!("best: {}\n", state.best.tree));
    s.push_str(&format!("best_fitness: {}\n", fitness_to_string(state.best.fitness)));
    let fits: Vec<String> = state.population.iter().map(|i| fitness_to_string(i.fitness)).collect();
    s.push_str(&format!("fitnesses: {}\n", fits.join(" ")));
    s.push_str("begin population\n");
    for ind in &state.population {
        s.push_str(&format!("{}\n", ind.tree));
    }
    s.push_str("end population\n");
    s
}

/// Rebuilds a state; `set` resolves operator names in the expressions.
pub fn state_from_str(text: &str, set: &PrimitiveSet) -> Result<RunState, PersistError> {
    let kv = KvFile::parse(text)?;
    let version = kv.require("format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(PersistError::Version { found: version.to_string() });
    }
    let mut config = RunConfig::default();
    apply_config(&mut config, &kv, true)?;
    let rank = config.domain.rank();
    let generation = kv.parsed("generation")?.ok_or_else(|| PersistError::MissingKey("generation".into()))?;
    let rng = rng_from_hex(kv.require("rng")?)?;
    let best_text = kv.require("best")?;
    let best_tree = parse(best_text, set, rank).map_err(|e| bad("best", e.to_string()))?;
    let best_fitness = fitness_from_str("best_fitness", kv.require("best_fitness")?)?;
    let fitnesses = kv
        .require("fitnesses")?
        .split_whitespace()
        .map(|f| fitness_from_str("fitnesses", f))
        .collect::<Result<Vec<_>, _>>()?;
    let lines = kv.population.as_ref().ok_or_else(|| PersistError::MissingKey("begin population".into()))?;
    if lines.len() != fitnesses.len() {
        return Err(bad(
            "fitnesses",
            format!("{} values for {} individuals", fitnesses.len(), lines.len()),
        ));
    }
    let population = lines
        .iter()
        .zip(fitnesses)
        .enumerate()
        .map(|(i, (line, fitness))| {
            let tree = parse(line, set, rank).map_err(|e| bad("population", format!("individual {i}: {e}")))?;
            Ok(Individual { tree, fitness })
        })
        .collect::<Result<Vec<_>, PersistError>>()?;
    Ok(RunState { generation, population, rng, best: Individual { tree: best_tree, fitness: best_fitness }, config })
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written state behind.
pub fn save_state(state: &RunState, path: &Path) -> Result<(), PersistError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, state_to_string(state)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_state(path: &Path, set: &PrimitiveSet) -> Result<RunState, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    state_from_str(&text, set)
}

/// Nine significant digits; infinities as `inf` / `-inf`.
pub fn format_fitness(f: f64) -> String {
    if f.is_nan() {
        "nan".into()
    } else if f.is_infinite() {
        if f > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{f:.8e}")
    }
}

fn append_lines(path: &Path, header: &str, rows: &[String]) -> Result<(), PersistError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let empty = file.metadata().map_err(io_err(path))?.len() == 0;
    let mut w = BufWriter::new(&mut file);
    let mut write = || -> std::io::Result<()> {
        if empty {
            writeln!(w, "{header}")?;
        }
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

/// One row per individual; the header is written when the file is empty.
pub fn append_generation_csv(path: &Path, generation: usize, population: &[Individual]) -> Result<(), PersistError> {
    let rows: Vec<String> = population
        .iter()
        .enumerate()
        .map(|(i, ind)| {
            let fit = format_fitness(ind.fitness.unwrap_or(f64::INFINITY));
            format!("{generation},{i},{fit},{},{}", ind.depth(), ind.nodes())
        })
        .collect();
    append_lines(path, EVOLUTION_HEADER, &rows)
}

pub fn append_timings_csv(path: &Path, report: &GenerationReport) -> Result<(), PersistError> {
    let s = &report.stats;
    let row = format!(
        "{},{:.6},{},{},{},{}",
        report.generation,
        s.wall_time.as_secs_f64(),
        s.primitive_applications,
        s.cache_hits,
        s.cache_misses,
        s.cache_evictions
    );
    append_lines(path, TIMINGS_HEADER, &[row])
}

/// Maps `[-1, 1]` to `0..=255`; non-finite values become 0.
pub fn to_byte(v: f32) -> u8 {
    if !v.is_finite() {
        return 0;
    }
    ((v as f64 + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Rank 2 becomes grayscale, rank 3 with three channels RGB. The first axis
/// runs along image columns and the second along rows.
pub fn export_image(t: &Tensor, path: &Path) -> Result<(), PersistError> {
    let shape = t.shape();
    let (w, h) = match shape {
        [w, h] | [w, h, 3] => (*w, *h),
        _ => return Err(PersistError::UnsupportedShape(shape.to_vec())),
    };
    let (w32, h32) = (w as u32, h as u32);
    let result = if shape.len() == 2 {
        let img = image::GrayImage::from_fn(w32, h32, |x, y| image::Luma([to_byte(t.get(&[x as usize, y as usize]))]));
        img.save_with_format(path, image::ImageFormat::Png)
    } else {
        let img = image::RgbImage::from_fn(w32, h32, |x, y| {
            let c = |k: usize| to_byte(t.get(&[x as usize, y as usize, k]));
            image::Rgb([c(0), c(1), c(2)])
        });
        img.save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| PersistError::Image(e.to_string()))
}

/// Plain-text tensor: a `shape:` line then the values, one innermost-axis
/// row per line.
pub fn write_tensor(t: &Tensor, path: &Path) -> Result<(), PersistError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let shape: Vec<String> = t.shape().iter().map(|n| n.to_string()).collect();
    let row = *t.shape().last().unwrap_or(&1);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "shape: {}", shape.join(" "))?;
        for chunk in t.data().chunks(row.max(1)) {
            let vals: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines.next().ok_or_else(|| PersistError::MissingKey("shape".into()))?;
    let dims = header
        .trim()
        .strip_prefix("shape:")
        .ok_or_else(|| PersistError::MissingKey("shape".into()))?;
    let shape = dims
        .split_whitespace()
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad("shape", e.to_string()))?;
    let data = lines
        .flat_map(|l| l.split_whitespace())
        .map(|v| v.parse::<f32>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad("values", e.to_string()))?;
    Tensor::new(shape, data).map_err(|e| bad("values", e.to_string()))
}

/// UTC `YYYYMMDD-HHMMSS`.
fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()) as i64;
    let (days, rem) = (secs.div_euclid(86_400), secs.rem_euclid(86_400));
    // civil-from-days
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!("{y:04}{m:02}{d:02}-{:02}{:02}{:02}", rem / 3600, rem / 60 % 60, rem % 60)
}

/// A locked run directory. The lock file is removed on drop.
#[derive(Debug)]
pub struct RunFolder {
    path: PathBuf,
}

impl RunFolder {
    /// Creates `run_<timestamp>_<seed>` under `parent`.
    pub fn create(parent: &Path, seed: u64) -> Result<Self, PersistError> {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let base = format!("run_{}_{seed}", timestamp());
        let mut path = parent.join(&base);
        let mut n = 1;
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    path = parent.join(format!("{base}-{n}"));
                }
                Err(e) => return Err(PersistError::Io { path, source: e }),
            }
        }
        let best = path.join("best");
        fs::create_dir(&best).map_err(io_err(&best))?;
        Self::lock(path)
    }

    /// Opens an existing folder that holds a state file.
    pub fn open(path: &Path) -> Result<Self, PersistError> {
        let state = path.join("state.txt");
        if !state.is_file() {
            return Err(PersistError::Io {
                path: state,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no state file"),
            });
        }
        Self::lock(path.to_path_buf())
    }

    fn lock(path: PathBuf) -> Result<Self, PersistError> {
        let lock = path.join("lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PersistError::Locked(path)),
            Err(e) => Err(PersistError::Io { path: lock, source: e }),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config_path(&self) -> PathBuf {
        self.path.join("config.txt")
    }

    pub fn state_path(&self) -> PathBuf {
        self.path.join("state.txt")
    }

    pub fn evolution_path(&self) -> PathBuf {
        self.path.join("evolution.csv")
    }

    pub fn timings_path(&self) -> PathBuf {
        self.path.join("timings.csv")
    }

    pub fn best_dir(&self) -> PathBuf {
        self.path.join("best")
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<(), PersistError> {
        let p = self.config_path();
        fs::write(&p, config_to_string(cfg)).map_err(io_err(&p))
    }
}

impl Drop for RunFolder {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join("lock"));
    }
}

/// Observer that mirrors a run into its folder: CSV rows, the best program
/// of every generation (optionally rendered), and the state file.
pub struct RunLogger {
    folder: RunFolder,
    images: Option<Evaluator>,
}

impl RunLogger {
    pub fn new(folder: RunFolder) -> Self {
        Self { folder, images: None }
    }

    /// Also renders the best phenotype of each generation when the domain
    /// has an image shape.
    pub fn with_images(mut self, domain: &DomainSpec) -> Result<Self, EngineError> {
        let res = domain.resolution();
        if res.len() == 2 || (res.len() == 3 && res[2] == 3) {
            self.images = Some(Evaluator::new(domain)?);
        }
        Ok(self)
    }

    pub fn folder(&self) -> &RunFolder {
        &self.folder
    }

    fn log(&mut self, state: &RunState, report: &GenerationReport) -> Result<(), PersistError> {
        let f = &self.folder;
        append_generation_csv(&f.evolution_path(), state.generation, &state.population)?;
        append_timings_csv(&f.timings_path(), report)?;
        let stem = f.best_dir().join(format!("gen_{:05}", state.generation));
        let txt = stem.with_extension("txt");
        let line = format!("{}\n{}\n", state.best.tree, format_fitness(state.best.fitness.unwrap_or(f64::INFINITY)));
        fs::write(&txt, line).map_err(io_err(&txt))?;
        if let Some(ev) = &self.images {
            if let Ok((t, _)) = ev.eval_vectorized(&state.best.tree, None) {
                export_image(&t, &stem.with_extension("png"))?;
            }
        }
        save_state(state, &f.state_path())
    }
}

impl From<PersistError> for EngineError {
    fn from(e: PersistError) -> Self {
        EngineError::Observer(e.to_string())
    }
}

impl RunObserver for RunLogger {
    fn on_generation(&mut self, state: &RunState, report: &GenerationReport) -> Result<(), EngineError> {
        Ok(self.log(state, report)?)
    }

    fn on_finish(&mut self, state: &RunState, _reason: StopReason) -> Result<(), EngineError> {
        Ok(save_state(state, &self.folder.state_path())?)
    }
}
