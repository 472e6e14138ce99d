//! Timing harness: raw tree evaluation and full evolutionary runs across a
//! ladder of square domain sizes, with CSV, TSV and SVG output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{self, EngineError, GenerationReport, RunConfig, RunObserver, RunState, TargetSpec, DEFAULT_FUNCTIONS};
use crate::eval::{EngineKind, EvalCache, EvalError, Evaluator, DEFAULT_CACHE_BUDGET};
use crate::expr::{Generator, Individual, Tree};
use crate::primitives::PrimitiveSet;
use crate::tensor::{make_coordinate_tensors, DomainSpec, Tensor};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("pagie target needs a rank-2 domain, got rank {0}")]
    Rank(usize),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// `x⁴/(1+x⁴) + y⁴/(1+y⁴)`, the division-free form of
/// `1/(1+x⁻⁴) + 1/(1+y⁻⁴)`; it takes the limit value 0 on the axes.
pub fn pagie(x: f64, y: f64) -> f64 {
    let (x4, y4) = (x.powi(4), y.powi(4));
    x4 / (1.0 + x4) + y4 / (1.0 + y4)
}

pub fn pagie_target(domain: &DomainSpec) -> Result<Tensor, BenchError> {
    if domain.rank() != 2 {
        return Err(BenchError::Rank(domain.rank()));
    }
    let coords = make_coordinate_tensors(domain).map_err(EvalError::from)?;
    let data = coords[0]
        .data()
        .iter()
        .zip(coords[1].data())
        .map(|(&x, &y)| pagie(x as f64, y as f64) as f32)
        .collect();
    Ok(Tensor::new(domain.resolution().to_vec(), data).expect("shape matches domain"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    Iterative,
    VectorizedNoCache,
    VectorizedCache,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Iterative, Approach::VectorizedNoCache, Approach::VectorizedCache];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Iterative => "iterative",
            Approach::VectorizedNoCache => "vectorized-nocache",
            Approach::VectorizedCache => "vectorized-cache",
        }
    }

    pub fn engine(self) -> EngineKind {
        match self {
            Approach::Iterative => EngineKind::Iterative,
            _ => EngineKind::Vectorized,
        }
    }

    pub fn cached(self) -> bool {
        self == Approach::VectorizedCache
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown approach `{s}` (expected iterative, vectorized-nocache or vectorized-cache)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub sizes: Vec<usize>,
    pub runs: usize,
    pub approaches: Vec<Approach>,
    pub pop_size: usize,
    pub min_depth: usize,
    pub max_depth: usize,
    pub generations: usize,
    pub time_budget: Option<Duration>,
    pub function_list: Vec<String>,
    pub cache_budget: usize,
    /// Free text copied into the outputs (machine, load, etc.).
    pub notes: String,
}

impl Default for BenchPlan {
    /// Desk-scale preset: sides up to 512 and five minutes per cell.
    fn default() -> Self {
        Self {
            sizes: vec![64, 128, 256, 512],
            runs: 5,
            approaches: Approach::ALL.to_vec(),
            pop_size: 50,
            min_depth: 2,
            max_depth: 12,
            generations: 50,
            time_budget: Some(Duration::from_secs(300)),
            function_list: DEFAULT_FUNCTIONS.iter().map(|s| s.to_string()).collect(),
            cache_budget: DEFAULT_CACHE_BUDGET,
            notes: String::new(),
        }
    }
}

impl BenchPlan {
    /// The full ladder of sides 64 through 2048.
    pub fn full() -> Self {
        Self { sizes: vec![64, 128, 256, 512, 1024, 2048], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Plan("sizes must be non-empty and strictly increasing".into()));
        }
        if self.sizes[0] < 2 {
            return Err(BenchError::Plan("sides must be at least 2".into()));
        }
        if self.runs == 0 {
            return Err(BenchError::Plan("runs must be at least 1".into()));
        }
        if self.approaches.is_empty() {
            return Err(BenchError::Plan("no approaches selected".into()));
        }
        if self.pop_size == 0 {
            return Err(BenchError::Plan("pop_size must be at least 1".into()));
        }
        Ok(())
    }

    /// One fixed ramped-half-and-half population per run.
    pub fn populations(&self, seed: u64) -> Result<Vec<Vec<Tree>>, BenchError> {
        let set = PrimitiveSet::default()
            .restrict(&self.function_list)
            .map_err(|e| BenchError::Plan(e.to_string()))?;
        let generator = Generator::new(&set, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..self.runs)
            .map(|_| generator.ramped_half_and_half(self.pop_size, self.min_depth, self.max_depth, &mut rng))
            .collect())
    }
}

/// Measurements of one (approach, side) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub approach: Approach,
    pub side: usize,
    /// Wall seconds of every completed run.
    pub seconds: Vec<f64>,
    pub dnf: bool,
}

impl CellResult {
    pub fn points(&self) -> usize {
        self.side * self.side
    }

    pub fn avg(&self) -> Option<f64> {
        (!self.dnf && !self.seconds.is_empty()).then(|| self.seconds.iter().sum::<f64>() / self.seconds.len() as f64)
    }

    /// Sample standard deviation over completed runs; absent for DNF cells.
    pub fn std(&self) -> Option<f64> {
        let avg = self.avg()?;
        let n = self.seconds.len();
        if n < 2 {
            return Some(0.0);
        }
        let ss: f64 = self.seconds.iter().map(|s| (s - avg).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    }
}

/// Per-generation record of an evolutionary benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTiming {
    pub approach: Approach,
    pub side: usize,
    pub run: usize,
    pub generation: usize,
    pub seconds: f64,
    pub primitive_applications: u64,
    pub cumulative_cache_hits: u64,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchResult {
    pub cells: Vec<CellResult>,
    /// Fitness values of the first population (or final population of the
    /// first run in evolution mode) keyed by approach and side.
    pub fitness: Vec<(Approach, usize, Vec<f64>)>,
    pub generations: Vec<GenerationTiming>,
    pub notes: String,
}

impl BenchResult {
    pub fn cell(&self, approach: Approach, side: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.approach == approach && c.side == side)
    }

    pub fn fitness_of(&self, approach: Approach, side: usize) -> Option<&[f64]> {
        self.fitness.iter().find(|(a, s, _)| *a == approach && *s == side).map(|(_, _, f)| f.as_slice())
    }
}

struct Deadline(Option<Instant>);

impl Deadline {
    fn passed(&self) -> bool {
        self.0.is_some_and(|d| Instant::now() > d)
    }
}

/// Times population evaluation for every approach and side. Each cell gets
/// one untimed warm-up evaluation; the budget is checked between
/// individuals, and once a cell misses it the larger sides are skipped.
pub fn bench_tree_eval(plan: &BenchPlan, seed: u64) -> Result<BenchResult, BenchError> {
    plan.validate()?;
    let populations = plan.populations(seed)?;
    let mut result = BenchResult { notes: plan.notes.clone(), ..Default::default() };
    for &approach in &plan.approaches {
        let mut skipping = false;
        for &side in &plan.sizes {
            let mut cell = CellResult { approach, side, seconds: vec![], dnf: skipping };
            if skipping {
                result.cells.push(cell);
                continue;
            }
            let domain = DomainSpec::square(side).map_err(EvalError::from)?;
            let evaluator = Evaluator::new(&domain)?;
            let target = pagie_target(&domain)?;
            evaluator.eval_with(&populations[0][0], approach.engine(), None)?;
            'runs: for (r, trees) in populations.iter().enumerate() {
                let mut cache = approach.cached().then(|| EvalCache::new(plan.cache_budget));
                let deadline = Deadline(plan.time_budget.map(|b| Instant::now() + b));
                let mut fitness = Vec::with_capacity(trees.len());
                let start = Instant::now();
                for tree in trees {
                    let mut ind = [Individual::new(tree.clone())];
                    evaluator.eval_population(&mut ind, &target, cache.as_mut(), approach.engine())?;
                    fitness.push(ind[0].fitness.expect("just evaluated"));
                    if deadline.passed() {
                        cell.dnf = true;
                        break 'runs;
                    }
                }
                cell.seconds.push(start.elapsed().as_secs_f64());
                if r == 0 {
                    result.fitness.push((approach, side, fitness));
                }
            }
            skipping = cell.dnf;
            result.cells.push(cell);
        }
    }
    Ok(result)
}

struct EvolutionProbe<'a> {
    approach: Approach,
    side: usize,
    run: usize,
    deadline: Deadline,
    out: &'a mut Vec<GenerationTiming>,
}

impl RunObserver for EvolutionProbe<'_> {
    fn on_generation(&mut self, state: &RunState, report: &GenerationReport) -> Result<(), EngineError> {
        self.out.push(GenerationTiming {
            approach: self.approach,
            side: self.side,
            run: self.run,
            generation: state.generation,
            seconds: report.stats.wall_time.as_secs_f64(),
            primitive_applications: report.stats.primitive_applications,
            cumulative_cache_hits: report.cumulative_cache_hits,
            best_fitness: report.best_fitness,
        });
        if self.deadline.passed() {
            return Err(EngineError::Observer("time budget exceeded".into()));
        }
        Ok(())
    }
}

/// Full runs against the Pagie target per approach and side; run `r` uses
/// seed `seed + r`, so every approach sees the same seeds.
pub fn bench_evolution(plan: &BenchPlan, seed: u64) -> Result<BenchResult, BenchError> {
    plan.validate()?;
    let mut result = BenchResult { notes: plan.notes.clone(), ..Default::default() };
    for &approach in &plan.approaches {
        let mut skipping = false;
        for &side in &plan.sizes {
            let mut cell = CellResult { approach, side, seconds: vec![], dnf: skipping };
            if skipping {
                result.cells.push(cell);
                continue;
            }
            for r in 0..plan.runs {
                let config = RunConfig {
                    seed: seed.wrapping_add(r as u64),
                    pop_size: plan.pop_size,
                    min_depth: plan.min_depth,
                    max_depth: plan.max_depth,
                    generations: plan.generations,
                    domain: DomainSpec::square(side).map_err(EvalError::from)?,
                    target: TargetSpec::Pagie,
                    engine: approach.engine(),
                    cache_budget: if approach.cached() { plan.cache_budget } else { 0 },
                    function_list: plan.function_list.clone(),
                    ..RunConfig::default()
                };
                let mut probe = EvolutionProbe {
                    approach,
                    side,
                    run: r,
                    deadline: Deadline(plan.time_budget.map(|b| Instant::now() + b)),
                    out: &mut result.generations,
                };
                let start = Instant::now();
                match engine::run(config, PrimitiveSet::default(), &mut [&mut probe]) {
                    Ok((state, _)) => {
                        cell.seconds.push(start.elapsed().as_secs_f64());
                        if r == 0 {
                            let f = state.population.iter().map(|i| i.fitness.unwrap_or(f64::INFINITY)).collect();
                            result.fitness.push((approach, side, f));
                        }
                    }
                    Err(EngineError::Observer(_)) => {
                        cell.dnf = true;
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            skipping = cell.dnf;
            result.cells.push(cell);
        }
    }
    Ok(result)
}

fn write_file(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })
}

/// `approach,side,points,run,seconds,dnf`; a DNF cell contributes its
/// completed runs and one row with empty seconds.
pub fn timings_csv(result: &BenchResult) -> String {
    let mut s = String::from("approach,side,points,run,seconds,dnf\n");
    for c in &result.cells {
        for (r, secs) in c.seconds.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{:.6},0\n", c.approach, c.side, c.points(), r, secs));
        }
        if c.dnf {
            s.push_str(&format!("{},{},{},{},,1\n", c.approach, c.side, c.points(), c.seconds.len()));
        }
    }
    s
}

pub fn generations_csv(result: &BenchResult) -> String {
    let mut s = String::from("approach,side,run,generation,seconds,primitive_applications,cumulative_cache_hits,best_fitness\n");
    for g in &result.generations {
        s.push_str(&format!(
            "{},{},{},{},{:.6},{},{},{}\n",
            g.approach,
            g.side,
            g.run,
            g.generation,
            g.seconds,
            g.primitive_applications,
            g.cumulative_cache_hits,
            crate::persistence::format_fitness(g.best_fitness)
        ));
    }
    s
}

pub fn write_timings_csv(result: &BenchResult, path: &Path) -> Result<(), BenchError> {
    write_file(path, &timings_csv(result))
}

/// Tab-separated `points side approach avg std`, one row per cell.
pub fn plot_tsv(result: &BenchResult) -> String {
    let mut s = String::new();
    if !result.notes.is_empty() {
        s.push_str(&format!("# {}\n", result.notes.replace('\n', " ")));
    }
    s.push_str("points\tside\tapproach\tavg\tstd\n");
    for c in &result.cells {
        let (avg, std) = match (c.avg(), c.std()) {
            (Some(a), Some(d)) => (format!("{a:.6}"), format!("{d:.6}")),
            _ => ("DNF".into(), "DNF".into()),
        };
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", c.points(), c.side, c.approach, avg, std));
    }
    s
}

/// `4194304` → `4,194,304`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Log-log line chart of average seconds against point count. DNF cells
/// are left out.
pub fn plot_svg(result: &BenchResult) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const L: f64 = 90.0;
    const R: f64 = 170.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut points: Vec<usize> = result.cells.iter().map(|c| c.points()).collect();
    points.sort_unstable();
    points.dedup();
    let times: Vec<f64> = result.cells.iter().filter_map(|c| c.avg()).filter(|t| *t > 0.0).collect();
    let (xmin, xmax) = match (points.first(), points.last()) {
        (Some(&a), Some(&b)) if a < b => ((a as f64).log10(), (b as f64).log10()),
        (Some(&a), _) => ((a as f64).log10() - 0.5, (a as f64).log10() + 0.5),
        _ => (0.0, 1.0),
    };
    let tmin = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let tmax = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (ymin, ymax) = if times.is_empty() {
        (-3.0, 0.0)
    } else {
        (tmin.log10().floor(), tmax.log10().ceil().max(tmin.log10().floor() + 1.0))
    };
    let px = |p: f64| L + (p.log10() - xmin) / (xmax - xmin) * (W - L - R);
    let py = |t: f64| H - B - (t.log10() - ymin) / (ymax - ymin) * (H - T - B);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - B,
        W - R,
        H - B,
        H - B
    );
    for &p in &points {
        let x = px(p as f64);
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\n<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            H - B,
            H - B + 5.0,
            H - B + 18.0,
            thousands(p)
        ));
    }
    let mut e = ymin as i32;
    while e <= ymax as i32 {
        let y = py(10f64.powi(e));
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{L}\" y2=\"{y:.1}\" stroke=\"black\"/>\n<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>\n",
            L - 5.0,
            L - 8.0,
            y + 4.0
        ));
        e += 1;
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">points</text>\n\
         <text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">seconds</text>\n",
        (L + W - R) / 2.0,
        H - 15.0,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    ));
    let mut approaches: Vec<Approach> = Vec::new();
    for c in &result.cells {
        if !approaches.contains(&c.approach) {
            approaches.push(c.approach);
        }
    }
    for (k, a) in approaches.iter().enumerate() {
        let color = colors[k % colors.len()];
        let pts: Vec<(f64, f64)> = result
            .cells
            .iter()
            .filter(|c| c.approach == *a)
            .filter_map(|c| c.avg().filter(|t| *t > 0.0).map(|t| (px(c.points() as f64), py(t))))
            .collect();
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            for (x, y) in &pts {
                s.push_str(&format!("<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{color}\"/>\n"));
            }
        }
        let ly = T + 20.0 * k as f64;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{}\" y=\"{}\">{a}</text>\n",
            W - R + 15.0,
            W - R + 35.0,
            W - R + 40.0,
            ly + 4.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `plot.tsv` and `plot.svg` into `dir`.
pub fn emit_plot_data(result: &BenchResult, dir: &Path) -> Result<(PathBuf, PathBuf), BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })?;
    let tsv = dir.join("plot.tsv");
    let svg = dir.join("plot.svg");
    write_file(&tsv, &plot_tsv(result))?;
    write_file(&svg, &plot_svg(result))?;
    Ok((tsv, svg))
}

/// Writes `timings.csv`, the plot files and, for evolution runs,
/// `generations.csv` into `dir`.
pub fn write_all(result: &BenchResult, dir: &Path) -> Result<(), BenchError> {
    emit_plot_data(result, dir)?;
    write_timings_csv(result, &dir.join("timings.csv"))?;
    if !result.generations.is_empty() {
        write_file(&dir.join("generations.csv"), &generations_csv(result))?;
    }
    Ok(())
}

/// Prints a plain table of averages to `w`.
pub fn print_summary(result: &BenchResult, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{:<20} {:>6} {:>12} {:>12} {:>12}", "approach", "side", "points", "avg s", "std s")?;
    for c in &result.cells {
        match (c.avg(), c.std()) {
            (Some(a), Some(d)) => writeln!(w, "{:<20} {:>6} {:>12} {:>12.4} {:>12.4}", c.approach, c.side, thousands(c.points()), a, d)?,
            _ => writeln!(w, "{:<20} {:>6} {:>12} {:>12} {:>12}", c.approach, c.side, thousands(c.points()), "DNF", "DNF")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan() -> BenchPlan {
        BenchPlan {
            sizes: vec![8, 16],
            runs: 2,
            pop_size: 6,
            max_depth: 5,
            generations: 3,
            time_budget: None,
            ..BenchPlan::default()
        }
    }

    #[test]
    fn pagie_spot_values() {
        assert_eq!(pagie(1.0, 1.0), 1.0);
        assert_eq!(pagie(0.0, 0.0), 0.0);
        assert_eq!(pagie(-1.0, 1.0), 1.0);
        let t = pagie_target(&DomainSpec::square(3).unwrap()).unwrap();
        assert_eq!(t.get(&[2, 2]), 1.0);
        assert_eq!(t.get(&[1, 1]), 0.0);
        assert_eq!(t.get(&[0, 2]), 1.0);
        assert!(matches!(pagie_target(&"4x4x3".parse().unwrap()), Err(BenchError::Rank(3))));
    }

    #[test]
    fn plan_validation() {
        assert!(BenchPlan { sizes: vec![64, 64], ..tiny_plan() }.validate().is_err());
        assert!(BenchPlan { runs: 0, ..tiny_plan() }.validate().is_err());
        assert_eq!(BenchPlan::full().sizes.len(), 6);
    }

    #[test]
    fn tree_eval_approaches_agree() {
        let r = bench_tree_eval(&tiny_plan(), 4).unwrap();
        assert_eq!(r.cells.len(), 6);
        for side in [8, 16] {
            let it = r.fitness_of(Approach::Iterative, side).unwrap();
            for a in [Approach::VectorizedNoCache, Approach::VectorizedCache] {
                for (x, y) in it.iter().zip(r.fitness_of(a, side).unwrap()) {
                    assert!(x == y || (x - y).abs() <= 1e-4, "{a} {x} {y}");
                }
            }
        }
        assert!(r.cells.iter().all(|c| c.seconds.len() == 2 && !c.dnf));
    }

    #[test]
    fn zero_budget_marks_dnf_and_skips_larger_sides() {
        let plan = BenchPlan { time_budget: Some(Duration::ZERO), approaches: vec![Approach::Iterative], ..tiny_plan() };
        let r = bench_tree_eval(&plan, 1).unwrap();
        assert!(r.cells.iter().all(|c| c.dnf && c.avg().is_none() && c.std().is_none()));
        let tsv = plot_tsv(&r);
        assert_eq!(tsv.matches("DNF").count(), 4);
        assert!(!plot_svg(&r).contains("<polyline"));
        let csv = timings_csv(&r);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",,1")));
    }

    #[test]
    fn evolution_records_generations_and_hits() {
        let plan = BenchPlan { sizes: vec![8], runs: 1, ..tiny_plan() };
        let r = bench_evolution(&plan, 2).unwrap();
        let cached: Vec<&GenerationTiming> = r.generations.iter().filter(|g| g.approach == Approach::VectorizedCache).collect();
        assert_eq!(cached.len(), 4);
        assert!(cached.last().unwrap().cumulative_cache_hits > 0);
        for w in cached.windows(2) {
            assert!(w[1].best_fitness <= w[0].best_fitness);
        }
        let it = r.fitness_of(Approach::Iterative, 8).unwrap();
        let vc = r.fitness_of(Approach::VectorizedCache, 8).unwrap();
        assert_eq!(it.len(), vc.len());
        assert!(generations_csv(&r).lines().count() == 1 + 3 * 4);
    }

    #[test]
    fn plot_rows_and_axis_labels() {
        let mut r = BenchResult::default();
        for a in Approach::ALL {
            for side in [64, 128, 256, 512, 1024, 2048] {
                r.cells.push(CellResult { approach: a, side, seconds: vec![side as f64 * 1e-3, side as f64 * 2e-3], dnf: false });
            }
        }
        let tsv = plot_tsv(&r);
        assert_eq!(tsv.lines().count(), 1 + 18);
        let svg = plot_svg(&r);
        assert!(svg.contains(">4,096<") && svg.contains(">4,194,304<"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(thousands(1_048_576), "1,048,576");
        assert_eq!(thousands(999), "999");
    }

    #[test]
    fn cell_statistics() {
        let c = CellResult { approach: Approach::Iterative, side: 4, seconds: vec![1.0, 3.0], dnf: false };
        assert_eq!(c.avg(), Some(2.0));
        assert!((c.std().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }
}
