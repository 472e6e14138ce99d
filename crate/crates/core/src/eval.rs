//! Vectorized whole-domain evaluation with a bounded subtree cache, the
//! per-point iterative interpreter used as a baseline, and population
//! fitness evaluation.

use std::collections::{BTreeMap, HashMap};
use std::ops::AddAssign;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Individual, NodeKind, Tree};
use crate::primitives::{Kind, PrimitiveError};
use crate::tensor::{make_coordinate_tensors, rmse, DomainSpec, Tensor, TensorError};

pub const DEFAULT_CACHE_BUDGET: usize = 512 * 1024 * 1024;
pub const DEFAULT_CACHE_MIN_NODES: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("operator `{0}` is spatial and cannot be evaluated point by point")]
    Unsupported(String),
    #[error(transparent)]
    Primitive(#[from] PrimitiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineKind {
    Vectorized,
    Iterative,
}

impl EngineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Vectorized => "vectorized",
            EngineKind::Iterative => "iterative",
        }
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vectorized" => Ok(EngineKind::Vectorized),
            "iterative" => Ok(EngineKind::Iterative),
            other => Err(format!("unknown engine `{other}` (expected vectorized or iterative)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub wall_time: Duration,
    pub primitive_applications: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_evictions: u64,
}

impl AddAssign for EvalStats {
    fn add_assign(&mut self, o: Self) {
        self.wall_time += o.wall_time;
        self.primitive_applications += o.primitive_applications;
        self.cache_hits += o.cache_hits;
        self.cache_misses += o.cache_misses;
        self.cache_evictions += o.cache_evictions;
    }
}

struct CacheEntry {
    tree: Tree,
    tensor: Arc<Tensor>,
    last_use: u64,
}

/// Subtree results keyed by structural hash, bounded by total tensor bytes
/// and evicted least-recently-used first.
///
/// A hit also compares the stored tree structurally, so a hash collision
/// degrades to a miss rather than a wrong result.
pub struct EvalCache {
    entries: HashMap<u64, CacheEntry>,
    recency: BTreeMap<u64, u64>,
    byte_budget: usize,
    bytes: usize,
    min_nodes: usize,
    clock: u64,
    domain: Option<DomainSpec>,
    hits: u64,
    misses: u64,
    evictions: u64,
}

impl EvalCache {
    pub fn new(byte_budget: usize) -> Self {
        Self::with_min_nodes(byte_budget, DEFAULT_CACHE_MIN_NODES)
    }

    /// `min_nodes` is the smallest subtree size worth caching.
    pub fn with_min_nodes(byte_budget: usize, min_nodes: usize) -> Self {
        Self {
            entries: HashMap::new(),
            recency: BTreeMap::new(),
            byte_budget,
            bytes: 0,
            min_nodes: min_nodes.max(1),
            clock: 0,
            domain: None,
            hits: 0,
            misses: 0,
            evictions: 0,
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn byte_budget(&self) -> usize {
        self.byte_budget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_nodes(&self) -> usize {
        self.min_nodes
    }

    /// Drops all entries; counters are kept.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.recency.clear();
        self.bytes = 0;
    }

    /// Binds the cache to a domain, clearing it if the domain changed.
    fn bind(&mut self, domain: &DomainSpec) {
        if self.domain.as_ref() != Some(domain) {
            self.clear();
            self.domain = Some(domain.clone());
        }
    }

    fn eligible(&self, tree: &Tree) -> bool {
        !tree.is_terminal() && tree.node_count() >= self.min_nodes
    }

    fn lookup(&mut self, tree: &Tree) -> Option<Arc<Tensor>> {
        self.clock += 1;
        let clock = self.clock;
        let key = tree.subtree_hash();
        match self.entries.get_mut(&key) {
            Some(e) if e.tree == *tree => {
                self.recency.remove(&e.last_use);
                e.last_use = clock;
                self.recency.insert(clock, key);
                self.hits += 1;
                Some(e.tensor.clone())
            }
            _ => {
                self.misses += 1;
                None
            }
        }
    }

    fn insert(&mut self, tree: &Tree, tensor: Arc<Tensor>) {
        let size = tensor.bytes();
        if size > self.byte_budget {
            return;
        }
        let key = tree.subtree_hash();
        if let Some(old) = self.entries.remove(&key) {
            self.recency.remove(&old.last_use);
            self.bytes -= old.tensor.bytes();
        }
        while self.bytes + size > self.byte_budget {
            let Some((_, victim)) = self.recency.pop_first() else { break };
            if let Some(e) = self.entries.remove(&victim) {
                self.bytes -= e.tensor.bytes();
                self.evictions += 1;
            }
        }
        self.clock += 1;
        self.recency.insert(self.clock, key);
        self.entries.insert(key, CacheEntry { tree: tree.clone(), tensor, last_use: self.clock });
        self.bytes += size;
    }
}

/// Evaluates trees over one fixed domain. Coordinate tensors are built once
/// and shared by every variable leaf.
pub struct Evaluator {
    domain: DomainSpec,
    coords: Vec<Arc<Tensor>>,
    axis_coords: Vec<Vec<f32>>,
}

impl Evaluator {
    pub fn new(domain: &DomainSpec) -> Result<Self, EvalError> {
        let coords = make_coordinate_tensors(domain)?.into_iter().map(Arc::new).collect();
        let axis_coords = (0..domain.rank()).map(|a| domain.axis_coordinates(a)).collect();
        Ok(Self { domain: domain.clone(), coords, axis_coords })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn coordinates(&self) -> &[Arc<Tensor>] {
        &self.coords
    }

    fn check_variables(&self, tree: &Tree) -> Result<(), EvalError> {
        tree.validate(self.domain.rank()).map_err(EvalError::InvalidTree)
    }

    /// Whole-domain evaluation, one primitive application per function node
    /// (fewer on cache hits).
    pub fn eval_vectorized(
        &self,
        tree: &Tree,
        cache: Option<&mut EvalCache>,
    ) -> Result<(Tensor, EvalStats), EvalError> {
        let (t, stats) = self.eval_vectorized_shared(tree, cache)?;
        Ok((Arc::try_unwrap(t).unwrap_or_else(|shared| (*shared).clone()), stats))
    }

    /// Like [`Self::eval_vectorized`] but returns the possibly shared result
    /// without copying it out of the cache.
    pub fn eval_vectorized_shared(
        &self,
        tree: &Tree,
        mut cache: Option<&mut EvalCache>,
    ) -> Result<(Arc<Tensor>, EvalStats), EvalError> {
        self.check_variables(tree)?;
        let start = Instant::now();
        let mut stats = EvalStats::default();
        let (h0, m0, e0) = match cache.as_deref_mut() {
            Some(c) => {
                c.bind(&self.domain);
                (c.hits, c.misses, c.evictions)
            }
            None => (0, 0, 0),
        };
        let out = if cache.is_none() && !has_spatial(tree) {
            stats.primitive_applications = tree.preorder().filter(|n| !n.is_terminal()).count() as u64;
            Arc::new(self.eval_blocked(tree))
        } else {
            self.vec_node(tree, cache.as_deref_mut(), &mut stats)?
        };
        if let Some(c) = cache {
            stats.cache_hits = c.hits - h0;
            stats.cache_misses = c.misses - m0;
            stats.cache_evictions = c.evictions - e0;
        }
        stats.wall_time = start.elapsed();
        Ok((out, stats))
    }

    fn vec_node(
        &self,
        tree: &Tree,
        mut cache: Option<&mut EvalCache>,
        stats: &mut EvalStats,
    ) -> Result<Arc<Tensor>, EvalError> {
        match tree.kind() {
            NodeKind::Variable(i) => Ok(self.coords[*i].clone()),
            NodeKind::Constant(c) => Ok(Arc::new(Tensor::filled(self.domain.resolution(), *c))),
            NodeKind::Call(op, children) => {
                let cacheable = cache.as_ref().is_some_and(|c| c.eligible(tree));
                if cacheable {
                    if let Some(hit) = cache.as_deref_mut().and_then(|c| c.lookup(tree)) {
                        return Ok(hit);
                    }
                }
                let mut args = Vec::with_capacity(children.len());
                for c in children {
                    args.push(self.vec_node(c, cache.as_deref_mut(), stats)?);
                }
                let out = Arc::new(op.apply(args, &self.domain)?);
                stats.primitive_applications += 1;
                if cacheable {
                    if let Some(c) = cache {
                        c.insert(tree, out.clone());
                    }
                }
                Ok(out)
            }
        }
    }

    /// Uncached elementwise evaluation, one block of points at a time so the
    /// intermediates of a whole tree stay in cache. Every operator is still
    /// applied once per block with the same kernels as the tensor path.
    fn eval_blocked(&self, tree: &Tree) -> Tensor {
        let mut data = vec![0.0f32; self.domain.points()];
        data.par_chunks_mut(BLOCK).enumerate().for_each_init(Vec::new, |pool, (b, out)| {
            let start = b * BLOCK;
            match self.block_node(tree, start, out.len(), pool) {
                Block::Borrowed(s) => out.copy_from_slice(s),
                Block::Owned(v) => {
                    out.copy_from_slice(&v);
                    pool.push(v);
                }
            }
        });
        Tensor::new(self.domain.resolution().to_vec(), data).expect("length matches domain")
    }

    fn block_node<'a>(&'a self, tree: &Tree, start: usize, len: usize, pool: &mut Vec<Vec<f32>>) -> Block<'a> {
        let take = |pool: &mut Vec<Vec<f32>>| {
            let mut v = pool.pop().unwrap_or_default();
            v.resize(len, 0.0);
            v
        };
        match tree.kind() {
            NodeKind::Variable(i) => Block::Borrowed(&self.coords[*i].data()[start..start + len]),
            NodeKind::Constant(c) => {
                let mut v = take(pool);
                v.fill(*c);
                Block::Owned(v)
            }
            NodeKind::Call(op, children) => {
                let args: Vec<Block<'a>> = children.iter().map(|c| self.block_node(c, start, len, pool)).collect();
                let mut out = take(pool);
                let refs: Vec<&[f32]> = args.iter().map(Block::as_slice).collect();
                let done = op.apply_slices(&refs, &mut out);
                debug_assert!(done, "spatial operators are excluded before blocking");
                for a in args {
                    if let Block::Owned(v) = a {
                        pool.push(v);
                    }
                }
                Block::Owned(out)
            }
        }
    }

    /// Per-point interpretation: walks the tree once for every grid point.
    pub fn eval_iterative(&self, tree: &Tree) -> Result<(Tensor, EvalStats), EvalError> {
        self.check_variables(tree)?;
        if let Some(op) = tree.preorder().find_map(|n| match n.kind() {
            NodeKind::Call(op, _) if op.kind() == Kind::Spatial => Some(op.name().to_string()),
            _ => None,
        }) {
            return Err(EvalError::Unsupported(op));
        }
        let start = Instant::now();
        let shape = self.domain.resolution();
        let rank = shape.len();
        let total = self.domain.points();
        let mut point = vec![0.0f32; rank];
        let mut index = vec![0usize; rank];
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            for (a, &i) in index.iter().enumerate() {
                point[a] = self.axis_coords[a][i];
            }
            data.push(interpret(tree, &point));
            // odometer increment, last axis fastest
            for a in (0..rank).rev() {
                index[a] += 1;
                if index[a] < shape[a] {
                    break;
                }
                index[a] = 0;
            }
        }
        let function_nodes = tree.preorder().filter(|n| !n.is_terminal()).count() as u64;
        let stats = EvalStats {
            wall_time: start.elapsed(),
            primitive_applications: function_nodes * total as u64,
            ..Default::default()
        };
        Ok((Tensor::new(shape.to_vec(), data)?, stats))
    }

    /// Evaluates with the chosen engine, sharing the result where possible.
    pub fn eval_with(
        &self,
        tree: &Tree,
        engine: EngineKind,
        cache: Option<&mut EvalCache>,
    ) -> Result<(Arc<Tensor>, EvalStats), EvalError> {
        match engine {
            EngineKind::Vectorized => self.eval_vectorized_shared(tree, cache),
            EngineKind::Iterative => self.eval_iterative(tree).map(|(t, s)| (Arc::new(t), s)),
        }
    }

    /// Assigns `rmse(phenotype, target)` to every individual that has no
    /// fitness yet. The cache persists across individuals.
    pub fn eval_population(
        &self,
        population: &mut [Individual],
        target: &Tensor,
        mut cache: Option<&mut EvalCache>,
        engine: EngineKind,
    ) -> Result<EvalStats, EvalError> {
        if target.shape() != self.domain.resolution() {
            return Err(TensorError::ShapeMismatch(target.shape().to_vec(), self.domain.resolution().to_vec()).into());
        }
        let start = Instant::now();
        let mut total = EvalStats::default();
        for ind in population.iter_mut().filter(|i| !i.is_valid()) {
            let (phenotype, stats) = self.eval_with(&ind.tree, engine, cache.as_deref_mut())?;
            ind.fitness = Some(rmse(&phenotype, target)?);
            total += stats;
        }
        total.wall_time = start.elapsed();
        Ok(total)
    }
}

/// Points per block in the uncached vectorized path.
const BLOCK: usize = 4096;

enum Block<'a> {
    Borrowed(&'a [f32]),
    Owned(Vec<f32>),
}

impl Block<'_> {
    fn as_slice(&self) -> &[f32] {
        match self {
            Block::Borrowed(s) => s,
            Block::Owned(v) => v,
        }
    }
}

fn has_spatial(tree: &Tree) -> bool {
    tree.preorder()
        .any(|n| matches!(n.kind(), NodeKind::Call(op, _) if op.kind() == Kind::Spatial))
}

/// Recursive scalar interpreter used by the iterative engine.
fn interpret(tree: &Tree, point: &[f32]) -> f32 {
    match tree.kind() {
        NodeKind::Variable(i) => point[*i],
        NodeKind::Constant(c) => *c,
        NodeKind::Call(op, children) => {
            let mut buf = [0.0f32; 4];
            if children.len() <= buf.len() {
                for (slot, c) in buf.iter_mut().zip(children) {
                    *slot = interpret(c, point);
                }
                op.apply_scalar(&buf[..children.len()]).unwrap_or(f32::NAN)
            } else {
                let args: Vec<f32> = children.iter().map(|c| interpret(c, point)).collect();
                op.apply_scalar(&args).unwrap_or(f32::NAN)
            }
        }
    }
}

/// One-shot vectorized evaluation.
pub fn eval_vectorized(
    tree: &Tree,
    domain: &DomainSpec,
    cache: Option<&mut EvalCache>,
) -> Result<(Tensor, EvalStats), EvalError> {
    Evaluator::new(domain)?.eval_vectorized(tree, cache)
}

/// One-shot iterative evaluation.
pub fn eval_iterative(tree: &Tree, domain: &DomainSpec) -> Result<(Tensor, EvalStats), EvalError> {
    Evaluator::new(domain)?.eval_iterative(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Generator};
    use crate::primitives::PrimitiveSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dom(n: usize) -> DomainSpec {
        DomainSpec::square(n).unwrap()
    }

    fn p(s: &str) -> Tree {
        parse(s, &PrimitiveSet::default(), 2).unwrap()
    }

    #[test]
    fn variable_is_its_coordinate_tensor() {
        let d = dom(3);
        let (t, stats) = eval_vectorized(&p("x"), &d, None).unwrap();
        assert_eq!(t, make_coordinate_tensors(&d).unwrap()[0]);
        assert_eq!(stats.primitive_applications, 0);
    }

    #[test]
    fn doubling() {
        let d = dom(3);
        let (t, _) = eval_vectorized(&p("add(x, x)"), &d, None).unwrap();
        let x = &make_coordinate_tensors(&d).unwrap()[0];
        let doubled: Vec<f32> = x.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(t.data(), &doubled[..]);
    }

    #[test]
    fn iterative_product_matches_exactly() {
        let d = DomainSpec::with_resolution(vec![7, 5]).unwrap();
        let e = Evaluator::new(&d).unwrap();
        let (a, sa) = e.eval_iterative(&p("mult(x, y)")).unwrap();
        let (b, sb) = e.eval_vectorized(&p("mult(x, y)"), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa.primitive_applications, 35);
        assert_eq!(sb.primitive_applications, 1);
    }

    #[test]
    fn iterative_rejects_spatial_operators() {
        let e = Evaluator::new(&dom(4)).unwrap();
        assert!(matches!(e.eval_iterative(&p("add(x, warp(x, y, x))")), Err(EvalError::Unsupported(op)) if op == "warp"));
        assert!(e.eval_vectorized(&p("add(x, warp(x, y, x))"), None).is_ok());
    }

    #[test]
    fn trees_beyond_domain_rank_are_rejected() {
        let e = Evaluator::new(&DomainSpec::with_resolution(vec![4]).unwrap()).unwrap();
        assert!(matches!(e.eval_vectorized(&p("y"), None), Err(EvalError::InvalidTree(_))));
    }

    #[test]
    fn cache_hits_skip_work_and_preserve_results() {
        let d = dom(16);
        let e = Evaluator::new(&d).unwrap();
        let t = p("add(sin(mult(x, y)), sin(mult(x, y)))");
        let mut cache = EvalCache::with_min_nodes(1 << 20, 2);
        let (plain, s0) = e.eval_vectorized(&t, None).unwrap();
        let (cached, s1) = e.eval_vectorized(&t, Some(&mut cache)).unwrap();
        assert_eq!(plain, cached);
        assert_eq!(s0.primitive_applications, 5);
        // second sin(mult(x, y)) is a hit
        assert_eq!(s1.primitive_applications, 3);
        assert_eq!((s1.cache_hits, s1.cache_misses), (1, 3));
        let (again, s2) = e.eval_vectorized(&t, Some(&mut cache)).unwrap();
        assert_eq!(again, plain);
        assert_eq!((s2.primitive_applications, s2.cache_hits, s2.cache_misses), (0, 1, 0));
    }

    #[test]
    fn cache_respects_byte_budget() {
        let d = dom(8); // 256 bytes per tensor
        let e = Evaluator::new(&d).unwrap();
        let mut cache = EvalCache::with_min_nodes(600, 2);
        for s in ["neg(x)", "neg(y)", "sin(x)", "cos(y)"] {
            e.eval_vectorized(&p(s), Some(&mut cache)).unwrap();
            assert!(cache.bytes() <= cache.byte_budget());
        }
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.evictions(), 2);
        // least recently used went first
        let (_, s) = e.eval_vectorized(&p("cos(y)"), Some(&mut cache)).unwrap();
        assert_eq!(s.cache_hits, 1);
        let (_, s) = e.eval_vectorized(&p("neg(x)"), Some(&mut cache)).unwrap();
        assert_eq!(s.cache_hits, 0);
        // tensors larger than the whole budget are never stored
        let mut tiny = EvalCache::with_min_nodes(100, 2);
        e.eval_vectorized(&p("neg(x)"), Some(&mut tiny)).unwrap();
        assert!(tiny.is_empty());
    }

    #[test]
    fn cache_clears_on_domain_change() {
        let mut cache = EvalCache::with_min_nodes(1 << 20, 2);
        let t = p("neg(x)");
        Evaluator::new(&dom(4)).unwrap().eval_vectorized(&t, Some(&mut cache)).unwrap();
        let (out, s) = Evaluator::new(&dom(5)).unwrap().eval_vectorized(&t, Some(&mut cache)).unwrap();
        assert_eq!(s.cache_hits, 0);
        assert_eq!(out.len(), 25);
    }

    #[test]
    fn population_fitness() {
        let d = dom(16);
        let e = Evaluator::new(&d).unwrap();
        let target = e.eval_vectorized(&p("add(mult(x, x), y)"), None).unwrap().0;
        let mut pop = vec![
            Individual::new(p("add(mult(x, x), y)")),
            Individual::new(p("x")),
            Individual::new(p("exp(exp(exp(exp(exp(10)))))")),
        ];
        let stats = e.eval_population(&mut pop, &target, None, EngineKind::Vectorized).unwrap();
        assert!(pop[0].fitness.unwrap() < 1e-5);
        assert!(pop[1].fitness.unwrap() > 0.1);
        assert_eq!(pop[2].fitness, Some(f64::INFINITY));
        assert!(stats.primitive_applications > 0);
        // already evaluated individuals are skipped
        let again = e.eval_population(&mut pop, &target, None, EngineKind::Iterative).unwrap();
        assert_eq!(again.primitive_applications, 0);
    }

    #[test]
    fn engines_agree_on_random_trees() {
        let set = PrimitiveSet::default();
        let mut names: Vec<&str> = set.names().collect();
        names.retain(|n| *n != "warp");
        let active = set.restrict(&names).unwrap();
        let g = Generator::new(&active, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = Evaluator::new(&dom(24)).unwrap();
        for _ in 0..60 {
            let t = g.random_tree(crate::expr::Method::Grow, 1, 6, &mut rng);
            let (a, _) = e.eval_iterative(&t).unwrap();
            let (b, _) = e.eval_vectorized(&t, None).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(x.to_bits() == y.to_bits() || (x - y).abs() <= 1e-4, "{t}: {x} vs {y}");
            }
        }
    }
}
