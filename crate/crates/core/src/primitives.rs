//! The operator table: thirty built-in primitives with their protection
//! rules, plus a registry that accepts user-defined operators.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::math;
use rayon::prelude::*;

use crate::tensor::{map_elementwise, DomainSpec, Tensor, TensorError, CHUNK};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrimitiveError {
    #[error("operator `{0}` is already registered")]
    Duplicate(String),
    #[error("operator `{0}` must take at least one argument")]
    ZeroArity(String),
    #[error("operator name `{0}` is not a valid identifier")]
    BadName(String),
    #[error("unknown operator `{0}`")]
    Unknown(String),
    #[error("`{name}` expects {expected} arguments, got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Number of arguments an operator takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Fixed(usize),
    /// One source tensor plus one coordinate tensor per domain axis.
    RankPlusOne,
}

impl Arity {
    pub fn resolve(self, rank: usize) -> usize {
        match self {
            Arity::Fixed(n) => n,
            Arity::RankPlusOne => rank + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Elementwise,
    Spatial,
}

/// Every operator shipped with the engine, keyed by its short name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Add,
    Sub,
    Mult,
    Div,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Pow,
    Min,
    Max,
    Mdist,
    Neg,
    Sqrt,
    Sign,
    Abs,
    Clip,
    Mod,
    Frac,
    If,
    Or,
    Xor,
    And,
    Warp,
    Step,
    Sstep,
    Sstepp,
    Len,
    Lerp,
}

impl Builtin {
    pub const ALL: [Builtin; 30] = [
        Builtin::Add,
        Builtin::Sub,
        Builtin::Mult,
        Builtin::Div,
        Builtin::Sin,
        Builtin::Cos,
        Builtin::Tan,
        Builtin::Exp,
        Builtin::Log,
        Builtin::Pow,
        Builtin::Min,
        Builtin::Max,
        Builtin::Mdist,
        Builtin::Neg,
        Builtin::Sqrt,
        Builtin::Sign,
        Builtin::Abs,
        Builtin::Clip,
        Builtin::Mod,
        Builtin::Frac,
        Builtin::If,
        Builtin::Or,
        Builtin::Xor,
        Builtin::And,
        Builtin::Warp,
        Builtin::Step,
        Builtin::Sstep,
        Builtin::Sstepp,
        Builtin::Len,
        Builtin::Lerp,
    ];

    pub fn name(self) -> &'static str {
        use Builtin::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mult => "mult",
            Div => "div",
            Sin => "sin",
            Cos => "cos",
            Tan => "tan",
            Exp => "exp",
            Log => "log",
            Pow => "pow",
            Min => "min",
            Max => "max",
            Mdist => "mdist",
            Neg => "neg",
            Sqrt => "sqrt",
            Sign => "sign",
            Abs => "abs",
            Clip => "clip",
            Mod => "mod",
            Frac => "frac",
            If => "if",
            Or => "or",
            Xor => "xor",
            And => "and",
            Warp => "warp",
            Step => "step",
            Sstep => "sstep",
            Sstepp => "sstepp",
            Len => "len",
            Lerp => "lerp",
        }
    }

    pub fn arity(self) -> Arity {
        use Builtin::*;
        match self {
            Sin | Cos | Tan | Exp | Log | Neg | Sqrt | Sign | Abs | Frac | Step | Sstep | Sstepp => {
                Arity::Fixed(1)
            }
            Add | Sub | Mult | Div | Pow | Min | Max | Mdist | Mod | Or | Xor | And | Len => {
                Arity::Fixed(2)
            }
            Clip | If | Lerp => Arity::Fixed(3),
            Warp => Arity::RankPlusOne,
        }
    }

    pub fn kind(self) -> Kind {
        match self {
            Builtin::Warp => Kind::Spatial,
            _ => Kind::Elementwise,
        }
    }

    /// Scalar semantics shared by both evaluation engines. `None` for warp,
    /// which has no per-point meaning.
    pub fn scalar(self, args: &[f32]) -> Option<f32> {
        use Builtin::*;
        let a = |i: usize| args[i];
        Some(match self {
            Add => a(0) + a(1),
            Sub => a(0) - a(1),
            Mult => a(0) * a(1),
            Div => ops::div(a(0), a(1)),
            Sin => math::sin_pi(a(0)),
            Cos => math::cos_pi(a(0)),
            Tan => ops::tan(a(0)),
            Exp => math::exp(a(0)),
            Log => ops::log(a(0)),
            Pow => ops::pow(a(0), a(1)),
            Min => a(0).min(a(1)),
            Max => a(0).max(a(1)),
            Mdist => ops::mdist(a(0), a(1)),
            Neg => -a(0),
            Sqrt => ops::sqrt(a(0)),
            Sign => ops::sign(a(0)),
            Abs => a(0).abs(),
            Clip => ops::clip(a(0), a(1), a(2)),
            Mod => ops::modulo(a(0), a(1)),
            Frac => ops::frac(a(0)),
            If => ops::select(a(0), a(1), a(2)),
            Or => ops::bit_or(a(0), a(1)),
            Xor => ops::bit_xor(a(0), a(1)),
            And => ops::bit_and(a(0), a(1)),
            Warp => return None,
            Step => ops::step(a(0)),
            Sstep => ops::sstep(a(0)),
            Sstepp => ops::sstepp(a(0)),
            Len => ops::len(a(0), a(1)),
            Lerp => ops::lerp(a(0), a(1), a(2)),
        })
    }

    /// Whole-tensor application through the same slice kernels the blocked
    /// evaluator uses, split into chunks across the thread pool.
    pub fn apply(self, args: Vec<Arc<Tensor>>, domain: &DomainSpec) -> Result<Tensor, PrimitiveError> {
        let expected = self.arity().resolve(domain.rank());
        if args.len() != expected {
            return Err(PrimitiveError::Arity {
                name: self.name().into(),
                expected,
                got: args.len(),
            });
        }
        let refs: Vec<&Tensor> = args.iter().map(|a| a.as_ref()).collect();
        if self == Builtin::Warp {
            return Ok(warp(refs[0], &refs[1..], domain)?);
        }
        for a in &refs[1..] {
            refs[0].check_same_shape(a)?;
        }
        let mut data = vec![0.0f32; refs[0].len()];
        data.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
            let base = c * CHUNK;
            let slices: Vec<&[f32]> = refs.iter().map(|t| &t.data()[base..base + out.len()]).collect();
            self.apply_slices(&slices, out);
        });
        Ok(Tensor::new(refs[0].shape().to_vec(), data)?)
    }
}

impl Builtin {
    /// Applies the operator to equally long argument slices, writing `out`.
    /// Returns `false` for spatial operators.
    pub(crate) fn apply_slices(self, args: &[&[f32]], out: &mut [f32]) -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            // Wider registers only; no FMA, so every variant rounds the same.
            if std::arch::is_x86_feature_detected!("avx512f") {
                return unsafe { self.slices_avx512(args, out) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                return unsafe { self.slices_avx2(args, out) };
            }
        }
        self.slices_generic(args, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx2")]
    unsafe fn slices_avx512(self, args: &[&[f32]], out: &mut [f32]) -> bool {
        self.slices_generic(args, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn slices_avx2(self, args: &[&[f32]], out: &mut [f32]) -> bool {
        self.slices_generic(args, out)
    }

    #[inline(always)]
    fn slices_generic(self, args: &[&[f32]], out: &mut [f32]) -> bool {
        use Builtin::*;
        macro_rules! un {
            ($f:expr) => {{
                let f = $f;
                for (o, &x) in out.iter_mut().zip(args[0]) {
                    *o = f(x);
                }
            }};
        }
        macro_rules! bin {
            ($f:expr) => {{
                let f = $f;
                for ((o, &x), &y) in out.iter_mut().zip(args[0]).zip(args[1]) {
                    *o = f(x, y);
                }
            }};
        }
        macro_rules! tern {
            ($f:expr) => {{
                let f = $f;
                for (((o, &x), &y), &z) in out.iter_mut().zip(args[0]).zip(args[1]).zip(args[2]) {
                    *o = f(x, y, z);
                }
            }};
        }
        match self {
            Add => bin!(|x, y| x + y),
            Sub => bin!(|x, y| x - y),
            Mult => bin!(|x, y| x * y),
            Div => bin!(ops::div),
            Sin => un!(math::sin_pi),
            Cos => un!(math::cos_pi),
            Tan => un!(ops::tan),
            Exp => un!(math::exp),
            Log => un!(ops::log),
            Pow => bin!(ops::pow),
            Min => bin!(f32::min),
            Max => bin!(f32::max),
            Mdist => bin!(ops::mdist),
            Neg => un!(|x: f32| -x),
            Sqrt => un!(ops::sqrt),
            Sign => un!(ops::sign),
            Abs => un!(f32::abs),
            Clip => tern!(ops::clip),
            Mod => bin!(ops::modulo),
            Frac => un!(ops::frac),
            If => tern!(ops::select),
            Or => bin!(ops::bit_or),
            Xor => bin!(ops::bit_xor),
            And => bin!(ops::bit_and),
            Warp => return false,
            Step => un!(ops::step),
            Sstep => un!(ops::sstep),
            Sstepp => un!(ops::sstepp),
            Len => bin!(ops::len),
            Lerp => tern!(ops::lerp),
        }
        true
    }
}

/// Scalar definitions of the protected and composite operators.
pub mod ops {
    use crate::math;

    #[inline(always)]
    pub fn div(x: f32, y: f32) -> f32 {
        if y == 0.0 {
            0.0
        } else {
            x / y
        }
    }

    #[inline(always)]
    pub fn tan(x: f32) -> f32 {
        math::sin_pi(x) / math::cos_pi(x)
    }

    /// Non-positive arguments (and NaN) map to -1.
    #[inline(always)]
    pub fn log(x: f32) -> f32 {
        let v = math::ln_positive(x);
        if x > 0.0 {
            v
        } else {
            -1.0
        }
    }

    /// `|x|^y`, and 0 when both are 0.
    #[inline]
    pub fn pow(x: f32, y: f32) -> f32 {
        if x == 0.0 && y == 0.0 {
            0.0
        } else {
            x.abs().powf(y)
        }
    }

    #[inline(always)]
    pub fn mdist(x: f32, y: f32) -> f32 {
        (x + y) * 0.5
    }

    #[inline(always)]
    pub fn sqrt(x: f32) -> f32 {
        if x >= 0.0 {
            x.sqrt()
        } else {
            0.0
        }
    }

    #[inline(always)]
    pub fn sign(x: f32) -> f32 {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    #[inline(always)]
    pub fn clip(x: f32, y: f32, z: f32) -> f32 {
        z.min(x).max(y)
    }

    /// Floored modulo: the result takes the sign of `y`. Zero divisor gives 0.
    #[inline(always)]
    pub fn modulo(x: f32, y: f32) -> f32 {
        if y == 0.0 {
            return 0.0;
        }
        let r = x % y;
        if r != 0.0 && ((r < 0.0) != (y < 0.0)) {
            r + y
        } else {
            r
        }
    }

    /// Largest `f32` strictly below 1.
    const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

    /// `x - floor(x)`, kept inside `[0, 1)` when rounding would give 1.
    #[inline(always)]
    pub fn frac(x: f32) -> f32 {
        let f = x - x.floor();
        if f >= 1.0 {
            BELOW_ONE
        } else {
            f
        }
    }

    #[inline(always)]
    pub fn select(x: f32, y: f32, z: f32) -> f32 {
        if x >= 0.0 {
            y
        } else {
            z
        }
    }

    /// Truncation toward zero, saturating at the `i32` range.
    #[inline(always)]
    fn to_int(x: f32) -> i32 {
        x as i32
    }

    #[inline(always)]
    pub fn bit_or(x: f32, y: f32) -> f32 {
        (to_int(x) | to_int(y)) as f32
    }

    #[inline(always)]
    pub fn bit_xor(x: f32, y: f32) -> f32 {
        (to_int(x) ^ to_int(y)) as f32
    }

    #[inline(always)]
    pub fn bit_and(x: f32, y: f32) -> f32 {
        (to_int(x) & to_int(y)) as f32
    }

    #[inline(always)]
    pub fn step(x: f32) -> f32 {
        if x < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    #[inline(always)]
    pub fn sstep(x: f32) -> f32 {
        let x = x as f64;
        (x * x * (3.0 - 2.0 * x)) as f32
    }

    #[inline(always)]
    pub fn sstepp(x: f32) -> f32 {
        // f64 avoids the cancellation inside the bracket near x = 1.25
        let x = x as f64;
        (x * x * x * (x * (6.0 * x - 15.0) + 10.0)) as f32
    }

    #[inline(always)]
    pub fn len(x: f32, y: f32) -> f32 {
        let (x, y) = (x as f64, y as f64);
        (x * x + y * y).sqrt() as f32
    }

    #[inline(always)]
    pub fn lerp(x: f32, y: f32, z: f32) -> f32 {
        let (x, y) = (x as f64, y as f64);
        (x + (y - x) * frac(z) as f64) as f32
    }
}

/// Gathers `source` at the grid points named by `coords` (one tensor per
/// axis, in domain coordinates). Out-of-range coordinates clamp to the edge.
pub fn warp(source: &Tensor, coords: &[&Tensor], domain: &DomainSpec) -> Result<Tensor, TensorError> {
    let rank = domain.rank();
    if coords.len() != rank {
        return Err(TensorError::InvalidDomain(format!(
            "warp needs {rank} coordinate tensors, got {}",
            coords.len()
        )));
    }
    if source.shape() != domain.resolution() {
        return Err(TensorError::ShapeMismatch(source.shape().to_vec(), domain.resolution().to_vec()));
    }
    for c in coords {
        source.check_same_shape(c)?;
    }
    let res = domain.resolution();
    let lo = domain.range_lo();
    let span = domain.range_hi() - domain.range_lo();
    let strides: Vec<usize> = (0..rank).map(|d| res[d + 1..].iter().product()).collect();
    let data = (0..source.len())
        .map(|p| {
            let mut offset = 0;
            for d in 0..rank {
                let max = (res[d] - 1) as f32;
                let t = ((coords[d].data()[p] - lo) / span * max).round();
                // NaN fails both comparisons and lands on index 0.
                let idx = if t >= max { max } else if t > 0.0 { t } else { 0.0 };
                offset += idx as usize * strides[d];
            }
            source.data()[offset]
        })
        .collect();
    Tensor::new(source.shape().to_vec(), data)
}

pub type ScalarFn = Arc<dyn Fn(&[f32]) -> f32 + Send + Sync>;
pub type SpatialFn = Arc<dyn Fn(&[&Tensor], &DomainSpec) -> Result<Tensor, TensorError> + Send + Sync>;

/// How an operator computes its result.
#[derive(Clone)]
pub enum Kernel {
    Builtin(Builtin),
    /// User operator defined pointwise; vectorized through `map_elementwise`.
    Elementwise(ScalarFn),
    /// User operator that needs the whole tensor (and the domain).
    Spatial(SpatialFn),
}

/// A named operator with its arity and implementation.
#[derive(Clone)]
pub struct Primitive {
    name: String,
    arity: Arity,
    kernel: Kernel,
}

impl fmt::Debug for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Primitive")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("kind", &self.kind())
            .finish()
    }
}

impl Primitive {
    pub fn builtin(op: Builtin) -> Self {
        Self { name: op.name().to_string(), arity: op.arity(), kernel: Kernel::Builtin(op) }
    }

    pub fn elementwise<F>(name: impl Into<String>, arity: usize, f: F) -> Self
    where
        F: Fn(&[f32]) -> f32 + Send + Sync + 'static,
    {
        Self { name: name.into(), arity: Arity::Fixed(arity), kernel: Kernel::Elementwise(Arc::new(f)) }
    }

    pub fn spatial<F>(name: impl Into<String>, arity: Arity, f: F) -> Self
    where
        F: Fn(&[&Tensor], &DomainSpec) -> Result<Tensor, TensorError> + Send + Sync + 'static,
    {
        Self { name: name.into(), arity, kernel: Kernel::Spatial(Arc::new(f)) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn arity_for(&self, rank: usize) -> usize {
        self.arity.resolve(rank)
    }

    pub fn kind(&self) -> Kind {
        match &self.kernel {
            Kernel::Builtin(b) => b.kind(),
            Kernel::Elementwise(_) => Kind::Elementwise,
            Kernel::Spatial(_) => Kind::Spatial,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Pointwise evaluation; `None` for spatial operators.
    #[inline]
    pub fn apply_scalar(&self, args: &[f32]) -> Option<f32> {
        match &self.kernel {
            Kernel::Builtin(b) => b.scalar(args),
            Kernel::Elementwise(f) => Some(f(args)),
            Kernel::Spatial(_) => None,
        }
    }

    /// Applies an elementwise operator to one block of points. Returns
    /// `false` for spatial operators.
    pub(crate) fn apply_slices(&self, args: &[&[f32]], out: &mut [f32]) -> bool {
        match &self.kernel {
            Kernel::Builtin(b) => b.apply_slices(args, out),
            Kernel::Elementwise(f) => {
                let mut scratch = vec![0.0f32; args.len()];
                for (k, o) in out.iter_mut().enumerate() {
                    for (s, a) in scratch.iter_mut().zip(args) {
                        *s = a[k];
                    }
                    *o = f(&scratch);
                }
                true
            }
            Kernel::Spatial(_) => false,
        }
    }

    /// Whole-domain evaluation over fully evaluated argument tensors.
    pub fn apply(&self, args: Vec<Arc<Tensor>>, domain: &DomainSpec) -> Result<Tensor, PrimitiveError> {
        let expected = self.arity_for(domain.rank());
        if args.len() != expected {
            return Err(PrimitiveError::Arity { name: self.name.clone(), expected, got: args.len() });
        }
        match &self.kernel {
            Kernel::Builtin(b) => b.apply(args, domain),
            Kernel::Elementwise(f) => {
                let refs: Vec<&Tensor> = args.iter().map(|a| a.as_ref()).collect();
                Ok(map_elementwise(|v| f(v), &refs)?)
            }
            Kernel::Spatial(f) => {
                let refs: Vec<&Tensor> = args.iter().map(|a| a.as_ref()).collect();
                Ok(f(&refs, domain)?)
            }
        }
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Registry of operators by name, in registration order.
#[derive(Clone, Debug)]
pub struct PrimitiveSet {
    entries: IndexMap<String, Arc<Primitive>>,
}

impl Default for PrimitiveSet {
    /// All thirty built-in operators.
    fn default() -> Self {
        let mut set = Self::empty();
        for op in Builtin::ALL {
            set.register(Primitive::builtin(op)).expect("built-in names are unique");
        }
        set
    }
}

impl PrimitiveSet {
    pub fn empty() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn register(&mut self, p: Primitive) -> Result<(), PrimitiveError> {
        if !is_identifier(&p.name) {
            return Err(PrimitiveError::BadName(p.name));
        }
        if self.entries.contains_key(&p.name) {
            return Err(PrimitiveError::Duplicate(p.name));
        }
        if p.arity == Arity::Fixed(0) {
            return Err(PrimitiveError::ZeroArity(p.name));
        }
        self.entries.insert(p.name.clone(), Arc::new(p));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Primitive>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Primitive>> {
        self.entries.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// A new set holding only `names`, in the order given.
    pub fn restrict<S: AsRef<str>>(&self, names: &[S]) -> Result<PrimitiveSet, PrimitiveError> {
        let mut out = PrimitiveSet::empty();
        for name in names {
            let name = name.as_ref();
            let p = self.get(name).ok_or_else(|| PrimitiveError::Unknown(name.to_string()))?;
            if out.entries.insert(name.to_string(), p.clone()).is_some() {
                return Err(PrimitiveError::Duplicate(name.to_string()));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(n: usize) -> DomainSpec {
        DomainSpec::with_resolution(vec![n]).unwrap()
    }

    fn apply(name: &str, args: &[&[f32]]) -> Vec<f32> {
        let set = PrimitiveSet::default();
        let p = set.get(name).unwrap();
        let n = args[0].len();
        let tensors = args.iter().map(|a| Arc::new(Tensor::from_vec(a.to_vec()))).collect();
        p.apply(tensors, &dom(n)).unwrap().into_data()
    }

    #[test]
    fn default_set_has_thirty_unique_operators() {
        let set = PrimitiveSet::default();
        assert_eq!(set.len(), 30);
        for name in [
            "add", "sub", "mult", "div", "sin", "cos", "tan", "exp", "log", "pow", "min", "max",
            "mdist", "neg", "sqrt", "sign", "abs", "clip", "mod", "frac", "if", "or", "xor", "and",
            "warp", "step", "sstep", "sstepp", "len", "lerp",
        ] {
            assert!(set.contains(name), "{name}");
        }
    }

    #[test]
    fn arithmetic() {
        assert_eq!(apply("div", &[&[1.0, 4.0], &[0.0, 2.0]]), vec![0.0, 2.0]);
        assert_eq!(apply("sub", &[&[3.0, -2.5], &[3.0, -2.5]]), vec![0.0, 0.0]);
        assert_eq!(apply("mult", &[&[2.0, 3.0], &[4.0, 5.0]]), vec![8.0, 15.0]);
        assert_eq!(apply("add", &[&[2.0, 3.0], &[4.0, 5.0]]), vec![6.0, 8.0]);
    }

    #[test]
    fn trigonometry_takes_half_turns() {
        assert_eq!(apply("sin", &[&[0.5]]), vec![1.0]);
        assert_eq!(apply("cos", &[&[0.0]]), vec![1.0]);
        let t = apply("tan", &[&[0.25]])[0];
        assert!((t as f64 - (std::f64::consts::PI / 4.0).tan()).abs() < 1e-6);
    }

    #[test]
    fn powers_and_protection() {
        assert_eq!(apply("log", &[&[-2.0, 0.0]]), vec![-1.0, -1.0]);
        assert_eq!(apply("pow", &[&[0.0, -2.0], &[0.0, 2.0]]), vec![0.0, 4.0]);
        assert_eq!(apply("sqrt", &[&[-4.0, 4.0]]), vec![0.0, 2.0]);
        assert_eq!(apply("exp", &[&[0.0, 1000.0]]), vec![1.0, f32::INFINITY]);
        // |x|^y keeps fractional exponents of negative bases real
        assert_eq!(apply("pow", &[&[-4.0], &[0.5]]), vec![2.0]);
    }

    #[test]
    fn comparisons() {
        assert_eq!(apply("min", &[&[1.0, 5.0], &[3.0, 2.0]]), vec![1.0, 2.0]);
        assert_eq!(apply("max", &[&[1.0, 5.0], &[3.0, 2.0]]), vec![3.0, 5.0]);
        assert_eq!(apply("mdist", &[&[1.0], &[3.0]]), vec![2.0]);
    }

    #[test]
    fn unary_shape_ops() {
        assert_eq!(apply("sign", &[&[-3.0, 0.0, 7.0]]), vec![-1.0, 0.0, 1.0]);
        assert_eq!(apply("frac", &[&[1.25, -0.25]]), vec![0.25, 0.75]);
        assert_eq!(apply("abs", &[&[-2.0]]), vec![2.0]);
        assert_eq!(apply("neg", &[&[-2.0, 3.0]]), vec![2.0, -3.0]);
        let f = apply("frac", &[&[-1e-10, 3.0, -7.0]]);
        assert!(f[0] < 1.0 && f[0] > 0.99);
        assert_eq!(&f[1..], &[0.0, 0.0]);
    }

    #[test]
    fn clip_follows_min_then_max() {
        assert_eq!(apply("clip", &[&[5.0], &[0.0], &[1.0]]), vec![1.0]);
        assert_eq!(apply("clip", &[&[0.5], &[0.0], &[1.0]]), vec![0.5]);
        assert_eq!(apply("clip", &[&[0.0], &[2.0], &[1.0]]), vec![2.0]);
    }

    #[test]
    fn floored_modulo() {
        assert_eq!(apply("mod", &[&[5.0, 5.0, -1.0, 1.0], &[3.0, 0.0, 3.0, -3.0]]), vec![2.0, 0.0, 2.0, -2.0]);
    }

    #[test]
    fn conditional_threshold_is_non_negative() {
        assert_eq!(apply("if", &[&[1.0, -1.0, 0.0], &[10.0; 3], &[20.0; 3]]), vec![10.0, 20.0, 10.0]);
    }

    #[test]
    fn bitwise_truncates() {
        assert_eq!(apply("and", &[&[6.9], &[3.2]]), vec![2.0]);
        assert_eq!(apply("xor", &[&[5.0], &[5.0]]), vec![0.0]);
        assert_eq!(apply("or", &[&[4.0], &[1.0]]), vec![5.0]);
        assert_eq!(apply("and", &[&[-6.9], &[-1.0]]), vec![-6.0]);
    }

    #[test]
    fn step_family() {
        assert_eq!(apply("step", &[&[-0.1, 0.0]]), vec![-1.0, 1.0]);
        assert_eq!(apply("sstep", &[&[0.5]]), vec![0.5]);
        assert_eq!(apply("sstepp", &[&[1.0]]), vec![1.0]);
        // no clamping outside [0, 1]
        assert_eq!(apply("sstep", &[&[2.0]]), vec![-4.0]);
    }

    #[test]
    fn color_ops() {
        assert_eq!(apply("len", &[&[3.0], &[4.0]]), vec![5.0]);
        assert_eq!(apply("lerp", &[&[0.0], &[10.0], &[0.5]]), vec![5.0]);
        assert_eq!(apply("lerp", &[&[2.0], &[4.0], &[1.5]]), vec![3.0]);
    }

    #[test]
    fn warp_gathers_by_coordinate() {
        let d = dom(3);
        let src = Tensor::from_vec(vec![10.0, 20.0, 30.0]);
        let coords = Tensor::from_vec(vec![1.0, -1.0, 0.0]);
        assert_eq!(warp(&src, &[&coords], &d).unwrap().data(), &[30.0, 10.0, 20.0]);
        let far = Tensor::from_vec(vec![7.0, -9.0, f32::NAN]);
        assert_eq!(warp(&src, &[&far], &d).unwrap().data(), &[30.0, 10.0, 10.0]);
    }

    #[test]
    fn warp_identity_and_constant_gather() {
        let d = DomainSpec::with_resolution(vec![5, 4]).unwrap();
        let coords = crate::tensor::make_coordinate_tensors(&d).unwrap();
        let src = Tensor::new(vec![5, 4], (0..20).map(|v| v as f32).collect()).unwrap();
        let same = warp(&src, &[&coords[0], &coords[1]], &d).unwrap();
        assert_eq!(same, src);
        let lo = crate::tensor::constant_tensor(-1.0, &d);
        let gathered = warp(&src, &[&lo, &lo], &d).unwrap();
        assert!(gathered.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warp_arity_is_rank_plus_one() {
        let set = PrimitiveSet::default();
        let w = set.get("warp").unwrap();
        assert_eq!(w.arity_for(2), 3);
        let d = DomainSpec::with_resolution(vec![2, 2]).unwrap();
        let t = Arc::new(Tensor::filled(&[2, 2], 0.0));
        assert!(matches!(
            w.apply(vec![t.clone(), t.clone()], &d),
            Err(PrimitiveError::Arity { expected: 3, got: 2, .. })
        ));
    }

    #[test]
    fn registration_rules() {
        let mut set = PrimitiveSet::default();
        set.register(Primitive::elementwise("cube", 1, |a| a[0] * a[0] * a[0])).unwrap();
        assert!(set.contains("cube"));
        assert_eq!(
            set.register(Primitive::elementwise("add", 2, |a| a[0])).unwrap_err(),
            PrimitiveError::Duplicate("add".into())
        );
        assert_eq!(
            set.register(Primitive::elementwise("zero", 0, |_| 0.0)).unwrap_err(),
            PrimitiveError::ZeroArity("zero".into())
        );
        assert!(matches!(
            set.register(Primitive::elementwise("1bad", 1, |a| a[0])),
            Err(PrimitiveError::BadName(_))
        ));
        let cube = set.get("cube").unwrap();
        let out = cube.apply(vec![Arc::new(Tensor::from_vec(vec![2.0, -1.0]))], &dom(2)).unwrap();
        assert_eq!(out.data(), &[8.0, -1.0]);
        assert_eq!(cube.apply_scalar(&[3.0]), Some(27.0));
    }

    #[test]
    fn restrict_keeps_order_and_rejects_unknown() {
        let set = PrimitiveSet::default();
        let r = set.restrict(&["sin", "add"]).unwrap();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["sin", "add"]);
        assert!(matches!(set.restrict(&["nope"]), Err(PrimitiveError::Unknown(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frac_in_unit_interval(x in proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO) {
                let f = ops::frac(x);
                prop_assert!((0.0..1.0).contains(&f), "frac({}) = {}", x, f);
            }

            #[test]
            fn bitwise_round_trips_integers(v in i32::MIN..=i32::MAX) {
                let x = v as f32;
                // only integer-valued floats inside the i32 range
                prop_assume!((x as f64) < 2147483648.0);
                prop_assert_eq!(ops::bit_or(x, 0.0), x);
                prop_assert_eq!(ops::bit_and(x, x), x);
                prop_assert_eq!(ops::bit_xor(x, 0.0), x);
            }

            #[test]
            fn every_builtin_is_total(x in -10f32..10.0, y in -10f32..10.0, z in -10f32..10.0) {
                for op in Builtin::ALL {
                    if op == Builtin::Warp { continue; }
                    let v = op.scalar(&[x, y, z]).unwrap();
                    prop_assert!(!v.is_nan(), "{:?}({}, {}, {}) is NaN", op, x, y, z);
                    if !matches!(op, Builtin::Exp | Builtin::Tan | Builtin::Pow | Builtin::Div) {
                        prop_assert!(v.is_finite(), "{:?}({}, {}, {}) = {}", op, x, y, z, v);
                    }
                }
            }
        }
    }
}
