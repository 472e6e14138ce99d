//! Dense row-major `f32` tensors, coordinate domains and the parallel
//! elementwise machinery every vectorized primitive is built on.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

/// Elements per parallel work unit. Fixed so that reductions see the same
/// partial sums no matter how many worker threads exist.
pub const CHUNK: usize = 16 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidDomain(format!(
                "shape {shape:?} must be non-empty with positive axes"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::LengthMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// Rank-1 tensor, handy in tests.
    pub fn from_vec(data: Vec<f32>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Size of the element buffer in bytes.
    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch(self.shape.clone(), other.shape.clone()));
        }
        Ok(())
    }
}

/// The grid of fitness cases: a resolution per axis and a shared coordinate
/// range, `[-1, 1]` unless stated otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    resolution: Vec<usize>,
    range_lo: f32,
    range_hi: f32,
}

impl DomainSpec {
    pub fn new(resolution: Vec<usize>, range_lo: f32, range_hi: f32) -> Result<Self, TensorError> {
        if resolution.is_empty() {
            return Err(TensorError::InvalidDomain("rank must be at least 1".into()));
        }
        if resolution.contains(&0) {
            return Err(TensorError::InvalidDomain(format!(
                "resolution {resolution:?} has an empty axis"
            )));
        }
        if !(range_lo < range_hi) || !range_lo.is_finite() || !range_hi.is_finite() {
            return Err(TensorError::InvalidDomain(format!(
                "range [{range_lo}, {range_hi}] must be finite with lo < hi"
            )));
        }
        Ok(Self { resolution, range_lo, range_hi })
    }

    /// Domain over the default `[-1, 1]` range.
    pub fn with_resolution(resolution: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(resolution, -1.0, 1.0)
    }

    /// Square rank-2 domain of `side × side` points over `[-1, 1]`.
    pub fn square(side: usize) -> Result<Self, TensorError> {
        Self::with_resolution(vec![side, side])
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn rank(&self) -> usize {
        self.resolution.len()
    }

    pub fn range_lo(&self) -> f32 {
        self.range_lo
    }

    pub fn range_hi(&self) -> f32 {
        self.range_hi
    }

    pub fn points(&self) -> usize {
        self.resolution.iter().product()
    }

    /// `WxH[xC...]` form, as accepted by `FromStr`.
    pub fn resolution_string(&self) -> String {
        self.resolution
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }

    /// Coordinate of grid index `i` along `axis`, endpoints included.
    ///
    /// Computed as `(lo·(n-1-i) + hi·i) / (n-1)` so that mirroring the range
    /// mirrors the grid exactly.
    pub fn axis_coordinate(&self, axis: usize, i: usize) -> f32 {
        let n = self.resolution[axis];
        if n < 2 {
            return self.range_lo;
        }
        let steps = (n - 1) as f64;
        let lo = self.range_lo as f64;
        let hi = self.range_hi as f64;
        ((lo * (steps - i as f64) + hi * i as f64) / steps) as f32
    }

    /// All coordinates along one axis.
    pub fn axis_coordinates(&self, axis: usize) -> Vec<f32> {
        (0..self.resolution[axis])
            .map(|i| self.axis_coordinate(axis, i))
            .collect()
    }
}

impl FromStr for DomainSpec {
    type Err = TensorError;

    /// Parses `64x64`, `128x128x3`, or a single side `256`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let resolution = s
            .split(['x', 'X'])
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    TensorError::InvalidDomain(format!("cannot parse resolution `{s}`"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_resolution(resolution)
    }
}

/// One tensor per axis holding that axis' coordinate at every grid point.
pub fn make_coordinate_tensors(domain: &DomainSpec) -> Result<Vec<Tensor>, TensorError> {
    if let Some(axis) = domain.resolution.iter().position(|&n| n < 2) {
        return Err(TensorError::InvalidDomain(format!(
            "axis {axis} has resolution {} (need at least 2)",
            domain.resolution[axis]
        )));
    }
    let shape = domain.resolution.clone();
    let total = domain.points();
    let mut out = Vec::with_capacity(shape.len());
    for axis in 0..shape.len() {
        let coords = domain.axis_coordinates(axis);
        // Number of consecutive elements sharing one index along `axis`.
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut data = vec![0.0f32; total];
        data.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = coords[((base + k) / inner) % n];
            }
        });
        out.push(Tensor { shape: shape.clone(), data });
    }
    Ok(out)
}

pub fn constant_tensor(value: f32, domain: &DomainSpec) -> Tensor {
    Tensor::filled(&domain.resolution, value)
}

/// Applies an arbitrary-arity scalar function at every flat index.
///
/// This is the general path used by user-registered operators; built-in
/// primitives go through the fixed-arity kernels below, which let the
/// compiler vectorize the loop body.
pub fn map_elementwise<F>(f: F, args: &[&Tensor]) -> Result<Tensor, TensorError>
where
    F: Fn(&[f32]) -> f32 + Sync,
{
    let Some(first) = args.first() else {
        return Err(TensorError::InvalidDomain("map_elementwise needs at least one argument".into()));
    };
    for a in &args[1..] {
        first.check_same_shape(a)?;
    }
    let mut data = vec![0.0f32; first.len()];
    data.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let base = c * CHUNK;
        let mut scratch = vec![0.0f32; args.len()];
        for (k, out) in chunk.iter_mut().enumerate() {
            for (s, a) in scratch.iter_mut().zip(args) {
                *s = a.data[base + k];
            }
            *out = f(&scratch);
        }
    });
    Ok(Tensor { shape: first.shape.clone(), data })
}

/// Takes the buffer of a uniquely owned tensor so the result can be written
/// in place; shared tensors are copied.
fn take_or_copy(t: Arc<Tensor>) -> Tensor {
    Arc::try_unwrap(t).unwrap_or_else(|shared| (*shared).clone())
}

pub fn map_unary<F>(a: Arc<Tensor>, f: F) -> Tensor
where
    F: Fn(f32) -> f32 + Sync + Send,
{
    let mut out = match Arc::try_unwrap(a) {
        Ok(owned) => owned,
        Err(shared) => {
            let mut data = vec![0.0f32; shared.len()];
            data.par_chunks_mut(CHUNK)
                .zip(shared.data.par_chunks(CHUNK))
                .for_each(|(o, x)| {
                    for (o, &x) in o.iter_mut().zip(x) {
                        *o = f(x);
                    }
                });
            return Tensor { shape: shared.shape.clone(), data };
        }
    };
    out.data.par_chunks_mut(CHUNK).for_each(|o| {
        for v in o.iter_mut() {
            *v = f(*v);
        }
    });
    out
}

pub fn map_binary<F>(a: Arc<Tensor>, b: Arc<Tensor>, f: F) -> Result<Tensor, TensorError>
where
    F: Fn(f32, f32) -> f32 + Sync + Send,
{
    a.check_same_shape(&b)?;
    // Reuse whichever argument buffer is not shared.
    if Arc::strong_count(&a) == 1 {
        let mut out = take_or_copy(a);
        out.data
            .par_chunks_mut(CHUNK)
            .zip(b.data.par_chunks(CHUNK))
            .for_each(|(o, y)| {
                for (o, &y) in o.iter_mut().zip(y) {
                    *o = f(*o, y);
                }
            });
        return Ok(out);
    }
    if Arc::strong_count(&b) == 1 {
        let mut out = take_or_copy(b);
        out.data
            .par_chunks_mut(CHUNK)
            .zip(a.data.par_chunks(CHUNK))
            .for_each(|(o, x)| {
                for (o, &x) in o.iter_mut().zip(x) {
                    *o = f(x, *o);
                }
            });
        return Ok(out);
    }
    let mut data = vec![0.0f32; a.len()];
    data.par_chunks_mut(CHUNK)
        .zip(a.data.par_chunks(CHUNK).zip(b.data.par_chunks(CHUNK)))
        .for_each(|(o, (x, y))| {
            for ((o, &x), &y) in o.iter_mut().zip(x).zip(y) {
                *o = f(x, y);
            }
        });
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn map_ternary<F>(
    a: Arc<Tensor>,
    b: Arc<Tensor>,
    c: Arc<Tensor>,
    f: F,
) -> Result<Tensor, TensorError>
where
    F: Fn(f32, f32, f32) -> f32 + Sync + Send,
{
    a.check_same_shape(&b)?;
    a.check_same_shape(&c)?;
    let shape = a.shape.clone();
    let mut data = vec![0.0f32; a.len()];
    data.par_chunks_mut(CHUNK)
        .zip(a.data.par_chunks(CHUNK))
        .zip(b.data.par_chunks(CHUNK).zip(c.data.par_chunks(CHUNK)))
        .for_each(|((o, x), (y, z))| {
            for (((o, &x), &y), &z) in o.iter_mut().zip(x).zip(y).zip(z) {
                *o = f(x, y, z);
            }
        });
    Ok(Tensor { shape, data })
}

/// Root mean squared error, accumulated in `f64` over fixed chunks that are
/// summed in index order. Any non-finite squared error yields `+inf`.
pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64, TensorError> {
    a.check_same_shape(b)?;
    let partials: Vec<f64> = a
        .data
        .par_chunks(CHUNK)
        .zip(b.data.par_chunks(CHUNK))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = partials.iter().sum();
    if !total.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok((total / a.len() as f64).sqrt())
}
