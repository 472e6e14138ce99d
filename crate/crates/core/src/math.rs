//! Branch-free `f32` transcendental kernels.
//!
//! libm calls block loop vectorization, so the hot primitives use polynomial
//! kernels written only in terms of arithmetic, comparisons and bit casts.
//! The same functions back the per-point interpreter, which keeps the two
//! evaluation engines numerically identical.

const TWO_POW_23: f32 = 8_388_608.0;

/// Round to nearest, ties to even. Exact for all finite inputs.
#[inline(always)]
pub fn round_even(x: f32) -> f32 {
    let ax = x.abs();
    // For |x| < 2^23 adding 2^23 leaves no fractional bits.
    let r = ((ax + TWO_POW_23) - TWO_POW_23).copysign(x);
    if ax < TWO_POW_23 {
        r
    } else {
        x
    }
}

/// Returns `(r, odd)` with `x = n + r`, `n` integral, `r ∈ [-0.5, 0.5]` and
/// `odd = 1.0` when `n` is odd. The subtraction is exact.
#[inline(always)]
fn reduce_half_turns(x: f32) -> (f32, f32) {
    let n = round_even(x);
    let r = x - n;
    let half = n * 0.5;
    let odd = if half != round_even(half) { 1.0 } else { 0.0 };
    (r, odd)
}

/// `sin(π·r)` for `r ∈ [-0.5, 0.5]`.
#[inline(always)]
fn sin_pi_reduced(r: f32) -> f32 {
    let s = r * r;
    let p = 0.077_788_815f32;
    let p = p * s - 0.598_348_2;
    let p = p * s + 2.550_085;
    let p = p * s - 5.167_710_3;
    let p = p * s + std::f32::consts::PI;
    r * p
}

/// `sin(π·x)`.
#[inline(always)]
pub fn sin_pi(x: f32) -> f32 {
    let (r, odd) = reduce_half_turns(x);
    let v = sin_pi_reduced(r);
    if odd != 0.0 {
        -v
    } else {
        v
    }
}

/// `cos(π·x)`, computed as `sin(π·(0.5 - |r|))` so it stays accurate
/// relative to its value near the zeros. The subtraction is exact there.
#[inline(always)]
pub fn cos_pi(x: f32) -> f32 {
    let (r, odd) = reduce_half_turns(x);
    let v = sin_pi_reduced(0.5 - r.abs());
    if odd != 0.0 {
        -v
    } else {
        v
    }
}

/// `2^n` for integral `n ∈ [-126, 127]`, built from the exponent bits.
#[inline(always)]
fn exp2_int(n: f32) -> f32 {
    // n + 127 lands in the low mantissa bits of (n + 127 + 2^23).
    let biased = (n + (127.0 + TWO_POW_23)).to_bits();
    f32::from_bits(biased << 23)
}

/// `e^x`, overflowing to `+inf` and underflowing through subnormals to 0.
#[inline(always)]
pub fn exp(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let xc = x.clamp(-104.0, 89.0);
    let n = round_even(xc * LOG2E);
    let r = xc - n * LN2_HI;
    let r = r - n * LN2_LO;
    let p = 1.987_569_1e-4f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5.000_000_1e-1;
    let y = p * (r * r) + r + 1.0;
    // Split the scale so both factors stay normal down to n = -150.
    let n1 = round_even(n * 0.5 - 0.25);
    let n2 = n - n1;
    let v = y * exp2_int(n1) * exp2_int(n2);
    let v = if x > 88.722_84 { f32::INFINITY } else { v };
    let v = if x < -103.972_08 { 0.0 } else { v };
    if x.is_nan() {
        x
    } else {
        v
    }
}

/// Natural logarithm for `x > 0` (including subnormals and `+inf`).
/// Callers handle the non-positive branch.
#[inline(always)]
pub fn ln_positive(x: f32) -> f32 {
    const SQRT_HALF: f32 = std::f32::consts::FRAC_1_SQRT_2;
    let tiny = x < f32::MIN_POSITIVE;
    let xs = if tiny { x * TWO_POW_23 } else { x };
    let bits = xs.to_bits();
    let mut e = (((bits >> 23) & 0xff) as i32 - 126) as f32;
    if tiny {
        e -= 23.0;
    }
    let mut m = f32::from_bits((bits & 0x807f_ffff) | 0x3f00_0000);
    let small = m < SQRT_HALF;
    if small {
        e -= 1.0;
    }
    m = if small { m + m - 1.0 } else { m - 1.0 };
    let z = m * m;
    let p = 7.037_683_6e-2f32;
    let p = p * m - 1.151_461e-1;
    let p = p * m + 1.167_699_9e-1;
    let p = p * m - 1.242_014_1e-1;
    let p = p * m + 1.424_932_3e-1;
    let p = p * m - 1.666_805_8e-1;
    let p = p * m + 2.000_071_4e-1;
    let p = p * m - 2.499_999_4e-1;
    let p = p * m + 3.333_333e-1;
    let mut y = p * m * z;
    y += -2.121_944_4e-4 * e;
    y += -0.5 * z;
    let v = m + y + 0.693_359_4 * e;
    if x == f32::INFINITY {
        x
    } else {
        v
    }
}
