//! Branch-free single-precision sine and cosine that the compiler can vectorize.
//!
//! Cody-Waite reduction by pi followed by a minimax polynomial on [-pi/2, pi/2].
//! Absolute error stays below 1e-6 for |x| up to about 1e4.

const PI_A: f32 = 3.140625;
#[allow(clippy::excessive_precision)]
const PI_B: f32 = 0.000_967_025_756_835_937_5;
#[allow(clippy::excessive_precision)]
const PI_C: f32 = 6.277_114_152_908_325e-7;
#[allow(clippy::excessive_precision)]
const PI_D: f32 = 1.215_420_125_655_342e-10;
const INV_PI: f32 = std::f32::consts::FRAC_1_PI;

/// Round to nearest for |y| < 2^22 without a libm call.
#[inline(always)]
fn round(y: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0;
    (y + MAGIC) - MAGIC
}

#[inline(always)]
fn reduce(x: f32, q: f32) -> f32 {
    let mut r = x;
    r += q * -PI_A;
    r += q * -PI_B;
    r += q * -PI_C;
    q * -PI_D + r
}

#[inline(always)]
fn poly(r: f32) -> f32 {
    let s = r * r;
    let mut u = 2.608_316e-6_f32;
    u = u * s + -1.981_069e-4;
    u = u * s + 8.333_079e-3;
    u = u * s + -0.166_666_6;
    s * u * r + r
}

#[inline(always)]
fn flip(v: f32, odd: i32) -> f32 {
    f32::from_bits(v.to_bits() ^ ((odd as u32 & 1) << 31))
}

#[inline(always)]
pub fn sin(x: f32) -> f32 {
    let q = round(x * INV_PI);
    flip(poly(reduce(x, q)), q as i32)
}

#[inline(always)]
pub fn cos(x: f32) -> f32 {
    // x = (q + 1/2) pi + r, cos(x) = (-1)^(q+1) sin(r)
    let q = round(x * INV_PI - 0.5);
    let r = reduce(x, q) - std::f32::consts::FRAC_PI_2;
    flip(poly(r), q as i32 + 1)
}
