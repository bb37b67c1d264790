use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

/// Real element type of a [`DenseArray`](crate::DenseArray).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const PRECISION: Precision;

    /// `c = alpha * a * b + beta * c` on strided matrices, `a` is `m x k`, `b` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    /// `out[i] = sin(freq * x[i])`.
    fn sin_scaled(freq: Self, x: &[Self], out: &mut [Self]);

    /// `out[i] += g[i] * freq * cos(freq * x[i])`.
    fn add_sin_grad(freq: Self, x: &[Self], g: &[Self], out: &mut [Self]);

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }
}

macro_rules! impl_scalar {
    ($ty:ty, $prec:expr, $gemm:path, $sin:path, $cos:path) => {
        impl Scalar for $ty {
            const PRECISION: Precision = $prec;

            fn sin_scaled(freq: Self, x: &[Self], out: &mut [Self]) {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = $sin(freq * v);
                }
            }

            fn add_sin_grad(freq: Self, x: &[Self], g: &[Self], out: &mut [Self]) {
                for ((o, &v), &gi) in out.iter_mut().zip(x).zip(g) {
                    *o += gi * freq * $cos(freq * v);
                }
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
                    }
                };
                assert!(
                    span(m, k, rsa, csa) as usize <= a.len(),
                    "gemm: lhs out of bounds"
                );
                assert!(
                    span(k, n, rsb, csb) as usize <= b.len(),
                    "gemm: rhs out of bounds"
                );
                assert!(
                    span(m, n, rsc, csc) as usize <= c.len(),
                    "gemm: output out of bounds"
                );
                // SAFETY: all strides are non-negative and the extents were checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_scalar!(
    f32,
    Precision::F32,
    matrixmultiply::sgemm,
    crate::fastmath::sin,
    crate::fastmath::cos
);
impl_scalar!(
    f64,
    Precision::F64,
    matrixmultiply::dgemm,
    f64::sin,
    f64::cos
);
