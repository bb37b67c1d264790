//! Dense kernels behind the graph ops. All buffers are row-major.

use crate::Scalar;

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, with optional transposed storage for `a`/`b`.
///
/// When `ta` is set, `a` is stored as `k x m`; when `tb` is set, `b` is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    beta: T,
    c: &mut [T],
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    if k == 0 {
        if beta == T::zero() {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        } else {
            c[..m * n].iter_mut().for_each(|v| *v = *v * beta);
        }
        return;
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        beta,
        c,
        n as isize,
        1,
    );
}

/// Geometry of a strided, zero-padded, square-kernel convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Output extent of a convolution, `None` when the kernel does not fit.
    pub fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = size + 2 * pad;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: Self::out_extent(height, kernel, stride, pad)?,
            out_w: Self::out_extent(width, kernel, stride, pad)?,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Iterates `(column-matrix index, image index)` pairs for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (k, s, p) = (self.kernel, self.stride, self.pad as isize);
        let ncols = self.col_cols();
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oi in 0..self.out_h {
                        let ii = (oi * s + ki) as isize - p;
                        if ii < 0 || ii >= self.height as isize {
                            continue;
                        }
                        let base = (c * self.height + ii as usize) * self.width;
                        for oj in 0..self.out_w {
                            let jj = (oj * s + kj) as isize - p;
                            if jj < 0 || jj >= self.width as isize {
                                continue;
                            }
                            f(row * ncols + oi * self.out_w + oj, base + jj as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds one image into a `(C*k*k, out_h*out_w)` column matrix.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    cols.iter_mut().for_each(|v| *v = T::zero());
    g.for_each_tap(|ci, xi| cols[ci] = image[xi]);
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image buffer.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    g.for_each_tap(|ci, xi| image[xi] = image[xi] + cols[ci]);
}

pub(crate) struct ConvShapes {
    pub batch: usize,
    pub c_out: usize,
    pub geom: ConvGeom,
}

/// Forward convolution. `x` is `(B, Cin, H, W)`, `w` is `(Cout, Cin, k, k)`.
pub(crate) fn conv2d_forward<T: Scalar>(s: &ConvShapes, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let g = &s.geom;
    let (kr, hw) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); kr * hw];
    for n in 0..s.batch {
        im2col(g, &x[n * g.image_len()..(n + 1) * g.image_len()], &mut cols);
        let o = &mut out[n * s.c_out * hw..(n + 1) * s.c_out * hw];
        for (co, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[co]);
        }
        matmul(s.c_out, kr, hw, w, false, &cols, false, T::one(), o);
    }
}

/// Backward convolution, accumulating into whichever gradient buffers are present.
pub(crate) fn conv2d_backward<T: Scalar>(
    s: &ConvShapes,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let g = &s.geom;
    let (kr, hw) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); kr * hw];
    let mut dcols = vec![T::zero(); kr * hw];
    for n in 0..s.batch {
        let dyn_ = &dy[n * s.c_out * hw..(n + 1) * s.c_out * hw];
        if let Some(db) = db.as_deref_mut() {
            for (co, chunk) in dyn_.chunks(hw).enumerate() {
                db[co] = db[co] + chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, &x[n * g.image_len()..(n + 1) * g.image_len()], &mut cols);
            // dW (Cout x K) += dY (Cout x HW) * cols^T
            matmul(s.c_out, hw, kr, dyn_, false, &cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols (K x HW) = W^T * dY
            matmul(kr, s.c_out, hw, w, true, dyn_, false, T::zero(), &mut dcols);
            col2im(
                g,
                &dcols,
                &mut dx[n * g.image_len()..(n + 1) * g.image_len()],
            );
        }
    }
}

/// Forward transposed convolution. `x` is `(B, Cin, H, W)`, `w` is `(Cin, Cout, k, k)`.
///
/// `s.geom` describes the *output* image (channels = Cout) seen as the input of
/// the adjoint convolution, so `geom.out_h == H`.
pub(crate) fn conv_t_forward<T: Scalar>(
    s: &ConvShapes,
    c_in: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
) {
    let g = &s.geom;
    let (kr, hw) = (g.col_rows(), g.col_cols());
    let img = g.image_len();
    let plane = g.height * g.width;
    let mut cols = vec![T::zero(); kr * hw];
    for n in 0..s.batch {
        // cols (Cout*k*k x HW) = W_r^T (Cout*k*k x Cin) * x (Cin x HW)
        matmul(
            kr,
            c_in,
            hw,
            w,
            true,
            &x[n * c_in * hw..(n + 1) * c_in * hw],
            false,
            T::zero(),
            &mut cols,
        );
        let o = &mut out[n * img..(n + 1) * img];
        for (co, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[co]);
        }
        col2im(g, &cols, o);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t_backward<T: Scalar>(
    s: &ConvShapes,
    c_in: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let g = &s.geom;
    let (kr, hw) = (g.col_rows(), g.col_cols());
    let img = g.image_len();
    let plane = g.height * g.width;
    let mut dcols = vec![T::zero(); kr * hw];
    for n in 0..s.batch {
        let dyn_ = &dy[n * img..(n + 1) * img];
        if let Some(db) = db.as_deref_mut() {
            for (co, chunk) in dyn_.chunks(plane).enumerate() {
                db[co] = db[co] + chunk.iter().copied().sum::<T>();
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(g, dyn_, &mut dcols);
        if let Some(dx) = dx.as_deref_mut() {
            // dx (Cin x HW) = W_r (Cin x K) * dcols (K x HW)
            matmul(
                c_in,
                kr,
                hw,
                w,
                false,
                &dcols,
                false,
                T::one(),
                &mut dx[n * c_in * hw..(n + 1) * c_in * hw],
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            // dW_r (Cin x K) += x (Cin x HW) * dcols^T
            matmul(
                c_in,
                hw,
                kr,
                &x[n * c_in * hw..(n + 1) * c_in * hw],
                false,
                &dcols,
                true,
                T::one(),
                dw,
            );
        }
    }
}
