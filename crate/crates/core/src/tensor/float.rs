use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type of tensors: implemented for `f32` and `f64`.
pub trait Float:
    num_traits::Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c (m×n) = a (m×k) · b (k×n) + beta · c` with arbitrary element strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        accumulate: bool,
    );
}

macro_rules! impl_float {
    ($t:ty, $bytes:expr, $gemm:path) => {
        impl Float for $t {
            const BYTES: usize = $bytes;

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                c: &mut [Self],
                accumulate: bool,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(c.len() >= m * n, "gemm output buffer too small");
                let span = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
                    }
                };
                assert!(
                    span(m, k, a_strides) as usize <= a.len(),
                    "gemm lhs out of bounds"
                );
                assert!(
                    span(k, n, b_strides) as usize <= b.len(),
                    "gemm rhs out of bounds"
                );
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above bound every strided access to the
                // provided slices; `c` is row-major contiguous with m·n elements.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_float!(f32, 4, matrixmultiply::sgemm);
impl_float!(f64, 8, matrixmultiply::dgemm);
