use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Scalar type a [`Tensor`](crate::Tensor) can hold.
///
/// Implemented for `f32` (training) and `f64` (numerical verification).
pub trait Element:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Short dtype tag used by serialized containers.
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with
    /// arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

fn extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
}

macro_rules! impl_element {
    ($t:ty, $tag:literal, $kernel:path) => {
        impl Element for $t {
            const DTYPE: &'static str = $tag;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                assert!(a.0.len() >= extent(m, k, a.1, a.2), "gemm: lhs buffer too small");
                assert!(b.0.len() >= extent(k, n, b.1, b.2), "gemm: rhs buffer too small");
                assert!(c.0.len() >= extent(m, n, c.1, c.2), "gemm: output buffer too small");
                // SAFETY: all strides are non-negative here and the extents were
                // checked against the slice lengths above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    );
                }
            }
        }
    };
}

impl_element!(f32, "F32", matrixmultiply::sgemm);
impl_element!(f64, "F64", matrixmultiply::dgemm);
