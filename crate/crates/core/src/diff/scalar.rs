use core::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type with a GEMM kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// `c = beta * c + a · b` on row-major buffers, with optional transposes
    /// of the logical operands. `a` is `m×k` and `b` is `k×n` after transposition.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_transposed: bool,
        b: &[Self],
        b_transposed: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// Row/column strides of a logical `rows×cols` operand over a row-major
/// buffer that stores either it or its transpose.
fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_transposed: bool,
                b: &[Self],
                b_transposed: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_transposed);
                let (rsb, csb) = strides(k, n, b_transposed);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the assertions above guarantee every index reached by the
                // given dimensions and strides lies inside the three buffers.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
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

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2×3), b = [[1],[0],[2]] (3×1)
        let a = [1.0f64, 2., 3., 4., 5., 6.];
        let b = [1.0f64, 0., 2.];
        let mut c = [0.0f64; 2];
        f64::gemm(2, 3, 1, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [7.0, 16.0]);

        // aᵀ·[1,1]ᵀ where a stored 2×3 → logical 3×2 times 2×1
        let ones = [1.0f64, 1.0];
        let mut d = [0.0f64; 3];
        f64::gemm(3, 2, 1, &a, true, &ones, false, &mut d, false);
        assert_eq!(d, [5.0, 7.0, 9.0]);

        // a · aᵀ (2×2), accumulate onto identity
        let mut e = [1.0f64, 0., 0., 1.];
        f64::gemm(2, 3, 2, &a, false, &a, true, &mut e, true);
        assert_eq!(e, [15.0, 32.0, 32.0, 78.0]);
    }
}
