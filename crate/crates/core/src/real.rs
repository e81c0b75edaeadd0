//! Floating-point abstraction for the differentiable code paths.
//!
//! Training runs in `f32`; gradient checks run the same kernels in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    /// `C <- alpha * A B + beta * C` with arbitrary strides.
    ///
    /// Slices must cover every element addressed by the given shape and strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn cst(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(
        last < len,
        "gemm: operand {what} too short ({len} <= {last})"
    );
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Real for $t {
            const DTYPE: &'static str = $name;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                check_extent(a.len(), m, k, rsa, csa, "A");
                check_extent(b.len(), k, n, rsb, csb, "B");
                check_extent(c.len(), m, n, rsc, csc, "C");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents of all three operands were checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        f64::gemm(2, 3, 4, 1.0, &a, 3, 1, &b, 4, 1, 1.0, &mut c, 4, 1);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|l| a[i * 3 + l] * b[l * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        1.5f32.write_le(&mut buf);
        (-2.25f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.5);
        assert_eq!(f64::read_le(&buf[4..]), -2.25);
    }
}
