//! Floating point element types the tape can run on.
//!
//! Training runs in `f32`; gradient checks re-run the same graphs in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Raw strided gemm: `c = alpha * a * b + beta * c`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices
    /// of the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    /// `exp` for hot loops (softmax, sigmoid); may trade the last ulp for speed.
    #[inline(always)]
    fn fast_exp(self) -> Self {
        self.exp()
    }
}

/// Branch-free `expf`: Cody–Waite reduction and a degree-7 polynomial,
/// relative error below 2e-7 on the clamped range. Written so the
/// compiler can vectorise loops over it.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline(always)]
    fn fast_exp(self) -> Self {
        exp_f32(self)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `c (+)= op(a) · op(b)` where `op(a)` is `m × k` and `op(b)` is `k × n`.
///
/// With `trans_a` the buffer `a` holds a `k × m` matrix, likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }
    if !trans_a && n <= NARROW && m * k >= 4096 {
        narrow_gemm(m, k, n, a, b, trans_b, c, accumulate);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths were asserted above and the three slices cannot alias
    // because `c` is borrowed mutably.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Output width below which packing dominates the blocked kernel's runtime.
const NARROW: usize = 8;

/// Row-major `a` times a narrow `b`: one pass over each row of `a`.
#[allow(clippy::too_many_arguments)]
fn narrow_gemm<T: Scalar>(
    _m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let mut bt;
    let b = if trans_b {
        bt = vec![T::zero(); k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        &bt[..]
    } else {
        b
    };
    match n {
        1 => narrow_rows::<T, 1>(k, a, b, c, accumulate),
        2 => narrow_rows::<T, 2>(k, a, b, c, accumulate),
        3 => narrow_rows::<T, 3>(k, a, b, c, accumulate),
        4 => narrow_rows::<T, 4>(k, a, b, c, accumulate),
        5 => narrow_rows::<T, 5>(k, a, b, c, accumulate),
        6 => narrow_rows::<T, 6>(k, a, b, c, accumulate),
        7 => narrow_rows::<T, 7>(k, a, b, c, accumulate),
        _ => narrow_rows::<T, 8>(k, a, b, c, accumulate),
    }
}

fn narrow_rows<T: Scalar, const N: usize>(k: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    for (row, out) in a.chunks_exact(k).zip(c.chunks_exact_mut(N)) {
        let mut acc = [T::zero(); N];
        for (&av, brow) in row.iter().zip(b.chunks_exact(N)) {
            for t in 0..N {
                acc[t] += av * brow[t];
            }
        }
        for t in 0..N {
            out[t] = if accumulate { out[t] + acc[t] } else { acc[t] };
        }
    }
}
