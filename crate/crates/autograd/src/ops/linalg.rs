use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct MatMulSpec {
    pub(crate) a: Var,
    pub(crate) b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
}

impl<T: Scalar> Tape<T> {
    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Rank-2 product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return shape_err(format!("matmul expects rank-2 operands, got {sa:?} and {sb:?}"));
        }
        self.product(a, b, 1, [sa[0], sa[1]], [sb[0], sb[1]], ta, tb)
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]` operands.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err(format!("bmm expects matching rank-3 operands, got {sa:?} and {sb:?}"));
        }
        self.product(a, b, sa[0], [sa[1], sa[2]], [sb[1], sb[2]], ta, tb)
    }

    #[allow(clippy::too_many_arguments)]
    fn product(
        &mut self,
        a: Var,
        b: Var,
        batch: usize,
        da: [usize; 2],
        db: [usize; 2],
        ta: bool,
        tb: bool,
    ) -> Result<Var> {
        let (m, k) = if ta { (da[1], da[0]) } else { (da[0], da[1]) };
        let (k2, n) = if tb { (db[1], db[0]) } else { (db[0], db[1]) };
        if k != k2 {
            return shape_err(format!(
                "matmul inner dimensions differ: {da:?}{} x {db:?}{}",
                if ta { "^T" } else { "" },
                if tb { "^T" } else { "" }
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                ta,
                &bv[i * k * n..(i + 1) * k * n],
                tb,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let shape = if self.shape(a).len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let spec = MatMulSpec {
            a,
            b,
            batch,
            m,
            k,
            n,
            ta,
            tb,
        };
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(spec)))
    }
}

pub(crate) fn matmul_backward<T: Scalar>(
    tape: &Tape<T>,
    s: &MatMulSpec,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (m, k, n) = (s.m, s.k, s.n);
    let av = tape.value(s.a).data();
    let bv = tape.value(s.b).data();
    sink.with(s.a, |buf| {
        for i in 0..s.batch {
            let gi = &g[i * m * n..(i + 1) * m * n];
            let bi = &bv[i * k * n..(i + 1) * k * n];
            let di = &mut buf[i * m * k..(i + 1) * m * k];
            if !s.ta {
                // dA = dC · op(B)^T
                gemm(m, n, k, gi, false, bi, !s.tb, di, true);
            } else {
                // dA_stored = op(B) · dC^T
                gemm(k, n, m, bi, s.tb, gi, true, di, true);
            }
        }
    });
    sink.with(s.b, |buf| {
        for i in 0..s.batch {
            let gi = &g[i * m * n..(i + 1) * m * n];
            let ai = &av[i * m * k..(i + 1) * m * k];
            let di = &mut buf[i * k * n..(i + 1) * k * n];
            if !s.tb {
                // dB = op(A)^T · dC
                gemm(k, m, n, ai, !s.ta, gi, false, di, true);
            } else {
                // dB_stored = dC^T · op(A)
                gemm(n, m, k, gi, true, ai, s.ta, di, true);
            }
        }
    });
}
