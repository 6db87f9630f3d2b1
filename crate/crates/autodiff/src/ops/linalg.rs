use crate::element::Element;
use crate::error::{shape_mismatch, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `c (+)= op(a)·op(b)` for row-major buffers. `a` is logically `[m,k]`
/// (stored `[k,m]` when `ta`), `b` is logically `[k,n]` (stored `[n,k]`
/// when `tb`), `c` is `[m,n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    ta: bool,
    b: &[E],
    tb: bool,
    c: &mut [E],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { E::one() } else { E::zero() };
    // SAFETY: extents checked above; `c` is a distinct mutable slice.
    unsafe {
        E::gemm(
            m,
            k,
            n,
            E::one(),
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

impl<E: Element> Graph<E> {
    /// Plain 2-D product `[M,K]·[K,N]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_mismatch("matmul", &sa, &sb));
        }
        self.batch_matmul(a, b, false, false)
    }

    /// Batched product over matching leading axes: `[..,M,K]·[..,K,N]`.
    /// `trans_b` reads `b` as `[..,N,K]`; `trans_a` reads `a` as `[..,K,M]`.
    pub fn batch_matmul(&self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        assert!(!(trans_a && trans_b), "at most one operand may be transposed");
        let ta = self.value(a);
        let tb = self.value(b);
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(shape_mismatch("batch_matmul", &sa, &sb));
        }
        let r = sa.len();
        let (m, k) = if trans_a { (sa[r - 1], sa[r - 2]) } else { (sa[r - 2], sa[r - 1]) };
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(shape_mismatch("batch_matmul", &sa, &sb));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![E::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ta.data()[i * m * k..],
                trans_a,
                &tb.data()[i * k * n..],
                trans_b,
                &mut out[i * m * n..],
                false,
            );
        }
        let mut out_shape = sa[..r - 2].to_vec();
        out_shape.extend([m, n]);
        let out = Tensor::from_parts(out_shape, out);
        Ok(self.record(out, &[a, b], move |args| {
            let (av, bv, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let mut da = args.needs[0].then(|| vec![E::zero(); batch * m * k]);
            let mut db = args.needs[1].then(|| vec![E::zero(); batch * k * n]);
            for i in 0..batch {
                let gi = &g[i * m * n..(i + 1) * m * n];
                let ai = &av[i * m * k..(i + 1) * m * k];
                let bi = &bv[i * k * n..(i + 1) * k * n];
                if let Some(da) = da.as_mut() {
                    let dst = &mut da[i * m * k..(i + 1) * m * k];
                    match (trans_a, trans_b) {
                        // dA = dC·Bᵀ
                        (false, false) => gemm(m, n, k, gi, false, bi, true, dst, false),
                        // C = A·Bᵀ, B stored [n,k]: dA = dC·B
                        (false, true) => gemm(m, n, k, gi, false, bi, false, dst, false),
                        // C = Aᵀ·B, A stored [k,m]: dA = B·dCᵀ
                        (true, false) => gemm(k, n, m, bi, false, gi, true, dst, false),
                        (true, true) => unreachable!(),
                    }
                }
                if let Some(db) = db.as_mut() {
                    let dst = &mut db[i * k * n..(i + 1) * k * n];
                    match (trans_a, trans_b) {
                        // dB = Aᵀ·dC
                        (false, false) => gemm(k, m, n, ai, true, gi, false, dst, false),
                        // dB (stored [n,k]) = dCᵀ·A
                        (false, true) => gemm(n, m, k, gi, true, ai, false, dst, false),
                        // dB = A·dC with A stored [k,m]
                        (true, false) => gemm(k, m, n, ai, false, gi, false, dst, false),
                        (true, true) => unreachable!(),
                    }
                }
            }
            vec![
                da.map(|d| Tensor::from_parts(args.inputs[0].shape().to_vec(), d)),
                db.map(|d| Tensor::from_parts(args.inputs[1].shape().to_vec(), d)),
            ]
        }))
    }
}
