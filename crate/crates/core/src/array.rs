//! Dense row-major rank-2 storage and the slice-level numeric kernels shared
//! by every execution mode. Eager ops, the graph interpreter and the fused
//! executor all bottom out in the functions of [`kern`], which keeps results
//! bit-identical across modes in a fixed precision.

use crate::error::{Error, Result, Shape};
use crate::precision::Scalar;

/// Rank-2 array; scalars are [1,1], rows are [1,n], columns are [n,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Array<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Array<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                op: "from_vec",
                message: format!("{} values for shape ({rows}, {cols})", data.len()),
            });
        }
        Ok(Array { rows, cols, data })
    }

    pub fn scalar(v: S) -> Self {
        Array {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// Builds [rows, cols] from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Array { rows, cols, data }
    }

    /// Column vector [n,1] from a slice.
    pub fn column(values: &[S]) -> Self {
        Array {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// The single element of a [1,1] array.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on non-scalar array");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Array<S> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Array<f64> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.to_f64()).collect(),
        }
    }

    pub fn cast_from(src: &Array<f64>) -> Array<S> {
        Array {
            rows: src.rows,
            cols: src.cols,
            data: src.data.iter().map(|&v| S::from_f64(v)).collect(),
        }
    }

    pub fn col_slice(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

impl<S: Scalar> std::fmt::Display for Array<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "[{}x{}]", self.rows, self.cols)?;
        let show = self.rows.min(6);
        for i in 0..show {
            for j in 0..self.cols.min(8) {
                write!(f, " {:>12.6}", self.get(i, j).to_f64())?;
            }
            writeln!(f)?;
        }
        if show < self.rows {
            writeln!(f, " ...")?;
        }
        Ok(())
    }
}

/// Largest |a - b| / max(|b|, floor) over elements; used by tests and the
/// finite-difference checker.
pub fn max_rel_diff<S: Scalar>(a: &Array<S>, b: &Array<S>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64(), y.to_f64());
            (x - y).abs() / y.abs().max(floor)
        })
        .fold(0.0, f64::max)
}

/// Slice-level kernels. Every caller guarantees shapes in advance; kernels
/// assert lengths only in debug builds.
pub mod kern {
    use super::Scalar;

    #[inline(always)]
    pub fn sech<S: Scalar>(x: S) -> S {
        // 2/(e^x + e^-x): stays finite for |x| beyond tanh saturation.
        let two = S::ONE + S::ONE;
        two / (x.exp() + (-x).exp())
    }

    // The closures bind unannotated so they keep their zero-sized types;
    // coercing to `fn` pointers would cost an indirect call per element.
    macro_rules! binary {
        ($name:ident, $e:expr) => {
            pub fn $name<S: Scalar>(a: &[S], b: &[S], out: &mut [S]) {
                debug_assert!(a.len() == b.len() && a.len() == out.len());
                let f = $e;
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o = f(x, y);
                }
            }
        };
    }

    macro_rules! unary {
        ($name:ident, $e:expr) => {
            pub fn $name<S: Scalar>(a: &[S], out: &mut [S]) {
                debug_assert_eq!(a.len(), out.len());
                let f = $e;
                for (o, &x) in out.iter_mut().zip(a) {
                    *o = f(x);
                }
            }
        };
    }

    binary!(add, |x: S, y: S| x + y);
    binary!(sub, |x: S, y: S| x - y);
    binary!(mul, |x: S, y: S| x * y);
    binary!(div, |x: S, y: S| x / y);

    unary!(neg, |x: S| -x);
    unary!(square, |x: S| x * x);
    unary!(exp, |x: S| x.exp());
    unary!(sin, |x: S| x.sin());
    unary!(cos, |x: S| x.cos());
    unary!(tanh, |x: S| x.tanh());
    unary!(sech_u, sech::<S>);

    pub fn powi<S: Scalar>(a: &[S], n: i32, out: &mut [S]) {
        debug_assert_eq!(a.len(), out.len());
        for i in 0..out.len() {
            out[i] = a[i].powi(n);
        }
    }

    // Products with every dimension small bypass the packed GEMM: its
    // per-call packing overhead exceeds the whole multiply at these sizes.
    // Anything batch-sized goes to the packed path, including transposed
    // layouts, which it consumes via strides without materializing. The
    // cutoff depends only on the shape, never the data or the execution
    // mode, so all modes see one summation order for a given shape.
    const SMALL_DIM: usize = 64;
    const SMALL_BUF: usize = SMALL_DIM * SMALL_DIM;

    #[inline(always)]
    fn rowwise_small<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
        let mut accbuf = [S::ZERO; SMALL_DIM];
        for i in 0..m {
            let acc = &mut accbuf[..n];
            acc.fill(S::ZERO);
            let arow = &a[i * k..(i + 1) * k];
            for (l, &av) in arow.iter().enumerate() {
                let brow = &b[l * n..(l + 1) * n];
                for j in 0..n {
                    acc[j] += av * brow[j];
                }
            }
            c[i * n..(i + 1) * n].copy_from_slice(acc);
        }
    }

    /// c [m,n] = a [m,k] · b [k,n].
    pub fn matmul<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        if m <= SMALL_DIM && k <= SMALL_DIM && n <= SMALL_DIM {
            rowwise_small(m, k, n, a, b, c);
        } else {
            S::gemm(m, k, n, a, b, c);
        }
    }

    /// c [m,n] = a [m,k] · bᵀ for row-major b [n,k].
    pub fn matmul_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), n * k);
        debug_assert_eq!(c.len(), m * n);
        if m <= SMALL_DIM && k <= SMALL_DIM && n <= SMALL_DIM {
            // Materialize bᵀ once on the stack, then reuse the rowwise loop;
            // summation order matches `matmul` for the same (m,k,n).
            let mut bt = [S::ZERO; SMALL_BUF];
            for j in 0..n {
                for l in 0..k {
                    bt[l * n + j] = b[j * k + l];
                }
            }
            rowwise_small(m, k, n, a, &bt[..k * n], c);
        } else {
            S::gemm_nt(m, k, n, a, b, c);
        }
    }

    /// c [m,n] = aᵀ · b for row-major a [k,m], b [k,n].
    pub fn matmul_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
        debug_assert_eq!(a.len(), k * m);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        if m <= SMALL_DIM && k <= SMALL_DIM && n <= SMALL_DIM {
            // Rank-1 accumulation: both operands stream row-contiguously and
            // the [m,n] accumulator stays resident in L1.
            let mut accbuf = [S::ZERO; SMALL_BUF];
            let acc = &mut accbuf[..m * n];
            for l in 0..k {
                let arow = &a[l * m..(l + 1) * m];
                let brow = &b[l * n..(l + 1) * n];
                for i in 0..m {
                    let av = arow[i];
                    let dst = &mut acc[i * n..(i + 1) * n];
                    for j in 0..n {
                        dst[j] += av * brow[j];
                    }
                }
            }
            c.copy_from_slice(acc);
        } else {
            S::gemm_tn(m, k, n, a, b, c);
        }
    }

    pub fn transpose<S: Scalar>(rows: usize, cols: usize, a: &[S], out: &mut [S]) {
        debug_assert_eq!(a.len(), rows * cols);
        debug_assert_eq!(out.len(), rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = a[i * cols + j];
            }
        }
    }

    pub fn sum<S: Scalar>(a: &[S], out: &mut [S]) {
        debug_assert_eq!(out.len(), 1);
        let mut acc = S::ZERO;
        for &v in a {
            acc += v;
        }
        out[0] = acc;
    }

    pub fn mean<S: Scalar>(a: &[S], out: &mut [S]) {
        sum(a, out);
        out[0] = out[0] / S::from_f64(a.len() as f64);
    }

    /// [rows,cols] -> [1,cols], summing down each column.
    pub fn sum_rows<S: Scalar>(rows: usize, cols: usize, a: &[S], out: &mut [S]) {
        debug_assert_eq!(out.len(), cols);
        out.fill(S::ZERO);
        for i in 0..rows {
            let row = &a[i * cols..(i + 1) * cols];
            for j in 0..cols {
                out[j] += row[j];
            }
        }
    }

    pub fn broadcast_scalar<S: Scalar>(a: &[S], out: &mut [S]) {
        debug_assert_eq!(a.len(), 1);
        out.fill(a[0]);
    }

    /// [1,cols] tiled down `rows` times.
    pub fn broadcast_row<S: Scalar>(rows: usize, cols: usize, a: &[S], out: &mut [S]) {
        debug_assert_eq!(a.len(), cols);
        debug_assert_eq!(out.len(), rows * cols);
        for i in 0..rows {
            out[i * cols..(i + 1) * cols].copy_from_slice(a);
        }
    }

    /// Concatenate along axis 1; `parts` are [rows, w_i], out is [rows, Σw_i].
    pub fn concat_cols<S: Scalar>(rows: usize, parts: &[(&[S], usize)], out: &mut [S]) {
        let total: usize = parts.iter().map(|&(_, w)| w).sum();
        debug_assert_eq!(out.len(), rows * total);
        for i in 0..rows {
            let mut at = i * total;
            for &(src, w) in parts {
                out[at..at + w].copy_from_slice(&src[i * w..(i + 1) * w]);
                at += w;
            }
        }
    }

    /// Copies columns [start, start+len) of a [rows,cols] into out [rows,len].
    pub fn slice_cols<S: Scalar>(
        rows: usize,
        cols: usize,
        start: usize,
        len: usize,
        a: &[S],
        out: &mut [S],
    ) {
        debug_assert!(start + len <= cols);
        debug_assert_eq!(out.len(), rows * len);
        for i in 0..rows {
            out[i * len..(i + 1) * len]
                .copy_from_slice(&a[i * cols + start..i * cols + start + len]);
        }
    }

    /// Adjoint of `slice_cols`: writes a [rows,len] block into columns
    /// [start, start+len) of a zeroed [rows,cols] output.
    pub fn scatter_cols<S: Scalar>(
        rows: usize,
        cols: usize,
        start: usize,
        len: usize,
        a: &[S],
        out: &mut [S],
    ) {
        debug_assert!(start + len <= cols);
        debug_assert_eq!(out.len(), rows * cols);
        out.fill(S::ZERO);
        for i in 0..rows {
            out[i * cols + start..i * cols + start + len]
                .copy_from_slice(&a[i * len..(i + 1) * len]);
        }
    }
}
