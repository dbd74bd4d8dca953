//! Dense complex kernels shared by the Fock engine: the matrix exponential,
//! an LU solver, a row-compressed view for cheap products with structured
//! operators, and a positivity probe.

use ndarray::{Array2, ArrayView2, Zip};
use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, ONE)
}

pub fn dagger(m: &ArrayView2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

/// Maximum induced 1-norm (largest absolute column sum).
pub fn one_norm(m: &ArrayView2<C64>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute row sum; bounds the spectral radius.
pub fn inf_norm(m: &ArrayView2<C64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &ArrayView2<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// max_ij |m_ij - conj(m_ji)|
pub fn hermitian_deviation(m: &ArrayView2<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &Array2<C64>) -> Array2<C64> {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = (m[[i, j]] + m[[j, i]].conj()) * 0.5;
        }
    }
    out
}

pub fn trace(m: &ArrayView2<C64>) -> C64 {
    m.diag().iter().copied().sum()
}

/// Tr(a·b) without forming the product.
pub fn trace_of_product(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> C64 {
    let mut acc = ZERO;
    Zip::from(a).and(&b.t()).for_each(|x, y| acc += x * y);
    acc
}

/// Solves A X = B by LU with partial pivoting. Returns `None` for a
/// numerically singular A.
pub fn lu_solve(a: &Array2<C64>, b: &Array2<C64>) -> Option<Array2<C64>> {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, lu[[i, k]].norm()))
            .fold((k, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if pmax == 0.0 || !pmax.is_finite() {
            return None;
        }
        if p != k {
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
            for j in 0..x.ncols() {
                x.swap([k, j], [p, j]);
            }
        }
        let pivot = lu[[k, k]];
        for i in (k + 1)..n {
            let l = lu[[i, k]];
            if l == ZERO {
                continue;
            }
            let f = l / pivot;
            lu[[i, k]] = f;
            for j in (k + 1)..n {
                let u = lu[[k, j]];
                if u != ZERO {
                    lu[[i, j]] -= f * u;
                }
            }
            for j in 0..x.ncols() {
                let v = x[[k, j]];
                if v != ZERO {
                    x[[i, j]] -= f * v;
                }
            }
        }
    }
    for k in (0..n).rev() {
        let pivot = lu[[k, k]];
        for j in 0..x.ncols() {
            let mut acc = x[[k, j]];
            for m in (k + 1)..n {
                let u = lu[[k, m]];
                if u != ZERO {
                    acc -= u * x[[m, j]];
                }
            }
            x[[k, j]] = acc / pivot;
        }
    }
    Some(x)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.53939833006323e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring around a diagonal Padé
/// approximant (degrees 3..13 picked from the 1-norm).
///
/// Returns `None` when the input holds non-finite entries.
pub fn expm(a: &Array2<C64>) -> Option<Array2<C64>> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    let n = a.nrows();
    let norm = one_norm(&a.view());
    if norm == 0.0 {
        return Some(identity(n));
    }
    for &(deg, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(a, coeffs);
        }
    }
    let s = ((norm / THETA13).log2().ceil().max(0.0)) as i32;
    let scaled = a.mapv(|z| z / 2f64.powi(s));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Some(r)
}

fn pade_low(a: &Array2<C64>, b: &[f64]) -> Option<Array2<C64>> {
    let n = a.nrows();
    let id = identity(n);
    let a2 = a.dot(a);
    // powers A^0, A^2, A^4, ...
    let mut evens = vec![id.clone(), a2.clone()];
    while evens.len() * 2 < b.len() {
        let next = evens.last().unwrap().dot(&a2);
        evens.push(next);
    }
    let mut u_inner = Array2::<C64>::zeros((n, n));
    let mut v = Array2::<C64>::zeros((n, n));
    for (k, pow) in evens.iter().enumerate() {
        if 2 * k + 1 < b.len() {
            u_inner.scaled_add(C64::from(b[2 * k + 1]), pow);
        }
        if 2 * k < b.len() {
            v.scaled_add(C64::from(b[2 * k]), pow);
        }
    }
    let u = a.dot(&u_inner);
    lu_solve(&(&v - &u), &(&v + &u))
}

fn pade13(a: &Array2<C64>) -> Option<Array2<C64>> {
    let b = PADE13.map(C64::from);
    let n = a.nrows();
    let id = identity(n);
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a.dot(&(a6.dot(&inner_u) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]));
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = a6.dot(&inner_v) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    lu_solve(&(&v - &u), &(&v + &u))
}

/// Row-compressed copy of a square matrix holding only its exact nonzeros.
///
/// Ladder operators, projectors and the propagators built from them are
/// block-structured, so products against dense density matrices cost
/// `nnz * dim` instead of `dim^3`.
#[derive(Clone, Debug)]
pub struct SparseRows {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseRows {
    pub fn from_dense(m: &ArrayView2<C64>) -> Self {
        let dim = m.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in m.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != ZERO {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// self · b for a dense, standard-layout `b`.
    pub fn mul_dense(&self, b: &Array2<C64>) -> Array2<C64> {
        let mut out = Array2::<C64>::zeros((self.dim, b.ncols()));
        self.mul_dense_acc(b, ONE, &mut out);
        out
    }

    /// out += alpha · self · b
    pub fn mul_dense_acc(&self, b: &Array2<C64>, alpha: C64, out: &mut Array2<C64>) {
        let ncols = b.ncols();
        let bs = b.as_standard_layout();
        let bsl = bs.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("standard layout output");
        for i in 0..self.dim {
            let orow = &mut os[i * ncols..(i + 1) * ncols];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.vals[k] * alpha;
                let brow = &bsl[self.cols[k] * ncols..(self.cols[k] + 1) * ncols];
                for (o, x) in orow.iter_mut().zip(brow) {
                    *o += a * x;
                }
            }
        }
    }

    pub fn trace_with(&self, m: &ArrayView2<C64>) -> C64 {
        let mut acc = ZERO;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * m[[self.cols[k], i]];
            }
        }
        acc
    }
}

/// Whether `m + floor·I` admits a Cholesky factorization, i.e. whether the
/// smallest eigenvalue of the Hermitian matrix `m` is at least `-floor`.
pub fn is_positive_above(m: &ArrayView2<C64>, floor: f64) -> bool {
    let n = m.nrows();
    let mut l = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]].re + floor;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[[j, j]] = C64::from(d);
        for i in (j + 1)..n {
            let mut acc = m[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = acc / d;
        }
    }
    true
}
