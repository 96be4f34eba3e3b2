//! Thin wrappers over the system BLAS/LAPACK (OpenBLAS).
//!
//! All matrices in this crate are row-major `Array2<f64>`. CBLAS consumes
//! that layout directly; the Fortran LAPACK entry points see the transposed
//! matrix, which is harmless for the symmetric inputs used here and handled
//! by explicit transposition everywhere else.

use ndarray::{Array2, ArrayView2, ShapeBuilder};
use std::ffi::{c_char, c_int};

use crate::error::{Error, Result};

const CBLAS_ROW_MAJOR: c_int = 101;
const CBLAS_NO_TRANS: c_int = 111;
const CBLAS_TRANS: c_int = 112;
const CBLAS_LOWER: c_int = 122;

extern "C" {
    fn openblas_set_num_threads(n: c_int);

    fn openblas_get_corename() -> *const c_char;

    fn cblas_dgemm(
        layout: c_int,
        transa: c_int,
        transb: c_int,
        m: c_int,
        n: c_int,
        k: c_int,
        alpha: f64,
        a: *const f64,
        lda: c_int,
        b: *const f64,
        ldb: c_int,
        beta: f64,
        c: *mut f64,
        ldc: c_int,
    );

    fn cblas_dsyrk(
        layout: c_int,
        uplo: c_int,
        trans: c_int,
        n: c_int,
        k: c_int,
        alpha: f64,
        a: *const f64,
        lda: c_int,
        beta: f64,
        c: *mut f64,
        ldc: c_int,
    );

    fn dsyevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        w: *mut f64,
        work: *mut f64,
        lwork: *const c_int,
        iwork: *mut c_int,
        liwork: *const c_int,
        info: *mut c_int,
    );

    fn dposv_(
        uplo: *const c_char,
        n: *const c_int,
        nrhs: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        b: *mut f64,
        ldb: *const c_int,
        info: *mut c_int,
    );

    fn dgesv_(
        n: *const c_int,
        nrhs: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        ipiv: *mut c_int,
        b: *mut f64,
        ldb: *const c_int,
        info: *mut c_int,
    );
}

/// Sets the number of BLAS worker threads for the whole process.
///
/// Results are run-to-run deterministic for a fixed thread count.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as c_int) };
}

/// The kernel family OpenBLAS selected at load time. On hosts whose CPUID is
/// masked (some VMs), detection can fall back to a legacy core; setting the
/// `OPENBLAS_CORETYPE` environment variable before launch overrides it.
pub fn blas_core_name() -> String {
    unsafe {
        let ptr = openblas_get_corename();
        if ptr.is_null() {
            return "unknown".to_string();
        }
        std::ffi::CStr::from_ptr(ptr).to_string_lossy().into_owned()
    }
}

fn as_contiguous<'b>(a: &'b ArrayView2<'_, f64>) -> std::borrow::Cow<'b, [f64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// `op(a) * op(b)` where `op` is the optional transpose.
pub fn matmul(a: ArrayView2<f64>, ta: bool, b: ArrayView2<f64>, tb: bool) -> Array2<f64> {
    let m = if ta { a.ncols() } else { a.nrows() };
    let n = if tb { b.nrows() } else { b.ncols() };
    let mut c = Array2::<f64>::zeros((m, n));
    gemm_acc(&mut c, 1.0, a, ta, b, tb, 0.0);
    c
}

/// `c = alpha * op(a) * op(b) + beta * c`.
pub fn gemm_acc(
    c: &mut Array2<f64>,
    alpha: f64,
    a: ArrayView2<f64>,
    ta: bool,
    b: ArrayView2<f64>,
    tb: bool,
    beta: f64,
) {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(k, kb, "inner dimensions disagree: {k} vs {kb}");
    assert_eq!(c.dim(), (m, n), "output shape disagrees");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.mapv_inplace(|x| x * beta);
        return;
    }
    let a_s = as_contiguous(&a);
    let b_s = as_contiguous(&b);
    let c_s = c.as_slice_mut().expect("output must be standard layout");
    unsafe {
        cblas_dgemm(
            CBLAS_ROW_MAJOR,
            if ta { CBLAS_TRANS } else { CBLAS_NO_TRANS },
            if tb { CBLAS_TRANS } else { CBLAS_NO_TRANS },
            m as c_int,
            n as c_int,
            k as c_int,
            alpha,
            a_s.as_ptr(),
            a.ncols().max(1) as c_int,
            b_s.as_ptr(),
            b.ncols().max(1) as c_int,
            beta,
            c_s.as_mut_ptr(),
            n as c_int,
        );
    }
}

/// `c += s * s^T` for row-major `s` (N x w), keeping `c` fully symmetric.
///
/// Runs as a rank-k update on one triangle (half the flops of a general
/// product) and mirrors the triangle afterwards.
pub fn syrk_acc(c: &mut Array2<f64>, s: ArrayView2<f64>) {
    let n = s.nrows();
    assert_eq!(c.dim(), (n, n));
    if n == 0 {
        return;
    }
    if s.ncols() == 0 {
        return;
    }
    let s_s = as_contiguous(&s);
    {
        let c_s = c.as_slice_mut().expect("output must be standard layout");
        unsafe {
            cblas_dsyrk(
                CBLAS_ROW_MAJOR,
                CBLAS_LOWER,
                CBLAS_NO_TRANS,
                n as c_int,
                s.ncols() as c_int,
                1.0,
                s_s.as_ptr(),
                s.ncols() as c_int,
                1.0,
                c_s.as_mut_ptr(),
                n as c_int,
            );
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            c[[i, j]] = c[[j, i]];
        }
    }
}

/// Full symmetric eigendecomposition via `dsyevd`.
///
/// Returns eigenvalues sorted nonincreasing and the matching eigenvectors as
/// the columns of an `n x n` matrix. The input is read as-is; callers are
/// responsible for symmetrizing.
pub fn sym_eig_desc(a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    // dsyevd on the row-major buffer: the column-major view is the transpose,
    // which equals the input for symmetric matrices.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0f64; n];
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let nn = n as c_int;
    let mut info: c_int = 0;

    let (mut wk, mut iwk) = (0.0f64, 0 as c_int);
    let neg1: c_int = -1;
    unsafe {
        dsyevd_(&jobz, &uplo, &nn, buf.as_mut_ptr(), &nn, w.as_mut_ptr(), &mut wk, &neg1, &mut iwk, &neg1, &mut info);
    }
    if info != 0 {
        return Err(Error::Numeric(format!("dsyevd workspace query failed (info={info}, n={n})")));
    }
    let lwork = wk as c_int;
    let liwork = iwk;
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0 as c_int; liwork as usize];
    unsafe {
        dsyevd_(
            &jobz,
            &uplo,
            &nn,
            buf.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        return Err(Error::Numeric(format!(
            "symmetric eigensolver did not converge (info={info}, n={n}, frobenius_norm={norm:.6e})"
        )));
    }

    // LAPACK returns ascending eigenvalues with eigenvectors in the columns
    // of its column-major output, i.e. in the rows of our row-major buffer.
    // Reverse to nonincreasing order and lay eigenvectors out as columns.
    let rows = Array2::from_shape_vec((n, n), buf).expect("shape");
    let mut vectors = Array2::<f64>::zeros((n, n));
    let mut values = vec![0.0f64; n];
    for out_idx in 0..n {
        let in_idx = n - 1 - out_idx;
        values[out_idx] = w[in_idx];
        for i in 0..n {
            vectors[[i, out_idx]] = rows[[in_idx, i]];
        }
    }
    Ok((values, vectors))
}

fn to_colmajor(a: ArrayView2<f64>) -> Vec<f64> {
    let (r, c) = a.dim();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(a[[i, j]]);
        }
    }
    out
}

fn from_colmajor(buf: Vec<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols).f(), buf)
        .expect("shape")
        .as_standard_layout()
        .into_owned()
}

/// Solves `a * x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    assert_eq!(n, b.nrows(), "rhs row count must match");
    let nrhs = b.ncols();
    if n == 0 || nrhs == 0 {
        return Ok(Array2::zeros((n, nrhs)));
    }
    let mut a_buf: Vec<f64> = a.iter().copied().collect(); // symmetric: layout-agnostic
    let mut b_buf = to_colmajor(b);
    let uplo = b'L' as c_char;
    let (nn, nr) = (n as c_int, nrhs as c_int);
    let mut info: c_int = 0;
    unsafe {
        dposv_(&uplo, &nn, &nr, a_buf.as_mut_ptr(), &nn, b_buf.as_mut_ptr(), &nn, &mut info);
    }
    if info != 0 {
        return Err(Error::Numeric(format!(
            "cholesky solve failed: matrix is not positive definite (info={info}, n={n})"
        )));
    }
    Ok(from_colmajor(b_buf, n, nrhs))
}

/// Solves `a * x = b` for general square `a` via LU with partial pivoting.
pub fn solve_general(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    assert_eq!(n, b.nrows(), "rhs row count must match");
    let nrhs = b.ncols();
    if n == 0 || nrhs == 0 {
        return Ok(Array2::zeros((n, nrhs)));
    }
    let mut a_buf = to_colmajor(a);
    let mut b_buf = to_colmajor(b);
    let (nn, nr) = (n as c_int, nrhs as c_int);
    let mut ipiv = vec![0 as c_int; n];
    let mut info: c_int = 0;
    unsafe {
        dgesv_(&nn, &nr, a_buf.as_mut_ptr(), &nn, ipiv.as_mut_ptr(), b_buf.as_mut_ptr(), &nn, &mut info);
    }
    if info != 0 {
        return Err(Error::Numeric(format!("lu solve failed: singular matrix (info={info}, n={n})")));
    }
    Ok(from_colmajor(b_buf, n, nrhs))
}
