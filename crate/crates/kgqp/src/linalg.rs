//! Dense kernels from the system BLAS/LAPACK and small 2x2 matrix algebra.

use num_complex::Complex64;

use crate::{Error, Result};

extern "C" {
    fn dgemm_(
        transa: *const u8,
        transb: *const u8,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *const f64,
        ldb: *const i32,
        beta: *const f64,
        c: *mut f64,
        ldc: *const i32,
    );
    fn dgemv_(
        trans: *const u8,
        m: *const i32,
        n: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        x: *const f64,
        incx: *const i32,
        beta: *const f64,
        y: *mut f64,
        incy: *const i32,
    );
}

/// `y = op(A) x` for a column-major `m x n` matrix.
pub(crate) fn gemv(transpose: bool, m: usize, n: usize, a: &[f64], x: &[f64], y: &mut [f64]) {
    assert_eq!(a.len(), m * n);
    let (rows, cols) = if transpose { (n, m) } else { (m, n) };
    assert_eq!(x.len(), cols);
    assert_eq!(y.len(), rows);
    if m == 0 || n == 0 {
        y.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let t = if transpose { b'T' } else { b'N' };
    let (mi, ni, one, zero, inc) = (m as i32, n as i32, 1.0f64, 0.0f64, 1i32);
    unsafe {
        dgemv_(
            &t, &mi, &ni, &one, a.as_ptr(), &mi, x.as_ptr(), &inc, &zero, y.as_mut_ptr(), &inc,
        );
    }
}

/// `C = op(A) B` where `A` is `n x n` and `B` is `n x k`, all column-major.
pub(crate) fn gemm_square(transpose: bool, n: usize, a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; n * k];
    if n == 0 || k == 0 {
        return c;
    }
    let ta = if transpose { b'T' } else { b'N' };
    let tb = b'N';
    let (ni, ki, one, zero) = (n as i32, k as i32, 1.0f64, 0.0f64);
    unsafe {
        dgemm_(
            &ta,
            &tb,
            &ni,
            &ki,
            &ni,
            &one,
            a.as_ptr(),
            &ni,
            b.as_ptr(),
            &ni,
            &zero,
            c.as_mut_ptr(),
            &ni,
        );
    }
    c
}

/// Eigenvalues (ascending) and column-major eigenvectors of the symmetric
/// tridiagonal matrix with diagonal `d` and off-diagonal `e`.
pub(crate) fn tridiagonal_eigen(d: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = d.len();
    assert_eq!(e.len(), n.saturating_sub(1));
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    let mut w = d.to_vec();
    let mut off = e.to_vec();
    off.push(0.0);
    let mut z = vec![0.0; n * n];
    let ni = n as i32;
    let jobz = b'V' as std::os::raw::c_char;
    let mut info = 0i32;
    let mut work_query = 0.0f64;
    let mut iwork_query = 0i32;
    let query = -1i32;
    unsafe {
        lapack_sys::dstevd_(
            &jobz,
            &ni,
            w.as_mut_ptr(),
            off.as_mut_ptr(),
            z.as_mut_ptr(),
            &ni,
            &mut work_query,
            &query,
            &mut iwork_query,
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver(info));
    }
    let lwork = (work_query as i32).max(1);
    let liwork = iwork_query.max(1);
    let mut work = vec![0.0; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        lapack_sys::dstevd_(
            &jobz,
            &ni,
            w.as_mut_ptr(),
            off.as_mut_ptr(),
            z.as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver(info));
    }
    Ok((w, z))
}

pub type Mat2 = [[f64; 2]; 2];
pub type CMat2 = [[Complex64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Inverse of a unimodular matrix (the adjugate).
pub fn inv_sl2(a: &Mat2) -> Mat2 {
    [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]]
}

pub fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

pub fn max_abs(a: &Mat2) -> f64 {
    a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn frobenius(a: &Mat2) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn scale(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

/// Rotation angle `alpha` of the polar factor `A = R(alpha) S`, `S` symmetric
/// positive definite. Continuous on `SL(2, R)`.
pub fn polar_angle(a: &Mat2) -> f64 {
    (a[1][0] - a[0][1]).atan2(a[0][0] + a[1][1])
}

/// Signed eigen-angle of a unimodular matrix: `beta` with eigenvalues
/// `exp(+-i beta)` and the sign given by the sense of rotation. Computed from
/// `A - A^{-1}` so that angles near 0 and pi keep full relative accuracy.
/// Returns `None` for hyperbolic matrices.
pub fn signed_angle(a: &Mat2) -> Option<f64> {
    let half_trace = 0.5 * (a[0][0] + a[1][1]);
    let diff = a[0][0] - a[1][1];
    let s2 = -(diff * diff + 4.0 * a[0][1] * a[1][0]) / 4.0;
    if s2 < 0.0 {
        return None;
    }
    let s = s2.sqrt();
    let sign = if a[1][0] - a[0][1] >= 0.0 { 1.0 } else { -1.0 };
    Some((sign * s).atan2(half_trace))
}

/// Exponential of a traceless real matrix.
pub fn exp_sl2(x: &Mat2) -> Mat2 {
    let s2 = x[0][0] * x[0][0] + x[0][1] * x[1][0];
    let (c, sc) = cosh_sinhc(s2);
    [
        [c + sc * x[0][0], sc * x[0][1]],
        [sc * x[1][0], c + sc * x[1][1]],
    ]
}

/// `(cosh s, sinh(s)/s)` as functions of `s^2` (negative for rotations).
fn cosh_sinhc(s2: f64) -> (f64, f64) {
    if s2.abs() < 1e-6 {
        let c = 1.0 + s2 / 2.0 + s2 * s2 / 24.0;
        let sc = 1.0 + s2 / 6.0 + s2 * s2 / 120.0;
        (c, sc)
    } else if s2 > 0.0 {
        let s = s2.sqrt();
        (s.cosh(), s.sinh() / s)
    } else {
        let s = (-s2).sqrt();
        (s.cos(), s.sin() / s)
    }
}

/// Principal logarithm of a unimodular matrix with trace above -2, as a
/// traceless matrix.
pub fn log_sl2(m: &Mat2) -> Result<Mat2> {
    let half_trace = 0.5 * (m[0][0] + m[1][1]);
    if half_trace <= -1.0 {
        return Err(Error::Numerical(format!(
            "no real logarithm for trace {}",
            2.0 * half_trace
        )));
    }
    // m - m^{-1} = 2 sinhc(s) X
    let h = [
        [0.5 * (m[0][0] - m[1][1]), m[0][1]],
        [m[1][0], 0.5 * (m[1][1] - m[0][0])],
    ];
    let sinh2 = h[0][0] * h[0][0] + h[0][1] * h[1][0];
    let factor = if sinh2.abs() < 1e-12 && half_trace > 0.0 {
        // s / sinh s with sinh^2 s known, half_trace = cosh s
        1.0 - sinh2 / 6.0 + 3.0 * sinh2 * sinh2 / 40.0
    } else if sinh2 > 0.0 {
        let sh = sinh2.sqrt();
        sh.asinh() / sh
    } else {
        let sn = (-sinh2).sqrt();
        sn.atan2(half_trace) / sn
    };
    Ok(scale(&h, factor))
}

pub fn cmul(a: &CMat2, b: &CMat2) -> CMat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn cinv(a: &CMat2) -> CMat2 {
    let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

#[cfg(test)]
pub fn to_complex(a: &Mat2) -> CMat2 {
    [
        [Complex64::new(a[0][0], 0.0), Complex64::new(a[0][1], 0.0)],
        [Complex64::new(a[1][0], 0.0), Complex64::new(a[1][1], 0.0)],
    ]
}

/// Real part, plus the largest imaginary part discarded.
pub fn real_part(a: &CMat2) -> (Mat2, f64) {
    let mut im = 0.0f64;
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][j].re;
            im = im.max(a[i][j].im.abs());
        }
    }
    (r, im)
}
