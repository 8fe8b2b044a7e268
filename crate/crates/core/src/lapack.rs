//! Thin SVD through LAPACK `?gesdd` (system OpenBLAS).
//!
//! nalgebra's bidiagonal SVD loses accuracy on some rank-deficient inputs,
//! which the thresholded solves run into all the time, so the decomposition
//! is delegated to the divide-and-conquer driver.

use std::os::raw::{c_char, c_int};
use std::sync::Once;

use lapack_sys::{dgesdd_, zgesdd_, __BindgenComplex};
use nalgebra::{ComplexField, DMatrix, DVector};

use crate::numkit::C64;

extern "C" {
    fn openblas_set_num_threads(n: c_int);
}

static SINGLE_THREAD: Once = Once::new();

/// Parallelism lives at the trajectory level; OpenBLAS threads would only
/// oversubscribe and make results depend on the thread count.
fn init() {
    SINGLE_THREAD.call_once(|| unsafe { openblas_set_num_threads(1) });
}

/// `(U, σ, V†)` with `U` of shape `m × r`, `V†` of shape `r × n`, `r = min(m, n)`.
pub type Thin<T> = (DMatrix<T>, DVector<f64>, DMatrix<T>);

/// Scalars with a LAPACK SVD driver (`f64` and `Complex64`).
pub trait SvdScalar: ComplexField<RealField = f64> + Copy {
    /// `None` when the driver reports an error or fails to converge.
    fn svd_thin(m: &DMatrix<Self>) -> Option<Thin<Self>>;
}

fn dims(m: usize, n: usize) -> (c_int, c_int, c_int) {
    (m as c_int, n as c_int, m.min(n) as c_int)
}

impl SvdScalar for f64 {
    fn svd_thin(a: &DMatrix<f64>) -> Option<Thin<f64>> {
        init();
        let (m, n, r) = dims(a.nrows(), a.ncols());
        let mut a = a.clone();
        let mut s = DVector::<f64>::zeros(r as usize);
        let mut u = DMatrix::<f64>::zeros(m as usize, r as usize);
        let mut vt = DMatrix::<f64>::zeros(r as usize, n as usize);
        let job = b'S' as c_char;
        let mut info: c_int = 0;
        let mut query = [0.0f64];
        let lwork: c_int = -1;
        let mut iwork = vec![0 as c_int; 8 * r.max(1) as usize];
        unsafe {
            dgesdd_(
                &job, &m, &n, a.as_mut_ptr(), &m, s.as_mut_ptr(), u.as_mut_ptr(), &m,
                vt.as_mut_ptr(), &r, query.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &mut info,
            );
        }
        if info != 0 {
            return None;
        }
        let lwork = query[0] as c_int;
        let mut work = vec![0.0f64; lwork.max(1) as usize];
        unsafe {
            dgesdd_(
                &job, &m, &n, a.as_mut_ptr(), &m, s.as_mut_ptr(), u.as_mut_ptr(), &m,
                vt.as_mut_ptr(), &r, work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &mut info,
            );
        }
        (info == 0).then_some((u, s, vt))
    }
}

impl SvdScalar for C64 {
    fn svd_thin(a: &DMatrix<C64>) -> Option<Thin<C64>> {
        init();
        let (m, n, r) = dims(a.nrows(), a.ncols());
        let mut a = a.clone();
        let mut s = DVector::<f64>::zeros(r as usize);
        let mut u = DMatrix::<C64>::zeros(m as usize, r as usize);
        let mut vt = DMatrix::<C64>::zeros(r as usize, n as usize);
        let (mx, mn) = (m.max(n) as usize, r.max(1) as usize);
        let mut rwork = vec![0.0f64; (5 * mn * mn + 5 * mn).max(2 * mx * mn + 2 * mn * mn + mn)];
        let mut iwork = vec![0 as c_int; 8 * mn];
        let job = b'S' as c_char;
        let mut info: c_int = 0;
        let mut query = [C64::new(0.0, 0.0)];
        let lwork: c_int = -1;
        // Complex64 is #[repr(C)] { re, im }, the same layout as the binding type.
        let p = |x: &mut [C64]| x.as_mut_ptr() as *mut __BindgenComplex<f64>;
        unsafe {
            zgesdd_(
                &job, &m, &n, p(a.as_mut_slice()), &m, s.as_mut_ptr(), p(u.as_mut_slice()), &m,
                p(vt.as_mut_slice()), &r, p(&mut query), &lwork, rwork.as_mut_ptr(), iwork.as_mut_ptr(), &mut info,
            );
        }
        if info != 0 {
            return None;
        }
        let lwork = query[0].re as c_int;
        let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
        unsafe {
            zgesdd_(
                &job, &m, &n, p(a.as_mut_slice()), &m, s.as_mut_ptr(), p(u.as_mut_slice()), &m,
                p(vt.as_mut_slice()), &r, p(&mut work), &lwork, rwork.as_mut_ptr(), iwork.as_mut_ptr(), &mut info,
            );
        }
        (info == 0).then_some((u, s, vt))
    }
}
