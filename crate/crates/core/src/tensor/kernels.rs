//! Slice-level numeric kernels. Every reduction runs in a fixed index order,
//! so results are bit-identical across runs.

use crate::scalar::Scalar;

/// `out = a[p×q] · b[q×r]`, overwriting `out`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], p: usize, q: usize, r: usize) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `acc[p×q] += d[p×r] · bᵀ` where `b` is `q×r`.
pub(crate) fn matmul_add_bt<T: Scalar>(d: &[T], b: &[T], acc: &mut [T], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let d_row = &d[i * r..(i + 1) * r];
        for k in 0..q {
            let b_row = &b[k * r..(k + 1) * r];
            let mut s = T::zero();
            for (&x, &y) in d_row.iter().zip(b_row) {
                s += x * y;
            }
            acc[i * q + k] += s;
        }
    }
}

/// `acc[q×r] += aᵀ · d` where `a` is `p×q` and `d` is `p×r`.
pub(crate) fn matmul_add_at<T: Scalar>(a: &[T], d: &[T], acc: &mut [T], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let d_row = &d[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == T::zero() {
                continue;
            }
            let acc_row = &mut acc[k * r..(k + 1) * r];
            for (o, &dv) in acc_row.iter_mut().zip(d_row) {
                *o += aik * dv;
            }
        }
    }
}

pub(crate) fn transpose<T: Scalar>(x: &[T], out: &mut [T], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(x: &[T], out: &mut [T], cols: usize) {
    for (xr, or) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        let inv = sum.recip();
        or.iter_mut().for_each(|o| *o *= inv);
    }
}

/// Log-sum-exp of one row.
pub(crate) fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = x.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Standard normal CDF.
pub(crate) fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Standard normal density.
pub(crate) fn normal_pdf<T: Scalar>(x: T) -> T {
    let c = T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    c * (-(x * x) * T::of(0.5)).exp()
}

/// Exact GELU, `x·Φ(x)`.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
