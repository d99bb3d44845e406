//! Dense row-major kernels used by convolution and the recurrent cells.
//!
//! [`gemm`] accumulates every output element sequentially over `k`, starting
//! from the value already in `c`. That fixed order is what lets convolution
//! agree bitwise with a direct summation.

use crate::tensor::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`.
pub fn gemm<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(
        a.len() == m * k && b.len() == k * n && c.len() == m * n,
        "gemm operand sizes"
    );
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(m, n, k, a, b, c) };
            return;
        }
    }
    gemm_impl(m, n, k, a, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_impl(m, n, k, a, b, c)
}

#[inline(always)]
fn gemm_impl<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    if m == 0 || n == 0 {
        return;
    }
    let n_full = n - n % NR;
    let m_full = m - m % MR;
    for j0 in (0..n_full).step_by(NR) {
        for i0 in (0..m_full).step_by(MR) {
            block::<T>(n, k, a, b, c, i0, j0);
        }
        for i in m_full..m {
            row_block::<T>(n, k, a, b, c, i, j0);
        }
    }
    if n_full < n {
        // axpy form keeps each element's accumulation sequential in k
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + n_full..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n + n_full..(kk + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

#[inline(always)]
fn block<T: Scalar>(n: usize, k: usize, a: &[T], b: &[T], c: &mut [T], i0: usize, j0: usize) {
    let mut acc = [[T::default(); NR]; MR];
    for r in 0..MR {
        acc[r].copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
    }
    let a0 = &a[i0 * k..(i0 + 1) * k];
    let a1 = &a[(i0 + 1) * k..(i0 + 2) * k];
    let a2 = &a[(i0 + 2) * k..(i0 + 3) * k];
    let a3 = &a[(i0 + 3) * k..(i0 + 4) * k];
    for kk in 0..k {
        let brow: &[T; NR] = b[kk * n + j0..kk * n + j0 + NR].try_into().unwrap();
        let av = [a0[kk], a1[kk], a2[kk], a3[kk]];
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] += av[r] * brow[j];
            }
        }
    }
    for r in 0..MR {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(&acc[r]);
    }
}

#[inline(always)]
fn row_block<T: Scalar>(n: usize, k: usize, a: &[T], b: &[T], c: &mut [T], i: usize, j0: usize) {
    let mut acc = [T::default(); NR];
    acc.copy_from_slice(&c[i * n + j0..i * n + j0 + NR]);
    let arow = &a[i * k..(i + 1) * k];
    for (kk, &av) in arow.iter().enumerate() {
        let brow: &[T; NR] = b[kk * n + j0..kk * n + j0 + NR].try_into().unwrap();
        for j in 0..NR {
            acc[j] += av * brow[j];
        }
    }
    c[i * n + j0..i * n + j0 + NR].copy_from_slice(&acc);
}

/// Row-major transpose of an `r×c` matrix.
pub fn transpose<T: Scalar>(r: usize, c: usize, a: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); r * c];
    const B: usize = 32;
    for i0 in (0..r).step_by(B) {
        for j0 in (0..c).step_by(B) {
            for i in i0..(i0 + B).min(r) {
                for j in j0..(j0 + B).min(c) {
                    out[j * r + i] = a[i * c + j];
                }
            }
        }
    }
    out
}

/// `c[m×n] += a[m×k] · bᵀ` where `b` is stored `n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    let bt = transpose(n, k, b);
    gemm(m, n, k, a, &bt, c);
}

/// `c[m×n] += aᵀ · b[k×n]` where `a` is stored `k×m`.
pub fn gemm_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    let at = transpose(k, m, a);
    gemm(m, n, k, &at, b, c);
}

pub fn sum<T: Scalar>(xs: &[T]) -> T {
    let mut acc = [T::default(); 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for ch in chunks {
        for i in 0..8 {
            acc[i] += ch[i];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for &x in rest {
        s += x;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = c[i * n + j];
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                c[i * n + j] = acc;
            }
        }
    }

    #[test]
    fn gemm_matches_naive_bitwise() {
        let mut rng = SeededRng::new(11);
        for &(m, n, k) in &[
            (1, 1, 1),
            (4, 16, 3),
            (5, 17, 9),
            (9, 40, 33),
            (3, 7, 0),
            (12, 32, 5),
        ] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
            let c0: Vec<f64> = (0..m * n).map(|_| rng.normal()).collect();
            let mut c1 = c0.clone();
            let mut c2 = c0.clone();
            gemm(m, n, k, &a, &b, &mut c1);
            naive(m, n, k, &a, &b, &mut c2);
            assert_eq!(c1, c2, "{m}x{n}x{k}");
        }
    }

    #[test]
    fn transposed_variants() {
        let mut rng = SeededRng::new(2);
        let (m, n, k) = (6, 19, 7);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let mut want = vec![0.0; m * n];
        naive(m, n, k, &a, &b, &mut want);
        let mut got = vec![0.0; m * n];
        gemm_nt(m, n, k, &a, &transpose(k, n, &b), &mut got);
        assert_eq!(got, want);
        let mut got = vec![0.0; m * n];
        gemm_tn(m, n, k, &transpose(m, k, &a), &b, &mut got);
        assert_eq!(got, want);
        assert_eq!(sum(&(1..=20).map(f64::from).collect::<Vec<_>>()), 210.0);
    }
}
