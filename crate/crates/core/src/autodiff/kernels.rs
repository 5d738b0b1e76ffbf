//! Small dense kernels shared by forward and backward passes.

use super::Real;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let pair = [
        acc[0] + acc[4],
        acc[1] + acc[5],
        acc[2] + acc[6],
        acc[3] + acc[7],
    ];
    (pair[0] + pair[2]) + (pair[1] + pair[3]) + tail
}

/// `out += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], out: &mut [T]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out += Σ_q alpha[q] * x[q]` over four consecutive rows of `x`.
#[inline]
fn axpy4<T: Real>(alpha: &[T], x: &[T], out: &mut [T]) {
    let c = out.len();
    let (x0, rest) = x.split_at(c);
    let (x1, rest) = rest.split_at(c);
    let (x2, x3) = rest.split_at(c);
    let (a0, a1, a2, a3) = (alpha[0], alpha[1], alpha[2], alpha[3]);
    for j in 0..c {
        out[j] += (a0 * x0[j] + a1 * x1[j]) + (a2 * x2[j] + a3 * x3[j]);
    }
}

/// Below this many output columns the row-update kernels lose to dot
/// products over a transposed operand.
const NARROW: usize = 8;

/// `out (r×c) += a (r×k) · b (k×c)`
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    if c < NARROW && k >= NARROW {
        return matmul_bt_acc(a, &transpose(b, k, c), out, r, k, c);
    }
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        let arow = &a[i * k..(i + 1) * k];
        let mut p = 0;
        while p + 4 <= k {
            axpy4(&arow[p..p + 4], &b[p * c..(p + 4) * c], orow);
            p += 4;
        }
        for p in p..k {
            axpy(arow[p], &b[p * c..(p + 1) * c], orow);
        }
    }
}

/// `out (r×c) += a (r×k) · bᵀ` where `b` is `c×k`.
pub fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    if r >= 4 && c >= NARROW {
        return matmul_acc(a, &transpose(b, c, k), out, r, k, c);
    }
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..c {
            out[i * c + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out (k×c) += aᵀ · b` where `a` is `r×k` and `b` is `r×c`.
pub fn matmul_at_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    if c < NARROW && r >= NARROW {
        return matmul_bt_acc(&transpose(a, r, k), &transpose(b, r, c), out, k, r, c);
    }
    let mut i = 0;
    while i + 4 <= r {
        let rows = &b[i * c..(i + 4) * c];
        for p in 0..k {
            let coef = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            axpy4(&coef, rows, &mut out[p * c..(p + 1) * c]);
        }
        i += 4;
    }
    for i in i..r {
        let brow = &b[i * c..(i + 1) * c];
        for p in 0..k {
            axpy(a[i * k + p], brow, &mut out[p * c..(p + 1) * c]);
        }
    }
}

pub fn transpose<T: Real>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum_for_odd_lengths() {
        for n in [0usize, 1, 7, 8, 9, 17, 33] {
            let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
            let b: Vec<f64> = (0..n).map(|i| 1.0 - i as f64).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn matmul_variants_agree() {
        // a: 2×3, b: 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut ab = vec![0.0f64; 4];
        matmul_acc(&a, &b, &mut ab, 2, 3, 2);
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);

        let bt = transpose(&b, 3, 2);
        let mut ab2 = vec![0.0f64; 4];
        matmul_bt_acc(&a, &bt, &mut ab2, 2, 3, 2);
        assert_eq!(ab, ab2);

        let at = transpose(&a, 2, 3);
        let mut ab3 = vec![0.0f64; 4];
        matmul_at_acc(&at, &b, &mut ab3, 3, 2, 2);
        assert_eq!(ab, ab3);
    }

    #[test]
    fn narrow_paths_match_row_updates() {
        let (r, k, c) = (9, 11, 3);
        let a: Vec<f64> = (0..r * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * c).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut fast = vec![0.0; r * c];
        matmul_acc(&a, &b, &mut fast, r, k, c);
        for i in 0..r {
            for j in 0..c {
                let naive: f64 = (0..k).map(|p| a[i * k + p] * b[p * c + j]).sum();
                assert!((fast[i * c + j] - naive).abs() < 1e-12);
            }
        }
        // aᵀ·y with a: r×k, y: r×c
        let y: Vec<f64> = (0..r * c).map(|i| i as f64 - 4.0).collect();
        let mut fast = vec![0.0; k * c];
        matmul_at_acc(&a, &y, &mut fast, r, k, c);
        for p in 0..k {
            for j in 0..c {
                let naive: f64 = (0..r).map(|i| a[i * k + p] * y[i * c + j]).sum();
                assert!((fast[p * c + j] - naive).abs() < 1e-12);
            }
        }
    }
}
