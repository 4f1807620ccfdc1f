//! Small row-major matrix kernels. Inner loops run over contiguous rows so
//! the compiler can vectorize them.

use super::Scalar;

const TILE: usize = 512;
const LANES: usize = 8;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    // Column tiles keep four output rows in L1 while each row of b is
    // streamed once per group of four.
    for j0 in (0..n).step_by(TILE) {
        let len = TILE.min(n - j0);
        let mut i = 0;
        while i + 4 <= m {
            let block = &mut c[i * n..(i + 4) * n];
            let (r0, rest) = block.split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (c0, c1, c2, c3) = (
                &mut r0[j0..j0 + len],
                &mut r1[j0..j0 + len],
                &mut r2[j0..j0 + len],
                &mut r3[j0..j0 + len],
            );
            for p in 0..k {
                let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
                let brow = &b[p * n + j0..p * n + j0 + len];
                for j in 0..len {
                    let bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
            i += 4;
        }
        for i in i..m {
            let crow = &mut c[i * n + j0..i * n + j0 + len];
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n + j0..p * n + j0 + len];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    // Independent lanes let the reduction vectorize; the order is fixed.
    let mut acc = [T::zero(); LANES];
    let xs = x.chunks_exact(LANES);
    let ys = y.chunks_exact(LANES);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (cx, cy) in xs.zip(ys) {
        for l in 0..LANES {
            acc[l] += cx[l] * cy[l];
        }
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    for (&a, &b) in xr.iter().zip(yr) {
        total += a * b;
    }
    total
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
