//! Row-times-matrix kernels for small inference workloads, where packing a
//! GEMM costs more than the multiply.
//!
//! Every path computes each output as its starting value plus the terms
//! `x[k] * w[k][j]` for nonzero `x[k]`, added one at a time in increasing `k`.
//! Strip width and row blocking only change which outputs share registers.
//! The AVX paths fuse each multiply-add; the portable path rounds the product
//! first. Results are therefore reproducible per machine, not across machines
//! with and without FMA.

/// `out += x · W` for one row `x`; `w` is `x.len() × out.len()`, row-major.
pub(crate) fn row_times_matrix(x: &[f64], w: &[f64], out: &mut [f64]) {
    rows_times_matrix(x, w, out, x.len());
}

/// `out += X · W` where `X` is `rows × k` and `out` is `rows × n`, both row-major.
pub(crate) fn rows_times_matrix(x: &[f64], w: &[f64], out: &mut [f64], k: usize) {
    let n = if k == 0 { 0 } else { w.len() / k };
    assert_eq!(w.len(), k * n, "weight shape");
    if n == 0 {
        return;
    }
    assert_eq!(x.len() / k * n, out.len(), "row count");
    let rows = out.len() / n;
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: AVX-512F and FMA support were just checked.
            unsafe { kernel_avx512(x, w, out, k, n, rows) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: AVX2 and FMA support were just checked.
            unsafe { kernel_avx2(x, w, out, k, n, rows) };
            return;
        }
    }
    blocked::<false, 1, 16>(x, w, out, k, n, 0, rows);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn kernel_avx512(x: &[f64], w: &[f64], out: &mut [f64], k: usize, n: usize, rows: usize) {
    if rows == 1 {
        blocked::<true, 1, 64>(x, w, out, k, n, 0, 1);
        return;
    }
    let r = blocked::<true, 4, 32>(x, w, out, k, n, 0, rows);
    let r = blocked::<true, 2, 32>(x, w, out, k, n, r, rows);
    blocked::<true, 1, 64>(x, w, out, k, n, r, rows);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn kernel_avx2(x: &[f64], w: &[f64], out: &mut [f64], k: usize, n: usize, rows: usize) {
    let r = blocked::<true, 2, 16>(x, w, out, k, n, 0, rows);
    blocked::<true, 1, 32>(x, w, out, k, n, r, rows);
}

/// Runs whole blocks of `R` rows times strips of `L` columns over rows
/// `r0..rows`; returns the first row not covered.
#[inline(always)]
fn blocked<const F: bool, const R: usize, const L: usize>(x: &[f64], w: &[f64], out: &mut [f64], k: usize, n: usize, r0: usize, rows: usize) -> usize {
    let mut r0 = r0;
    while r0 + R <= rows {
        let xs = &x[r0 * k..(r0 + R) * k];
        let os = &mut out[r0 * n..(r0 + R) * n];
        let mut c0 = 0;
        while c0 + L <= n {
            strip::<F, R, L>(xs, w, os, k, n, c0);
            c0 += L;
        }
        if c0 < n {
            for r in 0..R {
                tail::<F>(&xs[r * k..(r + 1) * k], w, &mut os[r * n..(r + 1) * n], n, c0);
            }
        }
        r0 += R;
    }
    r0
}

#[inline(always)]
fn strip<const F: bool, const R: usize, const L: usize>(x: &[f64], w: &[f64], out: &mut [f64], k: usize, n: usize, c0: usize) {
    let mut acc = [[0.0; L]; R];
    for (r, a) in acc.iter_mut().enumerate() {
        a.copy_from_slice(&out[r * n + c0..r * n + c0 + L]);
    }
    for kk in 0..k {
        let row: &[f64; L] = w[kk * n + c0..kk * n + c0 + L].try_into().unwrap();
        for (r, a) in acc.iter_mut().enumerate() {
            let xk = x[r * k + kk];
            if xk == 0.0 {
                continue;
            }
            for j in 0..L {
                a[j] = mac::<F>(a[j], xk, row[j]);
            }
        }
    }
    for (r, a) in acc.iter().enumerate() {
        out[r * n + c0..r * n + c0 + L].copy_from_slice(a);
    }
}

#[inline(always)]
fn mac<const F: bool>(acc: f64, x: f64, w: f64) -> f64 {
    if F {
        x.mul_add(w, acc)
    } else {
        acc + x * w
    }
}

#[inline(always)]
fn tail<const F: bool>(x: &[f64], w: &[f64], out: &mut [f64], n: usize, c0: usize) {
    for (kk, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        for (o, wv) in out[c0..].iter_mut().zip(&w[kk * n + c0..(kk + 1) * n]) {
            *o = mac::<F>(*o, xk, *wv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sequential(x: &[f64], w: &[f64], init: &[f64], k: usize, n: usize, fused: bool) -> Vec<f64> {
        let rows = init.len() / n;
        (0..rows * n)
            .map(|i| {
                let (r, j) = (i / n, i % n);
                (0..k).filter(|&kk| x[r * k + kk] != 0.0).fold(init[i], |acc, kk| {
                    let (a, b) = (x[r * k + kk], w[kk * n + j]);
                    if fused {
                        a.mul_add(b, acc)
                    } else {
                        acc + a * b
                    }
                })
            })
            .collect()
    }

    fn dispatch_fuses() -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("fma")
                && (std::arch::is_x86_feature_detected!("avx2") || std::arch::is_x86_feature_detected!("avx512f"))
        }
        #[cfg(not(target_arch = "x86_64"))]
        false
    }

    #[test]
    fn every_path_matches_sequential_sum_bitwise() {
        for (rows, k, n) in [(1, 13, 37), (1, 11, 130), (3, 9, 64), (7, 64, 64), (5, 64, 130), (2, 5, 10)] {
            let x: Vec<f64> = (0..rows * k).map(|i| if i % 5 == 2 { 0.0 } else { (i as f64 * 0.37).sin() }).collect();
            let w: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let init: Vec<f64> = (0..rows * n).map(|i| 0.5 - 0.01 * i as f64).collect();
            let want = sequential(&x, &w, &init, k, n, dispatch_fuses());
            let mut got = init.clone();
            rows_times_matrix(&x, &w, &mut got, k);
            assert_eq!(got, want, "{rows}x{k}x{n}");
            for r in 0..rows {
                let mut one = init[r * n..(r + 1) * n].to_vec();
                row_times_matrix(&x[r * k..(r + 1) * k], &w, &mut one);
                assert_eq!(one, want[r * n..(r + 1) * n], "row {r} of {rows}x{k}x{n}");
            }
            let mut portable = init.clone();
            blocked::<false, 1, 16>(&x, &w, &mut portable, k, n, 0, rows);
            assert_eq!(portable, sequential(&x, &w, &init, k, n, false));
            let mut fused = init.clone();
            blocked::<true, 3, 8>(&x, &w, &mut fused, k, n, 0, rows);
            assert_eq!(fused[..rows / 3 * 3 * n], sequential(&x, &w, &init, k, n, true)[..rows / 3 * 3 * n]);
        }
    }
}
