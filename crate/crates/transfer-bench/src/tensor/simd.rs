//! Blocked GEMM kernels. The `f32` path dispatches once, at first use, to the
//! widest vector extension the CPU offers. Each output element is reduced in
//! a fixed order on every path, so results are bit-identical for a given
//! machine regardless of thread count or block schedule.

use rayon::prelude::*;

/// Column-block width. One block of `b` (k x NB f32) stays L2-resident while
/// all `m` output rows sweep over it.
const NB: usize = 512;
/// Work threshold (multiply-adds) below which threading is not worth it.
const PAR_THRESHOLD: usize = 1 << 21;

pub fn gemm_generic<E: super::Element>(
    a: &[E],
    b: &[E],
    c: &mut [E],
    m: usize,
    k: usize,
    n: usize,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    let row = |row_a: &[E], row_c: &mut [E]| {
        for (p, &av) in row_a.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row_c.iter_mut().zip(brow) {
                *cv = cv.add(av.mul(bv));
            }
        }
    };
    // each output row is reduced in a fixed order by one thread
    if m * n * k >= PAR_THRESHOLD && m >= 2 && rayon::current_num_threads() > 1 {
        a.par_chunks_exact(k).zip(c.par_chunks_exact_mut(n)).for_each(|(ra, rc)| row(ra, rc));
    } else {
        for (ra, rc) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            row(ra, rc);
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Isa {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx2Fma,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn isa() -> Isa {
    use std::sync::OnceLock;
    static ISA: OnceLock<Isa> = OnceLock::new();
    *ISA.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::env::var_os("TRANSFER_BENCH_NO_SIMD").is_none() {
                if is_x86_feature_detected!("avx512f")
                    && is_x86_feature_detected!("avx512vl")
                    && is_x86_feature_detected!("fma")
                {
                    return Isa::Avx512;
                }
                if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                    return Isa::Avx2Fma;
                }
            }
        }
        Isa::Portable
    })
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f32);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    fn get(self) -> *mut f32 {
        self.0
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`, row-major, parallel over column blocks.
pub fn gemm_f32(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    if k == 0 {
        return;
    }
    let nblocks = n.div_ceil(NB);
    if m * n * k >= PAR_THRESHOLD && nblocks >= 2 && rayon::current_num_threads() > 1 {
        let base = SendPtr(c.as_mut_ptr());
        (0..nblocks).into_par_iter().for_each(|blk| {
            let j0 = blk * NB;
            let j1 = (j0 + NB).min(n);
            // Each block owns the disjoint column range [j0, j1) of `c`.
            unsafe { gemm_block(a, b, base.get(), m, k, n, j0, j1) };
        });
    } else {
        let base = c.as_mut_ptr();
        for blk in 0..nblocks {
            let j0 = blk * NB;
            let j1 = (j0 + NB).min(n);
            unsafe { gemm_block(a, b, base, m, k, n, j0, j1) };
        }
    }
}

/// Safety: caller must own columns `[j0, j1)` of the `m x n` matrix at `c`.
unsafe fn gemm_block(a: &[f32], b: &[f32], c: *mut f32, m: usize, k: usize, n: usize, j0: usize, j1: usize) {
    match isa() {
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => gemm_block_avx512(a, b, c, m, k, n, j0, j1),
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2Fma => gemm_block_avx2(a, b, c, m, k, n, j0, j1),
        Isa::Portable => gemm_block_portable(a, b, c, m, k, n, j0, j1),
    }
}

/// Register-tiled block update: MR x NR output tiles held in registers across
/// the whole k loop, so each B element load feeds MR fused multiply-adds.
#[inline(always)]
unsafe fn block_kernel<const MR: usize, const NR: usize>(
    a: &[f32],
    b: &[f32],
    c: *mut f32,
    m: usize,
    k: usize,
    n: usize,
    j0: usize,
    j1: usize,
) {
    let mut jt = j0;
    while jt < j1 {
        let w = (j1 - jt).min(NR);
        if w == NR {
            let mut r0 = 0;
            while r0 + MR <= m {
                tile_kernel::<MR, NR>(a, b, c, k, n, r0, jt);
                r0 += MR;
            }
            for r in r0..m {
                row_tail_fma(a, b, c, k, n, r, jt, NR);
            }
        } else {
            for r in 0..m {
                row_tail_fma(a, b, c, k, n, r, jt, w);
            }
        }
        jt += NR;
    }
}

#[inline(always)]
unsafe fn tile_kernel<const MR: usize, const NR: usize>(
    a: &[f32],
    b: &[f32],
    c: *mut f32,
    k: usize,
    n: usize,
    r0: usize,
    jt: usize,
) {
    let mut acc = [[0f32; NR]; MR];
    for (r, accr) in acc.iter_mut().enumerate() {
        let crow = std::slice::from_raw_parts(c.add((r0 + r) * n + jt), NR);
        accr.copy_from_slice(crow);
    }
    for p in 0..k {
        let brow = std::slice::from_raw_parts(b.as_ptr().add(p * n + jt), NR);
        for (r, accr) in acc.iter_mut().enumerate() {
            let av = *a.get_unchecked((r0 + r) * k + p);
            for j in 0..NR {
                accr[j] = av.mul_add(brow[j], accr[j]);
            }
        }
    }
    for (r, accr) in acc.iter().enumerate() {
        let crow = std::slice::from_raw_parts_mut(c.add((r0 + r) * n + jt), NR);
        crow.copy_from_slice(accr);
    }
}

#[inline(always)]
unsafe fn row_tail_fma(a: &[f32], b: &[f32], c: *mut f32, k: usize, n: usize, r: usize, jt: usize, w: usize) {
    let crow = std::slice::from_raw_parts_mut(c.add(r * n + jt), w);
    for p in 0..k {
        let av = *a.get_unchecked(r * k + p);
        if av == 0.0 {
            continue;
        }
        let brow = std::slice::from_raw_parts(b.as_ptr().add(p * n + jt), w);
        for j in 0..w {
            crow[j] = av.mul_add(brow[j], crow[j]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512vl,avx2,fma")]
unsafe fn gemm_block_avx512(a: &[f32], b: &[f32], c: *mut f32, m: usize, k: usize, n: usize, j0: usize, j1: usize) {
    block_kernel::<8, 32>(a, b, c, m, k, n, j0, j1)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_block_avx2(a: &[f32], b: &[f32], c: *mut f32, m: usize, k: usize, n: usize, j0: usize, j1: usize) {
    block_kernel::<4, 16>(a, b, c, m, k, n, j0, j1)
}

/// Plain mul+add keeps this path autovectorizable on the baseline target;
/// `mul_add` without hardware FMA lowers to a libm call per lane.
unsafe fn gemm_block_portable(a: &[f32], b: &[f32], c: *mut f32, m: usize, k: usize, n: usize, j0: usize, j1: usize) {
    let w = j1 - j0;
    for r in 0..m {
        let crow = std::slice::from_raw_parts_mut(c.add(r * n + j0), w);
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n + j0..p * n + j0 + w];
            for j in 0..w {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// Row-major transpose of `a[rows, cols]`.
pub fn transpose<E: super::Element>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    assert_eq!(a.len(), rows * cols);
    let mut out = vec![E::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm_ref(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0f32; m * n];
        gemm_generic(a, b, &mut c, m, k, n);
        c
    }

    #[test]
    fn f32_path_matches_reference() {
        // Odd sizes exercise every tail path of the tiled kernel.
        for &(m, k, n) in &[(7usize, 33usize, 1100usize), (9, 5, 37), (8, 16, 512), (1, 3, 4)] {
            let a: Vec<f32> = (0..m * k).map(|i| ((i * 37 % 19) as f32 - 9.0) * 0.125).collect();
            let b: Vec<f32> = (0..k * n).map(|i| ((i * 53 % 23) as f32 - 11.0) * 0.0625).collect();
            let mut c = vec![0.0f32; m * n];
            gemm_f32(&a, &b, &mut c, m, k, n);
            let expect = gemm_ref(&a, &b, m, k, n);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() <= 1e-4 * y.abs().max(1.0), "{m}x{k}x{n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn parallel_blocks_are_deterministic() {
        let m = 16;
        let k = 64;
        let n = 4096;
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32).cos()).collect();
        let mut c1 = vec![0.0f32; m * n];
        let mut c2 = vec![0.0f32; m * n];
        gemm_f32(&a, &b, &mut c1, m, k, n);
        gemm_f32(&a, &b, &mut c2, m, k, n);
        assert_eq!(c1, c2);
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let t = transpose(&a, 3, 4);
        let back = transpose(&t, 4, 3);
        assert_eq!(a, back);
    }
}
