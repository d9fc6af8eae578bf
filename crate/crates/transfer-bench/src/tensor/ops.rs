//! Raw kernels behind the graph ops. All kernels are deterministic: each
//! output element is reduced in a fixed order regardless of threading.

use rayon::prelude::*;

use super::simd;
use super::Element;

/// Padding mode for 3x3 stride-1 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn out_dims(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Padding::Same => (h, w),
            Padding::Valid => (h - 2, w - 2),
        }
    }

    fn offset(self) -> isize {
        match self {
            Padding::Same => 1,
            Padding::Valid => 0,
        }
    }
}

/// Scatter a `[C,H,W]` plane into the 3x3-patch matrix `[C*9, OH*OW]`.
fn im2col<E: Element>(x: &[E], c: usize, h: usize, w: usize, padding: Padding, out: &mut [E]) {
    let (oh, ow) = padding.out_dims(h, w);
    let pad = padding.offset();
    debug_assert_eq!(out.len(), c * 9 * oh * ow);
    out.fill(E::ZERO);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for dy in 0..3isize {
            for dx in 0..3isize {
                let prow = &mut out[(ci * 9 + (dy * 3 + dx) as usize) * oh * ow..][..oh * ow];
                // valid output columns for this (dy, dx)
                let ox0 = 0.max(pad - dx) as usize;
                let ox1 = (ow as isize).min(w as isize + pad - dx) as usize;
                if ox0 >= ox1 {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy as isize + dy - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let ix0 = (ox0 as isize + dx - pad) as usize;
                    let src = &plane[iy as usize * w + ix0..][..ox1 - ox0];
                    prow[oy * ow + ox0..oy * ow + ox1].copy_from_slice(src);
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: accumulate patch-matrix gradients back into the
/// `[C,H,W]` input gradient.
fn col2im<E: Element>(cols: &[E], c: usize, h: usize, w: usize, padding: Padding, dx_out: &mut [E]) {
    let (oh, ow) = padding.out_dims(h, w);
    let pad = padding.offset();
    for ci in 0..c {
        let plane = &mut dx_out[ci * h * w..(ci + 1) * h * w];
        for dy in 0..3isize {
            for dxi in 0..3isize {
                let prow = &cols[(ci * 9 + (dy * 3 + dxi) as usize) * oh * ow..][..oh * ow];
                let ox0 = 0.max(pad - dxi) as usize;
                let ox1 = (ow as isize).min(w as isize + pad - dxi) as usize;
                if ox0 >= ox1 {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy as isize + dy - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let ix0 = (ox0 as isize + dxi - pad) as usize;
                    let dst = &mut plane[iy as usize * w + ix0..][..ox1 - ox0];
                    let src = &prow[oy * ow + ox0..oy * ow + ox1];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = d.add(s);
                    }
                }
            }
        }
    }
}

/// Batched 3x3 stride-1 convolution. `x: [N,C,H,W]`, `kernel: [K,C,3,3]`.
pub fn conv2d_forward<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: &[E],
    kout: usize,
    padding: Padding,
) -> Vec<E> {
    let (oh, ow) = padding.out_dims(h, w);
    let in_stride = c * h * w;
    let out_stride = kout * oh * ow;
    let mut out = vec![E::ZERO; n * out_stride];
    let run = |xi: &[E], oi: &mut [E]| {
        let mut cols = vec![E::ZERO; c * 9 * oh * ow];
        im2col(xi, c, h, w, padding, &mut cols);
        E::gemm_accumulate(kernel, &cols, oi, kout, c * 9, oh * ow);
    };
    if n > 1 {
        x.par_chunks_exact(in_stride)
            .zip(out.par_chunks_exact_mut(out_stride))
            .for_each(|(xi, oi)| run(xi, oi));
    } else {
        run(x, &mut out);
    }
    out
}

/// Gradients of [`conv2d_forward`]. Either output may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernel: &[E],
    kout: usize,
    padding: Padding,
    d_out: &[E],
    dx: Option<&mut [E]>,
    dkernel: Option<&mut [E]>,
) {
    let (oh, ow) = padding.out_dims(h, w);
    let in_stride = c * h * w;
    let out_stride = kout * oh * ow;
    if let Some(dx) = dx {
        let kernel_t = simd::transpose(kernel, kout, c * 9);
        let run = |doi: &[E], dxi: &mut [E]| {
            let mut dcols = vec![E::ZERO; c * 9 * oh * ow];
            E::gemm_accumulate(&kernel_t, doi, &mut dcols, c * 9, kout, oh * ow);
            col2im(&dcols, c, h, w, padding, dxi);
        };
        if n > 1 {
            d_out
                .par_chunks_exact(out_stride)
                .zip(dx.par_chunks_exact_mut(in_stride))
                .for_each(|(doi, dxi)| run(doi, dxi));
        } else {
            run(d_out, dx);
        }
    }
    if let Some(dkernel) = dkernel {
        // Per-sample partials are reduced in sample order for determinism.
        let partials: Vec<Vec<E>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = &x[i * in_stride..(i + 1) * in_stride];
                let doi = &d_out[i * out_stride..(i + 1) * out_stride];
                let mut cols = vec![E::ZERO; c * 9 * oh * ow];
                im2col(xi, c, h, w, padding, &mut cols);
                let cols_t = simd::transpose(&cols, c * 9, oh * ow);
                let mut dk = vec![E::ZERO; kout * c * 9];
                E::gemm_accumulate(doi, &cols_t, &mut dk, kout, oh * ow, c * 9);
                dk
            })
            .collect();
        for part in partials {
            for (d, s) in dkernel.iter_mut().zip(part) {
                *d = d.add(s);
            }
        }
    }
}

/// 2x2 max pooling. Returns the output and the argmax index (local to each
/// `[H,W]` plane); ties resolve to the first element in row-major scan order.
pub fn maxpool2d_forward<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    stride: usize,
) -> (Vec<E>, Vec<u32>, usize, usize) {
    let oh = (h - 2) / stride + 1;
    let ow = (w - 2) / stride + 1;
    let planes = n * c;
    let mut out = vec![E::ZERO; planes * oh * ow];
    let mut argmax = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        let obase = p * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = oy * stride;
                let x0 = ox * stride;
                let mut best = plane[y0 * w + x0];
                let mut best_i = (y0 * w + x0) as u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (y0 + dy) * w + x0 + dx;
                        let v = plane[idx];
                        if v > best {
                            best = v;
                            best_i = idx as u32;
                        }
                    }
                }
                out[obase + oy * ow + ox] = best;
                argmax[obase + oy * ow + ox] = best_i;
            }
        }
    }
    (out, argmax, oh, ow)
}

pub fn maxpool2d_backward<E: Element>(
    argmax: &[u32],
    d_out: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    dx: &mut [E],
) {
    let planes = n * c;
    for p in 0..planes {
        let dplane = &mut dx[p * h * w..(p + 1) * h * w];
        let obase = p * oh * ow;
        for i in 0..oh * ow {
            let src = argmax[obase + i] as usize;
            dplane[src] = dplane[src].add(d_out[obase + i]);
        }
    }
}

/// Row-wise softmax of `[N,M]` logits via the log-sum-exp trick.
pub fn softmax_rows<E: Element>(logits: &[E], n: usize, m: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; n * m];
    for (row, orow) in logits.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
        let mut mx = row[0];
        for &v in &row[1..] {
            mx = mx.maximum(v);
        }
        let mut sum = E::ZERO;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = v.sub(mx).exp();
            *o = e;
            sum = sum.add(e);
        }
        for o in orow.iter_mut() {
            *o = o.div(sum);
        }
    }
    out
}

/// Mean negative log-likelihood of `[N,2]` logits under the given labels.
/// Returns the loss and the cached softmax for the backward pass.
pub fn softmax_xent_forward<E: Element>(logits: &[E], n: usize, labels: &[usize]) -> (E, Vec<E>) {
    let m = 2;
    let softmax = softmax_rows(logits, n, m);
    let mut total = E::ZERO;
    for (i, row) in logits.chunks_exact(m).enumerate() {
        let mut mx = row[0];
        for &v in &row[1..] {
            mx = mx.maximum(v);
        }
        let mut sum = E::ZERO;
        for &v in row {
            sum = sum.add(v.sub(mx).exp());
        }
        let lse = mx.add(sum.ln());
        total = total.add(lse.sub(row[labels[i]]));
    }
    (total.div(E::from_f64(n as f64)), softmax)
}
