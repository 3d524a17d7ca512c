//! Slice-level kernels behind the graph primitives.
//!
//! All loops run over contiguous row segments so the compiler can vectorize
//! them; accumulation order is fixed, which keeps results bit-reproducible.

/// Valid output row/column range for a tap offset `d` on an axis of length `n`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n.saturating_sub(d as usize) } else { n };
    (lo, hi.max(lo))
}

#[inline]
fn tap_offset(tap: usize) -> (isize, isize) {
    ((tap / 3) as isize - 1, (tap % 3) as isize - 1)
}

/// `out += wv * shift(src, dy, dx)` on one `h x w` plane.
#[inline]
fn axpy_shifted(out: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, wv: f64) {
    let (ylo, yhi) = span(h, dy);
    let (xlo, xhi) = span(w, dx);
    let len = xhi - xlo;
    if len == 0 {
        return;
    }
    for y in ylo..yhi {
        let iy = (y as isize + dy) as usize;
        let ix = (xlo as isize + dx) as usize;
        let o = &mut out[y * w + xlo..y * w + xhi];
        let s = &src[iy * w + ix..iy * w + ix + len];
        for (a, b) in o.iter_mut().zip(s) {
            *a += wv * *b;
        }
    }
}

/// Adjoint of [`axpy_shifted`]: `dst(shifted) += wv * grad`.
#[inline]
fn axpy_unshifted(dst: &mut [f64], grad: &[f64], h: usize, w: usize, dy: isize, dx: isize, wv: f64) {
    let (ylo, yhi) = span(h, dy);
    let (xlo, xhi) = span(w, dx);
    let len = xhi - xlo;
    if len == 0 {
        return;
    }
    for y in ylo..yhi {
        let iy = (y as isize + dy) as usize;
        let ix = (xlo as isize + dx) as usize;
        let d = &mut dst[iy * w + ix..iy * w + ix + len];
        let g = &grad[y * w + xlo..y * w + xhi];
        for (a, b) in d.iter_mut().zip(g) {
            *a += wv * *b;
        }
    }
}

/// `sum(grad * shift(src, dy, dx))`.
#[inline]
fn dot_shifted(grad: &[f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (ylo, yhi) = span(h, dy);
    let (xlo, xhi) = span(w, dx);
    let len = xhi - xlo;
    let mut acc = 0.0;
    if len == 0 {
        return acc;
    }
    for y in ylo..yhi {
        let iy = (y as isize + dy) as usize;
        let ix = (xlo as isize + dx) as usize;
        let g = &grad[y * w + xlo..y * w + xhi];
        let s = &src[iy * w + ix..iy * w + ix + len];
        let mut row = 0.0;
        for (a, b) in g.iter().zip(s) {
            row += a * b;
        }
        acc += row;
    }
    acc
}

/// Same-size 3x3 cross-correlation with zero padding 1.
pub(crate) fn conv3x3_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let hw = h * w;
    let k = bias.len();
    for ko in 0..k {
        let out_k = &mut out[ko * hw..(ko + 1) * hw];
        out_k.fill(bias[ko]);
        for ci in 0..c {
            let in_c = &input[ci * hw..(ci + 1) * hw];
            let wk = &kernel[(ko * c + ci) * 9..(ko * c + ci) * 9 + 9];
            for (tap, &wv) in wk.iter().enumerate() {
                let (dy, dx) = tap_offset(tap);
                axpy_shifted(out_k, in_c, h, w, dy, dx, wv);
            }
        }
    }
}

/// Accumulates input, kernel and bias gradients for [`conv3x3_forward`].
/// Any of the outputs may be skipped by passing `None`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    k: usize,
    grad_out: &[f64],
    mut grad_in: Option<&mut [f64]>,
    mut grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let hw = h * w;
    if let Some(gb) = grad_bias {
        for ko in 0..k {
            gb[ko] += grad_out[ko * hw..(ko + 1) * hw].iter().sum::<f64>();
        }
    }
    for ko in 0..k {
        let g_k = &grad_out[ko * hw..(ko + 1) * hw];
        for ci in 0..c {
            let base = (ko * c + ci) * 9;
            if let Some(gi) = grad_in.as_deref_mut() {
                let gi_c = &mut gi[ci * hw..(ci + 1) * hw];
                for tap in 0..9 {
                    let (dy, dx) = tap_offset(tap);
                    axpy_unshifted(gi_c, g_k, h, w, dy, dx, kernel[base + tap]);
                }
            }
            if let Some(gk) = grad_kernel.as_deref_mut() {
                let in_c = &input[ci * hw..(ci + 1) * hw];
                for tap in 0..9 {
                    let (dy, dx) = tap_offset(tap);
                    gk[base + tap] += dot_shifted(g_k, in_c, h, w, dy, dx);
                }
            }
        }
    }
}
