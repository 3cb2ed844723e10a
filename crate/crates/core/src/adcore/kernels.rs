//! Numeric kernels for the tensor primitives. Layout is `(batch, channel,
//! position)` row-major for all sequence tensors.

/// Zero padding that keeps the output length equal to the input length for
/// an odd kernel.
fn padding(kernel: usize, dilation: usize) -> isize {
    (dilation * (kernel - 1) / 2) as isize
}

/// Valid output range `[lo, hi)` for a tap at offset `off`.
fn tap_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub dilation: usize,
}

pub(crate) fn conv1d_forward(d: &ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        kernel,
        dilation,
    } = *d;
    let pad = padding(kernel, dilation);
    let mut y = vec![0.0; batch * c_out * len];
    for bi in 0..batch {
        for co in 0..c_out {
            let out = &mut y[(bi * c_out + co) * len..][..len];
            out.fill(b[co]);
            for ci in 0..c_in {
                let xin = &x[(bi * c_in + ci) * len..][..len];
                for t in 0..kernel {
                    let wv = w[(co * c_in + ci) * kernel + t];
                    let off = (t * dilation) as isize - pad;
                    let (lo, hi) = tap_range(len, off);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xin[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (o, &xv) in out[lo..hi].iter_mut().zip(src) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
    y
}

/// Accumulates input, weight and bias gradients. Any of the outputs may be
/// skipped by passing `None`.
pub(crate) fn conv1d_backward(
    d: &ConvDims,
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        kernel,
        dilation,
    } = *d;
    let pad = padding(kernel, dilation);
    if let Some(gb) = gb {
        for bi in 0..batch {
            for co in 0..c_out {
                gb[co] += gy[(bi * c_out + co) * len..][..len].iter().sum::<f64>();
            }
        }
    }
    for bi in 0..batch {
        for co in 0..c_out {
            let g = &gy[(bi * c_out + co) * len..][..len];
            for ci in 0..c_in {
                let xoff = (bi * c_in + ci) * len;
                for t in 0..kernel {
                    let widx = (co * c_in + ci) * kernel + t;
                    let off = (t * dilation) as isize - pad;
                    let (lo, hi) = tap_range(len, off);
                    if lo >= hi {
                        continue;
                    }
                    let s_lo = xoff + (lo as isize + off) as usize;
                    let s_hi = xoff + (hi as isize + off) as usize;
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += g[lo..hi]
                            .iter()
                            .zip(&x[s_lo..s_hi])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[widx];
                        for (o, &gv) in gx[s_lo..s_hi].iter_mut().zip(&g[lo..hi]) {
                            *o += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping average pooling along the last axis: `rows` rows of
/// length `len` to rows of length `len / size`.
pub(crate) fn avg_pool_forward(x: &[f64], rows: usize, len: usize, size: usize) -> Vec<f64> {
    let out_len = len / size;
    let mut y = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let row = &x[r * len..][..len];
        for j in 0..out_len {
            y.push(row[j * size..(j + 1) * size].iter().sum::<f64>() / size as f64);
        }
    }
    y
}

pub(crate) fn avg_pool_backward(gy: &[f64], gx: &mut [f64], rows: usize, len: usize, size: usize) {
    let out_len = len / size;
    for r in 0..rows {
        for j in 0..out_len {
            let g = gy[r * out_len + j] / size as f64;
            for v in &mut gx[r * len + j * size..r * len + (j + 1) * size] {
                *v += g;
            }
        }
    }
}

/// Source indices and interpolation weight for linear upsampling by
/// `factor` with half-pixel centres, clamped at the borders.
fn upsample_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward(x: &[f64], rows: usize, len: usize, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return x.to_vec();
    }
    let taps = upsample_taps(len, factor);
    let mut y = Vec::with_capacity(rows * len * factor);
    for r in 0..rows {
        let row = &x[r * len..][..len];
        for &(i0, i1, lam) in &taps {
            y.push((1.0 - lam) * row[i0] + lam * row[i1]);
        }
    }
    y
}

pub(crate) fn upsample_backward(
    gy: &[f64],
    gx: &mut [f64],
    rows: usize,
    len: usize,
    factor: usize,
) {
    if factor == 1 {
        for (a, b) in gx.iter_mut().zip(gy) {
            *a += b;
        }
        return;
    }
    let taps = upsample_taps(len, factor);
    let out_len = len * factor;
    for r in 0..rows {
        for (i, &(i0, i1, lam)) in taps.iter().enumerate() {
            let g = gy[r * out_len + i];
            gx[r * len + i0] += (1.0 - lam) * g;
            gx[r * len + i1] += lam * g;
        }
    }
}

/// Mean cross-entropy over every `(batch, position)` pair of `(B, K, L)`
/// logits. Returns the loss and the softmax probabilities.
pub(crate) fn cross_entropy_forward(
    logits: &[f64],
    labels: &[usize],
    batch: usize,
    classes: usize,
    len: usize,
) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for b in 0..batch {
        for l in 0..len {
            let at = |k: usize| (b * classes + k) * len + l;
            let max = (0..classes)
                .map(|k| logits[at(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..classes {
                let e = (logits[at(k)] - max).exp();
                probs[at(k)] = e;
                z += e;
            }
            for k in 0..classes {
                probs[at(k)] /= z;
            }
            let label = labels[b * len + l];
            total += max + z.ln() - logits[at(label)];
        }
    }
    (total / (batch * len) as f64, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let d = ConvDims {
            batch: 1,
            c_in: 1,
            c_out: 1,
            len: 5,
            kernel: 3,
            dilation: 2,
        };
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = conv1d_forward(&d, &x, &[0.0, 1.0, 0.0], &[0.5]);
        assert_eq!(y, vec![1.5, 2.5, 3.5, 4.5, 5.5]);
        // Left tap with dilation 2 reads x[l - 2].
        let y = conv1d_forward(&d, &x, &[1.0, 0.0, 0.0], &[0.0]);
        assert_eq!(y, vec![0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn dilation_beyond_length_only_centre_tap() {
        let d = ConvDims {
            batch: 1,
            c_in: 1,
            c_out: 1,
            len: 2,
            kernel: 3,
            dilation: 4,
        };
        let y = conv1d_forward(&d, &[1.0, 2.0], &[7.0, 1.0, 7.0], &[0.0]);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn pool_then_upsample_constant_rows() {
        let x = vec![3.0; 8];
        let p = avg_pool_forward(&x, 1, 8, 2);
        assert_eq!(p, vec![3.0; 4]);
        assert_eq!(upsample_forward(&p, 1, 4, 2), vec![3.0; 8]);
    }

    #[test]
    fn upsample_half_pixel_weights() {
        let y = upsample_forward(&[0.0, 4.0], 1, 2, 2);
        assert_eq!(y, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, _) = cross_entropy_forward(&[0.0; 6], &[0, 2], 1, 3, 2);
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }
}
