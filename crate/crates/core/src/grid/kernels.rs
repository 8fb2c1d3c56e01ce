//! Slice-level kernels behind the differentiable operations.
//!
//! Convolution lowers each sample to an im2col matrix and calls a blocked
//! GEMM. Column buffers are rebuilt during the backward pass rather than
//! kept alive on the tape.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn ck(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// C[m×n] = alpha·A[m×k]·B[k×n] + beta·C, all with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(src: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let (h, w, k) = (d.h as isize, d.w as isize, d.k);
    let pad = (k / 2) as isize;
    let hw = d.hw();
    for ci in 0..d.cin {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let out = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out.fill(0.0);
                        continue;
                    }
                    let srow = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        out[x as usize] = if sx < 0 || sx >= w {
                            0.0
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], d: &ConvDims, dst: &mut [f64]) {
    let (h, w, k) = (d.h as isize, d.w as isize, d.k);
    let pad = (k / 2) as isize;
    let hw = d.hw();
    for ci in 0..d.cin {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let srow = &src[(y * w) as usize..((y + 1) * w) as usize];
                    let prow = &mut plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        if sx >= 0 && sx < w {
                            prow[sx as usize] += srow[x as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
    d: &ConvDims,
) -> Vec<f64> {
    let hw = d.hw();
    let ck = d.ck();
    let mut out = vec![0.0; d.n * d.cout * hw];
    let mut cols = if d.k == 1 {
        Vec::new()
    } else {
        vec![0.0; ck * hw]
    };
    for s in 0..d.n {
        let x = &input[s * d.cin * hw..(s + 1) * d.cin * hw];
        let o = &mut out[s * d.cout * hw..(s + 1) * d.cout * hw];
        for (co, plane) in o.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        let b: &[f64] = if d.k == 1 {
            x
        } else {
            im2col(x, d, &mut cols);
            &cols
        };
        gemm(d.cout, ck, hw, kernel, (ck, 1), b, (hw, 1), 1.0, o);
    }
    out
}

/// Returns gradients for (input, kernel, bias); the input gradient is skipped
/// when `need_input` is false.
pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
    need_input: bool,
    need_params: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let hw = d.hw();
    let ck = d.ck();
    let mut g_input = need_input.then(|| vec![0.0; input.len()]);
    let mut g_kernel = vec![0.0; kernel.len()];
    let mut g_bias = vec![0.0; d.cout];
    let mut cols = if d.k == 1 {
        Vec::new()
    } else {
        vec![0.0; ck * hw]
    };
    let mut g_cols = if d.k == 1 || !need_input {
        Vec::new()
    } else {
        vec![0.0; ck * hw]
    };
    for s in 0..d.n {
        let go = &grad_out[s * d.cout * hw..(s + 1) * d.cout * hw];
        if need_params {
            let x = &input[s * d.cin * hw..(s + 1) * d.cin * hw];
            let b: &[f64] = if d.k == 1 {
                x
            } else {
                im2col(x, d, &mut cols);
                &cols
            };
            // gK[cout×ck] += gout[cout×hw] · colsᵀ[hw×ck]
            gemm(d.cout, hw, ck, go, (hw, 1), b, (1, hw), 1.0, &mut g_kernel);
            for (co, plane) in go.chunks_exact(hw).enumerate() {
                g_bias[co] += plane.iter().sum::<f64>();
            }
        }
        if let Some(gi) = g_input.as_mut() {
            let gi = &mut gi[s * d.cin * hw..(s + 1) * d.cin * hw];
            if d.k == 1 {
                // gx[cin×hw] = Kᵀ[cin×cout] · gout[cout×hw]
                gemm(d.cin, d.cout, hw, kernel, (1, ck), go, (hw, 1), 0.0, gi);
            } else {
                gemm(
                    ck,
                    d.cout,
                    hw,
                    kernel,
                    (1, ck),
                    go,
                    (hw, 1),
                    0.0,
                    &mut g_cols,
                );
                col2im_add(&g_cols, d, gi);
            }
        }
    }
    (g_input, g_kernel, g_bias)
}

/// 2×2 average pooling over the trailing two axes of a `[planes, h, w]` buffer.
pub(crate) fn avg_pool2(src: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                o[y * ow + x] = 0.25 * (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(g: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let go = &g[p * oh * ow..(p + 1) * oh * ow];
        let o = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                o[y * w + x] = 0.25 * go[(y / 2) * ow + x / 2];
            }
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling of a `[planes, h, w]` buffer.
pub(crate) fn upsample2(src: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                o[y * ow + x] = s[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(g: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let go = &g[p * oh * ow..(p + 1) * oh * ow];
        let o = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * ow + 2 * x;
                o[y * w + x] = go[i] + go[i + 1] + go[i + ow] + go[i + ow + 1];
            }
        }
    }
    out
}

/// Softmax across the channel axis of `[n, c, hw]`, max-subtracted.
pub(crate) fn softmax_channels(src: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for s in 0..n {
        let base = s * c * hw;
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(src[base + ch * hw + p]);
            }
            let mut z = 0.0;
            for ch in 0..c {
                let e = (src[base + ch * hw + p] - m).exp();
                out[base + ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                out[base + ch * hw + p] /= z;
            }
        }
    }
    out
}

pub(crate) fn softmax_channels_backward(
    probs: &[f64],
    g: &[f64],
    n: usize,
    c: usize,
    hw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for s in 0..n {
        let base = s * c * hw;
        for p in 0..hw {
            let mut dot = 0.0;
            for ch in 0..c {
                let i = base + ch * hw + p;
                dot += probs[i] * g[i];
            }
            for ch in 0..c {
                let i = base + ch * hw + p;
                out[i] = probs[i] * (g[i] - dot);
            }
        }
    }
    out
}
