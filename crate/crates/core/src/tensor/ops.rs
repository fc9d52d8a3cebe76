//! Forward and backward kernels shared by the tape and tape-free inference.
//!
//! Convolution is lowered to im2col + sgemm. Several samples are packed into
//! one column matrix when the spatial extent is small so the late, narrow
//! stages still get a reasonably wide GEMM.

use super::{expect_extent, expect_rank, Result, Tensor, TensorError};

/// Column count a packed im2col matrix aims for.
const TARGET_COLS: usize = 8192;
/// Column count of a row band when one sample is already wide enough.
const BAND_COLS: usize = 1024;

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
}

/// A unit of GEMM work: either several whole samples (`nc > 1`) or a band
/// of output rows of one sample.
#[derive(Clone, Copy)]
struct Block {
    n0: usize,
    nc: usize,
    y0: usize,
    rows: usize,
}

impl Block {
    fn cols(&self, w: usize) -> usize {
        self.nc * self.rows * w
    }
}

impl ConvDims {
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn patch(&self) -> usize {
        self.c * 9
    }
    fn blocks(&self) -> Vec<Block> {
        let hw = self.hw();
        let mut out = Vec::new();
        if hw >= TARGET_COLS {
            let band = (BAND_COLS / self.w).clamp(1, self.h);
            for n0 in 0..self.n {
                let mut y0 = 0;
                while y0 < self.h {
                    let rows = band.min(self.h - y0);
                    out.push(Block { n0, nc: 1, y0, rows });
                    y0 += rows;
                }
            }
        } else {
            let chunk = (TARGET_COLS / hw).clamp(1, self.n);
            let mut n0 = 0;
            while n0 < self.n {
                let nc = chunk.min(self.n - n0);
                out.push(Block { n0, nc, y0: 0, rows: self.h });
                n0 += nc;
            }
        }
        out
    }
    fn max_cols(&self) -> usize {
        self.blocks().iter().map(|b| b.cols(self.w)).max().unwrap_or(0)
    }
}

fn conv_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    const OP: &str = "conv2d";
    expect_rank(OP, input, 4)?;
    expect_rank(OP, weight, 4)?;
    expect_rank(OP, bias, 1)?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let k = weight.shape()[0];
    expect_extent(OP, "channels", weight.shape()[1], c)?;
    expect_extent(OP, "kernel_h", 3, weight.shape()[2])?;
    expect_extent(OP, "kernel_w", 3, weight.shape()[3])?;
    expect_extent(OP, "bias", k, bias.shape()[0])?;
    Ok(ConvDims { n, c, h, w, k })
}

/// Fills `cols` ([C*9, block cols]) with zero-padded 3x3 patches.
fn im2col(x: &[f32], d: &ConvDims, b: Block, cols: &mut [f32]) {
    let (h, w, hw) = (d.h, d.w, d.hw());
    let ncols = b.cols(w);
    let span = b.rows * w;
    for c in 0..d.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * ncols;
                for s in 0..b.nc {
                    let src = &x[((b.n0 + s) * d.c + c) * hw..][..hw];
                    let dst = &mut cols[row + s * span..][..span];
                    for r in 0..b.rows {
                        let out = &mut dst[r * w..][..w];
                        let sy = (b.y0 + r) as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let srow = &src[sy as usize * w..][..w];
                        match kx {
                            0 => {
                                out[0] = 0.0;
                                out[1..].copy_from_slice(&srow[..w - 1]);
                            }
                            1 => out.copy_from_slice(srow),
                            _ => {
                                out[..w - 1].copy_from_slice(&srow[1..]);
                                out[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-gradient matrix back onto input gradients.
fn col2im(dcols: &[f32], d: &ConvDims, b: Block, dx: &mut [f32]) {
    let (h, w, hw) = (d.h, d.w, d.hw());
    let ncols = b.cols(w);
    let span = b.rows * w;
    for c in 0..d.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * ncols;
                for s in 0..b.nc {
                    let src = &dcols[row + s * span..][..span];
                    let dst = &mut dx[((b.n0 + s) * d.c + c) * hw..][..hw];
                    for r in 0..b.rows {
                        let sy = (b.y0 + r) as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let g = &src[r * w..][..w];
                        let drow = &mut dst[sy as usize * w..][..w];
                        match kx {
                            0 => drow[..w - 1]
                                .iter_mut()
                                .zip(&g[1..])
                                .for_each(|(a, b)| *a += b),
                            1 => drow.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                            _ => drow[1..]
                                .iter_mut()
                                .zip(&g[..w - 1])
                                .for_each(|(a, b)| *a += b),
                        }
                    }
                }
            }
        }
    }
}

/// C = alpha * A(m x k) * B(k x n) + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
    rsc: isize,
) {
    // SAFETY: every caller passes buffers whose extents cover the strided
    // m x k, k x n and m x n views; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, weight, bias)?;
    let (hw, patch) = (d.hw(), d.patch());
    let mut out = vec![0.0f32; d.n * d.k * hw];
    let maxc = d.max_cols();
    let mut cols = vec![0.0f32; patch * maxc];
    let mut tmp = Vec::new();
    let x = input.data();
    let wt = weight.data();
    let bias = bias.data();
    for b in d.blocks() {
        let ncols = b.cols(d.w);
        im2col(x, &d, b, &mut cols[..patch * ncols]);
        if b.nc == 1 {
            // write straight into the output band, row stride H*W
            let base = b.n0 * d.k * hw + b.y0 * d.w;
            for k in 0..d.k {
                out[base + k * hw..][..ncols].fill(bias[k]);
            }
            sgemm(
                d.k,
                patch,
                ncols,
                wt,
                (patch as isize, 1),
                &cols,
                (ncols as isize, 1),
                1.0,
                &mut out[base..],
                hw as isize,
            );
        } else {
            tmp.resize(d.k * ncols, 0.0);
            sgemm(
                d.k,
                patch,
                ncols,
                wt,
                (patch as isize, 1),
                &cols,
                (ncols as isize, 1),
                0.0,
                &mut tmp,
                ncols as isize,
            );
            for s in 0..b.nc {
                for k in 0..d.k {
                    let src = &tmp[k * ncols + s * hw..][..hw];
                    let dst = &mut out[((b.n0 + s) * d.k + k) * hw..][..hw];
                    dst.iter_mut().zip(src).for_each(|(o, v)| *o = v + bias[k]);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.n, d.k, d.h, d.w], out))
}

/// Gradients of [`conv2d`]. `dinput` is only computed when requested.
pub(crate) struct ConvGrads {
    pub dinput: Option<Vec<f32>>,
    pub dweight: Vec<f32>,
    pub dbias: Vec<f32>,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dout: &[f32],
    need_dinput: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(input, weight, bias)?;
    let (hw, patch) = (d.hw(), d.patch());
    let mut dweight = vec![0.0f32; d.k * patch];
    let mut dbias = vec![0.0f32; d.k];
    let mut dinput = need_dinput.then(|| vec![0.0f32; input.numel()]);
    let maxc = d.max_cols();
    let mut cols = vec![0.0f32; patch * maxc];
    let mut dcols = if need_dinput {
        vec![0.0f32; patch * maxc]
    } else {
        Vec::new()
    };
    let mut gathered = Vec::new();
    let x = input.data();
    let wt = weight.data();
    for b in d.blocks() {
        let ncols = b.cols(d.w);
        im2col(x, &d, b, &mut cols[..patch * ncols]);
        // G[K, ncols] with row stride `rsg`
        let (g, rsg): (&[f32], usize) = if b.nc == 1 {
            (&dout[b.n0 * d.k * hw + b.y0 * d.w..], hw)
        } else {
            gathered.resize(d.k * ncols, 0.0);
            for s in 0..b.nc {
                for k in 0..d.k {
                    gathered[k * ncols + s * hw..][..hw]
                        .copy_from_slice(&dout[((b.n0 + s) * d.k + k) * hw..][..hw]);
                }
            }
            (&gathered, ncols)
        };
        for (k, db) in dbias.iter_mut().enumerate() {
            *db += g[k * rsg..][..ncols].iter().sum::<f32>();
        }
        // dW[K, patch] += G[K, ncols] * cols^T[ncols, patch]
        sgemm(
            d.k,
            ncols,
            patch,
            g,
            (rsg as isize, 1),
            &cols,
            (1, ncols as isize),
            1.0,
            &mut dweight,
            patch as isize,
        );
        if let Some(dx) = dinput.as_mut() {
            // dcols[patch, ncols] = W^T[patch, K] * G[K, ncols]
            let dc = &mut dcols[..patch * ncols];
            sgemm(
                patch,
                d.k,
                ncols,
                wt,
                (1, patch as isize),
                g,
                (rsg as isize, 1),
                0.0,
                dc,
                ncols as isize,
            );
            col2im(dc, &d, b, dx);
        }
    }
    Ok(ConvGrads {
        dinput,
        dweight,
        dbias,
    })
}

/// 2x2 max pooling with stride 2. Returns the output and, for each output
/// element, the flat input index of the selected element. Ties resolve to the
/// first element in row-major window order.
pub(crate) fn maxpool2_with_argmax(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    const OP: &str = "maxpool2";
    expect_rank(OP, input, 4)?;
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h < 2 {
        return Err(TensorError::TooSmall {
            op: OP,
            axis: "height",
            min: 2,
            got: h,
        });
    }
    if w < 2 {
        return Err(TensorError::TooSmall {
            op: OP,
            axis: "width",
            min: 2,
            got: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), arg))
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    maxpool2_with_argmax(input).map(|(t, _)| t)
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// `[N, F] x [D, F]^T + [D] -> [N, D]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "linear";
    expect_rank(OP, input, 2)?;
    expect_rank(OP, weight, 2)?;
    expect_rank(OP, bias, 1)?;
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let dout = weight.shape()[0];
    expect_extent(OP, "features", weight.shape()[1], f)?;
    expect_extent(OP, "bias", dout, bias.shape()[0])?;
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    sgemm(
        n,
        f,
        dout,
        input.data(),
        (f as isize, 1),
        weight.data(),
        (1, f as isize),
        1.0,
        &mut out,
        dout as isize,
    );
    Ok(Tensor::from_parts(vec![n, dout], out))
}

pub(crate) struct LinearGrads {
    pub dinput: Vec<f32>,
    pub dweight: Vec<f32>,
    pub dbias: Vec<f32>,
}

pub(crate) fn linear_backward(input: &Tensor, weight: &Tensor, dout: &[f32]) -> LinearGrads {
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let d = weight.shape()[0];
    let mut dinput = vec![0.0f32; n * f];
    // dX[N, F] = G[N, D] * W[D, F]
    sgemm(
        n,
        d,
        f,
        dout,
        (d as isize, 1),
        weight.data(),
        (f as isize, 1),
        0.0,
        &mut dinput,
        f as isize,
    );
    let mut dweight = vec![0.0f32; d * f];
    // dW[D, F] = G^T[D, N] * X[N, F]
    sgemm(
        d,
        n,
        f,
        dout,
        (1, d as isize),
        input.data(),
        (f as isize, 1),
        0.0,
        &mut dweight,
        f as isize,
    );
    let mut dbias = vec![0.0f32; d];
    for row in dout.chunks_exact(d) {
        dbias.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    LinearGrads {
        dinput,
        dweight,
        dbias,
    }
}

/// Spatial mean: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    expect_rank("global_avg_pool", input, 4)?;
    let s = input.shape();
    let hw = s[2] * s[3];
    let inv = 1.0 / hw as f32;
    let data = input
        .data()
        .chunks_exact(hw)
        .map(|p| p.iter().sum::<f32>() * inv)
        .collect();
    Ok(Tensor::from_parts(vec![s[0], s[1]], data))
}
