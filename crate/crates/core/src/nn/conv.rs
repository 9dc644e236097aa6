//! 2-D convolution (cross-correlation) and its transpose, via im2col + GEMM.
//!
//! `conv2d` weights are `[out_ch, in_ch, k, k]`. `conv2d_transpose` weights
//! are `[in_ch, out_ch, k, k]`, so the same array serves a convolution and
//! its adjoint: `<conv2d(x, w), y> = <x, conv2d_transpose(y, w)>`.

use super::gemm::{gemm, View};
use super::Tensor4;
use crate::error::{Error, Result};

/// Spatial geometry shared by a convolution and its transpose. `in_*` is the
/// convolution input (transpose output), `out_*` the convolution output.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    k: usize,
    stride: usize,
    padding: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

pub fn conv_output_size(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || k == 0 || input + 2 * padding < k {
        return None;
    }
    Some((input + 2 * padding - k) / stride + 1)
}

pub fn conv_transpose_output_size(
    input: usize,
    k: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if stride == 0 || k == 0 || output_padding >= stride {
        return None;
    }
    ((input - 1) * stride + k + output_padding).checked_sub(2 * padding).filter(|&s| s > 0)
}

fn im2col(x: &[f64], channels: usize, g: &Geometry, cols: &mut [f64]) {
    let plane = g.out_h * g.out_w;
    let (k, s, p) = (g.k, g.stride as isize, g.padding as isize);
    for c in 0..channels {
        let src = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of `im2col`; `x` must be zeroed by the caller.
fn col2im(cols: &[f64], channels: usize, g: &Geometry, x: &mut [f64]) {
    let plane = g.out_h * g.out_w;
    let (k, s, p) = (g.k, g.stride as isize, g.padding as isize);
    for c in 0..channels {
        let dst = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_weights(w: &Tensor4, in_ch: usize, what: &str) -> Result<usize> {
    let [_, wi, kh, kw] = w.shape();
    if kh != kw {
        return Err(Error::shape(format!("{what}: kernel must be square, got {kh}x{kw}")));
    }
    if wi != in_ch && what == "conv2d" {
        return Err(Error::shape(format!(
            "conv2d: input has {in_ch} channels but weights expect {wi}"
        )));
    }
    Ok(kh)
}

fn check_bias(b: Option<&[f64]>, channels: usize, what: &str) -> Result<()> {
    match b {
        Some(b) if b.len() != channels => Err(Error::shape(format!(
            "{what}: bias has {} entries, expected {channels}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

fn conv_geometry(x: &Tensor4, k: usize, stride: usize, padding: usize) -> Result<Geometry> {
    let out_h = conv_output_size(x.height(), k, stride, padding);
    let out_w = conv_output_size(x.width(), k, stride, padding);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok(Geometry {
            k,
            stride,
            padding,
            in_h: x.height(),
            in_w: x.width(),
            out_h,
            out_w,
        }),
        _ => Err(Error::shape(format!(
            "conv2d: kernel {k} with stride {stride}, padding {padding} does not fit {}x{}",
            x.height(),
            x.width()
        ))),
    }
}

/// Strided, zero-padded cross-correlation.
/// Output side is `floor((H + 2·padding − k)/stride) + 1`.
pub fn conv2d(x: &Tensor4, w: &Tensor4, b: Option<&[f64]>, stride: usize, padding: usize) -> Result<Tensor4> {
    let k = check_weights(w, x.channels(), "conv2d")?;
    let out_ch = w.shape()[0];
    check_bias(b, out_ch, "conv2d")?;
    let g = conv_geometry(x, k, stride, padding)?;
    let plane = g.out_h * g.out_w;
    let ckk = x.channels() * k * k;
    let mut cols = vec![0.0; ckk * plane];
    let mut y = Tensor4::zeros([x.batch(), out_ch, g.out_h, g.out_w]);
    for n in 0..x.batch() {
        im2col(x.item(n), x.channels(), &g, &mut cols);
        let out = y.item_mut(n);
        gemm(out_ch, ckk, plane, 1.0, View::rm(w.data(), ckk), View::rm(&cols, plane), 0.0, out);
        if let Some(b) = b {
            for (o, bias) in b.iter().enumerate() {
                for v in &mut out[o * plane..(o + 1) * plane] {
                    *v += bias;
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of a convolution-type op with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor4,
    pub dw: Tensor4,
    pub db: Vec<f64>,
}

pub fn conv2d_backward(
    x: &Tensor4,
    w: &Tensor4,
    stride: usize,
    padding: usize,
    dy: &Tensor4,
) -> Result<ConvGrads> {
    let k = check_weights(w, x.channels(), "conv2d")?;
    let out_ch = w.shape()[0];
    let g = conv_geometry(x, k, stride, padding)?;
    if dy.shape() != [x.batch(), out_ch, g.out_h, g.out_w] {
        return Err(Error::shape(format!(
            "conv2d backward: upstream gradient shape {:?} does not match output",
            dy.shape()
        )));
    }
    let plane = g.out_h * g.out_w;
    let ckk = x.channels() * k * k;
    let mut cols = vec![0.0; ckk * plane];
    let mut dcols = vec![0.0; ckk * plane];
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    let mut db = vec![0.0; out_ch];
    for n in 0..x.batch() {
        let g_out = dy.item(n);
        im2col(x.item(n), x.channels(), &g, &mut cols);
        // dW += dY · cols^T
        gemm(out_ch, plane, ckk, 1.0, View::rm(g_out, plane), View::rm_t(&cols, plane), 1.0, dw.data_mut());
        // dcols = W^T · dY
        gemm(ckk, out_ch, plane, 1.0, View::rm_t(w.data(), ckk), View::rm(g_out, plane), 0.0, &mut dcols);
        col2im(&dcols, x.channels(), &g, dx.item_mut(n));
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += g_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

fn transpose_geometry(
    x: &Tensor4,
    k: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Geometry> {
    let in_h = conv_transpose_output_size(x.height(), k, stride, padding, output_padding);
    let in_w = conv_transpose_output_size(x.width(), k, stride, padding, output_padding);
    match (in_h, in_w) {
        (Some(in_h), Some(in_w)) => Ok(Geometry {
            k,
            stride,
            padding,
            in_h,
            in_w,
            out_h: x.height(),
            out_w: x.width(),
        }),
        _ => Err(Error::shape(format!(
            "conv2d_transpose: invalid configuration k={k} stride={stride} padding={padding} \
             output_padding={output_padding} for {}x{}",
            x.height(),
            x.width()
        ))),
    }
}

/// Fractionally-strided convolution. Output side is
/// `(H−1)·stride − 2·padding + k + output_padding`.
pub fn conv2d_transpose(
    x: &Tensor4,
    w: &Tensor4,
    b: Option<&[f64]>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor4> {
    let [w_in, out_ch, _, _] = w.shape();
    if w_in != x.channels() {
        return Err(Error::shape(format!(
            "conv2d_transpose: input has {} channels but weights expect {w_in}",
            x.channels()
        )));
    }
    let k = check_weights(w, x.channels(), "conv2d_transpose")?;
    check_bias(b, out_ch, "conv2d_transpose")?;
    let g = transpose_geometry(x, k, stride, padding, output_padding)?;
    let plane = g.out_h * g.out_w;
    let ckk = out_ch * k * k;
    let mut cols = vec![0.0; ckk * plane];
    let mut y = Tensor4::zeros([x.batch(), out_ch, g.in_h, g.in_w]);
    for n in 0..x.batch() {
        // cols = W^T · x, W viewed as [in_ch, out_ch·k·k]
        gemm(ckk, w_in, plane, 1.0, View::rm_t(w.data(), ckk), View::rm(x.item(n), plane), 0.0, &mut cols);
        let out = y.item_mut(n);
        col2im(&cols, out_ch, &g, out);
        if let Some(b) = b {
            let oplane = g.in_h * g.in_w;
            for (o, bias) in b.iter().enumerate() {
                for v in &mut out[o * oplane..(o + 1) * oplane] {
                    *v += bias;
                }
            }
        }
    }
    Ok(y)
}

pub fn conv2d_transpose_backward(
    x: &Tensor4,
    w: &Tensor4,
    stride: usize,
    padding: usize,
    output_padding: usize,
    dy: &Tensor4,
) -> Result<ConvGrads> {
    let [w_in, out_ch, _, _] = w.shape();
    if w_in != x.channels() {
        return Err(Error::shape("conv2d_transpose backward: channel mismatch"));
    }
    let k = check_weights(w, x.channels(), "conv2d_transpose")?;
    let g = transpose_geometry(x, k, stride, padding, output_padding)?;
    if dy.shape() != [x.batch(), out_ch, g.in_h, g.in_w] {
        return Err(Error::shape(format!(
            "conv2d_transpose backward: upstream gradient shape {:?} does not match output",
            dy.shape()
        )));
    }
    let plane = g.out_h * g.out_w;
    let ckk = out_ch * k * k;
    let oplane = g.in_h * g.in_w;
    let mut cols = vec![0.0; ckk * plane];
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(w.shape());
    let mut db = vec![0.0; out_ch];
    for n in 0..x.batch() {
        let g_out = dy.item(n);
        im2col(g_out, out_ch, &g, &mut cols);
        // dx = W · cols
        gemm(w_in, ckk, plane, 1.0, View::rm(w.data(), ckk), View::rm(&cols, plane), 0.0, dx.item_mut(n));
        // dW += x · cols^T
        gemm(w_in, plane, ckk, 1.0, View::rm(x.item(n), plane), View::rm_t(&cols, plane), 1.0, dw.data_mut());
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += g_out[o * oplane..(o + 1) * oplane].iter().sum::<f64>();
        }
    }
    Ok(ConvGrads { dx, dw, db })
}
