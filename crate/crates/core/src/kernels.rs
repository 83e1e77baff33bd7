//! Raw forward/backward kernels for the spatial layers.
//!
//! Convolution is lowered to GEMM through im2col. The column buffer is built
//! for a band of output rows at a time so the k9 tail convolution over a
//! 512x512 feature map does not need a multi-hundred-megabyte buffer.
//! Transposed convolution reuses the same lowering: its forward pass is the
//! input-gradient of a convolution, and vice versa.
//!
//! Batch items are processed in parallel; cross-item reductions (weight and
//! bias gradients) are summed afterwards in item order, so results do not
//! depend on the thread count.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, ShapeBuilder};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Upper bound on im2col buffer elements per band.
const MAX_COLUMN_ELEMS: usize = 1 << 22;

/// `floor((n + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn conv_output_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || n + 2 * padding < kernel {
        return None;
    }
    Some((n + 2 * padding - kernel) / stride + 1)
}

/// `(n - 1) * s + k - 2p`, or `None` when that is not positive.
pub fn transpose_output_extent(
    n: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if n == 0 || stride == 0 || kernel == 0 {
        return None;
    }
    ((n - 1) * stride + kernel)
        .checked_sub(2 * padding)
        .filter(|&e| e > 0)
}

/// Geometry of a convolution from a `(channels, height, width)` image to
/// `(_, out_height, out_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let collapsed = || {
            Error::ShapeMismatch(format!(
                "convolution k={kernel} s={stride} p={padding} collapses a {height}x{width} input"
            ))
        };
        let out_height = conv_output_extent(height, kernel, stride, padding).ok_or_else(collapsed)?;
        let out_width = conv_output_extent(width, kernel, stride, padding).ok_or_else(collapsed)?;
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Output-row bands `[r0, r1)` sized to respect `MAX_COLUMN_ELEMS`.
    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let per_row = (self.col_rows() * self.out_width).max(1);
        let rows = (MAX_COLUMN_ELEMS / per_row).max(1);
        let total = self.out_height;
        (0..total)
            .step_by(rows)
            .map(move |r0| (r0, (r0 + rows).min(total)))
    }

    /// Input coordinate hit by output index `o` at kernel tap `t`.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        (o * self.stride + t)
            .checked_sub(self.padding)
            .filter(|&i| i < extent)
    }

    fn im2col<T: Scalar>(&self, image: &[T], r0: usize, r1: usize, cols: &mut [T]) {
        let k = self.kernel;
        let ow = self.out_width;
        let band = (r1 - r0) * ow;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..][..self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * band..(row + 1) * band];
                    for oy in r0..r1 {
                        let line = &mut dst[(oy - r0) * ow..(oy - r0 + 1) * ow];
                        match self.source(oy, ki, self.height) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.width) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters-and-adds columns back into `image`.
    fn col2im<T: Scalar>(&self, cols: &[T], r0: usize, r1: usize, image: &mut [T]) {
        let k = self.kernel;
        let ow = self.out_width;
        let band = (r1 - r0) * ow;
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..][..self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * band..(row + 1) * band];
                    for oy in r0..r1 {
                        let Some(iy) = self.source(oy, ki, self.height) else {
                            continue;
                        };
                        let line = &src[(oy - r0) * ow..(oy - r0 + 1) * ow];
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kj, self.width) {
                                dst[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `(rows, cols)` view into a plane-major buffer restricted to one band of
/// output rows of every plane.
fn band_view<T>(buf: &[T], planes: usize, plane_len: usize, offset: usize, len: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((planes, len).strides((plane_len, 1)), &buf[offset..])
        .expect("band view within buffer")
}

fn band_view_mut<T>(
    buf: &mut [T],
    planes: usize,
    plane_len: usize,
    offset: usize,
    len: usize,
) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((planes, len).strides((plane_len, 1)), &mut buf[offset..])
        .expect("band view within buffer")
}

fn matrix<T>(data: &[T], rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape matches buffer")
}

fn matrix_mut<T>(data: &mut [T], rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape matches buffer")
}

/// Sums per-item gradient buffers in item order.
fn reduce_in_order<T: Scalar>(parts: impl Iterator<Item = Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        for (a, v) in acc.iter_mut().zip(part) {
            *a += v;
        }
    }
    acc
}

fn check_weight4<T: Scalar>(weight: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *weight.shape() {
        [a, b, k, k2] if k == k2 => Ok((a, b, k)),
        _ => Err(Error::ShapeMismatch(format!(
            "{what} weight must be (a, b, k, k), got {:?}",
            weight.shape()
        ))),
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::ShapeMismatch(format!(
                "bias shape {:?} does not match {channels} channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chan, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chan.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn channel_sums<T: Scalar>(grad: &[T], plane: usize) -> Vec<T> {
    grad.chunks(plane).map(|c| c.iter().copied().sum()).collect()
}

/// Geometry for an `(N, C, H, W)` input against an `(O, C, k, k)` weight.
pub fn conv2d_geometry<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (_, c, h, w) = x.dims4()?;
    let (_, wc, k) = check_weight4(weight, "conv2d")?;
    if wc != c {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input has {c} channels, weight expects {wc}"
        )));
    }
    ConvGeometry::new(c, h, w, k, stride, padding)
}

/// Cross-correlation of `x (N, C, H, W)` with `weight (O, C, k, k)` plus bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let geo = conv2d_geometry(x, weight, stride, padding)?;
    let (n, ..) = x.dims4()?;
    let outs = weight.shape()[0];
    check_bias(bias, outs)?;
    let plane = geo.out_plane();
    let ckk = geo.col_rows();
    let wmat = matrix(weight.data(), outs, ckk);
    let mut out = vec![T::zero(); n * outs * plane];
    out.par_chunks_mut(outs * plane)
        .zip(x.data().par_chunks(geo.image_len()))
        .for_each(|(y, image)| {
            let mut cols = Vec::new();
            for (r0, r1) in geo.bands() {
                let band = (r1 - r0) * geo.out_width;
                cols.resize(ckk * band, T::zero());
                geo.im2col(image, r0, r1, &mut cols);
                let mut yv = band_view_mut(y, outs, plane, r0 * geo.out_width, band);
                general_mat_mul(T::one(), &wmat, &matrix(&cols, ckk, band), T::zero(), &mut yv);
            }
            add_bias(y, bias, plane);
        });
    Tensor::from_vec(&[n, outs, geo.out_height, geo.out_width], out)
}

/// Gradients of a convolution or transposed convolution. Entries not
/// requested are `None`.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Which gradients to compute.
#[derive(Debug, Clone, Copy)]
pub struct GradMask {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    want: GradMask,
) -> Result<ConvGrads<T>> {
    let geo = conv2d_geometry(x, weight, stride, padding)?;
    let (n, ..) = x.dims4()?;
    let outs = weight.shape()[0];
    if grad_out.shape() != [n, outs, geo.out_height, geo.out_width] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d output gradient {:?} does not match forward output",
            grad_out.shape()
        )));
    }
    let plane = geo.out_plane();
    let ckk = geo.col_rows();
    let wmat = matrix(weight.data(), outs, ckk);

    let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .data()
        .par_chunks(geo.image_len())
        .zip(grad_out.data().par_chunks(outs * plane))
        .map(|(image, dy)| {
            let mut dx = if want.input { vec![T::zero(); geo.image_len()] } else { Vec::new() };
            let mut dw = if want.weight { vec![T::zero(); outs * ckk] } else { Vec::new() };
            let mut cols = Vec::new();
            if want.input || want.weight {
                for (r0, r1) in geo.bands() {
                    let band = (r1 - r0) * geo.out_width;
                    let dyv = band_view(dy, outs, plane, r0 * geo.out_width, band);
                    cols.resize(ckk * band, T::zero());
                    if want.weight {
                        geo.im2col(image, r0, r1, &mut cols);
                        let mut dwv = matrix_mut(&mut dw, outs, ckk);
                        general_mat_mul(T::one(), &dyv, &matrix(&cols, ckk, band).t(), T::one(), &mut dwv);
                    }
                    if want.input {
                        let mut cv = matrix_mut(&mut cols, ckk, band);
                        general_mat_mul(T::one(), &wmat.t(), &dyv, T::zero(), &mut cv);
                        geo.col2im(&cols, r0, r1, &mut dx);
                    }
                }
            }
            let db = if want.bias { channel_sums(dy, plane) } else { Vec::new() };
            (dx, dw, db)
        })
        .collect();

    let input = if want.input {
        let data: Vec<T> = parts.iter().flat_map(|p| p.0.iter().copied()).collect();
        Some(Tensor::from_vec(x.shape(), data)?)
    } else {
        None
    };
    let weight_grad = if want.weight {
        let acc = reduce_in_order(parts.iter().map(|p| p.1.clone()), outs * ckk);
        Some(Tensor::from_vec(weight.shape(), acc)?)
    } else {
        None
    };
    let bias = if want.bias {
        Some(Tensor::from_vec(&[outs], reduce_in_order(parts.iter().map(|p| p.2.clone()), outs))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias,
    })
}

/// Geometry of the convolution whose adjoint is the transposed convolution of
/// `x (N, Cin, H, W)` by `weight (Cin, Cout, k, k)`.
pub fn transpose_geometry<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (_, c, h, w) = x.dims4()?;
    let (wc, outs, k) = check_weight4(weight, "transpose_conv2d")?;
    if wc != c {
        return Err(Error::ShapeMismatch(format!(
            "transpose_conv2d input has {c} channels, weight expects {wc}"
        )));
    }
    let collapsed = || {
        Error::ShapeMismatch(format!(
            "transpose_conv2d k={k} s={stride} p={padding} gives an empty output for {h}x{w}"
        ))
    };
    let oh = transpose_output_extent(h, k, stride, padding).ok_or_else(collapsed)?;
    let ow = transpose_output_extent(w, k, stride, padding).ok_or_else(collapsed)?;
    let geo = ConvGeometry::new(outs, oh, ow, k, stride, padding)?;
    debug_assert_eq!((geo.out_height, geo.out_width), (h, w));
    Ok(geo)
}

/// Transposed convolution of `x (N, Cin, H, W)` by `weight (Cin, Cout, k, k)`;
/// output extent is `(H - 1) * s + k - 2p`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let geo = transpose_geometry(x, weight, stride, padding)?;
    let (n, cin, ..) = x.dims4()?;
    let outs = geo.channels;
    check_bias(bias, outs)?;
    let in_plane = geo.out_plane();
    let ckk = geo.col_rows();
    let wmat = matrix(weight.data(), cin, ckk);
    let out_plane = geo.height * geo.width;
    let mut out = vec![T::zero(); n * outs * out_plane];
    out.par_chunks_mut(outs * out_plane)
        .zip(x.data().par_chunks(cin * in_plane))
        .for_each(|(y, image)| {
            let mut cols = Vec::new();
            for (r0, r1) in geo.bands() {
                let band = (r1 - r0) * geo.out_width;
                let xv = band_view(image, cin, in_plane, r0 * geo.out_width, band);
                cols.resize(ckk * band, T::zero());
                let mut cv = matrix_mut(&mut cols, ckk, band);
                general_mat_mul(T::one(), &wmat.t(), &xv, T::zero(), &mut cv);
                geo.col2im(&cols, r0, r1, y);
            }
            add_bias(y, bias, out_plane);
        });
    Tensor::from_vec(&[n, outs, geo.height, geo.width], out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    want: GradMask,
) -> Result<ConvGrads<T>> {
    let geo = transpose_geometry(x, weight, stride, padding)?;
    let (n, cin, ..) = x.dims4()?;
    let outs = geo.channels;
    if grad_out.shape() != [n, outs, geo.height, geo.width] {
        return Err(Error::ShapeMismatch(format!(
            "transpose_conv2d output gradient {:?} does not match forward output",
            grad_out.shape()
        )));
    }
    let in_plane = geo.out_plane();
    let ckk = geo.col_rows();
    let wmat = matrix(weight.data(), cin, ckk);
    let out_plane = geo.height * geo.width;

    let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .data()
        .par_chunks(cin * in_plane)
        .zip(grad_out.data().par_chunks(outs * out_plane))
        .map(|(image, dy)| {
            let mut dx = if want.input { vec![T::zero(); cin * in_plane] } else { Vec::new() };
            let mut dw = if want.weight { vec![T::zero(); cin * ckk] } else { Vec::new() };
            let mut cols = Vec::new();
            if want.input || want.weight {
                for (r0, r1) in geo.bands() {
                    let band = (r1 - r0) * geo.out_width;
                    cols.resize(ckk * band, T::zero());
                    geo.im2col(dy, r0, r1, &mut cols);
                    let cm = matrix(&cols, ckk, band);
                    if want.input {
                        let mut dxv = band_view_mut(&mut dx, cin, in_plane, r0 * geo.out_width, band);
                        general_mat_mul(T::one(), &wmat, &cm, T::zero(), &mut dxv);
                    }
                    if want.weight {
                        let xv = band_view(image, cin, in_plane, r0 * geo.out_width, band);
                        let mut dwv = matrix_mut(&mut dw, cin, ckk);
                        general_mat_mul(T::one(), &xv, &cm.t(), T::one(), &mut dwv);
                    }
                }
            }
            let db = if want.bias { channel_sums(dy, out_plane) } else { Vec::new() };
            (dx, dw, db)
        })
        .collect();

    let input = if want.input {
        let data: Vec<T> = parts.iter().flat_map(|p| p.0.iter().copied()).collect();
        Some(Tensor::from_vec(x.shape(), data)?)
    } else {
        None
    };
    let weight_grad = if want.weight {
        let acc = reduce_in_order(parts.iter().map(|p| p.1.clone()), cin * ckk);
        Some(Tensor::from_vec(weight.shape(), acc)?)
    } else {
        None
    };
    let bias = if want.bias {
        Some(Tensor::from_vec(&[outs], reduce_in_order(parts.iter().map(|p| p.2.clone()), outs))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias,
    })
}

/// `(N, C*r*r, H, W) -> (N, C, H*r, W*r)` with
/// `out[n][c][h*r + i][w*r + j] = x[n][c*r*r + i*r + j][h][w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, cin, h, w) = x.dims4()?;
    if r < 1 || cin % (r * r) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel_shuffle needs channels divisible by {}, got {cin}",
            r * r
        )));
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((b * cin) + ch * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        let dst_row = ((b * c + ch) * oh + y * r + i) * ow;
                        for xw in 0..w {
                            out[dst_row + xw * r + j] = src[plane + y * w + xw];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Inverse permutation of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = x.dims4()?;
    if r < 1 || oh % r != 0 || ow % r != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel_unshuffle needs spatial extents divisible by {r}, got {oh}x{ow}"
        )));
    }
    let (h, w, cin) = (oh / r, ow / r, c * r * r);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((b * cin) + ch * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        let src_row = ((b * c + ch) * oh + y * r + i) * ow;
                        for xw in 0..w {
                            out[plane + y * w + xw] = src[src_row + xw * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, cin, h, w], out)
}
