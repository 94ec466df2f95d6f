//! Dense f32 tensors and the raw math kernels: convolution, pooling,
//! local response normalization, elementwise ops, and their gradients.
//!
//! Layout is fixed to (batch, channels, height, width), row-major.
//! Convolution runs as im2col + matmul; the matmul accumulates along k in
//! ascending order with one f32 accumulator per output element, so results
//! are bit-identical across pool sizes and match a plain nested-loop
//! convolution's summation order.

use crate::error::{Error, Result};
use crate::threads;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// N-dimensional dense array of f32, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!(
                "all extents must be >= 1, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {numel} values, data has {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
    }

    /// Weights drawn from N(0, std^2).
    pub fn gaussian(shape: &[usize], std: f32, rng: &mut impl Rng) -> Self {
        let numel: usize = shape.iter().product();
        let normal = Normal::new(0.0f32, std).expect("std must be finite and non-negative");
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn dims4(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::Shape(format!(
                "{what} must be 4-d (n,c,h,w), got {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }
}

/// c[m x n] += a[m x k] * b[k x n], k ascending per output element.
/// `c` must be pre-initialized (zeros, or the bias for convolution).
fn matmul_acc_seq(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += aik * bj;
            }
        }
    }
}

/// Parallel variant of `matmul_acc_seq`, split over rows of `c`.
/// Each row is computed by the same sequential loop, so the result is
/// bit-identical to the sequential version.
pub(crate) fn matmul_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    threads::par_chunks_mut(c, n, |i, crow| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (cj, &bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += aik * bj;
            }
        }
    });
}

/// Output spatial extent of a convolution/pool along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unpacks one sample [cin,h,w] into the patch matrix [cin*kh*kw, oh*ow].
/// Row order is (channel, ky, kx), matching the nested-loop summation order.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f32],
) {
    debug_assert_eq!(col.len(), cin * kh * kw * oh * ow);
    let mut r = 0;
    for c in 0..cin {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst_row = &mut col[r * oh * ow..(r + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut dst_row[oy * ow..oy * ow + ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..iy as usize * w + w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
                r += 1;
            }
        }
    }
}

/// Unpacks one sample into the patch-major matrix [oh*ow, cin*kh*kw]:
/// row q holds the receptive field of output position q in (channel, ky,
/// kx) order. The backward pass works in this layout so its inner loops
/// run along the kernel dimension.
#[allow(clippy::too_many_arguments)]
fn im2row(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    rows: &mut [f32],
) {
    let kdim = cin * kh * kw;
    debug_assert_eq!(rows.len(), oh * ow * kdim);
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut rows[(oy * ow + ox) * kdim..(oy * ow + ox + 1) * kdim];
            let mut r = 0;
            for c in 0..cin {
                let xc = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        dst[r..r + kw].fill(0.0);
                        r += kw;
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..iy as usize * w + w];
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[r] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            xrow[ix as usize]
                        };
                        r += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-major gradient matrix back into one sample.
#[allow(clippy::too_many_arguments)]
fn row2im_acc(
    rows: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    gx: &mut [f32],
) {
    let kdim = cin * kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let src = &rows[(oy * ow + ox) * kdim..(oy * ow + ox + 1) * kdim];
            let mut r = 0;
            for c in 0..cin {
                let gxc = &mut gx[c * h * w..(c + 1) * h * w];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        r += kw;
                        continue;
                    }
                    let grow = &mut gxc[iy as usize * w..iy as usize * w + w];
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            grow[ix as usize] += src[r];
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    let (n, cin, h, w) = input.dims4("conv input")?;
    let (cout, wcin, kh, kw) = weights.dims4("conv weights")?;
    if cin != wcin {
        return Err(Error::Shape(format!(
            "conv input channels {cin} (input {:?}) do not match weight Cin {wcin} (weights {:?})",
            input.shape, weights.shape
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::Shape(format!(
                "conv bias must be [{cout}], got {:?}",
                bias.shape
            )));
        }
    }
    if stride == 0 {
        return Err(Error::Usage("conv stride must be positive".into()));
    }
    let oh = conv_out_extent(h, kh, stride, pad).ok_or_else(|| {
        Error::Shape(format!(
            "kernel {kh} exceeds padded input height {}",
            h + 2 * pad
        ))
    })?;
    let ow = conv_out_extent(w, kw, stride, pad).ok_or_else(|| {
        Error::Shape(format!(
            "kernel {kw} exceeds padded input width {}",
            w + 2 * pad
        ))
    })?;
    Ok(ConvGeometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    })
}

/// 2-d convolution: each output element is the bias plus the dot product of
/// the kernel with the zero-padded input window.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input, weights, Some(bias), stride, pad)?;
    let ConvGeometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    } = g;

    let kdim = cin * kh * kw;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let sample_in = cin * h * w;
    let sample_out = cout * oh * ow;
    let input_data = input.data();
    let wdata = weights.data();
    let bdata = bias.data();
    threads::par_chunks_mut(out.data_mut(), sample_out, |i, out_n| {
        let x = &input_data[i * sample_in..(i + 1) * sample_in];
        let mut col = vec![0.0f32; kdim * oh * ow];
        im2col(x, cin, h, w, kh, kw, stride, pad, oh, ow, &mut col);
        // Seed each output row with its bias so the accumulation order is
        // bias first, then kernel terms in (channel, ky, kx) order.
        for co in 0..cout {
            out_n[co * oh * ow..(co + 1) * oh * ow].fill(bdata[co]);
        }
        matmul_acc_seq(out_n, wdata, &col, cout, kdim, oh * ow);
    });
    Ok(out)
}

/// Gradients of `conv2d_forward` with respect to input, weights and bias.
pub struct ConvGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

/// Exact analytic gradients of the convolution forward map.
/// `input` must be the tensor that produced `grad_out`'s forward pass.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, weights, None, stride, pad)?;
    let ConvGeometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    } = g;
    if grad_out.shape() != [n, cout, oh, ow] {
        return Err(Error::Shape(format!(
            "grad_out shape {:?} does not match forward output [{n}, {cout}, {oh}, {ow}]",
            grad_out.shape()
        )));
    }

    let kdim = cin * kh * kw;
    let ohw = oh * ow;
    let sample_in = cin * h * w;
    let sample_out = cout * ohw;
    let input_data = input.data();
    let gout = grad_out.data();
    let wdata = weights.data();

    let mut grad_input = Tensor::zeros(&[n, cin, h, w]);

    // grad_input: per-sample, disjoint output slices. In patch space,
    // grad_rows[q,:] = sum_co g[co,q] * W[co,:], then scatter back.
    threads::par_chunks_mut(grad_input.data_mut(), sample_in, |i, gx| {
        let g = &gout[i * sample_out..(i + 1) * sample_out];
        let mut grad_rows = vec![0.0f32; ohw * kdim];
        for (q, row) in grad_rows.chunks_mut(kdim).enumerate() {
            for co in 0..cout {
                let gv = g[co * ohw + q];
                if gv == 0.0 {
                    continue;
                }
                let wrow = &wdata[co * kdim..(co + 1) * kdim];
                for (d, &wv) in row.iter_mut().zip(wrow.iter()) {
                    *d += gv * wv;
                }
            }
        }
        row2im_acc(&grad_rows, cin, h, w, kh, kw, stride, pad, oh, ow, gx);
    });

    // grad_weights and grad_bias: per-sample partials summed in sample
    // order, so the result does not depend on the pool size.
    let mut grad_weights = Tensor::zeros(&[cout, cin, kh, kw]);
    let mut grad_bias = Tensor::zeros(&[cout]);
    let partial_len = cout * kdim + cout;
    let parallel_partials = n > 1 && n * partial_len <= 32_000_000;
    let mut partials = vec![0.0f32; if parallel_partials { n * partial_len } else { partial_len }];

    let compute_partial = |i: usize, buf: &mut [f32]| {
        let (pw, pb) = buf.split_at_mut(cout * kdim);
        let x = &input_data[i * sample_in..(i + 1) * sample_in];
        let g = &gout[i * sample_out..(i + 1) * sample_out];
        let mut rows = vec![0.0f32; ohw * kdim];
        im2row(x, cin, h, w, kh, kw, stride, pad, oh, ow, &mut rows);
        // pw[co,:] = sum_q g[co,q] * rows[q,:], q ascending per element.
        for co in 0..cout {
            let grow = &g[co * ohw..(co + 1) * ohw];
            let dst = &mut pw[co * kdim..(co + 1) * kdim];
            let mut bias_acc = 0.0f32;
            for (q, &gv) in grow.iter().enumerate() {
                bias_acc += gv;
                if gv == 0.0 {
                    continue;
                }
                let row = &rows[q * kdim..(q + 1) * kdim];
                for (d, &rv) in dst.iter_mut().zip(row.iter()) {
                    *d += gv * rv;
                }
            }
            pb[co] = bias_acc;
        }
    };

    if parallel_partials {
        threads::par_chunks_mut(&mut partials, partial_len, &compute_partial);
        for i in 0..n {
            let buf = &partials[i * partial_len..(i + 1) * partial_len];
            for (d, &s) in grad_weights.data_mut().iter_mut().zip(&buf[..cout * kdim]) {
                *d += s;
            }
            for (d, &s) in grad_bias.data_mut().iter_mut().zip(&buf[cout * kdim..]) {
                *d += s;
            }
        }
    } else {
        for i in 0..n {
            partials.fill(0.0);
            compute_partial(i, &mut partials);
            for (d, &s) in grad_weights.data_mut().iter_mut().zip(&partials[..cout * kdim]) {
                *d += s;
            }
            for (d, &s) in grad_bias.data_mut().iter_mut().zip(&partials[cout * kdim..]) {
                *d += s;
            }
        }
    }

    Ok(ConvGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

/// Winner positions recorded by max-pooling; linear indices into the
/// flattened input tensor. Ties go to the lowest linear index.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, MaxPoolIndices)> {
    let (n, c, h, w) = input.dims4("maxpool input")?;
    if window == 0 || stride == 0 {
        return Err(Error::Usage("pool window and stride must be positive".into()));
    }
    if window > h || window > w {
        return Err(Error::Shape(format!(
            "pool window {window} exceeds spatial extents {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let x = input.data();
    let plane = h * w;
    let out_plane = oh * ow;
    {
        let out_data = out.data_mut();
        for nc in 0..n * c {
            let base = nc * plane;
            let xo = nc * out_plane;
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = oy * stride;
                    let x0 = ox * stride;
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = base + y0 * w + x0;
                    for dy in 0..window {
                        let row = base + (y0 + dy) * w + x0;
                        for dx in 0..window {
                            let v = x[row + dx];
                            if v > best {
                                best = v;
                                best_idx = row + dx;
                            }
                        }
                    }
                    out_data[xo + oy * ow + ox] = best;
                    argmax[xo + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    Ok((
        out,
        MaxPoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to its recorded argmax position.
pub fn maxpool_backward(grad_out: &Tensor, indices: &MaxPoolIndices) -> Result<Tensor> {
    if grad_out.numel() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "grad_out has {} values, pool recorded {} winners",
            grad_out.numel(),
            indices.argmax.len()
        )));
    }
    let mut grad_input = Tensor::zeros(&indices.input_shape);
    let gx = grad_input.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(grad_input)
}

/// Cross-channel normalization constants: b = a / (k + alpha * sum a^2)^beta
/// over a window of 2*depth_radius+1 channels, clamped at the edges.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrnParams {
    pub depth_radius: usize,
    pub alpha: f32,
    pub beta: f32,
    pub k: f32,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            depth_radius: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

/// Window sums of a^2 across channels for one spatial position.
fn lrn_window_sums(a: &[f32], c: usize, stride: usize, radius: usize, out: &mut [f32]) {
    // a is indexed a[ch * stride], out[ch] = sum over the clamped window.
    for ch in 0..c {
        let lo = ch.saturating_sub(radius);
        let hi = (ch + radius).min(c - 1);
        let mut s = 0.0f32;
        for j in lo..=hi {
            let v = a[j * stride];
            s += v * v;
        }
        out[ch] = s;
    }
}

/// x^beta, with the default beta = 0.75 computed as x / x^(1/4): two
/// sqrts and a division are far cheaper than powf in this hot loop.
#[inline]
fn pow_beta(x: f32, beta: f32) -> f32 {
    if beta == 0.75 {
        x / x.sqrt().sqrt()
    } else {
        x.powf(beta)
    }
}

pub fn lrn_forward(input: &Tensor, p: &LrnParams) -> Result<Tensor> {
    let (_n, c, h, w) = input.dims4("lrn input")?;
    if p.alpha < 0.0 || p.beta <= 0.0 || p.k <= 0.0 {
        return Err(Error::Usage(format!(
            "lrn parameters must be positive (alpha may be 0), got {p:?}"
        )));
    }
    let mut out = Tensor::zeros_like(input);
    let x = input.data();
    let plane = h * w;
    let sample = c * plane;
    threads::par_chunks_mut(out.data_mut(), sample, |i, out_n| {
        let xn = &x[i * sample..(i + 1) * sample];
        let mut sums = vec![0.0f32; c];
        for pos in 0..plane {
            lrn_window_sums(&xn[pos..], c, plane, p.depth_radius, &mut sums);
            for ch in 0..c {
                let denom = pow_beta(p.k + p.alpha * sums[ch], p.beta);
                out_n[ch * plane + pos] = xn[ch * plane + pos] / denom;
            }
        }
    });
    Ok(out)
}

pub fn lrn_backward(grad_out: &Tensor, input: &Tensor, p: &LrnParams) -> Result<Tensor> {
    let (_n, c, h, w) = input.dims4("lrn input")?;
    if grad_out.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "lrn grad_out shape {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let mut grad_input = Tensor::zeros_like(input);
    let x = input.data();
    let g = grad_out.data();
    let plane = h * w;
    let sample = c * plane;
    let radius = p.depth_radius;
    threads::par_chunks_mut(grad_input.data_mut(), sample, |i, gx_n| {
        let xn = &x[i * sample..(i + 1) * sample];
        let gn = &g[i * sample..(i + 1) * sample];
        let mut sums = vec![0.0f32; c];
        let mut e = vec![0.0f32; c];
        let mut inv_pow = vec![0.0f32; c];
        for pos in 0..plane {
            lrn_window_sums(&xn[pos..], c, plane, radius, &mut sums);
            // e[c] = g_c * a_c * (k + alpha S_c)^(-beta-1)
            for ch in 0..c {
                let base = p.k + p.alpha * sums[ch];
                let pb = pow_beta(base, p.beta);
                inv_pow[ch] = 1.0 / pb;
                e[ch] = gn[ch * plane + pos] * xn[ch * plane + pos] / (base * pb);
            }
            for m in 0..c {
                let direct = gn[m * plane + pos] * inv_pow[m];
                let lo = m.saturating_sub(radius);
                let hi = (m + radius).min(c - 1);
                let mut t = 0.0f32;
                for j in lo..=hi {
                    t += e[j];
                }
                gx_n[m * plane + pos] =
                    direct - 2.0 * p.alpha * p.beta * xn[m * plane + pos] * t;
            }
        }
    });
    Ok(grad_input)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient mask: passes grad where the forward input was > 0; the
/// subgradient at exactly 0 is defined as 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    debug_assert_eq!(grad_out.shape(), input.shape());
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor {
        shape: a.shape().to_vec(),
        data,
    })
}

pub fn scale(a: &Tensor, factor: f32) -> Tensor {
    a.map(|v| v * factor)
}

/// Adds N(0, sigma^2) noise elementwise; sigma 0 is the identity.
pub fn gaussian_noise(input: &Tensor, sigma: f32, rng: &mut impl Rng) -> Tensor {
    if sigma == 0.0 {
        return input.clone();
    }
    let normal = Normal::new(0.0f32, sigma).expect("sigma must be finite and non-negative");
    let data = input.data().iter().map(|&v| v + normal.sample(rng)).collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

/// Center-aligned bilinear resize of a [c,h,w] tensor to [c,out_h,out_w].
/// Uses the lerp form, so constant images resize bit-exactly.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "resize expects [c,h,w], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::Usage("resize target extents must be positive".into()));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let x = input.data();
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
    let out_data = out.data_mut();
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out_data[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for oy in 0..out_h {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f32;
            for ox in 0..out_w {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f32;
                let top = lerp(src[y0 * w + x0], src[y0 * w + x1], tx);
                let bot = lerp(src[y1 * w + x0], src[y1 * w + x1], tx);
                dst[oy * out_w + ox] = lerp(top, bot, ty);
            }
        }
    }
    Ok(out)
}
