//! Dense, strided convolution, and transposed convolution layers.
//!
//! Convolutions are fixed at kernel 4, stride 2, padding 1, so every conv
//! halves the spatial size exactly and every transposed conv doubles it.
//! Feature maps are channel-planar `[c][h][w]`, flattened row-major.

use super::Tensor;
use rand::Rng;

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

/// Four-lane unrolled dot product with a fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    let mut ac = a.chunks_exact(4);
    let mut bc = b.chunks_exact(4);
    for (av, bv) in (&mut ac).zip(&mut bc) {
        lanes[0] += av[0] * bv[0];
        lanes[1] += av[1] * bv[1];
        lanes[2] += av[2] * bv[2];
        lanes[3] += av[3] * bv[3];
    }
    let mut tail = 0.0;
    for (av, bv) in ac.remainder().iter().zip(bc.remainder()) {
        tail += av * bv;
    }
    (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]) + tail
}

/// `acc += scale * values` over a slice pair.
#[inline]
fn axpy(acc: &mut [f64], scale: f64, values: &[f64]) {
    debug_assert_eq!(acc.len(), values.len());
    for (a, v) in acc.iter_mut().zip(values) {
        *a += scale * v;
    }
}

/// Fully connected layer; weight shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[out_dim, in_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Dense::zeros(out_dim, in_dim);
        layer.w.fill_fan_in_uniform(in_dim, rng);
        layer.b.fill_fan_in_uniform(in_dim, rng);
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            w: Tensor::zeros(self.w.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), in_dim);
        let w = self.w.data();
        let b = self.b.data();
        let mut y = Vec::with_capacity(out_dim);
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            y.push(b[o] + dot(row, x));
        }
        y
    }

    /// Accumulates weight/bias gradients into `grads` and, when `dx` is
    /// given, writes the input gradient.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense, mut dx: Option<&mut [f64]>) {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), in_dim);
        debug_assert_eq!(dy.len(), out_dim);
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        let w = self.w.data();
        let dw = grads.w.data_mut();
        let db = grads.b.data_mut();
        for o in 0..out_dim {
            let g = dy[o];
            db[o] += g;
            axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, x);
            if let Some(dx) = dx.as_deref_mut() {
                axpy(dx, g, &w[o * in_dim..(o + 1) * in_dim]);
            }
        }
    }
}

/// Strided convolution; weight shape `[oc, ic, 4, 4]`, halves spatial dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv2d {
    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        Conv2d {
            w: Tensor::zeros(&[out_ch, in_ch, KERNEL, KERNEL]),
            b: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn init(out_ch: usize, in_ch: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Conv2d::zeros(out_ch, in_ch);
        let fan_in = in_ch * KERNEL * KERNEL;
        layer.w.fill_fan_in_uniform(fan_in, rng);
        layer.b.fill_fan_in_uniform(fan_in, rng);
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            w: Tensor::zeros(self.w.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }

    pub fn out_ch(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &[f64], ih: usize, iw: usize) -> Vec<f64> {
        let (oc, ic) = (self.out_ch(), self.in_ch());
        debug_assert_eq!(x.len(), ic * ih * iw);
        let (oh, ow) = (ih / STRIDE, iw / STRIDE);
        let w = self.w.data();
        let b = self.b.data();
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            let w_o = &w[o * ic * KERNEL * KERNEL..(o + 1) * ic * KERNEL * KERNEL];
            let out_o = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for oy in 0..oh {
                let iy0 = (oy * STRIDE) as isize - PAD as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = KERNEL.min((ih as isize - iy0) as usize);
                for ox in 0..ow {
                    let ix0 = (ox * STRIDE) as isize - PAD as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = KERNEL.min((iw as isize - ix0) as usize);
                    let full_x = kx_lo == 0 && kx_hi == KERNEL;
                    let mut acc = b[o];
                    for i in 0..ic {
                        let x_i = &x[i * ih * iw..(i + 1) * ih * iw];
                        let w_oi = &w_o[i * KERNEL * KERNEL..(i + 1) * KERNEL * KERNEL];
                        for ky in ky_lo..ky_hi {
                            let iy = (iy0 + ky as isize) as usize;
                            let x_row = &x_i[iy * iw..(iy + 1) * iw];
                            let w_row = &w_oi[ky * KERNEL..ky * KERNEL + KERNEL];
                            if full_x {
                                let xs = &x_row[ix0 as usize..ix0 as usize + KERNEL];
                                acc += w_row[0] * xs[0]
                                    + w_row[1] * xs[1]
                                    + w_row[2] * xs[2]
                                    + w_row[3] * xs[3];
                            } else {
                                for kx in kx_lo..kx_hi {
                                    let ix = (ix0 + kx as isize) as usize;
                                    acc += w_row[kx] * x_row[ix];
                                }
                            }
                        }
                    }
                    out_o[oy * ow + ox] = acc;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and, when `dx` is given,
    /// writes the input gradient (zeroed first).
    pub fn backward(
        &self,
        x: &[f64],
        ih: usize,
        iw: usize,
        dy: &[f64],
        grads: &mut Conv2d,
        mut dx: Option<&mut [f64]>,
    ) {
        let (oc, ic) = (self.out_ch(), self.in_ch());
        let (oh, ow) = (ih / STRIDE, iw / STRIDE);
        debug_assert_eq!(x.len(), ic * ih * iw);
        debug_assert_eq!(dy.len(), oc * oh * ow);
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        let w = self.w.data();
        let dw = grads.w.data_mut();
        let db = grads.b.data_mut();
        for o in 0..oc {
            let w_o = &w[o * ic * KERNEL * KERNEL..(o + 1) * ic * KERNEL * KERNEL];
            let dw_o = &mut dw[o * ic * KERNEL * KERNEL..(o + 1) * ic * KERNEL * KERNEL];
            let dy_o = &dy[o * oh * ow..(o + 1) * oh * ow];
            for oy in 0..oh {
                let iy0 = (oy * STRIDE) as isize - PAD as isize;
                let ky_lo = (-iy0).max(0) as usize;
                let ky_hi = KERNEL.min((ih as isize - iy0) as usize);
                for ox in 0..ow {
                    let ix0 = (ox * STRIDE) as isize - PAD as isize;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = KERNEL.min((iw as isize - ix0) as usize);
                    let full_x = kx_lo == 0 && kx_hi == KERNEL;
                    let g = dy_o[oy * ow + ox];
                    db[o] += g;
                    for i in 0..ic {
                        let x_base = i * ih * iw;
                        let k_base = i * KERNEL * KERNEL;
                        for ky in ky_lo..ky_hi {
                            let iy = (iy0 + ky as isize) as usize;
                            let row = x_base + iy * iw;
                            let wk = k_base + ky * KERNEL;
                            if full_x {
                                let base = row + ix0 as usize;
                                let xs = &x[base..base + KERNEL];
                                let dws = &mut dw_o[wk..wk + KERNEL];
                                dws[0] += g * xs[0];
                                dws[1] += g * xs[1];
                                dws[2] += g * xs[2];
                                dws[3] += g * xs[3];
                                if let Some(dx) = dx.as_deref_mut() {
                                    let ws = &w_o[wk..wk + KERNEL];
                                    let dxs = &mut dx[base..base + KERNEL];
                                    dxs[0] += g * ws[0];
                                    dxs[1] += g * ws[1];
                                    dxs[2] += g * ws[2];
                                    dxs[3] += g * ws[3];
                                }
                            } else {
                                for kx in kx_lo..kx_hi {
                                    let ix = (ix0 + kx as isize) as usize;
                                    dw_o[wk + kx] += g * x[row + ix];
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[row + ix] += g * w_o[wk + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution; weight shape `[ic, oc, 4, 4]`, doubles spatial dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvTranspose2d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvTranspose2d {
            w: Tensor::zeros(&[in_ch, out_ch, KERNEL, KERNEL]),
            b: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn init(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let mut layer = ConvTranspose2d::zeros(in_ch, out_ch);
        let fan_in = in_ch * KERNEL * KERNEL;
        layer.w.fill_fan_in_uniform(fan_in, rng);
        layer.b.fill_fan_in_uniform(fan_in, rng);
        layer
    }

    pub fn zeros_like(&self) -> Self {
        ConvTranspose2d {
            w: Tensor::zeros(self.w.shape()),
            b: Tensor::zeros(self.b.shape()),
        }
    }

    pub fn in_ch(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_ch(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &[f64], ih: usize, iw: usize) -> Vec<f64> {
        let (ic, oc) = (self.in_ch(), self.out_ch());
        debug_assert_eq!(x.len(), ic * ih * iw);
        let (oh, ow) = (ih * STRIDE, iw * STRIDE);
        let w = self.w.data();
        let mut out = vec![0.0; oc * oh * ow];
        for (o, &bias) in self.b.data().iter().enumerate() {
            out[o * oh * ow..(o + 1) * oh * ow].fill(bias);
        }
        for i in 0..ic {
            let x_i = &x[i * ih * iw..(i + 1) * ih * iw];
            let w_i = &w[i * oc * KERNEL * KERNEL..(i + 1) * oc * KERNEL * KERNEL];
            for iy in 0..ih {
                let oy0 = (iy * STRIDE) as isize - PAD as isize;
                let ky_lo = (-oy0).max(0) as usize;
                let ky_hi = KERNEL.min((oh as isize - oy0) as usize);
                for ix in 0..iw {
                    let ox0 = (ix * STRIDE) as isize - PAD as isize;
                    let kx_lo = (-ox0).max(0) as usize;
                    let kx_hi = KERNEL.min((ow as isize - ox0) as usize);
                    let full_x = kx_lo == 0 && kx_hi == KERNEL;
                    let v = x_i[iy * iw + ix];
                    for o in 0..oc {
                        let w_io = &w_i[o * KERNEL * KERNEL..(o + 1) * KERNEL * KERNEL];
                        let out_o = &mut out[o * oh * ow..(o + 1) * oh * ow];
                        for ky in ky_lo..ky_hi {
                            let oy = (oy0 + ky as isize) as usize;
                            if full_x {
                                let base = oy * ow + ox0 as usize;
                                let ws = &w_io[ky * KERNEL..ky * KERNEL + KERNEL];
                                let os = &mut out_o[base..base + KERNEL];
                                os[0] += v * ws[0];
                                os[1] += v * ws[1];
                                os[2] += v * ws[2];
                                os[3] += v * ws[3];
                            } else {
                                for kx in kx_lo..kx_hi {
                                    let ox = (ox0 + kx as isize) as usize;
                                    out_o[oy * ow + ox] += v * w_io[ky * KERNEL + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and, when `dx` is given,
    /// writes the input gradient (zeroed first).
    pub fn backward(
        &self,
        x: &[f64],
        ih: usize,
        iw: usize,
        dy: &[f64],
        grads: &mut ConvTranspose2d,
        mut dx: Option<&mut [f64]>,
    ) {
        let (ic, oc) = (self.in_ch(), self.out_ch());
        let (oh, ow) = (ih * STRIDE, iw * STRIDE);
        debug_assert_eq!(x.len(), ic * ih * iw);
        debug_assert_eq!(dy.len(), oc * oh * ow);
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        let w = self.w.data();
        let dw = grads.w.data_mut();
        let db = grads.b.data_mut();
        for o in 0..oc {
            db[o] += dy[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
        }
        for i in 0..ic {
            let x_i = &x[i * ih * iw..(i + 1) * ih * iw];
            let w_i = &w[i * oc * KERNEL * KERNEL..(i + 1) * oc * KERNEL * KERNEL];
            let dw_i = &mut dw[i * oc * KERNEL * KERNEL..(i + 1) * oc * KERNEL * KERNEL];
            for iy in 0..ih {
                let oy0 = (iy * STRIDE) as isize - PAD as isize;
                let ky_lo = (-oy0).max(0) as usize;
                let ky_hi = KERNEL.min((oh as isize - oy0) as usize);
                for ix in 0..iw {
                    let ox0 = (ix * STRIDE) as isize - PAD as isize;
                    let kx_lo = (-ox0).max(0) as usize;
                    let kx_hi = KERNEL.min((ow as isize - ox0) as usize);
                    let full_x = kx_lo == 0 && kx_hi == KERNEL;
                    let v = x_i[iy * iw + ix];
                    let mut acc = 0.0;
                    for o in 0..oc {
                        let w_io = &w_i[o * KERNEL * KERNEL..(o + 1) * KERNEL * KERNEL];
                        let dw_io = &mut dw_i[o * KERNEL * KERNEL..(o + 1) * KERNEL * KERNEL];
                        let dy_o = &dy[o * oh * ow..(o + 1) * oh * ow];
                        for ky in ky_lo..ky_hi {
                            let oy = (oy0 + ky as isize) as usize;
                            if full_x {
                                let base = oy * ow + ox0 as usize;
                                let gs = &dy_o[base..base + KERNEL];
                                let ws = &w_io[ky * KERNEL..ky * KERNEL + KERNEL];
                                let dws = &mut dw_io[ky * KERNEL..ky * KERNEL + KERNEL];
                                acc += gs[0] * ws[0] + gs[1] * ws[1] + gs[2] * ws[2] + gs[3] * ws[3];
                                dws[0] += gs[0] * v;
                                dws[1] += gs[1] * v;
                                dws[2] += gs[2] * v;
                                dws[3] += gs[3] * v;
                            } else {
                                for kx in kx_lo..kx_hi {
                                    let ox = (ox0 + kx as isize) as usize;
                                    let g = dy_o[oy * ow + ox];
                                    acc += g * w_io[ky * KERNEL + kx];
                                    dw_io[ky * KERNEL + kx] += g * v;
                                }
                            }
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[i * ih * iw + iy * iw + ix] = acc;
                    }
                }
            }
        }
    }
}
