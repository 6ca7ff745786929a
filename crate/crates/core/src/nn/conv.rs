//! 3D convolution kernels (cross-correlation) via im2col and GEMM.
//!
//! Layouts: input `[N, C_in, D, H, W]`, weight `[C_out, C_in, kD, kH, kW]`,
//! bias `[C_out]`, output `[N, C_out, D_out, H_out, W_out]`. A 2D convolution
//! is the depth-1 case with `kD = 1`.

use alloc::format;
use alloc::vec;

use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    /// (depth, height, width)
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn unit() -> Self {
        ConvGeometry {
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub input: [usize; 3],
    pub cout: usize,
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub geom: ConvGeometry,
}

impl ConvDims {
    pub fn resolve(x: &[usize], w: &[usize], b: &[usize], geom: ConvGeometry) -> Result<Self> {
        if x.len() != 5 || w.len() != 5 {
            return Err(Error::Shape(format!(
                "conv expects 5-d input and weight, got {:?} and {:?}",
                x, w
            )));
        }
        if x[1] != w[1] {
            return Err(Error::Shape(format!(
                "conv input has {} channels, weight expects {}",
                x[1], w[1]
            )));
        }
        if b != [w[0]] {
            return Err(Error::Shape(format!("conv bias {:?} for {} outputs", b, w[0])));
        }
        if geom.stride.iter().any(|&s| s == 0) {
            return Err(Error::Shape("conv stride must be >= 1".into()));
        }
        let mut output = [0usize; 3];
        for i in 0..3 {
            let padded = x[2 + i] + 2 * geom.padding[i];
            if w[2 + i] == 0 || padded < w[2 + i] {
                return Err(Error::Shape(format!(
                    "conv kernel {:?} larger than padded input {:?}",
                    &w[2..],
                    &x[2..]
                )));
            }
            output[i] = (padded - w[2 + i]) / geom.stride[i] + 1;
        }
        Ok(ConvDims {
            n: x[0],
            cin: x[1],
            input: [x[2], x[3], x[4]],
            cout: w[0],
            kernel: [w[2], w[3], w[4]],
            output,
            geom,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    pub fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn in_sample_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    pub fn out_sample_len(&self) -> usize {
        self.cout * self.out_positions()
    }

    pub fn output_shape(&self) -> [usize; 5] {
        [self.n, self.cout, self.output[0], self.output[1], self.output[2]]
    }
}

/// Input coordinate feeding output coordinate `o` through kernel tap `k`.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, size: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    if i >= 0 && (i as usize) < size {
        Some(i as usize)
    } else {
        None
    }
}

/// Output positions `lo..hi` whose source coordinate through tap `k` lies
/// inside the input.
#[inline]
fn valid_range(k: usize, stride: usize, pad: usize, size: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if size + pad > k {
        ((size - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one sample into a `[patch_len, out_positions]` matrix.
pub(crate) fn im2col<S: Scalar>(x: &[S], d: &ConvDims, cols: &mut [S]) {
    let [id, ih, iw] = d.input;
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.output;
    let [sd, sh, sw] = d.geom.stride;
    let [pd, ph, pw] = d.geom.padding;
    let plane = oh * ow;
    let positions = od * plane;
    let mut row = 0;
    for c in 0..d.cin {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for bb in 0..kh {
                for cc in 0..kw {
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for z in 0..od {
                        let block = &mut dst[z * plane..(z + 1) * plane];
                        let Some(zi) = source(z, a, sd, pd, id) else {
                            block.iter_mut().for_each(|v| *v = S::zero());
                            continue;
                        };
                        for y in 0..oh {
                            let line = &mut block[y * ow..(y + 1) * ow];
                            let Some(yi) = source(y, bb, sh, ph, ih) else {
                                line.iter_mut().for_each(|v| *v = S::zero());
                                continue;
                            };
                            let src = &xc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                            let (lo, hi) = valid_range(cc, sw, pw, iw, ow);
                            line[..lo].iter_mut().for_each(|v| *v = S::zero());
                            line[hi..].iter_mut().for_each(|v| *v = S::zero());
                            let first = lo * sw + cc - pw;
                            if sw == 1 {
                                line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                            } else {
                                for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                    *v = src[first + j * sw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into one sample.
pub(crate) fn col2im<S: Scalar>(cols: &[S], d: &ConvDims, dx: &mut [S]) {
    let [id, ih, iw] = d.input;
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.output;
    let [sd, sh, sw] = d.geom.stride;
    let [pd, ph, pw] = d.geom.padding;
    let plane = oh * ow;
    let positions = od * plane;
    let mut row = 0;
    for c in 0..d.cin {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for bb in 0..kh {
                for cc in 0..kw {
                    let src = &cols[row * positions..(row + 1) * positions];
                    for z in 0..od {
                        let Some(zi) = source(z, a, sd, pd, id) else { continue };
                        for y in 0..oh {
                            let Some(yi) = source(y, bb, sh, ph, ih) else { continue };
                            let line = &src[z * plane + y * ow..z * plane + (y + 1) * ow];
                            let dst = &mut xc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                            let (lo, hi) = valid_range(cc, sw, pw, iw, ow);
                            let first = lo * sw + cc - pw;
                            for (j, &g) in line[lo..hi].iter().enumerate() {
                                dst[first + j * sw] += g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    d: &ConvDims,
    relu: bool,
) -> Tensor<S> {
    let positions = d.out_positions();
    let patch = d.patch_len();
    let mut out = vec![S::zero(); d.n * d.out_sample_len()];
    let mut cols = vec![S::zero(); patch * positions];
    for n in 0..d.n {
        let xs = &x.data()[n * d.in_sample_len()..(n + 1) * d.in_sample_len()];
        im2col(xs, d, &mut cols);
        let ys = &mut out[n * d.out_sample_len()..(n + 1) * d.out_sample_len()];
        gemm(
            MatRef::new(w.data(), d.cout, patch),
            MatRef::new(&cols, patch, positions),
            ys,
            false,
        );
        for (co, chunk) in ys.chunks_mut(positions).enumerate() {
            let bias = b.data()[co];
            for v in chunk.iter_mut() {
                *v += bias;
                if relu && *v < S::zero() {
                    *v = S::zero();
                }
            }
        }
    }
    Tensor::new(&d.output_shape(), out).expect("conv output shape")
}

/// Gradients `(dx, dw, db)` given the upstream gradient of the output; `dx`
/// is skipped unless `need_dx`.
///
/// With `relu` the gradient is masked by `y > 0`, where `y` is the forward
/// output.
pub(crate) fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    y: &Tensor<S>,
    dy: &Tensor<S>,
    d: &ConvDims,
    relu: bool,
    need_dx: bool,
) -> (Option<Tensor<S>>, Tensor<S>, Tensor<S>) {
    let positions = d.out_positions();
    let patch = d.patch_len();
    let mut dx = vec![S::zero(); if need_dx { x.len() } else { 0 }];
    let mut dw = vec![S::zero(); w.len()];
    let mut db = vec![S::zero(); d.cout];
    let mut cols = vec![S::zero(); patch * positions];
    let mut dcols = vec![S::zero(); patch * positions];
    let mut g = vec![S::zero(); d.out_sample_len()];
    for n in 0..d.n {
        let range = n * d.out_sample_len()..(n + 1) * d.out_sample_len();
        g.copy_from_slice(&dy.data()[range.clone()]);
        if relu {
            for (gv, &yv) in g.iter_mut().zip(&y.data()[range]) {
                if yv <= S::zero() {
                    *gv = S::zero();
                }
            }
        }
        for (co, chunk) in g.chunks(positions).enumerate() {
            let mut s = S::zero();
            for &v in chunk {
                s += v;
            }
            db[co] += s;
        }
        let xs = &x.data()[n * d.in_sample_len()..(n + 1) * d.in_sample_len()];
        im2col(xs, d, &mut cols);
        // dW += G * cols^T
        gemm(
            MatRef::new(&g, d.cout, positions),
            MatRef::transposed(&cols, positions, patch),
            &mut dw,
            true,
        );
        if !need_dx {
            continue;
        }
        // dcols = W^T * G
        gemm(
            MatRef::transposed(w.data(), patch, d.cout),
            MatRef::new(&g, d.cout, positions),
            &mut dcols,
            false,
        );
        col2im(&dcols, d, &mut dx[n * d.in_sample_len()..(n + 1) * d.in_sample_len()]);
    }
    (
        need_dx.then(|| Tensor::new(x.shape(), dx).expect("dx shape")),
        Tensor::new(w.shape(), dw).expect("dw shape"),
        Tensor::new(&[d.cout], db).expect("db shape"),
    )
}
