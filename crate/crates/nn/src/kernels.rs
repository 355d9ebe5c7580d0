//! Raw numeric kernels: im2col convolution, transposed convolution, pooling and
//! resampling, each with its adjoint.

use crate::tensor::Tensor;

pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(size + 2 * pad >= kernel, "kernel larger than padded input");
    (size + 2 * pad - kernel) / stride + 1
}

pub fn conv_transpose_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size - 1) * stride + kernel - 2 * pad
}

/// Row-major `c = a · b + beta · c` with arbitrary strides on `a` and `b`.
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
    assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert_eq!(c.len(), m * n);
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

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col(img: &[f64], g: &Geometry, col: &mut [f64]) {
    let p = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into the image.
fn col2im(col: &[f64], g: &Geometry, img: &mut [f64]) {
    let p = g.cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_geometry(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Geometry {
    assert_eq!(
        x.c(),
        w.c(),
        "conv2d: input has {} channels, kernel expects {}",
        x.c(),
        w.c()
    );
    Geometry {
        channels: x.c(),
        height: x.h(),
        width: x.w(),
        kh: w.h(),
        kw: w.w(),
        stride,
        pad,
        out_h: conv_out_size(x.h(), w.h(), stride, pad),
        out_w: conv_out_size(x.w(), w.w(), stride, pad),
    }
}

fn add_bias(y: &mut Tensor, bias: &Tensor) {
    assert_eq!(bias.len(), y.c(), "bias length must equal channel count");
    let plane = y.plane_len();
    for n in 0..y.n() {
        let s = y.sample_mut(n);
        for (c, b) in bias.data().iter().enumerate() {
            for v in &mut s[c * plane..(c + 1) * plane] {
                *v += b;
            }
        }
    }
}

fn bias_grad(dy: &Tensor) -> Tensor {
    let plane = dy.plane_len();
    let mut db = Tensor::zeros([1, dy.c(), 1, 1]);
    for n in 0..dy.n() {
        let s = dy.sample(n);
        for c in 0..dy.c() {
            db.data_mut()[c] += s[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
    }
    db
}

/// Cross-correlation with kernel `w: [Cout, Cin, kh, kw]`, zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let g = conv_geometry(x, w, stride, pad);
    let (k, p, cout) = (g.rows(), g.cols(), w.n());
    let mut y = Tensor::zeros([x.n(), cout, g.out_h, g.out_w]);
    let mut col = vec![0.0; k * p];
    for n in 0..x.n() {
        im2col(x.sample(n), &g, &mut col);
        gemm(
            cout,
            k,
            p,
            w.data(),
            (k, 1),
            &col,
            (p, 1),
            0.0,
            y.sample_mut(n),
        );
    }
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    y
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> ConvGrads {
    let g = conv_geometry(x, w, stride, pad);
    let (k, p, cout) = (g.rows(), g.cols(), w.n());
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = vec![0.0; k * p];
    let mut dcol = vec![0.0; k * p];
    for n in 0..x.n() {
        im2col(x.sample(n), &g, &mut col);
        let dyn_ = dy.sample(n);
        // dW += dY · colᵀ
        gemm(cout, p, k, dyn_, (p, 1), &col, (1, p), 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ · dY
            gemm(k, cout, p, w.data(), (1, k), dyn_, (p, 1), 0.0, &mut dcol);
            col2im(&dcol, &g, dx.sample_mut(n));
        }
    }
    ConvGrads {
        dx,
        dw,
        db: bias_grad(dy),
    }
}

fn transpose_geometry(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Geometry {
    assert_eq!(
        x.c(),
        w.n(),
        "conv_transpose2d: input has {} channels, kernel expects {}",
        x.c(),
        w.n()
    );
    // Geometry of the forward convolution whose adjoint this is: the "image"
    // is the transposed-conv output, the columns are the input positions.
    Geometry {
        channels: w.c(),
        height: conv_transpose_out_size(x.h(), w.h(), stride, pad),
        width: conv_transpose_out_size(x.w(), w.w(), stride, pad),
        kh: w.h(),
        kw: w.w(),
        stride,
        pad,
        out_h: x.h(),
        out_w: x.w(),
    }
}

/// Transposed convolution with kernel `w: [Cin, Cout, kh, kw]`.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let g = transpose_geometry(x, w, stride, pad);
    let (r, p, cin) = (g.rows(), g.cols(), w.n());
    let mut y = Tensor::zeros([x.n(), w.c(), g.height, g.width]);
    let mut col = vec![0.0; r * p];
    for n in 0..x.n() {
        // col = Wᵀ · x
        gemm(
            r,
            cin,
            p,
            w.data(),
            (1, r),
            x.sample(n),
            (p, 1),
            0.0,
            &mut col,
        );
        col2im(&col, &g, y.sample_mut(n));
    }
    if let Some(b) = bias {
        add_bias(&mut y, b);
    }
    y
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> ConvGrads {
    let g = transpose_geometry(x, w, stride, pad);
    let (r, p, cin) = (g.rows(), g.cols(), w.n());
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dcol = vec![0.0; r * p];
    for n in 0..x.n() {
        im2col(dy.sample(n), &g, &mut dcol);
        // dW += x · dcolᵀ
        gemm(
            cin,
            p,
            r,
            x.sample(n),
            (p, 1),
            &dcol,
            (1, p),
            1.0,
            dw.data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            gemm(
                cin,
                r,
                p,
                w.data(),
                (r, 1),
                &dcol,
                (p, 1),
                0.0,
                dx.sample_mut(n),
            );
        }
    }
    ConvGrads {
        dx,
        dw,
        db: bias_grad(dy),
    }
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and the flat
/// source index of every output element.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    assert!(
        x.h() % 2 == 0 && x.w() % 2 == 0,
        "max_pool2 needs even spatial dims"
    );
    let (oh, ow) = (x.h() / 2, x.w() / 2);
    let mut y = Tensor::zeros([x.n(), x.c(), oh, ow]);
    let mut arg = Vec::with_capacity(y.len());
    for n in 0..x.n() {
        for c in 0..x.c() {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.index([n, c, 2 * oy, 2 * ox]);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index([n, c, 2 * oy + dy, 2 * ox + dx]);
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                    y.set([n, c, oy, ox], x.data()[best]);
                    arg.push(best);
                }
            }
        }
    }
    (y, arg)
}

/// Source taps for 2× linear upsampling along one axis (half-pixel centers,
/// edge clamped).
fn upsample_taps(size: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * size)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(size - 1);
            let i1 = (i0 + 1).min(size - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear2(x: &Tensor) -> Tensor {
    let ty = upsample_taps(x.h());
    let tx = upsample_taps(x.w());
    Tensor::from_fn([x.n(), x.c(), 2 * x.h(), 2 * x.w()], |[n, c, oy, ox]| {
        let (y0, y1, fy) = ty[oy];
        let (x0, x1, fx) = tx[ox];
        let top = x.get([n, c, y0, x0]) * (1.0 - fx) + x.get([n, c, y0, x1]) * fx;
        let bot = x.get([n, c, y1, x0]) * (1.0 - fx) + x.get([n, c, y1, x1]) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

pub fn upsample_bilinear2_backward(dy: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let ty = upsample_taps(in_shape[2]);
    let tx = upsample_taps(in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    for n in 0..dy.n() {
        for c in 0..dy.c() {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let g = dy.get([n, c, oy, ox]);
                    for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                        for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                            let i = dx.index([n, c, yy, xx]);
                            dx.data_mut()[i] += g * wy * wx;
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution, the reference for the im2col path.
    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let oh = conv_out_size(x.h(), w.h(), stride, pad);
        let ow = conv_out_size(x.w(), w.w(), stride, pad);
        Tensor::from_fn([x.n(), w.n(), oh, ow], |[n, co, oy, ox]| {
            let mut acc = 0.0;
            for ci in 0..x.c() {
                for ky in 0..w.h() {
                    for kx in 0..w.w() {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < x.h() && (ix as usize) < x.w() {
                            acc +=
                                x.get([n, ci, iy as usize, ix as usize]) * w.get([co, ci, ky, kx]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: [usize; 4], seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0), (3, 2, 0)] {
            let x = pseudo([2, 3, 8, 6], 1);
            let w = pseudo([5, 3, k, k], 2);
            let a = conv2d(&x, &w, None, s, p);
            let b = naive_conv(&x, &w, s, p);
            assert!(a.max_abs_diff(&b) < 1e-12, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> with the kernel reinterpreted.
        let x = pseudo([1, 3, 8, 8], 3);
        let w = pseudo([4, 3, 4, 4], 4);
        let y = pseudo([1, 4, 4, 4], 5);
        let lhs: f64 = conv2d(&x, &w, None, 2, 1)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();
        let xt = conv_transpose2d(&y, &w, None, 2, 1);
        assert_eq!(xt.shape(), x.shape());
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Tensor::full([1, 2, 3, 5], 0.7);
        let y = upsample_bilinear2(&x);
        assert_eq!(y.shape(), [1, 2, 6, 10]);
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn max_pool_picks_block_maximum() {
        let x = Tensor::from_vec([1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 8., 7.]);
        let (y, _) = max_pool2(&x);
        assert_eq!(y.data(), &[5.0, 8.0]);
    }
}
