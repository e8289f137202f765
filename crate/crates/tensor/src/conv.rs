//! im2col-based 2-D convolution kernels.
//!
//! The three functions below are the three partial contractions of one
//! trilinear form `<y, conv(x, w)>`, which is what lets the autograd express
//! every convolution derivative (of any order) in terms of these same kernels.

use crate::{Element, Tensor};

/// Stride and symmetric zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        Self { stride, padding }
    }

    /// Output extent of a convolution over `input` with kernel `kernel`.
    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        let padded = input + 2 * self.padding;
        assert!(padded >= kernel, "kernel {kernel} larger than padded input {padded}");
        (padded - kernel) / self.stride + 1
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    s: usize,
    p: usize,
}

fn im2col<E: Element>(x: &[E], d: &Dims, col: &mut [E]) {
    let plane = d.ho * d.wo;
    for c in 0..d.c {
        let xc = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oh in 0..d.ho {
                    let seg = &mut dst[oh * d.wo..(oh + 1) * d.wo];
                    let ih = (oh * d.s + ki) as isize - d.p as isize;
                    if ih < 0 || ih >= d.h as isize {
                        seg.fill(E::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for (ow, out) in seg.iter_mut().enumerate() {
                        let iw = (ow * d.s + kj) as isize - d.p as isize;
                        *out = if iw < 0 || iw >= d.w as isize {
                            E::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<E: Element>(col: &[E], d: &Dims, x: &mut [E]) {
    let plane = d.ho * d.wo;
    for c in 0..d.c {
        let xc = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oh in 0..d.ho {
                    let ih = (oh * d.s + ki) as isize - d.p as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let dst = &mut xc[ih as usize * d.w..(ih as usize + 1) * d.w];
                    for (ow, &v) in src[oh * d.wo..(oh + 1) * d.wo].iter().enumerate() {
                        let iw = (ow * d.s + kj) as isize - d.p as isize;
                        if iw >= 0 && (iw as usize) < d.w {
                            dst[iw as usize] = dst[iw as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn dims4(t: &[usize], what: &str) -> (usize, usize, usize, usize) {
    assert_eq!(t.len(), 4, "{what} must be rank 4, got {t:?}");
    (t[0], t[1], t[2], t[3])
}

/// `x [N, Cin, H, W]` convolved with `w [Cout, Cin, kh, kw]`.
pub fn conv2d<E: Element>(x: &Tensor<E>, w: &Tensor<E>, geom: ConvGeom) -> Tensor<E> {
    let (n, cin, h, wd) = dims4(x.shape(), "conv input");
    let (cout, wcin, kh, kw) = dims4(w.shape(), "conv weight");
    assert_eq!(cin, wcin, "conv channel mismatch: input {cin}, weight {wcin}");
    let d = Dims {
        c: cin,
        h,
        w: wd,
        kh,
        kw,
        ho: geom.out_len(h, kh),
        wo: geom.out_len(wd, kw),
        s: geom.stride,
        p: geom.padding,
    };
    let ck = cin * kh * kw;
    let plane = d.ho * d.wo;
    let mut col = vec![E::zero(); ck * plane];
    let mut out = vec![E::zero(); n * cout * plane];
    for b in 0..n {
        im2col(&x.data()[b * cin * h * wd..(b + 1) * cin * h * wd], &d, &mut col);
        E::gemm(
            cout,
            ck,
            plane,
            E::one(),
            (w.data(), ck as isize, 1),
            (&col, plane as isize, 1),
            E::zero(),
            (&mut out[b * cout * plane..(b + 1) * cout * plane], plane as isize, 1),
        );
    }
    Tensor::new(&[n, cout, d.ho, d.wo], out)
}

/// Adjoint of [`conv2d`] in its input: maps `y [N, Cout, Ho, Wo]` back to
/// `[N, Cin, H, W]`. This is also the transposed convolution ("deconvolution").
pub fn conv2d_transpose<E: Element>(
    y: &Tensor<E>,
    w: &Tensor<E>,
    geom: ConvGeom,
    out_hw: (usize, usize),
) -> Tensor<E> {
    let (n, cout, ho, wo) = dims4(y.shape(), "transposed conv input");
    let (wcout, cin, kh, kw) = dims4(w.shape(), "conv weight");
    assert_eq!(cout, wcout, "transposed conv channel mismatch: input {cout}, weight {wcout}");
    let (h, wd) = out_hw;
    assert_eq!(geom.out_len(h, kh), ho, "transposed conv height inconsistent");
    assert_eq!(geom.out_len(wd, kw), wo, "transposed conv width inconsistent");
    let d = Dims {
        c: cin,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        s: geom.stride,
        p: geom.padding,
    };
    let ck = cin * kh * kw;
    let plane = ho * wo;
    let mut col = vec![E::zero(); ck * plane];
    let mut out = vec![E::zero(); n * cin * h * wd];
    for b in 0..n {
        E::gemm(
            ck,
            cout,
            plane,
            E::one(),
            (w.data(), 1, ck as isize),
            (&y.data()[b * cout * plane..(b + 1) * cout * plane], plane as isize, 1),
            E::zero(),
            (&mut col, plane as isize, 1),
        );
        col2im(&col, &d, &mut out[b * cin * h * wd..(b + 1) * cin * h * wd]);
    }
    Tensor::new(&[n, cin, h, wd], out)
}

/// Adjoint of [`conv2d`] in its weight: contracts `x` with `y` over batch and
/// output positions into a `[Cout, Cin, kh, kw]` tensor.
pub fn conv2d_weight<E: Element>(
    x: &Tensor<E>,
    y: &Tensor<E>,
    geom: ConvGeom,
    kernel: (usize, usize),
) -> Tensor<E> {
    let (n, cin, h, wd) = dims4(x.shape(), "conv input");
    let (yn, cout, ho, wo) = dims4(y.shape(), "conv output");
    assert_eq!(n, yn, "conv weight contraction batch mismatch");
    let (kh, kw) = kernel;
    assert_eq!(geom.out_len(h, kh), ho, "conv weight contraction height inconsistent");
    assert_eq!(geom.out_len(wd, kw), wo, "conv weight contraction width inconsistent");
    let d = Dims {
        c: cin,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        s: geom.stride,
        p: geom.padding,
    };
    let ck = cin * kh * kw;
    let plane = ho * wo;
    let mut col = vec![E::zero(); ck * plane];
    let mut out = vec![E::zero(); cout * ck];
    for b in 0..n {
        im2col(&x.data()[b * cin * h * wd..(b + 1) * cin * h * wd], &d, &mut col);
        E::gemm(
            cout,
            plane,
            ck,
            E::one(),
            (&y.data()[b * cout * plane..(b + 1) * cout * plane], plane as isize, 1),
            (&col, 1, plane as isize),
            E::one(),
            (&mut out, ck as isize, 1),
        );
    }
    Tensor::new(&[cout, cin, kh, kw], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, g: ConvGeom) -> Tensor<f64> {
        let (n, cin, h, wd) = dims4(x.shape(), "x");
        let (cout, _, kh, kw) = dims4(w.shape(), "w");
        let ho = g.out_len(h, kh);
        let wo = g.out_len(wd, kw);
        let mut out = vec![0.0; n * cout * ho * wo];
        for b in 0..n {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                                    let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                                    if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * cin + ci) * h + ih as usize) * wd + iw as usize]
                                        * w.data()[((co * cin + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((b * cout + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, cout, ho, wo], out)
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn pseudo(shape: &[usize], salt: u64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| {
            let v = (i as u64 + 1).wrapping_mul(2654435761).wrapping_add(salt * 97) % 1000;
            v as f64 / 500.0 - 1.0
        })
    }

    #[test]
    fn conv_matches_naive_loop() {
        let g = ConvGeom::new(2, 1);
        let x = pseudo(&[2, 3, 8, 6], 1);
        let w = pseudo(&[5, 3, 4, 4], 2);
        let fast = conv2d(&x, &w, g);
        let slow = naive_conv(&x, &w, g);
        assert_eq!(fast.shape(), &[2, 5, 4, 3]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_and_weight_are_adjoints() {
        // <y, conv(x, w)> == <convT(y, w), x> == <conv_weight(x, y), w>
        let g = ConvGeom::new(2, 1);
        let x = pseudo(&[2, 3, 8, 8], 3);
        let w = pseudo(&[4, 3, 4, 4], 4);
        let y = pseudo(&[2, 4, 4, 4], 5);
        let lhs = dot(&y, &conv2d(&x, &w, g));
        let via_x = dot(&conv2d_transpose(&y, &w, g, (8, 8)), &x);
        let via_w = dot(&conv2d_weight(&x, &y, g, (4, 4)), &w);
        assert!((lhs - via_x).abs() < 1e-10, "{lhs} vs {via_x}");
        assert!((lhs - via_w).abs() < 1e-10, "{lhs} vs {via_w}");
    }

    #[test]
    fn stride_two_halves_spatial_size() {
        let g = ConvGeom::new(2, 1);
        for size in [2usize, 4, 8, 64, 256] {
            assert_eq!(g.out_len(size, 4), size / 2);
        }
    }
}
