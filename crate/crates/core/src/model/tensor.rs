use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::Float;

/// Float type the network can run in. Training uses `f32`; gradient checks
/// instantiate the same code in `f64`.
pub trait Scalar: Float + LinalgScalar + Debug + Send + Sync + 'static {
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Channel-major (C, H, W) activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn concat(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Splits a gradient of a concatenation back into its two halves.
    pub fn split(self, c_first: usize) -> (Tensor<T>, Tensor<T>) {
        let n = c_first * self.plane();
        let mut data = self.data;
        let second = data.split_off(n);
        (
            Tensor {
                c: c_first,
                h: self.h,
                w: self.w,
                data,
            },
            Tensor {
                c: self.c - c_first,
                h: self.h,
                w: self.w,
                data: second,
            },
        )
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes the gradient wherever the (post-activation) output was not positive.
pub(crate) fn relu_backward<T: Scalar>(grad: &mut Tensor<T>, out: &Tensor<T>) {
    for (g, o) in grad.data.iter_mut().zip(&out.data) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Nearest-neighbor upsampling by two, cropped to `(h, w)`.
pub(crate) fn upsample2<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let sy = (y / 2).min(x.h - 1);
            for xx in 0..w {
                dst[y * w + xx] = src[sy * x.w + (xx / 2).min(x.w - 1)];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(grad: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        let src = &grad.data[c * grad.plane()..(c + 1) * grad.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..grad.h {
            let sy = (y / 2).min(h - 1);
            for xx in 0..grad.w {
                let i = sy * w + (xx / 2).min(w - 1);
                dst[i] = dst[i] + src[y * grad.w + xx];
            }
        }
    }
    out
}

/// Geometry of one convolution. Weights are stored `[cout, cin * k * k]`
/// followed by `cout` biases at `offset` in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub offset: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, ho: usize, wo: usize) -> Vec<T> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let n = ho * wo;
        let mut cols = vec![T::zero(); self.fan_in() * n];
        for ci in 0..self.cin {
            let src = &x.data[ci * x.plane()..(ci + 1) * x.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Tensor<T> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let n = ho * wo;
        let mut dx = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut dx.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                let d = &mut drow[ix as usize];
                                *d = *d + src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn cols<'a, T: Scalar>(&self, x: &'a Tensor<T>, ho: usize, wo: usize) -> std::borrow::Cow<'a, [T]> {
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            std::borrow::Cow::Borrowed(&x.data)
        } else {
            std::borrow::Cow::Owned(self.im2col(x, ho, wo))
        }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, params: &[T]) -> Tensor<T> {
        debug_assert_eq!(x.c, self.cin);
        let (ho, wo) = self.out_size(x.h, x.w);
        let n = ho * wo;
        let cols = self.cols(x, ho, wo);
        let wts = &params[self.offset..self.offset + self.weight_len()];
        let bias = &params[self.offset + self.weight_len()..self.offset + self.param_len()];
        let mut out = Tensor::zeros(self.cout, ho, wo);
        for (co, b) in bias.iter().enumerate() {
            out.data[co * n..(co + 1) * n].fill(*b);
        }
        let a = ArrayView2::from_shape((self.cout, self.fan_in()), wts).unwrap();
        let b = ArrayView2::from_shape((self.fan_in(), n), &cols[..]).unwrap();
        let mut c = ArrayViewMut2::from_shape((self.cout, n), &mut out.data).unwrap();
        general_mat_mul(T::one(), &a, &b, T::one(), &mut c);
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `need_input_grad`.
    pub fn backward<T: Scalar>(
        &self,
        x: &Tensor<T>,
        dout: &Tensor<T>,
        params: &[T],
        grads: &mut [T],
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (ho, wo) = (dout.h, dout.w);
        let n = ho * wo;
        let cols = self.cols(x, ho, wo);
        let dy = ArrayView2::from_shape((self.cout, n), &dout.data).unwrap();
        {
            let (gw, gb) = grads[self.offset..self.offset + self.param_len()].split_at_mut(self.weight_len());
            let b = ArrayView2::from_shape((self.fan_in(), n), &cols[..]).unwrap();
            let mut gw = ArrayViewMut2::from_shape((self.cout, self.fan_in()), gw).unwrap();
            general_mat_mul(T::one(), &dy, &b.t(), T::one(), &mut gw);
            for (co, g) in gb.iter_mut().enumerate() {
                *g = dout.data[co * n..(co + 1) * n].iter().fold(*g, |acc, v| acc + *v);
            }
        }
        if !need_input_grad {
            return None;
        }
        let wts = ArrayView2::from_shape((self.cout, self.fan_in()), &params[self.offset..self.offset + self.weight_len()]).unwrap();
        let mut dcols = vec![T::zero(); self.fan_in() * n];
        {
            let mut dc = ArrayViewMut2::from_shape((self.fan_in(), n), &mut dcols).unwrap();
            general_mat_mul(T::one(), &wts.t(), &dy, T::zero(), &mut dc);
        }
        if self.k == 1 && self.stride == 1 && self.pad == 0 {
            Some(Tensor {
                c: self.cin,
                h: x.h,
                w: x.w,
                data: dcols,
            })
        } else {
            Some(self.col2im(&dcols, x.h, x.w, ho, wo))
        }
    }
}
