use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{Param, Scalar, Tensor4};
use crate::error::{Error, Result};

/// Zero-padded "same" convolution with an odd square kernel (1×1 or 3×3).
/// Weights are laid out (c_out, c_in, k, k).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub x: Tensor4<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal weights, zero bias.
    pub fn new(c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let fan_in = (c_in * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let weight = (0..c_out * c_in * k * k).map(|_| T::of(normal.sample(rng))).collect();
        Self {
            c_in,
            c_out,
            k,
            weight: Param::new(weight),
            bias: Param::new(vec![T::zero(); c_out]),
        }
    }

    pub fn from_weights(c_in: usize, c_out: usize, k: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if k % 2 == 0 || weight.len() != c_out * c_in * k * k || bias.len() != c_out {
            return Err(Error::Shape(format!(
                "conv weights {} / bias {} do not match ({c_out}, {c_in}, {k}, {k})",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            c_in,
            c_out,
            k,
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.c_in {
            return Err(Error::Shape(format!("conv expects {} input channels, got {}", self.c_in, x.c())));
        }
        Ok(())
    }

    /// Patch matrix of one sample: (c_in·k·k) rows × (h·w) columns.
    fn im2col(&self, x: &[T], h: usize, w: usize, col: &mut Vec<T>) {
        let k = self.k;
        let r = (k / 2) as isize;
        let hw = h * w;
        col.clear();
        col.resize(self.c_in * k * k * hw, T::zero());
        for c in 0..self.c_in {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - r;
                    let dx = kx as isize - r;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        let src = &plane[sy as usize * w..][..w];
                        let s0 = (x0 as isize + dx) as usize;
                        row[y * w + x0..y * w + x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, out: &mut [T]) {
        let k = self.k;
        let r = (k / 2) as isize;
        let hw = h * w;
        for c in 0..self.c_in {
            let plane = &mut out[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                    let dy = ky as isize - r;
                    let dx = kx as isize - r;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        let d0 = sy as usize * w + (x0 as isize + dx) as usize;
                        let dst = &mut plane[d0..d0 + (x1 - x0)];
                        for (d, &v) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let kk = self.c_in * self.k * self.k;
        let mut y = Tensor4::zeros([n, self.c_out, h, w]);
        let mut col = Vec::new();
        for s in 0..n {
            let out = y.sample_mut(s);
            for (o, b) in self.bias.value.iter().enumerate() {
                out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
            }
            let input = x.sample(s);
            if self.k == 1 {
                gemm_nn(self.c_out, hw, kk, &self.weight.value, input, out);
            } else {
                self.im2col(input, h, w, &mut col);
                gemm_nn(self.c_out, hw, kk, &self.weight.value, &col, out);
            }
        }
        Ok(y)
    }

    /// Gradients of a scalar loss with respect to input, weights and bias,
    /// given its gradient with respect to the output.
    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<ConvGrads<T>> {
        self.check(x)?;
        let [n, _, h, w] = x.shape();
        if grad_out.shape() != [n, self.c_out, h, w] {
            return Err(Error::Shape(format!("conv grad_out shape {:?}", grad_out.shape())));
        }
        let hw = h * w;
        let kk = self.c_in * self.k * self.k;
        let mut gx = Tensor4::zeros(x.shape());
        let mut gw = vec![T::zero(); self.weight.len()];
        let mut gb = vec![T::zero(); self.c_out];
        let mut col = Vec::new();
        let mut gcol = vec![T::zero(); kk * hw];
        for s in 0..n {
            let g = grad_out.sample(s);
            for (o, b) in gb.iter_mut().enumerate() {
                *b += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
            if self.k == 1 {
                gemm_nt(self.c_out, hw, kk, g, x.sample(s), &mut gw);
                gemm_tn(self.c_out, hw, kk, &self.weight.value, g, gx.sample_mut(s));
            } else {
                self.im2col(x.sample(s), h, w, &mut col);
                gemm_nt(self.c_out, hw, kk, g, &col, &mut gw);
                gcol.iter_mut().for_each(|v| *v = T::zero());
                gemm_tn(self.c_out, hw, kk, &self.weight.value, g, &mut gcol);
                self.col2im(&gcol, h, w, gx.sample_mut(s));
            }
        }
        Ok(ConvGrads { x: gx, w: gw, b: gb })
    }

    /// Runs [`backward`](Self::backward), accumulates parameter gradients and
    /// returns the input gradient.
    pub fn backward_accumulate(&mut self, x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.backward(x, grad_out)?;
        for (a, b) in self.weight.grad.iter_mut().zip(&g.w) {
            *a += *b;
        }
        for (a, b) in self.bias.grad.iter_mut().zip(&g.b) {
            *a += *b;
        }
        Ok(g.x)
    }
}
