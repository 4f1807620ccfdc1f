use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{Mode, Param, Scalar, Tensor4};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

/// 2×2 max pooling with stride 2. Also returns, per output value, the flat
/// index of the winning input element (first maximum in row-major order).
pub fn maxpool2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    let out = y.data_mut();
    let mut o = 0;
    for s in 0..n {
        for ch in 0..c {
            for yy in 0..oh {
                for xx in 0..ow {
                    let base = x.index(s, ch, 2 * yy, 2 * xx);
                    let mut best = base;
                    for idx in [base + 1, base + w, base + w + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out[o] = src[best];
                    arg.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Scalar>(argmax: &[usize], input_shape: [usize; 4], grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut gx = Tensor4::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    gx
}

/// Channel concatenation `[a, b]`.
pub fn concat<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Shape(format!("concat of {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for s in 0..n {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor4::from_vec([n, ca + cb, h, w], data)
}

/// Splits a concatenated gradient back into its first `ca` channels and the rest.
pub fn concat_backward<T: Scalar>(grad: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = grad.shape();
    let hw = h * w;
    let mut ga = Vec::with_capacity(n * ca * hw);
    let mut gb = Vec::with_capacity(n * (c - ca) * hw);
    for s in 0..n {
        let g = grad.sample(s);
        ga.extend_from_slice(&g[..ca * hw]);
        gb.extend_from_slice(&g[ca * hw..]);
    }
    (
        Tensor4::from_vec([n, ca, h, w], ga).expect("split shape"),
        Tensor4::from_vec([n, c - ca, h, w], gb).expect("split shape"),
    )
}

/// Inverted dropout. In train mode each value is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is the
/// identity. Returns the per-element multiplier used, for the backward pass.
pub fn dropout<T: Scalar>(x: &Tensor4<T>, rate: f64, mode: Mode, seed: u64) -> Result<(Tensor4<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("dropout rate {rate} outside [0,1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), vec![T::one(); x.data().len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.data().len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor4::from_vec(x.shape(), data)?, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &[T], grad_out: &Tensor4<T>) -> Tensor4<T> {
    let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor4::from_vec(grad_out.shape(), data).expect("same shape")
}

/// 2×2 transposed convolution with stride 2 ("up-convolution").
/// Weights are laid out (c_in, c_out, 2, 2).
#[derive(Clone, Debug, PartialEq)]
pub struct UpConv2<T = f32> {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct UpConvGrads<T> {
    pub x: Tensor4<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> UpConv2<T> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / c_in as f64).sqrt()).unwrap();
        Self {
            c_in,
            c_out,
            weight: Param::new((0..c_in * c_out * 4).map(|_| T::of(normal.sample(rng))).collect()),
            bias: Param::new(vec![T::zero(); c_out]),
        }
    }

    pub fn from_weights(c_in: usize, c_out: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != c_in * c_out * 4 || bias.len() != c_out {
            return Err(Error::Shape(format!("up-conv weights do not match ({c_in}, {c_out}, 2, 2)")));
        }
        Ok(Self {
            c_in,
            c_out,
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Weights for kernel tap `(a, b)` as a (c_in × c_out) matrix.
    fn tap(&self, a: usize, b: usize) -> Vec<T> {
        let mut m = Vec::with_capacity(self.c_in * self.c_out);
        for ci in 0..self.c_in {
            for co in 0..self.c_out {
                m.push(self.weight.value[((ci * self.c_out + co) * 2 + a) * 2 + b]);
            }
        }
        m
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [n, c, h, w] = x.shape();
        if c != self.c_in {
            return Err(Error::Shape(format!("up-conv expects {} channels, got {c}", self.c_in)));
        }
        let hw = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = Tensor4::zeros([n, self.c_out, oh, ow]);
        let mut part = vec![T::zero(); self.c_out * hw];
        for a in 0..2 {
            for b in 0..2 {
                let tap = self.tap(a, b);
                for s in 0..n {
                    part.iter_mut().for_each(|v| *v = T::zero());
                    // part[c_out × hw] = tapᵀ · x
                    gemm_tn(self.c_in, hw, self.c_out, &tap, x.sample(s), &mut part);
                    let out = y.sample_mut(s);
                    for co in 0..self.c_out {
                        let bias = self.bias.value[co];
                        for i in 0..h {
                            for j in 0..w {
                                out[(co * oh + 2 * i + a) * ow + 2 * j + b] = part[co * hw + i * w + j] + bias;
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<UpConvGrads<T>> {
        let [n, _, h, w] = x.shape();
        let (oh, ow) = (2 * h, 2 * w);
        if grad_out.shape() != [n, self.c_out, oh, ow] {
            return Err(Error::Shape(format!("up-conv grad_out shape {:?}", grad_out.shape())));
        }
        let hw = h * w;
        let mut gx = Tensor4::zeros(x.shape());
        let mut gw = vec![T::zero(); self.weight.len()];
        let mut gb = vec![T::zero(); self.c_out];
        let mut g_tap = vec![T::zero(); self.c_out * hw];
        for s in 0..n {
            let g = grad_out.sample(s);
            for (co, b) in gb.iter_mut().enumerate() {
                *b += g[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum::<T>();
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                let tap = self.tap(a, b);
                let mut gtap = vec![T::zero(); self.c_in * self.c_out];
                for s in 0..n {
                    let g = grad_out.sample(s);
                    for co in 0..self.c_out {
                        for i in 0..h {
                            for j in 0..w {
                                g_tap[co * hw + i * w + j] = g[(co * oh + 2 * i + a) * ow + 2 * j + b];
                            }
                        }
                    }
                    // dX[c_in × hw] += tap[c_in × c_out] · g_tap
                    gemm_nn(self.c_in, hw, self.c_out, &tap, &g_tap, gx.sample_mut(s));
                    // dTap[c_in × c_out] += x · g_tapᵀ
                    gemm_nt(self.c_in, hw, self.c_out, x.sample(s), &g_tap, &mut gtap);
                }
                for ci in 0..self.c_in {
                    for co in 0..self.c_out {
                        gw[((ci * self.c_out + co) * 2 + a) * 2 + b] += gtap[ci * self.c_out + co];
                    }
                }
            }
        }
        Ok(UpConvGrads { x: gx, w: gw, b: gb })
    }

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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![-1.0f32, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn maxpool_picks_max_and_index() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        assert!(matches!(maxpool2(&Tensor4::<f32>::zeros([1, 1, 3, 2])), Err(Error::Shape(_))));
    }

    #[test]
    fn upconv_doubles_and_matches_definition() {
        let w: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 0.3).sin()).collect();
        let up = UpConv2::from_weights(2, 3, w.clone(), vec![0.5, -0.5, 0.0]).unwrap();
        let x = Tensor4::from_vec([1, 2, 2, 3], (0..12).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
        let y = up.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 3, 4, 6]);
        for co in 0..3 {
            for oy in 0..4 {
                for ox in 0..6 {
                    let (i, a, j, b) = (oy / 2, oy % 2, ox / 2, ox % 2);
                    let mut e = up.bias.value[co];
                    for ci in 0..2 {
                        e += x.at(0, ci, i, j) * w[((ci * 3 + co) * 2 + a) * 2 + b];
                    }
                    assert!((y.at(0, co, oy, ox) - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn concat_round_trip() {
        let a = Tensor4::from_vec([2, 1, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor4::from_vec([2, 2, 1, 2], vec![5.0f32, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = concat(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let (ga, gb) = concat_backward(&c, 1);
        assert_eq!((ga, gb), (a, b));
        assert!(concat(&Tensor4::<f32>::zeros([1, 1, 2, 2]), &Tensor4::zeros([1, 1, 2, 3])).is_err());
    }

    #[test]
    fn dropout_zero_rate_and_eval_are_identity() {
        let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f32, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, Mode::Train, 9).unwrap(), dropout(&x, 0.5, Mode::Train, 9).unwrap());
    }

    #[test]
    fn dropout_statistics() {
        let n = 1_000_000;
        let x = Tensor4::from_vec([1, 1, 1000, 1000], vec![1.0f64; n]).unwrap();
        let (y, _) = dropout(&x, 0.2, Mode::Train, 42).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((survivors - 0.8).abs() <= 0.002, "survivor fraction {survivors}");
        assert!((mean - 1.0).abs() <= 0.005, "mean {mean}");
    }
}
