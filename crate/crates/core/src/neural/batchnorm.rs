use serde::{Deserialize, Serialize};

use super::{Param, Scalar, Tensor4};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization with affine output.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Values saved by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::new(vec![T::zero(); channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, BnCache<T>)> {
        let [n, c, h, w] = x.shape();
        if c != self.channels {
            return Err(Error::Shape(format!("batch norm expects {} channels, got {c}", self.channels)));
        }
        let hw = h * w;
        let m = n * hw;
        let (mean, inv_std): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::Statistics(format!(
                        "batch statistics need at least 2 values per channel, got {m}"
                    )));
                }
                let mut means = Vec::with_capacity(c);
                let mut inv = Vec::with_capacity(c);
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    for s in 0..n {
                        sum += x.sample(s)[ch * hw..(ch + 1) * hw].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mean = sum / m as f64;
                    let mut sq = 0.0f64;
                    for s in 0..n {
                        sq += x.sample(s)[ch * hw..(ch + 1) * hw]
                            .iter()
                            .map(|v| (v.f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / m as f64;
                    self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                    let unbiased = sq / (m - 1) as f64;
                    self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
                    means.push(mean);
                    inv.push(1.0 / (var + self.epsilon).sqrt());
                }
                (means, inv)
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect(),
            ),
        };

        let mut xhat = Tensor4::zeros(x.shape());
        let mut y = Tensor4::zeros(x.shape());
        for s in 0..n {
            let xs = x.sample(s);
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                let range = ch * hw..(ch + 1) * hw;
                let xh = &mut xhat.sample_mut(s)[range.clone()];
                for (o, &v) in xh.iter_mut().zip(&xs[range.clone()]) {
                    *o = T::of((v.f64() - mu) * is);
                }
                let xh = &xhat.sample(s)[range.clone()];
                for (o, &v) in y.sample_mut(s)[range].iter_mut().zip(xh) {
                    *o = g * v + b;
                }
            }
        }
        Ok((y, BnCache { xhat, inv_std, mode }))
    }

    /// Input gradient; accumulates `gamma`/`beta` gradients.
    pub fn backward(&mut self, cache: &BnCache<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [n, c, h, w] = grad_out.shape();
        if cache.xhat.shape() != grad_out.shape() {
            return Err(Error::Shape("batch norm grad_out does not match cached input".into()));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut gx = Tensor4::zeros(grad_out.shape());
        for ch in 0..c {
            let range = ch * hw..(ch + 1) * hw;
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for s in 0..n {
                let g = &grad_out.sample(s)[range.clone()];
                let xh = &cache.xhat.sample(s)[range.clone()];
                for (a, b) in g.iter().zip(xh) {
                    sum_g += a.f64();
                    sum_gx += a.f64() * b.f64();
                }
            }
            self.gamma.grad[ch] += T::of(sum_gx);
            self.beta.grad[ch] += T::of(sum_g);
            let gamma = self.gamma.value[ch].f64();
            let is = cache.inv_std[ch];
            for s in 0..n {
                let g = &grad_out.sample(s)[range.clone()];
                let xh = &cache.xhat.sample(s)[range.clone()];
                let out = &mut gx.sample_mut(s)[range.clone()];
                match cache.mode {
                    Mode::Train => {
                        let scale = gamma * is / m;
                        for ((o, a), b) in out.iter_mut().zip(g).zip(xh) {
                            *o = T::of(scale * (m * a.f64() - sum_g - b.f64() * sum_gx));
                        }
                    }
                    Mode::Eval => {
                        for (o, a) in out.iter_mut().zip(g) {
                            *o = T::of(gamma * is * a.f64());
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Tensor4::<f64>::random([3, 2, 4, 5], -3.0, 7.0, &mut rng);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.epsilon = 0.0;
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.sample(s)[ch * 20..(ch + 1) * 20].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::<f64>::random([2, 3, 2, 2], -1.0, 1.0, &mut rng);
        let mut bn = BatchNorm::<f64>::new(3);
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn single_value_channel_fails_in_train_mode() {
        let mut bn = BatchNorm::<f32>::new(1);
        let x = Tensor4::zeros([1, 1, 1, 1]);
        assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::Statistics(_))));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_track_batch_statistics() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.momentum = 1.0;
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 2.5).abs() < 1e-12);
        assert!((bn.running_var[0] - 5.0 / 3.0).abs() < 1e-12);
    }
}
