use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

/// Loss value, softmax probabilities and the gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    pub loss: f64,
    pub probs: Tensor4<T>,
    pub grad: Tensor4<T>,
}

/// Per-pixel softmax over channels, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    let mut probs = Tensor4::zeros(logits.shape());
    let mut z = vec![0.0f64; c];
    for s in 0..n {
        let l = logits.sample(s);
        let p = probs.sample_mut(s);
        for i in 0..hw {
            let mut max = f64::NEG_INFINITY;
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = l[k * hw + i].f64();
                max = max.max(*zk);
            }
            let mut sum = 0.0;
            for zk in z.iter_mut() {
                *zk = (*zk - max).exp();
                sum += *zk;
            }
            for (k, zk) in z.iter().enumerate() {
                p[k * hw + i] = T::of(zk / sum);
            }
        }
    }
    probs
}

/// Class-weighted mean pixel cross-entropy:
/// `loss = (1/P) Σ_pixels w[t] · (-ln p_t)` with `P` the pixel count, so the
/// logit gradient is `(p - onehot(t)) · w[t] / P`.
pub fn softmax_ce<T: Scalar>(logits: &Tensor4<T>, target: &[u8], class_weights: &[f64]) -> Result<CrossEntropy<T>> {
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    if target.len() != n * hw {
        return Err(Error::Shape(format!("target has {} pixels, logits {}", target.len(), n * hw)));
    }
    if class_weights.len() != c {
        return Err(Error::Shape(format!("{} class weights for {c} classes", class_weights.len())));
    }
    if let Some(&t) = target.iter().find(|&&t| t as usize >= c) {
        return Err(Error::Domain(format!("target label {t} >= {c} classes")));
    }
    let probs = softmax(logits);
    let npix = (n * hw) as f64;
    let mut grad = Tensor4::zeros(logits.shape());
    let mut loss = 0.0f64;
    for s in 0..n {
        let p = probs.sample(s);
        let g = grad.sample_mut(s);
        for i in 0..hw {
            let t = target[s * hw + i] as usize;
            let wt = class_weights[t];
            // Recompute the log-probability in f64 so saturated pixels keep precision.
            let pt = p[t * hw + i].f64().max(1e-300);
            loss += -wt * pt.ln();
            for k in 0..c {
                let onehot = if k == t { 1.0 } else { 0.0 };
                g[k * hw + i] = T::of((p[k * hw + i].f64() - onehot) * wt / npix);
            }
        }
    }
    Ok(CrossEntropy {
        loss: loss / npix,
        probs,
        grad,
    })
}
