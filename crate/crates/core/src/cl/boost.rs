use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Decision stump voting `polarity` when `x[f] > θ` and `-polarity` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub f: usize,
    #[serde(rename = "θ")]
    pub theta: f32,
    pub polarity: i8,
    #[serde(rename = "α")]
    pub alpha: f64,
}

impl Stump {
    pub fn vote(&self, x: &[f32]) -> f64 {
        if x[self.f] > self.theta {
            self.polarity as f64
        } else {
            -(self.polarity as f64)
        }
    }
}

/// One-vs-rest boosted ensemble for one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub label: u8,
    /// Constant vote; nonzero only for a label that was always or never
    /// present in the training pool.
    pub bias: f64,
    pub stumps: Vec<Stump>,
}

impl Ensemble {
    /// Vote-weighted margin scaled into [-1, 1].
    pub fn score(&self, x: &[f32]) -> f64 {
        let total: f64 = self.bias.abs() + self.stumps.iter().map(|s| s.alpha).sum::<f64>();
        if total == 0.0 {
            return 0.0;
        }
        (self.bias + self.stumps.iter().map(|s| s.alpha * s.vote(x)).sum::<f64>()) / total
    }
}

/// Feature rows quantized against per-feature quantile thresholds.
pub struct BinnedPool {
    pub n: usize,
    pub thresholds: Vec<Vec<f32>>,
    /// Feature-major: `bins[f * n + i]` counts the thresholds below sample `i`.
    bins: Vec<u8>,
}

impl BinnedPool {
    /// `rows` holds `n` rows of `n_features` values.
    pub fn new(rows: &[f32], n_features: usize, n_thresholds: usize) -> Self {
        let n = rows.len() / n_features;
        let per_feature: Vec<(Vec<f32>, Vec<u8>)> = (0..n_features)
            .into_par_iter()
            .map(|f| {
                let mut col: Vec<f32> = (0..n).map(|i| rows[i * n_features + f]).collect();
                let values = col.clone();
                col.sort_by(f32::total_cmp);
                let mut th: Vec<f32> = (1..=n_thresholds)
                    .map(|j| col[(j * n / (n_thresholds + 1)).min(n - 1)])
                    .collect();
                th.dedup();
                let bins = values.iter().map(|&v| th.partition_point(|&t| t < v) as u8).collect();
                (th, bins)
            })
            .collect();
        let mut thresholds = Vec::with_capacity(n_features);
        let mut bins = Vec::with_capacity(n * n_features);
        for (t, b) in per_feature {
            thresholds.push(t);
            bins.extend(b);
        }
        Self { n, thresholds, bins }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n..(f + 1) * self.n]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoostTrace {
    pub errors: Vec<f64>,
    pub weight_sums: Vec<f64>,
    /// `Σ_i exp(-y_i F_t(x_i)) / n` after each round.
    pub exp_loss: Vec<f64>,
}

const EPS_FLOOR: f64 = 1e-10;

/// Discrete AdaBoost with stumps on the pool's thresholds.
pub fn adaboost(pool: &BinnedPool, targets: &[bool], label: u8, rounds: usize) -> (Ensemble, BoostTrace) {
    let n = pool.n;
    let positives = targets.iter().filter(|&&t| t).count();
    let mut trace = BoostTrace::default();
    if positives == 0 || positives == n {
        let bias = if positives == n { 1.0 } else { -1.0 };
        return (Ensemble { label, bias, stumps: Vec::new() }, trace);
    }
    let y: Vec<f64> = targets.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect();
    let mut w = vec![1.0 / n as f64; n];
    let mut margin = vec![0.0f64; n];
    let mut stumps = Vec::new();
    for _ in 0..rounds {
        let candidates: Vec<(f64, usize, usize, i8)> = (0..pool.thresholds.len())
            .into_par_iter()
            .map(|f| best_split(pool, f, &w, targets))
            .collect();
        let mut best = candidates[0];
        for c in &candidates[1..] {
            if c.0 < best.0 {
                best = *c;
            }
        }
        let (err, f, j, polarity) = best;
        if err >= 0.5 - 1e-6 && !stumps.is_empty() {
            break;
        }
        let e = err.max(EPS_FLOOR);
        let alpha = (0.5 * ((1.0 - e) / e).ln()).max(0.0);
        let stump = Stump {
            f,
            theta: pool.thresholds[f][j],
            polarity,
            alpha,
        };
        let col = pool.column(f);
        let mut sum = 0.0;
        for i in 0..n {
            let h = if col[i] as usize > j { polarity as f64 } else { -(polarity as f64) };
            w[i] *= (-alpha * y[i] * h).exp();
            margin[i] += alpha * h;
            sum += w[i];
        }
        w.iter_mut().for_each(|v| *v /= sum);
        trace.errors.push(err);
        trace.weight_sums.push(w.iter().sum());
        trace.exp_loss.push(y.iter().zip(&margin).map(|(yi, m)| (-yi * m).exp()).sum::<f64>() / n as f64);
        stumps.push(stump);
        if err >= 0.5 - 1e-6 {
            break;
        }
    }
    (Ensemble { label, bias: 0.0, stumps }, trace)
}

/// Lowest weighted error over thresholds and polarities of one feature:
/// `(error, feature, threshold index, polarity)`.
fn best_split(pool: &BinnedPool, f: usize, w: &[f64], targets: &[bool]) -> (f64, usize, usize, i8) {
    let nt = pool.thresholds[f].len();
    let mut pos = vec![0.0f64; nt + 1];
    let mut neg = vec![0.0f64; nt + 1];
    for ((&b, &wi), &t) in pool.column(f).iter().zip(w).zip(targets) {
        if t {
            pos[b as usize] += wi;
        } else {
            neg[b as usize] += wi;
        }
    }
    let total_neg: f64 = neg.iter().sum();
    let total: f64 = total_neg + pos.iter().sum::<f64>();
    let mut best = (f64::INFINITY, f, 0, 1i8);
    // Positive polarity predicts +1 for bins above j.
    let (mut pos_below, mut neg_below) = (0.0, 0.0);
    for j in 0..nt {
        pos_below += pos[j];
        neg_below += neg[j];
        let err = pos_below + (total_neg - neg_below);
        for (e, p) in [(err, 1i8), (total - err, -1i8)] {
            if e < best.0 {
                best = (e, f, j, p);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_closed_form() {
        let e: f64 = 0.25;
        assert!((0.5 * ((1.0 - e) / e).ln() - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!((0.5 * 3f64.ln() - 0.5493).abs() < 1e-4);
    }

    #[test]
    fn separable_toy_reaches_zero_error() {
        // Target is x0 > 0.5 but the second feature is a noisy decoy.
        let xs: Vec<f32> = (0..40).flat_map(|i| [i as f32 / 40.0, ((i * 7) % 11) as f32]).collect();
        let targets: Vec<bool> = (0..40).map(|i| i as f32 / 40.0 > 0.5).collect();
        let pool = BinnedPool::new(&xs, 2, 32);
        let (ens, trace) = adaboost(&pool, &targets, 1, 10);
        assert!(!ens.stumps.is_empty());
        let wrong = (0..40).filter(|&i| (ens.score(&xs[2 * i..2 * i + 2]) > 0.0) != targets[i]).count();
        assert_eq!(wrong, 0);
        assert!(trace.weight_sums.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn single_class_pool_is_trivial() {
        let pool = BinnedPool::new(&[1.0, 2.0, 3.0], 1, 32);
        let (ens, _) = adaboost(&pool, &[true, true, true], 2, 5);
        assert!(ens.stumps.is_empty());
        assert_eq!(ens.score(&[0.0]), 1.0);
    }
}
