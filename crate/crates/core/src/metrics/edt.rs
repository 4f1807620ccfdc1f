//! Exact squared Euclidean distance transform on anisotropic grids via
//! separable lower envelopes of parabolas.

/// Squared distance in mm from every voxel to the nearest feature voxel;
/// `f64::INFINITY` where there are no features. `dims` has two or three
/// entries, x fastest.
pub fn squared_edt(features: &[bool], dims: &[usize], spacing: &[f64]) -> Vec<f64> {
    let mut f: Vec<f64> = features.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let mut stride = 1;
    for axis in 0..dims.len() {
        let n = dims[axis];
        let total = f.len();
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        let mut scratch = Envelope::new(n);
        for start in 0..total {
            // `start` enumerates line origins: its coordinate along `axis` must be zero.
            if (start / stride) % n != 0 {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = f[start + i * stride];
            }
            scratch.transform(&line, spacing[axis], &mut out);
            for (i, v) in out.iter().enumerate() {
                f[start + i * stride] = *v;
            }
        }
        stride *= n;
    }
    f
}

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn transform(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let w = s * s;
        self.sites.clear();
        self.bounds.clear();
        let cross = |p: usize, q: usize| -> f64 {
            let (p2, q2) = ((p * p) as f64, (q * q) as f64);
            ((f[q] + w * q2) - (f[p] + w * p2)) / (2.0 * w * (q as f64 - p as f64))
        };
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                match self.sites.last() {
                    None => {
                        self.sites.push(q);
                        self.bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&p) => {
                        let x = cross(p, q);
                        if x <= *self.bounds.last().expect("bound per site") {
                            self.sites.pop();
                            self.bounds.pop();
                        } else {
                            self.sites.push(q);
                            self.bounds.push(x);
                            break;
                        }
                    }
                }
            }
        }
        if self.sites.is_empty() {
            out.iter_mut().for_each(|v| *v = f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while k + 1 < self.sites.len() && self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            // Evaluate both neighbours of the boundary so a rounding slip in
            // the intersection can never select the larger parabola.
            let eval = |p: usize| {
                let d = (q as f64 - p as f64) * s;
                f[p] + d * d
            };
            let mut best = eval(self.sites[k]);
            if k + 1 < self.sites.len() {
                best = best.min(eval(self.sites[k + 1]));
            }
            *o = best;
        }
    }
}
