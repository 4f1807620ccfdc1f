//! Central finite-difference gradient checks for every layer kind, in f64.

use quadseg::neural::{
    concat, concat_backward, dropout, dropout_backward, maxpool2, maxpool2_backward, relu, relu_backward, softmax,
    softmax_ce, BatchNorm, Conv2d, Mode, Tensor4, UpConv2,
};
use quadseg::unet::{UNet, UNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-3;
pub const CASES: usize = 20;

/// `‖a−n‖ / (‖a‖+‖n‖)`; absolute when both gradients vanish (biases feeding
/// batch norm have an identically zero gradient).
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nn < 1e-7 {
        diff
    } else {
        diff / (na + nn)
    }
}

/// Central differences of `f` with respect to every entry of `v`.
pub fn numeric(v: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = v.to_vec();
    (0..v.len())
        .map(|i| {
            work[i] = v[i] + eps;
            let up = f(&work);
            work[i] = v[i] - eps;
            let down = f(&work);
            work[i] = v[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn dot(a: &Tensor4<f64>, g: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(g.data()).map(|(x, y)| x * y).sum()
}

fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::random(shape, -1.0, 1.0, rng)
}

fn with(shape: [usize; 4], data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, data.to_vec()).unwrap()
}

fn conv_case(rng: &mut ChaCha8Rng) -> f64 {
    let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let shape = [rng.gen_range(1..3), ci, rng.gen_range(2..6), rng.gen_range(2..6)];
    let x = rand_tensor(shape, rng);
    let conv = Conv2d::<f64>::new(ci, co, 3, rng);
    let conv = Conv2d::from_weights(ci, co, 3, conv.weight.value.clone(), (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let y = conv.forward(&x).unwrap();
    let g = rand_tensor(y.shape(), rng);
    let grads = conv.backward(&x, &g).unwrap();
    let nx = numeric(x.data(), EPS, |v| dot(&conv.forward(&with(shape, v)).unwrap(), &g));
    let w0 = conv.weight.value.clone();
    let nw = numeric(&w0, EPS, |v| {
        let c = Conv2d::from_weights(ci, co, 3, v.to_vec(), conv.bias.value.clone()).unwrap();
        dot(&c.forward(&x).unwrap(), &g)
    });
    let b0 = conv.bias.value.clone();
    let nb = numeric(&b0, EPS, |v| {
        let c = Conv2d::from_weights(ci, co, 3, w0.clone(), v.to_vec()).unwrap();
        dot(&c.forward(&x).unwrap(), &g)
    });
    rel_err(grads.x.data(), &nx).max(rel_err(&grads.w, &nw)).max(rel_err(&grads.b, &nb))
}

fn batchnorm_case(rng: &mut ChaCha8Rng, mode: Mode) -> f64 {
    let c = rng.gen_range(1..4);
    let shape = [rng.gen_range(1..3), c, rng.gen_range(2..5), rng.gen_range(2..5)];
    let x = rand_tensor(shape, rng);
    let mut bn = BatchNorm::<f64>::new(c);
    bn.gamma.value = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
    bn.beta.value = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    bn.running_mean = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    bn.running_var = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
    let (y, cache) = bn.forward(&x, mode).unwrap();
    let g = rand_tensor(y.shape(), rng);
    let gx = bn.backward(&cache, &g).unwrap();
    let eval = |bn: &BatchNorm<f64>, x: &Tensor4<f64>| {
        let mut b = bn.clone();
        dot(&b.forward(x, mode).unwrap().0, &g)
    };
    let nx = numeric(x.data(), EPS, |v| eval(&bn, &with(shape, v)));
    let ng = numeric(&bn.gamma.value.clone(), EPS, |v| {
        let mut b = bn.clone();
        b.gamma.value = v.to_vec();
        eval(&b, &x)
    });
    let nb = numeric(&bn.beta.value.clone(), EPS, |v| {
        let mut b = bn.clone();
        b.beta.value = v.to_vec();
        eval(&b, &x)
    });
    rel_err(gx.data(), &nx)
        .max(rel_err(&bn.gamma.grad, &ng))
        .max(rel_err(&bn.beta.grad, &nb))
}

fn relu_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..5), rng.gen_range(2..5)];
    // Keep every input clear of the kink so central differences are exact.
    let data: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| {
            let m = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    let x = with(shape, &data);
    let g = rand_tensor(shape, rng);
    let gx = relu_backward(&x, &g);
    let n = numeric(x.data(), EPS, |v| dot(&relu(&with(shape, v)), &g));
    rel_err(gx.data(), &n)
}

fn maxpool_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4)];
    // Distinct values on a coarse lattice: no window has a near-tie.
    let len: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    for i in (1..len).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = with(shape, &vals);
    let (y, arg) = maxpool2(&x).unwrap();
    let g = rand_tensor(y.shape(), rng);
    let gx = maxpool2_backward(&arg, shape, &g);
    let n = numeric(x.data(), EPS, |v| dot(&maxpool2(&with(shape, v)).unwrap().0, &g));
    rel_err(gx.data(), &n)
}

fn upconv_case(rng: &mut ChaCha8Rng) -> f64 {
    let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let shape = [rng.gen_range(1..3), ci, rng.gen_range(1..4), rng.gen_range(1..4)];
    let x = rand_tensor(shape, rng);
    let w: Vec<f64> = (0..ci * co * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let up = UpConv2::from_weights(ci, co, w.clone(), b.clone()).unwrap();
    let y = up.forward(&x).unwrap();
    let g = rand_tensor(y.shape(), rng);
    let grads = up.backward(&x, &g).unwrap();
    let nx = numeric(x.data(), EPS, |v| dot(&up.forward(&with(shape, v)).unwrap(), &g));
    let nw = numeric(&w, EPS, |v| {
        dot(&UpConv2::from_weights(ci, co, v.to_vec(), b.clone()).unwrap().forward(&x).unwrap(), &g)
    });
    let nb = numeric(&b, EPS, |v| {
        dot(&UpConv2::from_weights(ci, co, w.clone(), v.to_vec()).unwrap().forward(&x).unwrap(), &g)
    });
    rel_err(grads.x.data(), &nx).max(rel_err(&grads.w, &nw)).max(rel_err(&grads.b, &nb))
}

fn concat_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let (ca, cb) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let a = rand_tensor([n, ca, h, w], rng);
    let b = rand_tensor([n, cb, h, w], rng);
    let g = rand_tensor([n, ca + cb, h, w], rng);
    let (ga, gb) = concat_backward(&g, ca);
    let na = numeric(a.data(), EPS, |v| dot(&concat(&with(a.shape(), v), &b).unwrap(), &g));
    let nb = numeric(b.data(), EPS, |v| dot(&concat(&a, &with(b.shape(), v)).unwrap(), &g));
    rel_err(ga.data(), &na).max(rel_err(gb.data(), &nb))
}

fn dropout_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..5), rng.gen_range(2..5)];
    let x = rand_tensor(shape, rng);
    let seed = rng.gen();
    let rate = rng.gen_range(0.0..0.6);
    let (_, mask) = dropout(&x, rate, Mode::Train, seed).unwrap();
    let g = rand_tensor(shape, rng);
    let gx = dropout_backward(&mask, &g);
    let n = numeric(x.data(), EPS, |v| dot(&dropout(&with(shape, v), rate, Mode::Train, seed).unwrap().0, &g));
    rel_err(gx.data(), &n)
}

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = [rng.gen_range(1..3), 5, rng.gen_range(1..4), rng.gen_range(1..4)];
    let logits = Tensor4::random(shape, -3.0, 3.0, rng);
    let target: Vec<u8> = (0..shape[0] * shape[2] * shape[3]).map(|_| rng.gen_range(0..5)).collect();
    let weights: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..3.0)).collect();
    let ce = softmax_ce(&logits, &target, &weights).unwrap();
    let n = numeric(logits.data(), EPS, |v| softmax_ce(&with(shape, v), &target, &weights).unwrap().loss);
    rel_err(ce.grad.data(), &n)
}

fn unet_case(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = UNetConfig { depth: 2, base_channels: 4, ..UNetConfig::default() };
    let mut net = UNet::<f64>::new(cfg, rng.gen()).unwrap();
    let shape = [2, 1, 4, 4];
    let x = rand_tensor(shape, rng);
    let target: Vec<u8> = (0..2 * 16).map(|_| rng.gen_range(0..5)).collect();
    let seed = rng.gen();
    let loss = |net: &UNet<f64>, x: &Tensor4<f64>| {
        let mut n = net.clone();
        let (logits, _) = n.forward(x, Mode::Train, seed).unwrap();
        softmax_ce(&logits, &target, &[1.0; 5]).unwrap().loss
    };
    let (logits, cache) = net.forward(&x, Mode::Train, seed).unwrap();
    let ce = softmax_ce(&logits, &target, &[1.0; 5]).unwrap();
    net.zero_grad();
    let gx = net.backward(&cache, &ce.grad).unwrap();
    // Small steps keep the piecewise-linear ReLU and pooling regions fixed.
    let eps = 1e-6;
    let nx = numeric(x.data(), eps, |v| loss(&net, &with(shape, v)));
    let mut worst = rel_err(gx.data(), &nx);
    let count = net.params_mut().len();
    for pi in 0..count {
        let analytic = net.params_mut()[pi].grad.clone();
        let base = net.params_mut()[pi].value.clone();
        let numeric_g = numeric(&base, eps, |v| {
            let mut n2 = net.clone();
            n2.params_mut()[pi].value = v.to_vec();
            loss(&n2, &x)
        });
        worst = worst.max(rel_err(&analytic, &numeric_g));
    }
    worst
}

/// Worst relative error of each case, grouped by layer kind.
pub fn layer_suite(seed: u64) -> Vec<(&'static str, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        (name, (0..CASES).map(|_| f(&mut rng)).collect::<Vec<f64>>())
    };
    vec![
        run("conv3x3", &mut conv_case),
        run("batchnorm-train", &mut |r| batchnorm_case(r, Mode::Train)),
        run("batchnorm-eval", &mut |r| batchnorm_case(r, Mode::Eval)),
        run("relu", &mut relu_case),
        run("maxpool2", &mut maxpool_case),
        run("upconv2", &mut upconv_case),
        run("concat", &mut concat_case),
        run("dropout", &mut dropout_case),
        run("softmax-ce", &mut softmax_ce_case),
    ]
}

/// Whole-network check over a few seeded depth-2 networks.
pub fn network_suite(seed: u64, cases: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases).map(|_| unet_case(&mut rng)).collect()
}

/// Largest deviation of per-pixel softmax sums from 1 over random logits.
pub fn softmax_sum_deviation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let logits = Tensor4::<f32>::random([2, 5, 7, 9], -30.0, 30.0, &mut rng);
        let p = softmax(&logits);
        let hw = 63;
        for s in 0..2 {
            let plane = p.sample(s);
            for i in 0..hw {
                let sum: f64 = (0..5).map(|k| plane[k * hw + i] as f64).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    worst
}
