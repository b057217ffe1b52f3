//! Central finite differences against the analytic backward pass, in f64.
//! Each check returns the worst relative error over its random cases.

#![allow(dead_code)]

use nuclick_core::BinaryMask;
use nuclick_net::kernels::ConvGeom;
use nuclick_net::{loss, weight_map, LossOptions, Mode, Network, NetworkConfig, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
pub const TOL: f64 = 1e-5;
pub const CASES: u64 = 20;

fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 { diff } else { diff / na.max(nb) }
}

/// Builds a graph over `leaves`, contracts its output with a fixed random
/// tensor and checks every leaf gradient.
fn check<G>(rng: &mut ChaCha8Rng, mut leaves: Vec<Tensor<f64>>, graph: G) -> f64
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let run = |leaves: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.input(t.clone(), true)).collect();
        let out = graph(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = run(&leaves);
    let r = random(rng, tape.value(out).shape());
    let objective = |t: &Tensor<f64>| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
    let grads = tape.backward(out, r.clone()).unwrap();
    let mut worst = 0.0f64;
    for (li, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; leaves[li].len()]);
        let mut numeric = vec![0.0; leaves[li].len()];
        for j in 0..leaves[li].len() {
            let orig = leaves[li].data()[j];
            leaves[li].data_mut()[j] = orig + H;
            let (t, _, o) = run(&leaves);
            let plus = objective(t.value(o));
            leaves[li].data_mut()[j] = orig - H;
            let (t, _, o) = run(&leaves);
            let minus = objective(t.value(o));
            leaves[li].data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

pub fn conv() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let n = rng.random_range(1..=2);
        let hw = rng.random_range(3..=6);
        let k = [1, 3][rng.random_range(0..2)];
        let dilation = rng.random_range(1..=2);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=dilation * (k - 1));
        let geom = ConvGeom { k, stride, dilation, pad };
        if geom.out_len(hw).is_none() {
            continue;
        }
        let leaves = vec![random(&mut rng, [n, c, hw, hw]), random(&mut rng, [o, c, k, k]), random(&mut rng, [o, 1, 1, 1])];
        worst = worst.max(check(&mut rng, leaves, move |t, v| t.conv(v[0], v[1], Some(v[2]), geom).unwrap()));
    }
    worst
}

pub fn up2() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let c = rng.random_range(1..=3);
        let o = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let leaves = vec![random(&mut rng, [2, c, h, w]), random(&mut rng, [c, o, 2, 2]), random(&mut rng, [o, 1, 1, 1])];
        worst = worst.max(check(&mut rng, leaves, |t, v| t.up2(v[0], v[1], Some(v[2])).unwrap()));
    }
    worst
}

pub fn pool_and_activations() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let c = rng.random_range(1..=3);
        let hw = 2 * rng.random_range(1..=3);
        let leaves = vec![random(&mut rng, [2, c, hw, hw])];
        worst = worst.max(check(&mut rng, leaves.clone(), |t, v| t.maxpool2(v[0]).unwrap()));
        worst = worst.max(check(&mut rng, leaves.clone(), |t, v| t.relu(v[0])));
        worst = worst.max(check(&mut rng, leaves, |t, v| t.sigmoid(v[0])));
    }
    worst
}

pub fn add_and_concat() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let hw = rng.random_range(1..=5);
        let (c1, c2) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let leaves = vec![random(&mut rng, [2, c1, hw, hw]), random(&mut rng, [2, c2, hw, hw]), random(&mut rng, [2, c1, hw, hw])];
        worst = worst.max(check(&mut rng, leaves, |t, v| {
            let s = t.add(v[0], v[2]).unwrap();
            // reuse a leaf twice so gradients accumulate
            t.concat(&[s, v[1], v[0]]).unwrap()
        }));
    }
    worst
}

pub fn batchnorm() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let c = rng.random_range(1..=3);
        let hw = rng.random_range(2..=4);
        let shape = [2, c, hw, hw];
        let leaves = vec![random(&mut rng, shape), random(&mut rng, [c, 1, 1, 1]), random(&mut rng, [c, 1, 1, 1])];
        worst = worst.max(check(&mut rng, leaves.clone(), |t, v| t.batchnorm_train(v[0], v[1], v[2]).unwrap().0));
        let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        worst = worst.max(check(&mut rng, leaves, move |t, v| {
            t.batchnorm_eval(v[0], v[1], v[2], &mean, &var).unwrap()
        }));
    }
    worst
}

pub fn loss_fn() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let (w, h) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let n = w * h;
        let mut g = BinaryMask::new(w, h);
        let mut other = BinaryMask::new(w, h);
        g.data_mut()[rng.random_range(0..n)] = true;
        for i in 0..n {
            match rng.random_range(0..3) {
                0 => g.data_mut()[i] = true,
                1 if !g.data()[i] => other.data_mut()[i] = true,
                _ => {}
            }
        }
        let wm = weight_map(&g, &other).unwrap();
        let gf: Vec<f64> = g.data().iter().map(|&b| f64::from(u8::from(b))).collect();
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        for factor_two in [false, true] {
            let opts = LossOptions { dice_factor_two: factor_two };
            let (_, analytic) = loss(&p, &gf, wm.data(), opts).unwrap();
            let mut numeric = vec![0.0; n];
            for j in 0..n {
                let orig = p[j];
                p[j] = orig + H;
                let plus = loss(&p, &gf, wm.data(), opts).unwrap().0.total();
                p[j] = orig - H;
                let minus = loss(&p, &gf, wm.data(), opts).unwrap().0.total();
                p[j] = orig;
                numeric[j] = (plus - minus) / (2.0 * H);
            }
            worst = worst.max(rel_err(&analytic, &numeric));
        }
    }
    worst
}

fn tiny_config(rng: &mut ChaCha8Rng) -> NetworkConfig {
    let depth = rng.random_range(1..=2);
    NetworkConfig {
        base_width: 2,
        depth,
        ms_block_levels: if rng.random_bool(0.5) { vec![0] } else { vec![] },
        ms_dilations: vec![1, 2],
        patch_size: 8,
        ..NetworkConfig::default()
    }
}

/// Whole network in training mode: input and every parameter.
pub fn network() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let cfg = tiny_config(&mut rng);
        let mut net: Network<f64> = Network::build(cfg.clone(), &mut rng).unwrap();
        let mut x = random(&mut rng, [2, 5, 8, 8]);
        let objective_of = |net: &Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>| {
            let f = net.forward(x.clone(), Mode::Train, false).unwrap();
            f.tape.value(f.output).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let f = net.forward(x.clone(), Mode::Train, true).unwrap();
        let r = random(&mut rng, f.tape.value(f.output).shape());
        let grads = f.tape.backward(f.output, r.clone()).unwrap();
        let dx = grads.get(f.input).unwrap().data().to_vec();
        let param_grads = f.tape.param_grads(&grads);

        let mut numeric = vec![0.0; x.len()];
        for j in 0..x.len() {
            let orig = x.data()[j];
            x.data_mut()[j] = orig + H;
            let plus = objective_of(&net, &x, &r);
            x.data_mut()[j] = orig - H;
            let minus = objective_of(&net, &x, &r);
            x.data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * H);
        }
        worst = worst.max(rel_err(&dx, &numeric));

        for (slot, g) in param_grads {
            let mut numeric = vec![0.0; g.len()];
            for j in 0..g.len() {
                let orig = net.tensors()[slot].data()[j];
                net.tensors_mut()[slot].data_mut()[j] = orig + H;
                let plus = objective_of(&net, &x, &r);
                net.tensors_mut()[slot].data_mut()[j] = orig - H;
                let minus = objective_of(&net, &x, &r);
                net.tensors_mut()[slot].data_mut()[j] = orig;
                numeric[j] = (plus - minus) / (2.0 * H);
            }
            worst = worst.max(rel_err(g.data(), &numeric));
        }
    }
    worst
}
