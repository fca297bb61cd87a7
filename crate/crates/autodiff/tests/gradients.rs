//! Every primitive against central finite differences (step 1e-5, f64).

use latentmap_autodiff::gradcheck::check_gradients;
use latentmap_autodiff::{Graph, NormMode, Result, Var};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 100;
const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Inputs = Vec<(Vec<f64>, Vec<usize>)>;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so kinks at 0 stay further than the FD step.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect()
}

/// Distinct values with gaps far wider than the FD step (for max-pool ties).
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.03 - 0.9).collect();
    v.shuffle(rng);
    v
}

/// `sum(out * w)` with a fixed random projection `w`, so non-scalar ops get a scalar root.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let shape = g.shape(out).to_vec();
    let w = g.constant(uniform(&mut rng, g.value(out).len()), &shape)?;
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn run<S, B>(name: &str, setup: S, build: B)
where
    S: Fn(&mut ChaCha8Rng) -> (Inputs, u64),
    B: Fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>,
{
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial * 7919 + name.len() as u64);
        let (inputs, aux) = setup(&mut rng);
        for (v, s) in &inputs {
            assert!(v.len() <= 64, "{name}: input {s:?} too large");
        }
        let report = check_gradients(&inputs, STEP, |g, leaves| {
            let out = build(g, leaves, aux)?;
            if g.shape(out) == [1] { Ok(out) } else { project(g, out, trial) }
        })
        .unwrap_or_else(|e| panic!("{name} trial {trial}: {e}"));
        worst = worst.max(report.max_rel_error());
        assert!(
            report.max_rel_error() < TOL,
            "{name} trial {trial}: rel err {} (analytic {:?}, numeric {:?})",
            report.max_rel_error(),
            report.analytic,
            report.numeric
        );
    }
    eprintln!("{name}: worst relative error over {TRIALS} trials = {worst:.3e}");
}

fn dims(rng: &mut ChaCha8Rng, max: usize) -> usize {
    rng.random_range(1..=max)
}

#[test]
fn grad_matmul() {
    run(
        "matmul",
        |r| {
            let (m, k, n) = (dims(r, 4), dims(r, 4), dims(r, 4));
            (vec![(uniform(r, m * k), vec![m, k]), (uniform(r, k * n), vec![k, n])], 0)
        },
        |g, x, _| g.matmul(x[0], x[1]),
    );
}

#[test]
fn grad_conv2d() {
    run(
        "conv2d",
        |r| {
            let (n, c, o) = (dims(r, 2), dims(r, 2), dims(r, 2));
            let h = r.random_range(3..=4);
            let k = *[1usize, 2, 3].choose(r).unwrap();
            let stride = r.random_range(1..=2);
            let pad = r.random_range(0..=1);
            let aux = (stride * 10 + pad) as u64;
            (vec![(uniform(r, n * c * h * h), vec![n, c, h, h]), (uniform(r, o * c * k * k), vec![o, c, k, k])], aux)
        },
        |g, x, aux| g.conv2d(x[0], x[1], (aux / 10) as usize, (aux % 10) as usize),
    );
}

#[test]
fn grad_conv_transpose2d() {
    run(
        "transposed-conv2d",
        |r| {
            let (n, ci, co) = (dims(r, 2), dims(r, 2), dims(r, 2));
            let h = r.random_range(1..=3);
            let (k, stride, pad) = *[(4usize, 1usize, 0usize), (4, 2, 1), (3, 1, 1), (2, 2, 0)].choose(r).unwrap();
            let aux = (stride * 10 + pad) as u64;
            (vec![(uniform(r, n * ci * h * h), vec![n, ci, h, h]), (uniform(r, ci * co * k * k), vec![ci, co, k, k])], aux)
        },
        |g, x, aux| g.conv_transpose2d(x[0], x[1], (aux / 10) as usize, (aux % 10) as usize),
    );
}

#[test]
fn grad_max_pool() {
    run(
        "max-pool2x2",
        |r| {
            let (n, c) = (dims(r, 2), dims(r, 2));
            let h = 2 * r.random_range(1..=2);
            let w = 2 * r.random_range(1..=2);
            (vec![(distinct(r, n * c * h * w), vec![n, c, h, w])], 0)
        },
        |g, x, _| g.max_pool2x2(x[0]),
    );
}

#[test]
fn grad_upsample() {
    run(
        "bilinear-upsample2x",
        |r| {
            let (n, c, h, w) = (dims(r, 2), dims(r, 2), dims(r, 3), dims(r, 3));
            (vec![(uniform(r, n * c * h * w), vec![n, c, h, w])], 0)
        },
        |g, x, _| g.upsample2x(x[0]),
    );
}

fn pair(r: &mut ChaCha8Rng) -> (Inputs, u64) {
    let len = dims(r, 12);
    (vec![(uniform(r, len), vec![len]), (uniform(r, len), vec![len])], 0)
}

#[test]
fn grad_add() {
    run("add", pair, |g, x, _| g.add(x[0], x[1]));
}

#[test]
fn grad_sub() {
    run("sub", pair, |g, x, _| g.sub(x[0], x[1]));
}

#[test]
fn grad_mul() {
    run("mul", pair, |g, x, _| g.mul(x[0], x[1]));
}

#[test]
fn grad_add_bias() {
    run(
        "add-bias",
        |r| {
            let (n, c, l) = (dims(r, 3), dims(r, 3), dims(r, 4));
            (vec![(uniform(r, n * c * l), vec![n, c, l]), (uniform(r, c), vec![c])], 0)
        },
        |g, x, _| g.add_bias(x[0], x[1]),
    );
}

fn single(r: &mut ChaCha8Rng) -> (Inputs, u64) {
    let len = dims(r, 16);
    (vec![(uniform(r, len), vec![len])], 0)
}

fn single_kinked(r: &mut ChaCha8Rng) -> (Inputs, u64) {
    let len = dims(r, 16);
    (vec![(away_from_zero(r, len), vec![len])], 0)
}

#[test]
fn grad_scalar_mul() {
    run("scalar-mul", single, |g, x, _| Ok(g.scalar_mul(x[0], -1.75)));
}

#[test]
fn grad_relu() {
    run("relu", single_kinked, |g, x, _| Ok(g.relu(x[0])));
}

#[test]
fn grad_leaky_relu() {
    run("leaky-relu", single_kinked, |g, x, _| Ok(g.leaky_relu(x[0], 0.2)));
}

#[test]
fn grad_tanh() {
    run("tanh", single, |g, x, _| Ok(g.tanh(x[0])));
}

#[test]
fn grad_abs() {
    run("abs", single_kinked, |g, x, _| Ok(g.abs(x[0])));
}

#[test]
fn grad_square() {
    run("square", single, |g, x, _| Ok(g.square(x[0])));
}

#[test]
fn grad_reshape() {
    run(
        "reshape",
        |r| {
            let (a, b) = (dims(r, 4), dims(r, 4));
            (vec![(uniform(r, a * b), vec![a, b])], 0)
        },
        |g, x, _| {
            let n = g.value(x[0]).len();
            g.reshape(x[0], &[n])
        },
    );
}

#[test]
fn grad_sum() {
    run("sum", single, |g, x, _| Ok(g.sum(x[0])));
}

#[test]
fn grad_mean() {
    run("mean", single, |g, x, _| Ok(g.mean(x[0])));
}

#[test]
fn grad_l2_norm_squared() {
    run("L2-norm-squared", single, |g, x, _| Ok(g.l2_norm_squared(x[0])));
}

#[test]
fn grad_batch_norm_batch_stats() {
    run(
        "batch-norm",
        |r| {
            let (n, c, l) = (r.random_range(2..=4), dims(r, 3), dims(r, 4));
            (
                vec![
                    (uniform(r, n * c * l), vec![n, c, l]),
                    (uniform(r, c), vec![c]),
                    (uniform(r, c), vec![c]),
                ],
                0,
            )
        },
        |g, x, _| Ok(g.batch_norm(x[0], x[1], x[2], NormMode::Batch, 1e-5)?.0),
    );
}

#[test]
fn grad_batch_norm_running_stats() {
    run(
        "batch-norm (inference)",
        |r| {
            let (n, c) = (dims(r, 3), dims(r, 3));
            (
                vec![
                    (uniform(r, n * c), vec![n, c]),
                    (uniform(r, c), vec![c]),
                    (uniform(r, c), vec![c]),
                ],
                c as u64,
            )
        },
        |g, x, c| {
            let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
            let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
            Ok(g.batch_norm(x[0], x[1], x[2], NormMode::Running { mean: &mean, var: &var }, 1e-5)?.0)
        },
    );
}

#[test]
fn grad_slice_and_concat() {
    run(
        "slice/concat",
        |r| {
            let (a, b, w) = (r.random_range(2..=4), dims(r, 3), dims(r, 3));
            (vec![(uniform(r, a * w), vec![a, w]), (uniform(r, b * w), vec![b, w])], a as u64)
        },
        |g, x, a| {
            let c = g.concat_rows(&[x[0], x[1]])?;
            let s = g.slice_rows(c, 1, a as usize)?;
            let t = g.tanh(s);
            Ok(g.sum(t))
        },
    );
}

#[test]
fn grad_composite_network_block() {
    // conv -> bn -> leaky -> pool -> reshape -> matmul -> tanh -> L2
    run(
        "composite",
        |r| {
            (
                vec![
                    (uniform(r, 2 * 16), vec![2, 1, 4, 4]),
                    (uniform(r, 2 * 9), vec![2, 1, 3, 3]),
                    (uniform(r, 2), vec![2]),
                    (uniform(r, 2), vec![2]),
                    (uniform(r, 8 * 3), vec![8, 3]),
                ],
                0,
            )
        },
        |g, x, _| {
            let c = g.conv2d(x[0], x[1], 1, 1)?;
            let (b, _) = g.batch_norm(c, x[2], x[3], NormMode::Batch, 1e-5)?;
            let a = g.leaky_relu(b, 0.2);
            let p = g.max_pool2x2(a)?;
            let f = g.reshape(p, &[2, 8])?;
            let m = g.matmul(f, x[4])?;
            let t = g.tanh(m);
            Ok(g.l2_norm_squared(t))
        },
    );
}
