//! Central finite differences against the analytic gradients of every graph
//! primitive and of the composed multi-stage loss.

use attnboost_core::autodiff::{Graph, Var};
use attnboost_core::basemodel::FcnConfig;
use attnboost_core::boosting::{
    loss_and_gradients, multi_stage_forward_with_contributions, ForwardOptions, StageStack,
    TrainingSample,
};
use attnboost_core::{seeded_rng, Grid, Rng, Tensor};
use rand::Rng as _;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients
/// from turning rounding noise into huge relative errors.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random values bounded away from zero, so relu kinks stay out of reach.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape, -1.0, 1.0);
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v = if *v < 0.0 { -0.5 } else { 0.5 };
        }
    }
    t
}

/// Values whose pairwise gaps exceed the step, so max-pool winners are stable.
fn distinct(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        levels.swap(i, j);
    }
    Tensor::from_vec(shape, levels).unwrap()
}

/// Reduces any node to a scalar with a random quadratic so that every
/// output entry carries a distinct nonzero weight.
fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let mut rng = seeded_rng(seed);
    let shape = g.value(v).shape().to_vec();
    let target = random_tensor(&mut rng, &shape, -1.0, 1.0);
    let contrib = random_tensor(&mut rng, &shape, 0.1, 1.0);
    g.weighted_sse(v, &target, &contrib).unwrap()
}

/// Largest relative error over every input coordinate.
fn check(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn run_trials(name: &str, trial: impl Fn(u64) -> f64) {
    let worst = (0..TRIALS).map(trial).fold(0.0f64, f64::max);
    assert!(worst < TOL, "{name}: worst relative error {worst:e}");
}

fn conv2d_gradients() {
    run_trials("conv2d", |t| {
        let mut rng = seeded_rng(1000 + t);
        let (c, k) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let inputs = [
            random_tensor(&mut rng, &[c, h, w], -1.0, 1.0),
            random_tensor(&mut rng, &[k, c, 3, 3], -1.0, 1.0),
            random_tensor(&mut rng, &[k], -1.0, 1.0),
        ];
        check(&inputs, &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2]).unwrap();
            project(g, y, t)
        })
    });
}

fn maxpool_gradients() {
    run_trials("maxpool2", |t| {
        let mut rng = seeded_rng(2000 + t);
        let shape = [rng.random_range(1..3), 2 * rng.random_range(1..4), 2 * rng.random_range(1..4)];
        let inputs = [distinct(&mut rng, &shape)];
        check(&inputs, &|g, v| {
            let y = g.maxpool2(v[0]).unwrap();
            project(g, y, t)
        })
    });
}

fn upsample_gradients() {
    run_trials("upsample2", |t| {
        let mut rng = seeded_rng(3000 + t);
        let shape = [rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4)];
        let inputs = [random_tensor(&mut rng, &shape, -1.0, 1.0)];
        check(&inputs, &|g, v| {
            let y = g.upsample2(v[0]).unwrap();
            project(g, y, t)
        })
    });
}

fn relu_gradients() {
    run_trials("relu", |t| {
        let mut rng = seeded_rng(4000 + t);
        let inputs = [off_zero(&mut rng, &[2, 3, 3])];
        check(&inputs, &|g, v| {
            let y = g.relu(v[0]);
            project(g, y, t)
        })
    });
}

fn sigmoid_gradients() {
    run_trials("sigmoid", |t| {
        let mut rng = seeded_rng(5000 + t);
        let inputs = [random_tensor(&mut rng, &[2, 3, 3], -4.0, 4.0)];
        check(&inputs, &|g, v| {
            let y = g.sigmoid(v[0]);
            project(g, y, t)
        })
    });
}

fn dropout_gradients() {
    run_trials("dropout", |t| {
        let mut rng = seeded_rng(6000 + t);
        let inputs = [random_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0)];
        check(&inputs, &|g, v| {
            // Same seed on every evaluation: the mask is fixed.
            let mut mask_rng = seeded_rng(t);
            let y = g.dropout(v[0], 0.2, true, &mut mask_rng).unwrap();
            project(g, y, t)
        })
    });
}

fn concat_gradients() {
    run_trials("concat_channels", |t| {
        let mut rng = seeded_rng(7000 + t);
        let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
        let (ca, cb) = (rng.random_range(1..3), rng.random_range(1..3));
        let inputs = [
            random_tensor(&mut rng, &[ca, h, w], -1.0, 1.0),
            random_tensor(&mut rng, &[cb, h, w], -1.0, 1.0),
        ];
        check(&inputs, &|g, v| {
            let y = g.concat_channels(v[0], v[1]).unwrap();
            project(g, y, t)
        })
    });
}

fn weighted_sse_gradients() {
    run_trials("weighted_sse", |t| {
        let mut rng = seeded_rng(8000 + t);
        let inputs = [random_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0)];
        let target = Tensor::from_vec(&[1, 4, 4], (0..16).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect()).unwrap();
        let contrib = random_tensor(&mut rng, &[1, 4, 4], 0.0, 0.2);
        check(&inputs, &|g, v| g.weighted_sse(v[0], &target, &contrib).unwrap())
    });
}

fn sum_and_combine_gradients() {
    run_trials("sum/combine", |t| {
        let mut rng = seeded_rng(9000 + t);
        let inputs = [
            random_tensor(&mut rng, &[1, 3, 3], -1.0, 1.0),
            random_tensor(&mut rng, &[1, 3, 3], -1.0, 1.0),
        ];
        let (wa, wb) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        check(&inputs, &|g, v| {
            let c = g.combine(&[(v[0], wa), (v[1], wb)]).unwrap();
            let s = g.sigmoid(c);
            let total = g.sum(s);
            let p = project(g, c, t);
            g.combine(&[(total, 1.0), (p, 0.5)]).unwrap()
        })
    });
}

/// Freshly built stacks have zero biases, which puts relus fed by dead
/// neighbourhoods exactly on their kink; random biases move the check to a
/// generic point.
fn tiny_stack(seed: u64, stages: usize) -> StageStack {
    let mut stack = StageStack::new(
        stages,
        FcnConfig {
            depth: 1,
            base_channels: 2,
            dropout_rate: 0.2,
            input_channels: 4,
            seed,
        },
    )
    .unwrap();
    let mut rng = seeded_rng(seed ^ 0xB1A5);
    for stage in stack.stages_mut() {
        for p in stage.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    stack
}

fn random_sample(rng: &mut Rng, w: usize, h: usize) -> TrainingSample {
    let image = random_tensor(rng, &[3, h, w], 0.0, 1.0);
    let (cx, cy) = (rng.random_range(0..w), rng.random_range(0..h));
    let truth = Grid::from_fn(w, h, |x, y| u32::from(x.abs_diff(cx) + y.abs_diff(cy) <= 2));
    TrainingSample::new(image, truth).unwrap()
}

fn base_model_gradients() {
    run_trials("base model", |t| {
        let mut rng = seeded_rng(10_000 + t);
        let stack = tiny_stack(t, 1);
        let sample = random_sample(&mut rng, 4, 4);
        composed_check(&stack, &sample, t, &mut rng, 6)
    });
}

/// Checks `coords` random parameter coordinates of a stack, with the
/// contribution maps of the unperturbed pass held fixed.
fn composed_check(stack: &StageStack, sample: &TrainingSample, t: u64, rng: &mut Rng, coords: usize) -> f64 {
    let opts = ForwardOptions {
        training: true,
        ..ForwardOptions::default()
    };
    let (out, grads) = loss_and_gradients(stack, sample, &opts, &mut seeded_rng(t)).unwrap();
    let eval = |s: &StageStack| {
        multi_stage_forward_with_contributions(s, sample, &opts, &mut seeded_rng(t), &out.contributions)
            .unwrap()
            .total_loss
    };
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let n = rng.random_range(0..stack.len());
        let k = rng.random_range(0..stack.stages()[n].params().len());
        let i = rng.random_range(0..stack.stages()[n].params()[k].value.len());
        let mut plus = stack.clone();
        plus.stages_mut()[n].params_mut()[k].value.data_mut()[i] += STEP;
        let mut minus = stack.clone();
        minus.stages_mut()[n].params_mut()[k].value.data_mut()[i] -= STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        worst = worst.max(rel_err(grads[n][k].data()[i], numeric));
    }
    worst
}

fn four_stage_composed_loss_gradients() {
    run_trials("four-stage loss", |t| {
        let mut rng = seeded_rng(11_000 + t);
        let stack = tiny_stack(t, 4);
        let sample = random_sample(&mut rng, 4, 4);
        composed_check(&stack, &sample, t, &mut rng, 8)
    });
}

pub fn run() {
    conv2d_gradients();
    maxpool_gradients();
    upsample_gradients();
    relu_gradients();
    sigmoid_gradients();
    dropout_gradients();
    concat_gradients();
    weighted_sse_gradients();
    sum_and_combine_gradients();
    base_model_gradients();
    four_stage_composed_loss_gradients();
}
