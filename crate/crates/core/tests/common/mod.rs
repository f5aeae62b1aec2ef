//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use motsp_am::autodiff::{Array, BatchNormStats, Mode, Tape, Var};
use motsp_am::decomposition::WeightVector;
use motsp_am::instances::{weighted_sum, MotspInstance, ObjectiveVector, Tour};
use motsp_am::model::{DecodeMode, ModelConfig, ModelParameters};
use motsp_am::trainer::{batch_gradients, weighted_cost, Baseline};
use motsp_am::Result;
use rand::seq::SliceRandom;
use rand::Rng as _;

pub type Rng = motsp_am::rng::Rng;

pub fn rng(seed: u64) -> Rng {
    motsp_am::rng::seeded(seed)
}

pub fn random_array(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let len = shape.iter().product();
    Array::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-6;
/// Below this magnitude errors are measured absolutely (central-difference
/// roundoff on an O(1) loss is ~1e-9).
pub const FD_FLOOR: f64 = 1e-5;

/// Checks the full Jacobian of `f` by contracting its output with a random
/// weight array and comparing reverse-mode gradients against central
/// differences on every input entry. Returns the largest relative error.
pub fn fd_check_op(
    rng: &mut Rng,
    inputs: &[Array],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let probe = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| t.param(a.clone())).collect();
        let y = f(&mut t, &vars).unwrap();
        t.value(y).shape().to_vec()
    };
    let weights = random_array(rng, &probe, -1.0, 1.0);
    let eval = |arrays: &[Array], grads: bool| -> (f64, Vec<Array>) {
        let mut t = Tape::new();
        let vars: Vec<Var> = arrays.iter().map(|a| t.param(a.clone())).collect();
        let y = f(&mut t, &vars).unwrap();
        let w = t.constant(weights.clone());
        let prod = t.mul(y, w).unwrap();
        let loss = t.sum(prod).unwrap();
        let value = t.value(loss).item();
        if !grads {
            return (value, Vec::new());
        }
        t.backward(loss).unwrap();
        (value, vars.iter().map(|&v| t.grad_or_zeros(v)).collect())
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data()[k], numeric, FD_FLOOR));
        }
    }
    worst
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Array {
    let mut a = random_array(rng, shape, 0.1, 1.5);
    for v in a.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    a
}

/// Worst relative error of every differentiable tape operation for one seed.
pub fn op_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    macro_rules! case {
        ($name:expr, [$($shape:expr),*], $f:expr) => {{
            let inputs = vec![$(random_array(&mut r, &$shape, -1.5, 1.5)),*];
            out.push(($name, fd_check_op(&mut r, &inputs, $f)));
        }};
    }
    case!("matmul", [[3, 4], [4, 2]], |t, v| t.matmul(v[0], v[1]));
    case!("matmul_nt", [[3, 4], [2, 4]], |t, v| t.matmul_nt(v[0], v[1]));
    case!("batch_matmul", [[2, 3, 4], [2, 4, 2]], |t, v| t.batch_matmul(v[0], v[1], false));
    case!("batch_matmul_t", [[2, 3, 4], [2, 2, 4]], |t, v| t.batch_matmul(v[0], v[1], true));
    case!("transpose", [[3, 4]], |t, v| t.transpose(v[0]));
    case!("transpose3", [[2, 3, 4]], |t, v| t.transpose(v[0]));
    case!("reshape", [[3, 4]], |t, v| t.reshape(v[0], &[2, 6]));
    case!("add", [[3, 4], [3, 4]], |t, v| t.add(v[0], v[1]));
    case!("sub", [[3, 4], [3, 4]], |t, v| t.sub(v[0], v[1]));
    case!("mul", [[3, 4], [3, 4]], |t, v| t.mul(v[0], v[1]));
    case!("add_bias", [[3, 4], [4]], |t, v| t.add_bias(v[0], v[1]));
    case!("scale", [[3, 4]], |t, v| t.scale(v[0], -1.7));
    case!("tanh", [[3, 4]], |t, v| t.tanh(v[0]));
    case!("square", [[3, 4]], |t, v| t.square(v[0]));
    case!("concat", [[3, 2], [3, 4], [3, 1]], |t, v| t.concat(&[v[0], v[1], v[2]]));
    case!("mean_axis0", [[2, 3, 4]], |t, v| t.mean_over_axis(v[0], 0));
    case!("mean_axis1", [[2, 3, 4]], |t, v| t.mean_over_axis(v[0], 1));
    case!("mean_axis2", [[2, 3, 4]], |t, v| t.mean_over_axis(v[0], 2));
    case!("gather_rows", [[4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3]));
    case!("softmax", [[3, 4]], |t, v| t.masked_softmax(v[0], &[]));
    case!("sum", [[3, 4]], |t, v| t.sum(v[0]));
    case!("mean", [[3, 4]], |t, v| t.mean(v[0]));

    let x = away_from_zero(&mut r, &[3, 4]);
    out.push(("relu", fd_check_op(&mut r, &[x], |t, v| t.relu(v[0]))));
    let x = random_array(&mut r, &[3, 4], 0.3, 2.0);
    out.push(("log", fd_check_op(&mut r, &[x], |t, v| t.log(v[0]))));

    let x = random_array(&mut r, &[3, 4], -1.5, 1.5);
    let mut mask: Vec<bool> = (0..12).map(|_| r.gen_bool(0.4)).collect();
    for row in 0..3 {
        mask[row * 4 + r.gen_range(0..4)] = false;
    }
    out.push(("masked_softmax", fd_check_op(&mut r, &[x], move |t, v| t.masked_softmax(v[0], &mask))));

    let inputs = vec![
        random_array(&mut r, &[6, 3], -1.5, 1.5),
        random_array(&mut r, &[3], 0.5, 1.5),
        random_array(&mut r, &[3], -0.5, 0.5),
    ];
    let fresh = BatchNormStats::new(3);
    out.push((
        "batch_norm_train",
        fd_check_op(&mut r, &inputs, move |t, v| {
            let mut s = fresh.clone();
            t.batch_norm(v[0], v[1], v[2], &mut s, Mode::Train)
        }),
    ));
    let mut stats = BatchNormStats::new(3);
    stats.mean = vec![0.3, -0.2, 0.1];
    stats.var = vec![0.5, 1.4, 2.0];
    out.push((
        "batch_norm_infer",
        fd_check_op(&mut r, &inputs, move |t, v| {
            let mut s = stats.clone();
            t.batch_norm(v[0], v[1], v[2], &mut s, Mode::Infer)
        }),
    ));
    out
}

pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        d_h: 8,
        heads: 2,
        d_ff: 16,
        ..ModelConfig::default()
    }
}

/// Compares the trainer's actor and critic gradients with central
/// differences of the surrogate loss
/// `mean(A₀·log p_θ(π)) + mean((b_φ − g)²)`, where the advantage `A₀` is
/// frozen at the unperturbed critic. Tours are fixed; batch norm runs in
/// train mode. Checks `coords` random coordinates per network and returns
/// the worst relative error.
pub fn pipeline_check(seed: u64, n: usize, batch: usize, coords: usize) -> f64 {
    let mut r = rng(seed);
    let params = ModelParameters::init(&gradcheck_model_config(), seed).unwrap();
    let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
    let instances: Vec<MotspInstance> = (0..batch).map(|_| MotspInstance::sample(n, &mut r).unwrap()).collect();
    let tours: Vec<Tour> = (0..batch)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            Tour::new(order).unwrap()
        })
        .collect();
    let cost = weighted_cost(&w);
    let analytic = batch_gradients(&params, &instances, DecodeMode::Forced(&tours), Baseline::Critic, &cost).unwrap();
    let costs = analytic.costs.clone();
    let adv: Vec<f64> = costs.iter().zip(&analytic.baselines).map(|(g, b)| g - b).collect();

    let features: Vec<f64> = instances.iter().flat_map(|i| i.features().to_vec()).collect();
    let surrogate = |p: &ModelParameters| -> f64 {
        let mut t = Tape::new();
        let av = p.actor.store().bind(&mut t);
        let cv = p.critic.store().bind(&mut t);
        let x = t.constant(Array::new(vec![batch * n, 4], features.clone()).unwrap());
        let mut bn = p.actor.bn_stats().to_vec();
        let roll = p
            .actor
            .rollout_batch(&mut t, &av, x, batch, n, Mode::Train, &mut bn, DecodeMode::Forced(&tours))
            .unwrap();
        let a = t.constant(Array::vector(adv.clone()));
        let weighted = t.mul(a, roll.log_prob).unwrap();
        let actor_term = t.mean(weighted).unwrap();
        let b = p.critic.forward(&mut t, &cv, x, batch, n).unwrap();
        let g = t.constant(Array::vector(costs.clone()));
        let d = t.sub(b, g).unwrap();
        let sq = t.square(d).unwrap();
        let critic_term = t.mean(sq).unwrap();
        let total = t.add(actor_term, critic_term).unwrap();
        t.value(total).item()
    };

    let mut worst: f64 = 0.0;
    for network in 0..2 {
        let count = if network == 0 {
            params.actor.store().len()
        } else {
            params.critic.store().len()
        };
        for _ in 0..coords {
            let a = r.gen_range(0..count);
            let store = |p: &ModelParameters| {
                if network == 0 {
                    p.actor.store().arrays()[a].len()
                } else {
                    p.critic.store().arrays()[a].len()
                }
            };
            let k = r.gen_range(0..store(&params));
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let arr = if network == 0 {
                    &mut p.actor.store_mut().arrays_mut()[a]
                } else {
                    &mut p.critic.store_mut().arrays_mut()[a]
                };
                arr.data_mut()[k] += delta;
                p
            };
            let numeric = (surrogate(&shifted(FD_STEP)) - surrogate(&shifted(-FD_STEP))) / (2.0 * FD_STEP);
            let grads = if network == 0 { &analytic.actor } else { &analytic.critic };
            worst = worst.max(rel_err(grads[a].data()[k], numeric, FD_FLOOR));
        }
    }
    worst
}

/// Every tour of `0..n` that starts at node 0 (all closed tours up to rotation).
pub fn all_tours(n: usize) -> Vec<Tour> {
    fn rec(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Tour>) {
        if left.is_empty() {
            out.push(Tour::new(prefix.clone()).unwrap());
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            prefix.push(v);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut vec![0], &mut (1..n).collect(), &mut out);
    out
}

/// Objective vector of a tour by summing Euclidean edge lengths directly
/// from the coordinates.
pub fn direct_objectives(inst: &MotspInstance, tour: &Tour) -> Vec<f64> {
    let o = tour.order();
    (0..inst.m())
        .map(|j| {
            (0..o.len())
                .map(|t| {
                    let (a, b) = (inst.feature(o[t]), inst.feature(o[(t + 1) % o.len()]));
                    ((a[2 * j] - b[2 * j]).powi(2) + (a[2 * j + 1] - b[2 * j + 1]).powi(2)).sqrt()
                })
                .sum()
        })
        .collect()
}

/// Exhaustive minimum of the weighted cost.
pub fn brute_force_optimum(inst: &MotspInstance, w: &WeightVector, tours: &[Tour]) -> f64 {
    tours
        .iter()
        .map(|t| weighted_sum(&inst.evaluate_objectives(t).unwrap(), w).unwrap())
        .fold(f64::INFINITY, f64::min)
}

/// Nondominated indices by checking every ordered pair, keeping the first of
/// exact duplicates.
pub fn dominance_oracle(points: &[ObjectiveVector]) -> Vec<usize> {
    let mut keep = Vec::new();
    'outer: for i in 0..points.len() {
        for j in 0..points.len() {
            let p = &points[i].0;
            let q = &points[j].0;
            let le = q.iter().zip(p).all(|(a, b)| a <= b);
            let lt = q.iter().zip(p).any(|(a, b)| a < b);
            if (le && lt) || (j < i && q == p) {
                continue 'outer;
            }
        }
        keep.push(i);
    }
    keep
}

/// Area dominated by `points` within `reference`, by counting the centres
/// of a `cells × cells` grid that some point weakly dominates.
pub fn grid_hypervolume(points: &[ObjectiveVector], reference: [f64; 2], lo: [f64; 2], cells: usize) -> f64 {
    let dx = (reference[0] - lo[0]) / cells as f64;
    let dy = (reference[1] - lo[1]) / cells as f64;
    let mut covered: u64 = 0;
    for i in 0..cells {
        let x = lo[0] + (i as f64 + 0.5) * dx;
        // lowest y among points left of this column
        let best = points
            .iter()
            .filter(|p| p.0[0] <= x)
            .map(|p| p.0[1])
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            // rows with centre below `best` are uncovered: j < (best − lo)/dy − 0.5
            let below = ((best - lo[1]) / dy - 0.5).ceil().clamp(0.0, cells as f64) as u64;
            covered += cells as u64 - below;
        }
    }
    covered as f64 * dx * dy
}
