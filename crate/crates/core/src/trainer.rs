//! REINFORCE with a learned critic baseline, optimized by Adam.

use std::time::Instant;

use crate::autodiff::{Array, BatchNormStats, Mode, Tape};
use crate::decomposition::WeightVector;
use crate::error::{Error, Result};
use crate::instances::{weighted_sum, MotspInstance, Tour};
use crate::model::{DecodeMode, ModelParameters};
use crate::rng::{self, Rng};

/// Hyperparameters of one subproblem's training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Instances per iteration (`B`).
    pub batch_size: usize,
    /// Instances per epoch (`D`); an epoch is `D / B` iterations.
    pub dataset_size: usize,
    pub epochs: usize,
    /// Nodes per sampled training instance.
    pub nodes: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Per-network gradient norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            dataset_size: 500_000,
            epochs: 1,
            nodes: 20,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 2.0,
            seed: 1234,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if self.dataset_size == 0 || !self.dataset_size.is_multiple_of(self.batch_size) {
            return Err(Error::contract(format!(
                "dataset size {} must be a positive multiple of batch size {}",
                self.dataset_size, self.batch_size
            )));
        }
        if self.nodes < 2 {
            return Err(Error::contract(format!("training instances need n >= 2, got {}", self.nodes)));
        }
        let positive = [self.actor_lr, self.critic_lr, self.adam_eps, self.grad_clip];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::contract("learning rates, eps and clip must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Iterations per epoch, `T = D / B`.
    pub fn iterations_per_epoch(&self) -> usize {
        self.dataset_size / self.batch_size
    }
}

/// Metrics of one training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean weighted cost of the sampled tours.
    pub mean_gws: f64,
    pub critic_loss: f64,
    /// Actor gradient norm before clipping.
    pub grad_norm: f64,
    /// Wall time since the subproblem started.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

pub const METRICS_HEADER: &str = "iteration,mean_gws,critic_loss,grad_norm,seconds";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                r.iteration, r.mean_gws, r.critic_loss, r.grad_norm, r.seconds
            ));
        }
        out
    }

    /// Mean of `mean_gws` over records `range`.
    pub fn mean_gws(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.mean_gws).sum::<f64>() / slice.len() as f64
    }
}

/// First and second moment estimates for one parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Array>,
    v: Vec<Array>,
    steps: i32,
}

impl Adam {
    pub fn new(params: &[Array]) -> Self {
        let zeros = || params.iter().map(|p| Array::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array], grads: &[Array], lr: f64, cfg: &TrainConfig) {
        self.steps += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.steps);
        let c2 = 1.0 - cfg.beta2.powi(self.steps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm(grads: &[Array]) -> f64 {
    grads.iter().map(Array::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before rescaling.
pub fn clip_grad_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Baseline used by [`batch_gradients`].
pub enum Baseline<'a> {
    /// The critic's prediction, regressed towards the observed costs.
    Critic,
    /// Externally supplied values; the critic receives no gradient.
    Fixed(&'a [f64]),
}

/// Gradients and diagnostics of one policy-gradient batch.
pub struct BatchGradients {
    pub tours: Vec<Tour>,
    pub costs: Vec<f64>,
    pub baselines: Vec<f64>,
    pub actor: Vec<Array>,
    pub critic: Vec<Array>,
    pub critic_loss: f64,
    /// Batch-norm running statistics after this forward pass.
    pub bn: Vec<BatchNormStats>,
}

fn stack_features(instances: &[MotspInstance]) -> Result<(usize, Array)> {
    let first = instances
        .first()
        .ok_or_else(|| Error::contract("empty training batch"))?;
    let (n, dx) = (first.n(), first.dx());
    if instances.iter().any(|i| i.n() != n || i.dx() != dx) {
        return Err(Error::contract("training batch mixes instance sizes"));
    }
    let data = instances.iter().flat_map(|i| i.features().iter().copied()).collect();
    Ok((n, Array::new(vec![instances.len() * n, dx], data)?))
}

/// One forward/backward pass: decode the batch, score tours with `cost`,
/// and differentiate `mean((g − b)·log p) + mean((b − g)²)` with the
/// advantage and the regression target held constant.
pub fn batch_gradients(
    params: &ModelParameters,
    instances: &[MotspInstance],
    decode: DecodeMode<'_>,
    baseline: Baseline<'_>,
    cost: &dyn Fn(&MotspInstance, &Tour) -> Result<f64>,
) -> Result<BatchGradients> {
    let batch = instances.len();
    if batch < 2 {
        return Err(Error::BatchTooSmall(batch));
    }
    let (n, feats) = stack_features(instances)?;
    let mut tape = Tape::new();
    let avars = params.actor.store().bind(&mut tape);
    let cvars = params.critic.store().bind(&mut tape);
    let x = tape.constant(feats);
    let mut bn = params.actor.bn_stats().to_vec();
    let out = params
        .actor
        .rollout_batch(&mut tape, &avars, x, batch, n, Mode::Train, &mut bn, decode)?;
    let costs = instances
        .iter()
        .zip(&out.tours)
        .map(|(inst, t)| cost(inst, t))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(bad) = costs.iter().find(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("tour cost {bad}")));
    }

    let (baselines, critic_term) = match baseline {
        Baseline::Critic => {
            let b = params.critic.forward(&mut tape, &cvars, x, batch, n)?;
            let target = tape.constant(Array::vector(costs.clone()));
            let diff = tape.sub(b, target)?;
            let sq = tape.square(diff)?;
            let loss = tape.mean(sq)?;
            (tape.value(b).data().to_vec(), Some(loss))
        }
        Baseline::Fixed(b) => {
            if b.len() != batch {
                return Err(Error::contract("fixed baseline must have one value per instance"));
            }
            (b.to_vec(), None)
        }
    };
    let adv: Vec<f64> = costs.iter().zip(&baselines).map(|(g, b)| g - b).collect();
    let adv = tape.constant(Array::vector(adv));
    let weighted = tape.mul(adv, out.log_prob)?;
    let actor_loss = tape.mean(weighted)?;
    let (total, critic_loss) = match critic_term {
        Some(c) => (tape.add(actor_loss, c)?, tape.value(c).item()),
        None => (actor_loss, 0.0),
    };
    tape.backward(total)?;

    Ok(BatchGradients {
        tours: out.tours,
        costs,
        baselines,
        actor: params.actor.store().grads(&tape, &avars),
        critic: params.critic.store().grads(&tape, &cvars),
        critic_loss,
        bn,
    })
}

/// Optimizer state carried across iterations of one subproblem.
pub struct TrainerState {
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub rng: Rng,
}

impl TrainerState {
    pub fn new(params: &ModelParameters, seed: u64) -> Self {
        Self {
            actor_opt: Adam::new(params.actor.store().arrays()),
            critic_opt: Adam::new(params.critic.store().arrays()),
            rng: rng::seeded(seed),
        }
    }
}

/// Weighted-sum cost of a tour under `w`.
pub fn weighted_cost(w: &WeightVector) -> impl Fn(&MotspInstance, &Tour) -> Result<f64> + '_ {
    move |inst, tour| weighted_sum(&inst.evaluate_objectives(tour)?, w)
}

/// Samples `B` fresh instances, runs one actor and critic update, and
/// returns `(mean cost, critic loss, actor grad norm)`.
pub fn reinforce_iteration(
    w: &WeightVector,
    params: &mut ModelParameters,
    state: &mut TrainerState,
    cfg: &TrainConfig,
) -> Result<(f64, f64, f64)> {
    if w.dim() != 2 {
        return Err(Error::contract(format!("training instances have 2 objectives, weight has {}", w.dim())));
    }
    reinforce_iteration_with_cost(params, state, cfg, &weighted_cost(w))
}

/// [`reinforce_iteration`] with an arbitrary tour cost.
pub fn reinforce_iteration_with_cost(
    params: &mut ModelParameters,
    state: &mut TrainerState,
    cfg: &TrainConfig,
    cost: &dyn Fn(&MotspInstance, &Tour) -> Result<f64>,
) -> Result<(f64, f64, f64)> {
    let instances = (0..cfg.batch_size)
        .map(|_| MotspInstance::sample(cfg.nodes, &mut state.rng))
        .collect::<Result<Vec<_>>>()?;
    let mut g = batch_gradients(
        params,
        &instances,
        DecodeMode::Sample(&mut state.rng),
        Baseline::Critic,
        cost,
    )?;
    let actor_norm = clip_grad_norm(&mut g.actor, cfg.grad_clip);
    let critic_norm = clip_grad_norm(&mut g.critic, cfg.grad_clip);
    if !actor_norm.is_finite() || !critic_norm.is_finite() {
        let mean_cost = g.costs.iter().sum::<f64>() / g.costs.len() as f64;
        return Err(Error::NonFinite(format!(
            "gradient norm (actor {actor_norm}, critic {critic_norm}); mean cost {mean_cost}, critic loss {}",
            g.critic_loss
        )));
    }
    state
        .actor_opt
        .step(params.actor.store_mut().arrays_mut(), &g.actor, cfg.actor_lr, cfg);
    state
        .critic_opt
        .step(params.critic.store_mut().arrays_mut(), &g.critic, cfg.critic_lr, cfg);
    params.actor.bn_stats_mut().clone_from_slice(&g.bn);
    let mean_cost = g.costs.iter().sum::<f64>() / g.costs.len() as f64;
    Ok((mean_cost, g.critic_loss, actor_norm))
}

/// Runs `cfg.epochs` epochs of `D / B` iterations from `init`. Fresh
/// optimizer state is created for the subproblem. `on_epoch_end` receives
/// the 1-based epoch, the parameters and the report so far.
pub fn train_subproblem(
    w: &WeightVector,
    init: ModelParameters,
    cfg: &TrainConfig,
    mut on_epoch_end: impl FnMut(usize, &ModelParameters, &TrainReport) -> Result<()>,
) -> Result<(ModelParameters, TrainReport)> {
    cfg.validate()?;
    let mut params = init;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((params, report));
    }
    let mut state = TrainerState::new(&params, cfg.seed);
    let started = Instant::now();
    let per_epoch = cfg.iterations_per_epoch();
    for epoch in 1..=cfg.epochs {
        for _ in 0..per_epoch {
            let (mean_gws, critic_loss, grad_norm) = reinforce_iteration(w, &mut params, &mut state, cfg)?;
            report.records.push(IterationRecord {
                iteration: report.records.len() + 1,
                mean_gws,
                critic_loss,
                grad_norm,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
        on_epoch_end(epoch, &params, &report)?;
    }
    Ok((params, report))
}
