//! WebAssembly bindings for the browser demo.

use std::path::Path;

use motsp_am::config::RunConfig;
use motsp_am::decomposition::SubproblemSchedule;
use motsp_am::evaluation::{
    approximate_pf, compute_hv_protocol, hypervolume_2d, nondominated_indices, HvConfig, ParetoArchive,
};
use motsp_am::instances::{MotspInstance, ObjectiveVector, Tour};
use motsp_am::model::ModelParameters;
use motsp_am::rng::{derive_seed, seeded};
use motsp_am::run::{initial_parameters, subproblem_train_config};
use motsp_am::trainer::{reinforce_iteration, TrainConfig, TrainerState};
use rand::seq::SliceRandom;
use wasm_bindgen::prelude::*;

const DESK_PROFILE: &str = include_str!("../../core/profiles/desk.profile");

fn points(flat: &[f64]) -> Result<Vec<ObjectiveVector>, String> {
    if !flat.len().is_multiple_of(2) {
        return Err(format!("expected (f1, f2) pairs, got {} values", flat.len()));
    }
    Ok(flat.chunks(2).map(|p| ObjectiveVector(p.to_vec())).collect())
}

fn flatten(points: &[ObjectiveVector]) -> Vec<f64> {
    points.iter().flat_map(|p| p.0.iter().copied()).collect()
}

/// Exact 2-D hypervolume of `flat = [f1, f2, f1, f2, ...]` against `(r1, r2)`,
/// without normalization.
#[wasm_bindgen]
pub fn hypervolume(flat: &[f64], r1: f64, r2: f64) -> Result<f64, String> {
    hypervolume_2d(&points(flat)?, [r1, r2]).map_err(|e| e.to_string())
}

/// Indices of the nondominated points of `flat`.
#[wasm_bindgen]
pub fn pareto_front(flat: &[f64]) -> Result<Vec<u32>, String> {
    let idx = nondominated_indices(&points(flat)?).map_err(|e| e.to_string())?;
    Ok(idx.into_iter().map(|i| i as u32).collect())
}

/// Trains the desk-profile subproblem sequence a few iterations at a time
/// and evaluates the growing set of policies on one display instance.
#[wasm_bindgen]
pub struct DemoSession {
    cfg: RunConfig,
    schedule: SubproblemSchedule,
    instance: MotspInstance,
    random: Vec<ObjectiveVector>,
    done: Vec<ModelParameters>,
    current: Option<(usize, ModelParameters, TrainerState, TrainConfig, usize)>,
    iterations: usize,
}

#[wasm_bindgen]
impl DemoSession {
    /// `iterations` per subproblem, `nodes` in the display instance.
    #[wasm_bindgen(constructor)]
    pub fn new(subproblems: usize, iterations: usize, nodes: usize, seed: u32) -> Result<DemoSession, String> {
        let err = |e: motsp_am::Error| e.to_string();
        let mut cfg = RunConfig::parse(DESK_PROFILE, Path::new("desk.profile")).map_err(err)?;
        let batch = cfg.train.batch_size;
        for (k, v) in [
            ("subproblems", subproblems.to_string()),
            ("seed", seed.to_string()),
            ("dataset_size", (iterations * batch).to_string()),
        ] {
            cfg.set(k, &v).map_err(err)?;
        }
        cfg.validate().map_err(err)?;
        let schedule = cfg.schedule().map_err(err)?;
        let instance = MotspInstance::generate_random(nodes, derive_seed(seed as u64, 7)).map_err(err)?;
        let mut r = seeded(derive_seed(seed as u64, 8));
        let random: Vec<ObjectiveVector> = (0..10)
            .map(|_| {
                let mut order: Vec<usize> = (0..nodes).collect();
                order.shuffle(&mut r);
                instance.evaluate_objectives(&Tour::new(order)?)
            })
            .collect::<motsp_am::Result<_>>()
            .map_err(err)?;
        let init = initial_parameters(&cfg).map_err(err)?;
        let mut session = DemoSession {
            cfg,
            schedule,
            instance,
            random,
            done: Vec::new(),
            current: None,
            iterations: 0,
        };
        session.begin(0, init);
        Ok(session)
    }

    fn begin(&mut self, i: usize, init: ModelParameters) {
        self.current = if i < self.schedule.len() {
            let tcfg = subproblem_train_config(&self.cfg, i, self.schedule.epochs(i));
            let budget = tcfg.epochs * tcfg.iterations_per_epoch();
            let state = TrainerState::new(&init, tcfg.seed);
            Some((i, init, state, tcfg, budget))
        } else {
            None
        };
    }

    /// Runs up to `k` training iterations. Returns the mean sampled cost of
    /// the last one, or `NaN` once every subproblem is trained.
    pub fn step(&mut self, k: usize) -> Result<f64, String> {
        let err = |e: motsp_am::Error| e.to_string();
        let mut last = f64::NAN;
        for _ in 0..k {
            let Some((i, params, state, tcfg, left)) = self.current.as_mut() else {
                break;
            };
            if *left == 0 {
                let i = *i;
                let finished = params.quantized().map_err(err)?;
                self.done.push(finished.clone());
                self.begin(i + 1, finished);
                continue;
            }
            let w = self.schedule.weight(*i);
            last = reinforce_iteration(w, params, state, tcfg).map_err(err)?.0;
            *left -= 1;
            self.iterations += 1;
        }
        Ok(last)
    }

    /// Number of subproblems finished so far.
    pub fn trained(&self) -> usize {
        self.done.len()
    }

    pub fn subproblems(&self) -> usize {
        self.schedule.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn archive(&self) -> motsp_am::Result<ParetoArchive> {
        let mut actors: Vec<_> = self.done.iter().map(|p| p.actor.clone()).collect();
        if let Some((_, p, ..)) = &self.current {
            actors.push(p.actor.clone());
        }
        approximate_pf(&self.instance, &actors)
    }

    /// Greedy-decoded front of every policy so far, as `[f1, f2, ...]`.
    pub fn front(&self) -> Result<Vec<f64>, String> {
        Ok(flatten(&self.archive().map_err(|e| e.to_string())?.objectives()))
    }

    /// Objectives of 10 random tours, as `[f1, f2, ...]`.
    pub fn random_points(&self) -> Vec<f64> {
        flatten(&self.random)
    }

    /// `[HV(trained front), HV(random front)]` under shared normalization bounds.
    pub fn hv(&self) -> Result<Vec<f64>, String> {
        let err = |e: motsp_am::Error| e.to_string();
        let trained = self.archive().map_err(err)?.objectives();
        let keep = nondominated_indices(&self.random).map_err(err)?;
        let random = keep.into_iter().map(|i| self.random[i].clone()).collect();
        compute_hv_protocol(&[trained, random], &HvConfig::default()).map_err(err)
    }

    /// Tour behind the `i`-th front point, as node indices.
    pub fn tour(&self, i: usize) -> Result<Vec<u32>, String> {
        let archive = self.archive().map_err(|e| e.to_string())?;
        let entry = archive.entries().get(i).ok_or_else(|| format!("no front point {i}"))?;
        Ok(entry.tour.order().iter().map(|&v| v as u32).collect())
    }

    /// Node coordinates as `[x1, y1, x2, y2]` per node.
    pub fn coordinates(&self) -> Vec<f64> {
        self.instance.features().to_vec()
    }
}
