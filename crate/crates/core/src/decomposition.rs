//! Weighted-sum decomposition of a bi-objective problem into `M` scalar
//! subproblems, solved in sequence with neighbour parameter transfer.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("empty weight vector"));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::contract(format!("negative weight in {values:?}")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("weights {values:?} sum to {total}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Uniform sweep over the 2-simplex: `λ_i = (i/(M−1), 1 − i/(M−1))` for
/// `i = 0..M`, ascending in the first coordinate.
pub fn make_weights(count: usize, objectives: usize) -> Result<Vec<WeightVector>> {
    if count < 2 {
        return Err(Error::contract(format!("need at least 2 subproblems, got {count}")));
    }
    if objectives != 2 {
        return Err(Error::contract(format!(
            "uniform weight sweep is defined for 2 objectives, got {objectives}"
        )));
    }
    let last = (count - 1) as f64;
    (0..count)
        .map(|i| {
            let a = i as f64 / last;
            WeightVector::new(vec![a, 1.0 - a])
        })
        .collect()
}

/// Order in which the sweep visits the weight vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Direction {
    /// From `(0, 1)` toward `(1, 0)`.
    #[default]
    Forward,
    /// From `(1, 0)` toward `(0, 1)`.
    Reverse,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::contract(format!("unknown sweep direction {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSchedule {
    weights: Vec<WeightVector>,
    epochs: Vec<usize>,
}

impl SubproblemSchedule {
    pub fn new(
        count: usize,
        epochs_first: usize,
        epochs_rest: usize,
        direction: Direction,
    ) -> Result<Self> {
        let mut weights = make_weights(count, 2)?;
        if direction == Direction::Reverse {
            weights.reverse();
        }
        let epochs = (0..count)
            .map(|i| if i == 0 { epochs_first } else { epochs_rest })
            .collect();
        Ok(Self { weights, epochs })
    }

    pub fn from_parts(weights: Vec<WeightVector>, epochs: Vec<usize>) -> Result<Self> {
        if weights.is_empty() || weights.len() != epochs.len() {
            return Err(Error::contract(format!(
                "schedule needs one epoch count per weight ({} weights, {} counts)",
                weights.len(),
                epochs.len()
            )));
        }
        Ok(Self { weights, epochs })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[WeightVector] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> &WeightVector {
        &self.weights[i]
    }

    pub fn epochs(&self, i: usize) -> usize {
        self.epochs[i]
    }
}

/// Trains one subproblem starting from `init`.
pub trait SubproblemTrainer<P> {
    fn train(&mut self, index: usize, weight: &WeightVector, epochs: usize, init: P) -> Result<P>;
}

impl<P, F> SubproblemTrainer<P> for F
where
    F: FnMut(usize, &WeightVector, usize, P) -> Result<P>,
{
    fn train(&mut self, index: usize, weight: &WeightVector, epochs: usize, init: P) -> Result<P> {
        self(index, weight, epochs, init)
    }
}

/// Runs subproblems `start..M` in order. Subproblem `start` begins from
/// `init`; every later subproblem begins from an exact copy of its
/// predecessor's result. `on_done` sees each result as soon as it exists, so
/// a failure part-way leaves everything before it persisted.
pub fn run_schedule<P, T>(
    sched: &SubproblemSchedule,
    start: usize,
    init: P,
    trainer: &mut T,
    mut on_done: impl FnMut(usize, &P) -> Result<()>,
) -> Result<Vec<P>>
where
    P: Clone,
    T: SubproblemTrainer<P>,
{
    if start >= sched.len() {
        return Ok(Vec::new());
    }
    let mut results: Vec<P> = Vec::with_capacity(sched.len() - start);
    let mut current = init;
    for i in start..sched.len() {
        let trained = trainer.train(i, sched.weight(i), sched.epochs(i), current)?;
        on_done(i, &trained)?;
        current = trained.clone();
        results.push(trained);
    }
    Ok(results)
}
