//! Attention-model actor and convolutional critic built on [`crate::autodiff`].

mod actor;
mod critic;
mod params;
pub mod serialize;

pub use actor::{
    ActorParameters, DecodeMode, DecodeState, EncodedBatch, EncodedGraph, RolloutBatch,
};
pub use critic::{CriticParameters, CRITIC_CHANNELS};
pub use params::ParamStore;

use crate::error::{Error, Result};

/// Architecture hyperparameters of the actor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Node feature width.
    pub dx: usize,
    /// Embedding width.
    pub d_h: usize,
    /// Encoder attention layers.
    pub layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Hidden width of the feed-forward sublayer.
    pub d_ff: usize,
    /// Pointer logits are clipped to `[-clip, clip]` by `clip·tanh(·)`.
    pub clip: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dx: 4,
            d_h: 128,
            layers: 1,
            heads: 8,
            d_ff: 512,
            clip: 10.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dx == 0 || self.d_h == 0 || self.heads == 0 || self.d_ff == 0 || self.layers == 0 {
            return Err(Error::contract(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::contract(format!(
                "heads ({}) must divide d_h ({})",
                self.heads, self.d_h
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::contract(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }

    /// Per-head query/key/value width `d_h / heads`.
    pub fn d_k(&self) -> usize {
        self.d_h / self.heads
    }
}

/// Everything trained for one subproblem.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub actor: ActorParameters,
    pub critic: CriticParameters,
}

impl ModelParameters {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::seeded(seed);
        let actor = ActorParameters::init(config, &mut rng)?;
        let critic = CriticParameters::init(&critic::channels_for_input(config.dx), &mut rng)?;
        Ok(Self { actor, critic })
    }

    /// Rounds every value to `f32`, the precision of the checkpoint format.
    pub fn quantized(&self) -> Result<Self> {
        serialize::decode(&serialize::encode(self))
    }
}

#[cfg(test)]
mod tests;
