use rand::Rng as _;

use super::params::ParamStore;
use super::ModelConfig;
use crate::autodiff::{Array, BatchNormStats, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::instances::{MotspInstance, Tour};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
struct HeadIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIdx {
    heads: Vec<HeadIdx>,
    bn1: (usize, usize),
    w0: usize,
    b0: usize,
    w1: usize,
    b1: usize,
    bn2: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    w_in: usize,
    b_in: usize,
    layers: Vec<LayerIdx>,
    v_first: usize,
    v_last: usize,
    dec_heads: Vec<HeadIdx>,
    w_q: usize,
    w_k: usize,
}

/// Encoder/decoder weights plus the running statistics of every
/// batch-normalization layer (two per encoder layer).
#[derive(Clone, Debug, PartialEq)]
pub struct ActorParameters {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
    bn: Vec<BatchNormStats>,
}

/// Node embeddings and their mean, for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGraph {
    /// `[n × d_h]`
    pub nodes: Array,
    /// `[d_h]`
    pub graph: Array,
}

/// Encoder output for a batch, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct EncodedBatch {
    /// `[batch·n × d_h]`
    pub nodes: Var,
    /// `[batch × d_h]`
    pub graph: Var,
    pub batch: usize,
    pub n: usize,
}

/// Per-head keys and values for the decoder, computed once per rollout.
struct DecoderCache {
    keys: Vec<Var>,
    values: Vec<Var>,
    pointer_keys: Var,
}

/// Partial tours of a batch of rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeState {
    batch: usize,
    n: usize,
    tours: Vec<Vec<usize>>,
    visited: Vec<bool>,
}

impl DecodeState {
    pub fn new(batch: usize, n: usize) -> Self {
        Self {
            batch,
            n,
            tours: vec![Vec::with_capacity(n); batch],
            visited: vec![false; batch * n],
        }
    }

    /// Single-instance state after visiting `partial` in order.
    pub fn from_partial(n: usize, partial: &[usize]) -> Result<Self> {
        let mut s = Self::new(1, n);
        for &node in partial {
            s.visit(0, node)?;
        }
        Ok(s)
    }

    /// Number of nodes already placed (`t − 1` at decode step `t`).
    pub fn placed(&self) -> usize {
        self.tours[0].len()
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn tours(&self) -> &[Vec<usize>] {
        &self.tours
    }

    fn visit(&mut self, row: usize, node: usize) -> Result<()> {
        if node >= self.n {
            return Err(Error::OutOfBounds {
                op: "decode",
                index: node,
                extent: self.n,
            });
        }
        let k = row * self.n + node;
        if self.visited[k] {
            return Err(Error::contract(format!("node {node} visited twice")));
        }
        self.visited[k] = true;
        self.tours[row].push(node);
        Ok(())
    }
}

/// How the next node is chosen from a decode distribution.
pub enum DecodeMode<'a> {
    /// Draw from the distribution.
    Sample(&'a mut Rng),
    /// Highest probability, ties to the lowest node index.
    Greedy,
    /// Replay fixed tours (one per batch row) to score their likelihood.
    Forced(&'a [Tour]),
}

/// Outcome of decoding a batch to completion.
pub struct RolloutBatch {
    pub tours: Vec<Tour>,
    /// Sum of log-probabilities of the chosen nodes, `[batch]`.
    pub log_prob: Var,
    /// Decode distribution at each step, `[batch × n]` per step.
    pub step_probs: Vec<Var>,
}

impl ActorParameters {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (dx, dh, dk, df) = (config.dx, config.d_h, config.d_k(), config.d_ff);
        let mut s = ParamStore::new();
        let w_in = s.push_uniform("enc.W".into(), &[dh, dx], dx, rng);
        let b_in = s.push_uniform("enc.b".into(), &[dh], dx, rng);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let heads = (1..=config.heads)
                .map(|a| HeadIdx {
                    wq: s.push_uniform(format!("enc.l{l}.head{a}.Wq"), &[dk, dh], dh, rng),
                    wk: s.push_uniform(format!("enc.l{l}.head{a}.Wk"), &[dk, dh], dh, rng),
                    wv: s.push_uniform(format!("enc.l{l}.head{a}.Wv"), &[dk, dh], dh, rng),
                    wo: s.push_uniform(format!("enc.l{l}.head{a}.Wo"), &[dh, dk], dk, rng),
                })
                .collect();
            let bn1 = (
                s.push(format!("enc.l{l}.bn1.gamma"), Array::full(&[dh], 1.0)),
                s.push(format!("enc.l{l}.bn1.beta"), Array::zeros(&[dh])),
            );
            let w0 = s.push_uniform(format!("enc.l{l}.ff.W0"), &[df, dh], dh, rng);
            let b0 = s.push_uniform(format!("enc.l{l}.ff.b0"), &[df], dh, rng);
            let w1 = s.push_uniform(format!("enc.l{l}.ff.W1"), &[dh, df], df, rng);
            let b1 = s.push_uniform(format!("enc.l{l}.ff.b1"), &[dh], df, rng);
            let bn2 = (
                s.push(format!("enc.l{l}.bn2.gamma"), Array::full(&[dh], 1.0)),
                s.push(format!("enc.l{l}.bn2.beta"), Array::zeros(&[dh])),
            );
            layers.push(LayerIdx {
                heads,
                bn1,
                w0,
                b0,
                w1,
                b1,
                bn2,
            });
        }
        let v_first = s.push_uniform("dec.v1".into(), &[dh], dh, rng);
        let v_last = s.push_uniform("dec.vf".into(), &[dh], dh, rng);
        let dec_heads = (1..=config.heads)
            .map(|a| HeadIdx {
                wq: s.push_uniform(format!("dec.head{a}.Wq"), &[dk, 3 * dh], 3 * dh, rng),
                wk: s.push_uniform(format!("dec.head{a}.Wk"), &[dk, dh], dh, rng),
                wv: s.push_uniform(format!("dec.head{a}.Wv"), &[dk, dh], dh, rng),
                wo: s.push_uniform(format!("dec.head{a}.Wo"), &[dh, dk], dk, rng),
            })
            .collect();
        let w_q = s.push_uniform("dec.Wq".into(), &[dh, dh], dh, rng);
        let w_k = s.push_uniform("dec.Wk".into(), &[dh, dh], dh, rng);
        let bn = (0..2 * config.layers)
            .map(|_| BatchNormStats {
                momentum: config.bn_momentum,
                eps: config.bn_eps,
                ..BatchNormStats::new(dh)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            store: s,
            layout: Layout {
                w_in,
                b_in,
                layers,
                v_first,
                v_last,
                dec_heads,
                w_q,
                w_k,
            },
            bn,
        })
    }

    /// Rebuilds parameters from serialized arrays; names and shapes must match
    /// what `config` would produce.
    pub(crate) fn from_parts(config: ModelConfig, store: ParamStore, bn: Vec<BatchNormStats>) -> Result<Self> {
        let mut template = Self::init(&config, &mut rng::seeded(0))?;
        let same_layout = template.store.names() == store.names()
            && template
                .store
                .arrays()
                .iter()
                .zip(store.arrays())
                .all(|(a, b)| a.shape() == b.shape());
        if !same_layout {
            return Err(Error::contract("actor arrays do not match the model config"));
        }
        if bn.len() != template.bn.len() || bn.iter().any(|s| s.mean.len() != config.d_h || s.var.len() != config.d_h) {
            return Err(Error::contract("batch-norm statistics do not match the model config"));
        }
        template.store = store;
        template.bn = bn;
        Ok(template)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bn_stats(&self) -> &[BatchNormStats] {
        &self.bn
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BatchNormStats] {
        &mut self.bn
    }

    /// Names of the batch-norm layers, aligned with [`Self::bn_stats`].
    pub fn bn_names(&self) -> Vec<String> {
        (1..=self.config.layers)
            .flat_map(|l| [format!("enc.l{l}.bn1"), format!("enc.l{l}.bn2")])
            .collect()
    }

    fn check_input(&self, dx: usize, n: usize) -> Result<()> {
        if dx != self.config.dx {
            return Err(Error::contract(format!(
                "instance has dx={dx}, model expects {}",
                self.config.dx
            )));
        }
        if n < 2 {
            return Err(Error::contract(format!("instance needs n >= 2 nodes, got {n}")));
        }
        Ok(())
    }

    /// Graph-attention encoder over a batch. `features` is `[batch·n × dx]`;
    /// in train mode `bn` is updated with the batch statistics.
    pub fn encode_batch(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        features: Var,
        batch: usize,
        n: usize,
        mode: Mode,
        bn: &mut [BatchNormStats],
    ) -> Result<EncodedBatch> {
        let dx = tape.shape(features).get(1).copied().unwrap_or(0);
        self.check_input(dx, n)?;
        if tape.shape(features)[0] != batch * n {
            return Err(Error::Shape {
                op: "encode",
                lhs: tape.shape(features).to_vec(),
                rhs: vec![batch * n, self.config.dx],
            });
        }
        let cfg = &self.config;
        let (dh, dk) = (cfg.d_h, cfg.d_k());
        let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
        let lay = &self.layout;

        let h0 = tape.matmul_nt(features, vars[lay.w_in])?;
        let mut h = tape.add_bias(h0, vars[lay.b_in])?;
        for (l, layer) in lay.layers.iter().enumerate() {
            let mut mha: Option<Var> = None;
            for head in &layer.heads {
                let q = tape.matmul_nt(h, vars[head.wq])?;
                let k = tape.matmul_nt(h, vars[head.wk])?;
                let v = tape.matmul_nt(h, vars[head.wv])?;
                let q = tape.reshape(q, &[batch, n, dk])?;
                let k = tape.reshape(k, &[batch, n, dk])?;
                let v = tape.reshape(v, &[batch, n, dk])?;
                let compat = tape.batch_matmul(q, k, true)?;
                let compat = tape.scale(compat, inv_sqrt_dk)?;
                let weights = tape.masked_softmax(compat, &[])?;
                let msg = tape.batch_matmul(weights, v, false)?;
                let msg = tape.reshape(msg, &[batch * n, dk])?;
                let out = tape.matmul_nt(msg, vars[head.wo])?;
                mha = Some(match mha {
                    Some(acc) => tape.add(acc, out)?,
                    None => out,
                });
            }
            let skip = tape.add(h, mha.expect("at least one head"))?;
            let h_hat = tape.batch_norm(skip, vars[layer.bn1.0], vars[layer.bn1.1], &mut bn[2 * l], mode)?;
            let ff = tape.matmul_nt(h_hat, vars[layer.w0])?;
            let ff = tape.add_bias(ff, vars[layer.b0])?;
            let ff = tape.relu(ff)?;
            let ff = tape.matmul_nt(ff, vars[layer.w1])?;
            let ff = tape.add_bias(ff, vars[layer.b1])?;
            let skip = tape.add(h_hat, ff)?;
            h = tape.batch_norm(skip, vars[layer.bn2.0], vars[layer.bn2.1], &mut bn[2 * l + 1], mode)?;
        }
        let grouped = tape.reshape(h, &[batch, n, dh])?;
        let graph = tape.mean_over_axis(grouped, 1)?;
        Ok(EncodedBatch {
            nodes: h,
            graph,
            batch,
            n,
        })
    }

    fn decoder_cache(&self, tape: &mut Tape, vars: &[Var], enc: &EncodedBatch) -> Result<DecoderCache> {
        let (b, n, dk, dh) = (enc.batch, enc.n, self.config.d_k(), self.config.d_h);
        let mut keys = Vec::with_capacity(self.config.heads);
        let mut values = Vec::with_capacity(self.config.heads);
        for head in &self.layout.dec_heads {
            let k = tape.matmul_nt(enc.nodes, vars[head.wk])?;
            keys.push(tape.reshape(k, &[b, n, dk])?);
            let v = tape.matmul_nt(enc.nodes, vars[head.wv])?;
            values.push(tape.reshape(v, &[b, n, dk])?);
        }
        let pk = tape.matmul_nt(enc.nodes, vars[self.layout.w_k])?;
        let pointer_keys = tape.reshape(pk, &[b, n, dh])?;
        Ok(DecoderCache {
            keys,
            values,
            pointer_keys,
        })
    }

    /// Clipped pointer logits and the distribution over the next node for
    /// every row of `state`, both `[batch × n]`.
    fn decode_step_batch(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        enc: &EncodedBatch,
        cache: &DecoderCache,
        state: &DecodeState,
    ) -> Result<(Var, Var)> {
        let (b, n) = (enc.batch, enc.n);
        if state.placed() >= n {
            return Err(Error::NoFeasibleAction);
        }
        let cfg = &self.config;
        let (dh, dk) = (cfg.d_h, cfg.d_k());
        let lay = &self.layout;
        let (first, last) = if state.placed() == 0 {
            let v1 = tape.reshape(vars[lay.v_first], &[1, dh])?;
            let vf = tape.reshape(vars[lay.v_last], &[1, dh])?;
            let zeros = vec![0; b];
            (tape.gather_rows(v1, &zeros)?, tape.gather_rows(vf, &zeros)?)
        } else {
            let fi: Vec<usize> = state.tours.iter().enumerate().map(|(r, t)| r * n + t[0]).collect();
            let li: Vec<usize> = state
                .tours
                .iter()
                .enumerate()
                .map(|(r, t)| r * n + t[t.len() - 1])
                .collect();
            (tape.gather_rows(enc.nodes, &fi)?, tape.gather_rows(enc.nodes, &li)?)
        };
        let context = tape.concat(&[enc.graph, first, last])?;

        let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
        let mut glimpse: Option<Var> = None;
        for (a, head) in lay.dec_heads.iter().enumerate() {
            let q = tape.matmul_nt(context, vars[head.wq])?;
            let q = tape.reshape(q, &[b, 1, dk])?;
            let u = tape.batch_matmul(q, cache.keys[a], true)?;
            let u = tape.scale(u, inv_sqrt_dk)?;
            let u = tape.reshape(u, &[b, n])?;
            let w = tape.masked_softmax(u, &state.visited)?;
            let w = tape.reshape(w, &[b, 1, n])?;
            let hc = tape.batch_matmul(w, cache.values[a], false)?;
            let hc = tape.reshape(hc, &[b, dk])?;
            let out = tape.matmul_nt(hc, vars[head.wo])?;
            glimpse = Some(match glimpse {
                Some(acc) => tape.add(acc, out)?,
                None => out,
            });
        }
        let hc = glimpse.expect("at least one head");

        let q = tape.matmul_nt(hc, vars[lay.w_q])?;
        let q = tape.reshape(q, &[b, 1, dh])?;
        let logits = tape.batch_matmul(q, cache.pointer_keys, true)?;
        let logits = tape.reshape(logits, &[b, n])?;
        let logits = tape.tanh(logits)?;
        let logits = tape.scale(logits, cfg.clip)?;
        let probs = tape.masked_softmax(logits, &state.visited)?;
        Ok((logits, probs))
    }

    /// Encodes once, then decodes `n` steps for every row of the batch.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout_batch(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        features: Var,
        batch: usize,
        n: usize,
        bn_mode: Mode,
        bn: &mut [BatchNormStats],
        mut decode: DecodeMode<'_>,
    ) -> Result<RolloutBatch> {
        if let DecodeMode::Forced(tours) = &decode {
            if tours.len() != batch || tours.iter().any(|t| t.len() != n) {
                return Err(Error::contract("forced tours must match the batch"));
            }
        }
        let enc = self.encode_batch(tape, vars, features, batch, n, bn_mode, bn)?;
        let cache = self.decoder_cache(tape, vars, &enc)?;
        let mut state = DecodeState::new(batch, n);
        let mut log_prob: Option<Var> = None;
        let mut step_probs = Vec::with_capacity(n);
        for t in 0..n {
            let (_, probs) = self.decode_step_batch(tape, vars, &enc, &cache, &state)?;
            step_probs.push(probs);
            let pv = tape.value(probs).data();
            let mut chosen = Vec::with_capacity(batch);
            for r in 0..batch {
                let row = &pv[r * n..(r + 1) * n];
                let mask = &state.visited[r * n..(r + 1) * n];
                let node = match &mut decode {
                    DecodeMode::Greedy => argmax_unmasked(row, mask),
                    DecodeMode::Sample(rng) => sample_unmasked(row, mask, rng),
                    DecodeMode::Forced(tours) => tours[r].order()[t],
                };
                chosen.push(node);
            }
            let flat = tape.reshape(probs, &[batch * n, 1])?;
            let idx: Vec<usize> = chosen.iter().enumerate().map(|(r, &c)| r * n + c).collect();
            for (r, &c) in chosen.iter().enumerate() {
                state.visit(r, c)?;
            }
            let picked = tape.gather_rows(flat, &idx)?;
            let lp = tape.log(picked)?;
            log_prob = Some(match log_prob {
                Some(acc) => tape.add(acc, lp)?,
                None => lp,
            });
        }
        let log_prob = tape.reshape(log_prob.expect("n >= 2"), &[batch])?;
        let tours = state
            .tours
            .into_iter()
            .map(Tour::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(RolloutBatch {
            tours,
            log_prob,
            step_probs,
        })
    }

    fn features_of(inst: &MotspInstance) -> Result<Array> {
        Array::new(vec![inst.n(), inst.dx()], inst.features().to_vec())
    }

    /// Encoder output for one instance; batch norm uses running statistics.
    pub fn encode(&self, inst: &MotspInstance) -> Result<EncodedGraph> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let x = tape.constant(Self::features_of(inst)?);
        let mut bn = self.bn.clone();
        let enc = self.encode_batch(&mut tape, &vars, x, 1, inst.n(), Mode::Infer, &mut bn)?;
        Ok(EncodedGraph {
            nodes: tape.value(enc.nodes).clone(),
            graph: tape.value(enc.graph).clone().reshaped(&[self.config.d_h])?,
        })
    }

    /// Next-node distribution after visiting `partial`, evaluated from scratch.
    pub fn decode_step(&self, inst: &MotspInstance, partial: &[usize]) -> Result<Vec<f64>> {
        let state = DecodeState::from_partial(inst.n(), partial)?;
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let x = tape.constant(Self::features_of(inst)?);
        let mut bn = self.bn.clone();
        let enc = self.encode_batch(&mut tape, &vars, x, 1, inst.n(), Mode::Infer, &mut bn)?;
        let cache = self.decoder_cache(&mut tape, &vars, &enc)?;
        let (_, p) = self.decode_step_batch(&mut tape, &vars, &enc, &cache, &state)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Pre-softmax pointer logits `C·tanh(qᵀk_i)` after visiting `partial`.
    pub fn decode_logits(&self, inst: &MotspInstance, partial: &[usize]) -> Result<Vec<f64>> {
        let state = DecodeState::from_partial(inst.n(), partial)?;
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let x = tape.constant(Self::features_of(inst)?);
        let mut bn = self.bn.clone();
        let enc = self.encode_batch(&mut tape, &vars, x, 1, inst.n(), Mode::Infer, &mut bn)?;
        let cache = self.decoder_cache(&mut tape, &vars, &enc)?;
        let (logits, _) = self.decode_step_batch(&mut tape, &vars, &enc, &cache, &state)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// One full decode of a single instance with running batch-norm
    /// statistics. Returns the tour and its total log-probability.
    pub fn rollout(&self, inst: &MotspInstance, greedy: bool, seed: u64) -> Result<(Tour, f64)> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let x = tape.constant(Self::features_of(inst)?);
        let mut bn = self.bn.clone();
        let mut rng = rng::seeded(seed);
        let mode = if greedy {
            DecodeMode::Greedy
        } else {
            DecodeMode::Sample(&mut rng)
        };
        let out = self.rollout_batch(&mut tape, &vars, x, 1, inst.n(), Mode::Infer, &mut bn, mode)?;
        let lp = tape.value(out.log_prob).item();
        Ok((out.tours.into_iter().next().expect("batch of one"), lp))
    }

    /// Greedy tours for many instances of equal size in one batch.
    pub fn greedy_tours(&self, instances: &[MotspInstance]) -> Result<Vec<Tour>> {
        let Some(first) = instances.first() else {
            return Ok(Vec::new());
        };
        let n = first.n();
        if instances.iter().any(|i| i.n() != n) {
            return Err(Error::contract("greedy_tours needs instances of equal size"));
        }
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let data: Vec<f64> = instances.iter().flat_map(|i| i.features().to_vec()).collect();
        let x = tape.constant(Array::new(vec![instances.len() * n, first.dx()], data)?);
        let mut bn = self.bn.clone();
        let out = self.rollout_batch(
            &mut tape,
            &vars,
            x,
            instances.len(),
            n,
            Mode::Infer,
            &mut bn,
            DecodeMode::Greedy,
        )?;
        Ok(out.tours)
    }
}

fn argmax_unmasked(row: &[f64], mask: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (i, (&p, &m)) in row.iter().zip(mask).enumerate() {
        if !m && p > best_p {
            best = i;
            best_p = p;
        }
    }
    best
}

fn sample_unmasked(row: &[f64], mask: &[bool], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = usize::MAX;
    for (i, (&p, &m)) in row.iter().zip(mask).enumerate() {
        if m {
            continue;
        }
        last = i;
        cum += p;
        if u < cum {
            return i;
        }
    }
    last
}
