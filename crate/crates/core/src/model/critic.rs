use super::params::ParamStore;
use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::instances::MotspInstance;
use crate::rng::Rng;

/// Channel chain of the four kernel-1 convolution stages.
pub const CRITIC_CHANNELS: [usize; 5] = [4, 128, 20, 20, 1];

pub(crate) fn channels_for_input(dx: usize) -> Vec<usize> {
    let mut c = CRITIC_CHANNELS.to_vec();
    c[0] = dx;
    c
}

/// Baseline network: kernel-1, stride-1 convolutions over the node axis
/// (equivalently, a per-node MLP), ReLU between stages, mean over nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticParameters {
    channels: Vec<usize>,
    store: ParamStore,
}

impl CriticParameters {
    pub fn init(channels: &[usize], rng: &mut Rng) -> Result<Self> {
        if channels.len() < 2 || channels.contains(&0) || *channels.last().unwrap() != 1 {
            return Err(Error::contract(format!(
                "critic channels must be positive and end in 1: {channels:?}"
            )));
        }
        let mut store = ParamStore::new();
        for (s, pair) in channels.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            store.push_uniform(format!("critic.conv{}.W", s + 1), &[cout, cin], cin, rng);
            store.push_uniform(format!("critic.conv{}.b", s + 1), &[cout], cin, rng);
        }
        Ok(Self {
            channels: channels.to_vec(),
            store,
        })
    }

    pub(crate) fn from_store(channels: Vec<usize>, store: ParamStore) -> Result<Self> {
        let mut rng = crate::rng::seeded(0);
        let template = Self::init(&channels, &mut rng)?;
        if template.store.names() != store.names()
            || template
                .store
                .arrays()
                .iter()
                .zip(store.arrays())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::contract("critic arrays do not match the channel chain"));
        }
        Ok(Self { channels, store })
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Baseline values `[batch]` for `features` laid out as `[batch·n × dx]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: Var, batch: usize, n: usize) -> Result<Var> {
        let (rows, cols) = match *tape.shape(features) {
            [r, c] => (r, c),
            ref s => {
                return Err(Error::Shape {
                    op: "critic",
                    lhs: s.to_vec(),
                    rhs: vec![batch * n, self.channels[0]],
                })
            }
        };
        if rows != batch * n || cols != self.channels[0] {
            return Err(Error::Shape {
                op: "critic",
                lhs: vec![rows, cols],
                rhs: vec![batch * n, self.channels[0]],
            });
        }
        let stages = self.channels.len() - 1;
        let mut h = features;
        for s in 0..stages {
            let w = vars[2 * s];
            let b = vars[2 * s + 1];
            h = tape.matmul_nt(h, w)?;
            h = tape.add_bias(h, b)?;
            if s + 1 < stages {
                h = tape.relu(h)?;
            }
        }
        let per_node = tape.reshape(h, &[batch, n])?;
        tape.mean_over_axis(per_node, 1)
    }

    /// Baseline `b_φ(X)` for a single instance.
    pub fn value(&self, inst: &MotspInstance) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let feats = Array::new(vec![inst.n(), inst.dx()], inst.features().to_vec())?;
        let x = tape.constant(feats);
        let out = self.forward(&mut tape, &vars, x, 1, inst.n())?;
        Ok(tape.value(out).item())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::MotspInstance;

    #[test]
    fn full_scale_channel_chain() {
        let mut rng = crate::rng::seeded(1);
        let c = CriticParameters::init(&CRITIC_CHANNELS, &mut rng).unwrap();
        let shapes: Vec<&[usize]> = c.store().arrays().iter().map(Array::shape).collect();
        assert_eq!(
            shapes,
            vec![&[128, 4][..], &[128], &[20, 128], &[20], &[20, 20], &[20], &[1, 20], &[1]]
        );
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut rng = crate::rng::seeded(1);
        let mut c = CriticParameters::init(&CRITIC_CHANNELS, &mut rng).unwrap();
        for a in c.store_mut().arrays_mut() {
            a.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let inst = MotspInstance::generate_random(7, 3).unwrap();
        assert_eq!(c.value(&inst).unwrap(), 0.0);
    }

    #[test]
    fn node_order_does_not_matter() {
        let mut rng = crate::rng::seeded(2);
        let c = CriticParameters::init(&CRITIC_CHANNELS, &mut rng).unwrap();
        let inst = MotspInstance::generate_random(6, 3).unwrap();
        let perm = [3, 5, 0, 1, 4, 2];
        let feats: Vec<f64> = perm.iter().flat_map(|&i| inst.feature(i).to_vec()).collect();
        let shuffled = MotspInstance::from_features(6, 2, feats).unwrap();
        let (a, b) = (c.value(&inst).unwrap(), c.value(&shuffled).unwrap());
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn hand_set_single_channel_network() {
        // 2 nodes, channels 4 -> 1 -> 1 -> 1 -> 1
        let mut rng = crate::rng::seeded(0);
        let mut c = CriticParameters::init(&[4, 1, 1, 1, 1], &mut rng).unwrap();
        let set = |c: &mut CriticParameters, name: &str, vals: &[f64]| {
            c.store_mut()
                .get_mut(name)
                .unwrap()
                .data_mut()
                .copy_from_slice(vals);
        };
        set(&mut c, "critic.conv1.W", &[1.0, -2.0, 0.5, 3.0]);
        set(&mut c, "critic.conv1.b", &[0.1]);
        set(&mut c, "critic.conv2.W", &[2.0]);
        set(&mut c, "critic.conv2.b", &[-0.5]);
        set(&mut c, "critic.conv3.W", &[-1.0]);
        set(&mut c, "critic.conv3.b", &[4.0]);
        set(&mut c, "critic.conv4.W", &[0.25]);
        set(&mut c, "critic.conv4.b", &[1.0]);
        let inst = MotspInstance::from_features(2, 2, vec![0.2, 0.1, 0.4, 0.3, 0.9, 0.6, 0.1, 0.05]).unwrap();
        // node 0: 0.2 - 0.2 + 0.2 + 0.9 + 0.1 = 1.2 -> 2.4-0.5=1.9 -> -1.9+4=2.1 -> 0.525+1 = 1.525
        // node 1: 0.9 - 1.2 + 0.05 + 0.15 + 0.1 = 0.0 -> relu 0 -> -0.5 -> relu 0 -> 4 -> 1+1 = 2.0
        let expected = (1.525 + 2.0) / 2.0;
        assert!((c.value(&inst).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut rng = crate::rng::seeded(0);
        let c = CriticParameters::init(&[3, 2, 1], &mut rng).unwrap();
        let inst = MotspInstance::generate_random(4, 0).unwrap();
        assert!(matches!(c.value(&inst), Err(Error::Shape { .. })));
        assert!(CriticParameters::init(&[4, 2, 3], &mut rng).is_err());
    }
}
