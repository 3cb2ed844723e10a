use serde::{Deserialize, Serialize};

use super::{ArchParams, SpaceConfig};
use crate::adcore::{Tape, Tensor, Var};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvRef {
    pub weight: usize,
    pub bias: usize,
}

/// One `(dilation, spatial)` operator candidate: pool by `spatial`, two
/// kernel-`k` convolutions with dilation `dilation` (ReLU between them),
/// upsample back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpRef {
    pub dilation: usize,
    pub spatial: usize,
    pub convs: [ConvRef; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRef {
    pub ops: Vec<OpRef>,
}

/// What a parameter tensor belongs to, for freezing pruned structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamOwner {
    Fixed,
    Op {
        stage: usize,
        layer: usize,
        op: usize,
    },
}

/// Shared-weight network over every candidate. Parameters live in one flat
/// list; the structural fields hold indices into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperNet {
    pub config: SpaceConfig,
    pub params: Vec<Tensor>,
    pub owners: Vec<ParamOwner>,
    pub stem: ConvRef,
    /// 1x1 projection entering stage `i + 1`.
    pub transitions: Vec<ConvRef>,
    pub stages: Vec<Vec<LayerRef>>,
    pub head: ConvRef,
    /// Per stage, prefix masks for each channel option.
    pub masks: Vec<Vec<Vec<f64>>>,
}

/// Prefix masks: mask `k` has its first `options[k]` entries set to one.
pub fn make_channel_masks(options: &[usize], c_max: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(&bad) = options.iter().find(|&&c| c > c_max) {
        return Err(Error::config(
            "channels",
            format!("option {bad} exceeds C_max {c_max}"),
        ));
    }
    Ok(options
        .iter()
        .map(|&c| (0..c_max).map(|i| if i < c { 1.0 } else { 0.0 }).collect())
        .collect())
}

struct ParamBuilder {
    rng: SeededRng,
    params: Vec<Tensor>,
    owners: Vec<ParamOwner>,
}

impl ParamBuilder {
    /// Fan-in scaled uniform initialisation `U(-1/√fan_in, 1/√fan_in)` for
    /// both weight and bias.
    fn conv(&mut self, c_out: usize, c_in: usize, kernel: usize, owner: ParamOwner) -> ConvRef {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| self.rng.uniform_range(-bound, bound))
                .collect()
        };
        let w = draw(c_out * c_in * kernel);
        let b = draw(c_out);
        self.params
            .push(Tensor::from_parts(vec![c_out, c_in, kernel], w));
        self.params.push(Tensor::from_parts(vec![c_out], b));
        self.owners.extend([owner, owner]);
        ConvRef {
            weight: self.params.len() - 2,
            bias: self.params.len() - 1,
        }
    }
}

/// Builds the supernet and its architecture parameters. All logits start at
/// zero; weights are drawn from a SplitMix64 stream seeded with `seed`, in
/// the order stem, per stage (transition, layers, operators, convolutions),
/// head.
pub fn build_supernet(config: &SpaceConfig, seed: u64) -> Result<(SuperNet, ArchParams)> {
    config.validate()?;
    let k = config.kernel;
    let mut pb = ParamBuilder {
        rng: SeededRng::new(seed),
        params: Vec::new(),
        owners: Vec::new(),
    };
    let first_width = config
        .stages
        .first()
        .map_or(config.in_channels, |s| s.width);
    let stem = pb.conv(first_width, config.in_channels, k, ParamOwner::Fixed);
    let mut transitions = Vec::new();
    let mut stages = Vec::new();
    let mut masks = Vec::new();
    for (s, st) in config.stages.iter().enumerate() {
        if s > 0 {
            let prev = config.stages[s - 1].width;
            transitions.push(pb.conv(st.width, prev, 1, ParamOwner::Fixed));
        }
        let mut layers = Vec::new();
        for layer in 0..st.max_depth() {
            let ops = (0..config.ops_per_layer())
                .map(|op| {
                    let owner = ParamOwner::Op {
                        stage: s,
                        layer,
                        op,
                    };
                    let (dilation, spatial) = config.op_choice(op);
                    let c0 = pb.conv(st.width, st.width, k, owner);
                    let c1 = pb.conv(st.width, st.width, k, owner);
                    OpRef {
                        dilation,
                        spatial,
                        convs: [c0, c1],
                    }
                })
                .collect();
            layers.push(LayerRef { ops });
        }
        stages.push(layers);
        masks.push(make_channel_masks(&st.channels, st.width)?);
    }
    let last_width = config.stages.last().map_or(first_width, |s| s.width);
    let head = pb.conv(config.classes, last_width, 1, ParamOwner::Fixed);
    let net = SuperNet {
        config: config.clone(),
        params: pb.params,
        owners: pb.owners,
        stem,
        transitions,
        stages,
        head,
        masks,
    };
    Ok((net, ArchParams::new(config)))
}

impl SuperNet {
    /// Places every parameter on the tape as a leaf, in `params` order.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Places every parameter on the tape as a constant, for passes that
    /// differentiate only the architecture.
    pub fn attach_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

/// Tape-side weights of one group's candidates.
#[derive(Clone, Debug, Default)]
pub struct GroupMix {
    /// Weight node per candidate; `None` for candidates that contribute
    /// nothing (inactive, zero probability, or frozen group).
    pub weights: Vec<Option<Var>>,
    /// Set when the mixture is exactly the single candidate `c` with weight 1.
    pub unit: Option<usize>,
    /// Probability vector over the active candidates, for relaxed groups with
    /// more than one active candidate.
    pub probs: Option<Var>,
    /// Active candidate ids in the order used by `probs`.
    pub active: Vec<usize>,
}

/// Candidate weights for every group of an [`ArchParams`], either relaxed
/// (differentiable in the logits) or fixed constants.
#[derive(Clone, Debug)]
pub struct MixtureWeights {
    pub groups: Vec<GroupMix>,
}

impl MixtureWeights {
    /// Creates one logits leaf per open group and the relaxed mixture built
    /// on them. Returns the leaves alongside, `None` for closed groups.
    pub fn relaxed(tape: &mut Tape, arch: &ArchParams) -> Result<(Self, Vec<Option<Var>>)> {
        let leaves: Vec<Option<Var>> = arch
            .groups
            .iter()
            .map(|g| {
                g.is_open()
                    .then(|| tape.leaf(Tensor::vector(g.logits.clone())))
            })
            .collect();
        let mix = Self::relaxed_with(tape, arch, &leaves)?;
        Ok((mix, leaves))
    }

    /// Relaxed mixture over caller-provided logits nodes (one full-length
    /// vector per open group): `p = normalize(sigmoid(θ[active]))`.
    pub fn relaxed_with(
        tape: &mut Tape,
        arch: &ArchParams,
        logits: &[Option<Var>],
    ) -> Result<Self> {
        let mut groups = Vec::with_capacity(arch.len());
        for (g, lg) in arch.groups.iter().zip(logits) {
            let active = g.active_ids();
            let mut mix = GroupMix {
                weights: vec![None; g.len()],
                unit: None,
                probs: None,
                active: active.clone(),
            };
            if g.frozen {
                mix.active.clear();
            } else if active.len() == 1 {
                mix.unit = Some(active[0]);
                mix.weights[active[0]] = Some(tape.scalar_const(1.0));
            } else {
                let lg = lg.expect("open group needs a logits node");
                let picked = tape.gather(lg, &active)?;
                let s = tape.sigmoid(picked)?;
                let p = tape.normalize(s)?;
                for (pos, &c) in active.iter().enumerate() {
                    mix.weights[c] = Some(tape.select(p, pos)?);
                }
                mix.probs = Some(p);
            }
            groups.push(mix);
        }
        Ok(MixtureWeights { groups })
    }

    /// Constant mixture from full-length probability vectors. Candidates with
    /// zero probability are skipped; a vector with a single 1 is a unit mix.
    pub fn fixed(tape: &mut Tape, arch: &ArchParams, probs: &[Vec<f64>]) -> Self {
        let groups = arch
            .groups
            .iter()
            .zip(probs)
            .map(|(g, p)| {
                let mut mix = GroupMix {
                    weights: vec![None; g.len()],
                    unit: None,
                    probs: None,
                    active: Vec::new(),
                };
                if g.frozen {
                    return mix;
                }
                let nonzero: Vec<usize> = (0..g.len())
                    .filter(|&i| g.active[i] && p[i] != 0.0)
                    .collect();
                if let [only] = nonzero[..] {
                    if p[only] == 1.0 {
                        mix.unit = Some(only);
                    }
                }
                for &c in &nonzero {
                    mix.weights[c] = Some(tape.scalar_const(p[c]));
                }
                mix.active = nonzero;
                mix
            })
            .collect();
        MixtureWeights { groups }
    }

    /// Unit mixture selecting candidate `choice[g]` in every non-frozen group.
    pub fn one_hot(tape: &mut Tape, arch: &ArchParams, choice: &[usize]) -> Self {
        let probs: Vec<Vec<f64>> = arch
            .groups
            .iter()
            .zip(choice)
            .map(|(g, &c)| {
                (0..g.len())
                    .map(|i| if i == c { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::fixed(tape, arch, &probs)
    }
}

/// Weighted sum `Σ_c w_c · x_c` over contributing candidates, or the single
/// input itself for a unit mixture.
fn mix_outputs(tape: &mut Tape, mix: &GroupMix, outputs: &[(usize, Var)]) -> Result<Var> {
    if let Some(u) = mix.unit {
        let (_, v) = outputs
            .iter()
            .find(|(c, _)| *c == u)
            .expect("unit candidate evaluated");
        return Ok(*v);
    }
    let mut terms = Vec::with_capacity(outputs.len());
    for &(c, x) in outputs {
        let w = mix.weights[c].expect("evaluated candidate has a weight");
        terms.push(tape.scale_by(x, w)?);
    }
    tape.add_all(&terms)
}

/// Expected channel mask `Σ_k w_k M_k`, or `None` when it is all ones.
fn channel_mask(
    tape: &mut Tape,
    mix: &GroupMix,
    masks: &[Vec<f64>],
    width: usize,
) -> Result<Option<Var>> {
    if let Some(u) = mix.unit {
        if masks[u].iter().all(|&m| m == 1.0) {
            return Ok(None);
        }
        return Ok(Some(tape.constant(Tensor::vector(masks[u].clone()))));
    }
    let mut terms = Vec::new();
    for (k, w) in mix.weights.iter().enumerate() {
        if let Some(w) = w {
            let m = tape.constant(Tensor::vector(masks[k].clone()));
            terms.push(tape.scale_by(m, *w)?);
        }
    }
    debug_assert_eq!(masks[0].len(), width);
    Ok(Some(tape.add_all(&terms)?))
}

/// `up(M2 ⊙ conv2(relu(M1 ⊙ conv1(pool(x)))))` for one operator candidate.
pub(crate) fn operator_forward(
    tape: &mut Tape,
    x: Var,
    op: &OpRef,
    params: &[Var],
    masks: [Option<Var>; 2],
) -> Result<Var> {
    let mut h = if op.spatial > 1 {
        tape.avg_pool(x, op.spatial)?
    } else {
        x
    };
    for (i, conv) in op.convs.iter().enumerate() {
        h = tape.conv1d(h, params[conv.weight], params[conv.bias], op.dilation)?;
        if let Some(m) = masks[i] {
            h = tape.channel_mask(h, m)?;
        }
        if i == 0 {
            h = tape.relu(h)?;
        }
    }
    if op.spatial > 1 {
        h = tape.upsample(h, op.spatial)?;
    }
    Ok(h)
}

/// Relaxed supernet forward pass, `(B, C_in, L)` → `(B, K, L)` logits.
///
/// Each layer adds its operator mixture to the unmasked residual stream;
/// each stage output mixes the chain outputs after every surviving depth.
/// Candidates without a weight in `mix` are never evaluated.
pub fn supernet_forward(
    tape: &mut Tape,
    net: &SuperNet,
    arch: &ArchParams,
    mix: &MixtureWeights,
    params: &[Var],
    batch: Var,
) -> Result<Var> {
    let cfg = &net.config;
    let stem = tape.conv1d(batch, params[net.stem.weight], params[net.stem.bias], 1)?;
    let mut h = tape.relu(stem)?;
    for (s, st) in cfg.stages.iter().enumerate() {
        if s > 0 {
            let t = net.transitions[s - 1];
            h = tape.conv1d(h, params[t.weight], params[t.bias], 1)?;
        }
        let depth_mix = &mix.groups[arch.depth_id(s)];
        let max_depth = st.depths[arch.max_active_depth(s)];
        let mut chain = Vec::with_capacity(max_depth);
        let mut x = h;
        for layer in 0..max_depth {
            let layer_mix = &mix.groups[arch.layer_id(s, layer)];
            let mut outs = Vec::new();
            for (op_id, op) in net.stages[s][layer].ops.iter().enumerate() {
                if layer_mix.weights[op_id].is_none() {
                    continue;
                }
                let ids = arch.conv_ids(s, layer, op_id);
                let m0 = channel_mask(tape, &mix.groups[ids[0]], &net.masks[s], st.width)?;
                let m1 = channel_mask(tape, &mix.groups[ids[1]], &net.masks[s], st.width)?;
                outs.push((op_id, operator_forward(tape, x, op, params, [m0, m1])?));
            }
            let mixed = mix_outputs(tape, layer_mix, &outs)?;
            x = tape.add(x, mixed)?;
            chain.push(x);
        }
        let taps: Vec<(usize, Var)> = st
            .depths
            .iter()
            .enumerate()
            .filter(|(c, _)| depth_mix.weights[*c].is_some())
            .map(|(c, &d)| (c, chain[d - 1]))
            .collect();
        h = mix_outputs(tape, depth_mix, &taps)?;
    }
    tape.conv1d(h, params[net.head.weight], params[net.head.bias], 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_masks() {
        assert_eq!(
            make_channel_masks(&[4, 8], 8).unwrap(),
            vec![vec![1., 1., 1., 1., 0., 0., 0., 0.], vec![1.; 8]]
        );
        assert_eq!(make_channel_masks(&[8], 8).unwrap(), vec![vec![1.; 8]]);
        let m = make_channel_masks(&[2, 4, 6], 6).unwrap();
        assert_eq!(
            m.iter().map(|v| v.iter().sum::<f64>()).collect::<Vec<_>>(),
            vec![2., 4., 6.]
        );
        assert!(make_channel_masks(&[4, 9], 8).is_err());
    }

    #[test]
    fn weighted_prefix_mask_sum() {
        let masks = make_channel_masks(&[4, 8], 8).unwrap();
        let mut tape = Tape::new();
        let half = tape.scalar_const(0.5);
        let mix = GroupMix {
            weights: vec![Some(half), Some(half)],
            unit: None,
            probs: None,
            active: vec![0, 1],
        };
        let m = channel_mask(&mut tape, &mix, &masks, 8).unwrap().unwrap();
        assert_eq!(
            tape.value(m).values(),
            &[1., 1., 1., 1., 0.5, 0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn build_is_deterministic() {
        let (a, _) = build_supernet(&SpaceConfig::tiny(), 9).unwrap();
        let (b, _) = build_supernet(&SpaceConfig::tiny(), 9).unwrap();
        let (c, _) = build_supernet(&SpaceConfig::tiny(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn build_rejects_invalid_config() {
        let mut c = SpaceConfig::tiny();
        c.dilations.clear();
        assert!(build_supernet(&c, 0)
            .unwrap_err()
            .to_string()
            .contains("dilations"));
    }
}
