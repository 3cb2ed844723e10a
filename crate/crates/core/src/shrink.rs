//! Progressive shrinking of the solution space by retaining probability.

use serde::{Deserialize, Serialize};

use crate::archspace::{ArchParamGroup, ArchParams, GroupOwner, Level, SpaceConfig, LEVELS};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `r_i = σ(θ_i) / max_{j active} σ(θ_j)` for each active candidate, in
/// ascending candidate order.
pub fn retaining_probs(group: &ArchParamGroup) -> Vec<f64> {
    let s: Vec<f64> = group
        .active_ids()
        .iter()
        .map(|&i| sigmoid(group.logits[i]))
        .collect();
    let max = s.iter().copied().fold(f64::MIN, f64::max);
    s.iter().map(|x| x / max).collect()
}

/// Deactivates every active candidate with `r ≤ h`. The first candidate
/// reaching `r = 1` is always kept. Returns the removed ids and the
/// retaining probabilities they had.
pub fn prune_group(group: &mut ArchParamGroup, h: f64) -> (Vec<usize>, Vec<f64>) {
    let ids = group.active_ids();
    let r = retaining_probs(group);
    let keep = r.iter().position(|&x| x == 1.0).unwrap_or(0);
    let mut removed = Vec::new();
    let mut at = Vec::new();
    for (k, (&id, &ri)) in ids.iter().zip(&r).enumerate() {
        if k != keep && ri <= h {
            group.active[id] = false;
            removed.push(id);
            at.push(ri);
        }
    }
    (removed, at)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkEvent {
    pub step: usize,
    pub level: Level,
    pub owner: GroupOwner,
    pub removed: Vec<usize>,
    pub retaining: Vec<f64>,
    /// Groups frozen out as a consequence of this removal.
    pub cascaded: Vec<GroupOwner>,
}

fn freeze(arch: &mut ArchParams, id: usize, out: &mut Vec<GroupOwner>) {
    let g = &mut arch.groups[id];
    if !g.frozen {
        g.frozen = true;
        out.push(g.owner);
    }
}

/// One shrinking pass over all levels in order depth → dilation-spatial →
/// channel, with cascade removal of dependent groups.
pub fn hierarchical_shrink_step(
    arch: &mut ArchParams,
    config: &SpaceConfig,
    h: f64,
    step: usize,
) -> Vec<ShrinkEvent> {
    let mut events = Vec::new();
    for level in LEVELS {
        for id in 0..arch.len() {
            let g = &arch.groups[id];
            if g.level != level || !g.is_open() {
                continue;
            }
            let (removed, retaining) = prune_group(&mut arch.groups[id], h);
            if removed.is_empty() {
                continue;
            }
            let owner = arch.groups[id].owner;
            let mut cascaded = Vec::new();
            match owner {
                GroupOwner::Stage { stage } => {
                    let depth = config.stages[stage].depths[arch.max_active_depth(stage)];
                    for layer in depth..arch.layers_in(stage) {
                        freeze(arch, arch.layer_id(stage, layer), &mut cascaded);
                        for op in 0..config.ops_per_layer() {
                            for c in arch.conv_ids(stage, layer, op) {
                                freeze(arch, c, &mut cascaded);
                            }
                        }
                    }
                }
                GroupOwner::Layer { stage, layer } => {
                    for &op in &removed {
                        for c in arch.conv_ids(stage, layer, op) {
                            freeze(arch, c, &mut cascaded);
                        }
                    }
                }
                GroupOwner::Conv { .. } => {}
            }
            events.push(ShrinkEvent {
                step,
                level,
                owner,
                removed,
                retaining,
                cascaded,
            });
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit(s: f64) -> f64 {
        (s / (1.0 - s)).ln()
    }

    fn group(sig: &[f64]) -> ArchParamGroup {
        let mut g = ArchParamGroup::new(
            Level::DilationSpatial,
            GroupOwner::Layer { stage: 0, layer: 0 },
            sig.len(),
        );
        g.logits = sig.iter().map(|&s| logit(s)).collect();
        g
    }

    #[test]
    fn retaining_examples() {
        let r = retaining_probs(&group(&[0.9, 0.45, 0.08]));
        assert!(
            (r[0] - 1.0).abs() < 1e-15
                && (r[1] - 0.5).abs() < 1e-12
                && (r[2] - 0.088889).abs() < 1e-6
        );
        assert_eq!(retaining_probs(&group(&[0.3; 4])), vec![1.0; 4]);
        assert_eq!(retaining_probs(&group(&[0.2])), vec![1.0]);
    }

    #[test]
    fn prune_examples() {
        let mut g = group(&[0.9, 0.45, 0.08]);
        assert_eq!(prune_group(&mut g, 0.1).0, vec![2]);
        assert_eq!(g.active, vec![true, true, false]);

        let mut g = group(&[0.9, 0.45, 0.08]);
        g.logits[2] = logit(0.09);
        assert_eq!(prune_group(&mut g, 0.1).0, vec![2]);

        let mut g = group(&[0.9, 0.45, 0.5]);
        assert!(prune_group(&mut g, 0.1).0.is_empty());
        assert_eq!(g.n_active(), 3);
    }

    #[test]
    fn argmax_survives_extreme_threshold() {
        let mut g = group(&[0.5, 0.5, 0.5]);
        prune_group(&mut g, 0.999999);
        assert_eq!(g.n_active(), 3);
        let mut g = group(&[0.1, 0.9, 0.5]);
        prune_group(&mut g, 0.999999);
        assert_eq!(g.active_ids(), vec![1]);
    }

    #[test]
    fn depth_prune_cascades_to_top_layer() {
        let cfg = SpaceConfig::tiny();
        let mut arch = ArchParams::new(&cfg);
        let d = arch.depth_id(0);
        arch.groups[d].logits = vec![2.0, 2.0, -4.0];
        let events = hierarchical_shrink_step(&mut arch, &cfg, 0.1, 0);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].removed, vec![2]);
        assert!(arch.groups[arch.layer_id(0, 2)].frozen);
        assert!(!arch.groups[arch.layer_id(0, 1)].frozen);
        for op in 0..cfg.ops_per_layer() {
            for c in arch.conv_ids(0, 2, op) {
                assert!(arch.groups[c].frozen);
            }
        }
        assert_eq!(events[0].cascaded.len(), 1 + 2 * cfg.ops_per_layer());
    }

    #[test]
    fn dropping_a_shallow_depth_keeps_layers() {
        let cfg = SpaceConfig::tiny();
        let mut arch = ArchParams::new(&cfg);
        let d = arch.depth_id(0);
        arch.groups[d].logits = vec![-4.0, 2.0, 2.0];
        hierarchical_shrink_step(&mut arch, &cfg, 0.1, 0);
        assert!(arch.groups.iter().all(|g| !g.frozen));
    }

    #[test]
    fn operator_prune_cascades_to_channels() {
        let mut cfg = SpaceConfig::tiny();
        cfg.spatials = vec![1, 2];
        cfg.stages[0].channels = vec![4, 8];
        let mut arch = ArchParams::new(&cfg);
        let l = arch.layer_id(0, 0);
        let op = cfg.op_index(2, 2).unwrap();
        arch.groups[l].logits[op] = -5.0;
        let events = hierarchical_shrink_step(&mut arch, &cfg, 0.1, 3);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].step, 3);
        for c in arch.conv_ids(0, 0, op) {
            assert!(arch.groups[c].frozen);
        }
        assert_eq!(arch.groups.iter().filter(|g| g.frozen).count(), 2);
    }

    #[test]
    fn no_prune_is_a_no_op() {
        let cfg = SpaceConfig::tiny();
        let mut arch = ArchParams::new(&cfg);
        let before = arch.clone();
        assert!(hierarchical_shrink_step(&mut arch, &cfg, 0.1, 0).is_empty());
        assert_eq!(arch, before);
    }
}
