use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::archspace::{ArchParamGroup, ArchParams, SpaceConfig};
use crate::regloss::normalize_probs;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteLayer {
    pub dilation: usize,
    pub spatial: usize,
    /// Output channels of the first and second convolution.
    pub channels: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteStage {
    pub depth: usize,
    pub layers: Vec<DiscreteLayer>,
}

/// One member of the search space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteArchitecture {
    pub stages: Vec<DiscreteStage>,
}

/// Index of the largest entry, the lowest index winning ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn pick(group: &ArchParamGroup) -> Result<usize> {
    let p = normalize_probs(group)?;
    Ok(p.ids[argmax(&p.p)])
}

/// Selects the most probable candidate of every group that the selected
/// structure uses. Ties go to the lowest candidate index.
pub fn discretize(arch: &ArchParams, config: &SpaceConfig) -> Result<DiscreteArchitecture> {
    let mut stages = Vec::with_capacity(config.stages.len());
    for (s, st) in config.stages.iter().enumerate() {
        let depth = st.depths[pick(&arch.groups[arch.depth_id(s)])?];
        let mut layers = Vec::with_capacity(depth);
        for layer in 0..depth {
            let op = pick(&arch.groups[arch.layer_id(s, layer)])?;
            let (dilation, spatial) = config.op_choice(op);
            let [c0, c1] = arch.conv_ids(s, layer, op);
            let channels = [
                st.channels[pick(&arch.groups[c0])?],
                st.channels[pick(&arch.groups[c1])?],
            ];
            layers.push(DiscreteLayer {
                dilation,
                spatial,
                channels,
            });
        }
        stages.push(DiscreteStage { depth, layers });
    }
    Ok(DiscreteArchitecture { stages })
}

impl DiscreteArchitecture {
    pub fn validate(&self, config: &SpaceConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        if self.stages.len() != config.stages.len() {
            return bad(format!(
                "{} stages, space has {}",
                self.stages.len(),
                config.stages.len()
            ));
        }
        for (s, (stage, spec)) in self.stages.iter().zip(&config.stages).enumerate() {
            if !spec.depths.contains(&stage.depth) {
                return bad(format!(
                    "stage {s}: depth {} not in {:?}",
                    stage.depth, spec.depths
                ));
            }
            if stage.layers.len() != stage.depth {
                return bad(format!(
                    "stage {s}: {} layers for depth {}",
                    stage.layers.len(),
                    stage.depth
                ));
            }
            for (l, layer) in stage.layers.iter().enumerate() {
                if config.op_index(layer.dilation, layer.spatial).is_none() {
                    return bad(format!(
                        "stage {s} layer {l}: operator (r={}, s={}) not in the space",
                        layer.dilation, layer.spatial
                    ));
                }
                if !config.length.is_multiple_of(layer.spatial) {
                    return bad(format!(
                        "stage {s} layer {l}: spatial {} does not divide length",
                        layer.spatial
                    ));
                }
                for c in layer.channels {
                    if !spec.channels.contains(&c) {
                        return bad(format!(
                            "stage {s} layer {l}: channels {c} not in {:?}",
                            spec.channels
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Architecture parameters with exactly this architecture left: one
    /// active candidate per used group, everything else frozen.
    pub fn to_arch_params(&self, config: &SpaceConfig) -> Result<ArchParams> {
        self.validate(config)?;
        let mut arch = ArchParams::new(config);
        let only = |g: &mut ArchParamGroup, keep: usize| {
            for (i, a) in g.active.iter_mut().enumerate() {
                *a = i == keep;
            }
        };
        for (s, (stage, spec)) in self.stages.iter().zip(&config.stages).enumerate() {
            let d = spec
                .depths
                .iter()
                .position(|&d| d == stage.depth)
                .expect("validated");
            let did = arch.depth_id(s);
            only(&mut arch.groups[did], d);
            for layer in 0..arch.layers_in(s) {
                let lid = arch.layer_id(s, layer);
                let chosen = stage.layers.get(layer).map(|l| {
                    (
                        config.op_index(l.dilation, l.spatial).expect("validated"),
                        l.channels,
                    )
                });
                match chosen {
                    None => arch.groups[lid].frozen = true,
                    Some((op, _)) => only(&mut arch.groups[lid], op),
                }
                for op in 0..config.ops_per_layer() {
                    let ids = arch.conv_ids(s, layer, op);
                    for (conv, &gid) in ids.iter().enumerate() {
                        match chosen {
                            Some((sel, ch)) if sel == op => {
                                let k = spec
                                    .channels
                                    .iter()
                                    .position(|&c| c == ch[conv])
                                    .expect("validated");
                                only(&mut arch.groups[gid], k);
                            }
                            _ => arch.groups[gid].frozen = true,
                        }
                    }
                }
            }
        }
        Ok(arch)
    }

    /// Compact single-line form, e.g. `d2[r1s1c8/8,r4s2c6/8]` per stage,
    /// stages joined by `|`.
    pub fn encode(&self) -> String {
        self.stages
            .iter()
            .map(|st| {
                let layers: Vec<String> = st
                    .layers
                    .iter()
                    .map(|l| {
                        format!(
                            "r{}s{}c{}/{}",
                            l.dilation, l.spatial, l.channels[0], l.channels[1]
                        )
                    })
                    .collect();
                format!("d{}[{}]", st.depth, layers.join(","))
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    /// One-sided receptive field of the whole network in input positions,
    /// counting a pooled operator's dilation at input resolution.
    pub fn receptive_radius(&self, kernel: usize) -> usize {
        let half = (kernel - 1) / 2;
        let layers: usize = self
            .stages
            .iter()
            .flat_map(|st| &st.layers)
            .map(|l| 2 * half * l.dilation * l.spatial)
            .sum();
        half + layers
    }

    /// Plain-text table with one row per layer.
    pub fn table(&self) -> String {
        let mut out = String::from("stage  depth  layer  dilation  spatial  channels\n");
        for (s, st) in self.stages.iter().enumerate() {
            for (l, layer) in st.layers.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:<6} {:<6} {:<6} {:<9} {:<8} {}/{}",
                    s,
                    st.depth,
                    l,
                    layer.dilation,
                    layer.spatial,
                    layer.channels[0],
                    layer.channels[1]
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.587, 0.333, 0.079]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn uniform_state_picks_first_options() {
        let cfg = SpaceConfig::tiny();
        let d = discretize(&ArchParams::new(&cfg), &cfg).unwrap();
        assert_eq!(d.stages[0].depth, 1);
        assert_eq!(
            d.stages[0].layers,
            vec![DiscreteLayer {
                dilation: 1,
                spatial: 1,
                channels: [8, 8]
            }]
        );
        assert_eq!(d.encode(), "d1[r1s1c8/8]");
    }

    #[test]
    fn round_trip_through_arch_params() {
        let cfg = SpaceConfig {
            spatials: vec![1, 2],
            ..SpaceConfig::tiny()
        };
        let mut cfg = cfg;
        cfg.stages[0].channels = vec![4, 8];
        let d = DiscreteArchitecture {
            stages: vec![DiscreteStage {
                depth: 2,
                layers: vec![
                    DiscreteLayer {
                        dilation: 4,
                        spatial: 2,
                        channels: [4, 8],
                    },
                    DiscreteLayer {
                        dilation: 1,
                        spatial: 1,
                        channels: [8, 4],
                    },
                ],
            }],
        };
        let arch = d.to_arch_params(&cfg).unwrap();
        assert!(arch.is_discrete());
        assert!(arch.groups[arch.layer_id(0, 2)].frozen);
        assert_eq!(discretize(&arch, &cfg).unwrap(), d);
        assert_eq!(d.receptive_radius(3), 1 + 16 + 2);
    }

    #[test]
    fn invalid_architecture_is_rejected() {
        let cfg = SpaceConfig::tiny();
        let d = DiscreteArchitecture {
            stages: vec![DiscreteStage {
                depth: 1,
                layers: vec![DiscreteLayer {
                    dilation: 3,
                    spatial: 1,
                    channels: [8, 8],
                }],
            }],
        };
        assert!(matches!(
            d.validate(&cfg),
            Err(Error::InvalidArchitecture(_))
        ));
    }
}
