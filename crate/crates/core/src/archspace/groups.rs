use serde::{Deserialize, Serialize};

use super::SpaceConfig;

/// Granularity of a choice group. Declaration order is the shrinking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Depth,
    DilationSpatial,
    Channel,
}

pub const LEVELS: [Level; 3] = [Level::Depth, Level::DilationSpatial, Level::Channel];

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Depth => "depth",
            Level::DilationSpatial => "dilation_spatial",
            Level::Channel => "channel",
        }
    }
}

/// Coordinates of the structure a group decides. Layers and operators are
/// zero-based; `conv` is 0 for the first and 1 for the second convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupOwner {
    Stage {
        stage: usize,
    },
    Layer {
        stage: usize,
        layer: usize,
    },
    Conv {
        stage: usize,
        layer: usize,
        op: usize,
        conv: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParamGroup {
    pub level: Level,
    pub owner: GroupOwner,
    pub logits: Vec<f64>,
    pub active: Vec<bool>,
    /// Set when a prune upstream removed the structure this group decides.
    /// Frozen groups take no further part in the search.
    pub frozen: bool,
}

impl ArchParamGroup {
    pub fn new(level: Level, owner: GroupOwner, candidates: usize) -> Self {
        ArchParamGroup {
            level,
            owner,
            logits: vec![0.0; candidates],
            active: vec![true; candidates],
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Still taking part in the search with more than one candidate left.
    pub fn is_open(&self) -> bool {
        !self.frozen && self.n_active() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GroupIndex {
    depth: Vec<usize>,
    layer: Vec<Vec<usize>>,
    /// `[stage][layer][op]` → ids of the two channel groups.
    conv: Vec<Vec<Vec<[usize; 2]>>>,
}

/// All architecture parameters of a space, ordered depth groups first, then
/// dilation-spatial groups, then channel groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub groups: Vec<ArchParamGroup>,
    index: GroupIndex,
}

impl ArchParams {
    pub fn new(config: &SpaceConfig) -> Self {
        let mut groups = Vec::new();
        let mut index = GroupIndex {
            depth: Vec::new(),
            layer: Vec::new(),
            conv: Vec::new(),
        };
        for (s, st) in config.stages.iter().enumerate() {
            index.depth.push(groups.len());
            groups.push(ArchParamGroup::new(
                Level::Depth,
                GroupOwner::Stage { stage: s },
                st.depths.len(),
            ));
        }
        let ops = config.ops_per_layer();
        for (s, st) in config.stages.iter().enumerate() {
            let mut layers = Vec::new();
            for l in 0..st.max_depth() {
                layers.push(groups.len());
                groups.push(ArchParamGroup::new(
                    Level::DilationSpatial,
                    GroupOwner::Layer { stage: s, layer: l },
                    ops,
                ));
            }
            index.layer.push(layers);
        }
        for (s, st) in config.stages.iter().enumerate() {
            let mut layers = Vec::new();
            for l in 0..st.max_depth() {
                let mut per_op = Vec::new();
                for op in 0..ops {
                    let mut pair = [0; 2];
                    for (conv, slot) in pair.iter_mut().enumerate() {
                        *slot = groups.len();
                        groups.push(ArchParamGroup::new(
                            Level::Channel,
                            GroupOwner::Conv {
                                stage: s,
                                layer: l,
                                op,
                                conv,
                            },
                            st.channels.len(),
                        ));
                    }
                    per_op.push(pair);
                }
                layers.push(per_op);
            }
            index.conv.push(layers);
        }
        ArchParams { groups, index }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn stages(&self) -> usize {
        self.index.depth.len()
    }

    pub fn depth_id(&self, stage: usize) -> usize {
        self.index.depth[stage]
    }

    pub fn layer_id(&self, stage: usize, layer: usize) -> usize {
        self.index.layer[stage][layer]
    }

    pub fn conv_ids(&self, stage: usize, layer: usize, op: usize) -> [usize; 2] {
        self.index.conv[stage][layer][op]
    }

    pub fn layers_in(&self, stage: usize) -> usize {
        self.index.layer[stage].len()
    }

    pub fn by_level(&self, level: Level) -> impl Iterator<Item = (usize, &ArchParamGroup)> {
        self.groups
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.level == level)
    }

    /// Largest surviving depth option (as a candidate index) of a stage.
    pub fn max_active_depth(&self, stage: usize) -> usize {
        let g = &self.groups[self.depth_id(stage)];
        (0..g.len())
            .rev()
            .find(|&i| g.active[i])
            .expect("depth group keeps a candidate")
    }

    /// Every non-frozen group has exactly one active candidate.
    pub fn is_discrete(&self) -> bool {
        self.groups.iter().all(|g| g.frozen || g.n_active() == 1)
    }

    /// Total active candidates over non-frozen groups.
    pub fn active_count(&self) -> usize {
        self.groups
            .iter()
            .filter(|g| !g.frozen)
            .map(ArchParamGroup::n_active)
            .sum()
    }
}
