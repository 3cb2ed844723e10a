use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::archspace::{cardinality_log10, enumeration_count, SpaceConfig};
use crate::engine::{retrain, DiscreteArchitecture, DiscreteLayer, DiscreteStage, RetrainConfig};
use crate::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: usize = 10_000;

/// Every architecture of the space, stage by stage in depth-option order,
/// layers varying lexicographically (operator, then channel options) with
/// the last layer fastest.
pub fn enumerate_space(config: &SpaceConfig, cap: usize) -> Result<Vec<DiscreteArchitecture>> {
    config.validate()?;
    match enumeration_count(config) {
        Some(n) if n <= cap as u128 => {}
        other => {
            let count = other.map_or_else(
                || format!("~10^{:.2}", cardinality_log10(config)),
                |n| n.to_string(),
            );
            return Err(Error::EnumerationCap { count, cap });
        }
    }
    let mut per_stage: Vec<Vec<DiscreteStage>> = Vec::new();
    for st in &config.stages {
        let mut layer_choices = Vec::new();
        for op in 0..config.ops_per_layer() {
            let (dilation, spatial) = config.op_choice(op);
            for &c0 in &st.channels {
                for &c1 in &st.channels {
                    layer_choices.push(DiscreteLayer {
                        dilation,
                        spatial,
                        channels: [c0, c1],
                    });
                }
            }
        }
        let mut stages = Vec::new();
        for &depth in &st.depths {
            let mut partial: Vec<Vec<DiscreteLayer>> = vec![Vec::new()];
            for _ in 0..depth {
                partial = partial
                    .into_iter()
                    .flat_map(|p| {
                        layer_choices.iter().map(move |&c| {
                            let mut next = p.clone();
                            next.push(c);
                            next
                        })
                    })
                    .collect();
            }
            stages.extend(
                partial
                    .into_iter()
                    .map(|layers| DiscreteStage { depth, layers }),
            );
        }
        per_stage.push(stages);
    }
    let mut out: Vec<Vec<DiscreteStage>> = vec![Vec::new()];
    for options in per_stage {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |st| {
                    let mut next = prefix.clone();
                    next.push(st.clone());
                    next
                })
            })
            .collect();
    }
    Ok(out
        .into_iter()
        .map(|stages| DiscreteArchitecture { stages })
        .collect())
}

/// FLOPs of a discrete network by direct count: per output position, one
/// unit per multiply-accumulate and per bias add; a pooled operator also
/// pays `spatial · C_in` per pooled position for pooling and upsampling.
pub fn exact_flops(arch: &DiscreteArchitecture, config: &SpaceConfig) -> Result<f64> {
    arch.validate(config)?;
    let k = config.kernel as u64;
    let len = config.length as u64;
    let mut total: u64 = 0;
    let mut width = config.in_channels as u64;
    for (i, (spec, st)) in config.stages.iter().zip(&arch.stages).enumerate() {
        let w = spec.width as u64;
        // stem before the first stage, 1x1 transition before the others
        let taps = if i == 0 { k } else { 1 };
        total += len * w * (taps * width + 1);
        width = w;
        for layer in &st.layers {
            let s = layer.spatial as u64;
            let positions = len / s;
            let [c0, c1] = layer.channels.map(|c| c as u64);
            let conv0 = c0 * (k * w + 1);
            let conv1 = c1 * (k * c0 + 1);
            total += positions * (conv0 + conv1);
            if s > 1 {
                total += positions * s * w;
            }
        }
    }
    total += len * config.classes as u64 * (width + 1);
    Ok(total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    /// Position in [`enumerate_space`] order.
    pub index: usize,
    pub encoding: String,
    pub arch: DiscreteArchitecture,
    pub metric: f64,
    pub flops: f64,
}

/// Retrains every architecture of the space with the same budget and seed
/// and ranks them by validation mean IoU, best first (ties by index).
/// Runs in parallel; the result does not depend on the thread count.
pub fn oracle_rank(
    space: &SpaceConfig,
    data: &Dataset,
    cfg: &RetrainConfig,
    cap: usize,
) -> Result<Vec<OracleEntry>> {
    let archs = enumerate_space(space, cap)?;
    let mut entries = archs
        .into_par_iter()
        .enumerate()
        .map(|(index, arch)| {
            let (_, metric) = retrain(&arch, space, data, cfg)?;
            Ok(OracleEntry {
                index,
                encoding: arch.encode(),
                flops: exact_flops(&arch, space)?,
                arch,
                metric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.metric.total_cmp(&a.metric).then(a.index.cmp(&b.index)));
    Ok(entries)
}

/// Rank (0 = best) of `arch` in an oracle table.
pub fn oracle_position(table: &[OracleEntry], arch: &DiscreteArchitecture) -> Option<usize> {
    table.iter().position(|e| &e.arch == arch)
}
