//! Size of the discrete search space, in log space.

use super::SpaceConfig;

/// `log10(10^a + 10^b)` without overflow.
fn log10_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (1.0 + 10f64.powf(lo - hi)).log10()
}

/// Distinct discrete architectures per layer: every operator candidate times
/// the channel combinations of its two convolutions.
fn per_layer_log10(config: &SpaceConfig, stage: usize) -> f64 {
    let ch = config.stages[stage].channels.len() as f64;
    (config.ops_per_layer() as f64).log10() + 2.0 * ch.log10()
}

/// `log10` of the exact number of discrete architectures:
/// `Π_stages Σ_{d ∈ depths} (|dilations|·|spatials|·|channels|²)^d`.
pub fn cardinality_log10(config: &SpaceConfig) -> f64 {
    (0..config.stages.len())
        .map(|s| {
            let per_layer = per_layer_log10(config, s);
            config.stages[s]
                .depths
                .iter()
                .fold(f64::NEG_INFINITY, |acc, &d| {
                    log10_add(acc, d as f64 * per_layer)
                })
        })
        .sum()
}

/// `log10` of the count under the convention used for the headline figure:
/// `(channel combos per operator)^(operators per layer × total layers)
/// + Π_stages |depths|`, with the full chain length counted per stage.
pub fn headline_cardinality_log10(config: &SpaceConfig) -> f64 {
    let ops = config.ops_per_layer() as f64;
    let channel_term: f64 = config
        .stages
        .iter()
        .map(|st| 2.0 * (st.channels.len() as f64).log10() * ops * st.max_depth() as f64)
        .sum();
    let depth_term: f64 = config
        .stages
        .iter()
        .map(|st| (st.depths.len() as f64).log10())
        .sum();
    log10_add(channel_term, depth_term)
}

/// Exact enumeration count, `None` if it does not fit in a `u128`.
pub fn enumeration_count(config: &SpaceConfig) -> Option<u128> {
    let mut total: u128 = 1;
    for st in &config.stages {
        let per_layer =
            (config.ops_per_layer() as u128).checked_mul((st.channels.len() as u128).pow(2))?;
        let mut stage_sum: u128 = 0;
        for &d in &st.depths {
            stage_sum = stage_sum.checked_add(per_layer.checked_pow(d as u32)?)?;
        }
        total = total.checked_mul(stage_sum)?;
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::StageSpec;

    #[test]
    fn full_space_headline_count() {
        let v = headline_cardinality_log10(&SpaceConfig::full_scale());
        assert!((v - 324.44).abs() < 0.01, "{v}");
        let mantissa = 10f64.powf(v - v.floor());
        assert!((mantissa - 2.77).abs() < 0.005, "{mantissa}");
        assert!(enumeration_count(&SpaceConfig::full_scale()).is_none());
    }

    #[test]
    fn singleton_space() {
        let c = SpaceConfig {
            dilations: vec![1],
            stages: vec![StageSpec {
                depths: vec![3],
                width: 4,
                channels: vec![4],
            }],
            ..SpaceConfig::tiny()
        };
        assert_eq!(cardinality_log10(&c), 0.0);
        assert_eq!(enumeration_count(&c), Some(1));
        // One architecture plus the one depth combination.
        assert!((headline_cardinality_log10(&c) - 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn fixed_depth_dilation_space() {
        let c = SpaceConfig {
            stages: vec![StageSpec {
                depths: vec![3],
                width: 8,
                channels: vec![8],
            }],
            ..SpaceConfig::tiny()
        };
        assert!((cardinality_log10(&c) - 27f64.log10()).abs() < 1e-12);
        assert!((cardinality_log10(&c) - 1.431).abs() < 1e-3);
    }

    #[test]
    fn tiny_space_count() {
        assert_eq!(enumeration_count(&SpaceConfig::tiny()), Some(39));
        assert!((cardinality_log10(&SpaceConfig::tiny()) - 39f64.log10()).abs() < 1e-12);
    }
}
