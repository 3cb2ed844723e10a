use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One searchable stage: a chain of `max(depths)` residual layers whose
/// output is mixed over the candidate depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    /// Candidate depths, ascending. The largest is the physical chain length.
    pub depths: Vec<usize>,
    /// Physical channel count `C_max` of the stage.
    pub width: usize,
    /// Candidate output channel counts of every convolution, ascending, with
    /// `width` as the last entry.
    pub channels: Vec<usize>,
}

impl StageSpec {
    pub fn max_depth(&self) -> usize {
        *self.depths.last().expect("validated stage")
    }
}

/// Defaults to [`SpaceConfig::tiny`] field by field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceConfig {
    /// Sequence length `L`; every stage runs at this length.
    pub length: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub spatials: Vec<usize>,
    pub stages: Vec<StageSpec>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

fn ascending(values: &[usize]) -> bool {
    values.windows(2).all(|w| w[0] < w[1])
}

impl SpaceConfig {
    /// The one-stage dilation-only space used by the oracle: depths
    /// {1, 2, 3}, dilations {1, 2, 4}, full resolution, fixed width. It holds
    /// 3 + 9 + 27 = 39 architectures.
    pub fn tiny() -> Self {
        SpaceConfig {
            length: 64,
            in_channels: 2,
            classes: 3,
            kernel: 3,
            dilations: vec![1, 2, 4],
            spatials: vec![1],
            stages: vec![StageSpec {
                depths: vec![1, 2, 3],
                width: 8,
                channels: vec![8],
            }],
        }
    }

    /// The full-scale layout: two searchable stages with depths {3..7} and
    /// {6..10}, dilations {1, 2, 4, 8, 16}, spatial {1, 2}, and nine channel
    /// options `C_max-32 : 4 : C_max` per convolution.
    pub fn full_scale() -> Self {
        let stage = |depths: std::ops::RangeInclusive<usize>, width: usize| StageSpec {
            depths: depths.collect(),
            width,
            channels: (0..9).map(|i| width - 32 + 4 * i).collect(),
        };
        SpaceConfig {
            length: 128,
            in_channels: 3,
            classes: 19,
            kernel: 3,
            dilations: vec![1, 2, 4, 8, 16],
            spatials: vec![1, 2],
            stages: vec![stage(3..=7, 64), stage(6..=10, 128)],
        }
    }

    /// Operator candidates per layer, `|dilations| * |spatials|`.
    pub fn ops_per_layer(&self) -> usize {
        self.dilations.len() * self.spatials.len()
    }

    /// `(dilation, spatial)` of operator candidate `op`.
    pub fn op_choice(&self, op: usize) -> (usize, usize) {
        let s = self.spatials.len();
        (self.dilations[op / s], self.spatials[op % s])
    }

    pub fn op_index(&self, dilation: usize, spatial: usize) -> Option<usize> {
        let d = self.dilations.iter().position(|&x| x == dilation)?;
        let s = self.spatials.iter().position(|&x| x == spatial)?;
        Some(d * self.spatials.len() + s)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        pos("length", self.length)?;
        pos("in_channels", self.in_channels)?;
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", "kernel size must be odd"));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) || !ascending(&self.dilations) {
            return Err(Error::config(
                "dilations",
                "need a non-empty ascending list of positive integers",
            ));
        }
        if self.spatials.is_empty() || self.spatials.contains(&0) || !ascending(&self.spatials) {
            return Err(Error::config(
                "spatials",
                "need a non-empty ascending list of positive integers",
            ));
        }
        if let Some(&s) = self
            .spatials
            .iter()
            .find(|&&s| !self.length.is_multiple_of(s))
        {
            return Err(Error::config(
                "spatials",
                format!("{s} does not divide length {}", self.length),
            ));
        }
        for (i, st) in self.stages.iter().enumerate() {
            let field = |name: &str| format!("stages[{i}].{name}");
            if st.depths.is_empty() || st.depths.contains(&0) || !ascending(&st.depths) {
                return Err(Error::config(
                    field("depths"),
                    "need a non-empty ascending list of positive integers",
                ));
            }
            pos(&field("width"), st.width)?;
            if st.channels.is_empty() || st.channels.contains(&0) || !ascending(&st.channels) {
                return Err(Error::config(
                    field("channels"),
                    "need a non-empty ascending list of positive integers",
                ));
            }
            if *st.channels.last().unwrap() != st.width {
                return Err(Error::config(
                    field("channels"),
                    format!("largest option must equal width {}", st.width),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        SpaceConfig::tiny().validate().unwrap();
        SpaceConfig::full_scale().validate().unwrap();
        assert_eq!(
            SpaceConfig::full_scale().stages[0].channels,
            vec![32, 36, 40, 44, 48, 52, 56, 60, 64]
        );
    }

    #[test]
    fn rejects_bad_fields_by_name() {
        let mut c = SpaceConfig::tiny();
        c.spatials = vec![1, 3];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("spatials"), "{err}");

        let mut c = SpaceConfig::tiny();
        c.stages[0].channels = vec![4, 6];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("stages[0].channels"), "{err}");

        let mut c = SpaceConfig::tiny();
        c.stages[0].depths = vec![];
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("stages[0].depths"));
    }

    #[test]
    fn op_index_round_trip() {
        let c = SpaceConfig::full_scale();
        for op in 0..c.ops_per_layer() {
            let (r, s) = c.op_choice(op);
            assert_eq!(c.op_index(r, s), Some(op));
        }
    }
}
