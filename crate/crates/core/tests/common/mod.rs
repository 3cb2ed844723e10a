#![allow(dead_code)]

use ssrnas::archspace::{ArchParams, SpaceConfig, StageSpec};
use ssrnas::regloss::normalize_probs;
use ssrnas::rng::SeededRng;
use ssrnas::shrink::hierarchical_shrink_step;

/// Space with two stages, pooling and channel choices.
pub fn rich_space() -> SpaceConfig {
    SpaceConfig {
        length: 16,
        dilations: vec![1, 2, 4],
        spatials: vec![1, 2],
        stages: vec![
            StageSpec {
                depths: vec![1, 2, 3],
                width: 8,
                channels: vec![4, 6, 8],
            },
            StageSpec {
                depths: vec![2, 4],
                width: 6,
                channels: vec![2, 4, 6],
            },
        ],
        ..SpaceConfig::tiny()
    }
}

#[derive(Debug, Default)]
pub struct FuzzViolations {
    pub emptied: usize,
    pub reactivated: usize,
    pub unfrozen: usize,
    pub bad_normalization: usize,
    pub steps: usize,
}

impl FuzzViolations {
    pub fn total(&self) -> usize {
        self.emptied + self.reactivated + self.unfrozen + self.bad_normalization
    }
}

/// Random logit drift and shrinking with random thresholds, checking the
/// invariants after every step.
pub fn shrink_fuzz(sequences: usize, seed: u64) -> FuzzViolations {
    let spaces = [SpaceConfig::tiny(), rich_space()];
    let mut out = FuzzViolations::default();
    for s in 0..sequences {
        let mut rng = SeededRng::derive(seed, s as u64);
        let space = &spaces[s % spaces.len()];
        let mut arch = ArchParams::new(space);
        for g in &mut arch.groups {
            for l in &mut g.logits {
                *l = 2.0 * rng.normal();
            }
        }
        let steps = 1 + rng.below(30);
        for step in 0..steps {
            let before = arch.clone();
            for g in &mut arch.groups {
                for l in &mut g.logits {
                    *l += rng.normal();
                }
            }
            let h = rng.uniform_range(0.01, 0.99);
            hierarchical_shrink_step(&mut arch, space, h, step);
            out.steps += 1;
            for (g, b) in arch.groups.iter().zip(&before.groups) {
                if g.n_active() == 0 {
                    out.emptied += 1;
                }
                if g.active
                    .iter()
                    .zip(&b.active)
                    .any(|(&now, &was)| now && !was)
                {
                    out.reactivated += 1;
                }
                if b.frozen && !g.frozen {
                    out.unfrozen += 1;
                }
                if !g.frozen {
                    match normalize_probs(g) {
                        Ok(p) if (p.p.iter().sum::<f64>() - 1.0).abs() <= 1e-9 => {}
                        _ => out.bad_normalization += 1,
                    }
                }
            }
        }
    }
    out
}
