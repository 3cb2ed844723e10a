use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                format!("{field}.lr"),
                "must be finite and > 0",
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(
                format!("{field}.weight_decay"),
                "must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(
                format!("{field}.beta1/beta2"),
                "must be in [0,1)",
            ));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config(format!("{field}.eps"), "must be > 0"));
        }
        Ok(())
    }
}

/// `lr · (1 − step/total)^power`.
pub fn poly_lr(lr: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return lr;
    }
    lr * (1.0 - (step as f64 / total as f64).min(1.0)).powf(power)
}

/// Adam over a fixed list of parameter slots. Each element keeps its own
/// moments and step count, so skipped or masked elements are untouched and
/// never affect the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: Vec<Vec<u64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Adam {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: sizes.iter().map(|&n| vec![0; n]).collect(),
        }
    }

    /// Updates `param` in place from `grad`, skipping elements where `mask`
    /// is false.
    pub fn step(
        &mut self,
        slot: usize,
        param: &mut [f64],
        grad: &[f64],
        lr: f64,
        mask: Option<&[bool]>,
    ) {
        let c = self.config;
        let (m, v, t) = (&mut self.m[slot], &mut self.v[slot], &mut self.t[slot]);
        for i in 0..param.len() {
            if mask.is_some_and(|mk| !mk[i]) {
                continue;
            }
            let g = grad[i] + c.weight_decay * param[i];
            t[i] += 1;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let mh = m[i] / (1.0 - c.beta1.powf(t[i] as f64));
            let vh = v[i] / (1.0 - c.beta2.powf(t[i] as f64));
            param[i] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }

    /// Drops the state of one element.
    pub fn reset(&mut self, slot: usize, index: usize) {
        self.m[slot][index] = 0.0;
        self.v[slot][index] = 0.0;
        self.t[slot][index] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.0), [2]);
        let mut p = vec![1.0, -1.0];
        opt.step(0, &mut p, &[3.0, -0.5], 0.1, None);
        assert!(
            (p[0] - 0.9).abs() < 1e-8 && (p[1] + 0.9).abs() < 1e-8,
            "{p:?}"
        );
    }

    #[test]
    fn masked_elements_are_untouched() {
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.01), [3]);
        let mut p = vec![1.0, 2.0, 3.0];
        opt.step(0, &mut p, &[1.0, 1.0, 1.0], 0.1, Some(&[true, false, true]));
        assert_eq!(p[1], 2.0);
        assert_eq!(opt.t[0], vec![1, 0, 1]);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let mut opt = Adam::new(AdamConfig::new(0.1, 1.0), [1]);
        let mut p = vec![2.0];
        opt.step(0, &mut p, &[-2.0], 0.1, None);
        assert_eq!(p, vec![2.0]);
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0.1, 0, 10, 0.9), 0.1);
        assert_eq!(poly_lr(0.1, 10, 10, 0.9), 0.0);
        assert!((poly_lr(0.1, 5, 10, 1.0) - 0.05).abs() < 1e-15);
    }
}
