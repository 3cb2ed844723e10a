//! Expected FLOPs of the relaxed supernet and the piecewise-log FLOPs
//! constraint.
//!
//! Counts are per sample: one unit per multiply-accumulate plus one per bias
//! add. Mixtures use the normalized probabilities of the search, so a
//! one-hot state reproduces the FLOPs of the selected discrete network.

use serde::{Deserialize, Serialize};

use crate::adcore::{Tape, Var};
use crate::archspace::{ArchParams, MixtureWeights, SpaceConfig};
use crate::regloss::normalize_probs;
use crate::{Error, Result};

/// Argument floor inside the constraint's logarithm.
pub const LOG_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Target `T_F`.
    pub target: f64,
    /// Tolerance ratio `δ`; the band is `[δ·T_F, T_F]`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Weight `λ`.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_tolerance() -> f64 {
    0.95
}

fn default_weight() -> f64 {
    0.01
}

impl CostSpec {
    pub fn new(target: f64) -> Self {
        CostSpec {
            target,
            tolerance: default_tolerance(),
            weight: default_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target.is_finite()) {
            return Err(Error::config("cost.target", "must be finite and > 0"));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1.0) {
            return Err(Error::config("cost.tolerance", "must be in (0,1]"));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::config("cost.weight", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn band(&self) -> (f64, f64) {
        (self.tolerance * self.target, self.target)
    }
}

/// `sum(Σ_k p_k M_k)` for prefix masks of the given widths.
pub fn expected_channels(p: &[f64], widths: &[usize]) -> f64 {
    p.iter().zip(widths).map(|(p, &w)| p * w as f64).sum()
}

/// Expected cost of one operator: two stacked convolutions with kernel `k`
/// on an `E_in`-channel input of length `length`, evaluated at resolution
/// `length / spatial`. For `spatial > 1` the `spatial·E_in` term accounts for
/// pooling and upsampling.
pub fn expected_operator_flops(
    e_in: f64,
    e_out: &[f64],
    kernel: usize,
    length: usize,
    spatial: usize,
) -> Result<f64> {
    if spatial == 0 || !length.is_multiple_of(spatial) {
        return Err(Error::Indivisible { spatial, length });
    }
    let k = kernel as f64;
    let mut prev = e_in;
    let mut e_kernel = 0.0;
    for &e in e_out {
        e_kernel += (k * prev + 1.0) * e;
        prev = e;
    }
    Ok(if spatial == 1 {
        e_kernel * length as f64
    } else {
        (e_kernel + spatial as f64 * e_in) * (length / spatial) as f64
    })
}

/// FLOPs outside the searchable layers: stem, transitions and head.
pub fn basic_flops(config: &SpaceConfig) -> f64 {
    let l = config.length as f64;
    let k = config.kernel as f64;
    let first = config.stages[0].width as f64;
    let mut total = (k * config.in_channels as f64 + 1.0) * first * l;
    for pair in config.stages.windows(2) {
        total += (pair[0].width as f64 + 1.0) * pair[1].width as f64 * l;
    }
    let last = config
        .stages
        .last()
        .expect("validated config has a stage")
        .width as f64;
    total + (last + 1.0) * config.classes as f64 * l
}

/// Expected FLOPs of the relaxed supernet at the current architecture
/// parameters. Frozen groups contribute nothing.
pub fn expected_total_flops(config: &SpaceConfig, arch: &ArchParams) -> Result<f64> {
    let mut total = basic_flops(config);
    for (s, st) in config.stages.iter().enumerate() {
        let max_depth = st.depths[arch.max_active_depth(s)];
        let mut layer_cost = Vec::with_capacity(max_depth);
        for layer in 0..max_depth {
            let ops = normalize_probs(&arch.groups[arch.layer_id(s, layer)])?;
            let mut cost = 0.0;
            for (&op, &p_op) in ops.ids.iter().zip(&ops.p) {
                let spatial = config.op_choice(op).1;
                let e: Vec<f64> = arch
                    .conv_ids(s, layer, op)
                    .iter()
                    .map(|&c| {
                        let pv = normalize_probs(&arch.groups[c])?;
                        Ok(expected_channels(
                            &pv.dense(st.channels.len()),
                            &st.channels,
                        ))
                    })
                    .collect::<Result<_>>()?;
                cost += p_op
                    * expected_operator_flops(
                        st.width as f64,
                        &e,
                        config.kernel,
                        config.length,
                        spatial,
                    )?;
            }
            layer_cost.push(cost);
        }
        let depth = normalize_probs(&arch.groups[arch.depth_id(s)])?;
        for (&d, &p_d) in depth.ids.iter().zip(&depth.p) {
            total += p_d * layer_cost[..st.depths[d]].iter().sum::<f64>();
        }
    }
    Ok(total)
}

/// [`expected_total_flops`] as a tape node, differentiable through the
/// weights of `mix`.
pub fn expected_flops_on_tape(
    tape: &mut Tape,
    config: &SpaceConfig,
    arch: &ArchParams,
    mix: &MixtureWeights,
) -> Result<Var> {
    let l = config.length as f64;
    let k = config.kernel as f64;
    let mut terms = vec![tape.scalar_const(basic_flops(config))];
    for (s, st) in config.stages.iter().enumerate() {
        let width = st.width as f64;
        let max_depth = st.depths[arch.max_active_depth(s)];
        let mut cumulative: Vec<Var> = Vec::with_capacity(max_depth);
        for layer in 0..max_depth {
            let layer_mix = &mix.groups[arch.layer_id(s, layer)];
            let mut op_terms = Vec::new();
            for (op, w_op) in layer_mix.weights.iter().enumerate() {
                let Some(w_op) = *w_op else { continue };
                let [c0, c1] = arch.conv_ids(s, layer, op);
                let e0 = expected_channels_on_tape(tape, &mix.groups[c0].weights, &st.channels)?;
                let e1 = expected_channels_on_tape(tape, &mix.groups[c1].weights, &st.channels)?;
                // (k·W + 1)·e0 + k·e0·e1 + e1
                let a = tape.scale(e0, k * width + 1.0)?;
                let prod = tape.mul(e0, e1)?;
                let b = tape.scale(prod, k)?;
                let mut kernel_cost = tape.add_all(&[a, b, e1])?;
                let spatial = config.op_choice(op).1;
                let positions = if spatial == 1 {
                    l
                } else {
                    kernel_cost = tape.offset(kernel_cost, spatial as f64 * width)?;
                    (config.length / spatial) as f64
                };
                let cost = tape.scale(kernel_cost, positions)?;
                op_terms.push(tape.scale_by(cost, w_op)?);
            }
            let layer_cost = tape.add_all(&op_terms)?;
            let acc = match cumulative.last() {
                Some(&prev) => tape.add(prev, layer_cost)?,
                None => layer_cost,
            };
            cumulative.push(acc);
        }
        let depth_mix = &mix.groups[arch.depth_id(s)];
        for (d, w) in depth_mix.weights.iter().enumerate() {
            if let Some(w) = *w {
                terms.push(tape.scale_by(cumulative[st.depths[d] - 1], w)?);
            }
        }
    }
    tape.add_all(&terms)
}

fn expected_channels_on_tape(
    tape: &mut Tape,
    weights: &[Option<Var>],
    widths: &[usize],
) -> Result<Var> {
    let mut terms = Vec::new();
    for (w, &c) in weights.iter().zip(widths) {
        if let Some(w) = *w {
            terms.push(tape.scale(w, c as f64)?);
        }
    }
    tape.add_all(&terms)
}

/// Piecewise constraint: `λ ln|E_F − T_F|` below `δ·T_F`, zero inside the
/// closed band `[δ·T_F, T_F]`, `λ ln|E_F − δ·T_F|` above `T_F`.
///
/// The below-band branch measures distance to `T_F`, so the loss jumps at
/// `δ·T_F`.
pub fn flops_constraint_loss(e_f: f64, spec: &CostSpec) -> f64 {
    let (lo, hi) = spec.band();
    if e_f < lo {
        spec.weight * (e_f - hi).abs().max(LOG_FLOOR).ln()
    } else if e_f > hi {
        spec.weight * (e_f - lo).abs().max(LOG_FLOOR).ln()
    } else {
        0.0
    }
}

/// [`flops_constraint_loss`] on a tape, `None` inside the band.
pub fn flops_constraint_on_tape(tape: &mut Tape, e_f: Var, spec: &CostSpec) -> Result<Option<Var>> {
    let v = tape.value(e_f).item();
    let (lo, hi) = spec.band();
    let dist = if v < lo {
        let neg = tape.scale(e_f, -1.0)?;
        tape.offset(neg, hi)?
    } else if v > hi {
        tape.offset(e_f, -lo)?
    } else {
        return Ok(None);
    };
    let floored = tape.clamp_min(dist, LOG_FLOOR)?;
    let log = tape.ln(floored)?;
    Ok(Some(tape.scale(log, spec.weight)?))
}

/// Two-dimensional reference for a factorized `3×1` / `1×3` pair on an
/// `h × w` map at spatial reduction `s`: `E_kernel·h·w` for `s = 1`,
/// otherwise `(E_kernel + s²·E_in)·(h/s)·(w/s)`, with
/// `E_kernel = (3·E_in + 1)·E_a + (3·E_a + 1)·E_b`.
pub fn factorized_pair_flops_2d(
    e_in: f64,
    e_a: f64,
    e_b: f64,
    h: usize,
    w: usize,
    s: usize,
) -> Result<f64> {
    if s == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        return Err(Error::Indivisible {
            spatial: s,
            length: h.max(w),
        });
    }
    let e_kernel = (3.0 * e_in + 1.0) * e_a + (3.0 * e_a + 1.0) * e_b;
    let positions = ((h / s) * (w / s)) as f64;
    Ok(if s == 1 {
        e_kernel * positions
    } else {
        (e_kernel + (s * s) as f64 * e_in) * positions
    })
}
