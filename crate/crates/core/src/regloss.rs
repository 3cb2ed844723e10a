//! Probability normalization, the SSR loss and competing auxiliary losses,
//! architecture entropy, and numerical checks of the SSR / L0 equivalence.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adcore::{Tape, Tensor, Var};
use crate::archspace::{ArchParamGroup, ArchParams, Level};
use crate::{Error, Result};

/// Floor applied to probabilities inside logarithms only.
pub const EPS_FLOOR: f64 = 1e-12;

/// Probabilities of a group's active candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    /// Candidate ids, ascending.
    pub ids: Vec<usize>,
    pub p: Vec<f64>,
}

impl ProbVector {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Full-length vector with zeros at inactive candidates.
    pub fn dense(&self, candidates: usize) -> Vec<f64> {
        let mut out = vec![0.0; candidates];
        for (&i, &p) in self.ids.iter().zip(&self.p) {
            out[i] = p;
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `p_i = σ(θ_i) / Σ_{j active} σ(θ_j)` over the active candidates.
pub fn normalize_probs(group: &ArchParamGroup) -> Result<ProbVector> {
    let ids = group.active_ids();
    if ids.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if ids.len() == 1 {
        return Ok(ProbVector { ids, p: vec![1.0] });
    }
    let s: Vec<f64> = ids.iter().map(|&i| sigmoid(group.logits[i])).collect();
    let total: f64 = s.iter().sum();
    Ok(ProbVector {
        ids,
        p: s.iter().map(|x| x / total).collect(),
    })
}

/// `Σ_i ln(max(p_i, ε))`; zero for a single candidate.
pub fn ssr_loss(p: &[f64]) -> f64 {
    if p.len() <= 1 {
        return 0.0;
    }
    p.iter().map(|&x| x.max(EPS_FLOOR).ln()).sum()
}

/// Shannon entropy `-Σ p_i ln p_i`, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    // subtracting from 0.0 keeps a one-hot vector at +0.0
    0.0 - p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    L1,
    L2,
    Ie,
}

impl FromStr for AuxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(AuxKind::L1),
            "l2" => Ok(AuxKind::L2),
            "ie" => Ok(AuxKind::Ie),
            _ => Err(Error::UnknownAuxKind(s.to_string())),
        }
    }
}

/// Competing sharpening losses: `L1 = -Σ|p_i - 0.5|`, `L2 = -Σ(p_i - 0.5)²`,
/// `IE = -Σ p_i ln p_i`. All are minimized by one-hot vectors.
pub fn aux_loss(p: &[f64], kind: AuxKind) -> f64 {
    match kind {
        AuxKind::L1 => -p.iter().map(|x| (x - 0.5).abs()).sum::<f64>(),
        AuxKind::L2 => -p.iter().map(|x| (x - 0.5).powi(2)).sum::<f64>(),
        AuxKind::Ie => p.iter().map(|&x| -x * x.max(EPS_FLOOR).ln()).sum(),
    }
}

/// Which sharpening term is added to the architecture objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    Ssr,
    L1,
    L2,
    Ie,
    None,
}

impl Regularizer {
    pub const ALL: [Regularizer; 5] = [
        Regularizer::Ssr,
        Regularizer::L1,
        Regularizer::L2,
        Regularizer::Ie,
        Regularizer::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regularizer::Ssr => "ssr",
            Regularizer::L1 => "l1",
            Regularizer::L2 => "l2",
            Regularizer::Ie => "ie",
            Regularizer::None => "none",
        }
    }

    /// Penalty of one group, `ie_sign` scaling the entropy term.
    pub fn penalty(self, p: &[f64], ie_sign: f64) -> f64 {
        if p.len() <= 1 {
            return 0.0;
        }
        match self {
            Regularizer::Ssr => ssr_loss(p),
            Regularizer::L1 => aux_loss(p, AuxKind::L1),
            Regularizer::L2 => aux_loss(p, AuxKind::L2),
            Regularizer::Ie => ie_sign * aux_loss(p, AuxKind::Ie),
            Regularizer::None => 0.0,
        }
    }

    /// The same penalty on a tape over a probability vector node, `None`
    /// when the regularizer contributes nothing.
    pub fn penalty_on_tape(self, tape: &mut Tape, p: Var, ie_sign: f64) -> Result<Option<Var>> {
        let n = tape.value(p).len();
        if n <= 1 || self == Regularizer::None {
            return Ok(None);
        }
        let v = match self {
            Regularizer::Ssr => ssr_on_tape(tape, p)?,
            Regularizer::L1 | Regularizer::L2 => {
                let d = tape.offset(p, -0.5)?;
                let t = if self == Regularizer::L1 {
                    tape.abs(d)?
                } else {
                    tape.mul(d, d)?
                };
                let s = tape.sum(t)?;
                tape.scale(s, -1.0)?
            }
            Regularizer::Ie => {
                let c = tape.clamp_min(p, EPS_FLOOR)?;
                let l = tape.ln(c)?;
                let pl = tape.mul(p, l)?;
                let s = tape.sum(pl)?;
                tape.scale(s, -ie_sign)?
            }
            Regularizer::None => unreachable!(),
        };
        Ok(Some(v))
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regularizer::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownAuxKind(s.to_string()))
    }
}

/// `Σ ln(max(p_i, ε))` on a tape.
pub fn ssr_on_tape(tape: &mut Tape, p: Var) -> Result<Var> {
    let c = tape.clamp_min(p, EPS_FLOOR)?;
    let l = tape.ln(c)?;
    tape.sum(l)
}

/// Per-level weights `ρ` of the regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelWeights {
    pub depth: f64,
    pub dilation_spatial: f64,
    pub channel: f64,
}

impl Default for LevelWeights {
    fn default() -> Self {
        LevelWeights {
            depth: 0.15,
            dilation_spatial: 0.3,
            channel: 0.3,
        }
    }
}

impl LevelWeights {
    pub fn uniform(w: f64) -> Self {
        LevelWeights {
            depth: w,
            dilation_spatial: w,
            channel: w,
        }
    }

    pub fn get(&self, level: Level) -> f64 {
        match level {
            Level::Depth => self.depth,
            Level::DilationSpatial => self.dilation_spatial,
            Level::Channel => self.channel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth", self.depth),
            ("dilation_spatial", self.dilation_spatial),
            ("channel", self.channel),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("level_weights.{name}"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }
}

/// Regularizer total `Σ_levels ρ_l Σ_{groups in level} penalty(group)` over
/// non-frozen groups.
pub fn weighted_penalty(
    arch: &ArchParams,
    weights: &LevelWeights,
    reg: Regularizer,
    ie_sign: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for g in arch.groups.iter().filter(|g| !g.frozen) {
        let rho = weights.get(g.level);
        if rho != 0.0 {
            total += rho * reg.penalty(&normalize_probs(g)?.p, ie_sign);
        }
    }
    Ok(total)
}

/// `task_loss + Σ_levels ρ_l Σ ssr_loss(group) + flops_loss`.
pub fn total_arch_loss(
    task_loss: f64,
    arch: &ArchParams,
    weights: &LevelWeights,
    flops_loss: f64,
) -> Result<f64> {
    Ok(task_loss + weighted_penalty(arch, weights, Regularizer::Ssr, 1.0)? + flops_loss)
}

/// Sum of group entropies over active candidates of non-frozen groups.
pub fn total_entropy(arch: &ArchParams) -> Result<f64> {
    let mut total = 0.0;
    for g in arch.groups.iter().filter(|g| !g.frozen) {
        total += entropy(&normalize_probs(g)?.p);
    }
    Ok(total)
}

/// Entropy summed per level, in [`crate::archspace::LEVELS`] order.
pub fn level_entropy(arch: &ArchParams) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for g in arch.groups.iter().filter(|g| !g.frozen) {
        out[g.level as usize] += entropy(&normalize_probs(g)?.p);
    }
    Ok(out)
}

/// `E^m(p) = Σ p_i^m`; for `m = 0` the count of entries above the floor.
pub fn pnorm_energy(p: &[f64], m: f64) -> f64 {
    if m == 0.0 {
        return p.iter().filter(|&&x| x > EPS_FLOOR).count() as f64;
    }
    p.iter().map(|&x| (m * x.ln()).exp()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub m_values: Vec<f64>,
    /// `|E^m(p) - n - m·L_ssr(p)|` per `m`.
    pub taylor_residuals: Vec<f64>,
    /// Lagrange remainder bound `(m²/2) Σ ln² p_i` per `m`.
    pub taylor_bounds: Vec<f64>,
    /// `|(E^m/n)^(1/m) - exp(L_ssr/n)|` per `m`.
    pub limit_errors: Vec<f64>,
    /// `limit_errors` divided by `exp(L_ssr/n)`.
    pub limit_relative_errors: Vec<f64>,
    /// `max_i |∇_i L_ssr - (diag(1/p²) p)_i|` with the gradient taken by
    /// reverse-mode differentiation.
    pub gradient_factorization_error: f64,
}

impl EquivalenceReport {
    pub fn taylor_within_bound(&self) -> bool {
        self.taylor_residuals
            .iter()
            .zip(&self.taylor_bounds)
            .all(|(r, b)| r <= b)
    }
}

/// Numerical diagnostics relating `L_ssr` to the `m → 0` limit of `E^m`:
/// objective (first-order expansion), target (AM–GM limit), and gradient
/// (factored form) equivalence.
pub fn check_l0_equivalence(p: &[f64], m_values: &[f64]) -> Result<EquivalenceReport> {
    if let Some(&bad) = m_values.iter().find(|&&m| m.is_nan() || m <= 0.0) {
        return Err(Error::InvalidExponent(bad));
    }
    let n = p.len() as f64;
    let l_ssr = ssr_loss(p);
    let logs: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let sum_sq: f64 = logs.iter().map(|l| l * l).sum();
    let target = (l_ssr / n).exp();
    let mut report = EquivalenceReport {
        m_values: m_values.to_vec(),
        taylor_residuals: Vec::new(),
        taylor_bounds: Vec::new(),
        limit_errors: Vec::new(),
        limit_relative_errors: Vec::new(),
        gradient_factorization_error: 0.0,
    };
    for &m in m_values {
        // E^m - n, accumulated without cancellation.
        let excess: f64 = logs.iter().map(|l| (m * l).exp_m1()).sum();
        report.taylor_residuals.push((excess - m * l_ssr).abs());
        report.taylor_bounds.push(0.5 * m * m * sum_sq);
        let limit = ((excess / n).ln_1p() / m).exp();
        let err = (limit - target).abs();
        report.limit_errors.push(err);
        report.limit_relative_errors.push(err / target);
    }
    let mut tape = Tape::new();
    let pv = tape.input("p", Tensor::vector(p.to_vec()));
    let loss = ssr_on_tape(&mut tape, pv)?;
    tape.backward(loss)?;
    let grad = tape.grad(pv).expect("gradient reaches p");
    report.gradient_factorization_error = grad
        .iter()
        .zip(p)
        .map(|(g, &pi)| (g - pi / (pi * pi)).abs())
        .fold(0.0, f64::max);
    Ok(report)
}
