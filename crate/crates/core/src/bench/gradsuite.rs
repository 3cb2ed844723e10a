//! Finite-difference gradient suite: one random tape per primitive (with
//! fan-out variants) and the full architecture objective at random states.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adcore::{finite_diff_check, Tape, Tensor, Var};
use crate::archspace::{build_supernet, SpaceConfig};
use crate::bench::{gen_task, TaskConfig};
use crate::costmodel::{expected_total_flops, CostSpec};
use crate::engine::{arch_objective, SearchConfig};
use crate::rng::SeededRng;
use crate::Result;

pub type ScalarFn = Arc<dyn Fn(&mut Tape, Var) -> Result<Var> + Send + Sync>;

/// A scalar function of one input leaf and the point to check it at.
pub struct GradCase {
    pub name: &'static str,
    pub point: Tensor,
    pub f: ScalarFn,
}

pub const PRIMITIVES: [&str; 22] = [
    "add",
    "mul",
    "scale",
    "offset",
    "scale_by",
    "gather",
    "select",
    "conv1d_input",
    "conv1d_weight",
    "conv1d_bias",
    "avg_pool",
    "upsample",
    "sigmoid",
    "relu",
    "ln",
    "abs",
    "clamp_min",
    "sum",
    "normalize",
    "channel_mask",
    "pad_channels",
    "cross_entropy",
];

fn rand_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Values at least `gap` away from zero.
fn away_from_zero(rng: &mut SeededRng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = gap + rng.uniform();
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn positive(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
    )
    .unwrap()
}

/// `Σ w ⊙ y` with fixed random weights bounded away from zero.
fn reduce(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wc = tape.constant(w.clone());
    let p = tape.mul(y, wc)?;
    tape.sum(p)
}

/// Random tape number `i`: primitive `i mod 22`, optionally followed by a
/// sigmoid and a second input-dependent term so the graph has fan-out.
pub fn primitive_case(i: usize, seed: u64) -> GradCase {
    let mut rng = SeededRng::derive(seed, i as u64);
    let name = PRIMITIVES[i % PRIMITIVES.len()];
    let seq = [2, 3, 8];
    let tail = i >= PRIMITIVES.len();
    let (point, out_shape): (Tensor, Vec<usize>) = match name {
        "ln" | "normalize" => (positive(&mut rng, &[6]), vec![6]),
        "relu" | "abs" => (away_from_zero(&mut rng, &[7], 0.1), vec![7]),
        "clamp_min" => {
            let t = away_from_zero(&mut rng, &[7], 0.1);
            (t, vec![7])
        }
        "gather" => (rand_tensor(&mut rng, &[5]), vec![7]),
        "select" => (rand_tensor(&mut rng, &[5]), vec![1]),
        "sum" => (rand_tensor(&mut rng, &[5]), vec![1]),
        "scale_by" | "add" | "mul" | "scale" | "offset" | "sigmoid" => {
            (rand_tensor(&mut rng, &[6]), vec![6])
        }
        "conv1d_input" => (rand_tensor(&mut rng, &seq), vec![2, 4, 8]),
        "conv1d_weight" => (rand_tensor(&mut rng, &[4, 3, 3]), vec![2, 4, 8]),
        "conv1d_bias" => (rand_tensor(&mut rng, &[4]), vec![2, 4, 8]),
        "avg_pool" => (rand_tensor(&mut rng, &seq), vec![2, 3, 4]),
        "upsample" => (rand_tensor(&mut rng, &[2, 3, 4]), vec![2, 3, 8]),
        "channel_mask" => (rand_tensor(&mut rng, &seq), vec![2, 3, 8]),
        "pad_channels" => (rand_tensor(&mut rng, &seq), vec![2, 5, 8]),
        "cross_entropy" => (rand_tensor(&mut rng, &seq), vec![1]),
        _ => unreachable!(),
    };
    let weights = away_from_zero(&mut rng, &out_shape, 0.5);
    let other = rand_tensor(&mut rng, &[6]);
    let data = rand_tensor(&mut rng, &seq);
    let kernel = rand_tensor(&mut rng, &[4, 3, 3]);
    let bias = rand_tensor(&mut rng, &[4]);
    let dilation = 1 + rng.below(2);
    let idx: Vec<usize> = (0..7).map(|_| rng.below(5)).collect();
    let pick = rng.below(5);
    let factor = rng.uniform_range(-2.0, 2.0);
    let labels: Vec<usize> = (0..16).map(|_| rng.below(3)).collect();
    let mask = Tensor::vector(vec![1.0, 0.0, 1.0]);
    let floor = rng.uniform_range(-0.05, 0.05);
    let f: ScalarFn = Arc::new(move |t: &mut Tape, x: Var| {
        let y = match name {
            "add" => {
                let c = t.constant(other.clone());
                t.add(x, c)?
            }
            "mul" => t.mul(x, x)?,
            "scale" => t.scale(x, factor)?,
            "offset" => {
                let o = t.offset(x, factor)?;
                t.mul(o, o)?
            }
            "scale_by" => {
                let s = t.select(x, 0)?;
                t.scale_by(x, s)?
            }
            "gather" => t.gather(x, &idx)?,
            "select" => t.select(x, pick)?,
            "conv1d_input" => {
                let (w, b) = (t.constant(kernel.clone()), t.constant(bias.clone()));
                t.conv1d(x, w, b, dilation)?
            }
            "conv1d_weight" => {
                let (d, b) = (t.constant(data.clone()), t.constant(bias.clone()));
                t.conv1d(d, x, b, dilation)?
            }
            "conv1d_bias" => {
                let (d, w) = (t.constant(data.clone()), t.constant(kernel.clone()));
                t.conv1d(d, w, x, dilation)?
            }
            "avg_pool" => t.avg_pool(x, 2)?,
            "upsample" => t.upsample(x, 2)?,
            "sigmoid" => t.sigmoid(x)?,
            "relu" => t.relu(x)?,
            "ln" => t.ln(x)?,
            "abs" => t.abs(x)?,
            "clamp_min" => t.clamp_min(x, floor)?,
            "sum" => t.sum(x)?,
            "normalize" => t.normalize(x)?,
            "channel_mask" => {
                let m = t.constant(mask.clone());
                t.channel_mask(x, m)?
            }
            "pad_channels" => t.pad_channels(x, 5)?,
            "cross_entropy" => t.cross_entropy(x, labels.clone())?,
            _ => unreachable!(),
        };
        let y = if tail { t.sigmoid(y)? } else { y };
        let r = reduce(t, y, &weights)?;
        if tail {
            // second path from the input, summed with add_all
            let s = t.sum(x)?;
            let s = t.scale(s, 0.1)?;
            t.add_all(&[r, s])
        } else {
            Ok(r)
        }
    });
    GradCase { name, point, f }
}

/// Point of the simplex with `n` entries, each at least `min_p`.
pub fn random_simplex(rng: &mut SeededRng, n: usize, min_p: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = e.iter().sum();
    let free = 1.0 - n as f64 * min_p;
    e.iter().map(|x| min_p + free * x / s).collect()
}

/// `count` simplex points with `n` uniform in `2..=10` and every entry at
/// least 1e-3.
pub fn simplex_points(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            let n = 2 + rng.below(9);
            random_simplex(&mut rng, n, 1e-3)
        })
        .collect()
}

/// Full architecture objective (task, SSR, FLOPs constraint) of the tiny
/// space as a function of the concatenated open-group logits, at random
/// state `k`. Even states sit above the FLOPs band, odd ones below.
pub fn arch_loss_case(k: u64) -> Result<(Tensor, ScalarFn)> {
    let space = SpaceConfig::tiny();
    let data = gen_task(&TaskConfig::canonical())?;
    let (x, y) = data.val.batch(&[0, 1]);
    let (net, mut arch) = build_supernet(&space, k)?;
    let mut rng = SeededRng::derive(77, k);
    for g in &mut arch.groups {
        for l in &mut g.logits {
            *l = rng.normal();
        }
        if g.len() > 2 && rng.uniform() < 0.3 {
            let off = rng.below(g.len());
            g.active[off] = false;
        }
    }
    let e = expected_total_flops(&space, &arch)?;
    let target = if k.is_multiple_of(2) {
        0.6 * e
    } else {
        1.6 * e
    };
    let cfg = SearchConfig {
        cost: Some(CostSpec {
            target,
            tolerance: 0.95,
            weight: 0.5,
        }),
        ..SearchConfig::toy()
    };
    let mut ranges = Vec::new();
    let mut point = Vec::new();
    for g in &arch.groups {
        if g.is_open() {
            ranges.push(Some(
                (point.len()..point.len() + g.len()).collect::<Vec<_>>(),
            ));
            point.extend_from_slice(&g.logits);
        } else {
            ranges.push(None);
        }
    }
    let f: ScalarFn = Arc::new(move |t: &mut Tape, v: Var| {
        let mut logits = Vec::with_capacity(ranges.len());
        for r in &ranges {
            logits.push(match r {
                Some(idx) => Some(t.gather(v, idx)?),
                None => None,
            });
        }
        Ok(arch_objective(t, &net, &arch, &cfg, &logits, x.clone(), y.clone())?.total)
    });
    Ok((Tensor::vector(point), f))
}

/// Step used by [`run_fd_suite`]; small enough not to cross ReLU kinks in
/// the architecture objective.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdCaseResult {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdSuiteReport {
    pub step: f64,
    pub tapes: Vec<FdCaseResult>,
    pub arch_states: Vec<FdCaseResult>,
    pub max_tape_error: f64,
    pub max_arch_error: f64,
    /// Primitives not exercised by any tape.
    pub uncovered: Vec<String>,
}

/// Checks `tapes` primitive cases and `states` architecture-objective cases.
pub fn run_fd_suite(tapes: usize, states: usize, seed: u64) -> Result<FdSuiteReport> {
    let mut tape_results = Vec::with_capacity(tapes);
    for i in 0..tapes {
        let case = primitive_case(i, seed);
        let f = case.f.clone();
        let err = finite_diff_check(move |t, x| f(t, x), &case.point, FD_STEP)?;
        tape_results.push(FdCaseResult {
            name: case.name.to_string(),
            rel_error: err,
        });
    }
    let mut arch_results = Vec::with_capacity(states);
    for k in 0..states as u64 {
        let (point, f) = arch_loss_case(k)?;
        let err = finite_diff_check(move |t, x| f(t, x), &point, FD_STEP)?;
        arch_results.push(FdCaseResult {
            name: format!("arch_state_{k}"),
            rel_error: err,
        });
    }
    let max = |r: &[FdCaseResult]| r.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let uncovered = PRIMITIVES
        .iter()
        .filter(|p| !tape_results.iter().any(|c| c.name == **p))
        .map(|p| p.to_string())
        .collect();
    Ok(FdSuiteReport {
        step: FD_STEP,
        max_tape_error: max(&tape_results),
        max_arch_error: max(&arch_results),
        tapes: tape_results,
        arch_states: arch_results,
        uncovered,
    })
}
