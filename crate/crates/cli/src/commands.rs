use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssrnas::archspace::{cardinality_log10, enumeration_count, headline_cardinality_log10};
use ssrnas::bench::gradsuite::{run_fd_suite, simplex_points, FdSuiteReport};
use ssrnas::bench::{exact_flops, gen_task, oracle_rank, Dataset};
use ssrnas::engine::{
    retrain, run_search_with, save_checkpoint, Checkpoint, SearchConfig, SearchOutcome,
    CHECKPOINT_VERSION,
};
use ssrnas::regloss::{check_l0_equivalence, Regularizer};

use crate::config::{CliError, RunConfig};
use crate::output::{
    render_table, write_json, ArchitectureFile, JsonLines, CHECKPOINT_FILE, GAP_FILE, SUMMARY_FILE,
    TRAJECTORY_FILE,
};

/// Exit status of a search that ran out of epochs before every group was
/// down to one candidate.
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub encoding: String,
    pub converged: bool,
    /// First epoch with zero total entropy.
    pub converged_epoch: Option<usize>,
    pub epochs_run: usize,
    pub final_entropy: f64,
    pub final_expected_flops: f64,
    pub exact_flops: f64,
    pub gap: f64,
    pub seconds: f64,
}

/// Runs one search, streaming the trajectory into `dir`, then writes the
/// architecture, gap report and summary.
fn search_into(
    dir: &Path,
    cfg: &RunConfig,
    search: &SearchConfig,
    data: &Dataset,
) -> Result<(SearchOutcome, SearchSummary), CliError> {
    let start = Instant::now();
    let mut trajectory = JsonLines::create(&dir.join(TRAJECTORY_FILE))?;
    let outcome = run_search_with(&cfg.space, search, data, |r| trajectory.push(r))?;
    let flops = exact_flops(&outcome.arch, &cfg.space)?;
    ArchitectureFile::new(&outcome.arch, flops).write(dir)?;
    write_json(&dir.join(GAP_FILE), &outcome.gap)?;
    let last = outcome.trajectory.last().expect("search records epoch 0");
    let summary = SearchSummary {
        encoding: outcome.arch.encode(),
        converged: outcome.converged,
        converged_epoch: outcome.converged_epoch,
        epochs_run: last.epoch,
        final_entropy: last.total_entropy,
        final_expected_flops: last.expected_flops,
        exact_flops: flops,
        gap: outcome.gap.gap,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok((outcome, summary))
}

pub fn search(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let data = gen_task(&cfg.task)?;
    let (outcome, summary) = search_into(dir, cfg, &cfg.search, &data)?;
    save_checkpoint(
        &dir.join(CHECKPOINT_FILE),
        &Checkpoint {
            version: CHECKPOINT_VERSION,
            space: cfg.space.clone(),
            search: cfg.search.clone(),
            state: outcome.state,
        },
    )?;
    println!(
        "architecture {} ({} FLOPs)",
        summary.encoding, summary.exact_flops
    );
    println!(
        "gap {:.6} (soft {:.6}, hard {:.6})",
        outcome.gap.gap, outcome.gap.soft_loss, outcome.gap.hard_loss
    );
    println!("run directory {}", dir.display());
    match summary.converged_epoch {
        Some(e) if summary.converged => {
            println!("converged at epoch {e}");
            Ok(0)
        }
        _ => {
            eprintln!(
                "not converged after {} epochs (entropy {:.4})",
                summary.epochs_run, summary.final_entropy
            );
            Ok(EXIT_NOT_CONVERGED)
        }
    }
}

/// Rejects spaces the oracle would refuse to enumerate, before any run
/// directory is created.
pub fn oracle_precheck(cfg: &RunConfig) -> Result<(), CliError> {
    let cap = cfg.oracle.cap;
    match enumeration_count(&cfg.space) {
        Some(n) if n <= cap as u128 => Ok(()),
        n => {
            let count = n.map_or_else(
                || format!("10^{:.2}", cardinality_log10(&cfg.space)),
                |n| n.to_string(),
            );
            Err(CliError::config(
                "oracle.cap",
                format!("space has {count} architectures, above the enumeration cap of {cap}"),
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    /// 0 is best.
    pub rank: usize,
    /// Position in enumeration order.
    pub index: usize,
    pub encoding: String,
    pub metric: f64,
    pub exact_flops: f64,
}

pub fn oracle(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let start = Instant::now();
    let data = gen_task(&cfg.task)?;
    let table = oracle_rank(&cfg.space, &data, &cfg.retrain, cfg.oracle.cap)?;
    let rows: Vec<OracleRow> = table
        .iter()
        .enumerate()
        .map(|(rank, e)| OracleRow {
            rank,
            index: e.index,
            encoding: e.encoding.clone(),
            metric: e.metric,
            exact_flops: e.flops,
        })
        .collect();
    let mut out = JsonLines::create(&dir.join("oracle.jsonl"))?;
    for r in &rows {
        out.push(r)?;
    }
    let text_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                format!("{:.4}", r.metric),
                r.exact_flops.to_string(),
                r.encoding.clone(),
            ]
        })
        .collect();
    fs::write(
        dir.join("oracle.txt"),
        render_table(&["Rank", "mIoU", "FLOPs", "Architecture"], &text_rows),
    )?;
    for r in rows.iter().take(5) {
        println!("{:>3}  {:.4}  {}", r.rank, r.metric, r.encoding);
    }
    println!(
        "{} architectures ranked in {:.1} s; run directory {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub p: Vec<f64>,
    pub taylor_residuals: Vec<f64>,
    pub taylor_bounds: Vec<f64>,
    pub limit_relative_errors: Vec<f64>,
    pub gradient_factorization_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub m_values: Vec<f64>,
    pub taylor_violations: usize,
    /// Largest `residual / bound` over every point and exponent.
    pub max_residual_ratio: f64,
    /// Largest relative error of the limit, per exponent.
    pub max_limit_relative_errors: Vec<f64>,
    /// Points whose limit error does not shrink with every step of `m`.
    pub non_monotone: usize,
    pub max_gradient_factorization_error: f64,
    pub finite_differences: FdSuiteReport,
    pub pass: bool,
    pub points: Vec<PointCheck>,
}

/// Gradient tolerance of the finite-difference suite.
const FD_TOLERANCE: f64 = 1e-6;
/// Tolerance of the factored SSR gradient.
const FACTORIZATION_TOLERANCE: f64 = 1e-9;

pub fn verify(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let v = &cfg.verify;
    let mut points = Vec::with_capacity(v.points);
    for p in simplex_points(v.points, v.seed) {
        let r = check_l0_equivalence(&p, &v.m_values)?;
        points.push(PointCheck {
            p,
            taylor_residuals: r.taylor_residuals,
            taylor_bounds: r.taylor_bounds,
            limit_relative_errors: r.limit_relative_errors,
            gradient_factorization_error: r.gradient_factorization_error,
        });
    }
    let fd = run_fd_suite(v.tapes, v.arch_states, v.fd_seed)?;
    let mut taylor_violations = 0;
    let mut max_ratio: f64 = 0.0;
    let mut max_limit = vec![0.0f64; v.m_values.len()];
    let mut non_monotone = 0;
    let mut max_grad: f64 = 0.0;
    for pc in &points {
        for (r, b) in pc.taylor_residuals.iter().zip(&pc.taylor_bounds) {
            if r > b {
                taylor_violations += 1;
            }
            if *b > 0.0 {
                max_ratio = max_ratio.max(r / b);
            }
        }
        for (m, e) in max_limit.iter_mut().zip(&pc.limit_relative_errors) {
            *m = m.max(*e);
        }
        if pc
            .limit_relative_errors
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less))
        {
            non_monotone += 1;
        }
        max_grad = max_grad.max(pc.gradient_factorization_error);
    }
    let pass = taylor_violations == 0
        && non_monotone == 0
        && max_grad <= FACTORIZATION_TOLERANCE
        && fd.max_tape_error <= FD_TOLERANCE
        && fd.max_arch_error <= FD_TOLERANCE;
    let report = VerifyReport {
        m_values: v.m_values.clone(),
        taylor_violations,
        max_residual_ratio: max_ratio,
        max_limit_relative_errors: max_limit,
        non_monotone,
        max_gradient_factorization_error: max_grad,
        finite_differences: fd,
        pass,
        points,
    };
    write_json(&dir.join("verify.json"), &report)?;
    println!(
        "taylor: {} violations over {} points x {} exponents, max residual/bound {:.4}",
        report.taylor_violations,
        report.points.len(),
        report.m_values.len(),
        report.max_residual_ratio
    );
    for (m, e) in report
        .m_values
        .iter()
        .zip(&report.max_limit_relative_errors)
    {
        println!("limit: m = {m:e}, max relative error {e:.3e}");
    }
    println!("limit: {} non-monotone sweeps", report.non_monotone);
    println!(
        "gradient factorization: max error {:.3e}",
        report.max_gradient_factorization_error
    );
    let fd = &report.finite_differences;
    println!(
        "finite differences: {:.3e} over {} tapes, {:.3e} over {} objective states",
        fd.max_tape_error,
        fd.tapes.len(),
        fd.max_arch_error,
        fd.arch_states.len()
    );
    println!("run directory {}", dir.display());
    if pass {
        Ok(0)
    } else {
        Err(CliError::Runtime(
            "verification failed, see verify.json".into(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Regularizer,
    pub seed: u64,
    pub converged: bool,
    /// First epoch with zero total entropy.
    pub zero_entropy_epoch: Option<usize>,
    pub epochs_run: usize,
    pub final_entropy: f64,
    pub gap: f64,
    pub encoding: String,
    pub exact_flops: f64,
    /// Retrained mean IoU, if retraining is enabled.
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Regularizer,
    pub runs: usize,
    pub converged: usize,
    /// Mean over converged runs.
    pub mean_zero_entropy_epoch: Option<f64>,
    pub mean_abs_gap: f64,
    pub mean_metric: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn summarize(arm: Regularizer, rows: &[AblationRow]) -> ArmSummary {
    let rows: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == arm).collect();
    let epochs: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.zero_entropy_epoch)
        .map(|e| e as f64)
        .collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap.abs()).collect();
    let metrics: Vec<f64> = rows.iter().filter_map(|r| r.metric).collect();
    ArmSummary {
        arm,
        runs: rows.len(),
        converged: rows.iter().filter(|r| r.converged).count(),
        mean_zero_entropy_epoch: mean(&epochs),
        mean_abs_gap: mean(&gaps).unwrap_or(0.0),
        mean_metric: mean(&metrics),
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

/// Arms differ only in the regularizer and the seed; the task data and
/// every other setting are shared.
pub fn ablate(cfg: &RunConfig, dir: &Path) -> Result<i32, CliError> {
    let start = Instant::now();
    let data = gen_task(&cfg.task)?;
    let arms_dir = dir.join("arms");
    fs::create_dir(&arms_dir)?;
    let jobs: Vec<(Regularizer, u64)> = cfg
        .ablate
        .arms
        .iter()
        .flat_map(|&arm| cfg.ablate.seeds.iter().map(move |&seed| (arm, seed)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            let run_dir = arms_dir.join(format!("{}-seed{seed}", arm.as_str()));
            fs::create_dir(&run_dir)?;
            let search = SearchConfig {
                regularizer: arm,
                seed,
                ..cfg.search.clone()
            };
            let (outcome, summary) = search_into(&run_dir, cfg, &search, &data)?;
            let metric = if cfg.ablate.retrain {
                Some(retrain(&outcome.arch, &cfg.space, &data, &cfg.retrain)?.1)
            } else {
                None
            };
            Ok(AblationRow {
                arm,
                seed,
                converged: summary.converged,
                zero_entropy_epoch: summary.converged_epoch,
                epochs_run: summary.epochs_run,
                final_entropy: summary.final_entropy,
                gap: summary.gap,
                encoding: summary.encoding,
                exact_flops: summary.exact_flops,
                metric,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut out = JsonLines::create(&dir.join("ablation.jsonl"))?;
    for r in &rows {
        out.push(r)?;
    }
    let summaries: Vec<ArmSummary> = cfg
        .ablate
        .arms
        .iter()
        .map(|&a| summarize(a, &rows))
        .collect();
    write_json(&dir.join("ablation_summary.json"), &summaries)?;

    let run_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.arm.as_str().to_string(),
                r.seed.to_string(),
                r.zero_entropy_epoch
                    .map_or_else(|| "-".into(), |e| e.to_string()),
                format!("{:.4}", r.final_entropy),
                format!("{:.5}", r.gap),
                opt(r.metric, 4),
                r.exact_flops.to_string(),
                r.encoding.clone(),
            ]
        })
        .collect();
    let arm_rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.arm.as_str().to_string(),
                format!("{}/{}", s.converged, s.runs),
                opt(s.mean_zero_entropy_epoch, 1),
                format!("{:.5}", s.mean_abs_gap),
                opt(s.mean_metric, 4),
            ]
        })
        .collect();
    let arm_table = render_table(
        &[
            "Arm",
            "Converged",
            "Zero-entropy epoch",
            "Mean |gap|",
            "Mean mIoU",
        ],
        &arm_rows,
    );
    let mut text = render_table(
        &[
            "Arm",
            "Seed",
            "Zero-entropy epoch",
            "Final entropy",
            "Gap",
            "mIoU",
            "FLOPs",
            "Architecture",
        ],
        &run_rows,
    );
    text.push('\n');
    text.push_str(&arm_table);
    fs::write(dir.join("ablation.txt"), text)?;
    print!("{arm_table}");
    println!(
        "{} runs in {:.1} s; run directory {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(0)
}

/// `m.mm e k` form of `10^log10`.
pub fn scientific_from_log10(log10: f64) -> String {
    let mut exp = log10.floor();
    let mut mantissa = 10f64.powf(log10 - exp);
    if (mantissa * 100.0).round() >= 1000.0 {
        mantissa /= 10.0;
        exp += 1.0;
    }
    format!("{mantissa:.2}e{exp}")
}

pub fn cardinality(cfg: &RunConfig) -> Result<i32, CliError> {
    let headline = headline_cardinality_log10(&cfg.space);
    println!("log10 = {headline:.2}");
    println!("≈ {}", scientific_from_log10(headline));
    let exact = cardinality_log10(&cfg.space);
    match enumeration_count(&cfg.space) {
        Some(n) => println!("distinct architectures: {n} (log10 = {exact:.2})"),
        None => println!(
            "distinct architectures: ≈ {} (log10 = {exact:.2})",
            scientific_from_log10(exact)
        ),
    }
    Ok(0)
}
