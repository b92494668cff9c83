//! Replica fan-out, trace CSVs, summary aggregation, and one-axis sweeps.
//!
//! Replica i runs with seed `seed + i`; the algorithm and the environment
//! draw from separate streams of that seed, so a re-run writes byte-identical
//! CSVs. A replica that faults mid-run still writes its partial trace; the
//! fault is recorded in the summary and other replicas are unaffected.

use crate::config::{ExperimentConfig, LossSpec, ModeSpec, ScheduleSpec};
use anyhow::Context;
use bco_core::ons::{run, AlgoConstants, RegretTrace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const TRACE_HEADER: [&str; 8] = [
    "epoch",
    "t",
    "Y",
    "pip",
    "m",
    "restart",
    "cum_true_regret",
    "cum_shat_stat",
];

/// Per-replica outcome kept for aggregation.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaRecord {
    pub replica: usize,
    pub rounds: usize,
    pub final_regret: f64,
    pub restarts: usize,
    pub bonuses: usize,
    pub floorings: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsSnapshot {
    pub l: f64,
    pub eta: f64,
    pub lambda: f64,
    pub sigma_sq: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub f_max: f64,
    pub c_log: f64,
    pub mean_width: f64,
    pub eps_clamped: bool,
    pub lambda_clamped: bool,
}

impl From<&AlgoConstants> for ConstantsSnapshot {
    fn from(k: &AlgoConstants) -> ConstantsSnapshot {
        ConstantsSnapshot {
            l: k.l,
            eta: k.eta,
            lambda: k.lambda,
            sigma_sq: k.sigma_sq,
            gamma: k.gamma,
            epsilon: k.epsilon,
            f_max: k.f_max,
            c_log: k.c_log,
            mean_width: k.mean_width,
            eps_clamped: k.eps_clamped,
            lambda_clamped: k.lambda_clamped,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub n: usize,
    pub d: usize,
    pub mode: String,
    pub replicas: usize,
    /// Replicas that finished every round without a fault.
    pub completed: usize,
    pub final_regret_mean: f64,
    pub final_regret_median: f64,
    /// Mean final regret divided by √n (0 when n = 0).
    pub regret_over_sqrt_n: f64,
    pub restarts_total: usize,
    pub restarts_mean: f64,
    pub bonuses_total: usize,
    pub floorings_total: usize,
    pub per_replica: Vec<ReplicaRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSnapshot>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub summary_path: PathBuf,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn any_fault(&self) -> bool {
        self.summary.per_replica.iter().any(|r| r.fault.is_some())
    }
}

fn write_trace_csv(path: &Path, trace: &RegretTrace) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating trace file {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for row in &trace.rows {
        w.write_record(&[
            row.epoch.to_string(),
            row.t.to_string(),
            row.y.to_string(),
            row.pip.to_string(),
            row.m.to_string(),
            (row.restart as u8).to_string(),
            row.cum_true_regret.to_string(),
            row.cum_shat_stat.to_string(),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing trace file {}", path.display()))?;
    Ok(())
}

fn run_one_replica(
    cfg: &ExperimentConfig,
    constants: &AlgoConstants,
    out_dir: &Path,
    replica: usize,
) -> anyhow::Result<ReplicaRecord> {
    let body = cfg.body.build()?;
    let replica_seed = cfg.seed.wrapping_add(replica as u64);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(replica_seed);
    noise_rng.set_stream(1);
    let oracle = cfg.build_oracle(&body, &mut noise_rng)?;

    let pos = cfg.build_positioned(constants.epsilon)?;
    let mut algo_rng = ChaCha8Rng::seed_from_u64(replica_seed);
    algo_rng.set_stream(0);
    let output = run(&oracle, &pos, constants, &mut algo_rng)?;

    let csv_path = out_dir.join(format!("replica_{replica}.csv"));
    write_trace_csv(&csv_path, &output.trace)?;

    Ok(ReplicaRecord {
        replica,
        rounds: output.trace.rows.len(),
        final_regret: output.trace.final_regret,
        restarts: output.trace.restarts,
        bonuses: output.trace.bonus_count,
        floorings: output.trace.flooring_events,
        fault: output.fault.map(|e| e.to_string()),
    })
}

fn median(sorted: &mut [f64]) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

fn aggregate(cfg: &ExperimentConfig, records: Vec<ReplicaRecord>, constants: Option<&AlgoConstants>) -> Summary {
    let clean: Vec<&ReplicaRecord> = records.iter().filter(|r| r.fault.is_none()).collect();
    let mut finals: Vec<f64> = clean.iter().map(|r| r.final_regret).collect();
    let mean = if finals.is_empty() {
        0.0
    } else {
        finals.iter().sum::<f64>() / finals.len() as f64
    };
    let restarts_total: usize = records.iter().map(|r| r.restarts).sum();
    Summary {
        n: cfg.n,
        d: cfg.body.dim(),
        mode: match cfg.mode {
            ModeSpec::Adversarial => "adversarial".into(),
            ModeSpec::Stochastic => "stochastic".into(),
        },
        replicas: cfg.replicas,
        completed: clean.len(),
        final_regret_mean: mean,
        final_regret_median: median(&mut finals),
        regret_over_sqrt_n: if cfg.n == 0 { 0.0 } else { mean / (cfg.n as f64).sqrt() },
        restarts_total,
        restarts_mean: if records.is_empty() {
            0.0
        } else {
            restarts_total as f64 / records.len() as f64
        },
        bonuses_total: records.iter().map(|r| r.bonuses).sum(),
        floorings_total: records.iter().map(|r| r.floorings).sum(),
        per_replica: records,
        constants: constants.map(ConstantsSnapshot::from),
    }
}

/// Runs every replica, writes one CSV per replica plus `summary.json`, and
/// returns the aggregate. A zero-round config writes header-only traces and
/// an all-zero summary.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<ExperimentOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let config_path = out_dir.join("config.json");
    std::fs::write(&config_path, cfg.to_json())
        .with_context(|| format!("writing {}", config_path.display()))?;

    let records: Vec<ReplicaRecord>;
    let constants: Option<AlgoConstants>;
    if cfg.n == 0 {
        let empty = RegretTrace {
            rows: Vec::new(),
            restarts: 0,
            bonus_count: 0,
            flooring_events: 0,
            comparator: None,
            comparator_total_loss: 0.0,
            final_regret: 0.0,
        };
        records = (0..cfg.replicas)
            .map(|i| {
                let path = out_dir.join(format!("replica_{i}.csv"));
                write_trace_csv(&path, &empty).map(|()| ReplicaRecord {
                    replica: i,
                    rounds: 0,
                    final_regret: 0.0,
                    restarts: 0,
                    bonuses: 0,
                    floorings: 0,
                    fault: None,
                })
            })
            .collect::<anyhow::Result<_>>()?;
        constants = None;
    } else {
        let k = cfg.build_constants()?;
        records = (0..cfg.replicas)
            .into_par_iter()
            .map(|i| run_one_replica(cfg, &k, out_dir, i))
            .collect::<anyhow::Result<_>>()?;
        constants = Some(k);
    }

    let summary = aggregate(cfg, records, constants.as_ref());
    let summary_path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    std::fs::write(&summary_path, text + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;

    Ok(ExperimentOutcome { summary, summary_path, out_dir: out_dir.to_path_buf() })
}

/// One row of a sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub mean_regret: f64,
    pub regret_over_sqrt_n: f64,
    pub restarts: usize,
    pub any_fault: bool,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

impl SweepOutcome {
    pub fn any_fault(&self) -> bool {
        self.rows.iter().any(|r| r.any_fault)
    }
}

fn config_at_dim(cfg: &ExperimentConfig, d: usize) -> anyhow::Result<ExperimentConfig> {
    let mut cell = cfg.clone();
    cell.body = cfg.body.with_dim(d)?;
    cell.loss = loss_at_dim(&cfg.loss, d);
    if let ScheduleSpec::Switch { at, second } = &cfg.schedule {
        cell.schedule = ScheduleSpec::Switch { at: *at, second: loss_at_dim(second, d) };
    }
    Ok(cell)
}

/// Resizes a loss spec to dimension d: coefficient vectors are zero-padded or
/// truncated, cut edges outside the new ground set are dropped.
fn loss_at_dim(spec: &LossSpec, d: usize) -> LossSpec {
    let resize = |v: &Vec<f64>| {
        let mut out = v.clone();
        out.resize(d, 0.0);
        out
    };
    match spec {
        LossSpec::Quadratic { center, scale } => {
            LossSpec::Quadratic { center: resize(center), scale: *scale }
        }
        LossSpec::Linear { c } => LossSpec::Linear { c: resize(c) },
        LossSpec::Maxlinear { pieces } => LossSpec::Maxlinear {
            pieces: pieces
                .iter()
                .map(|p| crate::config::PieceSpec { c: resize(&p.c), b: p.b })
                .collect(),
        },
        LossSpec::LovaszCut { edges, .. } => LossSpec::LovaszCut {
            vertices: d,
            edges: edges.iter().copied().filter(|&(u, v, _)| u < d && v < d).collect(),
        },
    }
}

/// Runs the base config once per axis value and tabulates
/// (value, mean regret, regret/√n, restarts). An empty value list yields a
/// header-only table.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: &str,
    values: &[String],
    out_dir: &Path,
) -> anyhow::Result<SweepOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    // Validate the axis name before running anything.
    if axis != "n" && axis != "d" {
        let mut scratch = cfg.overrides.clone();
        scratch
            .set(axis, 0.0)
            .map_err(|_| anyhow::anyhow!("unknown sweep axis '{axis}' (expected n, d, or a constant name)"))?;
    }

    let mut rows = Vec::with_capacity(values.len());
    for raw in values {
        let raw = raw.trim();
        let cell = match axis {
            "n" => {
                let v: usize = raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("sweep value '{raw}' is not a round count"))?;
                let mut c = cfg.clone();
                c.n = v;
                c
            }
            "d" => {
                let v: usize = raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("sweep value '{raw}' is not a dimension"))?;
                config_at_dim(cfg, v)?
            }
            _ => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("sweep value '{raw}' is not a number"))?;
                let mut c = cfg.clone();
                c.overrides.set(axis, v)?;
                c
            }
        };
        let cell_dir = out_dir.join(format!("{axis}_{raw}"));
        let outcome = run_experiment(&cell, &cell_dir)?;
        rows.push(SweepRow {
            value: raw.to_string(),
            mean_regret: outcome.summary.final_regret_mean,
            regret_over_sqrt_n: outcome.summary.regret_over_sqrt_n,
            restarts: outcome.summary.restarts_total,
            any_fault: outcome.any_fault(),
        });
    }

    let csv_path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("creating sweep table {}", csv_path.display()))?;
    w.write_record(["value", "mean_regret", "regret_over_sqrt_n", "restarts"])?;
    for r in &rows {
        w.write_record(&[
            r.value.clone(),
            r.mean_regret.to_string(),
            r.regret_over_sqrt_n.to_string(),
            r.restarts.to_string(),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing sweep table {}", csv_path.display()))?;

    Ok(SweepOutcome { rows, csv_path })
}
