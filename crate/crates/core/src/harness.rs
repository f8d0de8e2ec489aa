//! Parameter sweeps over lab layouts with ensemble statistics and CSV output.
//!
//! Every sample is seeded from `(seed, sample index)` alone, so a sweep is
//! reproducible bit for bit whatever the number of worker threads. Per-sample
//! results are collected in index order and reduced on one thread.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::discrimination::{helstrom, wf_probabilities};
use crate::error::{Error, Result};
use crate::ewfs::{equilibrate_ewfs, ewfs_overlaps, lf_epsilon, EwfsConfig, Lab};
use crate::qcore::{max_qubits_from_env, LabLayout};
use crate::wf::{equilibrate, overlap_metrics, WfConfig, DEFAULT_DEGENERACY_TOL};

pub const CSV_HEADER: [&str; 15] = [
    "experiment",
    "n_f",
    "n_e",
    "n_c",
    "n_ec",
    "n_d",
    "n_ed",
    "p0",
    "metric",
    "mean",
    "sd",
    "sem",
    "n_samples",
    "seed",
    "zero_rank_fraction",
];

pub const RAW_HEADER: [&str; 12] = [
    "experiment", "n_f", "n_e", "n_c", "n_ec", "n_d", "n_ed", "p0", "sample", "metric", "value", "zero_rank",
];

pub const WF_METRICS: [&str; 12] = [
    "friend_overlap",
    "env_overlap",
    "misid_10",
    "misid_01",
    "e0",
    "e1",
    "p_w_i",
    "p_f_j",
    "p_w_j",
    "p_b_j",
    "epsilon",
    "delta",
];

pub const EWFS_METRICS: [&str; 4] = ["friend_overlap", "env_overlap", "varepsilon", "lf_bound"];

pub const DEFAULT_SAMPLES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Wf,
    Ewfs,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Wf => "wf",
            Experiment::Ewfs => "ewfs",
        }
    }

    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            Experiment::Wf => &WF_METRICS,
            Experiment::Ewfs => &EWFS_METRICS,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wf" => Ok(Experiment::Wf),
            "ewfs" => Ok(Experiment::Ewfs),
            other => Err(Error::InvalidConfig(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub experiment: Experiment,
    /// Friend qubit counts (Charlie's in the extended scenario).
    pub n_f: Vec<usize>,
    /// Environment qubit counts (Charlie's environment in the extended scenario).
    pub n_e: Vec<usize>,
    /// Debbie's lab; extended scenario only.
    pub n_d: usize,
    pub n_ed: usize,
    pub p0: f64,
    pub theta: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub degeneracy_tol: f64,
    pub dense: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub max_qubits: usize,
}

impl SweepConfig {
    pub fn new(experiment: Experiment, n_f: Vec<usize>, n_e: Vec<usize>) -> Self {
        Self {
            experiment,
            n_f,
            n_e,
            n_d: 1,
            n_ed: 1,
            p0: 0.5,
            theta: std::f64::consts::FRAC_PI_4,
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
            dense: false,
            threads: None,
            max_qubits: max_qubits_from_env(),
        }
    }

    /// Layout points in sweep order: outer loop over environment sizes.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.n_e
            .iter()
            .flat_map(|&e| self.n_f.iter().map(move |&f| (f, e)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("at least one sample is required".into()));
        }
        if self.n_f.is_empty() || self.n_e.is_empty() {
            return Err(Error::InvalidConfig("layout ranges must be non-empty".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be positive".into()));
        }
        for (f, e) in self.points() {
            match self.experiment {
                Experiment::Wf => {
                    self.wf_config(f, e)?;
                }
                Experiment::Ewfs => {
                    self.ewfs_config(f, e)?;
                }
            }
        }
        Ok(())
    }

    fn wf_config(&self, n_f: usize, n_e: usize) -> Result<WfConfig> {
        let layout = LabLayout::with_limit(n_f, n_e, self.max_qubits)?;
        let mut config = WfConfig::new(layout, self.p0)?.with_seed(self.seed).with_dense(self.dense);
        config.degeneracy_tol = self.degeneracy_tol;
        config.validate()?;
        Ok(config)
    }

    fn ewfs_config(&self, n_c: usize, n_ec: usize) -> Result<EwfsConfig> {
        let mut config = EwfsConfig::with_limit(n_c, n_ec, self.n_d, self.n_ed, self.max_qubits)?
            .with_seed(self.seed)
            .with_theta(self.theta)
            .with_dense(self.dense);
        config.degeneracy_tol = self.degeneracy_tol;
        config.validate()?;
        Ok(config)
    }
}

/// Layout columns of one sweep point; unused ones stay empty in CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LayoutColumns {
    pub n_f: Option<usize>,
    pub n_e: Option<usize>,
    pub n_c: Option<usize>,
    pub n_ec: Option<usize>,
    pub n_d: Option<usize>,
    pub n_ed: Option<usize>,
}

impl LayoutColumns {
    fn for_point(config: &SweepConfig, f: usize, e: usize) -> Self {
        match config.experiment {
            Experiment::Wf => Self {
                n_f: Some(f),
                n_e: Some(e),
                ..Self::default()
            },
            Experiment::Ewfs => Self {
                n_c: Some(f),
                n_ec: Some(e),
                n_d: Some(config.n_d),
                n_ed: Some(config.n_ed),
                ..Self::default()
            },
        }
    }

    fn fields(&self) -> [String; 6] {
        [self.n_f, self.n_e, self.n_c, self.n_ec, self.n_d, self.n_ed].map(|v| v.map(|x| x.to_string()).unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub experiment: Experiment,
    pub layout: LayoutColumns,
    pub p0: f64,
    pub metric: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub sem: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub zero_rank_fraction: f64,
}

/// One per-sample metric value.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub experiment: Experiment,
    pub layout: LayoutColumns,
    pub p0: f64,
    pub sample: u64,
    pub metric: &'static str,
    pub value: f64,
    pub zero_rank: bool,
}

/// Per-sample outcome, metric values in the experiment's metric order.
struct Sample {
    /// Value entering the aggregate. For `epsilon` and `delta` this is the
    /// signed difference, whose mean's magnitude is reported.
    aggregate: Vec<f64>,
    raw: Vec<f64>,
    zero_rank: bool,
}

fn wf_sample(config: &WfConfig, index: u64) -> Result<Sample> {
    let state = equilibrate(config, index)?;
    let o = overlap_metrics(&state);
    let r = wf_probabilities(&state, config)?;
    let raw = vec![
        o.friend_overlap,
        o.env_overlap,
        r.misid_10,
        r.misid_01,
        r.e0,
        r.e1,
        r.p_w_i,
        r.p_f_j,
        r.p_w_j,
        r.p_b_j,
        r.epsilon,
        r.delta,
    ];
    let mut aggregate = raw.clone();
    aggregate[10] = r.p_w_i - r.p_f_i;
    aggregate[11] = r.p_w_j - r.p_f_j;
    Ok(Sample {
        aggregate,
        raw,
        zero_rank: r.zero_rank.any(),
    })
}

fn ewfs_sample(config: &EwfsConfig, index: u64) -> Result<Sample> {
    let state = equilibrate_ewfs(config, index)?;
    let o = ewfs_overlaps(&state, Lab::Charlie);
    let lf = lf_epsilon(&state)?;
    let rho = [state.charlie.friend[0].to_state(), state.charlie.friend[1].to_state()];
    let povm = helstrom(&rho[0], &rho[1], state.marginal(Lab::Charlie)[0])?;
    let raw = vec![o.friend_overlap, o.env_overlap, lf.varepsilon, lf.bound];
    Ok(Sample {
        aggregate: raw.clone(),
        raw,
        zero_rank: povm.is_zero(0) || povm.is_zero(1),
    })
}

/// `(mean, sd, sem)` with the sample standard deviation (`n − 1`; 0 for one sample).
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd, sd / n.sqrt())
}

fn is_signed_difference(metric: &str) -> bool {
    matches!(metric, "epsilon" | "delta")
}

fn evaluate_point(config: &SweepConfig, f: usize, e: usize) -> Result<Vec<Sample>> {
    let n = config.n_samples as u64;
    match config.experiment {
        Experiment::Wf => {
            let wf = config.wf_config(f, e)?;
            (0..n).into_par_iter().map(|i| wf_sample(&wf, i)).collect()
        }
        Experiment::Ewfs => {
            let ewfs = config.ewfs_config(f, e)?;
            (0..n).into_par_iter().map(|i| ewfs_sample(&ewfs, i)).collect()
        }
    }
}

fn sweep(config: &SweepConfig, keep_raw: bool) -> Result<(Vec<SweepRecord>, Vec<RawRecord>)> {
    config.validate()?;
    let mut records = Vec::new();
    let mut raw = Vec::new();
    let metrics = config.experiment.metrics();
    let points = config.points();
    for (k, &(f, e)) in points.iter().enumerate() {
        log::info!("point {}/{}: ({f}, {e})", k + 1, points.len());
        let samples = evaluate_point(config, f, e)?;
        let layout = LayoutColumns::for_point(config, f, e);
        let flagged = samples.iter().filter(|s| s.zero_rank).count();
        let zero_rank_fraction = flagged as f64 / samples.len() as f64;
        if zero_rank_fraction > 0.0 && config.p0 == 0.5 {
            log::warn!("{flagged} sample(s) with zero-rank Helstrom elements at ({f}, {e}) and p0 = 0.5");
        }
        for (m, &metric) in metrics.iter().enumerate() {
            let values: Vec<f64> = samples.iter().map(|s| s.aggregate[m]).collect();
            let (mut mean, sd, sem) = summarize(&values);
            if is_signed_difference(metric) {
                mean = mean.abs();
            }
            records.push(SweepRecord {
                experiment: config.experiment,
                layout,
                p0: config.p0,
                metric,
                mean,
                sd,
                sem,
                n_samples: samples.len(),
                seed: config.seed,
                zero_rank_fraction,
            });
        }
        if keep_raw {
            for (i, s) in samples.iter().enumerate() {
                for (m, &metric) in metrics.iter().enumerate() {
                    raw.push(RawRecord {
                        experiment: config.experiment,
                        layout,
                        p0: config.p0,
                        sample: i as u64,
                        metric,
                        value: s.raw[m],
                        zero_rank: s.zero_rank,
                    });
                }
            }
        }
    }
    Ok((records, raw))
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Aggregated records for every layout point and metric.
///
/// For `epsilon` and `delta` the reported mean is the magnitude of the mean
/// signed difference between the two predictions; `sd` and `sem` describe
/// the per-sample signed difference.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    with_pool(config.threads, || sweep(config, false))?.map(|(records, _)| records)
}

/// Like [`run_sweep`], also returning every per-sample value.
pub fn run_sweep_with_raw(config: &SweepConfig) -> Result<(Vec<SweepRecord>, Vec<RawRecord>)> {
    with_pool(config.threads, || sweep(config, true))?
}

fn float(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x:?}")
}

pub fn write_records<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let mut row = vec![r.experiment.name().to_string()];
        row.extend(r.layout.fields());
        row.extend([
            float(r.p0),
            r.metric.to_string(),
            float(r.mean),
            float(r.sd),
            float(r.sem),
            r.n_samples.to_string(),
            r.seed.to_string(),
            float(r.zero_rank_fraction),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_raw<W: Write>(raw: &[RawRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_HEADER)?;
    for r in raw {
        let mut row = vec![r.experiment.name().to_string()];
        row.extend(r.layout.fields());
        row.extend([
            float(r.p0),
            r.sample.to_string(),
            r.metric.to_string(),
            float(r.value),
            r.zero_rank.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_csv(records: &[SweepRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

pub const PRESETS: [&str; 6] = ["fig3", "fig4", "fig8", "fig9", "fig10", "fig11"];

/// Named sweep reproducing one of the reference figures (200 samples, seed 42).
pub fn preset(name: &str) -> Result<SweepConfig> {
    let wf = |p0: f64| SweepConfig {
        p0,
        seed: 42,
        ..SweepConfig::new(Experiment::Wf, (1..=5).collect(), vec![2, 3, 4])
    };
    match name {
        "fig3" | "fig4" => Ok(wf(0.5)),
        "fig9" | "fig10" | "fig11" => Ok(wf(0.75)),
        "fig8" => Ok(SweepConfig {
            seed: 42,
            ..SweepConfig::new(Experiment::Ewfs, (1..=7).collect(), vec![1, 2, 3])
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}
