//! Monte-Carlo evaluation of the optimizer, the GNN and the baselines on
//! shared placements, and report emission.
//!
//! CSV columns, in order:
//! `method,sample,seed,sr,csr,ms,feasible,digest,layout,cr_1..cr_K`.
//! `seed` is the placement seed of the row, `digest` the scenario digest and
//! `layout` the layout digest (`-` for the conventional array).

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::ao::{run_swisac_ao, AoConfig};
use crate::baselines::{cmimo_channels, random_layout, zf_beamformer};
use crate::channel::{build_channels, EffectiveChannels};
use crate::error::{Error, Result};
use crate::gnn::{gnn_forward, GnnWeights};
use crate::metrics::{communication_rates, csr, sensing_rate};
use crate::scalar::{fro2, CMatrix};
use crate::scenario::{sample_placement, scenario_digest, PinchingLayout, Placement, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ao,
    Gnn,
    Zf,
    Random,
    Cmimo,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ao, Method::Gnn, Method::Zf, Method::Random, Method::Cmimo];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ao => "ao",
            Method::Gnn => "gnn",
            Method::Zf => "zf",
            Method::Random => "random",
            Method::Cmimo => "cmimo",
        }
    }

    /// Parses a comma-separated method list.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: Method,
    pub sample: usize,
    pub seed: u64,
    /// Sensing rate (bits per channel use).
    pub sr: f64,
    pub cr: Vec<f64>,
    pub csr: f64,
    pub ms: f64,
    /// Layout feasible and `|W|_F^2 <= P_max`.
    pub feasible: bool,
    pub digest: String,
    pub layout: String,
}

/// A solved instance before evaluation.
#[derive(Debug, Clone)]
pub struct Solved {
    pub layout: Option<PinchingLayout<f64>>,
    pub eff: EffectiveChannels<f64>,
    pub w: CMatrix<f64>,
    /// Wall clock of the solve call alone.
    pub ms: f64,
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, f64)> {
    let t = Instant::now();
    let r = f()?;
    Ok((r, t.elapsed().as_secs_f64() * 1e3))
}

/// Seed of the random deployment for a given placement seed.
pub fn random_seed(placement_seed: u64) -> u64 {
    placement_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Runs one method on one placement.
pub fn solve(
    method: Method,
    placement: &Placement<f64>,
    config: &ScenarioConfig<f64>,
    ao: &AoConfig<f64>,
    weights: Option<&GnnWeights<f64>>,
    seed: u64,
) -> Result<Solved> {
    match method {
        Method::Ao => {
            let ((layout, state, _), ms) = timed(|| run_swisac_ao(placement, config, ao, seed))?;
            let eff = build_channels(placement, &layout, config)?.eff;
            Ok(Solved { layout: Some(layout), eff, w: state.w, ms })
        }
        Method::Gnn => {
            let weights = weights.ok_or_else(|| Error::Config("the gnn method needs a weight file".into()))?;
            let ((layout, state), ms) = timed(|| gnn_forward(weights, placement, config))?;
            let eff = build_channels(placement, &layout, config)?.eff;
            Ok(Solved { layout: Some(layout), eff, w: state.w, ms })
        }
        Method::Zf => {
            let mut layout = PinchingLayout::uniform(config);
            layout.tx_selected_segment = crate::ao::select_segments(placement, &layout, config)?;
            let eff = build_channels(placement, &layout, config)?.eff;
            let (zf, ms) = timed(|| Ok(zf_beamformer(&eff, config)))?;
            Ok(Solved { layout: Some(layout), eff, w: zf.w, ms })
        }
        Method::Random => {
            let t = Instant::now();
            let layout = random_layout(config, random_seed(seed));
            let draw = t.elapsed().as_secs_f64() * 1e3;
            let eff = build_channels(placement, &layout, config)?.eff;
            let (zf, ms) = timed(|| Ok(zf_beamformer(&eff, config)))?;
            Ok(Solved { layout: Some(layout), eff, w: zf.w, ms: ms + draw })
        }
        Method::Cmimo => {
            let eff = cmimo_channels(placement, config)?;
            let (zf, ms) = timed(|| Ok(zf_beamformer(&eff, config)))?;
            Ok(Solved { layout: None, eff, w: zf.w, ms })
        }
    }
}

pub fn evaluate(method: Method, sample: usize, seed: u64, solved: &Solved, config: &ScenarioConfig<f64>) -> EvalRecord {
    let cr = communication_rates(&solved.w, &solved.eff, config);
    let budget = fro2(&solved.w) <= config.p_max * (1.0 + 1e-9);
    let layout_ok = solved.layout.as_ref().is_none_or(|l| l.is_feasible(config, 1e-9));
    EvalRecord {
        method,
        sample,
        seed,
        sr: sensing_rate(&solved.w, &solved.eff, config),
        csr: csr(&cr, config.r_min),
        cr,
        ms: solved.ms,
        feasible: budget && layout_ok,
        digest: scenario_digest(config),
        layout: solved.layout.as_ref().map_or_else(|| "-".to_string(), |l| l.digest()),
    }
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub methods: Vec<Method>,
    pub n_samples: usize,
    /// Sample `i` uses placement seed `seed + i`.
    pub seed: u64,
    /// Evaluate samples on the rayon pool. Timings are then contended.
    pub parallel: bool,
    pub ao: AoConfig<f64>,
}

impl BenchPlan {
    pub fn new(config: &ScenarioConfig<f64>, methods: Vec<Method>, n_samples: usize, seed: u64) -> Self {
        Self { methods, n_samples, seed, parallel: true, ao: AoConfig::for_scenario(config) }
    }
}

/// Records in sample order, methods in the order requested.
pub fn run_benchmark(
    config: &ScenarioConfig<f64>,
    plan: &BenchPlan,
    weights: Option<&GnnWeights<f64>>,
) -> Result<Vec<EvalRecord>> {
    config.validate()?;
    plan.ao.validate()?;
    if plan.methods.contains(&Method::Gnn) {
        match weights {
            None => return Err(Error::Config("the gnn method needs a weight file".into())),
            Some(w) => w.dims.check(config)?,
        }
    }
    let one = |i: usize| -> Result<Vec<EvalRecord>> {
        let seed = plan.seed.wrapping_add(i as u64);
        let placement = sample_placement(config, seed);
        plan.methods
            .iter()
            .map(|&m| Ok(evaluate(m, i, seed, &solve(m, &placement, config, &plan.ao, weights, seed)?, config)))
            .collect()
    };
    let per_sample: Vec<Vec<EvalRecord>> = if plan.parallel {
        (0..plan.n_samples).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..plan.n_samples).map(one).collect::<Result<_>>()?
    };
    Ok(per_sample.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub sr_mean: f64,
    pub sr_std: f64,
    pub csr_mean: f64,
    pub csr_std: f64,
    pub ms_mean: f64,
    pub ms_std: f64,
    pub ms_median: f64,
    pub feasible: usize,
}

/// Mean and sample standard deviation (zero below two values).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        (v[h - 1] + v[h]) / 2.0
    }
}

/// Per-method aggregates, keyed by method tag.
pub fn aggregate(records: &[EvalRecord]) -> std::collections::BTreeMap<String, Aggregate> {
    let mut out = std::collections::BTreeMap::new();
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    for m in methods {
        let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m).collect();
        let col = |f: fn(&EvalRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let (sr_mean, sr_std) = mean_std(&col(|r| r.sr));
        let (csr_mean, csr_std) = mean_std(&col(|r| r.csr));
        let ms = col(|r| r.ms);
        let (ms_mean, ms_std) = mean_std(&ms);
        out.insert(
            m.tag().to_string(),
            Aggregate {
                count: rows.len(),
                sr_mean,
                sr_std,
                csr_mean,
                csr_std,
                ms_mean,
                ms_std,
                ms_median: median(&ms),
                feasible: rows.iter().filter(|r| r.feasible).count(),
            },
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

pub fn emit_report(records: &[EvalRecord], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => emit_csv(records),
        ReportFormat::Json => {
            let doc = serde_json::json!({
                "digest": records.first().map(|r| r.digest.clone()),
                "methods": aggregate(records),
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            s
        }
    }
}

fn emit_csv(records: &[EvalRecord]) -> String {
    let k = records.iter().map(|r| r.cr.len()).max().unwrap_or(0);
    let mut out = String::from("method,sample,seed,sr,csr,ms,feasible,digest,layout");
    for i in 1..=k {
        let _ = write!(out, ",cr_{i}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method, r.sample, r.seed, r.sr, r.csr, r.ms, r.feasible, r.digest, r.layout
        );
        for i in 0..k {
            match r.cr.get(i) {
                Some(c) => {
                    let _ = write!(out, ",{c}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
