use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use swisac::ao::{run_swisac_ao, AoConfig};
use swisac::bench::{emit_report, run_benchmark, BenchPlan, Method, ReportFormat};
use swisac::channel::{build_channels, EffectiveChannels};
use swisac::check::run_checks;
use swisac::gnn::{gnn_forward, load_weights_file, GnnWeights};
use swisac::metrics::{communication_rates, csr, sensing_rate};
use swisac::scalar::CMatrix;
use swisac::scenario::{sample_placement, scenario_digest, ScenarioFile};
use swisac::{Config, Layout, Placement};

#[derive(Parser)]
#[command(name = "swisac", version, about = "Pinching-antenna ISAC optimizer, GNN inference and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Alternating optimization on one instance; emits the trace.
    Optimize(Common),
    /// GNN forward pass on one instance; emits the solution.
    Infer(Common),
    /// Monte-Carlo comparison of methods.
    Bench(Common),
    /// Runs the invariant suite.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario document; defaults apply to missing keys, and to everything when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value = "ao,zf,random,cmimo")]
    methods: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
}

impl Common {
    fn scenario(&self) -> Result<(Config, Option<Placement>)> {
        let file = match &self.scenario {
            Some(p) => ScenarioFile::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ScenarioFile::default(),
        };
        Ok((file.config()?, file.placement()?))
    }

    fn weights(&self) -> Result<Option<GnnWeights<f64>>> {
        self.weights
            .as_ref()
            .map(|p| load_weights_file(p).with_context(|| format!("loading {}", p.display())))
            .transpose()
    }

    fn format(&self) -> Result<ReportFormat> {
        Ok(self.format.parse()?)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

fn matrix_json(w: &CMatrix<f64>) -> Value {
    let rows = |f: fn(&swisac::scalar::Cplx<f64>) -> f64| -> Vec<Vec<f64>> {
        (0..w.nrows()).map(|r| (0..w.ncols()).map(|c| f(&w[(r, c)])).collect()).collect()
    };
    json!({ "re": rows(|z| z.re), "im": rows(|z| z.im) })
}

fn solution_json(cfg: &Config, layout: &Layout, w: &CMatrix<f64>, eff: &EffectiveChannels<f64>) -> Value {
    let cr = communication_rates(w, eff, cfg);
    json!({
        "digest": scenario_digest(cfg),
        "layout": {
            "digest": layout.digest(),
            "tx_x": layout.tx_x,
            "rx_x": layout.rx_x,
            "tx_selected_segment": layout.tx_selected_segment,
        },
        "w": matrix_json(w),
        "sr": sensing_rate(w, eff, cfg),
        "csr": csr(&cr, cfg.r_min),
        "cr": cr,
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Optimize(args) => {
            let (cfg, embedded) = args.scenario()?;
            let placement = embedded.unwrap_or_else(|| sample_placement(&cfg, args.seed));
            let ao = AoConfig::for_scenario(&cfg);
            let (layout, state, trace) = run_swisac_ao(&placement, &cfg, &ao, args.seed)?;
            match args.format()? {
                ReportFormat::Csv => args.emit(&trace.to_csv())?,
                ReportFormat::Json => {
                    let eff = build_channels(&placement, &layout, &cfg)?.eff;
                    let mut doc = solution_json(&cfg, &layout, &state.w, &eff);
                    doc["infeasible_qos"] = json!(trace.infeasible_qos);
                    doc["objective"] = json!(trace.records.iter().map(|r| r.objective).collect::<Vec<_>>());
                    args.emit(&pretty(&doc))?;
                }
            }
        }
        Command::Infer(args) => {
            let (cfg, embedded) = args.scenario()?;
            let Some(weights) = args.weights()? else { bail!("infer needs --weights") };
            let placement = embedded.unwrap_or_else(|| sample_placement(&cfg, args.seed));
            let (layout, state) = gnn_forward(&weights, &placement, &cfg)?;
            let eff = build_channels(&placement, &layout, &cfg)?.eff;
            args.emit(&pretty(&solution_json(&cfg, &layout, &state.w, &eff)))?;
        }
        Command::Bench(args) => {
            let (cfg, _) = args.scenario()?;
            let weights = args.weights()?;
            let plan = BenchPlan::new(&cfg, Method::parse_list(&args.methods)?, args.samples, args.seed);
            let records = run_benchmark(&cfg, &plan, weights.as_ref())?;
            args.emit(&emit_report(&records, args.format()?))?;
        }
        Command::Check(args) => {
            let (cfg, _) = args.scenario()?;
            let weights = args.weights()?;
            let results = run_checks(&cfg, weights.as_ref(), args.samples.min(10), args.seed)?;
            let mut text = String::new();
            for r in &results {
                text.push_str(&format!("{} {} {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail));
            }
            args.emit(&text)?;
            if results.iter().any(|r| !r.passed) {
                bail!("invariant check failed");
            }
        }
    }
    Ok(())
}
