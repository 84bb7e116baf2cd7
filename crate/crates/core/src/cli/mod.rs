//! Command-line front end: argument types and one function per subcommand.
//!
//! Every command computes its outputs in memory first and writes them at the
//! end, so a failed run leaves no partial files behind.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{FirmEntry, PermutationSettings, ProjectConfig, STAGE_PERMUTATION, STAGE_SYNTHETIC};

use crate::congestion::{annotate_panel, read_overrides, write_tags, CongestionSummary, TagConfig};
use crate::econometrics::{
    fit, CongestionRegressor, Dependent, FitResult, FixedEffect, ModelSpec, PermutationConfig, RNG_ALGORITHM,
};
use crate::error::Error;
use crate::feesim::{
    evaluate_policy, export_synthetic_panel, simulate, transfer_workload, write_trajectory, GroundTruth, Policy,
    PolicyCost, Scenario, SyntheticConfig, GWEI,
};
use crate::fixed::decimal_to_f64;
use crate::ingest::{build_panel, parse_blocks, parse_transactions, write_blocks, write_transactions, Panel, TxBatch};
use crate::metrics::{score_all, PeakWindow, ScoreContext, ScorecardSet};
use crate::report::{
    coefficient_table, firm_coefficient_table, floor_table, forward_curve_csv, scorecard_table, weekday_weekend_table,
    TextTable,
};
use crate::scheduler::{
    classify_regime, forward_curve, recommend, GasIntensity, GasThreshold, RegimeClass, RegimeRecommendation,
    TxProfile,
};
use crate::seed::derive_seed;

pub const OUT_DIR_ENV: &str = "PEAKSHAVE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_SIM_SEED: u64 = 20_260_101;
/// Subdirectory of the output directory holding the report bundle.
pub const REPORT_DIR: &str = "report";

pub const PANEL_FILE: &str = "panel.json";
pub const SCORECARDS_FILE: &str = "scorecards.json";
pub const REPORT_FILES: [&str; 6] = [
    "pooled_coefficients.txt",
    "firm_coefficients.txt",
    "scorecards.txt",
    "floors.txt",
    "weekday_weekend.txt",
    "forward_curve.csv",
];
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn fit_file(label: &str) -> String {
    format!("fit_{label}.json")
}

pub fn firm_fits_file(label: &str) -> String {
    format!("firm_fits_{label}.json")
}

#[derive(Debug, Parser)]
#[command(name = "peakshave", version, about = "Intraday gas-fee analysis, peak-shaving scorecards and fee-market simulation")]
pub struct Cli {
    /// Output directory (overrides the project config).
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse transaction and block exports into a panel.
    Ingest(IngestArgs),
    /// Fit an hour-of-day fee regression, pooled or per firm.
    Fit(FitArgs),
    /// Build per-firm scorecards.
    Score(ScoreArgs),
    /// Recommend a submission strategy for a transaction profile.
    Recommend(RecommendArgs),
    /// Run the fee-market simulator.
    Simulate(SimulateArgs),
    /// Assemble the report bundle from earlier outputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Hour dummies only.
    Base,
    /// Hour dummies plus a congestion regressor.
    Fullness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CongestionKind {
    PhiBr,
    PhiS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DependentKind {
    Usd,
    Eth,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Project config; only its output directory is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Panel JSON; defaults to panel.json in the output directory.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Base)]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value_t = CongestionKind::PhiBr)]
    pub congestion: CongestionKind,
    #[arg(long, value_enum, default_value_t = DependentKind::Usd)]
    pub dependent: DependentKind,
    /// `none`, or a comma list of `firm` and `week`.
    #[arg(long, default_value = "none")]
    pub fixed_effects: String,
    /// Fit each firm separately instead of the pooled sample.
    #[arg(long)]
    pub by_firm: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Project config for the peak window, permutation and gas threshold.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Pooled hour-only fit; defaults to fit_base.json.
    #[arg(long)]
    pub pooled_fit: Option<PathBuf>,
    /// Per-firm fits with a congestion term; defaults to firm_fits_fullness.json.
    #[arg(long)]
    pub firm_fits: Option<PathBuf>,
    /// Overrides the configured number of permutation replications.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replications: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fit the forward curve is read from; defaults to fit_base.json.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Panel used to resolve a mean or median gas threshold.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// `high`, `low`, or an expected USD fee per transaction.
    #[arg(long)]
    pub gas: String,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub deferrable: bool,
    /// USD cost of deferring one transaction.
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    /// Transactions per month.
    #[arg(long)]
    pub volume: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=24))]
    pub deadline_hours: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=23))]
    pub submit_hour: Option<u8>,
    /// `mean`, `median`, or a USD amount.
    #[arg(long)]
    pub gas_threshold: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; the built-in diurnal scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SIM_SEED)]
    pub seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub hours: Option<u32>,
    /// Also write a synthetic ingest-ready project into this directory.
    #[arg(long)]
    pub emit_panel: Option<PathBuf>,
    /// Synthetic transactions across all firms.
    #[arg(long, default_value_t = 20_000)]
    pub records: usize,
    /// USD premium injected in every peak-window hour of the synthetic panel.
    #[arg(long, default_value_t = 0.05)]
    pub premium: f64,
    /// USD per unit of fullness in the synthetic panel.
    #[arg(long, default_value_t = 0.1)]
    pub pass_through: f64,
    /// Transfers in the policy-costing workload.
    #[arg(long, default_value_t = 24_000)]
    pub workload: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Maps an error to the process exit code: 1 when the analysis could not be
/// computed, 2 for configuration and data problems.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::exit_code)
        .unwrap_or(2)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let out = cli.out_dir.as_deref();
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a, out),
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Score(a) => cmd_score(&a, out),
        Command::Recommend(a) => cmd_recommend(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Option<ProjectConfig>> {
    path.map(ProjectConfig::load).transpose().map_err(Into::into)
}

/// Flag or environment first, then the config, then `./out`.
fn output_dir(flag: Option<&Path>, cfg: Option<&ProjectConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn input_path(explicit: Option<&PathBuf>, dir: &Path, default_name: &str) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| dir.join(default_name))
}

fn require(path: &Path, hint: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(Error::data(format!("missing input {} ({hint})", path.display())).into());
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn load_panel(path: &Path) -> anyhow::Result<Panel> {
    require(path, "run `peakshave ingest` first")?;
    Ok(Panel::load(path)?)
}

/// Writes every file or none: files already written are removed when a
/// later write fails.
pub fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(Error::io(&path, e).into());
        }
        written.push(path);
    }
    Ok(())
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

pub fn cmd_ingest(args: &IngestArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = ProjectConfig::load(&args.config)?;
    let dir = output_dir(out, Some(&cfg));
    let delim = cfg.delimiter_byte();

    let blocks_file = fs::File::open(&cfg.blocks_file).map_err(|e| Error::io(&cfg.blocks_file, e))?;
    let block_rows = parse_blocks(blocks_file, &cfg.block_columns, delim)
        .with_context(|| format!("reading {}", cfg.blocks_file.display()))?;

    let parsed: Vec<_> = cfg
        .firms
        .par_iter()
        .map(|f| -> anyhow::Result<_> {
            let file = fs::File::open(&f.tx_file).map_err(|e| Error::io(&f.tx_file, e))?;
            let outcome = parse_transactions(file, &cfg.column_map, delim)
                .with_context(|| format!("reading {}", f.tx_file.display()))?;
            Ok((f.id.clone(), outcome))
        })
        .collect::<anyhow::Result<_>>()?;

    let mut rejects = csv::Writer::from_writer(Vec::new());
    rejects.write_record(["firm_id", "row", "tx_hash", "reason"])?;
    let mut batches = Vec::new();
    for (firm_id, outcome) in parsed {
        for r in &outcome.rejects {
            rejects.write_record([
                firm_id.as_str(),
                &r.row.to_string(),
                r.tx_hash.as_deref().unwrap_or(""),
                &r.reason,
            ])?;
        }
        batches.push(TxBatch {
            firm_id,
            records: outcome.records,
        });
    }
    let (panel, report) = build_panel(cfg.firms(), batches, &block_rows)?;
    let overrides = match &cfg.tag_overrides_file {
        Some(p) => read_overrides(fs::File::open(p).map_err(|e| Error::io(p, e))?)?,
        None => BTreeMap::new(),
    };
    let (panel, summary) = annotate_panel(panel, &cfg.tagging, &overrides)?;

    let mut exclusions = csv::Writer::from_writer(Vec::new());
    exclusions.write_record(["firm_id", "tx_hash", "reason"])?;
    for (firm, e) in &report.exclusions {
        exclusions.write_record([firm.as_str(), e.tx_hash.as_str(), &e.reason.to_string()])?;
    }

    let counts = counts_table(&report.per_firm, report.total, &summary);
    let rejects_bytes = rejects.into_inner().map_err(|e| anyhow::anyhow!("rejects buffer: {e}"))?;
    let files = vec![
        (PANEL_FILE.to_string(), panel.to_json()?.into_bytes()),
        ("rejects.csv".to_string(), rejects_bytes),
        (
            "exclusions.csv".to_string(),
            exclusions.into_inner().map_err(|e| anyhow::anyhow!("exclusions buffer: {e}"))?,
        ),
        ("tags.csv".to_string(), csv_bytes(|b| write_tags(b, &summary.tags))?),
        ("counts.txt".to_string(), counts.render().into_bytes()),
    ];
    write_outputs(&dir, &files)?;
    print!("{}", counts.render());
    log::info!("panel with {} records written to {}", panel.len(), dir.display());
    Ok(())
}

fn counts_table(per_firm: &[crate::ingest::FirmCount], total: usize, summary: &CongestionSummary) -> TextTable {
    let mut t = TextTable::new(&["Firm", "Industry", "Address", "N"]);
    if let Some(c) = &summary.ceiling {
        t.note(format!(
            "reward ceiling {} wei over {} blocks",
            c.ceiling, c.sample_size
        ));
    }
    for f in per_firm {
        t.push(vec![f.firm_id.clone(), f.industry.clone(), f.address.clone(), f.n.to_string()]);
    }
    t.push(vec!["Total".into(), String::new(), String::new(), total.to_string()]);
    t
}

fn model_spec(args: &FitArgs) -> anyhow::Result<ModelSpec> {
    let mut spec = match args.model {
        ModelKind::Base => ModelSpec::base(),
        ModelKind::Fullness => ModelSpec::with_fullness(),
    };
    spec.congestion = match args.congestion {
        CongestionKind::PhiBr => CongestionRegressor::FullnessProxy,
        CongestionKind::PhiS => CongestionRegressor::SpeculativeShare,
    };
    spec.dependent = match args.dependent {
        DependentKind::Usd => Dependent::FeeUsd,
        DependentKind::Eth => Dependent::FeeEth,
    };
    spec.fixed_effects = parse_fixed_effects(&args.fixed_effects)?;
    spec.validate()?;
    Ok(spec)
}

pub fn parse_fixed_effects(s: &str) -> anyhow::Result<BTreeSet<FixedEffect>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(BTreeSet::new());
    }
    s.split(',')
        .map(|part| match part.trim() {
            "firm" => Ok(FixedEffect::Firm),
            "week" => Ok(FixedEffect::Week),
            other => Err(Error::config(format!("unknown fixed effect {other:?}; use none, firm, week")).into()),
        })
        .collect()
}

pub type FirmFits = BTreeMap<String, std::result::Result<FitResult, String>>;

pub fn fit_by_firm(panel: &Panel, spec: &ModelSpec) -> FirmFits {
    let mut firm_spec = spec.clone();
    firm_spec.fixed_effects.remove(&FixedEffect::Firm);
    panel
        .firms
        .par_iter()
        .map(|f| {
            let r = panel
                .firm_subset(&f.firm_id)
                .and_then(|sub| fit(&sub, &firm_spec))
                .map_err(|e| e.to_string());
            (f.firm_id.clone(), r)
        })
        .collect()
}

pub fn cmd_fit(args: &FitArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = output_dir(out, cfg.as_ref());
    let panel = load_panel(&input_path(args.panel.as_ref(), &dir, PANEL_FILE))?;
    let spec = model_spec(args)?;
    let label = spec.label();
    if args.by_firm {
        let fits = fit_by_firm(&panel, &spec);
        if fits.values().all(|f| f.is_err()) {
            let reasons: Vec<String> = fits.iter().map(|(k, v)| format!("{k}: {}", v.as_ref().err().unwrap())).collect();
            return Err(Error::estimation(format!("no firm-level fit succeeded ({})", reasons.join("; "))).into());
        }
        let table = firm_coefficient_table(&fits);
        write_outputs(
            &dir,
            &[
                (firm_fits_file(&label), to_json(&fits)?),
                (format!("firm_coefficients_{label}.txt"), table.render().into_bytes()),
            ],
        )?;
        print!("{}", table.render());
    } else {
        let result = fit(&panel, &spec)?;
        for w in &result.warnings {
            log::warn!("{w}");
        }
        let table = coefficient_table(&[(label.as_str(), &result)]);
        write_outputs(
            &dir,
            &[
                (fit_file(&label), to_json(&result)?),
                (format!("coefficients_{label}.txt"), table.render().into_bytes()),
            ],
        )?;
        print!("{}", table.render());
    }
    Ok(())
}

/// Everything `score` writes, in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub scorecards: ScorecardSet,
    pub regimes: BTreeMap<String, RegimeClass>,
    pub gas_threshold: f64,
    pub peak_window: PeakWindow,
    pub permutation: PermutationConfig,
    pub rng: String,
}

fn fee_sample(panel: &Panel) -> Vec<f64> {
    panel.records.iter().map(|r| decimal_to_f64(r.tx.fee_usd)).collect()
}

pub fn score_panel(
    panel: &Panel,
    pooled: &FitResult,
    firm_fits: &FirmFits,
    window: &PeakWindow,
    permutation: &PermutationConfig,
    threshold: GasThreshold,
) -> anyhow::Result<ScoreOutput> {
    let ctx = ScoreContext {
        pooled_fit: pooled,
        window,
        permutation,
    };
    let set = score_all(panel, firm_fits, &ctx);
    if set.rows.is_empty() {
        let reasons: Vec<String> = set.omitted.iter().map(|o| format!("{}: {}", o.firm_id, o.reason)).collect();
        return Err(Error::metric(format!("no firm could be scored ({})", reasons.join("; "))).into());
    }
    let gas_threshold = threshold.resolve(&fee_sample(panel))?;
    let mut regimes = BTreeMap::new();
    for row in &set.rows {
        let firm = panel.firm(&row.firm_id).expect("scored firm is in the panel");
        let mean_fee = if row.n_total > 0 {
            decimal_to_f64(row.c_actual) / row.n_total as f64
        } else {
            0.0
        };
        let profile = TxProfile {
            gas: GasIntensity::Usd(mean_fee),
            deferrable: firm.deferrable_default,
            kappa: decimal_to_f64(firm.kappa),
            deadline_window: None,
            monthly_volume: None,
            submit_hour: None,
        };
        regimes.insert(row.firm_id.clone(), classify_regime(&profile, gas_threshold));
    }
    Ok(ScoreOutput {
        scorecards: set,
        regimes,
        gas_threshold,
        peak_window: window.clone(),
        permutation: *permutation,
        rng: RNG_ALGORITHM.to_string(),
    })
}

fn regime_cells(out: &ScoreOutput) -> BTreeMap<String, (crate::scheduler::Regime, bool)> {
    out.regimes
        .iter()
        .map(|(k, v)| (k.clone(), (v.regime, v.borderline)))
        .collect()
}

pub fn cmd_score(args: &ScoreArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = output_dir(out, cfg.as_ref());
    let panel = load_panel(&input_path(args.panel.as_ref(), &dir, PANEL_FILE))?;
    let pooled_path = input_path(args.pooled_fit.as_ref(), &dir, &fit_file(&ModelSpec::base().label()));
    require(&pooled_path, "run `peakshave fit --model base` first")?;
    let firm_path = input_path(args.firm_fits.as_ref(), &dir, &firm_fits_file(&ModelSpec::with_fullness().label()));
    require(&firm_path, "run `peakshave fit --model fullness --by-firm` first")?;
    let pooled: FitResult = read_json(&pooled_path)?;
    let firm_fits: FirmFits = read_json(&firm_path)?;

    let window = cfg.as_ref().map(|c| c.peak_window.clone()).unwrap_or_default();
    let mut permutation = match &cfg {
        Some(c) => c.permutation(),
        None => PermutationConfig {
            seed: derive_seed(0, STAGE_PERMUTATION),
            ..PermutationConfig::default()
        },
    };
    if let Some(r) = args.replications {
        permutation.replications = r as usize;
    }
    let threshold = cfg.as_ref().map(|c| c.gas_threshold).unwrap_or_default();
    let result = score_panel(&panel, &pooled, &firm_fits, &window, &permutation, threshold)?;
    let table = scorecard_table(&result.scorecards, &regime_cells(&result));
    write_outputs(
        &dir,
        &[
            (SCORECARDS_FILE.to_string(), to_json(&result)?),
            ("scorecards.txt".to_string(), table.render().into_bytes()),
        ],
    )?;
    print!("{}", table.render());
    Ok(())
}

pub fn cmd_recommend(args: &RecommendArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = output_dir(out, cfg.as_ref());
    let fit_path = input_path(args.fit.as_ref(), &dir, &fit_file(&ModelSpec::base().label()));
    require(&fit_path, "run `peakshave fit --model base` first")?;
    let fitted: FitResult = read_json(&fit_path)?;
    let window = cfg.as_ref().map(|c| c.peak_window.clone()).unwrap_or_default();
    let curve = forward_curve(&fitted, &window)?;

    let gas: GasIntensity = args.gas.parse()?;
    if args.deadline_hours.is_some() && !args.deferrable {
        return Err(Error::config("--deadline-hours needs --deferrable").into());
    }
    let mode = match &args.gas_threshold {
        Some(s) => s.parse::<GasThreshold>()?,
        None => cfg.as_ref().map(|c| c.gas_threshold).unwrap_or_default(),
    };
    let panel_path = args.panel.clone().or_else(|| Some(dir.join(PANEL_FILE)).filter(|p| p.is_file()));
    let threshold = match (mode, panel_path) {
        (GasThreshold::Absolute(v), _) => v,
        (m, Some(p)) => m.resolve(&fee_sample(&load_panel(&p)?))?,
        (_, None) if matches!(gas, GasIntensity::Usd(_)) => {
            return Err(Error::config("--gas with a USD amount needs --panel or an absolute --gas-threshold").into())
        }
        // High/Low ignore the threshold; report the curve's mean for reference.
        (_, None) => {
            let fees: Vec<f64> = curve.points.iter().filter_map(|p| p.expected_fee).collect();
            GasThreshold::Mean.resolve(&fees)?
        }
    };
    let profile = TxProfile {
        gas,
        deferrable: args.deferrable,
        kappa: args.kappa,
        deadline_window: args.deadline_hours,
        monthly_volume: args.volume,
        submit_hour: args.submit_hour,
    };
    let rec = recommend(&profile, &curve, threshold)?;
    write_outputs(&dir, &[("recommendation.json".to_string(), to_json(&rec)?)])?;
    print!("{}", recommendation_text(&rec));
    Ok(())
}

pub fn recommendation_text(rec: &RegimeRecommendation) -> String {
    let hours: Vec<String> = rec.recommended_hours.iter().map(u8::to_string).collect();
    let mut s = format!(
        "regime: {}{}\naction: {}\ndecision: {:?}\nrecommended hours (UTC): {}\nexpected saving per tx: {:.4} USD\n",
        rec.regime,
        if rec.borderline { " (borderline gas level)" } else { "" },
        rec.action,
        rec.decision,
        if hours.is_empty() { "-".to_string() } else { hours.join(",") },
        rec.expected_saving_per_tx,
    );
    if let Some(t) = rec.expected_saving_total {
        s.push_str(&format!("expected saving at volume: {t:.2} USD\n"));
    }
    if let Some(b) = rec.provisioning_budget {
        s.push_str(&format!("provisioning budget: {b:.2} USD\n"));
    }
    for w in &rec.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub scenario: Scenario,
    pub hourly_mean_base_fee_gwei: Vec<Option<f64>>,
    pub peak_window: PeakWindow,
    pub mean_base_fee_in_window_gwei: Option<f64>,
    pub mean_base_fee_outside_gwei: Option<f64>,
    pub policies: Vec<PolicyCost>,
    pub rng: String,
}

pub fn summarize_simulation(
    traj: &crate::feesim::Trajectory,
    scenario: &Scenario,
    seed: u64,
    window: &PeakWindow,
    workload: usize,
) -> anyhow::Result<SimulationSummary> {
    let gwei = GWEI as f64;
    let work = transfer_workload(workload);
    let policies = [Policy::Uniform, Policy::peak_shave(window.hours()), Policy::CheapestHour]
        .iter()
        .map(|p| evaluate_policy(traj, p, &work, None))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(SimulationSummary {
        seed,
        scenario: scenario.clone(),
        hourly_mean_base_fee_gwei: traj.hourly_mean_base_fee().iter().map(|m| m.map(|v| v / gwei)).collect(),
        peak_window: window.clone(),
        mean_base_fee_in_window_gwei: traj.mean_base_fee_where(|h| window.contains(h)).map(|v| v / gwei),
        mean_base_fee_outside_gwei: traj.mean_base_fee_where(|h| !window.contains(h)).map(|v| v / gwei),
        policies,
        rng: RNG_ALGORITHM.to_string(),
    })
}

fn simulation_table(s: &SimulationSummary) -> TextTable {
    let mut t = TextTable::new(&["hour", "mean base fee (gwei)", "peak"]);
    t.note(format!(
        "seed {}; mean base fee in window {} gwei, outside {} gwei",
        s.seed,
        crate::report::fmt_opt(s.mean_base_fee_in_window_gwei, 3),
        crate::report::fmt_opt(s.mean_base_fee_outside_gwei, 3)
    ));
    for p in &s.policies {
        t.note(format!(
            "{}: mean cost {:.0} wei over {} included, {} not included",
            p.policy, p.mean_cost_wei, p.n_included, p.n_not_included
        ));
    }
    for (h, m) in s.hourly_mean_base_fee_gwei.iter().enumerate() {
        t.push(vec![
            h.to_string(),
            crate::report::fmt_opt(*m, 3),
            if s.peak_window.contains(h as u8) { "yes" } else { "no" }.into(),
        ]);
    }
    t
}

pub fn cmd_simulate(args: &SimulateArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let dir = output_dir(out, None);
    let mut scenario = match &args.scenario {
        Some(p) => read_json::<Scenario>(p).map_err(|e| Error::config(format!("{e:#}")))?,
        None => Scenario::default(),
    };
    if let Some(h) = args.hours {
        scenario.hours = h;
    }
    scenario.validate()?;
    let window = PeakWindow::default();
    let (traj, _) = simulate(&scenario, args.seed, false)?;
    let summary = summarize_simulation(&traj, &scenario, args.seed, &window, args.workload)?;
    let table = simulation_table(&summary);

    let mut panel_files = Vec::new();
    if args.emit_panel.is_some() {
        let hours: BTreeSet<u8> = window.hours().collect();
        let syn = SyntheticConfig::standard(
            args.records,
            &hours,
            args.premium,
            args.pass_through,
            derive_seed(args.seed, STAGE_SYNTHETIC),
        );
        panel_files = synthetic_project_files(&traj, &syn, args.seed)?;
    }
    let files = vec![
        ("trajectory.csv".to_string(), csv_bytes(|b| write_trajectory(b, &traj))?),
        ("simulation.json".to_string(), to_json(&summary)?),
    ];
    write_outputs(&dir, &files)?;
    if let Some(p) = &args.emit_panel {
        if let Err(e) = write_outputs(p, &panel_files) {
            for (name, _) in &files {
                let _ = fs::remove_file(dir.join(name));
            }
            return Err(e);
        }
    }
    print!("{}", table.render());
    Ok(())
}

/// An ingest-ready directory: one transaction CSV per firm, a blocks CSV, a
/// project config pointing at them, and the injected ground truth.
pub fn synthetic_project_files(
    traj: &crate::feesim::Trajectory,
    syn: &SyntheticConfig,
    root_seed: u64,
) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let export = export_synthetic_panel(traj, syn)?;
    let columns = crate::ingest::ColumnMap::default();
    let block_cols = crate::ingest::BlockColumns::default();
    let mut files = vec![(
        "blocks.csv".to_string(),
        csv_bytes(|b| write_blocks(b, &export.blocks, &block_cols, b','))?,
    )];
    let mut entries = Vec::new();
    for (firm, batch) in export.firms.iter().zip(&export.batches) {
        let name = format!("tx_{}.csv", firm.firm_id);
        files.push((name.clone(), csv_bytes(|b| write_transactions(b, &batch.records, &columns, b','))?));
        entries.push(FirmEntry {
            id: firm.firm_id.clone(),
            industry: firm.industry.clone(),
            address: firm.address.to_string(),
            tx_file: PathBuf::from(name),
            deferrable: firm.deferrable_default,
            kappa: firm.kappa,
        });
    }
    let project = ProjectConfig {
        firms: entries,
        blocks_file: PathBuf::from("blocks.csv"),
        column_map: columns,
        block_columns: block_cols,
        delimiter: ',',
        peak_window: PeakWindow::default(),
        permutation: PermutationSettings::default(),
        gas_threshold: GasThreshold::default(),
        output_dir: PathBuf::from(DEFAULT_OUT_DIR),
        root_seed,
        tagging: TagConfig::default(),
        tag_overrides_file: None,
    };
    files.push(("project.json".to_string(), to_json(&project)?));
    files.push(("ground_truth.json".to_string(), to_json::<GroundTruth>(&export.truth)?));
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub files: Vec<ManifestEntry>,
    pub inputs: Vec<ManifestEntry>,
    pub fits: Vec<String>,
    pub rng: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn entry(name: &str, bytes: &[u8]) -> ManifestEntry {
    ManifestEntry {
        name: name.to_string(),
        bytes: bytes.len(),
        sha256: sha256_hex(bytes),
    }
}

pub fn cmd_report(args: &ReportArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = output_dir(out, cfg.as_ref());
    let window = cfg.as_ref().map(|c| c.peak_window.clone()).unwrap_or_default();
    let base_label = ModelSpec::base().label();
    let full_label = ModelSpec::with_fullness().label();
    let inputs = [
        (PANEL_FILE.to_string(), "run `peakshave ingest` first"),
        (fit_file(&base_label), "run `peakshave fit --model base` first"),
        (fit_file(&full_label), "run `peakshave fit --model fullness` first"),
        (firm_fits_file(&full_label), "run `peakshave fit --model fullness --by-firm` first"),
        (SCORECARDS_FILE.to_string(), "run `peakshave score` first"),
    ];
    let mut raw = Vec::new();
    for (name, hint) in &inputs {
        let path = dir.join(name);
        require(&path, hint)?;
        raw.push(fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    fn decode<T: for<'de> Deserialize<'de>>(name: &str, bytes: &[u8]) -> anyhow::Result<T> {
        serde_json::from_slice(bytes)
            .map_err(|e| Error::data(format!("{name}: {e}")))
            .map_err(Into::into)
    }
    let base: FitResult = decode(&inputs[1].0, &raw[1])?;
    let full: FitResult = decode(&inputs[2].0, &raw[2])?;
    let firm_fits: FirmFits = decode(&inputs[3].0, &raw[3])?;
    let scores: ScoreOutput = decode(&inputs[4].0, &raw[4])?;
    let curve = forward_curve(&base, &window)?;

    let rows = &scores.scorecards.rows;
    let bodies: [Vec<u8>; 6] = [
        coefficient_table(&[("Model 1", &base), ("Model 2", &full)]).render().into_bytes(),
        firm_coefficient_table(&firm_fits).render().into_bytes(),
        scorecard_table(&scores.scorecards, &regime_cells(&scores)).render().into_bytes(),
        floor_table(rows).render().into_bytes(),
        weekday_weekend_table(rows).render().into_bytes(),
        forward_curve_csv(&curve)?.into_bytes(),
    ];
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        files: REPORT_FILES.iter().zip(&bodies).map(|(n, b)| entry(n, b)).collect(),
        inputs: inputs.iter().zip(&raw).map(|((n, _), b)| entry(n, b)).collect(),
        fits: vec![base.fit_id.clone(), full.fit_id.clone()],
        rng: scores.rng.clone(),
    };
    let mut files: Vec<(String, Vec<u8>)> = REPORT_FILES.iter().map(|n| n.to_string()).zip(bodies).collect();
    files.push((MANIFEST_FILE.to_string(), to_json(&manifest)?));
    let report_dir = dir.join(REPORT_DIR);
    write_outputs(&report_dir, &files)?;
    println!("report bundle written to {}", report_dir.display());
    Ok(())
}

/// Reads a text table written by this tool.
pub fn read_table(path: &Path) -> anyhow::Result<TextTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(TextTable::parse(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_effect_flags() {
        assert!(parse_fixed_effects("none").unwrap().is_empty());
        assert_eq!(parse_fixed_effects("firm,week").unwrap().len(), 2);
        assert!(parse_fixed_effects("firm,day").is_err());
    }

    #[test]
    fn usage_errors_from_clap() {
        let err = Cli::try_parse_from(["peakshave", "simulate", "--hours", "0"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let ok = Cli::try_parse_from(["peakshave", "recommend", "--gas", "high", "--deferrable"]).unwrap();
        match ok.command {
            Command::Recommend(a) => assert!(a.deferrable),
            _ => unreachable!(),
        }
        let off = Cli::try_parse_from(["peakshave", "recommend", "--gas", "low", "--deferrable=false"]).unwrap();
        match off.command {
            Command::Recommend(a) => assert!(!a.deferrable),
            _ => unreachable!(),
        }
    }

    #[test]
    fn outputs_are_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("blocker")).unwrap();
        let files = vec![("a.txt".to_string(), b"x".to_vec()), ("blocker".to_string(), b"y".to_vec())];
        assert!(write_outputs(dir.path(), &files).is_err());
        assert!(!dir.path().join("a.txt").exists());
    }
}
