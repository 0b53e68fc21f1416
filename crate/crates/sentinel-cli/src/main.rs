//! Command-line front end: corpus synthesis, training, detection, the
//! explain path (LIME + SHAP + prompt + provider + readability), the
//! experiment harness, and report validation.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sentinel_core::data::{
    compute_class_stats, default_attack_profiles, default_schedule, fit_scaler, load_kpm_csv,
    make_windows, reference_stats, split_train_test, synthesize_dataset, FeatureStats, KpmRecord,
    Scaler, SynthConfig, Window, FEATURE_NAMES, NUM_FEATURES,
};
use sentinel_core::gateway::{
    Gateway, HttpTransport, MockTransport, ProviderConfig, RealSleeper, RecordReplayTransport,
    Transport,
};
use sentinel_core::harness::{
    prepare_days, run_sequential_days, sweep_window_ratio, write_grid_csv, write_ratio_day_csv,
    write_stage_series_csv, write_summary_json, HarnessConfig,
};
use sentinel_core::lime::{cell_names, explain_lime, Discretizer, LimeConfig};
use sentinel_core::lstm::{
    fit, forward, init_model, load_model, predict_window, save_model, TrainConfig,
};
use sentinel_core::metrics::compute_metrics;
use sentinel_core::prompt::{
    render_prompt, render_user_text, Exemplar, PromptInputs, PromptMode,
};
use sentinel_core::readability::{analyze_text, flesch_reading_ease, fog_grade_band, gunning_fog};
use sentinel_core::report::{
    prompt_digest, validate_report, validate_report_json, InsightReport, ReadabilityScores,
    WindowRef,
};
use sentinel_core::shap::{
    explain_kernel_shap, global_importance, CoalitionSampling, ShapConfig,
};
use sentinel_core::SentinelError;

#[derive(Parser)]
#[command(name = "sentinel", version, about = "KPM DDoS detection and explanation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-day KPM corpus as CSV.
    Synth(SynthArgs),
    /// Train an LSTM detector on a CSV corpus.
    Train(TrainArgs),
    /// Run detection over a CSV corpus, one JSON line per window.
    Detect(DetectArgs),
    /// Produce a full insight report for one window.
    Explain(ExplainArgs),
    /// Run the sequential-day and window-by-ratio experiments.
    Experiment(ExperimentArgs),
    /// Validate an insight report against the published schema.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON file of class-conditional feature statistics; the
    /// bundled reference table is used when omitted.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    days: u32,
    #[arg(long, default_value_t = 20)]
    ues: usize,
    #[arg(long, default_value_t = 700)]
    samples_per_ue: usize,
    #[arg(long, default_value_t = 1)]
    malicious_ues: usize,
    #[arg(long, default_value_t = 0.4)]
    attack_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 15)]
    max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of windows used for training; the rest is validation.
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Zero,
    Few,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    /// Real chat-completions endpoint over HTTP.
    Openai,
    /// Built-in transport that answers with a bundled insight text.
    Mock,
    /// Built-in transport that always returns HTTP 500.
    MockFail,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    window_id: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Zero)]
    mode: ModeArg,
    /// Directory of exemplar pairs (*.json instance with a sibling *.md
    /// response); required for few-shot mode.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderArg::Mock)]
    provider: ProviderArg,
    /// Answer provider calls from this recorded session; no network access.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Record provider traffic into this session file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value = "gpt-4o")]
    provider_model: String,
    #[arg(long, default_value_t = 3)]
    max_retries: usize,
    #[arg(long, default_value_t = 5000)]
    lime_samples: usize,
    #[arg(long, default_value_t = 2048)]
    shap_samples: usize,
    /// Number of windows sampled for the global SHAP aggregate.
    #[arg(long, default_value_t = 8)]
    global_windows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "experiment-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
}

/// A message plus the process exit code it maps to: 2 for configuration and
/// parse errors, 3 for provider failures, 1 otherwise.
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Display) -> CliError {
        CliError { code: 2, message: message.to_string() }
    }
}

impl From<SentinelError> for CliError {
    fn from(e: SentinelError) -> CliError {
        let code = match &e {
            SentinelError::ModelParse(_) => return CliError { code: 2, message: e.to_string() },
            SentinelError::VersionMismatch { .. } => {
                return CliError { code: 2, message: format!("model parse error: {e}") }
            }
            SentinelError::Config(_) | SentinelError::InvalidArgument(_) => 2,
            SentinelError::Auth(_) | SentinelError::Transport(_) | SentinelError::ReplayMiss(_) => 3,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError { code: 1, message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError { code: 2, message: e.to_string() }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let stats: FeatureStats = match &args.stats {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => reference_stats(),
    };
    let mut config = SynthConfig::new(args.days, args.ues, args.samples_per_ue, args.seed);
    config.schedule = default_schedule(
        args.days,
        args.ues,
        args.samples_per_ue,
        args.malicious_ues,
        args.attack_fraction,
    );
    config.profiles = default_attack_profiles();
    let records = synthesize_dataset(&stats, &config)?;
    sentinel_core::data::write_kpm_csv(&args.out, &records)?;
    let positives = records.iter().filter(|r| r.label == 1).count();
    println!(
        "wrote {} records ({} positive, {:.2}%) to {}",
        records.len(),
        positives,
        100.0 * positives as f64 / records.len() as f64,
        args.out.display()
    );
    Ok(())
}

/// Sidecar document saved next to the model binary; detection and
/// explanation need the same scaler and window geometry as training.
#[derive(Serialize, Deserialize)]
struct ModelMeta {
    window_size: usize,
    hidden_dim: usize,
    threshold: f64,
    scaler: Scaler,
}

fn meta_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn load_meta(model_path: &Path) -> Result<ModelMeta, CliError> {
    let path = meta_path(model_path);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::config(format!("cannot read model metadata {}: {e}", path.display()))
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let report = load_kpm_csv(&args.input)?;
    if report.records.is_empty() {
        return Err(CliError::config("training corpus has no rows"));
    }
    let scaler = fit_scaler(&report.records)?;
    let scaled = sentinel_core::data::apply_scaler(&scaler, &report.records);
    let windows = make_windows(&scaled, args.window)?;
    let (train, validation) = split_train_test(&windows, args.train_fraction, args.seed ^ 0x5eed)?;

    let config = TrainConfig {
        max_epochs: args.max_epochs,
        patience: args.patience,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let model = init_model(args.seed, NUM_FEATURES, args.hidden);
    let (fitted, history) = fit(&model, &train, &validation, &config)?;

    save_model(&fitted, &args.model_out)?;
    let meta = ModelMeta {
        window_size: args.window,
        hidden_dim: args.hidden,
        threshold: args.threshold,
        scaler,
    };
    std::fs::write(meta_path(&args.model_out), serde_json::to_string_pretty(&meta)?)?;
    println!(
        "trained on {} windows ({} validation); best epoch {} (val loss {:.6}); model at {}",
        train.len(),
        validation.len(),
        history.best_epoch,
        history.best_val_loss,
        args.model_out.display()
    );
    Ok(())
}

fn window_id(w: &Window) -> String {
    format!("d{}-{}-{}", w.day_index, w.ue_id, w.start_timestamp)
}

/// Load model, metadata, and the scaled windows of a corpus file.
fn load_model_and_windows(
    model_path: &Path,
    input: &Path,
) -> Result<(sentinel_core::lstm::LstmParams, ModelMeta, Vec<Window>), CliError> {
    let params = load_model(model_path)?;
    let meta = load_meta(model_path)?;
    let report = load_kpm_csv(input)?;
    if report.dropped_rows > 0 {
        eprintln!("warning: dropped {} malformed rows", report.dropped_rows);
    }
    let windows = if report.records.is_empty() {
        Vec::new()
    } else {
        let scaled = sentinel_core::data::apply_scaler(&meta.scaler, &report.records);
        make_windows(&scaled, meta.window_size)?
    };
    Ok((params, meta, windows))
}

#[derive(Serialize)]
struct DetectLine<'a> {
    window_id: String,
    ue_id: &'a str,
    start_timestamp: i64,
    day_index: u32,
    probability: f64,
    label: u8,
    true_label: u8,
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let (params, meta, windows) = load_model_and_windows(&args.model, &args.input)?;
    let mut out = std::fs::File::create(&args.out)?;
    if windows.is_empty() {
        eprintln!("warning: input produced no windows; wrote empty output");
        return Ok(());
    }
    let mut predictions = Vec::with_capacity(windows.len());
    let mut labels = Vec::with_capacity(windows.len());
    for w in &windows {
        let p = predict_window(&params, w, meta.threshold)?;
        predictions.push(p.label);
        labels.push(w.label);
        let line = DetectLine {
            window_id: window_id(w),
            ue_id: &w.ue_id,
            start_timestamp: w.start_timestamp,
            day_index: w.day_index,
            probability: p.probability,
            label: p.label,
            true_label: w.label,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    let m = compute_metrics(&predictions, &labels)?;
    println!(
        "{} windows; precision {:.4} recall {:.4} f1 {:.4} fpr {:.2}% fnr {:.2}%",
        windows.len(),
        m.precision,
        m.recall,
        m.f1,
        m.fpr_pct,
        m.fnr_pct
    );
    Ok(())
}

fn load_exemplars(dir: &Path) -> Result<Vec<Exemplar>, CliError> {
    let mut json_paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("cannot read exemplars dir {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    json_paths.sort();
    let mut exemplars = Vec::new();
    for json_path in json_paths {
        let md_path = json_path.with_extension("md");
        let assistant_text = std::fs::read_to_string(&md_path).map_err(|e| {
            CliError::config(format!("exemplar response {} missing: {e}", md_path.display()))
        })?;
        let inputs = sentinel_core::fixtures::instance_inputs(&std::fs::read_to_string(&json_path)?)?;
        exemplars.push(Exemplar {
            user_text: render_user_text(&inputs, PromptMode::FewShot)?,
            assistant_text,
        });
    }
    if exemplars.is_empty() {
        return Err(CliError::config(format!(
            "config error: no exemplar fixtures found in {}",
            dir.display()
        )));
    }
    Ok(exemplars)
}

fn mock_success_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"content": text}}],
        "usage": {"prompt_tokens": 1200, "completion_tokens": 300}
    })
    .to_string()
}

fn build_transport(args: &ExplainArgs, mode: PromptMode) -> Result<Box<dyn Transport>, CliError> {
    if let Some(path) = &args.replay {
        return Ok(Box::new(RecordReplayTransport::replay(path)?));
    }
    let base: Box<dyn Transport> = match args.provider {
        ProviderArg::Openai => Box::new(HttpTransport::new(60)?),
        ProviderArg::Mock => {
            let text = match mode {
                PromptMode::ZeroShot => sentinel_core::fixtures::LLM_OUTPUT_ZERO_SHOT,
                PromptMode::FewShot => sentinel_core::fixtures::LLM_OUTPUT_FEW_SHOT,
            };
            let body = mock_success_body(text);
            Box::new(MockTransport::new(vec![(200, body.as_str()); args.max_retries + 1]))
        }
        ProviderArg::MockFail => Box::new(MockTransport::new(vec![
            (500, r#"{"error":"unavailable"}"#);
            args.max_retries + 1
        ])),
    };
    if let Some(path) = &args.record {
        return Ok(Box::new(RecordReplayTransport::record(base, path)?));
    }
    Ok(base)
}

fn cmd_explain(args: ExplainArgs) -> Result<(), CliError> {
    let mode = match args.mode {
        ModeArg::Zero => PromptMode::ZeroShot,
        ModeArg::Few => PromptMode::FewShot,
    };
    let exemplars = match (mode, &args.exemplars) {
        (PromptMode::ZeroShot, _) => Vec::new(),
        (PromptMode::FewShot, Some(dir)) => load_exemplars(dir)?,
        (PromptMode::FewShot, None) => {
            return Err(CliError::config(
                "config error: few-shot mode requires --exemplars pointing at exemplar fixtures",
            ))
        }
    };

    let (params, meta, windows) = load_model_and_windows(&args.model, &args.input)?;
    let target = windows
        .iter()
        .find(|w| window_id(w) == args.window_id)
        .ok_or_else(|| CliError::config(format!("window id {} not found", args.window_id)))?;
    let prediction = predict_window(&params, target, meta.threshold)?;

    let f = |flat: &[f64]| {
        let rows: Vec<Vec<f64>> = flat.chunks(NUM_FEATURES).map(<[f64]>::to_vec).collect();
        forward(&params, &rows, meta.threshold).map(|p| p.probability).unwrap_or(f64::NAN)
    };
    let flat = target.flatten();
    let mut timings = BTreeMap::new();

    // LIME over the corpus distribution.
    let t = Instant::now();
    let training: Vec<Vec<f64>> = windows.iter().map(Window::flatten).collect();
    let discretizer = Discretizer::fit(&training, cell_names(meta.window_size))?;
    let lime_config = LimeConfig { num_samples: args.lime_samples, seed: args.seed, ..Default::default() };
    let lime = explain_lime(f, &flat, &discretizer, &lime_config)?;
    timings.insert("lime_ms".to_string(), t.elapsed().as_secs_f64() * 1e3);

    // Local SHAP against the corpus mean background.
    let t = Instant::now();
    let cells = flat.len();
    let mut background = vec![0.0f64; cells];
    for row in &training {
        for (b, v) in background.iter_mut().zip(row) {
            *b += v;
        }
    }
    for b in &mut background {
        *b /= training.len() as f64;
    }
    let shap_config =
        ShapConfig { sampling: CoalitionSampling::Sampled(args.shap_samples), seed: args.seed };
    let shap = explain_kernel_shap(f, &flat, &background, &shap_config)?;
    timings.insert("shap_ms".to_string(), t.elapsed().as_secs_f64() * 1e3);

    // Global SHAP over an evenly spaced sample of windows.
    let t = Instant::now();
    let take = args.global_windows.clamp(1, windows.len());
    let step = windows.len().div_ceil(take);
    let mut sampled = Vec::with_capacity(take);
    for w in windows.iter().step_by(step) {
        sampled.push(explain_kernel_shap(f, &w.flatten(), &background, &shap_config)?);
    }
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let shap_global = global_importance(&sampled, &names)?;
    timings.insert("shap_global_ms".to_string(), t.elapsed().as_secs_f64() * 1e3);

    // Prompt construction.
    let raw = load_kpm_csv(&args.input)?;
    let stats = compute_class_stats(&sentinel_core::data::apply_scaler(&meta.scaler, &raw.records))
        .unwrap_or_else(|_| reference_stats());
    let grid = |cells: &[f64]| -> Vec<Vec<f64>> {
        cells.chunks(NUM_FEATURES).map(<[f64]>::to_vec).collect()
    };
    let inputs = PromptInputs {
        stats,
        sequence: target.values.iter().map(|r| r.to_vec()).collect(),
        prediction,
        lime_rules: lime.rules.clone(),
        shap_local: grid(&shap.phi),
        shap_global: grid(&shap_global.per_cell),
    };
    let bundle = render_prompt(&inputs, mode, &exemplars)?;

    // Provider call; explanations are still written when it fails.
    let t = Instant::now();
    let transport = build_transport(&args, mode)?;
    let gateway = Gateway::new(transport, RealSleeper);
    let provider_config = ProviderConfig {
        model: args.provider_model.clone(),
        max_retries: args.max_retries,
        ..ProviderConfig::default()
    };
    let insight = gateway.complete(&bundle, &provider_config);
    timings.insert("llm_ms".to_string(), t.elapsed().as_secs_f64() * 1e3);

    let (insight, provider_error) = match insight {
        Ok(text) => (Some(text), None),
        Err(e) => (None, Some(e)),
    };
    let readability = insight.as_ref().and_then(|i| {
        let stats = analyze_text(&i.text);
        let fre = flesch_reading_ease(&stats).ok()?;
        let fog = gunning_fog(&stats).ok()?;
        Some(ReadabilityScores {
            flesch_reading_ease: fre,
            gunning_fog: fog,
            fog_grade_band: fog_grade_band(fog),
        })
    });

    let report = InsightReport {
        window: WindowRef {
            window_id: window_id(target),
            ue_id: target.ue_id.clone(),
            start_timestamp: target.start_timestamp,
            day_index: target.day_index,
        },
        prediction,
        lime,
        shap,
        shap_global,
        prompt_mode: mode,
        prompt_digest: prompt_digest(&bundle),
        insight,
        readability,
        timings_ms: timings,
    };
    validate_report(&report)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;

    if let Some(e) = provider_error {
        eprintln!("provider failure after retries: {e}; report written with null insight");
        return Err(CliError { code: 3, message: format!("insight unavailable: {e}") });
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn default_window() -> usize {
    3
}
fn default_windows() -> Vec<usize> {
    vec![3]
}
fn default_ratios() -> Vec<f64> {
    vec![0.0, 0.3]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    days: u32,
    ues: usize,
    samples_per_ue: usize,
    malicious_ues: usize,
    attack_fraction: f64,
    seed: u64,
}

/// Experiment configuration; every key is optional except the corpus source
/// (exactly one of `input` or `synth`).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentConfig {
    input: Option<PathBuf>,
    synth: Option<SynthSection>,
    /// Window size for the sequential-day (replay ratio) experiment.
    window: usize,
    /// Window sizes for the sweep grids.
    windows: Vec<usize>,
    ratios: Vec<f64>,
    seeds: Vec<u64>,
    hidden_dim: usize,
    max_epochs: usize,
    patience: usize,
    train_fraction: f64,
    val_fraction: f64,
    threshold: f64,
    split_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let h = HarnessConfig::default();
        ExperimentConfig {
            input: None,
            synth: None,
            window: default_window(),
            windows: default_windows(),
            ratios: default_ratios(),
            seeds: default_seeds(),
            hidden_dim: h.hidden_dim,
            max_epochs: 15,
            patience: h.train.patience,
            train_fraction: h.train_fraction,
            val_fraction: h.val_fraction,
            threshold: h.threshold,
            split_seed: h.split_seed,
        }
    }
}

impl ExperimentConfig {
    fn harness_config(&self) -> HarnessConfig {
        HarnessConfig {
            window_size: self.window,
            hidden_dim: self.hidden_dim,
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            threshold: self.threshold,
            split_seed: self.split_seed,
            train: TrainConfig {
                max_epochs: self.max_epochs,
                patience: self.patience,
                ..TrainConfig::default()
            },
        }
    }

    fn load_corpus(&self) -> Result<Vec<KpmRecord>, CliError> {
        match (&self.input, &self.synth) {
            (Some(path), None) => Ok(load_kpm_csv(path)?.records),
            (None, Some(s)) => {
                let mut config = SynthConfig::new(s.days, s.ues, s.samples_per_ue, s.seed);
                config.schedule = default_schedule(
                    s.days,
                    s.ues,
                    s.samples_per_ue,
                    s.malicious_ues,
                    s.attack_fraction,
                );
                config.profiles = default_attack_profiles();
                Ok(synthesize_dataset(&reference_stats(), &config)?)
            }
            _ => Err(CliError::config("config must set exactly one of `input` or `synth`")),
        }
    }
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    config: &'a ExperimentConfig,
    sequential: &'a sentinel_core::harness::SequentialResult,
    sweep: &'a sentinel_core::harness::SweepResult,
    runtime_secs: f64,
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", args.config.display())))?;
    let config: ExperimentConfig =
        serde_yaml::from_str(&text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;

    std::fs::create_dir_all(&args.out_dir)?;
    let started = Instant::now();
    let records = config.load_corpus()?;
    let hc = config.harness_config();
    let days = prepare_days(&records, &hc)?;

    let sequential = run_sequential_days(&days, &config.ratios, &config.seeds, &hc)?;
    let sweep = sweep_window_ratio(&records, &config.windows, &config.ratios, &config.seeds, &hc)?;
    let runtime_secs = started.elapsed().as_secs_f64();

    write_ratio_day_csv(&args.out_dir.join("table4.csv"), &sequential)?;
    write_grid_csv(
        &args.out_dir.join("fig5_fpr.csv"),
        &sweep.window_sizes,
        &sweep.ratios,
        &sweep.fpr_pct,
    )?;
    write_grid_csv(
        &args.out_dir.join("fig5_fnr.csv"),
        &sweep.window_sizes,
        &sweep.ratios,
        &sweep.fnr_pct,
    )?;
    write_stage_series_csv(&args.out_dir.join("fig4_series.csv"), &sequential)?;
    let summary =
        ExperimentSummary { config: &config, sequential: &sequential, sweep: &sweep, runtime_secs };
    write_summary_json(&args.out_dir.join("summary.json"), &summary)?;
    let effective = serde_yaml::to_string(&config)
        .map_err(|e| CliError { code: 1, message: e.to_string() })?;
    std::fs::write(args.out_dir.join("effective-config.yaml"), effective)?;

    if let Some((w, r)) = sweep.best_cell {
        println!("best sweep cell: window {w}, ratio {r}");
    }
    println!("experiment artifacts written to {} ({runtime_secs:.1} s)", args.out_dir.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    validate_report_json(&value).map_err(|e| CliError::config(format!("invalid report: {e}")))?;
    println!("{} is schema-valid", args.input.display());
    Ok(())
}
