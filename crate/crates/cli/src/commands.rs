//! The five subcommands.
//!
//! Each command takes a fully parsed argument struct, does its work, and
//! writes its outputs plus a [`RunManifest`](crate::manifest::RunManifest)
//! next to them. Commands return the manifest so tests can drive them
//! in-process without spawning the binary.
//!
//! - `simulate` — draw sequences from a named generator, with the exact
//!   per-sequence oracle log-likelihoods alongside.
//! - `train` — fit a model from a flat config file.
//! - `eval` — score a checkpoint on a dataset.
//! - `trace` — dump an intensity trajectory over a uniform grid.
//! - `bench` — per-length wall times of the sequential and chunked
//!   recurrence kernels, correctness-checked before timing.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use s2p2_core::events::{load_jsonl, save_jsonl, Dataset, EventSequence};
use s2p2_core::eval::{evaluate, EvalConfig};
use s2p2_core::model::{ConditionedState, S2P2Config, S2P2Model};
use s2p2_core::rng::CounterRng;
use s2p2_core::scan::{
    force_scan_kernel, reset_scan_op_count, scan_op_count, ScanKernel,
};
use s2p2_core::simulate::{
    random_hawkes_params, simulate_hawkes, simulate_long_range, simulate_self_correcting,
    simulate_square_wave, ExpHawkesParams, LongRangeParams, OracleProcess, SelfCorrectingParams,
    SquareWaveParams,
};
use s2p2_core::train::{train, TrainConfig, TrainError};
use s2p2_core::llh::ZohMode;

use crate::config::FlatConfig;
use crate::manifest::{manifest_path_for, RunManifest, WallClock};
use crate::CliError;

/// Substream index reserved for drawing the parameters of a randomized
/// process family; sequence i always uses substream i, so parameter
/// draws live far away from any realistic sequence count.
const PARAM_DRAW_SUBSTREAM: u64 = u64::MAX;

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Generator: hawkes | self-correcting | square-wave | long-range |
    /// random-hawkes-k3.
    #[arg(long)]
    pub process: String,
    /// Flat key-value file with process parameters; explicit flags
    /// override its entries.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Mark count for `hawkes` (defaults to the length of --nu).
    #[arg(long)]
    pub k: Option<usize>,
    /// Base rates, comma separated, length K.
    #[arg(long)]
    pub nu: Option<String>,
    /// Excitation weights, row-major K×K comma list.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Decay rates, row-major K×K comma list.
    #[arg(long)]
    pub beta: Option<String>,
    /// Self-correcting: log-intensity growth rate.
    #[arg(long)]
    pub a: Option<f64>,
    /// Self-correcting: per-event log-intensity drop.
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub low: Option<f64>,
    #[arg(long)]
    pub high: Option<f64>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub duty: Option<f64>,
    #[arg(long)]
    pub tail_rate: Option<f64>,
    #[arg(long)]
    pub t_tail: Option<f64>,
    #[arg(long)]
    pub distractor_rate: Option<f64>,
    #[arg(long)]
    pub trigger_rate: Option<f64>,
    #[arg(long)]
    pub delay_mean: Option<f64>,
    #[arg(long)]
    pub delay_var: Option<f64>,
    /// Number of sequences to draw.
    #[arg(long)]
    pub n: usize,
    /// Observation window length.
    #[arg(long = "T")]
    pub t_end: f64,
    /// Base seed; sequence i is drawn from substream i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset path (JSON lines). The oracle log-likelihood table
    /// and the manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Merge a params file (if any) with explicit flags, flags winning, and
/// return the effective settings for the manifest echo.
fn simulate_settings(args: &SimulateArgs) -> Result<FlatConfig, CliError> {
    let mut cfg = match &args.params {
        Some(path) => FlatConfig::load(path)?,
        None => FlatConfig::new(),
    };
    if let Some(k) = args.k {
        cfg.set("k", k);
    }
    for (key, value) in [("nu", &args.nu), ("alpha", &args.alpha), ("beta", &args.beta)] {
        if let Some(v) = value {
            cfg.set(key, v);
        }
    }
    for (key, value) in [
        ("a", args.a),
        ("b", args.b),
        ("low", args.low),
        ("high", args.high),
        ("period", args.period),
        ("duty", args.duty),
        ("tail_rate", args.tail_rate),
        ("t_tail", args.t_tail),
        ("distractor_rate", args.distractor_rate),
        ("trigger_rate", args.trigger_rate),
        ("delay_mean", args.delay_mean),
        ("delay_var", args.delay_var),
    ] {
        if let Some(v) = value {
            cfg.set(key, v);
        }
    }
    cfg.set("process", &args.process);
    cfg.set("n", args.n);
    cfg.set("T", args.t_end);
    cfg.set("seed", args.seed);
    Ok(cfg)
}

fn hawkes_params_from(cfg: &FlatConfig) -> Result<ExpHawkesParams, CliError> {
    let nu = cfg
        .f64_list("nu")?
        .ok_or_else(|| CliError::validation("hawkes needs --nu (comma list of base rates)"))?;
    let k = cfg.usize("k", nu.len())?;
    if k == 0 || nu.len() != k {
        return Err(CliError::validation(format!(
            "hawkes: --nu has {} entries but k = {k}",
            nu.len()
        )));
    }
    let flat_alpha = cfg
        .f64_list("alpha")?
        .ok_or_else(|| CliError::validation("hawkes needs --alpha (row-major K*K comma list)"))?;
    let flat_beta = cfg
        .f64_list("beta")?
        .ok_or_else(|| CliError::validation("hawkes needs --beta (row-major K*K comma list)"))?;
    for (name, flat) in [("alpha", &flat_alpha), ("beta", &flat_beta)] {
        if flat.len() != k * k {
            return Err(CliError::validation(format!(
                "hawkes: --{name} has {} entries, expected K*K = {}",
                flat.len(),
                k * k
            )));
        }
    }
    let unflatten =
        |flat: &[f64]| (0..k).map(|r| flat[r * k..(r + 1) * k].to_vec()).collect::<Vec<_>>();
    Ok(ExpHawkesParams { nu, alpha: unflatten(&flat_alpha), beta: unflatten(&flat_beta) })
}

/// Resolve the generator. For the randomized family the drawn parameters
/// are echoed back into `cfg` so the manifest pins them exactly.
fn resolve_process(args: &SimulateArgs, cfg: &mut FlatConfig) -> Result<OracleProcess, CliError> {
    let join = |xs: &[f64]| {
        xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
    };
    match args.process.as_str() {
        "hawkes" => Ok(OracleProcess::Hawkes(hawkes_params_from(cfg)?)),
        "self-correcting" => {
            let d = SelfCorrectingParams::default();
            Ok(OracleProcess::SelfCorrecting(SelfCorrectingParams {
                a: cfg.f64("a", d.a)?,
                b: cfg.f64("b", d.b)?,
            }))
        }
        "square-wave" => {
            let d = SquareWaveParams::default();
            Ok(OracleProcess::SquareWave(SquareWaveParams {
                low: cfg.f64("low", d.low)?,
                high: cfg.f64("high", d.high)?,
                period: cfg.f64("period", d.period)?,
                duty: cfg.f64("duty", d.duty)?,
                tail_rate: cfg.f64("tail_rate", d.tail_rate)?,
                t_tail: cfg.f64("t_tail", d.t_tail)?,
            }))
        }
        "long-range" => {
            let d = LongRangeParams::default();
            Ok(OracleProcess::LongRange(LongRangeParams {
                distractor_rate: cfg.f64("distractor_rate", d.distractor_rate)?,
                trigger_rate: cfg.f64("trigger_rate", d.trigger_rate)?,
                delay_mean: cfg.f64("delay_mean", d.delay_mean)?,
                delay_var: cfg.f64("delay_var", d.delay_var)?,
                t_end: args.t_end,
            }))
        }
        "random-hawkes-k3" => {
            let mut rng = CounterRng::new(args.seed).substream(PARAM_DRAW_SUBSTREAM);
            let params = random_hawkes_params(&mut rng);
            cfg.set("drawn_nu", join(&params.nu));
            cfg.set("drawn_alpha", join(&params.alpha.concat()));
            cfg.set("drawn_beta", join(&params.beta.concat()));
            Ok(OracleProcess::Hawkes(params))
        }
        other => Err(CliError::validation(format!(
            "unknown process {other:?}; expected hawkes, self-correcting, square-wave, long-range, or random-hawkes-k3"
        ))),
    }
}

fn draw_sequence(
    process: &OracleProcess,
    t_end: f64,
    rng: &mut CounterRng,
) -> Result<EventSequence, CliError> {
    let seq = match process {
        OracleProcess::Hawkes(p) => simulate_hawkes(p, t_end, rng),
        OracleProcess::SelfCorrecting(p) => simulate_self_correcting(p, t_end, rng),
        OracleProcess::SquareWave(p) => simulate_square_wave(p, t_end, rng),
        OracleProcess::LongRange(p) => simulate_long_range(p, rng),
    };
    seq.map_err(|e| CliError::validation(format!("simulation failed: {e}")))
}

pub fn oracle_csv_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    out.with_file_name(format!("{stem}.oracle.csv"))
}

/// Draw `n` sequences, write the dataset, and tabulate the generator's
/// own log-likelihood of every sequence (the reference the evaluation
/// command's likelihood-ratio score divides by).
pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest, CliError> {
    let clock = WallClock::start();
    if !(args.t_end > 0.0) || !args.t_end.is_finite() {
        return Err(CliError::validation(format!("--T must be positive, got {}", args.t_end)));
    }
    let mut cfg = simulate_settings(args)?;
    let process = resolve_process(args, &mut cfg)?;

    let mut sequences = Vec::with_capacity(args.n);
    let mut oracle = String::from("seq_index,num_events,oracle_loglik\n");
    let base = CounterRng::new(args.seed);
    for i in 0..args.n {
        let mut rng = base.substream(i as u64);
        let seq = draw_sequence(&process, args.t_end, &mut rng)?;
        let ll = process
            .loglik(&seq)
            .map_err(|e| CliError::validation(format!("oracle log-likelihood failed: {e}")))?;
        oracle.push_str(&format!("{i},{},{ll}\n", seq.len()));
        sequences.push(seq);
    }
    let name = args.out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let dataset = Dataset::new(sequences, process.num_marks(), name)
        .map_err(|e| CliError::validation(format!("assembling dataset: {e}")))?;
    save_jsonl(&dataset, &args.out)
        .map_err(|e| CliError::validation(format!("writing {}: {e}", args.out.display())))?;
    let oracle_path = oracle_csv_path(&args.out);
    std::fs::write(&oracle_path, oracle.as_bytes())
        .map_err(|e| CliError::validation(format!("writing {}: {e}", oracle_path.display())))?;

    let mut manifest = RunManifest::new("simulate");
    manifest.echo_config(&cfg);
    manifest.seed("simulate", args.seed);
    if let Some(p) = &args.params {
        manifest.input(p);
    }
    manifest.output(&args.out);
    manifest.output(&oracle_path);
    manifest.wall_seconds = clock.seconds();
    manifest.write_atomic(&manifest_path_for(&args.out))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Flat key-value file with model and optimizer settings.
    #[arg(long)]
    pub config: PathBuf,
    /// Training dataset (JSON lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation dataset; omitted means early stopping monitors the
    /// training objective instead.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Resume from a checkpoint instead of a fresh initialization. The
    /// architecture comes from the checkpoint; architecture keys in the
    /// config must then either be absent or agree with it.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Run directory: checkpoint, per-epoch log, report, manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_zoh_mode(s: &str) -> Result<ZohMode, CliError> {
    match s {
        "backward" => Ok(ZohMode::Backward),
        "forward" => Ok(ZohMode::Forward),
        other => Err(CliError::validation(format!(
            "zoh_mode must be backward or forward, got {other:?}"
        ))),
    }
}

/// Resolve model architecture + optimizer settings from the config file,
/// writing every effective value (defaults included) back for the echo.
fn resolve_train_config(
    cfg: &mut FlatConfig,
    data_marks: usize,
    arch_base: Option<&S2P2Config>,
) -> Result<(S2P2Config, u64, TrainConfig), CliError> {
    // A resumed run inherits the checkpoint's architecture as the default
    // for every key; a fresh run starts from the standard small model.
    let base = arch_base.cloned().unwrap_or(S2P2Config {
        num_marks: data_marks,
        num_layers: 1,
        state_dim: 8,
        stream_dim: 8,
        input_dependent: false,
        zoh_mode: ZohMode::Backward,
    });
    let base_zoh = if base.zoh_mode == ZohMode::Backward { "backward" } else { "forward" };
    let arch = S2P2Config {
        num_marks: cfg.usize("num_marks", base.num_marks)?,
        num_layers: cfg.usize("num_layers", base.num_layers)?,
        state_dim: cfg.usize("state_dim", base.state_dim)?,
        stream_dim: cfg.usize("stream_dim", base.stream_dim)?,
        input_dependent: cfg.bool("input_dependent", base.input_dependent)?,
        zoh_mode: parse_zoh_mode(cfg.get("zoh_mode").unwrap_or(base_zoh))?,
    };
    let init_seed = cfg.u64("init_seed", 0)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        lr: cfg.f64("lr", d.lr)?,
        warmup_fraction: cfg.f64("warmup_fraction", d.warmup_fraction)?,
        epochs: cfg.usize("epochs", d.epochs)?,
        batch_size: cfg.usize("batch_size", d.batch_size)?,
        grad_clip_norm: cfg.f64("grad_clip_norm", d.grad_clip_norm)?,
        mc_points: cfg.usize("mc_points", d.mc_points)?,
        patience: cfg.usize("patience", d.patience)?,
        seed: cfg.u64("seed", d.seed)?,
    };
    cfg.set("num_marks", arch.num_marks);
    cfg.set("num_layers", arch.num_layers);
    cfg.set("state_dim", arch.state_dim);
    cfg.set("stream_dim", arch.stream_dim);
    cfg.set("input_dependent", arch.input_dependent);
    cfg.set("zoh_mode", if arch.zoh_mode == ZohMode::Backward { "backward" } else { "forward" });
    cfg.set("init_seed", init_seed);
    cfg.set("lr", tc.lr);
    cfg.set("warmup_fraction", tc.warmup_fraction);
    cfg.set("epochs", tc.epochs);
    cfg.set("batch_size", tc.batch_size);
    cfg.set("grad_clip_norm", tc.grad_clip_norm);
    cfg.set("mc_points", tc.mc_points);
    cfg.set("patience", tc.patience);
    cfg.set("seed", tc.seed);
    Ok((arch, init_seed, tc))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::NonFinite { .. } => CliError::numerical(e.to_string()),
        other => CliError::validation(other.to_string()),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest, CliError> {
    let clock = WallClock::start();
    let mut cfg = FlatConfig::load(&args.config)?;
    let train_set = load_jsonl(&args.train)
        .map_err(|e| CliError::validation(format!("loading {}: {e}", args.train.display())))?;
    let valid_set = match &args.valid {
        Some(path) => load_jsonl(path)
            .map_err(|e| CliError::validation(format!("loading {}: {e}", path.display())))?,
        None => Dataset::new(Vec::new(), train_set.num_marks(), "none")
            .map_err(|e| CliError::validation(e.to_string()))?,
    };
    let resumed = match &args.init_from {
        Some(path) => Some(
            S2P2Model::load_checkpoint(path)
                .map_err(|e| CliError::validation(format!("loading {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let (arch, init_seed, tc) = resolve_train_config(
        &mut cfg,
        train_set.num_marks() as usize,
        resumed.as_ref().map(|m| &m.config),
    )?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::validation(format!("creating {}: {e}", args.out_dir.display())))?;

    let model = match resumed {
        Some(m) => {
            if m.config != arch {
                return Err(CliError::validation(format!(
                    "checkpoint architecture {:?} disagrees with the configured {:?}; drop the \
                     architecture keys from the config or point --init-from elsewhere",
                    m.config, arch
                )));
            }
            m
        }
        None => S2P2Model::init(arch, init_seed),
    };
    let (_fitted, report) =
        train(model, &train_set, &valid_set, &tc, Some(&args.out_dir)).map_err(train_error)?;

    let report_path = args.out_dir.join("train_report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::validation(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, json.as_bytes())
        .map_err(|e| CliError::validation(format!("writing {}: {e}", report_path.display())))?;

    if let Some(p) = &args.init_from {
        cfg.set("init_from", p.display());
    }
    let mut manifest = RunManifest::new("train");
    manifest.echo_config(&cfg);
    manifest.seed("init", init_seed);
    manifest.seed("train", tc.seed);
    manifest.input(&args.config);
    manifest.input(&args.train);
    if let Some(v) = &args.valid {
        manifest.input(v);
    }
    if let Some(p) = &args.init_from {
        manifest.input(p);
    }
    if let Some(best) = &report.best_checkpoint {
        manifest.output(best);
    }
    manifest.output(&args.out_dir.join("training_log.csv"));
    manifest.output(&report_path);
    manifest.wall_seconds = clock.seconds();
    manifest.write_atomic(&manifest_path_for(&args.out_dir))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Model checkpoint to score.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to score it on (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Monte-Carlo points per interval for the likelihood compensator.
    #[arg(long, default_value_t = 64)]
    pub mc_points: usize,
    /// Base seed of the evaluation Monte-Carlo substreams.
    #[arg(long, default_value_t = 0)]
    pub mc_seed: u64,
    /// Histogram bins for both calibration curves.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// n of the top-n mark accuracy.
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Prediction horizon, in multiples of the mean inter-arrival time.
    #[arg(long, default_value_t = 20.0)]
    pub horizon_scale: f64,
    /// Mean inter-arrival time of the training data; defaults to the
    /// evaluated dataset's own mean.
    #[arg(long)]
    pub mean_inter_arrival: Option<f64>,
    /// Per-sequence generator log-likelihood table from `simulate`;
    /// enables the likelihood-ratio score.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Report path (JSON). Calibration curves land next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Read the `oracle_loglik` column of a simulate-produced table.
fn load_oracle_csv(path: &Path, expected_rows: usize) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::validation(format!("{}: empty oracle table", path.display())))?;
    let col = header
        .split(',')
        .position(|c| c.trim() == "oracle_loglik")
        .ok_or_else(|| {
            CliError::validation(format!("{}: no oracle_loglik column", path.display()))
        })?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(col).ok_or_else(|| {
            CliError::validation(format!("{}: row {} is short", path.display(), i + 1))
        })?;
        let ll: f64 = field.trim().parse().map_err(|_| {
            CliError::validation(format!(
                "{}: row {}: {field:?} is not a number",
                path.display(),
                i + 1
            ))
        })?;
        out.push(ll);
    }
    if out.len() != expected_rows {
        return Err(CliError::validation(format!(
            "{}: {} oracle rows for {} sequences",
            path.display(),
            out.len(),
            expected_rows
        )));
    }
    Ok(out)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest, CliError> {
    let clock = WallClock::start();
    let model = S2P2Model::load_checkpoint(&args.checkpoint)
        .map_err(|e| CliError::validation(format!("loading {}: {e}", args.checkpoint.display())))?;
    let data = load_jsonl(&args.data)
        .map_err(|e| CliError::validation(format!("loading {}: {e}", args.data.display())))?;
    let oracle_ll = match &args.oracle {
        Some(path) => Some(load_oracle_csv(path, data.len())?),
        None => None,
    };
    let cfg = EvalConfig {
        mc_points: args.mc_points,
        mc_seed: args.mc_seed,
        bins: args.bins,
        top_n: args.top_n,
        horizon_scale: args.horizon_scale,
        mean_inter_arrival: args.mean_inter_arrival,
    };
    let output = evaluate(&model, &data, &cfg, oracle_ll.as_deref())
        .map_err(|e| CliError::validation(format!("evaluation failed: {e}")))?;

    std::fs::write(&args.out, output.report.to_json().as_bytes())
        .map_err(|e| CliError::validation(format!("writing {}: {e}", args.out.display())))?;
    let stem = args.out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let time_path = args.out.with_file_name(format!("{stem}.time_calibration.csv"));
    let mark_path = args.out.with_file_name(format!("{stem}.mark_calibration.csv"));
    output
        .time_curve
        .write_csv(&time_path)
        .and_then(|_| output.mark_curve.write_csv(&mark_path))
        .map_err(|e| CliError::validation(format!("writing calibration curves: {e}")))?;

    let mut cfg_echo = FlatConfig::new();
    cfg_echo.set("mc_points", args.mc_points);
    cfg_echo.set("mc_seed", args.mc_seed);
    cfg_echo.set("bins", args.bins);
    cfg_echo.set("top_n", args.top_n);
    cfg_echo.set("horizon_scale", args.horizon_scale);
    if let Some(m) = args.mean_inter_arrival {
        cfg_echo.set("mean_inter_arrival", m);
    }
    let mut manifest = RunManifest::new("eval");
    manifest.echo_config(&cfg_echo);
    manifest.seed("mc", args.mc_seed);
    manifest.input(&args.checkpoint);
    manifest.input(&args.data);
    if let Some(o) = &args.oracle {
        manifest.input(o);
    }
    manifest.output(&args.out);
    manifest.output(&time_path);
    manifest.output(&mark_path);
    manifest.wall_seconds = clock.seconds();
    manifest.write_atomic(&manifest_path_for(&args.out))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    /// Model checkpoint to trace.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to take the traced sequence from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Index of the sequence within --data.
    #[arg(long, default_value_t = 0)]
    pub seq_index: usize,
    /// Trace an empty history instead of a data sequence.
    #[arg(long)]
    pub empty: bool,
    /// Window length for --empty.
    #[arg(long)]
    pub window: Option<f64>,
    /// Number of uniformly spaced grid points across the window.
    #[arg(long, default_value_t = 1000)]
    pub grid_points: usize,
    /// Output table (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_trace(args: &TraceArgs) -> Result<RunManifest, CliError> {
    let clock = WallClock::start();
    if args.grid_points < 2 {
        return Err(CliError::validation("--grid-points must be at least 2"));
    }
    let model = S2P2Model::load_checkpoint(&args.checkpoint)
        .map_err(|e| CliError::validation(format!("loading {}: {e}", args.checkpoint.display())))?;
    let seq = match (&args.data, args.empty) {
        (Some(_), true) | (None, false) => {
            return Err(CliError::validation("pass exactly one of --data or --empty"));
        }
        (None, true) => {
            let window = args.window.ok_or_else(|| {
                CliError::validation("--empty needs --window (the trace length)")
            })?;
            if !(window > 0.0) || !window.is_finite() {
                return Err(CliError::validation(format!(
                    "--window must be positive, got {window}"
                )));
            }
            EventSequence::new(Vec::new(), Vec::new(), 0.0, window)
                .map_err(|e| CliError::validation(e.to_string()))?
        }
        (Some(path), false) => {
            if args.window.is_some() {
                return Err(CliError::validation(
                    "--window only applies to --empty; data sequences keep their own window",
                ));
            }
            let data = load_jsonl(path)
                .map_err(|e| CliError::validation(format!("loading {}: {e}", path.display())))?;
            data.sequences()
                .get(args.seq_index)
                .cloned()
                .ok_or_else(|| {
                    CliError::validation(format!(
                        "--seq-index {} out of range for {} sequences",
                        args.seq_index,
                        data.len()
                    ))
                })?
        }
    };

    let m = args.grid_points;
    let (lo, hi) = (seq.t_start(), seq.t_end());
    let grid: Vec<f64> =
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let rows = model
        .intensity_trace(&seq, &grid)
        .map_err(|e| CliError::validation(format!("trace failed: {e}")))?;

    let k = model.config.num_marks;
    let mut csv = String::from("t");
    for mark in 0..k {
        csv.push_str(&format!(",lambda_{mark}"));
    }
    csv.push_str(",lambda_total\n");
    for (i, &t) in grid.iter().enumerate() {
        let row = &rows[i * k..(i + 1) * k];
        csv.push_str(&format!("{t}"));
        for &v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push_str(&format!(",{}\n", row.iter().sum::<f64>()));
    }
    std::fs::write(&args.out, csv.as_bytes())
        .map_err(|e| CliError::validation(format!("writing {}: {e}", args.out.display())))?;

    let mut cfg_echo = FlatConfig::new();
    cfg_echo.set("grid_points", args.grid_points);
    cfg_echo.set("empty", args.empty);
    if let Some(w) = args.window {
        cfg_echo.set("window", w);
    }
    if args.data.is_some() {
        cfg_echo.set("seq_index", args.seq_index);
    }
    let mut manifest = RunManifest::new("trace");
    manifest.echo_config(&cfg_echo);
    manifest.input(&args.checkpoint);
    if let Some(d) = &args.data {
        manifest.input(d);
    }
    manifest.output(&args.out);
    manifest.wall_seconds = clock.seconds();
    manifest.write_atomic(&manifest_path_for(&args.out))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Sequence lengths: `a..b` doubles from a through b, or an explicit
    /// comma list.
    #[arg(long, default_value = "8..524288")]
    pub lengths: String,
    /// What to time per length: `condition` (the history scan) or
    /// `loglik` (scan + likelihood assembly).
    #[arg(long, default_value = "condition")]
    pub mode: String,
    /// Timed repetitions per kernel; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Output table (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_lengths(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = |s: &str| CliError::validation(format!("bad --lengths entry {s:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad(a))?;
        let hi: usize = b.trim().parse().map_err(|_| bad(b))?;
        if lo == 0 || hi < lo {
            return Err(CliError::validation(format!(
                "--lengths range {spec:?} must satisfy 0 < start <= end"
            )));
        }
        let mut out = Vec::new();
        let mut n = lo;
        while n <= hi {
            out.push(n);
            match n.checked_mul(2) {
                Some(next) => n = next,
                None => break,
            }
        }
        return Ok(out);
    }
    spec.split(',')
        .map(|s| {
            let n: usize = s.trim().parse().map_err(|_| bad(s))?;
            if n == 0 {
                return Err(bad(s));
            }
            Ok(n)
        })
        .collect()
}

/// Deterministic length-n sequence with uniform gaps; mark 0 throughout.
fn bench_sequence(n: usize) -> EventSequence {
    let gap = 0.1;
    let times: Vec<f64> = (0..n).map(|i| gap * (i + 1) as f64).collect();
    let t_end = gap * n as f64 + gap / 2.0;
    EventSequence::new(times, vec![0u32; n], 0.0, t_end).expect("bench sequence is valid")
}

fn bench_model() -> S2P2Model {
    S2P2Model::init(S2P2Config::default(), 0)
}

fn state_diff(a: &ConditionedState, b: &ConditionedState) -> f64 {
    let mut worst = 0.0f64;
    let pairs = [(&a.x_right_re, &b.x_right_re), (&a.x_right_im, &b.x_right_im), (&a.u_rows, &b.u_rows)];
    for (xs, ys) in pairs {
        for (x, y) in xs.iter().zip(ys) {
            for (u, v) in x.iter().zip(y) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    worst
}

fn median_seconds(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    samples[samples.len() / 2]
}

/// Per-length timing of both recurrence kernels over the identical entry
/// point. Before anything is timed the two kernels' conditioning states
/// (and, in loglik mode, likelihood totals) are compared; a disagreement
/// beyond 1e-10 aborts the run, so the numbers in the table are only ever
/// produced by a checked code path.
pub fn cmd_bench(args: &BenchArgs) -> Result<RunManifest, CliError> {
    let clock = WallClock::start();
    if args.repeats == 0 {
        return Err(CliError::validation("--repeats must be positive"));
    }
    if args.mode != "condition" && args.mode != "loglik" {
        return Err(CliError::validation(format!(
            "--mode must be condition or loglik, got {:?}",
            args.mode
        )));
    }
    let lengths = parse_lengths(&args.lengths)?;
    let model = bench_model();
    let mc_points = 1usize;

    let mut csv = String::from(
        "n,mode,median_seconds_sequential,median_seconds_parallel,scan_ops_sequential,scan_ops_parallel,max_abs_diff\n",
    );
    for &n in &lengths {
        let seq = bench_sequence(n);

        // Correctness gate: identical states (and totals) from both kernels.
        let run_cond = |kernel: ScanKernel| -> Result<ConditionedState, CliError> {
            let _guard = force_scan_kernel(kernel);
            model.condition(&seq).map_err(|e| CliError::numerical(format!("n={n}: {e}")))
        };
        let cond_seq = run_cond(ScanKernel::Sequential)?;
        let cond_par = run_cond(ScanKernel::Parallel)?;
        let mut diff = state_diff(&cond_seq, &cond_par);
        if args.mode == "loglik" {
            let run_ll = |kernel: ScanKernel| -> Result<f64, CliError> {
                let _guard = force_scan_kernel(kernel);
                model
                    .log_likelihood(&seq, mc_points, 0)
                    .map(|ll| ll.total)
                    .map_err(|e| CliError::numerical(format!("n={n}: {e}")))
            };
            diff = diff.max((run_ll(ScanKernel::Sequential)? - run_ll(ScanKernel::Parallel)?).abs());
        }
        if !(diff < 1e-10) {
            return Err(CliError::numerical(format!(
                "kernel disagreement {diff:.3e} at n={n} exceeds 1e-10; refusing to time"
            )));
        }

        // Timed runs drive the same entry points under a forced kernel.
        let mut medians = [0.0f64; 2];
        let mut ops = [0u64; 2];
        for (slot, kernel) in [ScanKernel::Sequential, ScanKernel::Parallel].into_iter().enumerate()
        {
            let _guard = force_scan_kernel(kernel);
            reset_scan_op_count();
            match args.mode.as_str() {
                "condition" => drop(model.condition(&seq).map_err(|e| CliError::numerical(e.to_string()))?),
                _ => drop(
                    model
                        .log_likelihood(&seq, mc_points, 0)
                        .map_err(|e| CliError::numerical(e.to_string()))?,
                ),
            }
            ops[slot] = scan_op_count();
            let mut samples = Vec::with_capacity(args.repeats);
            for _ in 0..args.repeats {
                let t0 = std::time::Instant::now();
                match args.mode.as_str() {
                    "condition" => drop(
                        model.condition(&seq).map_err(|e| CliError::numerical(e.to_string()))?,
                    ),
                    _ => drop(
                        model
                            .log_likelihood(&seq, mc_points, 0)
                            .map_err(|e| CliError::numerical(e.to_string()))?,
                    ),
                }
                samples.push(t0.elapsed().as_secs_f64());
            }
            medians[slot] = median_seconds(&mut samples);
        }
        csv.push_str(&format!(
            "{n},{},{},{},{},{},{diff}\n",
            args.mode, medians[0], medians[1], ops[0], ops[1]
        ));
        let mut err = std::io::stderr();
        let _ = writeln!(
            err,
            "bench n={n}: sequential {:.4}s, chunked {:.4}s, diff {diff:.2e}",
            medians[0], medians[1]
        );
    }
    std::fs::write(&args.out, csv.as_bytes())
        .map_err(|e| CliError::validation(format!("writing {}: {e}", args.out.display())))?;

    let mut cfg_echo = FlatConfig::new();
    cfg_echo.set("lengths", &args.lengths);
    cfg_echo.set("mode", &args.mode);
    cfg_echo.set("repeats", args.repeats);
    cfg_echo.set("mc_points", mc_points);
    let mut manifest = RunManifest::new("bench");
    manifest.echo_config(&cfg_echo);
    manifest.output(&args.out);
    manifest.wall_seconds = clock.seconds();
    manifest.write_atomic(&manifest_path_for(&args.out))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_specs() {
        assert_eq!(parse_lengths("8..64").unwrap(), vec![8, 16, 32, 64]);
        assert_eq!(parse_lengths("8..100").unwrap(), vec![8, 16, 32, 64]);
        assert_eq!(parse_lengths("5,10,3").unwrap(), vec![5, 10, 3]);
        assert!(parse_lengths("0..8").is_err());
        assert!(parse_lengths("8..4").is_err());
        assert!(parse_lengths("a,b").is_err());
    }

    #[test]
    fn hawkes_flag_parsing_rejects_shape_mismatches() {
        let mut cfg = FlatConfig::new();
        cfg.set("nu", "0.5,0.5");
        cfg.set("alpha", "0.1,0.2,0.3,0.4");
        cfg.set("beta", "1,1,1,1");
        let p = hawkes_params_from(&cfg).unwrap();
        assert_eq!(p.alpha[1], vec![0.3, 0.4]);
        cfg.set("alpha", "0.1,0.2,0.3");
        assert!(hawkes_params_from(&cfg).is_err());
        cfg.set("alpha", "0.1,0.2,0.3,0.4");
        cfg.set("k", 3);
        assert!(hawkes_params_from(&cfg).is_err());
    }

    #[test]
    fn bench_sequence_is_strictly_increasing() {
        let seq = bench_sequence(100);
        assert_eq!(seq.len(), 100);
        for w in seq.times().windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(seq.t_end() > *seq.times().last().unwrap());
    }
}
