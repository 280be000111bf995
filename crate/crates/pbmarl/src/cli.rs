//! The `pbmarl` command line: `aggregate`, `simulate`, `report` and
//! `validate-data`.
//!
//! Every run writes a manifest before episode 1 so results can be
//! reproduced from the directory alone; all CSV output uses fixed headers,
//! 6 significant digits and `.` decimals. Exit codes: 0 ok, 2 data error,
//! 3 config error, 4 bad report input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::aggregation::{equal_shares_trace, greedy_trace, Rule, SelectionTrace, VoteProfile};
use crate::election::{CumulativeBallot, ElectionInstance};
use crate::metrics::{
    self, cost_quartile_distribution, Measure, WelfareReport, QUARTILE_LABELS,
};
use crate::neural::save_policy;
use crate::pabulib;
use crate::training::{
    self, run_experiment, snapshot_untrained, EpisodeKind, EpisodeRecord, ExperimentConfig,
    TrainingError,
};
use crate::LOG_FORMAT_VERSION;

pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_REPORT_INPUT: i32 = 4;

/// Dataset root searched when a `.pb` path does not resolve as given.
pub const DATA_DIR_ENV: &str = "PBMARL_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    ReportInput(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::ReportInput(_) => EXIT_REPORT_INPUT,
            CliError::Io(_) => 1,
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(err: TrainingError) -> Self {
        match err {
            TrainingError::Config(msg) => CliError::Config(msg),
            TrainingError::Data(e) => CliError::Data(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pbmarl",
    version,
    about = "Participatory-budgeting election simulator with learning voting agents"
)]
pub struct Cli {
    /// Worker threads for the per-agent phases (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate the historical ballots of a .pb file and write the
    /// winning set plus its fairness summary.
    Aggregate {
        pb_path: PathBuf,
        #[arg(long, default_value = "equalshares")]
        rule: String,
        /// Output directory for winners.csv and fairness.csv.
        #[arg(long, default_value = "aggregate-out")]
        out: PathBuf,
    },
    /// Train a population of voting agents on an election.
    Simulate {
        /// Flat key = value config file; flags override its entries.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<u32>,
        /// Train on a seeded uniform subsample of this many voters.
        #[arg(long)]
        voters: Option<usize>,
        /// Independent seeded runs (seed, seed+1, ...), one subdirectory
        /// each when greater than 1.
        #[arg(long)]
        repetitions: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare completed runs against the actual ballots.
    Report {
        run_dirs: Vec<PathBuf>,
        /// The .pb file the runs were trained on.
        #[arg(long)]
        actual: PathBuf,
        #[arg(long, default_value = "report-out")]
        out: PathBuf,
    },
    /// Parse a .pb file and print a summary of the election.
    ValidateData { pb_path: PathBuf },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Aggregate { pb_path, rule, out } => cmd_aggregate(&pb_path, &rule, &out),
        Command::Simulate {
            config,
            dataset,
            rule,
            seed,
            episodes,
            voters,
            repetitions,
            out,
        } => {
            let spec = SimulateSpec::assemble(
                config.as_deref(),
                dataset,
                rule,
                seed,
                episodes,
                voters,
                repetitions,
                out,
                cli.threads,
            )?;
            cmd_simulate(&spec)
        }
        Command::Report {
            run_dirs,
            actual,
            out,
        } => cmd_report(&run_dirs, &actual, &out),
        Command::ValidateData { pb_path } => cmd_validate_data(&pb_path),
    }
}

// ---------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------

/// 6 significant digits, `.` decimal separator, no thousands separators.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Type-7 quantile (linear interpolation), the common default.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation; 0 for a single value.
fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Resolves a dataset path, falling back to `$PBMARL_DATA_DIR/<path>`.
pub fn resolve_dataset(path: &Path) -> Result<PathBuf, CliError> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Ok(root) = std::env::var(DATA_DIR_ENV) {
            let candidate = Path::new(&root).join(path);
            if candidate.exists() {
                return Ok(candidate);
            }
        }
    }
    Err(CliError::Data(format!(
        "dataset {} not found (also tried ${DATA_DIR_ENV})",
        path.display()
    )))
}

fn load_election(path: &Path) -> Result<(ElectionInstance, String), CliError> {
    let resolved = resolve_dataset(path)?;
    let bytes = fs::read(&resolved)?;
    let checksum = hex_digest(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Data(format!("{} is not UTF-8", resolved.display())))?;
    let raw = pabulib::parse_pb(&text).map_err(|e| CliError::Data(e.to_string()))?;
    let election = pabulib::build_election(&raw).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((election, checksum))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

fn parse_rule(rule: &str) -> Result<Rule, CliError> {
    rule.parse::<Rule>().map_err(CliError::Config)
}

fn trace_for(rule: Rule, profile: &VoteProfile, election: &ElectionInstance) -> SelectionTrace {
    match rule {
        Rule::Greedy => greedy_trace(profile, election),
        Rule::EqualShares => equal_shares_trace(profile, election),
    }
}

fn welfare_rows(rule: Rule, report: &WelfareReport) -> String {
    let mut out = String::from("rule,measure,gini,egalitarian,utilitarian\n");
    for measure in Measure::ALL {
        let s = report.summary(measure);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            rule.as_str(),
            measure.as_str(),
            fmt6(s.gini),
            fmt6(s.egalitarian),
            fmt6(s.utilitarian)
        );
    }
    out
}

// ---------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------

fn cmd_aggregate(pb_path: &Path, rule: &str, out: &Path) -> Result<(), CliError> {
    let rule = parse_rule(rule)?;
    let (election, _) = load_election(pb_path)?;
    let profile = VoteProfile::from_election(&election);
    let trace = trace_for(rule, &profile, &election);

    let mut winners_csv = String::from("project_id,cost,score,phase\n");
    for selection in &trace.selections {
        let project = &election.projects[selection.project];
        let _ = writeln!(
            winners_csv,
            "{},{},{},{}",
            project.id,
            project.cost,
            selection.score,
            selection.phase.as_str()
        );
    }
    let report = metrics::welfare_report(&profile, &trace.winners, &election)
        .map_err(|e| CliError::Data(e.to_string()))?;

    fs::create_dir_all(out)?;
    fs::write(out.join("winners.csv"), winners_csv)?;
    fs::write(out.join("fairness.csv"), welfare_rows(rule, &report))?;
    println!(
        "{} winners, {} of {} {} spent",
        trace.winners.len(),
        trace.winners.total_cost,
        election.budget,
        election.currency
    );
    Ok(())
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

/// A fully resolved simulate invocation: experiment config plus runner
/// concerns (repetitions, threads, output directory).
#[derive(Debug, Clone)]
pub struct SimulateSpec {
    pub config: ExperimentConfig,
    pub repetitions: u32,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl SimulateSpec {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config_path: Option<&Path>,
        dataset: Option<PathBuf>,
        rule: Option<String>,
        seed: Option<u64>,
        episodes: Option<u32>,
        voters: Option<usize>,
        repetitions: Option<u32>,
        out: Option<PathBuf>,
        threads: Option<usize>,
    ) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::default();
        let mut spec_repetitions = 1u32;
        let mut spec_threads = threads;
        let mut spec_out = PathBuf::from("run-out");

        if let Some(path) = config_path {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (key, value) in parse_config_text(&text)? {
                apply_config_entry(
                    &mut config,
                    &mut spec_repetitions,
                    &mut spec_threads,
                    &mut spec_out,
                    &key,
                    &value,
                )?;
            }
        }

        if let Some(dataset) = dataset {
            config.election_path = dataset;
        }
        if let Some(rule) = rule {
            config.rule = parse_rule(&rule)?;
        }
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if let Some(episodes) = episodes {
            config.training_episodes = episodes;
        }
        if let Some(voters) = voters {
            config.voter_subsample = Some(voters);
        }
        if let Some(reps) = repetitions {
            spec_repetitions = reps;
        }
        if let Some(out) = out {
            spec_out = out;
        }
        if config.election_path.as_os_str().is_empty() {
            return Err(CliError::Config(
                "no dataset given (use --dataset or a config file)".to_string(),
            ));
        }
        if spec_repetitions < 1 {
            return Err(CliError::Config(
                "repetitions must be at least 1".to_string(),
            ));
        }
        config.output_dir = Some(spec_out.clone());
        config.validate().map_err(CliError::from)?;
        Ok(SimulateSpec {
            config,
            repetitions: spec_repetitions,
            threads: spec_threads,
            out: spec_out,
        })
    }
}

fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("config line {}: expected key = value", idx + 1))
        })?;
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

fn apply_config_entry(
    config: &mut ExperimentConfig,
    repetitions: &mut u32,
    threads: &mut Option<usize>,
    out: &mut PathBuf,
    key: &str,
    value: &str,
) -> Result<(), CliError> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
        value
            .parse()
            .map_err(|_| CliError::Config(format!("config key {key}: bad value '{value}'")))
    }
    fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
        if value.is_empty() {
            return Ok(Vec::new());
        }
        value
            .split(',')
            .map(|w| {
                w.trim().parse().map_err(|_| {
                    CliError::Config(format!("config key {key}: bad value '{value}'"))
                })
            })
            .collect()
    }
    match key {
        "dataset" => config.election_path = PathBuf::from(value),
        "rule" => config.rule = parse_rule(value)?,
        "episodes" => config.training_episodes = parse(key, value)?,
        "validation_interval" => config.validation_interval = parse(key, value)?,
        "batch_size" => config.batch_size = parse(key, value)?,
        "learning_rate" => config.learning_rate = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "voters" => {
            config.voter_subsample = if value == "all" {
                None
            } else {
                Some(parse(key, value)?)
            }
        }
        "epsilon_start" => config.epsilon.start = parse(key, value)?,
        "epsilon_end" => config.epsilon.end = parse(key, value)?,
        "epsilon_decay_fraction" => config.epsilon.decay_fraction = parse(key, value)?,
        "replay_capacity" => config.replay_capacity = parse(key, value)?,
        "target_update" => config.target_update = parse(key, value)?,
        "optimizer" => {
            config.optimizer = value.parse().map_err(CliError::Config)?;
        }
        "trunk_hidden" => config.trunk_hidden = parse_widths(key, value)?,
        "head_hidden" => config.head_hidden = parse_widths(key, value)?,
        "repetitions" => *repetitions = parse(key, value)?,
        "threads" => *threads = Some(parse(key, value)?),
        "out" => *out = PathBuf::from(value),
        other => {
            return Err(CliError::Config(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}

fn manifest_text(
    config: &ExperimentConfig,
    checksum: &str,
    threads: Option<usize>,
    started_unix: u64,
) -> String {
    let widths = |w: &[usize]| {
        w.iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::new();
    let _ = writeln!(out, "pbmarl_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "log_format = {LOG_FORMAT_VERSION}");
    let _ = writeln!(out, "dataset = {}", config.election_path.display());
    let _ = writeln!(out, "dataset_sha256 = {checksum}");
    let _ = writeln!(out, "rule = {}", config.rule.as_str());
    let _ = writeln!(out, "seed = {}", config.seed);
    let _ = writeln!(out, "episodes = {}", config.training_episodes);
    let _ = writeln!(out, "validation_interval = {}", config.validation_interval);
    let _ = writeln!(out, "batch_size = {}", config.batch_size);
    let _ = writeln!(out, "learning_rate = {}", config.learning_rate);
    let _ = writeln!(out, "epsilon_start = {}", config.epsilon.start);
    let _ = writeln!(out, "epsilon_end = {}", config.epsilon.end);
    let _ = writeln!(
        out,
        "epsilon_decay_fraction = {}",
        config.epsilon.decay_fraction
    );
    let _ = writeln!(
        out,
        "voters = {}",
        config
            .voter_subsample
            .map_or_else(|| "all".to_string(), |v| v.to_string())
    );
    let _ = writeln!(out, "replay_capacity = {}", config.replay_capacity);
    let _ = writeln!(out, "target_update = {}", config.target_update);
    let _ = writeln!(out, "optimizer = {}", config.optimizer.as_str());
    let _ = writeln!(out, "trunk_hidden = {}", widths(&config.trunk_hidden));
    let _ = writeln!(out, "head_hidden = {}", widths(&config.head_hidden));
    let _ = writeln!(
        out,
        "threads = {}",
        threads.map_or_else(|| "default".to_string(), |t| t.to_string())
    );
    // Timing only below this line; everything above identifies the run.
    let _ = writeln!(out, "started_unix = {started_unix}");
    out
}

/// The Fig.-4-style series: per episode, reward and loss statistics over
/// agents. Validation rows carry no loss of their own, so they report the
/// training losses accumulated since the previous validation.
fn training_log_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(
        "episode,kind,reward_mean,reward_q1,reward_q3,loss_mean,loss_q1,loss_q3\n",
    );
    let mut window_losses: Vec<f64> = Vec::new();
    for record in records {
        let rewards: Vec<f64> = record.per_voter.iter().map(|v| v.reward).collect();
        let losses: Vec<f64> = match record.kind {
            EpisodeKind::Training => {
                let episode_losses: Vec<f64> = record
                    .per_voter
                    .iter()
                    .map(|v| v.loss.expect("training records carry losses"))
                    .collect();
                window_losses.extend_from_slice(&episode_losses);
                episode_losses
            }
            EpisodeKind::Validation => std::mem::take(&mut window_losses),
        };
        let stats = |values: &[f64]| -> (String, String, String) {
            if values.is_empty() {
                return ("0.00000".into(), "0.00000".into(), "0.00000".into());
            }
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            (
                fmt6(mean(values)),
                fmt6(quantile(&sorted, 0.25)),
                fmt6(quantile(&sorted, 0.75)),
            )
        };
        let (reward_mean, reward_q1, reward_q3) = stats(&rewards);
        let (loss_mean, loss_q1, loss_q3) = stats(&losses);
        let _ = writeln!(
            out,
            "{},{},{reward_mean},{reward_q1},{reward_q3},{loss_mean},{loss_q1},{loss_q3}",
            record.episode,
            record.kind.as_str(),
        );
    }
    out
}

fn ballots_csv(election: &ElectionInstance, ballots: &[(String, CumulativeBallot)]) -> String {
    let mut out = String::from("voter_id,project_id,tokens\n");
    for (voter_id, ballot) in ballots {
        for (project, tokens) in ballot.iter() {
            let _ = writeln!(out, "{voter_id},{},{tokens}", election.projects[project].id);
        }
    }
    out
}

fn run_one(config: &ExperimentConfig, threads: Option<usize>, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let incomplete = dir.join("INCOMPLETE");
    fs::write(&incomplete, "run in progress or aborted\n")?;

    let resolved = resolve_dataset(&config.election_path)?;
    let checksum = hex_digest(&fs::read(&resolved)?);
    let mut config = config.clone();
    config.election_path = resolved;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::write(
        dir.join("manifest.txt"),
        manifest_text(&config, &checksum, threads, started),
    )?;

    let untrained = snapshot_untrained(&config)?;
    let output = run_experiment(&config)?;

    fs::write(
        dir.join("training_log.csv"),
        training_log_csv(&output.records),
    )?;

    let untrained_ballots: Vec<(String, CumulativeBallot)> = untrained
        .per_voter
        .iter()
        .map(|v| (output.election.voters[v.voter].id.clone(), v.ballot.clone()))
        .collect();
    fs::write(
        dir.join("ballots_untrained.csv"),
        ballots_csv(&output.election, &untrained_ballots),
    )?;

    // Final greedy ballots of the trained policies; identical to the last
    // validation episode whenever one fell on the final episode.
    let state = training::state_vector(&output.election);
    let trained_ballots: Vec<(String, CumulativeBallot)> = output
        .policies
        .iter()
        .map(|(voter_id, policy)| {
            let choices = policy
                .select_greedy(&state)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let ballot = crate::election::decode_action(&choices, &output.election.projects)
                .map_err(|e| CliError::Data(e.to_string()))?;
            Ok((voter_id.clone(), ballot))
        })
        .collect::<Result<_, CliError>>()?;
    fs::write(
        dir.join("ballots_trained.csv"),
        ballots_csv(&output.election, &trained_ballots),
    )?;

    let checkpoint_dir = dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir)?;
    for (voter_id, policy) in &output.policies {
        let mut file = fs::File::create(checkpoint_dir.join(format!("agent_{voter_id}.qnet")))?;
        save_policy(policy, &mut file).map_err(|e| CliError::Data(e.to_string()))?;
    }

    fs::remove_file(&incomplete)?;
    Ok(())
}

fn cmd_simulate(spec: &SimulateSpec) -> Result<(), CliError> {
    if spec.repetitions == 1 {
        run_one(&spec.config, spec.threads, &spec.out)?;
        println!("run complete: {}", spec.out.display());
        return Ok(());
    }
    for rep in 0..spec.repetitions {
        let mut config = spec.config.clone();
        config.seed = spec.config.seed + u64::from(rep);
        let dir = spec.out.join(format!("rep_{rep:02}"));
        config.output_dir = Some(dir.clone());
        run_one(&config, spec.threads, &dir)?;
        println!("repetition {rep} complete: {}", dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------
// report
// ---------------------------------------------------------------------

struct RunData {
    manifest: BTreeMap<String, String>,
    trained: Vec<(String, CumulativeBallot)>,
    untrained: Vec<(String, CumulativeBallot)>,
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::ReportInput(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    Ok(map)
}

fn read_ballots_csv(
    path: &Path,
    election: &ElectionInstance,
) -> Result<Vec<(String, CumulativeBallot)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::ReportInput(format!("cannot read {}: {e}", path.display())))?;
    let mut ballots: Vec<(String, CumulativeBallot)> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::ReportInput(format!(
                "{}:{}: expected voter_id,project_id,tokens",
                path.display(),
                idx + 1
            )));
        }
        let project = election.project_index(fields[1]).ok_or_else(|| {
            CliError::ReportInput(format!(
                "{}:{}: unknown project {}",
                path.display(),
                idx + 1,
                fields[1]
            ))
        })?;
        let tokens: u32 = fields[2].parse().map_err(|_| {
            CliError::ReportInput(format!("{}:{}: bad token count", path.display(), idx + 1))
        })?;
        match ballots.last_mut() {
            Some((id, ballot)) if *id == fields[0] => ballot.add(project, tokens),
            _ => {
                let mut ballot = CumulativeBallot::new();
                ballot.add(project, tokens);
                ballots.push((fields[0].to_string(), ballot));
            }
        }
    }
    Ok(ballots)
}

fn load_run(dir: &Path, election: &ElectionInstance) -> Result<RunData, CliError> {
    if !dir.is_dir() {
        return Err(CliError::ReportInput(format!(
            "run directory {} does not exist",
            dir.display()
        )));
    }
    if dir.join("INCOMPLETE").exists() {
        return Err(CliError::ReportInput(format!(
            "run directory {} is flagged INCOMPLETE",
            dir.display()
        )));
    }
    Ok(RunData {
        manifest: read_manifest(&dir.join("manifest.txt"))?,
        trained: read_ballots_csv(&dir.join("ballots_trained.csv"), election)?,
        untrained: read_ballots_csv(&dir.join("ballots_untrained.csv"), election)?,
    })
}

/// The actual profile restricted to the run's subsample, in election
/// voter order.
fn actual_profile_for(
    election: &ElectionInstance,
    run_ballots: &[(String, CumulativeBallot)],
) -> Result<VoteProfile, CliError> {
    let wanted: std::collections::BTreeSet<&str> =
        run_ballots.iter().map(|(id, _)| id.as_str()).collect();
    let ballots: Vec<(String, CumulativeBallot)> = election
        .voters
        .iter()
        .filter(|v| wanted.contains(v.id.as_str()))
        .map(|v| (v.id.clone(), v.historical_ballot.clone()))
        .collect();
    if ballots.len() != wanted.len() {
        return Err(CliError::ReportInput(
            "run ballots reference voters missing from the actual dataset".to_string(),
        ));
    }
    Ok(VoteProfile::new(ballots))
}

struct SourceStats {
    /// Metric values per run: `[measure][metric][run]`.
    table: Vec<Vec<Vec<f64>>>,
    quartiles: Vec<[f64; 4]>,
    /// Achievement proportions per run: `[measure][threshold][run]`.
    cdf: Vec<Vec<Vec<f64>>>,
}

impl SourceStats {
    fn new() -> Self {
        SourceStats {
            table: vec![vec![Vec::new(); 3]; 3],
            quartiles: Vec::new(),
            cdf: vec![vec![Vec::new(); 11]; 2],
        }
    }

    fn add_run(
        &mut self,
        profile: &VoteProfile,
        election: &ElectionInstance,
        rule: Rule,
    ) -> Result<(), CliError> {
        let winners = rule.aggregate(profile, election);
        let report = metrics::welfare_report(profile, &winners, election)
            .map_err(|e| CliError::ReportInput(e.to_string()))?;
        for (m, measure) in Measure::ALL.into_iter().enumerate() {
            let s = report.summary(measure);
            self.table[m][0].push(s.gini);
            self.table[m][1].push(s.egalitarian);
            self.table[m][2].push(s.utilitarian);
        }
        self.quartiles.push(
            cost_quartile_distribution(profile, election)
                .map_err(|e| CliError::ReportInput(e.to_string()))?,
        );
        for (mi, measure) in [Measure::SatisfactionProject, Measure::SatisfactionCost]
            .into_iter()
            .enumerate()
        {
            let vector = metrics::welfare_vector(profile, &winners, election, measure)
                .map_err(|e| CliError::ReportInput(e.to_string()))?;
            let values = vector.raw_values();
            for k in 0..=10 {
                let threshold = k as f64 / 10.0;
                let hit = values.iter().filter(|&&v| v + 1e-9 >= threshold).count() as f64
                    / values.len() as f64;
                self.cdf[mi][k].push(hit);
            }
        }
        Ok(())
    }
}

const TABLE_METRICS: [&str; 3] = ["gini", "egalitarian", "utilitarian"];

fn cmd_report(run_dirs: &[PathBuf], actual: &Path, out: &Path) -> Result<(), CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::ReportInput(
            "no run directories given".to_string(),
        ));
    }
    let (election, checksum) = load_election(actual).map_err(|e| match e {
        CliError::Data(msg) => CliError::ReportInput(msg),
        other => other,
    })?;

    let runs: Vec<RunData> = run_dirs
        .iter()
        .map(|dir| load_run(dir, &election))
        .collect::<Result<_, _>>()?;

    let first = &runs[0].manifest;
    for (dir, run) in run_dirs.iter().zip(&runs) {
        for key in ["rule", "dataset_sha256", "voters", "episodes"] {
            if run.manifest.get(key) != first.get(key) {
                return Err(CliError::ReportInput(format!(
                    "run {} disagrees with {} on {key}",
                    dir.display(),
                    run_dirs[0].display()
                )));
            }
        }
        if run.manifest.get("dataset_sha256").map(String::as_str) != Some(checksum.as_str()) {
            return Err(CliError::ReportInput(format!(
                "run {} was trained on a different dataset than {}",
                dir.display(),
                actual.display()
            )));
        }
    }
    let rule = parse_rule(
        first
            .get("rule")
            .ok_or_else(|| CliError::ReportInput("manifest lacks rule".to_string()))?,
    )
    .map_err(|e| CliError::ReportInput(e.to_string()))?;

    let mut actual_stats = SourceStats::new();
    let mut untrained_stats = SourceStats::new();
    let mut trained_stats = SourceStats::new();
    for run in &runs {
        let actual_profile = actual_profile_for(&election, &run.trained)?;
        actual_stats.add_run(&actual_profile, &election, rule)?;
        untrained_stats.add_run(&VoteProfile::new(run.untrained.clone()), &election, rule)?;
        trained_stats.add_run(&VoteProfile::new(run.trained.clone()), &election, rule)?;
    }

    fs::create_dir_all(out)?;

    let mut table =
        String::from("rule,measure,metric,actual_mean,actual_std,marl_mean,marl_std\n");
    for (m, measure) in Measure::ALL.into_iter().enumerate() {
        for (k, metric) in TABLE_METRICS.into_iter().enumerate() {
            let _ = writeln!(
                table,
                "{},{},{metric},{},{},{},{}",
                rule.as_str(),
                measure.as_str(),
                fmt6(mean(&actual_stats.table[m][k])),
                fmt6(std_dev(&actual_stats.table[m][k])),
                fmt6(mean(&trained_stats.table[m][k])),
                fmt6(std_dev(&trained_stats.table[m][k])),
            );
        }
    }
    fs::write(out.join("table4.csv"), table)?;

    let mut fig5 = String::from("source,bucket,share_mean,share_std\n");
    for (source, stats) in [
        ("actual", &actual_stats),
        ("untrained", &untrained_stats),
        ("trained", &trained_stats),
    ] {
        for (b, bucket) in QUARTILE_LABELS.into_iter().enumerate() {
            let values: Vec<f64> = stats.quartiles.iter().map(|q| q[b]).collect();
            let _ = writeln!(
                fig5,
                "{source},{bucket},{},{}",
                fmt6(mean(&values)),
                fmt6(std_dev(&values))
            );
        }
    }
    fs::write(out.join("fig5_cost_distribution.csv"), fig5)?;

    let mut fig6 = String::from("source,measure,threshold,proportion_mean,proportion_std\n");
    for (source, stats) in [
        ("actual", &actual_stats),
        ("untrained", &untrained_stats),
        ("trained", &trained_stats),
    ] {
        for (mi, measure) in ["satisfaction_project", "satisfaction_cost"]
            .into_iter()
            .enumerate()
        {
            for k in 0..=10usize {
                let values = &stats.cdf[mi][k];
                let _ = writeln!(
                    fig6,
                    "{source},{measure},{},{},{}",
                    fmt6(k as f64 / 10.0),
                    fmt6(mean(values)),
                    fmt6(std_dev(values))
                );
            }
        }
    }
    fs::write(out.join("fig6_satisfaction_cdf.csv"), fig6)?;

    println!(
        "report over {} run(s) written to {}",
        runs.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// validate-data
// ---------------------------------------------------------------------

fn cmd_validate_data(pb_path: &Path) -> Result<(), CliError> {
    let (election, checksum) = load_election(pb_path)?;
    let spent: u64 = election
        .voters
        .iter()
        .map(|v| u64::from(v.historical_ballot.total_tokens()))
        .sum();
    println!("dataset:      {}", pb_path.display());
    println!("sha256:       {checksum}");
    println!("projects:     {}", election.project_count());
    println!("voters:       {}", election.voter_count());
    println!("impact areas: {}", election.impact_areas().len());
    println!("budget:       {} {}", election.budget, election.currency);
    println!("tokens/voter: {}", election.tokens_per_voter);
    println!(
        "tokens cast:  {spent} of {}",
        election.voter_count() as u64 * u64::from(election.tokens_per_voter)
    );
    Ok(())
}
