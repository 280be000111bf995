//! The episode loop: simultaneous action selection, aggregation, reward
//! distribution, buffer writes and learning updates, with interleaved
//! validation episodes.
//!
//! Determinism: all randomness flows from the experiment seed. The voter
//! subsample comes from one master stream and every agent owns a ChaCha
//! stream keyed by `(seed, voter index)`, so thread scheduling cannot
//! change results. Within an episode the per-agent phases fan out;
//! aggregation is the sequential barrier between them.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregation::{Rule, VoteProfile};
use crate::election::{decode_action, CumulativeBallot, ElectionInstance, WinningSet};
use crate::exec;
use crate::neural::{
    sample_minibatch, NeuralError, Optimizer, OptimizerKind, QPolicy, ReplayBuffer,
    StateVector, Transition, DEFAULT_HEAD_HIDDEN, DEFAULT_TRUNK_HIDDEN,
};
use crate::pabulib::{self, PbError};
use crate::rewards::RewardEvaluator;

/// Stream separator so the subsample draw never collides with agent rngs.
const SUBSAMPLE_STREAM: u64 = 0x73b5_a11e;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("election data: {0}")]
    Data(#[from] PbError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode {episode}: {source}")]
    Episode {
        episode: u32,
        #[source]
        source: Box<TrainingError>,
    },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Linear epsilon decay over the leading fraction of training episodes,
/// constant afterwards. Validation episodes always act greedily.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of training episodes over which epsilon decays.
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.8,
        }
    }
}

impl EpsilonSchedule {
    /// Epsilon for a 1-based training episode index.
    pub fn epsilon(&self, episode: u32, total_episodes: u32) -> f64 {
        let decay_over =
            ((f64::from(total_episodes) * self.decay_fraction).floor() as u32).max(1);
        if episode >= decay_over {
            self.end
        } else {
            let progress = f64::from(episode - 1) / f64::from(decay_over - 1);
            self.start + (self.end - self.start) * progress
        }
    }
}

/// All knobs of one experiment. Defaults mirror the reference setup:
/// learning rate 0.001, batch 32, validation every 5 episodes, 400
/// training episodes, no future discount.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub election_path: PathBuf,
    pub rule: Rule,
    pub training_episodes: u32,
    pub validation_interval: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
    pub voter_subsample: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub replay_capacity: usize,
    pub target_update: u32,
    pub optimizer: OptimizerKind,
    pub trunk_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            election_path: PathBuf::new(),
            rule: Rule::EqualShares,
            training_episodes: 400,
            validation_interval: 5,
            batch_size: 32,
            learning_rate: 0.001,
            epsilon: EpsilonSchedule::default(),
            seed: 0,
            voter_subsample: None,
            output_dir: None,
            replay_capacity: 2000,
            target_update: 100,
            optimizer: OptimizerKind::Adam,
            trunk_hidden: DEFAULT_TRUNK_HIDDEN.to_vec(),
            head_hidden: DEFAULT_HEAD_HIDDEN.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |msg: &str| Err(TrainingError::Config(msg.to_string()));
        if self.training_episodes < 1 {
            return fail("training_episodes must be at least 1");
        }
        if self.validation_interval < 1 {
            return fail("validation_interval must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        for (name, eps) in [("start", self.epsilon.start), ("end", self.epsilon.end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(TrainingError::Config(format!(
                    "epsilon {name} must lie in [0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon.decay_fraction) {
            return fail("epsilon decay fraction must lie in [0, 1]");
        }
        if self.voter_subsample == Some(0) {
            return fail("voter_subsample must be positive when set");
        }
        if self.replay_capacity < 1 {
            return fail("replay_capacity must be at least 1");
        }
        if self.target_update < 1 {
            return fail("target_update must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeKind {
    Training,
    Validation,
}

impl EpisodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeKind::Training => "training",
            EpisodeKind::Validation => "validation",
        }
    }
}

/// One voter's slice of an episode. `loss` is set on training episodes
/// only; validation never learns.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterEpisode {
    /// Index into the (possibly subsampled) election's voters.
    pub voter: usize,
    pub ballot: CumulativeBallot,
    pub reward: f64,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Training episodes completed when this record was taken; a
    /// validation record shares the index of the episode it follows.
    pub episode: u32,
    pub kind: EpisodeKind,
    pub winners: WinningSet,
    pub per_voter: Vec<VoterEpisode>,
}

/// Everything a finished run hands to the caller.
#[derive(Debug)]
pub struct ExperimentOutput {
    /// The election the agents actually played, voters subsampled.
    pub election: ElectionInstance,
    pub records: Vec<EpisodeRecord>,
    /// Final policy per voter, in election voter order.
    pub policies: Vec<(String, QPolicy)>,
}

/// Observation shared by every agent: per project, the normalised log
/// cost followed by a 0/1 indicator over the election's sorted impact
/// areas. Projects keep file order.
pub fn state_vector(election: &ElectionInstance) -> StateVector {
    let areas: Vec<String> = election.impact_areas().into_iter().collect();
    let max_ln = election
        .projects
        .iter()
        .map(|p| (p.cost as f64).ln())
        .fold(0.0, f64::max);
    let mut values = Vec::with_capacity(election.project_count() * (1 + areas.len()));
    for project in &election.projects {
        let ln = (project.cost as f64).ln();
        values.push(if max_ln > 0.0 { ln / max_ln } else { 0.0 });
        for area in &areas {
            values.push(f64::from(u8::from(project.impact_areas.contains(area))));
        }
    }
    Arc::from(values.into_boxed_slice())
}

/// Deterministic per-agent stream: distinct agents never share randomness.
fn agent_rng(seed: u64, voter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&voter.to_le_bytes());
    key[16] = 0xA5;
    ChaCha8Rng::from_seed(key)
}

/// Uniform random subset of voter indices, ascending, keyed by the master
/// seed. The budget is never rescaled: reduced-scale runs are reported as
/// such.
pub fn subsample_voters(
    total: usize,
    subsample: Option<usize>,
    seed: u64,
) -> Result<Vec<usize>, TrainingError> {
    match subsample {
        None => Ok((0..total).collect()),
        Some(n) if n > total => Err(TrainingError::Config(format!(
            "voter_subsample {n} exceeds population {total}"
        ))),
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SUBSAMPLE_STREAM);
            let mut indices: Vec<usize> = (0..total).collect();
            // Partial Fisher-Yates: the first n entries are the sample.
            for i in 0..n {
                let j = rng.gen_range(i..total);
                indices.swap(i, j);
            }
            let mut chosen = indices[..n].to_vec();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

fn load_and_subsample(config: &ExperimentConfig) -> Result<ElectionInstance, TrainingError> {
    let text = std::fs::read_to_string(&config.election_path)?;
    let election = pabulib::build_election(&pabulib::parse_pb(&text)?)?;
    let chosen = subsample_voters(election.voter_count(), config.voter_subsample, config.seed)?;
    let voters = chosen
        .into_iter()
        .map(|i| election.voters[i].clone())
        .collect();
    Ok(ElectionInstance { voters, ..election })
}

struct Agent {
    /// Position in the subsampled election's voter list.
    voter: usize,
    policy: QPolicy,
    /// Kept in step every `target_update` episodes for interface fidelity;
    /// with no future discount the regression target is the immediate
    /// reward, so the copy never enters the loss.
    target: QPolicy,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    preference_mask: u64,
}

fn build_agents(
    config: &ExperimentConfig,
    election: &ElectionInstance,
    evaluator: &RewardEvaluator,
    state_width: usize,
) -> Result<Vec<Agent>, TrainingError> {
    let projects = election.project_count();
    let branches = election.tokens_per_voter as usize;
    election
        .voters
        .iter()
        .enumerate()
        .map(|(voter, profile)| {
            let mut rng = agent_rng(config.seed, voter as u64);
            let policy = QPolicy::with_widths(
                state_width,
                projects,
                branches,
                &config.trunk_hidden,
                &config.head_hidden,
                rng.gen(),
            )?;
            let target = policy.clone();
            let optimizer = Optimizer::new(config.optimizer, &policy);
            Ok(Agent {
                voter,
                policy,
                target,
                optimizer,
                buffer: ReplayBuffer::new(config.replay_capacity),
                rng,
                preference_mask: evaluator.preference_mask(&profile.favoured_areas),
            })
        })
        .collect()
}

type BranchedBallot = (Vec<u16>, CumulativeBallot);

fn episode_ballots(
    agents: &mut [Agent],
    election: &ElectionInstance,
    state: &StateVector,
    epsilon: Option<f64>,
) -> Result<Vec<BranchedBallot>, TrainingError> {
    let projects = &election.projects;
    let picks: Vec<Result<BranchedBallot, NeuralError>> =
        exec::map_slice_mut(agents, |agent| {
            let choices = match epsilon {
                Some(eps) => agent.policy.select_action(state, eps, &mut agent.rng)?,
                None => agent.policy.select_greedy(state)?,
            };
            let ballot = decode_action(&choices, projects)
                .expect("policy outputs in-range project indices");
            Ok((choices.iter().map(|&c| c as u16).collect(), ballot))
        });
    Ok(picks
        .into_iter()
        .collect::<Result<Vec<_>, NeuralError>>()?)
}

fn aggregate_and_reward(
    agents: &[Agent],
    ballots: &[BranchedBallot],
    election: &ElectionInstance,
    evaluator: &RewardEvaluator,
    rule: Rule,
) -> (WinningSet, Vec<f64>) {
    let profile = VoteProfile::new(
        agents
            .iter()
            .zip(ballots)
            .map(|(agent, (_, ballot))| {
                (election.voters[agent.voter].id.clone(), ballot.clone())
            })
            .collect(),
    );
    let winners = rule.aggregate(&profile, election);
    let rewards: Vec<f64> = agents
        .iter()
        .zip(ballots)
        .map(|(agent, (_, ballot))| evaluator.evaluate(agent.preference_mask, ballot, &winners))
        .collect();
    (winners, rewards)
}

fn record_of(
    episode: u32,
    kind: EpisodeKind,
    winners: WinningSet,
    ballots: Vec<BranchedBallot>,
    rewards: &[f64],
    losses: Option<&[f64]>,
) -> EpisodeRecord {
    let per_voter = ballots
        .into_iter()
        .enumerate()
        .map(|(voter, (_, ballot))| VoterEpisode {
            voter,
            ballot,
            reward: rewards[voter],
            loss: losses.map(|l| l[voter]),
        })
        .collect();
    EpisodeRecord {
        episode,
        kind,
        winners,
        per_voter,
    }
}

fn validation_episode(
    agents: &mut [Agent],
    election: &ElectionInstance,
    evaluator: &RewardEvaluator,
    state: &StateVector,
    rule: Rule,
    episode: u32,
) -> Result<EpisodeRecord, TrainingError> {
    let ballots = episode_ballots(agents, election, state, None)?;
    let (winners, rewards) = aggregate_and_reward(agents, &ballots, election, evaluator, rule);
    Ok(record_of(
        episode,
        EpisodeKind::Validation,
        winners,
        ballots,
        &rewards,
        None,
    ))
}

fn training_episode(
    agents: &mut [Agent],
    election: &ElectionInstance,
    evaluator: &RewardEvaluator,
    state: &StateVector,
    config: &ExperimentConfig,
    episode: u32,
) -> Result<EpisodeRecord, TrainingError> {
    let epsilon = config.epsilon.epsilon(episode, config.training_episodes);
    let ballots = episode_ballots(agents, election, state, Some(epsilon))?;
    let (winners, rewards) =
        aggregate_and_reward(agents, &ballots, election, evaluator, config.rule);

    let sync_target = episode % config.target_update == 0;
    let losses: Vec<Result<f64, NeuralError>> = {
        let ballots = &ballots;
        let rewards = &rewards;
        exec::map_slice_mut(agents, move |agent| {
            agent.buffer.push(Transition {
                state: state.clone(),
                action: ballots[agent.voter].0.clone(),
                reward: rewards[agent.voter],
            });
            let batch = sample_minibatch(&agent.buffer, config.batch_size, &mut agent.rng)?;
            let (loss, grads) = agent.policy.compute_loss(&batch)?;
            agent
                .optimizer
                .step(&mut agent.policy, &grads, config.learning_rate)?;
            if sync_target {
                agent.target = agent.policy.clone();
            }
            Ok(loss)
        })
    };
    let losses = losses.into_iter().collect::<Result<Vec<f64>, _>>()?;
    Ok(record_of(
        episode,
        EpisodeKind::Training,
        winners,
        ballots,
        &rewards,
        Some(&losses),
    ))
}

/// One validation-style episode under freshly initialised policies: the
/// before-training baseline.
pub fn snapshot_untrained(config: &ExperimentConfig) -> Result<EpisodeRecord, TrainingError> {
    config.validate()?;
    let election = load_and_subsample(config)?;
    let evaluator = RewardEvaluator::new(&election);
    let state = state_vector(&election);
    let mut agents = build_agents(config, &election, &evaluator, state.len())?;
    validation_episode(&mut agents, &election, &evaluator, &state, config.rule, 0)
}

/// Runs the full training loop. Every `validation_interval` training
/// episodes a validation record is appended; policies never change during
/// validation. Fully deterministic for a given config and seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, TrainingError> {
    config.validate()?;
    let election = load_and_subsample(config)?;
    let evaluator = RewardEvaluator::new(&election);
    let state = state_vector(&election);
    let mut agents = build_agents(config, &election, &evaluator, state.len())?;

    let mut records = Vec::new();
    for episode in 1..=config.training_episodes {
        let wrap = |source: TrainingError| TrainingError::Episode {
            episode,
            source: Box::new(source),
        };
        records.push(
            training_episode(&mut agents, &election, &evaluator, &state, config, episode)
                .map_err(wrap)?,
        );
        if episode % config.validation_interval == 0 {
            records.push(
                validation_episode(
                    &mut agents,
                    &election,
                    &evaluator,
                    &state,
                    config.rule,
                    episode,
                )
                .map_err(wrap)?,
            );
        }
    }

    let policies = agents
        .into_iter()
        .map(|agent| (election.voters[agent.voter].id.clone(), agent.policy))
        .collect();
    Ok(ExperimentOutput {
        election,
        records,
        policies,
    })
}
