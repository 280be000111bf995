//! Welfare measures and fairness criteria over a vote profile and a
//! winning set.
//!
//! Conventions: "voted for" means at least one token; on an empty winning
//! set every satisfaction and share is 0; utilitarian welfare is reported
//! per voter so the three aggregates share a scale.

use thiserror::Error;

use crate::aggregation::{Rule, VoteProfile};
use crate::election::{CumulativeBallot, ElectionInstance, WinningSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gini of an empty value list is undefined")]
    EmptyInput,
    #[error("cost quartiles need at least 4 projects, found {0}")]
    TooFewProjects(usize),
    #[error("winner {0} carries the voter's tokens but has zero profile votes")]
    ZeroVotesOnOwnVotedWinner(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    SatisfactionProject,
    SatisfactionCost,
    Share,
}

impl Measure {
    pub const ALL: [Measure; 3] = [
        Measure::SatisfactionProject,
        Measure::SatisfactionCost,
        Measure::Share,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::SatisfactionProject => "satisfaction_project",
            Measure::SatisfactionCost => "satisfaction_cost",
            Measure::Share => "share",
        }
    }
}

/// Fraction of the winning set, by count, that the ballot backed.
pub fn satisfaction_project(ballot: &CumulativeBallot, winners: &WinningSet) -> f64 {
    if winners.is_empty() {
        return 0.0;
    }
    let backed = ballot.supported().filter(|&p| winners.contains(p)).count();
    backed as f64 / winners.len() as f64
}

/// Fraction of the winning set, by cost, that the ballot backed.
pub fn satisfaction_cost(
    ballot: &CumulativeBallot,
    winners: &WinningSet,
    election: &ElectionInstance,
) -> f64 {
    if winners.is_empty() || winners.total_cost == 0 {
        return 0.0;
    }
    let backed: u64 = ballot
        .supported()
        .filter(|&p| winners.contains(p))
        .map(|p| election.projects[p].cost)
        .sum();
    backed as f64 / winners.total_cost as f64
}

/// The budget slice attributable to the voter: for every winner they
/// backed, its cost divided by the total tokens it received.
pub fn share(
    ballot: &CumulativeBallot,
    winners: &WinningSet,
    election: &ElectionInstance,
    votes_per_project: &[u64],
) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for p in ballot.supported().filter(|&p| winners.contains(p)) {
        if votes_per_project[p] == 0 {
            return Err(MetricsError::ZeroVotesOnOwnVotedWinner(p));
        }
        total += election.projects[p].cost as f64 / votes_per_project[p] as f64;
    }
    Ok(total)
}

/// Gini coefficient of non-negative values: the mean absolute difference
/// between all pairs, normalised by twice the mean. All-zero input is 0 by
/// convention.
pub fn gini(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    if sum == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("welfare values are finite"));
    // Equivalent to sum_i sum_j |x_i - x_j| / (2 n^2 mean), via ranks.
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(rank, &x)| (2.0 * (rank as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok(weighted / (n * sum))
}

/// One welfare measure evaluated for every voter of a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareVector {
    pub measure: Measure,
    pub values: Vec<(String, f64)>,
}

impl WelfareVector {
    pub fn raw_values(&self) -> Vec<f64> {
        self.values.iter().map(|(_, v)| *v).collect()
    }
}

pub fn welfare_vector(
    profile: &VoteProfile,
    winners: &WinningSet,
    election: &ElectionInstance,
    measure: Measure,
) -> Result<WelfareVector, MetricsError> {
    let votes_per_project = profile.popularity(election.project_count());
    let values = profile
        .iter()
        .map(|(id, ballot)| {
            let value = match measure {
                Measure::SatisfactionProject => satisfaction_project(ballot, winners),
                Measure::SatisfactionCost => satisfaction_cost(ballot, winners, election),
                Measure::Share => share(ballot, winners, election, &votes_per_project)?,
            };
            Ok((id.to_string(), value))
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(WelfareVector { measure, values })
}

/// Gini, egalitarian (minimum) and utilitarian (per-voter mean) aggregates
/// of one welfare measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareSummary {
    pub gini: f64,
    pub egalitarian: f64,
    pub utilitarian: f64,
}

impl WelfareSummary {
    pub fn of(values: &[f64]) -> Result<Self, MetricsError> {
        let gini = gini(values)?;
        let egalitarian = values.iter().copied().fold(f64::INFINITY, f64::min);
        let utilitarian = values.iter().sum::<f64>() / values.len() as f64;
        Ok(WelfareSummary {
            gini,
            egalitarian,
            utilitarian,
        })
    }
}

/// The three welfare summaries for one profile under one winning set.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport {
    pub satisfaction_project: WelfareSummary,
    pub satisfaction_cost: WelfareSummary,
    pub share: WelfareSummary,
}

impl WelfareReport {
    pub fn summary(&self, measure: Measure) -> WelfareSummary {
        match measure {
            Measure::SatisfactionProject => self.satisfaction_project,
            Measure::SatisfactionCost => self.satisfaction_cost,
            Measure::Share => self.share,
        }
    }
}

pub fn welfare_report(
    profile: &VoteProfile,
    winners: &WinningSet,
    election: &ElectionInstance,
) -> Result<WelfareReport, MetricsError> {
    let mut summaries = Vec::with_capacity(3);
    for measure in Measure::ALL {
        let vector = welfare_vector(profile, winners, election, measure)?;
        summaries.push(WelfareSummary::of(&vector.raw_values())?);
    }
    Ok(WelfareReport {
        satisfaction_project: summaries[0],
        satisfaction_cost: summaries[1],
        share: summaries[2],
    })
}

/// Aggregates each profile with `rule` and evaluates it against its own
/// collective choice, yielding the (actual, learned) report pair.
pub fn build_table(
    actual: &VoteProfile,
    marl: &VoteProfile,
    election: &ElectionInstance,
    rule: Rule,
) -> Result<(WelfareReport, WelfareReport), MetricsError> {
    let actual_winners = rule.aggregate(actual, election);
    let marl_winners = rule.aggregate(marl, election);
    Ok((
        welfare_report(actual, &actual_winners, election)?,
        welfare_report(marl, &marl_winners, election)?,
    ))
}

pub const QUARTILE_LABELS: [&str; 4] = ["small", "medium", "large", "xlarge"];

/// Projects grouped into cost quartiles, cheapest first. With a remainder,
/// the lower buckets take the extra projects; cost ties keep file order.
pub fn cost_quartiles(election: &ElectionInstance) -> Result<[Vec<usize>; 4], MetricsError> {
    let p = election.project_count();
    if p < 4 {
        return Err(MetricsError::TooFewProjects(p));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by_key(|&i| (election.projects[i].cost, i));
    let base = p / 4;
    let remainder = p % 4;
    let mut buckets: [Vec<usize>; 4] = Default::default();
    let mut start = 0;
    for (b, bucket) in buckets.iter_mut().enumerate() {
        let size = base + usize::from(b < remainder);
        bucket.extend_from_slice(&order[start..start + size]);
        start += size;
    }
    Ok(buckets)
}

/// Token share per cost quartile: tokens on the bucket's projects divided
/// by the `n * T` tokens the profile could have spent in total.
pub fn cost_quartile_distribution(
    profile: &VoteProfile,
    election: &ElectionInstance,
) -> Result<[f64; 4], MetricsError> {
    let buckets = cost_quartiles(election)?;
    let scores = profile.popularity(election.project_count());
    let possible = (profile.voter_count() as u64 * u64::from(election.tokens_per_voter)) as f64;
    let mut shares = [0.0; 4];
    for (b, bucket) in buckets.iter().enumerate() {
        let tokens: u64 = bucket.iter().map(|&p| scores[p]).sum();
        shares[b] = if possible > 0.0 {
            tokens as f64 / possible
        } else {
            0.0
        };
    }
    Ok(shares)
}
