//! Ballot aggregation: utilitarian greedy and the method of equal shares
//! with greedy completion.
//!
//! Both rules are deterministic. Ties in greedy popularity are broken by
//! lower cost, then lexicographic project id; ties in the minimal
//! equal-shares price are broken the same way. Equal-shares balances and
//! prices are held as exact rationals so that tie comparisons never depend
//! on float rounding.

use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, Zero};

use crate::election::{CumulativeBallot, ElectionInstance, WinningSet};

/// A full profile of cumulative ballots, keyed by voter id.
///
/// Voter order is whatever the caller supplied (election order for
/// historical profiles) and is preserved in every derived output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoteProfile {
    ballots: Vec<(String, CumulativeBallot)>,
}

impl VoteProfile {
    pub fn new(ballots: Vec<(String, CumulativeBallot)>) -> Self {
        Self { ballots }
    }

    /// Historical ballots of every voter in the election.
    pub fn from_election(election: &ElectionInstance) -> Self {
        Self::new(
            election
                .voters
                .iter()
                .map(|v| (v.id.clone(), v.historical_ballot.clone()))
                .collect(),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CumulativeBallot)> {
        self.ballots.iter().map(|(id, b)| (id.as_str(), b))
    }

    pub fn ballots(&self) -> impl Iterator<Item = &CumulativeBallot> {
        self.ballots.iter().map(|(_, b)| b)
    }

    pub fn voter_count(&self) -> usize {
        self.ballots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ballots.is_empty()
    }

    /// Total tokens assigned to each project across the profile.
    pub fn popularity(&self, project_count: usize) -> Vec<u64> {
        let mut scores = vec![0u64; project_count];
        for (_, ballot) in &self.ballots {
            for (project, tokens) in ballot.iter() {
                scores[project] += u64::from(tokens);
            }
        }
        scores
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Greedy,
    EqualShares,
}

impl Rule {
    pub fn aggregate(self, profile: &VoteProfile, election: &ElectionInstance) -> WinningSet {
        match self {
            Rule::Greedy => greedy(profile, election),
            Rule::EqualShares => equal_shares(profile, election),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Greedy => "greedy",
            Rule::EqualShares => "equalshares",
        }
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Rule::Greedy),
            "equalshares" => Ok(Rule::EqualShares),
            other => Err(format!(
                "unknown rule '{other}', expected greedy or equalshares"
            )),
        }
    }
}

/// Which pass of a rule selected a project.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Greedy,
    EqualShares,
    Completion,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Greedy => "greedy",
            Phase::EqualShares => "equal_shares",
            Phase::Completion => "completion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub project: usize,
    pub score: u64,
    pub phase: Phase,
}

/// Winning set plus the order and phase in which projects were picked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionTrace {
    pub selections: Vec<Selection>,
    pub winners: WinningSet,
}

fn winning_set(election: &ElectionInstance, selections: &[Selection]) -> WinningSet {
    let project_ids = selections.iter().map(|s| s.project).collect();
    let total_cost = selections
        .iter()
        .map(|s| election.projects[s.project].cost)
        .sum();
    WinningSet {
        project_ids,
        total_cost,
    }
}

/// Projects ordered by descending score, then ascending cost, then id.
fn greedy_order(election: &ElectionInstance, scores: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..election.project_count()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .cmp(&scores[a])
            .then(election.projects[a].cost.cmp(&election.projects[b].cost))
            .then(election.projects[a].id.cmp(&election.projects[b].id))
    });
    order
}

/// Utilitarian greedy: repeatedly fund the highest-scoring project that
/// still fits, skipping unaffordable ones. Because scores are fixed and the
/// remaining budget only shrinks, a single pass over the score order is
/// equivalent to re-selecting each round.
pub fn greedy_trace(profile: &VoteProfile, election: &ElectionInstance) -> SelectionTrace {
    let scores = profile.popularity(election.project_count());
    let selections =
        greedy_pass(election, &scores, election.budget, &[], Phase::Greedy);
    let winners = winning_set(election, &selections);
    SelectionTrace {
        selections,
        winners,
    }
}

fn greedy_pass(
    election: &ElectionInstance,
    scores: &[u64],
    mut remaining: u64,
    already_selected: &[Selection],
    phase: Phase,
) -> Vec<Selection> {
    let mut taken = vec![false; election.project_count()];
    for s in already_selected {
        taken[s.project] = true;
    }
    let mut selections = Vec::new();
    for project in greedy_order(election, scores) {
        if taken[project] {
            continue;
        }
        let cost = election.projects[project].cost;
        if cost <= remaining {
            remaining -= cost;
            selections.push(Selection {
                project,
                score: scores[project],
                phase,
            });
        }
    }
    selections
}

pub fn greedy(profile: &VoteProfile, election: &ElectionInstance) -> WinningSet {
    greedy_trace(profile, election).winners
}

/// Per-voter utilities for one project: the tokens each voter assigned.
fn supporters(profile: &VoteProfile, project: usize) -> Vec<(usize, u64)> {
    profile
        .ballots()
        .enumerate()
        .filter_map(|(voter, ballot)| {
            let tokens = ballot.tokens_for(project);
            (tokens > 0).then_some((voter, u64::from(tokens)))
        })
        .collect()
}

/// Minimal price-per-utility at which the supporters can cover `cost`,
/// i.e. the smallest rho with sum_v min(balance_v, rho * u_v) = cost.
/// Returns `None` when their combined balance cannot cover the cost.
fn min_rho(
    supporters: &[(usize, u64)],
    balances: &[BigRational],
    cost: u64,
) -> Option<BigRational> {
    let cost = BigRational::from_integer(BigInt::from(cost));
    let mut active: Vec<(&BigRational, u64)> = supporters
        .iter()
        .filter(|(voter, _)| balances[*voter].is_positive())
        .map(|(voter, utility)| (&balances[*voter], *utility))
        .collect();
    let total: BigRational = active.iter().map(|(b, _)| (*b).clone()).sum();
    if total < cost {
        return None;
    }
    // Ascending balance/utility: voters exhaust their balance in this order
    // as rho grows.
    active.sort_by(|(b1, u1), (b2, u2)| {
        (b1.numer() * b2.denom() * BigInt::from(*u2))
            .cmp(&(b2.numer() * b1.denom() * BigInt::from(*u1)))
    });
    let mut paid = BigRational::zero();
    let mut utility_left = BigInt::from(active.iter().map(|(_, u)| *u).sum::<u64>());
    for (balance, utility) in active {
        let rho = (&cost - &paid) / BigRational::from_integer(utility_left.clone());
        if &rho * BigInt::from(utility) <= *balance {
            return Some(rho);
        }
        paid += balance;
        utility_left -= BigInt::from(utility);
    }
    // Reached only when the combined balance exactly equals the cost and
    // every supporter pays their full balance; the last ratio is the price.
    unreachable!("combined balance covers cost, so a finite rho exists")
}

/// Method of equal shares with cardinal utilities equal to assigned tokens.
///
/// Every voter starts with `budget / n`. Each round funds the project with
/// the smallest rho at which its supporters can jointly cover the cost,
/// charging each supporter `min(balance, rho * utility)`; the leftover
/// budget is then spent by utilitarian greedy over the unselected projects.
pub fn equal_shares_trace(
    profile: &VoteProfile,
    election: &ElectionInstance,
) -> SelectionTrace {
    let scores = profile.popularity(election.project_count());
    let n = profile.voter_count();
    let mut selections = Vec::new();
    if n > 0 {
        let share = BigRational::new(BigInt::from(election.budget), BigInt::from(n));
        let mut balances = vec![share; n];
        let project_supporters: Vec<Vec<(usize, u64)>> = (0..election.project_count())
            .map(|p| supporters(profile, p))
            .collect();
        let mut remaining: Vec<usize> = (0..election.project_count()).collect();
        loop {
            let mut best: Option<(BigRational, usize)> = None;
            for &project in &remaining {
                let Some(rho) = min_rho(
                    &project_supporters[project],
                    &balances,
                    election.projects[project].cost,
                ) else {
                    continue;
                };
                let better = match &best {
                    None => true,
                    Some((best_rho, best_project)) => {
                        let a = &election.projects[project];
                        let b = &election.projects[*best_project];
                        rho.cmp(best_rho)
                            .then(a.cost.cmp(&b.cost))
                            .then(a.id.cmp(&b.id))
                            .is_lt()
                    }
                };
                if better {
                    best = Some((rho, project));
                }
            }
            let Some((rho, project)) = best else { break };
            for &(voter, utility) in &project_supporters[project] {
                let price = &rho * BigInt::from(utility);
                let charge = price.min(balances[voter].clone());
                balances[voter] -= charge;
            }
            remaining.retain(|&p| p != project);
            selections.push(Selection {
                project,
                score: scores[project],
                phase: Phase::EqualShares,
            });
        }
    }
    let spent: u64 = selections
        .iter()
        .map(|s| election.projects[s.project].cost)
        .sum();
    let completion = greedy_pass(
        election,
        &scores,
        election.budget - spent,
        &selections,
        Phase::Completion,
    );
    selections.extend(completion);
    let winners = winning_set(election, &selections);
    SelectionTrace {
        selections,
        winners,
    }
}

pub fn equal_shares(profile: &VoteProfile, election: &ElectionInstance) -> WinningSet {
    equal_shares_trace(profile, election).winners
}
