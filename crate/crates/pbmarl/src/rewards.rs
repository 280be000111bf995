//! Per-voter reward for a winning set.
//!
//! Each winner `w` contributes
//! `ln(cost(w)) * (|p ∩ i(w)| / |p|) * (|p ∩ i(w)| / |i(w)|) * (tokens(w) / T)`
//! where `p` is the voter's favoured impact-area set and `i(w)` the
//! winner's areas. Winners with no area overlap or no tokens from the cast
//! ballot contribute nothing, and a voter with no favoured areas receives 0.
//! The logarithm is natural; the base only scales all rewards uniformly.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::election::{CumulativeBallot, ElectionInstance, Project, VoterProfile, WinningSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("winning set references unknown project index {0}")]
    UnknownWinnerProject(usize),
}

/// Everything needed to score one voter against one winning set.
#[derive(Debug, Clone)]
pub struct RewardContext<'a> {
    pub voter: &'a VoterProfile,
    pub ballot_cast: &'a CumulativeBallot,
    pub winners: &'a WinningSet,
    pub tokens_total: u32,
}

pub fn reward(ctx: &RewardContext, projects: &[Project]) -> Result<f64, RewardError> {
    let favoured = &ctx.voter.favoured_areas;
    if favoured.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &w in &ctx.winners.project_ids {
        let project = projects
            .get(w)
            .ok_or(RewardError::UnknownWinnerProject(w))?;
        let tokens = ctx.ballot_cast.tokens_for(w);
        if tokens == 0 {
            continue;
        }
        let overlap = favoured.intersection(&project.impact_areas).count();
        if overlap == 0 {
            continue;
        }
        total += (project.cost as f64).ln()
            * (overlap as f64 / favoured.len() as f64)
            * (overlap as f64 / project.impact_areas.len() as f64)
            * (f64::from(tokens) / f64::from(ctx.tokens_total));
    }
    Ok(total)
}

/// Precomputed bitmask view of an election for the episode hot loop.
///
/// Impact areas are numbered by their sorted label order, the same order
/// used for state-vector indicator blocks.
#[derive(Debug, Clone)]
pub struct RewardEvaluator {
    areas: Vec<String>,
    ln_cost: Vec<f64>,
    area_mask: Vec<u64>,
    area_count: Vec<u32>,
    tokens_total: f64,
}

impl RewardEvaluator {
    pub fn new(election: &ElectionInstance) -> Self {
        let areas: Vec<String> = election.impact_areas().into_iter().collect();
        let area_bit = |label: &str| -> u64 {
            1u64 << areas
                .iter()
                .position(|a| a == label)
                .expect("label drawn from the union")
        };
        let mut ln_cost = Vec::with_capacity(election.project_count());
        let mut area_mask = Vec::with_capacity(election.project_count());
        let mut area_count = Vec::with_capacity(election.project_count());
        for project in &election.projects {
            ln_cost.push((project.cost as f64).ln());
            let mask = project
                .impact_areas
                .iter()
                .fold(0u64, |m, a| m | area_bit(a));
            area_mask.push(mask);
            area_count.push(project.impact_areas.len() as u32);
        }
        Self {
            areas,
            ln_cost,
            area_mask,
            area_count,
            tokens_total: f64::from(election.tokens_per_voter),
        }
    }

    /// Bitmask of a voter's favoured areas.
    pub fn preference_mask(&self, favoured: &BTreeSet<String>) -> u64 {
        favoured.iter().fold(0u64, |m, label| {
            m | (1u64
                << self
                    .areas
                    .iter()
                    .position(|a| a == label)
                    .expect("favoured areas come from project labels"))
        })
    }

    pub fn evaluate(
        &self,
        preference_mask: u64,
        ballot_cast: &CumulativeBallot,
        winners: &WinningSet,
    ) -> f64 {
        let favoured = preference_mask.count_ones();
        if favoured == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (project, tokens) in ballot_cast.iter() {
            if !winners.contains(project) {
                continue;
            }
            let overlap = (preference_mask & self.area_mask[project]).count_ones();
            if overlap == 0 {
                continue;
            }
            total += self.ln_cost[project]
                * (f64::from(overlap) / f64::from(favoured))
                * (f64::from(overlap) / f64::from(self.area_count[project]))
                * (f64::from(tokens) / self.tokens_total);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn project(id: &str, cost: u64, areas: &[&str]) -> Project {
        Project {
            id: id.to_string(),
            cost,
            impact_areas: areas.iter().map(|a| a.to_string()).collect(),
        }
    }

    fn voter(favoured: &[&str]) -> VoterProfile {
        VoterProfile {
            id: "v".to_string(),
            favoured_areas: favoured.iter().map(|a| a.to_string()).collect(),
            historical_ballot: CumulativeBallot::new(),
        }
    }

    fn winners(ids: &[usize], projects: &[Project]) -> WinningSet {
        WinningSet {
            project_ids: ids.iter().copied().collect(),
            total_cost: ids.iter().map(|&p| projects[p].cost).sum(),
        }
    }

    #[test]
    fn no_overlap_means_no_reward() {
        let projects = vec![project("A", 100, &["sport"])];
        let v = voter(&["culture"]);
        let ballot = CumulativeBallot::from_pairs([(0, 10)]);
        let ctx = RewardContext {
            voter: &v,
            ballot_cast: &ballot,
            winners: &winners(&[0], &projects),
            tokens_total: 10,
        };
        assert_eq!(reward(&ctx, &projects).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_single_winner() {
        // ln(100) * (1/2) * (1/1) * (5/10) = 1.1513
        let projects = vec![project("A", 100, &["a"])];
        let v = voter(&["a", "b"]);
        let ballot = CumulativeBallot::from_pairs([(0, 5)]);
        let ctx = RewardContext {
            voter: &v,
            ballot_cast: &ballot,
            winners: &winners(&[0], &projects),
            tokens_total: 10,
        };
        assert_relative_eq!(
            reward(&ctx, &projects).unwrap(),
            100f64.ln() * 0.5 * 1.0 * 0.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(reward(&ctx, &projects).unwrap(), 1.1513, epsilon = 1e-4);
    }

    #[test]
    fn reward_adds_over_winners() {
        let projects = vec![project("A", 100, &["a"]), project("B", 100, &["a"])];
        let v = voter(&["a", "b"]);
        let single = CumulativeBallot::from_pairs([(0, 5)]);
        let double = CumulativeBallot::from_pairs([(0, 5), (1, 5)]);
        let one = reward(
            &RewardContext {
                voter: &v,
                ballot_cast: &single,
                winners: &winners(&[0], &projects),
                tokens_total: 10,
            },
            &projects,
        )
        .unwrap();
        let two = reward(
            &RewardContext {
                voter: &v,
                ballot_cast: &double,
                winners: &winners(&[0, 1], &projects),
                tokens_total: 10,
            },
            &projects,
        )
        .unwrap();
        assert_relative_eq!(two, 2.0 * one, epsilon = 1e-12);
    }

    #[test]
    fn empty_preferences_give_zero() {
        let projects = vec![project("A", 100, &["a"])];
        let v = voter(&[]);
        let ballot = CumulativeBallot::from_pairs([(0, 10)]);
        let ctx = RewardContext {
            voter: &v,
            ballot_cast: &ballot,
            winners: &winners(&[0], &projects),
            tokens_total: 10,
        };
        assert_eq!(reward(&ctx, &projects).unwrap(), 0.0);
    }

    #[test]
    fn unknown_winner_is_an_error() {
        let projects = vec![project("A", 100, &["a"])];
        let v = voter(&["a"]);
        let ballot = CumulativeBallot::from_pairs([(0, 1)]);
        let w = WinningSet {
            project_ids: [3].into_iter().collect(),
            total_cost: 0,
        };
        let ctx = RewardContext {
            voter: &v,
            ballot_cast: &ballot,
            winners: &w,
            tokens_total: 10,
        };
        assert_eq!(
            reward(&ctx, &projects),
            Err(RewardError::UnknownWinnerProject(3))
        );
    }

    fn random_election(rng: &mut ChaCha8Rng) -> (ElectionInstance, Vec<&'static str>) {
        let labels: Vec<&'static str> = vec![
            "culture", "education", "environment", "health", "mobility", "sport",
            "welfare",
        ];
        let project_count = rng.gen_range(2..=8);
        let projects: Vec<Project> = (0..project_count)
            .map(|i| {
                let n_areas = rng.gen_range(1..=3);
                let areas: Vec<&str> = labels
                    .choose_multiple(rng, n_areas)
                    .copied()
                    .collect();
                project(&format!("p{i}"), rng.gen_range(2..=5000), &areas)
            })
            .collect();
        (
            ElectionInstance {
                projects,
                budget: 10_000,
                tokens_per_voter: rng.gen_range(1..=12),
                voters: Vec::new(),
                currency: String::new(),
            },
            labels,
        )
    }

    #[test]
    fn evaluator_matches_reference_on_random_contexts() {
        let mut rng = ChaCha8Rng::seed_from_u64(20523);
        for _ in 0..500 {
            let (election, labels) = random_election(&mut rng);
            let evaluator = RewardEvaluator::new(&election);
            let favoured_count = rng.gen_range(0..=4);
            let favoured: BTreeSet<String> = labels
                .choose_multiple(&mut rng, favoured_count)
                .map(|l| l.to_string())
                .filter(|l| {
                    election
                        .projects
                        .iter()
                        .any(|p| p.impact_areas.contains(l))
                })
                .collect();
            let mut assignments = BTreeMap::new();
            let mut left = election.tokens_per_voter;
            while left > 0 && rng.gen_bool(0.8) {
                let p = rng.gen_range(0..election.project_count());
                let t = rng.gen_range(1..=left);
                *assignments.entry(p).or_insert(0) += t;
                left -= t;
            }
            let ballot = CumulativeBallot::from_pairs(assignments);
            let winner_ids: Vec<usize> = (0..election.project_count())
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            let w = winners(&winner_ids, &election.projects);
            let v = VoterProfile {
                id: "v".to_string(),
                favoured_areas: favoured.clone(),
                historical_ballot: CumulativeBallot::new(),
            };
            let ctx = RewardContext {
                voter: &v,
                ballot_cast: &ballot,
                winners: &w,
                tokens_total: election.tokens_per_voter,
            };
            let expected = reward(&ctx, &election.projects).unwrap();
            let mask = evaluator.preference_mask(&favoured);
            assert_relative_eq!(
                evaluator.evaluate(mask, &ballot, &w),
                expected,
                epsilon = 1e-12
            );
        }
    }

    proptest! {
        #[test]
        fn more_tokens_on_an_overlapping_winner_never_hurt(
            tokens in 1u32..10, extra in 1u32..5,
        ) {
            let projects = vec![project("A", 100, &["a"]), project("B", 50, &["b"])];
            let v = voter(&["a"]);
            let w = winners(&[0], &projects);
            let before = CumulativeBallot::from_pairs([(0, tokens)]);
            let after = CumulativeBallot::from_pairs([(0, tokens + extra)]);
            let r = |ballot| reward(&RewardContext {
                voter: &v,
                ballot_cast: ballot,
                winners: &w,
                tokens_total: 15,
            }, &projects).unwrap();
            prop_assert!(r(&after) >= r(&before));
        }

        #[test]
        fn each_term_is_bounded_by_log_cost(
            cost in 2u64..100_000,
            tokens in 0u32..10,
        ) {
            let projects = vec![project("A", cost, &["a", "b"])];
            let v = voter(&["a"]);
            let ballot = CumulativeBallot::from_pairs([(0, tokens)]);
            let r = reward(&RewardContext {
                voter: &v,
                ballot_cast: &ballot,
                winners: &winners(&[0], &projects),
                tokens_total: 10,
            }, &projects).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert!(r <= (cost as f64).ln() + 1e-12);
        }

        #[test]
        fn no_tokens_on_winners_means_zero(
            tokens in 1u32..10,
        ) {
            let projects = vec![project("A", 100, &["a"]), project("B", 50, &["a"])];
            let v = voter(&["a"]);
            let ballot = CumulativeBallot::from_pairs([(1, tokens)]);
            let r = reward(&RewardContext {
                voter: &v,
                ballot_cast: &ballot,
                winners: &winners(&[0], &projects),
                tokens_total: 10,
            }, &projects).unwrap();
            prop_assert_eq!(r, 0.0);
        }
    }
}
