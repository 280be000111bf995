//! Core domain model: projects, voters, cumulative ballots and winning sets.
//!
//! Projects are referred to by their index into
//! [`ElectionInstance::projects`], which follows the file order of the
//! `PROJECTS` section so that runs are reproducible. String ids only appear
//! at the I/O boundary.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ElectionError {
    #[error("ballot references unknown project index {0}")]
    UnknownProject(usize),
    #[error("branch choice {index} out of range for {projects} projects")]
    IndexOutOfRange { index: usize, projects: usize },
}

/// A costed proposal with the impact areas it contributes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Project {
    pub id: String,
    /// Positive cost in (minor) currency units.
    pub cost: u64,
    /// Non-empty set of impact-area labels.
    pub impact_areas: BTreeSet<String>,
}

/// A voter's assignment of tokens to projects.
///
/// Only positive assignments are stored; `tokens_for` returns 0 for
/// everything else. Iteration order is ascending project index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CumulativeBallot {
    assignments: BTreeMap<usize, u32>,
}

impl CumulativeBallot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, u32)>>(pairs: I) -> Self {
        let mut ballot = Self::new();
        for (project, tokens) in pairs {
            ballot.add(project, tokens);
        }
        ballot
    }

    /// Adds `tokens` to the project's assignment; zero is a no-op.
    pub fn add(&mut self, project: usize, tokens: u32) {
        if tokens > 0 {
            *self.assignments.entry(project).or_insert(0) += tokens;
        }
    }

    pub fn tokens_for(&self, project: usize) -> u32 {
        self.assignments.get(&project).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u32 {
        self.assignments.values().sum()
    }

    /// Projects that received at least one token, ascending.
    pub fn supported(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignments.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.assignments.iter().map(|(&p, &t)| (p, t))
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoterProfile {
    pub id: String,
    /// Union of impact areas of the projects the voter historically backed.
    pub favoured_areas: BTreeSet<String>,
    pub historical_ballot: CumulativeBallot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionInstance {
    pub projects: Vec<Project>,
    pub budget: u64,
    pub tokens_per_voter: u32,
    pub voters: Vec<VoterProfile>,
    pub currency: String,
}

impl ElectionInstance {
    /// Union of impact areas over all projects, in sorted label order.
    ///
    /// This ordering also fixes the layout of the per-project indicator
    /// block in agent state vectors.
    pub fn impact_areas(&self) -> BTreeSet<String> {
        self.projects
            .iter()
            .flat_map(|p| p.impact_areas.iter().cloned())
            .collect()
    }

    pub fn project_index(&self, id: &str) -> Option<usize> {
        self.projects.iter().position(|p| p.id == id)
    }

    pub fn project_count(&self) -> usize {
        self.projects.len()
    }

    pub fn voter_count(&self) -> usize {
        self.voters.len()
    }
}

/// A budget-feasible subset of projects selected by an aggregation rule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WinningSet {
    /// Indices into [`ElectionInstance::projects`].
    pub project_ids: BTreeSet<usize>,
    pub total_cost: u64,
}

impl WinningSet {
    pub fn contains(&self, project: usize) -> bool {
        self.project_ids.contains(&project)
    }

    pub fn len(&self) -> usize {
        self.project_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.project_ids.is_empty()
    }
}

/// Union of impact areas over projects holding at least one token.
///
/// Empty ballots yield the empty set.
pub fn derive_preferences(
    ballot: &CumulativeBallot,
    projects: &[Project],
) -> Result<BTreeSet<String>, ElectionError> {
    let mut areas = BTreeSet::new();
    for project in ballot.supported() {
        let p = projects
            .get(project)
            .ok_or(ElectionError::UnknownProject(project))?;
        areas.extend(p.impact_areas.iter().cloned());
    }
    Ok(areas)
}

/// Turns the `T` per-branch project choices of a branching policy into a
/// cumulative ballot: a project's token count is its multiplicity in
/// `branch_choices`, so the ballot always spends exactly `T` tokens.
pub fn decode_action(
    branch_choices: &[usize],
    projects: &[Project],
) -> Result<CumulativeBallot, ElectionError> {
    let mut ballot = CumulativeBallot::new();
    for &index in branch_choices {
        if index >= projects.len() {
            return Err(ElectionError::IndexOutOfRange {
                index,
                projects: projects.len(),
            });
        }
        ballot.add(index, 1);
    }
    Ok(ballot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn project(id: &str, cost: u64, areas: &[&str]) -> Project {
        Project {
            id: id.to_string(),
            cost,
            impact_areas: areas.iter().map(|a| a.to_string()).collect(),
        }
    }

    fn areas(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|l| l.to_string()).collect()
    }

    #[test]
    fn preferences_of_single_project_ballot() {
        let projects = vec![project("A", 10, &["culture"])];
        let ballot = CumulativeBallot::from_pairs([(0, 3)]);
        assert_eq!(
            derive_preferences(&ballot, &projects).unwrap(),
            areas(&["culture"])
        );
    }

    #[test]
    fn preferences_union_over_supported_projects() {
        let projects = vec![
            project("A", 10, &["culture"]),
            project("B", 10, &["culture", "welfare"]),
        ];
        let ballot = CumulativeBallot::from_pairs([(0, 1), (1, 1)]);
        assert_eq!(
            derive_preferences(&ballot, &projects).unwrap(),
            areas(&["culture", "welfare"])
        );
    }

    #[test]
    fn preferences_of_empty_ballot_are_empty() {
        let projects = vec![project("A", 10, &["culture"])];
        assert!(derive_preferences(&CumulativeBallot::new(), &projects)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn preferences_reject_unknown_project() {
        let projects = vec![project("A", 10, &["culture"])];
        let ballot = CumulativeBallot::from_pairs([(5, 1)]);
        assert_eq!(
            derive_preferences(&ballot, &projects),
            Err(ElectionError::UnknownProject(5))
        );
    }

    #[test]
    fn decode_counts_multiplicities() {
        let projects: Vec<Project> = (0..6)
            .map(|i| project(&format!("p{i}"), 10, &["x"]))
            .collect();
        let ballot = decode_action(&[2, 2, 5], &projects).unwrap();
        assert_eq!(ballot.tokens_for(2), 2);
        assert_eq!(ballot.tokens_for(5), 1);
        assert_eq!(ballot.total_tokens(), 3);
    }

    #[test]
    fn decode_degenerate_concentration() {
        let projects: Vec<Project> = (0..3)
            .map(|i| project(&format!("p{i}"), 10, &["x"]))
            .collect();
        let ballot = decode_action(&[0; 10], &projects).unwrap();
        assert_eq!(ballot.tokens_for(0), 10);
        assert_eq!(ballot.total_tokens(), 10);
    }

    #[test]
    fn decode_rejects_out_of_range_index() {
        let projects = vec![project("A", 10, &["x"])];
        assert_eq!(
            decode_action(&[0, 1], &projects),
            Err(ElectionError::IndexOutOfRange {
                index: 1,
                projects: 1
            })
        );
    }

    /// Independent enumerator of all multisets of size `tokens` over
    /// `projects` items, as sorted token-count vectors.
    fn enumerate_multisets(projects: usize, tokens: u32) -> BTreeSet<Vec<u32>> {
        fn recurse(
            remaining: u32,
            from: usize,
            projects: usize,
            counts: &mut Vec<u32>,
            out: &mut BTreeSet<Vec<u32>>,
        ) {
            if remaining == 0 {
                out.insert(counts.clone());
                return;
            }
            for p in from..projects {
                counts[p] += 1;
                recurse(remaining - 1, p, projects, counts, out);
                counts[p] -= 1;
            }
        }
        let mut out = BTreeSet::new();
        recurse(tokens, 0, projects, &mut vec![0; projects], &mut out);
        out
    }

    #[test]
    fn decode_is_surjective_onto_full_token_ballots() {
        for p in 1..=4usize {
            for t in 1..=3u32 {
                let projects: Vec<Project> = (0..p)
                    .map(|i| project(&format!("p{i}"), 10, &["x"]))
                    .collect();
                let mut reached = BTreeSet::new();
                // Enumerate every choice vector of length t over p projects.
                let total = (p as u64).pow(t);
                for code in 0..total {
                    let mut choices = Vec::with_capacity(t as usize);
                    let mut c = code;
                    for _ in 0..t {
                        choices.push((c % p as u64) as usize);
                        c /= p as u64;
                    }
                    let ballot = decode_action(&choices, &projects).unwrap();
                    assert_eq!(ballot.total_tokens(), t);
                    let counts: Vec<u32> =
                        (0..p).map(|i| ballot.tokens_for(i)).collect();
                    reached.insert(counts);
                }
                assert_eq!(reached, enumerate_multisets(p, t));
            }
        }
    }

    proptest! {
        #[test]
        fn decoded_ballots_spend_exactly_t_tokens(
            choices in proptest::collection::vec(0usize..33, 10)
        ) {
            let projects: Vec<Project> = (0..33)
                .map(|i| project(&format!("p{i}"), 10, &["x"]))
                .collect();
            let ballot = decode_action(&choices, &projects).unwrap();
            prop_assert_eq!(ballot.total_tokens(), 10);
        }

        #[test]
        fn derive_preferences_is_monotone(
            base in proptest::collection::btree_map(0usize..6, 1u32..4, 0..6),
            extra in 0usize..6,
        ) {
            let projects: Vec<Project> = (0..6)
                .map(|i| project(&format!("p{i}"), 10, &[
                    ["culture", "sport", "welfare", "health"][i % 4],
                    ["education", "environment"][i % 2],
                ]))
                .collect();
            let ballot = CumulativeBallot::from_pairs(base.clone());
            let before = derive_preferences(&ballot, &projects).unwrap();
            let mut grown = ballot.clone();
            grown.add(extra, 1);
            let after = derive_preferences(&grown, &projects).unwrap();
            prop_assert!(before.is_subset(&after));
        }
    }
}
