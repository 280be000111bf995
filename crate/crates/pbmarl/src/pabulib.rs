//! Parsing, validation and serialization of PABULIB `.pb` election files.
//!
//! A `.pb` file is a UTF-8 text document with three sections in order:
//! a `META` header line followed by `KEY;VALUE` rows, then a `PROJECTS`
//! header line followed by a semicolon-separated column-header row and data
//! rows, then a `VOTES` section likewise. There is no quoting and
//! semicolons are forbidden inside fields; line terminators may be `\n` or
//! `\r\n`.
//!
//! [`parse_pb`] keeps every column it does not understand as an opaque
//! string, so [`serialize`]∘[`parse_pb`] is lossless at field level.
//! [`build_election`] interprets the conventional columns and produces an
//! [`ElectionInstance`].

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::election::{
    derive_preferences, CumulativeBallot, ElectionInstance, Project, VoterProfile,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PbError {
    #[error("missing or out-of-order section {0}")]
    MissingSection(&'static str),
    #[error("duplicate project id {0}")]
    DuplicateProjectId(String),
    #[error("duplicate voter id {0}")]
    DuplicateVoterId(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("cost '{value}' at line {line} is not a positive amount")]
    NonNumericCost { line: usize, value: String },
    #[error("META section has no budget entry")]
    MissingBudget,
    #[error("budget '{0}' is not a positive amount")]
    InvalidBudget(String),
    #[error("META section has no max_sum_points entry (tokens per voter)")]
    TokenCountMissing,
    #[error("project {0} has no impact-area labels")]
    EmptyImpactAreas(String),
    #[error("voter {voter} assigned {total} tokens, more than the {max} allowed")]
    BallotExceedsTokens { voter: String, total: u32, max: u32 },
    #[error("voter {voter} references unknown project {project}")]
    UnknownProject { voter: String, project: String },
    #[error("no project fits within the budget")]
    NoAffordableProject,
}

/// One tabular section: a header row of column names plus data rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PbSection {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PbSection {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// A parsed `.pb` file, structurally validated but uninterpreted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawPbFile {
    pub meta: BTreeMap<String, String>,
    pub projects: PbSection,
    pub votes: PbSection,
}

/// Money amount with at most two decimal digits, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Amount {
    cents: u64,
    fractional: bool,
}

fn parse_amount(text: &str) -> Option<Amount> {
    let text = text.trim();
    let (whole, frac) = match text.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (text, None),
    };
    if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut cents: u64 = whole.parse::<u64>().ok()?.checked_mul(100)?;
    let mut fractional = false;
    if let Some(f) = frac {
        if f.is_empty() || f.len() > 2 || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut sub: u64 = f.parse().ok()?;
        if f.len() == 1 {
            sub *= 10;
        }
        cents = cents.checked_add(sub)?;
        fractional = sub != 0;
    }
    Some(Amount { cents, fractional })
}

fn split_fields(line: &str) -> Vec<String> {
    line.split(';').map(|f| f.to_string()).collect()
}

/// Parses a `.pb` document. Row order is preserved and unknown columns are
/// retained verbatim; structural problems are reported with 1-based line
/// numbers.
pub fn parse_pb(text: &str) -> Result<RawPbFile, PbError> {
    let mut lines = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .peekable();

    match lines.next() {
        Some((_, "META")) => {}
        _ => return Err(PbError::MissingSection("META")),
    }

    let mut meta = BTreeMap::new();
    loop {
        match lines.peek() {
            Some(&(_, "PROJECTS")) => {
                lines.next();
                break;
            }
            Some(&(idx, line)) => {
                let fields = split_fields(line);
                if fields.len() != 2 || fields[0].is_empty() {
                    return Err(PbError::MalformedRow {
                        line: idx + 1,
                        reason: "META rows must be KEY;VALUE".to_string(),
                    });
                }
                meta.insert(fields[0].clone(), fields[1].clone());
                lines.next();
            }
            None => return Err(PbError::MissingSection("PROJECTS")),
        }
    }

    let mut projects = PbSection::default();
    let mut votes = PbSection::default();
    for (section_name, stop) in [("PROJECTS", Some("VOTES")), ("VOTES", None)] {
        let section = if section_name == "PROJECTS" {
            &mut projects
        } else {
            &mut votes
        };
        let (header_idx, header) = match lines.next() {
            Some(pair) => pair,
            None => {
                return Err(PbError::MalformedRow {
                    line: 0,
                    reason: format!("section {section_name} has no column header"),
                })
            }
        };
        section.columns = split_fields(header);
        if section.columns.iter().any(|c| c.is_empty()) {
            return Err(PbError::MalformedRow {
                line: header_idx + 1,
                reason: "empty column name".to_string(),
            });
        }
        loop {
            match lines.peek() {
                Some(&(_, l)) if Some(l) == stop => {
                    lines.next();
                    break;
                }
                Some(&(idx, line)) => {
                    let fields = split_fields(line);
                    if fields.len() != section.columns.len() {
                        return Err(PbError::MalformedRow {
                            line: idx + 1,
                            reason: format!(
                                "expected {} fields, found {}",
                                section.columns.len(),
                                fields.len()
                            ),
                        });
                    }
                    section.rows.push(fields);
                    lines.next();
                }
                None if stop.is_some() => return Err(PbError::MissingSection("VOTES")),
                None => break,
            }
        }
    }

    validate_projects(&projects, text)?;
    validate_votes(&votes)?;

    Ok(RawPbFile {
        meta,
        projects,
        votes,
    })
}

fn line_of_row(text: &str, section: &str, row_idx: usize) -> usize {
    // Recover the 1-based line number of a data row for error reporting.
    let mut line = 0;
    for (idx, l) in text.lines().enumerate() {
        let l = l.strip_suffix('\r').unwrap_or(l);
        if l == section {
            line = idx + 1;
            break;
        }
    }
    line + 2 + row_idx
}

fn validate_projects(projects: &PbSection, text: &str) -> Result<(), PbError> {
    let id_col = projects.column("project_id").ok_or(PbError::MalformedRow {
        line: line_of_row(text, "PROJECTS", 0) - 1,
        reason: "PROJECTS header lacks a project_id column".to_string(),
    })?;
    let cost_col = projects.column("cost").ok_or(PbError::MalformedRow {
        line: line_of_row(text, "PROJECTS", 0) - 1,
        reason: "PROJECTS header lacks a cost column".to_string(),
    })?;
    let mut seen = BTreeSet::new();
    for (row_idx, row) in projects.rows.iter().enumerate() {
        let line = line_of_row(text, "PROJECTS", row_idx);
        let id = &row[id_col];
        if id.is_empty() {
            return Err(PbError::MalformedRow {
                line,
                reason: "empty project_id".to_string(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(PbError::DuplicateProjectId(id.clone()));
        }
        match parse_amount(&row[cost_col]) {
            Some(amount) if amount.cents > 0 => {}
            _ => {
                return Err(PbError::NonNumericCost {
                    line,
                    value: row[cost_col].clone(),
                })
            }
        }
    }
    Ok(())
}

fn validate_votes(votes: &PbSection) -> Result<(), PbError> {
    let id_col = votes.column("voter_id").ok_or(PbError::MalformedRow {
        line: 0,
        reason: "VOTES header lacks a voter_id column".to_string(),
    })?;
    let mut seen = BTreeSet::new();
    for row in &votes.rows {
        let id = &row[id_col];
        if id.is_empty() {
            return Err(PbError::MalformedRow {
                line: 0,
                reason: "empty voter_id".to_string(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(PbError::DuplicateVoterId(id.clone()));
        }
    }
    Ok(())
}

/// Renders a [`RawPbFile`] back to `.pb` text. META keys are emitted in
/// sorted order; parsing the output yields a file equal to the input.
pub fn serialize(raw: &RawPbFile) -> String {
    let mut out = String::from("META\n");
    for (key, value) in &raw.meta {
        out.push_str(key);
        out.push(';');
        out.push_str(value);
        out.push('\n');
    }
    for (name, section) in [("PROJECTS", &raw.projects), ("VOTES", &raw.votes)] {
        out.push_str(name);
        out.push('\n');
        out.push_str(&section.columns.join(";"));
        out.push('\n');
        for row in &section.rows {
            out.push_str(&row.join(";"));
            out.push('\n');
        }
    }
    out
}

/// Interprets a parsed file as an election.
///
/// Requires META `budget` and `max_sum_points`; reads impact areas from the
/// per-project `category` column as a comma-separated label list. Vote rows
/// carry parallel `vote`/`points` lists; rows without `points` count one
/// token per listed project. Costs are kept as whole currency units unless
/// any amount in the file is fractional, in which case everything is scaled
/// to minor units so budget arithmetic stays exact.
pub fn build_election(raw: &RawPbFile) -> Result<ElectionInstance, PbError> {
    let budget_text = raw.meta.get("budget").ok_or(PbError::MissingBudget)?;
    let budget = parse_amount(budget_text)
        .filter(|a| a.cents > 0)
        .ok_or_else(|| PbError::InvalidBudget(budget_text.clone()))?;
    let tokens_per_voter: u32 = raw
        .meta
        .get("max_sum_points")
        .ok_or(PbError::TokenCountMissing)?
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or(PbError::TokenCountMissing)?;
    let currency = raw.meta.get("currency").cloned().unwrap_or_default();

    let id_col = raw.projects.column("project_id").expect("validated");
    let cost_col = raw.projects.column("cost").expect("validated");
    let category_col = raw.projects.column("category");

    let mut amounts = Vec::with_capacity(raw.projects.rows.len());
    let mut fractional = budget.fractional;
    for row in &raw.projects.rows {
        let amount = parse_amount(&row[cost_col]).expect("validated");
        fractional |= amount.fractional;
        amounts.push(amount);
    }
    let to_units = |a: Amount| if fractional { a.cents } else { a.cents / 100 };

    let mut projects = Vec::with_capacity(raw.projects.rows.len());
    for (row, amount) in raw.projects.rows.iter().zip(&amounts) {
        let id = row[id_col].clone();
        let impact_areas: BTreeSet<String> = category_col
            .map(|c| {
                row[c]
                    .split(',')
                    .map(|a| a.trim().to_string())
                    .filter(|a| !a.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        if impact_areas.is_empty() {
            return Err(PbError::EmptyImpactAreas(id));
        }
        projects.push(Project {
            id,
            cost: to_units(*amount),
            impact_areas,
        });
    }
    let budget = to_units(budget);
    if !projects.iter().any(|p| p.cost <= budget) {
        return Err(PbError::NoAffordableProject);
    }

    let index_of: BTreeMap<&str, usize> = projects
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();

    let voter_col = raw.votes.column("voter_id").expect("validated");
    let vote_col = raw.votes.column("vote");
    let points_col = raw.votes.column("points");

    let mut voters = Vec::with_capacity(raw.votes.rows.len());
    for row in &raw.votes.rows {
        let voter_id = row[voter_col].clone();
        let mut ballot = CumulativeBallot::new();
        if let Some(vote_field) = vote_col.map(|c| row[c].as_str()) {
            let listed: Vec<&str> = vote_field
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect();
            let points: Vec<u32> = match points_col
                .map(|c| row[c].as_str())
                .filter(|f| !f.is_empty())
            {
                Some(field) => field
                    .split(',')
                    .map(|p| p.trim().parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| PbError::MalformedRow {
                        line: 0,
                        reason: format!("voter {voter_id} has non-numeric points"),
                    })?,
                None => vec![1; listed.len()],
            };
            if points.len() != listed.len() {
                return Err(PbError::MalformedRow {
                    line: 0,
                    reason: format!(
                        "voter {voter_id} lists {} projects but {} points",
                        listed.len(),
                        points.len()
                    ),
                });
            }
            for (project_id, tokens) in listed.iter().zip(points) {
                let index =
                    *index_of
                        .get(project_id)
                        .ok_or_else(|| PbError::UnknownProject {
                            voter: voter_id.clone(),
                            project: project_id.to_string(),
                        })?;
                ballot.add(index, tokens);
            }
        }
        let total = ballot.total_tokens();
        if total > tokens_per_voter {
            return Err(PbError::BallotExceedsTokens {
                voter: voter_id,
                total,
                max: tokens_per_voter,
            });
        }
        let favoured_areas = derive_preferences(&ballot, &projects).expect("ids resolved");
        voters.push(VoterProfile {
            id: voter_id,
            favoured_areas,
            historical_ballot: ballot,
        });
    }

    Ok(ElectionInstance {
        projects,
        budget,
        tokens_per_voter,
        voters,
        currency,
    })
}
