//! Game-table parsing and per-league dataset construction.
//!
//! The input format is a UTF-8 comma-delimited table with a header naming
//! seven columns (any order): `league_id`, `season`, `home_team`,
//! `away_team`, `home_score`, `away_score`, `neutral`. For neutral-site
//! games `home_team` is an arbitrary but fixed side.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One game result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub league_id: String,
    pub season: i32,
    pub home_team: String,
    pub away_team: String,
    pub home_score: u32,
    pub away_score: u32,
    pub neutral: bool,
}

impl GameRecord {
    /// Home-minus-away score differential.
    pub fn differential(&self) -> f64 {
        f64::from(self.home_score) - f64::from(self.away_score)
    }
}

/// Options for [`parse_games`].
#[derive(Debug, Clone)]
pub struct ParseConfig {
    /// Inclusive season window; rows outside it are semantic errors.
    pub season_window: Option<(i32, i32)>,
    /// Abort once more than this many rows have been rejected.
    pub max_semantic_errors: usize,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            season_window: None,
            max_semantic_errors: 100,
        }
    }
}

/// A rejected row, with its 1-based file line number.
#[derive(Debug, Clone)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Outcome of a parse: accepted records in file order plus rejected rows.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub records: Vec<GameRecord>,
    pub rejected: Vec<RowError>,
}

const COLUMNS: [&str; 7] = [
    "league_id",
    "season",
    "home_team",
    "away_team",
    "home_score",
    "away_score",
    "neutral",
];

/// Parse a game table. Structural errors (bad header, wrong field count,
/// unparseable value) abort immediately; rows violating record invariants
/// are collected as semantic errors up to `config.max_semantic_errors`.
pub fn parse_games<R: Read>(source: R, config: &ParseConfig) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::TableFormat {
            line: 1,
            message: e.to_string(),
        })?
        .clone();

    // Map canonical column -> position in this file.
    let mut positions = [usize::MAX; 7];
    for (idx, name) in headers.iter().enumerate() {
        match COLUMNS.iter().position(|c| *c == name) {
            Some(col) => {
                if positions[col] != usize::MAX {
                    return Err(Error::TableFormat {
                        line: 1,
                        message: format!("duplicate column '{name}'"),
                    });
                }
                positions[col] = idx;
            }
            None => {
                return Err(Error::TableFormat {
                    line: 1,
                    message: format!("unknown column '{name}'"),
                })
            }
        }
    }
    if let Some(missing) = COLUMNS
        .iter()
        .zip(positions.iter())
        .find(|(_, p)| **p == usize::MAX)
    {
        return Err(Error::TableFormat {
            line: 1,
            message: format!("missing column '{}'", missing.0),
        });
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::TableFormat {
            line: e
                .position()
                .map(csv::Position::line)
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        let line = row.position().map(csv::Position::line).unwrap_or_default();
        if row.len() != COLUMNS.len() {
            return Err(Error::TableFormat {
                line,
                message: format!("expected {} fields, got {}", COLUMNS.len(), row.len()),
            });
        }
        let field = |col: usize| row.get(positions[col]).unwrap_or_default();

        let season = parse_int(field(1), "season", line)?;
        let home_score = parse_score(field(4), "home_score", line, &mut rejected)?;
        let away_score = parse_score(field(5), "away_score", line, &mut rejected)?;
        let neutral = parse_bool(field(6), line)?;

        let record = GameRecord {
            league_id: field(0).to_string(),
            season,
            home_team: field(2).to_string(),
            away_team: field(3).to_string(),
            home_score: home_score.unwrap_or(0),
            away_score: away_score.unwrap_or(0),
            neutral,
        };

        let window = config.season_window;
        let violation = if home_score.is_none() || away_score.is_none() {
            None // negative score already recorded
        } else if record.home_team == record.away_team {
            Some(format!(
                "home_team equals away_team ('{}')",
                record.home_team
            ))
        } else if record.league_id.is_empty()
            || record.home_team.is_empty()
            || record.away_team.is_empty()
        {
            Some("empty team or league token".to_string())
        } else if window.is_some_and(|(lo, hi)| season < lo || season > hi) {
            let (lo, hi) = window.unwrap();
            Some(format!("season {season} outside study window {lo}..={hi}"))
        } else {
            records.push(record);
            None
        };
        if let Some(message) = violation {
            rejected.push(RowError { line, message });
        }

        if rejected.len() > config.max_semantic_errors {
            return Err(Error::TooManyInvalidRows {
                count: rejected.len(),
                first: rejected[0].message.clone(),
            });
        }
    }

    Ok(ParseOutcome { records, rejected })
}

fn parse_int(text: &str, name: &str, line: u64) -> Result<i32> {
    text.parse::<i32>().map_err(|_| Error::TableFormat {
        line,
        message: format!("bad integer for {name}: '{text}'"),
    })
}

/// Scores must be integers (structural otherwise); a negative value parses
/// but violates the record invariant, so it is a semantic error.
fn parse_score(
    text: &str,
    name: &str,
    line: u64,
    rejected: &mut Vec<RowError>,
) -> Result<Option<u32>> {
    let value = text.parse::<i64>().map_err(|_| Error::TableFormat {
        line,
        message: format!("bad integer for {name}: '{text}'"),
    })?;
    if value < 0 {
        rejected.push(RowError {
            line,
            message: format!("negative {name}: {value}"),
        });
        return Ok(None);
    }
    u32::try_from(value).map(Some).map_err(|_| Error::TableFormat {
        line,
        message: format!("{name} out of range: {value}"),
    })
}

fn parse_bool(text: &str, line: u64) -> Result<bool> {
    match text.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::TableFormat {
            line,
            message: format!("bad boolean for neutral: '{other}'"),
        }),
    }
}

/// Write records in the canonical column order. Inverse of [`parse_games`]
/// for valid tables.
pub fn write_games<W: Write>(records: &[GameRecord], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(COLUMNS)
        .map_err(|e| Error::Artifact(e.to_string()))?;
    for r in records {
        writer
            .write_record([
                r.league_id.as_str(),
                &r.season.to_string(),
                r.home_team.as_str(),
                r.away_team.as_str(),
                &r.home_score.to_string(),
                &r.away_score.to_string(),
                if r.neutral { "true" } else { "false" },
            ])
            .map_err(|e| Error::Artifact(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Indexed, immutable game collection for one league.
///
/// Team-seasons are the modeling unit: the same team in two seasons gets two
/// independent ids. Ids are dense `0..T` and assigned by sorting on
/// `(team, season)`, so construction is deterministic regardless of input
/// order.
#[derive(Debug, Clone)]
pub struct LeagueDataset {
    pub league_id: String,
    pub games: Vec<GameRecord>,
    /// Earliest season present.
    pub t0: i32,
    /// Observed seasons, ascending. Gaps are legal (e.g. a skipped 2020).
    pub seasons: Vec<i32>,
    team_season_index: BTreeMap<(String, i32), usize>,
    /// Inverse of `team_season_index`, in id order.
    team_seasons: Vec<(String, i32)>,
    games_per_season: BTreeMap<i32, usize>,
}

impl LeagueDataset {
    pub fn num_team_seasons(&self) -> usize {
        self.team_seasons.len()
    }

    pub fn team_season_id(&self, team: &str, season: i32) -> Option<usize> {
        self.team_season_index
            .get(&(team.to_string(), season))
            .copied()
    }

    pub fn team_season(&self, id: usize) -> &(String, i32) {
        &self.team_seasons[id]
    }

    pub fn team_seasons(&self) -> &[(String, i32)] {
        &self.team_seasons
    }

    pub fn games_in_season(&self, season: i32) -> usize {
        self.games_per_season.get(&season).copied().unwrap_or(0)
    }

    /// Position of `season` in the sorted season list.
    pub fn season_position(&self, season: i32) -> Option<usize> {
        self.seasons.binary_search(&season).ok()
    }

    /// Raw year offset `t - t0`; gaps count (2021 in a {2019, 2021}
    /// dataset is offset 2).
    pub fn year_offset(&self, season: i32) -> i32 {
        season - self.t0
    }

    /// Plain-text summary: per-season game counts and totals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "league {}: {} games, {} team-seasons, t0 = {}\n",
            self.league_id,
            self.games.len(),
            self.num_team_seasons(),
            self.t0
        ));
        out.push_str("season,games,team_seasons\n");
        for &season in &self.seasons {
            let teams = self
                .team_seasons
                .iter()
                .filter(|(_, s)| *s == season)
                .count();
            out.push_str(&format!(
                "{season},{},{teams}\n",
                self.games_in_season(season)
            ));
        }
        out
    }
}

/// Build the indexed dataset for one league, keeping games inside the
/// optional inclusive season window.
pub fn build_dataset(
    records: &[GameRecord],
    league_id: &str,
    season_window: Option<(i32, i32)>,
) -> Result<LeagueDataset> {
    let games: Vec<GameRecord> = records
        .iter()
        .filter(|r| r.league_id == league_id)
        .filter(|r| match season_window {
            Some((lo, hi)) => r.season >= lo && r.season <= hi,
            None => true,
        })
        .cloned()
        .collect();
    if games.is_empty() {
        return Err(Error::EmptySelection(league_id.to_string()));
    }

    let mut season_set = BTreeSet::new();
    let mut key_set = BTreeSet::new();
    let mut games_per_season: BTreeMap<i32, usize> = BTreeMap::new();
    for g in &games {
        season_set.insert(g.season);
        key_set.insert((g.home_team.clone(), g.season));
        key_set.insert((g.away_team.clone(), g.season));
        *games_per_season.entry(g.season).or_insert(0) += 1;
    }

    let team_seasons: Vec<(String, i32)> = key_set.into_iter().collect();
    let team_season_index: BTreeMap<(String, i32), usize> = team_seasons
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i))
        .collect();
    let seasons: Vec<i32> = season_set.into_iter().collect();
    let t0 = seasons[0];

    Ok(LeagueDataset {
        league_id: league_id.to_string(),
        games,
        t0,
        seasons,
        team_season_index,
        team_seasons,
        games_per_season,
    })
}

/// Mean home-minus-away differential over the non-neutral games of one
/// season: the strength-unadjusted empirical estimator.
pub fn empirical_ha(dataset: &LeagueDataset, season: i32) -> Result<f64> {
    if dataset.season_position(season).is_none() {
        return Err(Error::UnknownSeason { season });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for g in &dataset.games {
        if g.season == season && !g.neutral {
            sum += g.differential();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmpiricalHaUndefined { season });
    }
    Ok(sum / count as f64)
}
