//! Iterative team-season filtering.
//!
//! Removing a team-season removes all of its games, which can push its
//! opponents below threshold, so removal repeats until a fixed point: every
//! retained team-season has enough games among retained games, and every
//! retained team appears in enough retained seasons.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::GameRecord;

#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    pub min_games_per_season: usize,
    pub min_seasons: usize,
    pub final_min_games: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_games_per_season: 1,
            min_seasons: 1,
            final_min_games: 7,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_games_per_season < 1 || self.min_seasons < 1 || self.final_min_games < 1 {
            return Err(Error::InvalidFilterConfig(
                "all thresholds must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// What a filtering pass removed and kept.
#[derive(Debug, Clone)]
pub struct FilterReport {
    /// Scan passes executed, including the final pass that removed nothing.
    pub rounds: usize,
    pub removed_team_seasons: Vec<(String, i32)>,
    /// Fraction of unique teams with at least one surviving team-season.
    /// Defined as 1.0 on empty input.
    pub retained_fraction_teams: f64,
    pub retained_fraction_games: f64,
}

/// Remove team-seasons until the fixed point. A team-season survives only if
/// it has >= `min_games_per_season` games among surviving games and its team
/// appears in >= `min_seasons` surviving seasons.
pub fn iterative_filter(
    records: &[GameRecord],
    config: &FilterConfig,
) -> Result<(Vec<GameRecord>, FilterReport)> {
    config.validate()?;

    // Membership universe: every team-season in the original records. A
    // team-season whose games all cascade away still counts as removed.
    let universe: BTreeSet<(&str, i32)> = records
        .iter()
        .flat_map(|g| {
            [
                (g.home_team.as_str(), g.season),
                (g.away_team.as_str(), g.season),
            ]
        })
        .collect();

    let mut alive: Vec<bool> = vec![true; records.len()];
    let mut removed: BTreeSet<(&str, i32)> = BTreeSet::new();
    let mut rounds = 0usize;
    loop {
        rounds += 1;

        let mut games_per_ts: BTreeMap<(&str, i32), usize> = BTreeMap::new();
        for (g, live) in records.iter().zip(alive.iter()) {
            if *live {
                *games_per_ts.entry((g.home_team.as_str(), g.season)).or_insert(0) += 1;
                *games_per_ts.entry((g.away_team.as_str(), g.season)).or_insert(0) += 1;
            }
        }
        let mut seasons_per_team: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
        for &(team, season) in games_per_ts.keys() {
            seasons_per_team.entry(team).or_default().insert(season);
        }

        let doomed: BTreeSet<(&str, i32)> = universe
            .iter()
            .filter(|key| !removed.contains(*key))
            .filter(|key| {
                let count = games_per_ts.get(key).copied().unwrap_or(0);
                count < config.min_games_per_season
                    || seasons_per_team.get(key.0).map_or(0, BTreeSet::len)
                        < config.min_seasons
            })
            .copied()
            .collect();

        if doomed.is_empty() {
            break;
        }
        for (g, live) in records.iter().zip(alive.iter_mut()) {
            if *live
                && (doomed.contains(&(g.home_team.as_str(), g.season))
                    || doomed.contains(&(g.away_team.as_str(), g.season)))
            {
                *live = false;
            }
        }
        removed.extend(doomed);
    }

    let filtered: Vec<GameRecord> = records
        .iter()
        .zip(alive.iter())
        .filter(|(_, live)| **live)
        .map(|(g, _)| g.clone())
        .collect();

    let all_teams: BTreeSet<&str> = records
        .iter()
        .flat_map(|g| [g.home_team.as_str(), g.away_team.as_str()])
        .collect();
    let kept_teams: BTreeSet<&str> = filtered
        .iter()
        .flat_map(|g| [g.home_team.as_str(), g.away_team.as_str()])
        .collect();

    let report = FilterReport {
        rounds,
        removed_team_seasons: removed
            .into_iter()
            .map(|(t, s)| (t.to_string(), s))
            .collect(),
        retained_fraction_teams: if all_teams.is_empty() {
            1.0
        } else {
            kept_teams.len() as f64 / all_teams.len() as f64
        },
        retained_fraction_games: if records.is_empty() {
            1.0
        } else {
            filtered.len() as f64 / records.len() as f64
        },
    };
    Ok((filtered, report))
}

/// Retained-team fraction for every `(games, seasons)` threshold pair.
/// Cell `[i][j]` corresponds to `(games_thresholds[i], seasons_thresholds[j])`.
pub fn retention_grid(
    records: &[GameRecord],
    games_thresholds: &[usize],
    seasons_thresholds: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if games_thresholds.is_empty() || seasons_thresholds.is_empty() {
        return Err(Error::InvalidFilterConfig(
            "threshold lists must be non-empty".to_string(),
        ));
    }
    if !games_thresholds.windows(2).all(|w| w[0] < w[1])
        || !seasons_thresholds.windows(2).all(|w| w[0] < w[1])
    {
        return Err(Error::InvalidFilterConfig(
            "threshold lists must be strictly ascending".to_string(),
        ));
    }
    games_thresholds
        .par_iter()
        .map(|&g| {
            seasons_thresholds
                .iter()
                .map(|&s| {
                    let config = FilterConfig {
                        min_games_per_season: g,
                        min_seasons: s,
                        final_min_games: 1,
                    };
                    iterative_filter(records, &config)
                        .map(|(_, report)| report.retained_fraction_teams)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Drop team-seasons with fewer than `final_min_games` games, iterating to a
/// fixed point since each removal can re-expose under-threshold opponents.
pub fn apply_final_threshold(
    records: &[GameRecord],
    final_min_games: usize,
) -> Result<(Vec<GameRecord>, FilterReport)> {
    let config = FilterConfig {
        min_games_per_season: final_min_games,
        min_seasons: 1,
        final_min_games,
    };
    iterative_filter(records, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn game(season: i32, home: &str, away: &str) -> GameRecord {
        GameRecord {
            league_id: "X".into(),
            season,
            home_team: home.into(),
            away_team: away.into(),
            home_score: 7,
            away_score: 0,
            neutral: false,
        }
    }

    /// Independent oracle: remove ONE violating team-season at a time,
    /// recomputing every count from scratch after each removal. Team-seasons
    /// whose games all disappeared still count as violating.
    fn oracle_filter(records: &[GameRecord], config: &FilterConfig) -> Vec<GameRecord> {
        let universe: BTreeSet<(String, i32)> = records
            .iter()
            .flat_map(|g| {
                [
                    (g.home_team.clone(), g.season),
                    (g.away_team.clone(), g.season),
                ]
            })
            .collect();
        let mut removed: BTreeSet<(String, i32)> = BTreeSet::new();
        loop {
            let live: Vec<&GameRecord> = records
                .iter()
                .filter(|g| {
                    !removed.contains(&(g.home_team.clone(), g.season))
                        && !removed.contains(&(g.away_team.clone(), g.season))
                })
                .collect();
            let mut counts: BTreeMap<(String, i32), usize> = BTreeMap::new();
            for g in &live {
                *counts.entry((g.home_team.clone(), g.season)).or_insert(0) += 1;
                *counts.entry((g.away_team.clone(), g.season)).or_insert(0) += 1;
            }
            let mut seasons: BTreeMap<String, BTreeSet<i32>> = BTreeMap::new();
            for (team, season) in counts.keys() {
                seasons.entry(team.clone()).or_default().insert(*season);
            }
            let victim = universe
                .iter()
                .filter(|key| !removed.contains(*key))
                .find(|(team, season)| {
                    let count = counts
                        .get(&(team.clone(), *season))
                        .copied()
                        .unwrap_or(0);
                    count < config.min_games_per_season
                        || seasons.get(team).map_or(0, BTreeSet::len) < config.min_seasons
                });
            match victim {
                Some(key) => {
                    removed.insert(key.clone());
                }
                None => {
                    return live.into_iter().cloned().collect();
                }
            }
        }
    }

    fn random_instance(rng: &mut StdRng) -> Vec<GameRecord> {
        let n_teams = rng.random_range(2..=30);
        let n_seasons = rng.random_range(1..=6);
        let n_games = rng.random_range(0..=120);
        (0..n_games)
            .map(|_| {
                let a = rng.random_range(0..n_teams);
                let mut b = rng.random_range(0..n_teams);
                while b == a {
                    b = rng.random_range(0..n_teams);
                }
                game(
                    2000 + rng.random_range(0..n_seasons),
                    &format!("T{a:02}"),
                    &format!("T{b:02}"),
                )
            })
            .collect()
    }

    #[test]
    fn empty_input_is_a_vacuous_fixed_point() {
        let (out, report) = iterative_filter(&[], &FilterConfig::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.rounds, 1);
        assert_eq!(report.retained_fraction_teams, 1.0);
        assert_eq!(report.retained_fraction_games, 1.0);
    }

    #[test]
    fn triangle_survives_then_cascades_after_dropping_one_game() {
        let full = vec![
            game(2010, "A", "B"),
            game(2010, "A", "C"),
            game(2010, "B", "C"),
        ];
        let config = FilterConfig {
            min_games_per_season: 2,
            min_seasons: 1,
            final_min_games: 1,
        };
        let (out, report) = iterative_filter(&full, &config).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(report.rounds, 1);

        // Drop A-B: A and B fall to one game; removing them strands C.
        let partial = vec![game(2010, "A", "C"), game(2010, "B", "C")];
        let (out, report) = iterative_filter(&partial, &config).unwrap();
        assert!(out.is_empty());
        assert!(report.rounds >= 2);
        assert_eq!(report.retained_fraction_teams, 0.0);
        assert_eq!(report.removed_team_seasons.len(), 3);
    }

    #[test]
    fn unit_thresholds_are_a_no_op() {
        let records = vec![game(2010, "A", "B"), game(2011, "C", "D")];
        let config = FilterConfig {
            min_games_per_season: 1,
            min_seasons: 1,
            final_min_games: 1,
        };
        let (out, _) = iterative_filter(&records, &config).unwrap();
        assert_eq!(out, records);
    }

    #[test]
    fn idempotent() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let records = random_instance(&mut rng);
            let config = FilterConfig {
                min_games_per_season: rng.random_range(1..=4),
                min_seasons: rng.random_range(1..=3),
                final_min_games: 1,
            };
            let (once, _) = iterative_filter(&records, &config).unwrap();
            let (twice, report) = iterative_filter(&once, &config).unwrap();
            assert_eq!(once, twice);
            assert_eq!(report.rounds, 1);
        }
    }

    #[test]
    fn fixed_point_is_sound() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..30 {
            let records = random_instance(&mut rng);
            let config = FilterConfig {
                min_games_per_season: rng.random_range(1..=4),
                min_seasons: rng.random_range(1..=3),
                final_min_games: 1,
            };
            let (out, _) = iterative_filter(&records, &config).unwrap();
            let mut counts: BTreeMap<(String, i32), usize> = BTreeMap::new();
            for g in &out {
                *counts.entry((g.home_team.clone(), g.season)).or_insert(0) += 1;
                *counts.entry((g.away_team.clone(), g.season)).or_insert(0) += 1;
            }
            let mut seasons: BTreeMap<String, BTreeSet<i32>> = BTreeMap::new();
            for (team, season) in counts.keys() {
                seasons.entry(team.clone()).or_default().insert(*season);
            }
            for ((team, _), count) in &counts {
                assert!(*count >= config.min_games_per_season);
                assert!(seasons[team].len() >= config.min_seasons);
            }
        }
    }

    #[test]
    fn matches_one_at_a_time_oracle_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let records = random_instance(&mut rng);
            let config = FilterConfig {
                min_games_per_season: rng.random_range(1..=5),
                min_seasons: rng.random_range(1..=3),
                final_min_games: 1,
            };
            let (fast, _) = iterative_filter(&records, &config).unwrap();
            let slow = oracle_filter(&records, &config);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn filter_is_input_order_independent() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let records = random_instance(&mut rng);
            let config = FilterConfig {
                min_games_per_season: 2,
                min_seasons: 1,
                final_min_games: 1,
            };
            let (a, ra) = iterative_filter(&records, &config).unwrap();
            let mut rev = records.clone();
            rev.reverse();
            let (b, rb) = iterative_filter(&rev, &config).unwrap();
            let mut a_sorted = a;
            let mut b_sorted = b;
            a_sorted.sort_by(|x, y| format!("{x:?}").cmp(&format!("{y:?}")));
            b_sorted.sort_by(|x, y| format!("{x:?}").cmp(&format!("{y:?}")));
            assert_eq!(a_sorted, b_sorted);
            assert_eq!(ra.removed_team_seasons, rb.removed_team_seasons);
        }
    }

    #[test]
    fn grid_trivial_and_cascade_cells() {
        let records = vec![game(2010, "A", "C"), game(2010, "B", "C")];
        let grid = retention_grid(&records, &[1], &[1]).unwrap();
        assert_eq!(grid, vec![vec![1.0]]);
        let grid = retention_grid(&records, &[1, 2], &[1]).unwrap();
        assert_eq!(grid, vec![vec![1.0], vec![0.0]]);
    }

    #[test]
    fn grid_is_monotone_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let records = random_instance(&mut rng);
            let grid = retention_grid(&records, &[1, 2, 3, 4], &[1, 2, 3]).unwrap();
            for row in &grid {
                for pair in row.windows(2) {
                    assert!(pair[1] <= pair[0] + 1e-12);
                }
            }
            for cols in grid.windows(2) {
                for (hi, lo) in cols[0].iter().zip(cols[1].iter()) {
                    assert!(lo <= hi);
                }
            }
        }
    }

    #[test]
    fn grid_rejects_bad_thresholds() {
        assert!(retention_grid(&[], &[], &[1]).is_err());
        assert!(retention_grid(&[], &[2, 1], &[1]).is_err());
    }

    #[test]
    fn final_threshold_default_is_seven() {
        assert_eq!(FilterConfig::default().final_min_games, 7);
    }

    #[test]
    fn final_threshold_identity_when_everyone_qualifies() {
        let mut records = Vec::new();
        for i in 0..7 {
            records.push(game(2010, "A", &format!("B{i}")));
            records.push(game(2010, &format!("B{i}"), "A"));
        }
        // A has 14 games, each B has 2; threshold 2 keeps everyone.
        let (out, _) = apply_final_threshold(&records, 2).unwrap();
        assert_eq!(out, records);
    }

    #[test]
    fn final_threshold_star_cascade_matches_oracle() {
        // Hub H plays 6 spokes once each; spokes only play H.
        let records: Vec<GameRecord> =
            (0..6).map(|i| game(2010, "H", &format!("S{i}"))).collect();
        let (out, _) = apply_final_threshold(&records, 3).unwrap();
        let oracle = oracle_filter(
            &records,
            &FilterConfig {
                min_games_per_season: 3,
                min_seasons: 1,
                final_min_games: 3,
            },
        );
        assert_eq!(out, oracle);
        assert!(out.is_empty());
    }
}
