//! Immutable evaluation context: datasets, layout, and per-game cached
//! indices. Safe to share across sampler chains.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::LeagueDataset;

use super::layout::build_layout;
use super::{ModelSpec, ParameterLayout};

/// One game, resolved against the parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct GameObs {
    /// Home-minus-away differential.
    pub y: f64,
    /// Absolute index of the home team-season strength coordinate.
    pub home: usize,
    /// Absolute index of the away team-season strength coordinate.
    pub away: usize,
    /// 1.0 for a true home game, 0.0 at a neutral site.
    pub h: f64,
    /// Raw year offset t - t0 within the game's league.
    pub year_offset: f64,
    /// Position of the game's season in the league's sorted season list.
    pub season_pos: usize,
    /// League index in spec order.
    pub league: usize,
}

/// Summary of a fitted league carried in artifacts; enough for the analysis
/// module without the raw games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueMeta {
    pub league_id: String,
    pub t0: i32,
    pub seasons: Vec<i32>,
    pub team_seasons: usize,
    pub games: usize,
}

#[derive(Debug, Clone)]
pub struct ModelContext {
    spec: ModelSpec,
    datasets: Vec<LeagueDataset>,
    layout: ParameterLayout,
    games: Vec<GameObs>,
}

impl ModelContext {
    /// Datasets must match `spec.leagues` in order.
    pub fn new(spec: ModelSpec, datasets: Vec<LeagueDataset>) -> Result<Self> {
        let layout = build_layout(&spec, &datasets)?;
        let mut games = Vec::new();
        for (league_idx, ds) in datasets.iter().enumerate() {
            let theta_offset = layout.leagues[league_idx].theta_offset;
            for g in &ds.games {
                let home = theta_offset
                    + ds.team_season_id(&g.home_team, g.season)
                        .expect("home team-season indexed");
                let away = theta_offset
                    + ds.team_season_id(&g.away_team, g.season)
                        .expect("away team-season indexed");
                games.push(GameObs {
                    y: g.differential(),
                    home,
                    away,
                    h: if g.neutral { 0.0 } else { 1.0 },
                    year_offset: f64::from(ds.year_offset(g.season)),
                    season_pos: ds.season_position(g.season).expect("season present"),
                    league: league_idx,
                });
            }
        }
        Ok(Self {
            spec,
            datasets,
            layout,
            games,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn datasets(&self) -> &[LeagueDataset] {
        &self.datasets
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Total games across leagues; rows of the pointwise log-likelihood
    /// matrix, in league order then dataset game order.
    pub fn num_games(&self) -> usize {
        self.games.len()
    }

    pub(crate) fn games(&self) -> &[GameObs] {
        &self.games
    }

    pub fn league_meta(&self) -> Vec<LeagueMeta> {
        self.datasets
            .iter()
            .map(|ds| LeagueMeta {
                league_id: ds.league_id.clone(),
                t0: ds.t0,
                seasons: ds.seasons.clone(),
                team_seasons: ds.num_team_seasons(),
                games: ds.games.len(),
            })
            .collect()
    }
}
