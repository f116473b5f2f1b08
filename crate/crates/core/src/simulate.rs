//! Synthetic-league generator drawing games from the assumed
//! data-generating process, so estimators and the sampler can be tested
//! against known truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GameRecord;

/// True HA structure to generate under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TruthHa {
    Constant {
        alpha: f64,
    },
    Linear {
        beta0: f64,
        beta1: f64,
    },
    /// One HA value per entry of `seasons`.
    TimeVarying {
        gamma: Vec<f64>,
    },
    /// Per-league intercepts and trends are drawn:
    /// `beta0_k ~ N(0, lambda0^2)`, `beta1_k ~ N(beta1_star, lambda1^2)`.
    Hierarchical {
        leagues: usize,
        beta1_star: f64,
        lambda1: f64,
        lambda0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    /// League id, or the id prefix for hierarchical generation.
    pub league_id: String,
    pub ha: TruthHa,
    /// Team-strength prior scale; 0 makes all teams equal.
    pub zeta: f64,
    pub sigma: f64,
    pub n_teams: usize,
    pub seasons: Vec<i32>,
    pub games_per_team: usize,
    pub neutral_fraction: f64,
    /// Probability tilt that the stronger team hosts:
    /// `P(i hosts) = clamp(0.5 + host_bias * (theta_i - theta_j), 0.05, 0.95)`.
    pub host_bias: f64,
    pub seed: u64,
}

impl TruthConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 || self.zeta < 0.0 {
            return Err(Error::InvalidTruth("need sigma > 0 and zeta >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.neutral_fraction) {
            return Err(Error::InvalidTruth("neutral_fraction must lie in [0,1]".into()));
        }
        if self.host_bias < 0.0 {
            return Err(Error::InvalidTruth("host_bias must be >= 0".into()));
        }
        if self.n_teams < 2 || self.seasons.is_empty() || self.games_per_team == 0 {
            return Err(Error::InvalidTruth(
                "need >= 2 teams, >= 1 season, >= 1 game per team".into(),
            ));
        }
        if let TruthHa::TimeVarying { gamma } = &self.ha {
            if gamma.len() != self.seasons.len() {
                return Err(Error::InvalidTruth(format!(
                    "time-varying truth needs one gamma per season ({} != {})",
                    gamma.len(),
                    self.seasons.len()
                )));
            }
        }
        if let TruthHa::Hierarchical {
            leagues, lambda1, lambda0, ..
        } = &self.ha
        {
            if *leagues < 2 {
                return Err(Error::InvalidTruth(
                    "hierarchical truth needs >= 2 leagues".into(),
                ));
            }
            if *lambda1 < 0.0 || *lambda0 < 0.0 {
                return Err(Error::InvalidTruth("hierarchy scales must be >= 0".into()));
            }
        }
        if !(self.n_teams * self.games_per_team).is_multiple_of(2) {
            return Err(Error::ImpossibleSchedule(format!(
                "{} teams x {} games per team leaves an unpaired slot",
                self.n_teams, self.games_per_team
            )));
        }
        Ok(())
    }
}

/// Resolved per-league HA truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ResolvedHa {
    Constant { alpha: f64 },
    Linear { beta0: f64, beta1: f64 },
    TimeVarying { gamma: Vec<f64> },
}

impl ResolvedHa {
    fn at(&self, season_idx: usize, year_offset: f64) -> f64 {
        match self {
            ResolvedHa::Constant { alpha } => *alpha,
            ResolvedHa::Linear { beta0, beta1 } => beta0 + beta1 * year_offset,
            ResolvedHa::TimeVarying { gamma } => gamma[season_idx],
        }
    }
}

/// Everything that generated the sample, including per-league values drawn
/// for hierarchical truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEcho {
    pub config: TruthConfig,
    pub leagues: Vec<(String, ResolvedHa)>,
}

/// Exact-degree random schedule: every team plays exactly
/// `games_per_team` games, repeat pairings allowed, self-pairings repaired.
fn schedule(n_teams: usize, games_per_team: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut stubs: Vec<usize> = (0..n_teams)
        .flat_map(|t| std::iter::repeat_n(t, games_per_team))
        .collect();
    'attempt: for _ in 0..1000 {
        stubs.shuffle(rng);
        for i in (0..stubs.len()).step_by(2) {
            if stubs[i] == stubs[i + 1] {
                let mut fixed = false;
                for j in i + 2..stubs.len() {
                    let partner = j ^ 1;
                    if stubs[j] != stubs[i] && stubs[partner] != stubs[i + 1] {
                        stubs.swap(i + 1, j);
                        fixed = true;
                        break;
                    }
                }
                if !fixed {
                    continue 'attempt;
                }
            }
        }
        break;
    }
    stubs.chunks(2).map(|pair| (pair[0], pair[1])).collect()
}

/// Generate one league (or several, under a hierarchical truth).
pub fn generate_league(truth: &TruthConfig) -> Result<(Vec<GameRecord>, TruthEcho)> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);

    // Resolve per-league HA values.
    let leagues: Vec<(String, ResolvedHa)> = match &truth.ha {
        TruthHa::Constant { alpha } => vec![(
            truth.league_id.clone(),
            ResolvedHa::Constant { alpha: *alpha },
        )],
        TruthHa::Linear { beta0, beta1 } => vec![(
            truth.league_id.clone(),
            ResolvedHa::Linear {
                beta0: *beta0,
                beta1: *beta1,
            },
        )],
        TruthHa::TimeVarying { gamma } => vec![(
            truth.league_id.clone(),
            ResolvedHa::TimeVarying { gamma: gamma.clone() },
        )],
        TruthHa::Hierarchical {
            leagues,
            beta1_star,
            lambda1,
            lambda0,
        } => (0..*leagues)
            .map(|k| {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                (
                    format!("{}{}", truth.league_id, k + 1),
                    ResolvedHa::Linear {
                        beta0: lambda0 * z0,
                        beta1: beta1_star + lambda1 * z1,
                    },
                )
            })
            .collect(),
    };

    let t0 = *truth.seasons.iter().min().expect("non-empty seasons");
    let mut records = Vec::new();
    for (league_id, ha) in &leagues {
        for (season_idx, &season) in truth.seasons.iter().enumerate() {
            let year_offset = f64::from(season - t0);
            let ha_value = ha.at(season_idx, year_offset);
            // Fresh strengths each season: team-seasons are independent.
            let thetas: Vec<f64> = (0..truth.n_teams)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    truth.zeta * z
                })
                .collect();
            for (a, b) in schedule(truth.n_teams, truth.games_per_team, &mut rng) {
                let p_a_hosts = if truth.host_bias > 0.0 {
                    (0.5 + truth.host_bias * (thetas[a] - thetas[b])).clamp(0.05, 0.95)
                } else {
                    0.5
                };
                let (home, away) = if rng.random::<f64>() < p_a_hosts {
                    (a, b)
                } else {
                    (b, a)
                };
                let neutral = rng.random::<f64>() < truth.neutral_fraction;
                let h = if neutral { 0.0 } else { 1.0 };
                let mu = thetas[home] - thetas[away] + h * ha_value;
                let z: f64 = rng.sample(StandardNormal);
                let differential = (mu + truth.sigma * z).round() as i64;
                let (home_score, away_score) = if differential >= 0 {
                    (differential as u32, 0)
                } else {
                    (0, (-differential) as u32)
                };
                records.push(GameRecord {
                    league_id: league_id.clone(),
                    season,
                    home_team: format!("T{home:03}"),
                    away_team: format!("T{away:03}"),
                    home_score,
                    away_score,
                    neutral,
                });
            }
        }
    }

    Ok((
        records,
        TruthEcho {
            config: truth.clone(),
            leagues,
        },
    ))
}
