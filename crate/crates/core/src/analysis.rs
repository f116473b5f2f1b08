//! Posterior summaries: HA trajectories, probability of decline, credible
//! intervals, cross-league standardization, and hierarchical shrinkage
//! comparison.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::math::{mean, quantile_sorted, sample_variance};
use crate::model::Family;
use crate::sampler::FitResult;

/// HA summary for one season.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub season: i32,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Per-season posterior home advantage under one fit.
#[derive(Debug, Clone)]
pub struct HaTrajectory {
    pub league: String,
    /// Family-specific definition used for the per-season values.
    pub estimator: String,
    pub points: Vec<TrajectoryPoint>,
}

/// Linear-trend summary for one league.
#[derive(Debug, Clone)]
pub struct TrendSummary {
    pub league: String,
    pub beta1_mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub p_decline: f64,
    pub p_increase: f64,
    /// Draws exactly at zero, excluded from both tails.
    pub zero_draws: usize,
}

impl TrendSummary {
    /// One-line rendering in the reporting style, e.g.
    /// `beta1=-0.032 P(beta1<0)=0.857`.
    pub fn render(&self) -> String {
        format!(
            "beta1={:.3} P(beta1<0)={:.3}",
            self.beta1_mean, self.p_decline
        )
    }
}

/// Central credible interval from empirical quantiles with linear
/// interpolation between order statistics.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if !level.is_finite() || level <= 0.0 || level >= 1.0 {
        return Err(Error::InvalidLevel(level));
    }
    if draws.len() < 2 {
        return Err(Error::InvalidAnalysisInput(
            "credible interval needs at least 2 draws".into(),
        ));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&sorted, alpha),
        quantile_sorted(&sorted, 1.0 - alpha),
    ))
}

/// `mean (lo, hi)` with two decimals, the reporting convention for HA
/// values.
pub fn format_ha(mean: f64, lo: f64, hi: f64) -> String {
    format!("{mean:.2} ({lo:.2}, {hi:.2})")
}

fn league_index(fit: &FitResult, league: &str) -> Result<usize> {
    fit.leagues
        .iter()
        .position(|m| m.league_id == league)
        .ok_or_else(|| {
            Error::InvalidAnalysisInput(format!("league '{league}' not present in fit"))
        })
}

/// Per-draw HA values at one season under the fit's family.
fn ha_draws_at(fit: &FitResult, league: &str, season: i32) -> Result<Vec<f64>> {
    let idx = league_index(fit, league)?;
    let meta = &fit.leagues[idx];
    match fit.spec.family {
        Family::Constant => fit
            .scalar_block_draws(&format!("alpha[{league}]"))
            .ok_or_else(|| Error::InvalidAnalysisInput("missing alpha block".into())),
        Family::Linear | Family::HierarchicalLinear => {
            let b0 = fit
                .scalar_block_draws(&format!("beta0[{league}]"))
                .ok_or_else(|| Error::InvalidAnalysisInput("missing beta0 block".into()))?;
            let b1 = fit
                .scalar_block_draws(&format!("beta1[{league}]"))
                .ok_or_else(|| Error::InvalidAnalysisInput("missing beta1 block".into()))?;
            let dt = f64::from(season - meta.t0);
            Ok(b0.iter().zip(&b1).map(|(a, b)| a + b * dt).collect())
        }
        Family::TimeVarying => {
            let block = fit
                .layout
                .block(&format!("gamma[{league}]"))
                .ok_or_else(|| Error::InvalidAnalysisInput("missing gamma block".into()))?;
            let pos = meta
                .seasons
                .iter()
                .position(|s| *s == season)
                .ok_or(Error::UnknownSeason { season })?;
            Ok(fit.constrained_component(block.offset + pos))
        }
    }
}

/// Posterior mean and 95% interval of HA at every observed season.
pub fn ha_trajectory(fit: &FitResult, league: &str) -> Result<HaTrajectory> {
    let idx = league_index(fit, league)?;
    let seasons = fit.leagues[idx].seasons.clone();
    let mut points = Vec::with_capacity(seasons.len());
    for season in seasons {
        let draws = ha_draws_at(fit, league, season)?;
        let (lo, hi) = credible_interval(&draws, 0.95)?;
        points.push(TrajectoryPoint {
            season,
            mean: mean(&draws),
            lo,
            hi,
        });
    }
    Ok(HaTrajectory {
        league: league.to_string(),
        estimator: fit.spec.family.tag().to_string(),
        points,
    })
}

/// Posterior probability that the linear HA trend is negative (and its
/// complement), with the trend's mean and 95% interval.
pub fn prob_decline(fit: &FitResult, league: &str) -> Result<TrendSummary> {
    match fit.spec.family {
        Family::Linear | Family::HierarchicalLinear => {}
        other => {
            return Err(Error::InvalidAnalysisInput(format!(
                "probability of decline requires a linear-trend family, got '{}'",
                other.tag()
            )))
        }
    }
    league_index(fit, league)?;
    let draws = fit
        .scalar_block_draws(&format!("beta1[{league}]"))
        .ok_or_else(|| Error::InvalidAnalysisInput("missing beta1 block".into()))?;
    let negative = draws.iter().filter(|d| **d < 0.0).count();
    let positive = draws.iter().filter(|d| **d > 0.0).count();
    let zeros = draws.len() - negative - positive;
    let (lo, hi) = credible_interval(&draws, 0.95)?;
    Ok(TrendSummary {
        league: league.to_string(),
        beta1_mean: mean(&draws),
        lo,
        hi,
        p_decline: negative as f64 / draws.len() as f64,
        p_increase: positive as f64 / draws.len() as f64,
        zero_draws: zeros,
    })
}

/// Z-standardize posterior-mean HA values across league-seasons: subtract
/// the grand mean, divide by the grand sample standard deviation.
pub fn standardize_gamma(
    values: &BTreeMap<(String, i32), f64>,
) -> Result<BTreeMap<(String, i32), f64>> {
    if values.len() < 2 {
        return Err(Error::InvalidAnalysisInput(
            "standardization needs at least 2 entries".into(),
        ));
    }
    let raw: Vec<f64> = values.values().copied().collect();
    let center = mean(&raw);
    let sd = sample_variance(&raw).sqrt();
    if !sd.is_finite() || sd <= 0.0 {
        return Err(Error::InvalidAnalysisInput(
            "standardization undefined: zero variance".into(),
        ));
    }
    Ok(values
        .iter()
        .map(|(key, v)| (key.clone(), (v - center) / sd))
        .collect())
}

/// One league's row in the shrinkage comparison.
#[derive(Debug, Clone)]
pub struct ShrinkageRow {
    pub league: String,
    pub beta1_separate: f64,
    pub beta1_joint: f64,
    /// Signed movement of the joint estimate away from the separate one.
    pub shrinkage: f64,
    pub p_increase_separate: f64,
    pub p_increase_joint: f64,
}

/// Separate-vs-hierarchical trend comparison across leagues.
#[derive(Debug, Clone)]
pub struct ShrinkageReport {
    pub rows: Vec<ShrinkageRow>,
    pub beta1_star_mean: f64,
    pub lambda1_mean: f64,
}

impl ShrinkageReport {
    pub fn table(&self) -> String {
        let mut out = String::from(
            "league,beta1_separate,beta1_joint,beta1_star,lambda1,shrinkage,p_increase_separate,p_increase_joint\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3},{:.3}\n",
                r.league,
                r.beta1_separate,
                r.beta1_joint,
                self.beta1_star_mean,
                self.lambda1_mean,
                r.shrinkage,
                r.p_increase_separate,
                r.p_increase_joint
            ));
        }
        out
    }
}

/// Compare per-league linear fits against one joint hierarchical fit.
/// `separate` must contain exactly one Linear fit per league of the joint
/// fit.
pub fn shrinkage_report(separate: &[FitResult], joint: &FitResult) -> Result<ShrinkageReport> {
    if joint.spec.family != Family::HierarchicalLinear {
        return Err(Error::InvalidAnalysisInput(
            "joint fit must use the hierarchical linear family".into(),
        ));
    }
    let mut rows = Vec::new();
    for league in &joint.spec.leagues {
        let sep = separate
            .iter()
            .find(|f| f.spec.family == Family::Linear && f.spec.leagues == [league.clone()])
            .ok_or_else(|| {
                Error::InvalidAnalysisInput(format!(
                    "no separate linear fit supplied for league '{league}'"
                ))
            })?;
        let sep_trend = prob_decline(sep, league)?;
        let joint_trend = prob_decline(joint, league)?;
        rows.push(ShrinkageRow {
            league: league.clone(),
            beta1_separate: sep_trend.beta1_mean,
            beta1_joint: joint_trend.beta1_mean,
            shrinkage: joint_trend.beta1_mean - sep_trend.beta1_mean,
            p_increase_separate: sep_trend.p_increase,
            p_increase_joint: joint_trend.p_increase,
        });
    }
    let star = joint
        .scalar_block_draws("beta1_star")
        .ok_or_else(|| Error::InvalidAnalysisInput("missing beta1_star block".into()))?;
    let lambda1 = joint
        .scalar_block_draws("lambda1")
        .ok_or_else(|| Error::InvalidAnalysisInput("missing lambda1 block".into()))?;
    Ok(ShrinkageReport {
        rows,
        beta1_star_mean: mean(&star),
        lambda1_mean: mean(&lambda1),
    })
}

/// Trajectory table rows (`league,season,estimator,mean,lo,hi`), with
/// optional empirical per-season estimates appended as an `empirical`
/// series (no interval).
pub fn trajectory_table(
    trajectories: &[HaTrajectory],
    empirical: &[(String, i32, f64)],
) -> String {
    let mut out = String::from("league,season,estimator,mean,lo,hi\n");
    for t in trajectories {
        for p in &t.points {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4}\n",
                t.league, p.season, t.estimator, p.mean, p.lo, p.hi
            ));
        }
    }
    for (league, season, value) in empirical {
        out.push_str(&format!("{league},{season},empirical,{value:.4},,\n"));
    }
    out
}

/// Trend table rows (`league,beta1,lo,hi,p_decline,p_increase,zero_draws`).
pub fn trend_table(trends: &[TrendSummary]) -> String {
    let mut out = String::from("league,beta1,lo,hi,p_decline,p_increase,zero_draws\n");
    for t in trends {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.3},{:.3},{}\n",
            t.league, t.beta1_mean, t.lo, t.hi, t.p_decline, t.p_increase, t.zero_draws
        ));
    }
    out
}

/// Final-season HA rows in the reporting style
/// (`league,model,season,ha`), where `ha` is `mean (lo, hi)`.
pub fn ha_summary_table(fits: &[(String, &FitResult)]) -> Result<String> {
    let mut out = String::from("league,model,season,ha\n");
    for (tag, fit) in fits {
        for meta in &fit.leagues {
            let season = *meta.seasons.last().expect("non-empty seasons");
            let draws = ha_draws_at(fit, &meta.league_id, season)?;
            let (lo, hi) = credible_interval(&draws, 0.95)?;
            out.push_str(&format!(
                "{},{},{},\"{}\"\n",
                meta.league_id,
                tag,
                season,
                format_ha(mean(&draws), lo, hi)
            ));
        }
    }
    Ok(out)
}
