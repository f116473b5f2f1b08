//! Exact log-posterior and gradient in unconstrained space.
//!
//! Scale parameters are sampled on the log scale, so the density picks up
//! the exp-transform Jacobian (the unconstrained coordinate itself) for
//! each free scale. Everything here is pure and thread-safe.

use crate::error::{Error, Result};
use crate::math::{half_normal_logpdf, normal_logpdf, LN_2PI};
use crate::sampler::PosteriorDraws;

use super::layout::{HaParams, ParameterLayout, Scale, Transform};
use super::ModelContext;

/// Per-league HA term resolved for one parameter vector.
#[derive(Clone, Copy)]
enum HaEval {
    Const(f64),
    Lin { b0: f64, b1: f64 },
    Tv { offset: usize },
}

impl HaEval {
    #[inline]
    fn at(&self, x: &[f64], year_offset: f64, season_pos: usize) -> f64 {
        match self {
            HaEval::Const(a) => *a,
            HaEval::Lin { b0, b1 } => b0 + b1 * year_offset,
            HaEval::Tv { offset } => x[offset + season_pos],
        }
    }
}

fn ha_eval(ha: &HaParams, x: &[f64]) -> HaEval {
    match ha {
        HaParams::Constant { alpha, .. } => HaEval::Const(x[*alpha]),
        HaParams::Linear { beta0, beta1, .. } | HaParams::HierLinear { beta0, beta1, .. } => {
            HaEval::Lin {
                b0: x[*beta0],
                b1: x[*beta1],
            }
        }
        HaParams::TimeVarying { gamma_offset, .. } => HaEval::Tv {
            offset: *gamma_offset,
        },
    }
}

/// Fast path used by the sampler: no input validation, returns negative
/// infinity on numeric blow-ups.
pub(crate) fn logp_unchecked(ctx: &ModelContext, x: &[f64]) -> f64 {
    let layout = ctx.layout();
    let hyper = ctx.spec().hyper_scale;
    let mut lp = 0.0;

    let n_leagues = layout.leagues.len();
    let mut sigma = vec![0.0; n_leagues];
    let mut inv_s2 = vec![0.0; n_leagues];
    let mut ha = Vec::with_capacity(n_leagues);
    for (k, lg) in layout.leagues.iter().enumerate() {
        let s = lg.sigma.value(x);
        sigma[k] = s;
        inv_s2[k] = 1.0 / (s * s);
        ha.push(ha_eval(&lg.ha, x));
    }

    // Likelihood.
    let mut ss = vec![0.0; n_leagues];
    let mut count = vec![0usize; n_leagues];
    for g in ctx.games() {
        let mu = x[g.home] - x[g.away] + g.h * ha[g.league].at(x, g.year_offset, g.season_pos);
        let r = g.y - mu;
        ss[g.league] += r * r;
        count[g.league] += 1;
    }
    for k in 0..n_leagues {
        lp += count[k] as f64 * (-0.5 * LN_2PI - sigma[k].ln()) - 0.5 * ss[k] * inv_s2[k];
    }

    // Priors.
    for (k, lg) in layout.leagues.iter().enumerate() {
        let zeta = lg.zeta.value(x);
        let theta = &x[lg.theta_offset..lg.theta_offset + lg.theta_len];
        let ss_theta: f64 = theta.iter().map(|t| t * t).sum();
        lp += lg.theta_len as f64 * (-0.5 * LN_2PI - zeta.ln())
            - 0.5 * ss_theta / (zeta * zeta);
        lp += scale_prior(&lg.zeta, zeta, x, hyper);
        lp += scale_prior(&lg.sigma, sigma[k], x, hyper);

        match &lg.ha {
            HaParams::Constant { alpha, eta } => {
                let e = eta.value(x);
                lp += normal_logpdf(x[*alpha], 0.0, e);
                lp += scale_prior(eta, e, x, hyper);
            }
            HaParams::Linear {
                beta0,
                beta1,
                lambda0,
                lambda1,
            } => {
                let l0 = lambda0.value(x);
                let l1 = lambda1.value(x);
                lp += normal_logpdf(x[*beta0], 0.0, l0);
                lp += normal_logpdf(x[*beta1], 0.0, l1);
                lp += scale_prior(lambda0, l0, x, hyper);
                lp += scale_prior(lambda1, l1, x, hyper);
            }
            HaParams::HierLinear {
                beta0,
                beta1,
                lambda0,
            } => {
                let shared = layout.shared.expect("hier layout has shared blocks");
                let l0 = lambda0.value(x);
                let l1 = x[shared.lambda1].exp();
                lp += normal_logpdf(x[*beta0], 0.0, l0);
                lp += normal_logpdf(x[*beta1], x[shared.beta1_star], l1);
                lp += scale_prior(lambda0, l0, x, hyper);
            }
            HaParams::TimeVarying {
                gamma_offset,
                gamma_len,
                tau,
            } => {
                let t = tau.value(x);
                for g in &x[*gamma_offset..*gamma_offset + *gamma_len] {
                    lp += normal_logpdf(*g, 0.0, t);
                }
                lp += scale_prior(tau, t, x, hyper);
            }
        }
    }
    if let Some(shared) = layout.shared {
        let l1 = x[shared.lambda1].exp();
        lp += normal_logpdf(x[shared.beta1_star], 0.0, hyper);
        lp += half_normal_logpdf(l1, hyper) + x[shared.lambda1];
    }

    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Half-normal log prior at the constrained value plus the exp-transform
/// Jacobian, for free scales only; fixed scales contribute a constant.
#[inline]
fn scale_prior(scale: &Scale, value: f64, x: &[f64], hyper: f64) -> f64 {
    match scale {
        Scale::Free(i) => half_normal_logpdf(value, hyper) + x[*i],
        Scale::Fixed(_) => 0.0,
    }
}

/// Gradient fast path. Writes into `grad` (zeroed here) and returns the log
/// posterior; if the return is not finite the gradient content is
/// unspecified.
pub(crate) fn logp_grad_unchecked(ctx: &ModelContext, x: &[f64], grad: &mut [f64]) -> f64 {
    let layout = ctx.layout();
    let hyper = ctx.spec().hyper_scale;
    grad.fill(0.0);
    let mut lp = 0.0;

    let n_leagues = layout.leagues.len();
    let mut sigma = vec![0.0; n_leagues];
    let mut inv_s2 = vec![0.0; n_leagues];
    let mut ha = Vec::with_capacity(n_leagues);
    for (k, lg) in layout.leagues.iter().enumerate() {
        let s = lg.sigma.value(x);
        sigma[k] = s;
        inv_s2[k] = 1.0 / (s * s);
        ha.push(ha_eval(&lg.ha, x));
    }

    let mut ss = vec![0.0; n_leagues];
    let mut count = vec![0usize; n_leagues];
    for g in ctx.games() {
        let k = g.league;
        let mu = x[g.home] - x[g.away] + g.h * ha[k].at(x, g.year_offset, g.season_pos);
        let r = g.y - mu;
        ss[k] += r * r;
        count[k] += 1;
        let c = r * inv_s2[k];
        grad[g.home] += c;
        grad[g.away] -= c;
        if g.h != 0.0 {
            match &layout.leagues[k].ha {
                HaParams::Constant { alpha, .. } => grad[*alpha] += c * g.h,
                HaParams::Linear { beta0, beta1, .. }
                | HaParams::HierLinear { beta0, beta1, .. } => {
                    grad[*beta0] += c * g.h;
                    grad[*beta1] += c * g.h * g.year_offset;
                }
                HaParams::TimeVarying { gamma_offset, .. } => {
                    grad[gamma_offset + g.season_pos] += c * g.h;
                }
            }
        }
    }
    for k in 0..n_leagues {
        lp += count[k] as f64 * (-0.5 * LN_2PI - sigma[k].ln()) - 0.5 * ss[k] * inv_s2[k];
        if let Scale::Free(i) = layout.leagues[k].sigma {
            grad[i] += ss[k] * inv_s2[k] - count[k] as f64;
        }
    }

    for (k, lg) in layout.leagues.iter().enumerate() {
        let zeta = lg.zeta.value(x);
        let inv_z2 = 1.0 / (zeta * zeta);
        let theta = lg.theta_offset..lg.theta_offset + lg.theta_len;
        let mut ss_theta = 0.0;
        for i in theta {
            ss_theta += x[i] * x[i];
            grad[i] -= x[i] * inv_z2;
        }
        lp += lg.theta_len as f64 * (-0.5 * LN_2PI - zeta.ln()) - 0.5 * ss_theta * inv_z2;
        if let Scale::Free(i) = lg.zeta {
            grad[i] += ss_theta * inv_z2 - lg.theta_len as f64;
        }
        add_scale_prior(&lg.zeta, zeta, x, hyper, &mut lp, grad);
        add_scale_prior(&lg.sigma, sigma[k], x, hyper, &mut lp, grad);

        match &lg.ha {
            HaParams::Constant { alpha, eta } => {
                let e = eta.value(x);
                let inv_e2 = 1.0 / (e * e);
                let a = x[*alpha];
                lp += normal_logpdf(a, 0.0, e);
                grad[*alpha] -= a * inv_e2;
                if let Scale::Free(i) = eta {
                    grad[*i] += a * a * inv_e2 - 1.0;
                }
                add_scale_prior(eta, e, x, hyper, &mut lp, grad);
            }
            HaParams::Linear {
                beta0,
                beta1,
                lambda0,
                lambda1,
            } => {
                for (loc, lam) in [(beta0, lambda0), (beta1, lambda1)] {
                    let l = lam.value(x);
                    let inv_l2 = 1.0 / (l * l);
                    let b = x[*loc];
                    lp += normal_logpdf(b, 0.0, l);
                    grad[*loc] -= b * inv_l2;
                    if let Scale::Free(i) = lam {
                        grad[*i] += b * b * inv_l2 - 1.0;
                    }
                    add_scale_prior(lam, l, x, hyper, &mut lp, grad);
                }
            }
            HaParams::HierLinear {
                beta0,
                beta1,
                lambda0,
            } => {
                let shared = layout.shared.expect("hier layout has shared blocks");
                let l0 = lambda0.value(x);
                let inv_l02 = 1.0 / (l0 * l0);
                let b0 = x[*beta0];
                lp += normal_logpdf(b0, 0.0, l0);
                grad[*beta0] -= b0 * inv_l02;
                if let Scale::Free(i) = lambda0 {
                    grad[*i] += b0 * b0 * inv_l02 - 1.0;
                }
                add_scale_prior(lambda0, l0, x, hyper, &mut lp, grad);

                let star = x[shared.beta1_star];
                let l1 = x[shared.lambda1].exp();
                let inv_l12 = 1.0 / (l1 * l1);
                let d = x[*beta1] - star;
                lp += normal_logpdf(x[*beta1], star, l1);
                grad[*beta1] -= d * inv_l12;
                grad[shared.beta1_star] += d * inv_l12;
                grad[shared.lambda1] += d * d * inv_l12 - 1.0;
            }
            HaParams::TimeVarying {
                gamma_offset,
                gamma_len,
                tau,
            } => {
                let t = tau.value(x);
                let inv_t2 = 1.0 / (t * t);
                let mut ss_gamma = 0.0;
                for i in *gamma_offset..*gamma_offset + *gamma_len {
                    ss_gamma += x[i] * x[i];
                    grad[i] -= x[i] * inv_t2;
                }
                lp += *gamma_len as f64 * (-0.5 * LN_2PI - t.ln()) - 0.5 * ss_gamma * inv_t2;
                if let Scale::Free(i) = tau {
                    grad[*i] += ss_gamma * inv_t2 - *gamma_len as f64;
                }
                add_scale_prior(tau, t, x, hyper, &mut lp, grad);
            }
        }
    }

    if let Some(shared) = layout.shared {
        let star = x[shared.beta1_star];
        lp += normal_logpdf(star, 0.0, hyper);
        grad[shared.beta1_star] -= star / (hyper * hyper);
        let l1 = x[shared.lambda1].exp();
        lp += half_normal_logpdf(l1, hyper) + x[shared.lambda1];
        grad[shared.lambda1] += 1.0 - l1 * l1 / (hyper * hyper);
    }

    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

#[inline]
fn add_scale_prior(
    scale: &Scale,
    value: f64,
    x: &[f64],
    hyper: f64,
    lp: &mut f64,
    grad: &mut [f64],
) {
    if let Scale::Free(i) = scale {
        *lp += half_normal_logpdf(value, hyper) + x[*i];
        grad[*i] += 1.0 - value * value / (hyper * hyper);
    }
}

fn validate(ctx: &ModelContext, x: &[f64]) -> Result<()> {
    if x.len() != ctx.dim() {
        return Err(Error::DimensionMismatch {
            expected: ctx.dim(),
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    Ok(())
}

/// Log posterior density (up to a constant) at an unconstrained vector.
pub fn log_posterior(ctx: &ModelContext, x: &[f64]) -> Result<f64> {
    validate(ctx, x)?;
    Ok(logp_unchecked(ctx, x))
}

/// Analytic gradient of [`log_posterior`] with respect to every
/// unconstrained coordinate.
pub fn grad_log_posterior(ctx: &ModelContext, x: &[f64]) -> Result<Vec<f64>> {
    validate(ctx, x)?;
    let mut grad = vec![0.0; x.len()];
    logp_grad_unchecked(ctx, x, &mut grad);
    Ok(grad)
}

/// Expected differential for one game given constrained parameter values in
/// layout order. Location parameters are identical in both spaces, so an
/// unconstrained vector gives the same answer.
pub fn mu_for_game(ctx: &ModelContext, params: &[f64], game: usize) -> f64 {
    assert_eq!(params.len(), ctx.dim(), "parameter vector length");
    let g = &ctx.games()[game];
    let ha = ha_eval(&ctx.layout().leagues[g.league].ha, params);
    params[g.home] - params[g.away] + g.h * ha.at(params, g.year_offset, g.season_pos)
}

/// Map an unconstrained vector to constrained values (exp on scale blocks).
pub fn constrain(layout: &ParameterLayout, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), layout.dim, "parameter vector length");
    let mut out = x.to_vec();
    for b in &layout.blocks {
        if b.transform == Transform::Exp {
            for v in &mut out[b.offset..b.offset + b.len] {
                *v = v.exp();
            }
        }
    }
    out
}

/// Inverse of [`constrain`]; scale entries must be strictly positive.
pub fn unconstrain(layout: &ParameterLayout, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != layout.dim {
        return Err(Error::DimensionMismatch {
            expected: layout.dim,
            got: values.len(),
        });
    }
    let mut out = values.to_vec();
    for b in &layout.blocks {
        if b.transform == Transform::Exp {
            for (i, v) in out[b.offset..b.offset + b.len].iter_mut().enumerate() {
                if *v <= 0.0 {
                    return Err(Error::NonPositiveScale {
                        name: layout.labels[b.offset + i].clone(),
                        value: *v,
                    });
                }
                *v = v.ln();
            }
        }
    }
    Ok(out)
}

/// Pointwise log-likelihood matrix: entry (g, s) is the Normal log density
/// of game g's differential under draw s. Rows follow context game order;
/// columns follow draw order with chains concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikMatrix {
    pub n: usize,
    pub m: usize,
    data: Vec<f64>,
}

impl LoglikMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::MismatchedLoglik("ragged rows".to_string()));
        }
        Ok(Self {
            n,
            m,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn entry(&self, i: usize, s: usize) -> f64 {
        self.data[i * self.m + s]
    }
}

/// Evaluate the pointwise log-likelihood of every game under every retained
/// draw.
pub fn pointwise_loglik(ctx: &ModelContext, draws: &PosteriorDraws) -> Result<LoglikMatrix> {
    let layout = ctx.layout();
    if draws.dim != layout.dim {
        return Err(Error::DimensionMismatch {
            expected: layout.dim,
            got: draws.dim,
        });
    }
    let n = ctx.num_games();
    let m = draws.total_draws();
    let mut data = vec![0.0; n * m];
    let n_leagues = layout.leagues.len();

    for (s, x) in draws.iter_draws().enumerate() {
        let mut log_sigma = vec![0.0; n_leagues];
        let mut inv_s2 = vec![0.0; n_leagues];
        let mut ha = Vec::with_capacity(n_leagues);
        for (k, lg) in layout.leagues.iter().enumerate() {
            let sig = lg.sigma.value(x);
            log_sigma[k] = sig.ln();
            inv_s2[k] = 1.0 / (sig * sig);
            ha.push(ha_eval(&lg.ha, x));
        }
        for (g_idx, g) in ctx.games().iter().enumerate() {
            let mu =
                x[g.home] - x[g.away] + g.h * ha[g.league].at(x, g.year_offset, g.season_pos);
            let r = g.y - mu;
            data[g_idx * m + s] =
                -0.5 * LN_2PI - log_sigma[g.league] - 0.5 * r * r * inv_s2[g.league];
        }
    }
    Ok(LoglikMatrix { n, m, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::ingest::{build_dataset, GameRecord};
    use crate::model::{Family, FixedScales, ModelSpec};
    use super::super::layout::build_layout;
    use crate::sampler::{ChainDraws, DrawStats, PosteriorDraws};

    fn game(league: &str, season: i32, home: &str, away: &str, hs: u32, as_: u32, neutral: bool) -> GameRecord {
        GameRecord {
            league_id: league.into(),
            season,
            home_team: home.into(),
            away_team: away.into(),
            home_score: hs,
            away_score: as_,
            neutral,
        }
    }

    fn random_league(league: &str, n_teams: usize, seasons: &[i32], games_per_season: usize, rng: &mut StdRng) -> Vec<GameRecord> {
        let mut records = Vec::new();
        for &season in seasons {
            for g in 0..games_per_season {
                let a = rng.random_range(0..n_teams);
                let mut b = rng.random_range(0..n_teams);
                while b == a {
                    b = rng.random_range(0..n_teams);
                }
                records.push(game(
                    league,
                    season,
                    &format!("T{a}"),
                    &format!("T{b}"),
                    rng.random_range(0..45),
                    rng.random_range(0..45),
                    g % 5 == 4,
                ));
            }
        }
        records
    }

    fn ctx_for(family: Family, rng: &mut StdRng) -> ModelContext {
        let leagues: Vec<String> = match family {
            Family::HierarchicalLinear => vec!["A".into(), "B".into(), "C".into()],
            _ => vec!["A".into()],
        };
        let datasets = leagues
            .iter()
            .map(|l| {
                let records = random_league(l, 8, &[2010, 2011, 2013], 25, rng);
                build_dataset(&records, l, None).unwrap()
            })
            .collect();
        ModelContext::new(ModelSpec::new(family, leagues), datasets).unwrap()
    }

    fn fd_grad(ctx: &ModelContext, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                xp[i] += h;
                let mut xm = x.to_vec();
                xm[i] -= h;
                (log_posterior(ctx, &xp).unwrap() - log_posterior(ctx, &xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn closed_form_value_at_zero_vector() {
        // One tied home game, all unconstrained coordinates zero: four
        // standard-normal log densities (likelihood, two thetas, alpha)
        // plus three half-normal(5) log densities at 1 and zero Jacobians.
        let records = vec![game("X", 2010, "H", "V", 3, 3, false)];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        assert_eq!(ctx.dim(), 6);
        let x = vec![0.0; 6];
        let lp = log_posterior(&ctx, &x).unwrap();

        let std_term = -0.5 * LN_2PI;
        let half_term = std::f64::consts::LN_2 - 5.0f64.ln() + std_term - 1.0 / 50.0;
        let oracle = 4.0 * std_term + 3.0 * half_term;
        assert_relative_eq!(lp, oracle, epsilon = 1e-12);
        assert_relative_eq!(lp, -9.241441928055174, epsilon = 1e-9);
    }

    #[test]
    fn mu_examples() {
        // Constant: equal strengths, home game, alpha = 1.73.
        let records = vec![
            game("X", 2010, "H", "V", 3, 3, false),
            game("X", 2010, "V", "H", 3, 3, true),
        ];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        let mut params = vec![0.0; ctx.dim()];
        let alpha = ctx.layout().block("alpha[X]").unwrap().offset;
        params[alpha] = 1.73;
        assert_relative_eq!(mu_for_game(&ctx, &params, 0), 1.73, epsilon = 1e-15);
        // neutral game: symmetry gives zero whatever alpha is
        assert_relative_eq!(mu_for_game(&ctx, &params, 1), 0.0, epsilon = 1e-15);

        // Linear: theta_home=3, theta_away=1, beta0=2, beta1=-0.1, dt=10.
        let records = vec![
            game("Y", 2010, "H", "V", 3, 3, false),
            game("Y", 2020, "H", "V", 3, 3, false),
        ];
        let ds = build_dataset(&records, "Y", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Linear, vec!["Y".into()]), vec![ds])
            .unwrap();
        let layout = ctx.layout().clone();
        let mut params = vec![0.0; ctx.dim()];
        let h2020 = layout.block("theta[Y]").unwrap().offset
            + ctx.datasets()[0].team_season_id("H", 2020).unwrap();
        let v2020 = layout.block("theta[Y]").unwrap().offset
            + ctx.datasets()[0].team_season_id("V", 2020).unwrap();
        params[h2020] = 3.0;
        params[v2020] = 1.0;
        params[layout.block("beta0[Y]").unwrap().offset] = 2.0;
        params[layout.block("beta1[Y]").unwrap().offset] = -0.1;
        assert_relative_eq!(mu_for_game(&ctx, &params, 1), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn theta_shift_changes_only_the_theta_prior() {
        let mut rng = StdRng::seed_from_u64(4);
        let ctx = ctx_for(Family::Linear, &mut rng);
        let layout = ctx.layout().clone();
        let x: Vec<f64> = (0..ctx.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let theta = layout.block("theta[A]").unwrap();
        let c = 0.73;
        let mut shifted = x.clone();
        for i in theta.offset..theta.offset + theta.len {
            shifted[i] += c;
        }
        let zeta = shifted[layout.block("zeta[A]").unwrap().offset].exp();
        let prior = |v: &[f64]| -> f64 {
            v[theta.offset..theta.offset + theta.len]
                .iter()
                .map(|t| crate::math::normal_logpdf(*t, 0.0, zeta))
                .sum()
        };
        let lp_diff = log_posterior(&ctx, &shifted).unwrap() - log_posterior(&ctx, &x).unwrap();
        let prior_diff = prior(&shifted) - prior(&x);
        assert_relative_eq!(lp_diff, prior_diff, epsilon = 1e-8);
    }

    #[test]
    fn theta_shift_leaves_loglik_matrix_unchanged() {
        let mut rng = StdRng::seed_from_u64(14);
        let ctx = ctx_for(Family::TimeVarying, &mut rng);
        let layout = ctx.layout().clone();
        let base: Vec<f64> = (0..ctx.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let theta = layout.block("theta[A]").unwrap();
        let mut shifted = base.clone();
        for i in theta.offset..theta.offset + theta.len {
            shifted[i] += 1.3;
        }
        let stats = DrawStats {
            accept_stat: 1.0,
            divergent: false,
            tree_depth: 0,
            energy: 0.0,
            energy_error: 0.0,
        };
        let draws = |v: Vec<f64>| PosteriorDraws {
            chains: vec![ChainDraws::new(v, vec![stats], ctx.dim())],
            dim: ctx.dim(),
            kept_per_chain: 1,
        };
        let a = pointwise_loglik(&ctx, &draws(base)).unwrap();
        let b = pointwise_loglik(&ctx, &draws(shifted)).unwrap();
        for i in 0..a.n {
            assert_relative_eq!(a.entry(i, 0), b.entry(i, 0), epsilon = 1e-9);
        }
    }

    #[test]
    fn density_decreases_as_residual_grows() {
        let records = vec![game("X", 2010, "H", "V", 10, 3, false)];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        let alpha = ctx.layout().block("alpha[X]").unwrap().offset;
        // y = +7; pushing alpha away from 7 in either direction must only
        // lower the likelihood term. Compare prior-corrected values.
        let lp_at = |a: f64| {
            let mut x = vec![0.0; ctx.dim()];
            x[alpha] = a;
            // remove alpha's own prior so only the residual effect remains
            log_posterior(&ctx, &x).unwrap() - crate::math::normal_logpdf(a, 0.0, 1.0)
        };
        let at_mode = lp_at(7.0);
        assert!(lp_at(4.0) < at_mode);
        assert!(lp_at(10.5) < at_mode);
        assert!(lp_at(0.0) < lp_at(4.0));
    }

    #[test]
    fn gradient_matches_finite_differences_all_families() {
        let mut rng = StdRng::seed_from_u64(8);
        for family in [
            Family::Constant,
            Family::Linear,
            Family::TimeVarying,
            Family::HierarchicalLinear,
        ] {
            let ctx = ctx_for(family, &mut rng);
            for _ in 0..4 {
                let x: Vec<f64> = (0..ctx.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let analytic = grad_log_posterior(&ctx, &x).unwrap();
                let numeric = fd_grad(&ctx, &x, 1e-5);
                for (i, (a, f)) in analytic.iter().zip(&numeric).enumerate() {
                    let rel = (a - f).abs() / a.abs().max(f.abs()).max(1.0);
                    assert!(
                        rel < 1e-5,
                        "family {:?} coord {i} ({}): analytic {a} vs fd {f}",
                        family,
                        ctx.layout().labels[i]
                    );
                }
            }
        }
    }

    #[test]
    fn fixed_scale_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(23);
        let records = random_league("A", 6, &[2010, 2011], 20, &mut rng);
        let ds = build_dataset(&records, "A", None).unwrap();
        let mut spec = ModelSpec::new(Family::Constant, vec!["A".into()]);
        spec.fixed_scales = Some(FixedScales {
            zeta: 6.0,
            sigma: 13.0,
            ha_scales: vec![5.0],
        });
        let ctx = ModelContext::new(spec, vec![ds]).unwrap();
        let x: Vec<f64> = (0..ctx.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = grad_log_posterior(&ctx, &x).unwrap();
        let numeric = fd_grad(&ctx, &x, 1e-5);
        for (a, f) in analytic.iter().zip(&numeric) {
            assert!((a - f).abs() / a.abs().max(f.abs()).max(1.0) < 1e-5);
        }
    }

    #[test]
    fn neutral_games_leave_ha_gradient_to_the_prior() {
        // All games neutral: HA blocks see only their priors.
        let records = vec![
            game("X", 2010, "H", "V", 20, 3, true),
            game("X", 2010, "V", "H", 0, 14, true),
        ];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        let alpha = ctx.layout().block("alpha[X]").unwrap().offset;
        let mut x = vec![0.0; ctx.dim()];
        x[alpha] = 1.2;
        let grad = grad_log_posterior(&ctx, &x).unwrap();
        // prior gradient: -alpha / eta^2 with eta = 1
        assert_relative_eq!(grad[alpha], -1.2, epsilon = 1e-12);
    }

    #[test]
    fn theta_gradient_is_scaled_residual_for_neutral_games() {
        let records = vec![game("X", 2010, "H", "V", 10, 3, true)];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        let home = ctx.layout().block("theta[X]").unwrap().offset
            + ctx.datasets()[0].team_season_id("H", 2010).unwrap();
        let x = vec![0.0; ctx.dim()];
        let grad = grad_log_posterior(&ctx, &x).unwrap();
        // residual (y - mu)/sigma^2 = 7 with sigma = 1; theta prior adds 0.
        assert_relative_eq!(grad[home], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn pointwise_single_draw_closed_form() {
        let records = vec![game("X", 2010, "H", "V", 3, 3, false)];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        let stats = DrawStats {
            accept_stat: 1.0,
            divergent: false,
            tree_depth: 0,
            energy: 0.0,
            energy_error: 0.0,
        };
        let draws = PosteriorDraws {
            chains: vec![ChainDraws::new(vec![0.0; ctx.dim()], vec![stats], ctx.dim())],
            dim: ctx.dim(),
            kept_per_chain: 1,
        };
        let ll = pointwise_loglik(&ctx, &draws).unwrap();
        assert_eq!((ll.n, ll.m), (1, 1));
        assert_relative_eq!(ll.entry(0, 0), -0.918_938_533_204_672_7, epsilon = 1e-14);
    }

    #[test]
    fn loglik_columns_match_independent_per_game_sum() {
        let mut rng = StdRng::seed_from_u64(10);
        let ctx = ctx_for(Family::Linear, &mut rng);
        let x: Vec<f64> = (0..ctx.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let stats = DrawStats {
            accept_stat: 1.0,
            divergent: false,
            tree_depth: 0,
            energy: 0.0,
            energy_error: 0.0,
        };
        let draws = PosteriorDraws {
            chains: vec![ChainDraws::new(x.clone(), vec![stats], ctx.dim())],
            dim: ctx.dim(),
            kept_per_chain: 1,
        };
        let ll = pointwise_loglik(&ctx, &draws).unwrap();
        assert_eq!(ll.n, ctx.num_games());
        let sigma = x[ctx.layout().block("sigma[A]").unwrap().offset].exp();
        for (i, g) in ctx.games().iter().enumerate() {
            let expected =
                crate::math::normal_logpdf(g.y, mu_for_game(&ctx, &x, i), sigma);
            assert_relative_eq!(ll.entry(i, 0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let records = vec![game("X", 2010, "H", "V", 3, 3, false)];
        let ds = build_dataset(&records, "X", None).unwrap();
        let ctx = ModelContext::new(ModelSpec::new(Family::Constant, vec!["X".into()]), vec![ds])
            .unwrap();
        assert!(matches!(
            log_posterior(&ctx, &[0.0; 3]),
            Err(crate::error::Error::DimensionMismatch { expected: 6, got: 3 })
        ));
        let mut x = vec![0.0; 6];
        x[2] = f64::NAN;
        assert!(matches!(
            log_posterior(&ctx, &x),
            Err(crate::error::Error::NonFiniteInput(2))
        ));
        assert!(grad_log_posterior(&ctx, &x).is_err());
    }

    #[test]
    fn unconstrained_zero_maps_to_unit_scale_and_zero_rejects() {
        let records = vec![game("X", 2010, "H", "V", 3, 3, false)];
        let ds = build_dataset(&records, "X", None).unwrap();
        let layout = build_layout(
            &ModelSpec::new(Family::Constant, vec!["X".into()]),
            std::slice::from_ref(&ds),
        )
        .unwrap();
        let constrained = constrain(&layout, &vec![0.0; layout.dim]);
        let sigma = layout.block("sigma[X]").unwrap().offset;
        assert_eq!(constrained[sigma], 1.0);

        let mut values = constrained;
        values[sigma] = 0.0;
        assert!(matches!(
            unconstrain(&layout, &values),
            Err(crate::error::Error::NonPositiveScale { .. })
        ));
    }

    proptest! {
        #[test]
        fn constrain_round_trip(values in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let records = vec![game("X", 2010, "H", "V", 3, 3, false)];
            let ds = build_dataset(&records, "X", None).unwrap();
            let layout = build_layout(
                &ModelSpec::new(Family::Constant, vec!["X".into()]),
                std::slice::from_ref(&ds),
            )
            .unwrap();
            let x: Vec<f64> = values;
            let back = unconstrain(&layout, &constrain(&layout, &x)).unwrap();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn log_posterior_is_finite_for_finite_inputs(values in proptest::collection::vec(-30.0f64..30.0, 6)) {
            let records = vec![game("X", 2010, "H", "V", 10, 3, false)];
            let ds = build_dataset(&records, "X", None).unwrap();
            let ctx = ModelContext::new(
                ModelSpec::new(Family::Constant, vec!["X".into()]),
                vec![ds],
            ).unwrap();
            let lp = log_posterior(&ctx, &values).unwrap();
            prop_assert!(lp.is_finite(), "lp = {lp} at {values:?}");
        }
    }
}
