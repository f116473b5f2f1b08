//! Model comparison via Pareto-smoothed importance-sampling leave-one-out
//! cross-validation (PSIS-LOO): pointwise ELPD with tail-shape diagnostics,
//! and pairwise ELPD differences with standard errors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{logsumexp, sample_variance};
use crate::model::LoglikMatrix;

/// PSIS-LOO estimate for one fit.
#[derive(Debug, Clone)]
pub struct LooResult {
    pub elpd_loo: f64,
    pub se: f64,
    /// Per-game leave-one-out log predictive density estimates.
    pub pointwise: Vec<f64>,
    /// Fitted generalized-Pareto shape per game; NaN where smoothing fell
    /// back to plain importance sampling.
    pub pareto_k: Vec<f64>,
    /// Games where the tail could not be smoothed (too few or degenerate
    /// tail weights).
    pub unsmoothed: Vec<usize>,
}

impl LooResult {
    /// Games whose tail shape exceeds the reliability threshold.
    pub fn high_k(&self, threshold: f64) -> Vec<usize> {
        self.pareto_k
            .iter()
            .enumerate()
            .filter(|(_, k)| k.is_finite() && **k > threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Number of importance weights treated as the tail.
fn tail_length(m: usize) -> usize {
    let a = (0.2 * m as f64).ceil() as usize;
    let b = (3.0 * (m as f64).sqrt()).ceil() as usize;
    a.min(b)
}

/// Generalized Pareto quantile function with location zero.
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k == 0.0 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k) * (-p).ln_1p()).exp_m1() / k
    }
}

/// Fit a generalized Pareto distribution to positive excesses (ascending)
/// with the Zhang-Stephens profile posterior and the standard weak prior
/// adjustment on the shape.
pub fn fit_gpd_tail(sorted_excesses: &[f64]) -> Result<(f64, f64)> {
    let n = sorted_excesses.len();
    if n < 5 {
        return Err(Error::TooFewTailPoints(n));
    }
    let x = sorted_excesses;
    let x_max = x[n - 1];
    if x_max <= 0.0 || x_max - x[0] <= 0.0 {
        return Err(Error::DegenerateTail);
    }
    // Empirical-quantile location: the first-quartile order statistic.
    let x_star = x[(n as f64 / 4.0 + 0.5).floor() as usize - 1];
    if x_star <= 0.0 {
        return Err(Error::DegenerateTail);
    }

    let m_grid = 30 + (n as f64).sqrt().floor() as usize;
    let n_f = n as f64;
    let theta: Vec<f64> = (1..=m_grid)
        .map(|j| {
            1.0 / x_max + (1.0 - (m_grid as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * x_star)
        })
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k: f64 = x.iter().map(|&xi| (-t * xi).ln_1p()).sum::<f64>() / n_f;
            let l = n_f * ((-t / k).ln() - k - 1.0);
            if l.is_finite() {
                l
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let norm = logsumexp(&profile);
    let theta_hat: f64 = theta
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - norm).exp())
        .sum();

    let k_raw: f64 = x.iter().map(|&xi| (-theta_hat * xi).ln_1p()).sum::<f64>() / n_f;
    let sigma = -k_raw / theta_hat;
    let k = (k_raw * n_f + 5.0) / (n_f + 10.0);
    if !sigma.is_finite() || sigma <= 0.0 || !k.is_finite() {
        return Err(Error::DegenerateTail);
    }
    Ok((k, sigma))
}

struct PointwiseOutcome {
    elpd: f64,
    pareto_k: f64,
    smoothed: bool,
}

fn pointwise_elpd(loglik_row: &[f64], tail_len: usize) -> PointwiseOutcome {
    let m = loglik_row.len();
    // Raw log importance ratios, stabilized at zero max.
    let max_raw = loglik_row.iter().map(|l| -l).fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = loglik_row.iter().map(|l| -l - max_raw).collect();

    let mut pareto_k = f64::NAN;
    let mut smoothed = false;
    if tail_len >= 5 && tail_len < m {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| lw[a].partial_cmp(&lw[b]).unwrap());
        let cutoff = lw[order[m - tail_len - 1]];
        let exp_cutoff = cutoff.exp();
        let excesses: Vec<f64> = order[m - tail_len..]
            .iter()
            .map(|&i| lw[i].exp() - exp_cutoff)
            .collect();
        if let Ok((k, sigma)) = fit_gpd_tail(&excesses) {
            for (rank, &idx) in order[m - tail_len..].iter().enumerate() {
                let p = (rank as f64 + 0.5) / tail_len as f64;
                lw[idx] = (gpd_quantile(p, k, sigma) + exp_cutoff).ln();
            }
            pareto_k = k;
            smoothed = true;
        }
    }
    // Truncate at the raw maximum (zero after the shift).
    for w in &mut lw {
        *w = w.min(0.0);
    }

    let weighted: Vec<f64> = lw.iter().zip(loglik_row).map(|(w, l)| w + l).collect();
    PointwiseOutcome {
        elpd: logsumexp(&weighted) - logsumexp(&lw),
        pareto_k,
        smoothed,
    }
}

/// PSIS-LOO over an n x m pointwise log-likelihood matrix.
pub fn psis_loo(loglik: &LoglikMatrix) -> Result<LooResult> {
    if loglik.n == 0 || loglik.m == 0 {
        return Err(Error::MismatchedLoglik("empty log-likelihood matrix".into()));
    }
    for i in 0..loglik.n {
        if loglik.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::MismatchedLoglik(format!(
                "non-finite log-likelihood in row {i}"
            )));
        }
    }
    let tail_len = tail_length(loglik.m);
    let outcomes: Vec<PointwiseOutcome> = (0..loglik.n)
        .into_par_iter()
        .map(|i| pointwise_elpd(loglik.row(i), tail_len))
        .collect();

    let pointwise: Vec<f64> = outcomes.iter().map(|o| o.elpd).collect();
    let pareto_k: Vec<f64> = outcomes.iter().map(|o| o.pareto_k).collect();
    let unsmoothed: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.smoothed)
        .map(|(i, _)| i)
        .collect();
    let n = pointwise.len();
    let se = if n >= 2 {
        (n as f64 * sample_variance(&pointwise)).sqrt()
    } else {
        0.0
    };
    Ok(LooResult {
        elpd_loo: pointwise.iter().sum(),
        se,
        pointwise,
        pareto_k,
        unsmoothed,
    })
}

/// One model's row in the comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub tag: String,
    pub elpd_loo: f64,
    /// Difference to the best model's ELPD (0 for the best).
    pub delta_elpd: f64,
    /// Standard error of the pointwise ELPD difference (0 for the best).
    pub se: f64,
    /// |delta| / se, with 0/0 defined as 0.
    pub num_se: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct ElpdComparison {
    pub rows: Vec<ComparisonRow>,
}

impl ElpdComparison {
    pub fn best_tag(&self) -> &str {
        &self.rows.iter().find(|r| r.best).expect("one best row").tag
    }

    /// Delimited comparison table with the best model rendered as zeros and
    /// models more than four standard errors worse flagged.
    pub fn table(&self) -> String {
        let mut out = String::from("model,delta_elpd,se,num_se,best,over_4se\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.2},{:.2},{:.2},{},{}\n",
                r.tag,
                r.delta_elpd,
                r.se,
                r.num_se,
                r.best,
                !r.best && r.num_se > 4.0
            ));
        }
        out
    }
}

/// Pairwise ELPD comparison against the best model (ties break toward the
/// earlier tag).
pub fn compare(loos: &[(String, LooResult)]) -> Result<ElpdComparison> {
    if loos.is_empty() {
        return Err(Error::MismatchedLoglik("no models to compare".into()));
    }
    let n = loos[0].1.pointwise.len();
    if loos.iter().any(|(_, l)| l.pointwise.len() != n) {
        return Err(Error::MismatchedLoglik(
            "models were scored on different numbers of games".into(),
        ));
    }
    let best_idx = loos
        .iter()
        .enumerate()
        .max_by(|(ia, (_, a)), (ib, (_, b))| {
            a.elpd_loo
                .partial_cmp(&b.elpd_loo)
                .unwrap()
                .then(ib.cmp(ia)) // earlier index wins ties
        })
        .map(|(i, _)| i)
        .unwrap();
    let best = &loos[best_idx].1;

    let rows = loos
        .iter()
        .enumerate()
        .map(|(i, (tag, loo))| {
            let delta = loo.elpd_loo - best.elpd_loo;
            let (se, num_se) = if i == best_idx {
                (0.0, 0.0)
            } else {
                let diffs: Vec<f64> = loo
                    .pointwise
                    .iter()
                    .zip(&best.pointwise)
                    .map(|(a, b)| a - b)
                    .collect();
                let se = if n >= 2 {
                    (n as f64 * sample_variance(&diffs)).sqrt()
                } else {
                    0.0
                };
                let num_se = if se == 0.0 {
                    0.0
                } else {
                    delta.abs() / se
                };
                (se, num_se)
            };
            ComparisonRow {
                tag: tag.clone(),
                elpd_loo: loo.elpd_loo,
                delta_elpd: delta,
                se,
                num_se,
                best: i == best_idx,
            }
        })
        .collect();
    Ok(ElpdComparison { rows })
}
