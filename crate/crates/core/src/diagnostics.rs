//! Convergence and precision diagnostics: split R-hat and effective sample
//! size, summarized per parameter block the way the reference tables lay
//! them out (min/max R-hat, per-block ESS).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean, sample_variance};
use crate::model::{ParameterLayout, Transform};
use crate::sampler::PosteriorDraws;

/// Potential scale reduction on the sequences as given (no splitting).
///
/// With per-sequence length n: `W` is the mean within-sequence variance,
/// `B` is n times the variance of sequence means, and the statistic is
/// `sqrt(((n-1)/n * W + B/n) / W)`. All-constant sequences make this
/// undefined; NaN is returned for that case.
pub fn rhat(sequences: &[Vec<f64>]) -> Result<f64> {
    if sequences.len() < 2 {
        return Err(Error::InsufficientChains(
            "at least 2 sequences for R-hat".to_string(),
        ));
    }
    let n = sequences[0].len();
    if n < 2 || sequences.iter().any(|s| s.len() != n) {
        return Err(Error::InsufficientChains(
            "equal-length sequences of at least 2 draws".to_string(),
        ));
    }
    let n = n as f64;
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let w = mean(
        &sequences
            .iter()
            .map(|s| sample_variance(s))
            .collect::<Vec<_>>(),
    );
    let b = n * sample_variance(&means);
    if w <= 0.0 {
        return Ok(f64::NAN);
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

fn split_in_half(chain: &[f64]) -> (Vec<f64>, Vec<f64>) {
    // Odd length: drop the first element.
    let trimmed = if chain.len().is_multiple_of(2) {
        chain
    } else {
        &chain[1..]
    };
    let half = trimmed.len() / 2;
    (trimmed[..half].to_vec(), trimmed[half..].to_vec())
}

/// Split R-hat: each chain is halved and the 2C half-chains feed [`rhat`].
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InsufficientChains(
            "at least 2 chains for split R-hat".to_string(),
        ));
    }
    if chains.iter().any(|c| c.len() < 4) {
        return Err(Error::InsufficientChains(
            "chains of at least 4 draws".to_string(),
        ));
    }
    let mut halves = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        let (a, b) = split_in_half(chain);
        halves.push(a);
        halves.push(b);
    }
    rhat(&halves)
}

/// Effective sample size from the combined-chain variogram estimator with
/// Geyer initial-monotone-positive-pair truncation.
///
/// Autocorrelations are `rho_t = 1 - V_t / (2 var_plus)` where `V_t` is the
/// lag-t variogram pooled across chains and `var_plus` the multi-chain
/// variance estimate. Super-efficient (> C*N) results are returned as
/// computed; the integrated time is floored at `1/log10(C*N)` to keep the
/// estimator bounded when chains are strongly antithetic.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InsufficientChains(
            "at least 2 chains for ESS".to_string(),
        ));
    }
    if chains.iter().any(|c| c.len() < 4) {
        return Err(Error::InsufficientChains(
            "chains of at least 4 draws".to_string(),
        ));
    }
    // Match split R-hat's even-length convention.
    let chains: Vec<&[f64]> = chains
        .iter()
        .map(|c| {
            if c.len() % 2 == 0 {
                c.as_slice()
            } else {
                &c[1..]
            }
        })
        .collect();
    let c = chains.len() as f64;
    let n = chains[0].len();
    let n_f = n as f64;

    let means: Vec<f64> = chains.iter().map(|s| mean(s)).collect();
    let w = mean(
        &chains
            .iter()
            .map(|s| sample_variance(s))
            .collect::<Vec<_>>(),
    );
    let b = n_f * sample_variance(&means);
    if w <= 0.0 {
        return Ok(f64::NAN);
    }
    let var_plus = (n_f - 1.0) / n_f * w + b / n_f;

    let variogram = |t: usize| -> f64 {
        let mut sum = 0.0;
        for chain in &chains {
            for i in t..n {
                let d = chain[i] - chain[i - t];
                sum += d * d;
            }
        }
        sum / (c * (n - t) as f64)
    };
    let rho = |t: usize| -> f64 { 1.0 - variogram(t) / (2.0 * var_plus) };

    // Sum lag pairs (rho_{2k}, rho_{2k+1}) while positive, enforcing
    // monotone non-increase.
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0usize;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if !pair.is_finite() || pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair.min(prev_pair);
        prev_pair = pair.min(prev_pair);
        t += 2;
    }

    let total = c * n_f;
    let floor = 1.0 / total.log10();
    Ok(total / tau.max(floor))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiag {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiag {
    pub block: String,
    pub min_rhat: f64,
    pub max_rhat: f64,
    /// Mean ESS across the block's components (the reference-table
    /// convention for vector-valued parameters).
    pub mean_ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub per_parameter: Vec<ParamDiag>,
    pub blocks: Vec<BlockDiag>,
    pub divergences: usize,
    pub total_draws: usize,
}

impl DiagnosticsSummary {
    /// Largest finite per-parameter R-hat.
    pub fn max_rhat(&self) -> f64 {
        self.per_parameter
            .iter()
            .map(|p| p.rhat)
            .filter(|r| r.is_finite())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.per_parameter
            .iter()
            .map(|p| p.ess)
            .filter(|e| e.is_finite())
            .fold(f64::INFINITY, f64::min)
    }

    /// Delimited table, one row per parameter block.
    pub fn table(&self) -> String {
        let mut out = String::from("block,min_rhat,max_rhat,ess\n");
        for b in &self.blocks {
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.0}\n",
                b.block, b.min_rhat, b.max_rhat, b.mean_ess
            ));
        }
        out.push_str(&format!("divergences,{}\n", self.divergences));
        out
    }
}

/// Compute per-parameter and per-block diagnostics over constrained draws.
pub fn summarize_draws(layout: &ParameterLayout, draws: &PosteriorDraws) -> DiagnosticsSummary {
    let n_chains = draws.num_chains();
    let per_parameter: Vec<ParamDiag> = (0..layout.dim)
        .into_par_iter()
        .map(|coord| {
            let exp = layout.transform_at(coord) == Transform::Exp;
            let chains: Vec<Vec<f64>> = (0..n_chains)
                .map(|c| {
                    let mut v = draws.chain_component(c, coord);
                    if exp {
                        for x in &mut v {
                            *x = x.exp();
                        }
                    }
                    v
                })
                .collect();
            let (rhat, ess) = if n_chains >= 2 && draws.kept_per_chain >= 4 {
                (
                    split_rhat(&chains).unwrap_or(f64::NAN),
                    ess(&chains).unwrap_or(f64::NAN),
                )
            } else {
                (f64::NAN, f64::NAN)
            };
            ParamDiag {
                name: layout.labels[coord].clone(),
                rhat,
                ess,
            }
        })
        .collect();

    let blocks = layout
        .blocks
        .iter()
        .map(|b| {
            let slice = &per_parameter[b.offset..b.offset + b.len];
            let rhats: Vec<f64> = slice.iter().map(|p| p.rhat).filter(|r| r.is_finite()).collect();
            let esses: Vec<f64> = slice.iter().map(|p| p.ess).filter(|e| e.is_finite()).collect();
            BlockDiag {
                block: b.name.clone(),
                min_rhat: rhats.iter().cloned().fold(f64::INFINITY, f64::min),
                max_rhat: rhats.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean_ess: if esses.is_empty() {
                    f64::NAN
                } else {
                    mean(&esses)
                },
            }
        })
        .collect();

    DiagnosticsSummary {
        per_parameter,
        blocks,
        divergences: draws.divergences(),
        total_draws: draws.total_draws(),
    }
}

/// Diagnostics for a completed fit, recomputed from its stored draws.
pub fn summarize_diagnostics(fit: &crate::sampler::FitResult) -> DiagnosticsSummary {
    summarize_draws(&fit.layout, &fit.draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn hand_computed_split_rhat() {
        let chains = vec![vec![1.0, 3.0, 1.0, 3.0], vec![5.0, 7.0, 5.0, 7.0]];
        // Halves have means (2, 2, 6, 6): W = 2, B = 2 * 16/3.
        let expected = (19.0f64 / 6.0).sqrt();
        assert_relative_eq!(split_rhat(&chains).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn split_rhat_equals_unsplit_on_halves() {
        let mut rng = StdRng::seed_from_u64(1);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..40).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut halves = Vec::new();
        for c in &chains {
            halves.push(c[..20].to_vec());
            halves.push(c[20..].to_vec());
        }
        assert_relative_eq!(
            split_rhat(&chains).unwrap(),
            rhat(&halves).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn odd_length_drops_first_element() {
        let chains = vec![vec![99.0, 1.0, 3.0, 1.0, 3.0], vec![99.0, 5.0, 7.0, 5.0, 7.0]];
        let expected = (19.0f64 / 6.0).sqrt();
        assert_relative_eq!(split_rhat(&chains).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn iid_chains_look_converged() {
        let mut rng = StdRng::seed_from_u64(7);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let r = split_rhat(&chains).unwrap();
        assert!((0.999..=1.01).contains(&r), "rhat = {r}");
        let e = ess(&chains).unwrap();
        let ratio = e / 4000.0;
        assert!((0.8..=1.2).contains(&ratio), "ess ratio = {ratio}");
    }

    #[test]
    fn constant_chains_are_undefined() {
        let chains = vec![vec![2.0; 8], vec![2.0; 8]];
        assert!(split_rhat(&chains).unwrap().is_nan());
        assert!(ess(&chains).unwrap().is_nan());
    }

    #[test]
    fn nonoverlapping_chains_blow_up_rhat() {
        let mut rng = StdRng::seed_from_u64(3);
        let a: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..500)
            .map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        assert!(split_rhat(&[a, b]).unwrap() > 2.0);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let rho = 0.9f64;
        let scale = (1.0 - rho * rho).sqrt();
        let mut rng = StdRng::seed_from_u64(11);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0f64;
                (0..10_000)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        x = rho * x + scale * z;
                        x
                    })
                    .collect()
            })
            .collect();
        let total = 40_000.0;
        let expected = total * (1.0 - rho) / (1.0 + rho);
        let e = ess(&chains).unwrap();
        assert!(
            (e - expected).abs() / expected < 0.3,
            "ess = {e}, expected ~{expected}"
        );
    }

    #[test]
    fn antithetic_chains_can_exceed_total_draws() {
        // Alternating sign with jitter gives rho_1 ~ -0.4.
        let mut rng = StdRng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..500)
                    .map(|i| {
                        let jitter: f64 = rng.sample::<f64, _>(StandardNormal);
                        if i % 2 == 0 {
                            1.0 + jitter
                        } else {
                            -1.0 + jitter
                        }
                    })
                    .collect()
            })
            .collect();
        let e = ess(&chains).unwrap();
        assert!(e > 1000.0, "ess = {e}");
    }

    #[test]
    fn diagnostics_invariant_to_chain_permutation() {
        let mut rng = StdRng::seed_from_u64(9);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..200).map(|_| rng.random::<f64>()).collect())
            .collect();
        let permuted = vec![
            chains[2].clone(),
            chains[0].clone(),
            chains[3].clone(),
            chains[1].clone(),
        ];
        assert_relative_eq!(
            split_rhat(&chains).unwrap(),
            split_rhat(&permuted).unwrap(),
            epsilon = 1e-13
        );
        assert_relative_eq!(ess(&chains).unwrap(), ess(&permuted).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn ess_is_affine_invariant() {
        let mut rng = StdRng::seed_from_u64(13);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..300).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let scaled: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|x| -3.5 * x + 7.0).collect())
            .collect();
        assert_relative_eq!(
            ess(&chains).unwrap(),
            ess(&scaled).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn preconditions_are_errors() {
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0, 4.0]]).is_err());
        assert!(split_rhat(&[vec![1.0, 2.0], vec![3.0, 4.0]]).is_err());
        assert!(ess(&[vec![1.0, 2.0], vec![3.0, 4.0]]).is_err());
    }
}
