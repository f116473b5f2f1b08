//! Multi-chain gradient-based MCMC front end.
//!
//! Chains run in parallel, each with an independent, seed-derived RNG
//! stream, so results are identical regardless of how many worker threads
//! execute them.

mod nuts;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize_draws, DiagnosticsSummary};
use crate::error::{Error, Result};
use crate::model::{pointwise_loglik, LeagueMeta, LoglikMatrix, ModelContext, ModelSpec,
    ParameterLayout};

use nuts::{run_chain, NutsOptions};

/// Anything the sampler can draw from: a log density with gradient over an
/// unconstrained real vector.
pub trait LogpTarget: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density and fills `grad`. A non-finite return marks
    /// the point as outside the sampler's reach; gradient content is then
    /// unspecified.
    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

impl LogpTarget for ModelContext {
    fn dim(&self) -> usize {
        self.layout().dim
    }

    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        crate::model::posterior::logp_grad_unchecked(self, position, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerConfig {
    /// The paper protocol: 4 parallel chains of 2000 iterations with a
    /// 500-draw burn in.
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 2000,
            warmup: 500,
            seed: 0,
            target_accept: 0.8,
            max_tree_depth: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidSamplerConfig("chains must be >= 1".into()));
        }
        if self.iterations == 0 || self.warmup >= self.iterations {
            return Err(Error::InvalidSamplerConfig(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !self.target_accept.is_finite()
            || self.target_accept <= 0.0
            || self.target_accept >= 1.0
        {
            return Err(Error::InvalidSamplerConfig(
                "target_accept must lie in (0, 1)".into(),
            ));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidSamplerConfig(
                "max_tree_depth must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        self.iterations - self.warmup
    }
}

/// Per-draw sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawStats {
    pub accept_stat: f64,
    pub divergent: bool,
    pub tree_depth: u32,
    pub energy: f64,
    /// Energy of the selected state minus the trajectory's initial energy.
    pub energy_error: f64,
}

/// Draws from one chain, post warmup, in unconstrained space.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    positions: Vec<f64>,
    pub stats: Vec<DrawStats>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    dim: usize,
}

impl ChainDraws {
    pub fn new(positions: Vec<f64>, stats: Vec<DrawStats>, dim: usize) -> Self {
        debug_assert_eq!(positions.len(), stats.len() * dim);
        Self {
            positions,
            stats,
            step_size: f64::NAN,
            inv_mass: Vec::new(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn draw(&self, idx: usize) -> &[f64] {
        &self.positions[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Multi-chain posterior draws in unconstrained space.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub chains: Vec<ChainDraws>,
    pub dim: usize,
    pub kept_per_chain: usize,
}

impl PosteriorDraws {
    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn total_draws(&self) -> usize {
        self.kept_per_chain * self.chains.len()
    }

    /// Iterate draws chain-major: all of chain 0, then chain 1, ...
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains
            .iter()
            .flat_map(|c| (0..c.len()).map(move |i| c.draw(i)))
    }

    /// One coordinate across all chains, chain-major, unconstrained.
    pub fn component(&self, coord: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[coord]).collect()
    }

    /// One coordinate within one chain, unconstrained.
    pub fn chain_component(&self, chain: usize, coord: usize) -> Vec<f64> {
        let c = &self.chains[chain];
        (0..c.len()).map(|i| c.draw(i)[coord]).collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.stats.iter().filter(|s| s.divergent).count())
            .sum()
    }
}

/// A completed fit: draws, diagnostics, the pointwise log-likelihood
/// matrix, and echoes of everything that produced them.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub config: SamplerConfig,
    pub layout: ParameterLayout,
    pub leagues: Vec<LeagueMeta>,
    pub draws: PosteriorDraws,
    pub diagnostics: DiagnosticsSummary,
    pub loglik: LoglikMatrix,
    pub wall_time: Duration,
}

impl FitResult {
    /// Constrained values of one coordinate across all chains, chain-major.
    pub fn constrained_component(&self, coord: usize) -> Vec<f64> {
        let mut values = self.draws.component(coord);
        if self.layout.transform_at(coord) == crate::model::Transform::Exp {
            for v in &mut values {
                *v = v.exp();
            }
        }
        values
    }

    /// Constrained draws of the single coordinate of a named scalar block.
    pub fn scalar_block_draws(&self, name: &str) -> Option<Vec<f64>> {
        let block = self.layout.block(name)?;
        if block.len != 1 {
            return None;
        }
        Some(self.constrained_component(block.offset))
    }
}

/// Draw a starting point with every coordinate uniform on [-2, 2],
/// re-drawing until the density and gradient are finite.
pub fn initialize_chain<T: LogpTarget>(target: &T, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logp = target.logp_and_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(q);
        }
    }
    Err(Error::InitializationFailed(100))
}

/// Run dynamic HMC on an arbitrary target. Chain `c` uses RNG stream `c`
/// derived from the seed, so the result is reproducible and independent of
/// thread scheduling.
pub fn sample_target<T: LogpTarget>(
    target: &T,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let opts = NutsOptions {
        iterations: config.iterations,
        warmup: config.warmup,
        target_accept: config.target_accept,
        max_tree_depth: config.max_tree_depth,
    };
    let outputs: Result<Vec<_>> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(c as u64);
            let init = initialize_chain(target, &mut rng)?;
            run_chain(target, init, &opts, &mut rng)
        })
        .collect();
    let chains: Vec<ChainDraws> = outputs?
        .into_iter()
        .map(|out| ChainDraws {
            positions: out.positions,
            stats: out.stats,
            step_size: out.step_size,
            inv_mass: out.inv_mass,
            dim: target.dim(),
        })
        .collect();
    Ok(PosteriorDraws {
        chains,
        dim: target.dim(),
        kept_per_chain: config.kept_per_chain(),
    })
}

/// Fit a model: sample, then attach diagnostics and the pointwise
/// log-likelihood matrix.
pub fn sample(ctx: &ModelContext, config: &SamplerConfig) -> Result<FitResult> {
    let start = Instant::now();
    let draws = sample_target(ctx, config)?;
    let loglik = pointwise_loglik(ctx, &draws)?;
    let diagnostics = summarize_draws(ctx.layout(), &draws);
    Ok(FitResult {
        spec: ctx.spec().clone(),
        config: config.clone(),
        layout: ctx.layout().clone(),
        leagues: ctx.league_meta(),
        draws,
        diagnostics,
        loglik,
        wall_time: start.elapsed(),
    })
}
