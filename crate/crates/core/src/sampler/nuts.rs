//! Dynamic Hamiltonian Monte Carlo with trajectory doubling, multinomial
//! state selection, dual-averaging step-size adaptation, and windowed
//! diagonal mass-matrix estimation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::{DrawStats, LogpTarget};

/// Energy error beyond which a transition is declared divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct NutsOptions {
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
}

#[derive(Debug)]
pub(crate) struct ChainOutput {
    /// Kept draws, row-major (kept x dim), unconstrained.
    pub positions: Vec<f64>,
    pub stats: Vec<DrawStats>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
}

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    h: f64,
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(pi, im)| pi * pi * im)
        .sum::<f64>()
}

fn leapfrog<T: LogpTarget>(target: &T, from: &State, eps: f64, inv_mass: &[f64]) -> State {
    let dim = from.q.len();
    let mut p: Vec<f64> = from
        .p
        .iter()
        .zip(&from.grad)
        .map(|(pi, gi)| pi + 0.5 * eps * gi)
        .collect();
    let q: Vec<f64> = from
        .q
        .iter()
        .zip(p.iter().zip(inv_mass))
        .map(|(qi, (pi, im))| qi + eps * pi * im)
        .collect();
    let mut grad = vec![0.0; dim];
    let logp = target.logp_and_grad(&q, &mut grad);
    let h = if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi += 0.5 * eps * gi;
        }
        -logp + kinetic(&p, inv_mass)
    } else {
        f64::INFINITY
    };
    State { q, p, grad, logp, h }
}

/// Generalized no-U-turn criterion over the velocities at the span ends.
fn uturn(lo: &State, hi: &State, inv_mass: &[f64]) -> bool {
    let mut dot_lo = 0.0;
    let mut dot_hi = 0.0;
    for i in 0..lo.q.len() {
        let span = hi.q[i] - lo.q[i];
        dot_lo += span * lo.p[i] * inv_mass[i];
        dot_hi += span * hi.p[i] * inv_mass[i];
    }
    dot_lo < 0.0 || dot_hi < 0.0
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let max = a.max(b);
    max + ((a - max).exp() + (b - max).exp()).ln()
}

struct Subtree {
    lo: State,
    hi: State,
    proposal: State,
    log_sum_w: f64,
    sum_metro: f64,
    n_leapfrog: usize,
    turning: bool,
    diverged: bool,
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: LogpTarget>(
    target: &T,
    depth: usize,
    from: &State,
    dir: f64,
    eps: f64,
    inv_mass: &[f64],
    h0: f64,
    rng: &mut ChaCha8Rng,
) -> Subtree {
    if depth == 0 {
        let state = leapfrog(target, from, dir * eps, inv_mass);
        let delta_h = state.h - h0;
        let diverged = !delta_h.is_finite() || delta_h > MAX_ENERGY_ERROR;
        let sum_metro = if delta_h.is_finite() {
            (-delta_h).exp().min(1.0)
        } else {
            0.0
        };
        return Subtree {
            lo: state.clone(),
            hi: state.clone(),
            proposal: state,
            log_sum_w: if diverged { f64::NEG_INFINITY } else { -delta_h },
            sum_metro,
            n_leapfrog: 1,
            turning: false,
            diverged,
        };
    }

    let first = build_tree(target, depth - 1, from, dir, eps, inv_mass, h0, rng);
    if first.diverged || first.turning {
        return first;
    }
    let edge = if dir > 0.0 { &first.hi } else { &first.lo };
    let second = build_tree(target, depth - 1, edge, dir, eps, inv_mass, h0, rng);

    let n_leapfrog = first.n_leapfrog + second.n_leapfrog;
    let sum_metro = first.sum_metro + second.sum_metro;
    if second.diverged || second.turning {
        return Subtree {
            n_leapfrog,
            sum_metro,
            ..second
        };
    }

    let log_sum_w = log_add_exp(first.log_sum_w, second.log_sum_w);
    // Unbiased multinomial selection between the two halves.
    let take_second = rng.random::<f64>().ln() < second.log_sum_w - log_sum_w;
    let proposal = if take_second {
        second.proposal
    } else {
        first.proposal
    };
    let (lo, hi) = if dir > 0.0 {
        (first.lo, second.hi)
    } else {
        (second.lo, first.hi)
    };
    let turning = uturn(&lo, &hi, inv_mass);
    Subtree {
        lo,
        hi,
        proposal,
        log_sum_w,
        sum_metro,
        n_leapfrog,
        turning,
        diverged: false,
    }
}

fn draw_momentum(rng: &mut ChaCha8Rng, inv_mass: &[f64]) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|im| {
            let z: f64 = rng.sample(StandardNormal);
            z / im.sqrt()
        })
        .collect()
}

/// One NUTS transition. Returns the new state and its statistics.
fn transition<T: LogpTarget>(
    target: &T,
    current: &mut State,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> DrawStats {
    current.p = draw_momentum(rng, inv_mass);
    current.h = -current.logp + kinetic(&current.p, inv_mass);
    let h0 = current.h;

    let mut traj_lo = current.clone();
    let mut traj_hi = current.clone();
    let mut sample = current.clone();
    let mut log_sum_w = 0.0;
    let mut sum_metro = 0.0;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;
    let mut depth_reached = 0u32;

    for depth in 0..max_depth {
        let dir: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let from = if dir > 0.0 { &traj_hi } else { &traj_lo };
        let sub = build_tree(target, depth, from, dir, eps, inv_mass, h0, rng);
        sum_metro += sub.sum_metro;
        n_leapfrog += sub.n_leapfrog;
        if sub.diverged {
            divergent = true;
            break;
        }
        if sub.turning {
            break;
        }
        // Biased progressive sampling favors the fresh subtree.
        if rng.random::<f64>().ln() < sub.log_sum_w - log_sum_w {
            sample = sub.proposal.clone();
        }
        log_sum_w = log_add_exp(log_sum_w, sub.log_sum_w);
        if dir > 0.0 {
            traj_hi = sub.hi;
        } else {
            traj_lo = sub.lo;
        }
        depth_reached = depth as u32 + 1;
        if uturn(&traj_lo, &traj_hi, inv_mass) {
            break;
        }
    }

    let stats = DrawStats {
        accept_stat: if n_leapfrog > 0 {
            sum_metro / n_leapfrog as f64
        } else {
            0.0
        },
        divergent,
        tree_depth: depth_reached,
        energy: sample.h,
        energy_error: sample.h - h0,
    };
    *current = sample;
    stats
}

/// Step-size search: double or halve until the one-step acceptance ratio
/// crosses one half.
fn find_reasonable_epsilon<T: LogpTarget>(
    target: &T,
    state: &State,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut eps = 1.0;
    let mut probe = state.clone();
    probe.p = draw_momentum(rng, inv_mass);
    let h0 = -probe.logp + kinetic(&probe.p, inv_mass);

    let ratio_at = |eps: f64| -> f64 {
        let next = leapfrog(target, &probe, eps, inv_mass);
        if next.h.is_finite() {
            (h0 - next.h).exp()
        } else {
            0.0
        }
    };
    let mut ratio = ratio_at(eps);
    let a: f64 = if ratio > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if ratio.powf(a) <= 2f64.powf(-a) || !(1e-10..=1e10).contains(&eps) {
            break;
        }
        eps *= 2f64.powf(a);
        ratio = ratio_at(eps);
    }
    eps.clamp(1e-10, 1e10)
}

/// Nesterov dual averaging toward a target acceptance statistic.
struct DualAverage {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    delta: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, delta: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 0.0,
            delta,
        }
    }

    fn update(&mut self, accept_stat: f64) {
        self.m += 1.0;
        let a = accept_stat.clamp(0.0, 1.0);
        let frac = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.delta - a);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warmup staging: a step-size-only opening, doubling mass-matrix windows,
/// and a step-size-only closing stretch.
struct Schedule {
    init_end: usize,
    term_start: usize,
}

impl Schedule {
    const FIRST_WINDOW: usize = 25;

    fn new(warmup: usize) -> Self {
        let init = (0.15 * warmup as f64).round() as usize;
        let term = (0.10 * warmup as f64).round() as usize;
        if warmup.saturating_sub(init + term) < Self::FIRST_WINDOW {
            // Too short for mass estimation; adapt step size throughout.
            Self {
                init_end: warmup,
                term_start: warmup,
            }
        } else {
            Self {
                init_end: init,
                term_start: warmup - term,
            }
        }
    }
}

/// Online mean/variance accumulator for one adaptation window.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, q: &[f64]) {
        self.n += 1.0;
        for i in 0..q.len() {
            let d = q[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (q[i] - self.mean[i]);
        }
    }

    /// Regularized diagonal variance estimate, shrunk toward 1e-3.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m2| {
                let var = if n > 1.0 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

pub(crate) fn run_chain<T: LogpTarget>(
    target: &T,
    init: Vec<f64>,
    opts: &NutsOptions,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    let dim = init.len();
    let mut inv_mass = vec![1.0; dim];

    let mut grad = vec![0.0; dim];
    let logp = target.logp_and_grad(&init, &mut grad);
    let mut current = State {
        q: init,
        p: vec![0.0; dim],
        grad,
        logp,
        h: 0.0,
    };

    let mut eps = find_reasonable_epsilon(target, &current, &inv_mass, rng);
    let mut da = DualAverage::new(eps, opts.target_accept);
    let schedule = Schedule::new(opts.warmup);
    let mut window = Welford::new(dim);
    let mut window_end = if schedule.init_end < schedule.term_start {
        (schedule.init_end + Schedule::FIRST_WINDOW).min(schedule.term_start)
    } else {
        usize::MAX
    };
    let mut window_size = Schedule::FIRST_WINDOW;

    let kept = opts.iterations - opts.warmup;
    let mut positions = Vec::with_capacity(kept * dim);
    let mut stats = Vec::with_capacity(kept);
    let mut warmup_divergences = 0usize;

    for iter in 0..opts.iterations {
        let warming = iter < opts.warmup;
        let stat = transition(target, &mut current, eps, &inv_mass, opts.max_tree_depth, rng);

        if warming {
            if stat.divergent {
                warmup_divergences += 1;
            }
            da.update(stat.accept_stat);
            eps = da.current();

            if iter >= schedule.init_end && iter < schedule.term_start {
                window.push(&current.q);
                if iter + 1 == window_end {
                    inv_mass = window.regularized_variance();
                    window = Welford::new(dim);
                    // Restart step-size search under the new metric.
                    eps = find_reasonable_epsilon(target, &current, &inv_mass, rng);
                    da = DualAverage::new(eps, opts.target_accept);
                    window_size *= 2;
                    let next_end = window_end + window_size;
                    // The last window absorbs the remainder of the region.
                    window_end = if next_end + 2 * window_size > schedule.term_start {
                        schedule.term_start
                    } else {
                        next_end
                    };
                }
            }
            if iter + 1 == opts.warmup {
                if opts.warmup > 0 && warmup_divergences == opts.warmup {
                    return Err(Error::InvalidSamplerConfig(
                        "every warmup iteration diverged; the step size could not adapt"
                            .to_string(),
                    ));
                }
                eps = da.adapted().clamp(1e-10, 1e10);
            }
        } else {
            positions.extend_from_slice(&current.q);
            stats.push(stat);
        }
    }

    Ok(ChainOutput {
        positions,
        stats,
        step_size: eps,
        inv_mass,
    })
}
