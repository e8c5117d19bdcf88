//! Committee-evolution Monte Carlo.
//!
//! Each epoch one seat is admitted, Byzantine with probability `rho`, and the
//! most senior seat leaves. After `n` epochs the committee holds exactly the
//! last `n` admissions, so `f_t` read every `n` epochs gives independent
//! `Bin(n, rho)` draws; the per-step tail is estimated from those.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beacon::rng_stream;
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    [lo, hi]
}

/// Per-epoch bound on `P[f_t >= n/3]`: `exp(n (1 - 3 rho) ln(3 rho) / 6)`.
pub fn chernoff_bound(n: usize, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0 / 3.0) {
        return Err(Error::Config(format!(
            "the Chernoff bound needs 0 < rho < 1/3, got {rho}"
        )));
    }
    Ok((n as f64 * (1.0 - 3.0 * rho) * (3.0 * rho).ln() / 6.0).exp())
}

/// Smallest Byzantine count that makes a committee of `n` unsafe.
pub fn unsafe_threshold(n: usize) -> usize {
    n.div_ceil(3)
}

/// Largest `f_1` with `f_1 < (1/3 - epsilon) n`.
pub fn genesis_cap(n: usize, epsilon: f64) -> usize {
    let bound = (1.0 / 3.0 - epsilon) * n as f64;
    // tolerance keeps n/3 for n divisible by 3 from rounding up
    ((bound - 1e-9).ceil() as i64 - 1).max(0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenesisMode {
    /// Each seat Byzantine with probability `rho`, capped.
    #[default]
    Bernoulli,
    /// Exactly this many Byzantine seats at random positions.
    Fixed(usize),
}

/// Byzantine flags of the genesis seats. With a `cap`, the youngest excess
/// Byzantine seats are made honest.
pub fn genesis_seats(
    n: usize,
    rho: f64,
    mode: GenesisMode,
    cap: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let mut seats = match mode {
        GenesisMode::Bernoulli => (0..n).map(|_| rng.gen_bool(rho)).collect(),
        GenesisMode::Fixed(f) => {
            let mut seats = vec![false; n];
            for i in sample(rng, n, f.min(n)) {
                seats[i] = true;
            }
            seats
        }
    };
    if let Some(cap) = cap {
        let mut excess = seats.iter().filter(|&&b| b).count().saturating_sub(cap);
        for s in seats.iter_mut().rev() {
            if excess == 0 {
                break;
            }
            if *s {
                *s = false;
                excess -= 1;
            }
        }
    }
    seats
}

/// PRNG stream of trial `trial`; trial 0 also seeds full scenarios.
pub fn trial_stream(seed: u64, trial: u64) -> ChaCha8Rng {
    rng_stream(seed, "committee", trial)
}

/// Byzantine flags in seniority order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitteeChain {
    seats: VecDeque<bool>,
    f: usize,
}

impl CommitteeChain {
    pub fn new(genesis: &[bool]) -> Self {
        Self {
            f: genesis.iter().filter(|&&b| b).count(),
            seats: genesis.iter().copied().collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.seats.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn is_unsafe(&self) -> bool {
        3 * self.f >= self.n()
    }

    /// Admits one member and evicts the oldest; returns the new `f`.
    pub fn step(&mut self, byzantine: bool) -> usize {
        if let Some(old) = self.seats.pop_front() {
            self.f -= old as usize;
        }
        self.seats.push_back(byzantine);
        self.f += byzantine as usize;
        self.f
    }

    /// `f_t` for the genesis committee and after each epoch; `None` means
    /// the epoch admitted nobody.
    pub fn replay(genesis: &[bool], epochs: impl IntoIterator<Item = Option<bool>>) -> Vec<usize> {
        let mut chain = Self::new(genesis);
        let mut out = vec![chain.f()];
        for e in epochs {
            match e {
                Some(b) => out.push(chain.step(b)),
                None => out.push(chain.f()),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McParams {
    pub n: usize,
    pub rho: f64,
    /// Epochs per trial.
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    pub genesis: GenesisMode,
    /// Caps genesis at `f_1 < (1/3 - epsilon) n` when set.
    pub epsilon: Option<f64>,
    /// Worker threads; the global pool when absent.
    pub threads: Option<usize>,
}

impl McParams {
    pub fn new(n: usize, rho: f64, horizon: u64, trials: u64, seed: u64) -> Self {
        Self {
            n,
            rho,
            horizon,
            trials,
            seed,
            genesis: GenesisMode::Bernoulli,
            epsilon: None,
            threads: None,
        }
    }
}

/// Per-step tail estimated under the tilted admission probability
/// `tilt_rho`, reweighted by the likelihood ratio of each window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedTail {
    pub tilt_rho: f64,
    pub samples: u64,
    pub estimate: f64,
    pub ci95: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: usize,
    pub rho: f64,
    pub horizon: u64,
    pub trials: u64,
    /// Trials with `f_t >= n/3` at some epoch, genesis included.
    pub violation_count: u64,
    pub violation_ci95: [f64; 2],
    pub tail_samples: u64,
    pub tail_hits: u64,
    pub per_step_tail: f64,
    pub per_step_ci95: [f64; 2],
    pub tilted_tail: TiltedTail,
    pub chernoff_per_step: Option<f64>,
    /// `horizon * chernoff_per_step`.
    pub union_bound: Option<f64>,
    /// Mean of `f_t` past the first `n` epochs.
    pub mean_f_t: f64,
    pub mean_f_t_ci95: [f64; 2],
}

impl McEstimate {
    /// Upper end of the most informative per-step tail interval.
    pub fn tail_upper(&self) -> f64 {
        self.tilted_tail.ci95[1]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Trial {
    violated: bool,
    tail_hits: u64,
    tail_samples: u64,
    f_sum: u64,
    f_count: u64,
    w_sum: f64,
    w2_sum: f64,
    w_samples: u64,
}

fn run_trial(p: &McParams, cap: Option<usize>, tilt: f64, trial: u64) -> Trial {
    let n = p.n;
    let k = unsafe_threshold(n);
    let mut rng = trial_stream(p.seed, trial);
    let genesis = genesis_seats(n, p.rho, p.genesis, cap, &mut rng);
    let mut chain = CommitteeChain::new(&genesis);
    let warm = if p.horizon >= n as u64 { n as u64 } else { 0 };
    let mut out = Trial {
        violated: chain.is_unsafe(),
        ..Default::default()
    };
    for t in 1..=p.horizon {
        chain.step(rng.gen_bool(p.rho));
        out.violated |= chain.is_unsafe();
        if t >= warm {
            out.f_sum += chain.f() as u64;
            out.f_count += 1;
        }
        if t % n as u64 == 0 {
            out.tail_samples += 1;
            out.tail_hits += chain.is_unsafe() as u64;
        }
    }

    // the same chain driven by tilted admissions
    let mut rng = rng_stream(p.seed, "committee-tilted", trial);
    let mut chain = CommitteeChain::new(&genesis);
    let (lr_byz, lr_honest) = ((p.rho / tilt).ln(), ((1.0 - p.rho) / (1.0 - tilt)).ln());
    for t in 1..=p.horizon {
        chain.step(rng.gen_bool(tilt));
        if t % n as u64 == 0 {
            let f = chain.f();
            let w = if f >= k {
                (f as f64 * lr_byz + (n - f) as f64 * lr_honest).exp()
            } else {
                0.0
            };
            out.w_sum += w;
            out.w2_sum += w * w;
            out.w_samples += 1;
        }
    }
    out
}

/// Runs `trials` independent chains for `horizon` epochs each.
pub fn committee_mc(
    n: usize,
    rho: f64,
    horizon: u64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    committee_mc_with(&McParams::new(n, rho, horizon, trials, seed))
}

pub fn committee_mc_with(p: &McParams) -> Result<McEstimate> {
    if p.n == 0 {
        return Err(Error::Config("committee size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p.rho) {
        return Err(Error::Config(format!("rho = {} is outside [0, 1]", p.rho)));
    }
    let cap = p.epsilon.map(|e| genesis_cap(p.n, e));
    let k = unsafe_threshold(p.n);
    let tilt = if p.rho > 0.0 && p.rho < 1.0 {
        p.rho.max(k as f64 / p.n as f64).min(1.0 - 1e-12)
    } else {
        p.rho
    };
    let run = || -> Vec<Trial> {
        (0..p.trials)
            .into_par_iter()
            .map(|i| run_trial(p, cap, tilt, i))
            .collect()
    };
    let trials = match p.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    };

    // fold in trial order so the result does not depend on the pool
    let mut violations = 0u64;
    let (mut hits, mut samples) = (0u64, 0u64);
    let (mut s, mut s2, mut len) = (0u128, 0u128, 0u64);
    let (mut w, mut w2, mut ws) = (0f64, 0f64, 0u64);
    for t in &trials {
        violations += t.violated as u64;
        hits += t.tail_hits;
        samples += t.tail_samples;
        s += t.f_sum as u128;
        s2 += (t.f_sum as u128) * (t.f_sum as u128);
        len = t.f_count;
        w += t.w_sum;
        w2 += t.w2_sum;
        ws += t.w_samples;
    }

    let nt = p.trials as f64;
    let (mean_f_t, mean_f_t_ci95) = if len == 0 || p.trials == 0 {
        (f64::NAN, [0.0, p.n as f64])
    } else {
        let l = len as f64;
        let mean = s as f64 / (nt * l);
        if p.trials < 2 {
            (mean, [0.0, p.n as f64])
        } else {
            let var = ((s2 as f64) / (l * l) - nt * mean * mean).max(0.0) / (nt - 1.0);
            let half = Z95 * (var / nt).sqrt();
            (mean, [mean - half, mean + half])
        }
    };

    let tilted_tail = if ws == 0 {
        TiltedTail {
            tilt_rho: tilt,
            samples: 0,
            estimate: f64::NAN,
            ci95: [0.0, 1.0],
        }
    } else {
        let m = ws as f64;
        let est = w / m;
        let var = if ws > 1 {
            ((w2 - m * est * est) / (m - 1.0)).max(0.0)
        } else {
            0.0
        };
        let half = Z95 * (var / m).sqrt();
        TiltedTail {
            tilt_rho: tilt,
            samples: ws,
            estimate: est,
            ci95: [(est - half).max(0.0), (est + half).min(1.0)],
        }
    };

    let chernoff = chernoff_bound(p.n, p.rho).ok();
    Ok(McEstimate {
        n: p.n,
        rho: p.rho,
        horizon: p.horizon,
        trials: p.trials,
        violation_count: violations,
        violation_ci95: wilson(violations, p.trials),
        tail_samples: samples,
        tail_hits: hits,
        per_step_tail: if samples == 0 {
            f64::NAN
        } else {
            hits as f64 / samples as f64
        },
        per_step_ci95: wilson(hits, samples),
        tilted_tail,
        chernoff_per_step: chernoff,
        union_bound: chernoff.map(|b| b * p.horizon as f64),
        mean_f_t,
        mean_f_t_ci95,
    })
}
