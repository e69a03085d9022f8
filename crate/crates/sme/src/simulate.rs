//! Reproducible path generation under common random numbers.
//!
//! A [`ShockStream`] is a `(seed, stream_id)` pair naming one infinite
//! sequence of base uniforms; the generator's stream splitting guarantees
//! distinct ids never overlap. Paths at different parameter values reuse
//! the *same* stream and differ only through the quantile transform, so a
//! finite-sample estimation objective is a deterministic function of the
//! parameter. Envelope and base paths in a sandwich share the stream as
//! well, which is what makes the pathwise inequalities exact rather than
//! statistical.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SmeError};
use crate::models::{eval_into, MarkovMap};
use crate::state_space::{leq_coords, Point};

/// Named, reproducible source of base uniforms in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShockStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl ShockStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        ShockStream { seed, stream_id }
    }

    /// Stateful sampler positioned at the start of the stream.
    pub fn sampler(&self) -> UniformSampler {
        UniformSampler::new(self.seed, self.stream_id)
    }

    /// The first `rows x dim` base uniforms as a row-major matrix.
    pub fn base_uniforms(&self, rows: usize, dim: usize) -> Vec<f64> {
        let mut s = self.sampler();
        (0..rows * dim).map(|_| s.next_f64()).collect()
    }
}

/// Uniform draws in the open interval `(0, 1)` on the dyadic grid
/// `(k + 1/2) * 2^-53`, so the normal quantile is always finite.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        UniformSampler { rng }
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }
}

/// A simulated trajectory `s_1, ..., s_N` (the initial condition is kept
/// separately), stored as a flat row-major matrix.
#[derive(Debug, Clone)]
pub struct Path {
    dim: usize,
    states: Vec<f64>,
    pub s0: Point,
    pub theta: Vec<f64>,
    pub stream: ShockStream,
    pub clamp_count: usize,
}

impl Path {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State after step `n + 1` (0-based over the stored rows).
    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }
}

/// Simulates `n_steps` projected steps from `s0`, drawing shocks from the
/// stream through the parameter-resolved quantile transform.
pub fn simulate_path<M: MarkovMap + ?Sized>(
    map: &M,
    s0: &Point,
    stream: ShockStream,
    theta: &[f64],
    n_steps: usize,
) -> Result<Path> {
    map.state_box().check_contains(s0, "state box")?;
    map.param_box().check_contains(theta)?;
    if n_steps == 0 {
        return Err(SmeError::EmptyWindow {
            what: "n_steps",
            got: 0,
        });
    }
    let k = map.state_box().dim();
    let dim_e = map.shock_spec().dim_e();
    let mut sampler = stream.sampler();
    let mut states = Vec::with_capacity(n_steps * k);
    let mut current = s0.coords().to_vec();
    let mut next = vec![0.0; k];
    let mut u = vec![0.0; dim_e];
    let mut eps = vec![0.0; dim_e];
    let mut clamp_count = 0usize;

    for _ in 0..n_steps {
        for ui in u.iter_mut() {
            *ui = sampler.next_f64();
        }
        map.shock_spec().quantile_into(&u, theta, &mut eps);
        if eval_into(map, &current, &eps, theta, &mut next) {
            clamp_count += 1;
        }
        states.extend_from_slice(&next);
        std::mem::swap(&mut current, &mut next);
    }

    Ok(Path {
        dim: k,
        states,
        s0: s0.clone(),
        theta: theta.to_vec(),
        stream,
        clamp_count,
    })
}

/// Recomputes the clamp count of a stored path by replaying its raw
/// transitions; used to audit the incremental count.
pub fn recount_clamps<M: MarkovMap + ?Sized>(map: &M, path: &Path) -> usize {
    let k = path.dim();
    let dim_e = map.shock_spec().dim_e();
    let mut sampler = path.stream.sampler();
    let mut u = vec![0.0; dim_e];
    let mut eps = vec![0.0; dim_e];
    let mut raw = vec![0.0; k];
    let mut prev: &[f64] = path.s0.coords();
    let mut count = 0usize;
    for n in 0..path.len() {
        for ui in u.iter_mut() {
            *ui = sampler.next_f64();
        }
        map.shock_spec().quantile_into(&u, &path.theta, &mut eps);
        map.transition_raw(prev, &eps, &path.theta, &mut raw);
        if map.state_box().project_in_place(&mut raw) {
            count += 1;
        }
        prev = path.state(n);
    }
    count
}

/// The three sandwich trajectories of one stream: majorant and minorant
/// envelopes at `theta_center`, base map at `theta`, all from the same
/// `s0` and the same base uniforms.
pub fn simulate_sandwich<M: MarkovMap + ?Sized>(
    map: &M,
    kappa: f64,
    s0: &Point,
    stream: ShockStream,
    theta: &[f64],
    theta_center: &[f64],
    n_steps: usize,
) -> Result<(Path, Path, Path)> {
    let upper = crate::envelopes::majorize(&map, kappa)?;
    let lower = crate::envelopes::minorize(&map, kappa)?;
    let hi = simulate_path(&upper, s0, stream, theta_center, n_steps)?;
    let mid = simulate_path(map, s0, stream, theta, n_steps)?;
    let lo = simulate_path(&lower, s0, stream, theta_center, n_steps)?;
    Ok((hi, mid, lo))
}

/// Counts steps at which the componentwise order `hi >= mid >= lo` fails.
pub fn sandwich_violations(hi: &Path, mid: &Path, lo: &Path) -> usize {
    let mut bad = 0usize;
    for n in 0..hi.len() {
        if !leq_coords(mid.state(n), hi.state(n)) || !leq_coords(lo.state(n), mid.state(n)) {
            bad += 1;
        }
    }
    bad
}
