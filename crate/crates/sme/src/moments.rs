//! Functions of interest, sample and population moments, and the
//! functional distance between maps.
//!
//! The estimator's theory wants increasing continuous functions of the
//! *observable* state coordinates, so the primitive library is closed
//! under operations that preserve monotonicity: coordinate selectors,
//! positive powers of box-lower-shifted coordinates, positive scalings
//! and pointwise minima. Statistics that are not increasing (variance,
//! standard deviation) are derived *from* the primitive moment vector as
//! continuous functions of it, never fed to the order-based machinery
//! directly.

use crate::error::{Result, SmeError};
use crate::models::MarkovMap;
use crate::simulate::{simulate_path, Path, ShockStream, UniformSampler};
use crate::state_space::{max_norm_diff, Point, StateBox};

/// An increasing continuous scalar function of the observable state.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `scale * s[index]`
    Coord { index: usize, scale: f64 },
    /// `scale * (s[index] - shift)^power`, increasing when `shift` is at
    /// or below the box lower bound of the coordinate.
    ShiftedPower {
        index: usize,
        shift: f64,
        power: u32,
        scale: f64,
    },
    /// Pointwise minimum of two primitives.
    Min(Box<Primitive>, Box<Primitive>),
}

impl Primitive {
    pub fn coord(index: usize) -> Self {
        Primitive::Coord { index, scale: 1.0 }
    }

    pub fn scaled_coord(index: usize, scale: f64) -> Self {
        Primitive::Coord { index, scale }
    }

    pub fn shifted_square(index: usize, shift: f64) -> Self {
        Primitive::ShiftedPower {
            index,
            shift,
            power: 2,
            scale: 1.0,
        }
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            Primitive::Coord { index, scale } => scale * s[*index],
            Primitive::ShiftedPower {
                index,
                shift,
                power,
                scale,
            } => scale * (s[*index] - shift).powi(*power as i32),
            Primitive::Min(a, b) => a.eval(s).min(b.eval(s)),
        }
    }

    fn validate(&self, state_box: &StateBox, mask: &[usize]) -> Result<()> {
        match self {
            Primitive::Coord { index, scale } => {
                check_observable(*index, state_box, mask)?;
                if !(*scale > 0.0) {
                    return Err(SmeError::InvalidMomentSpec(format!(
                        "scale must be > 0, got {scale}"
                    )));
                }
            }
            Primitive::ShiftedPower {
                index,
                shift,
                power,
                scale,
            } => {
                check_observable(*index, state_box, mask)?;
                if !(*scale > 0.0) {
                    return Err(SmeError::InvalidMomentSpec(format!(
                        "scale must be > 0, got {scale}"
                    )));
                }
                if *power == 0 {
                    return Err(SmeError::InvalidMomentSpec(
                        "power must be >= 1".into(),
                    ));
                }
                if *shift > state_box.lower()[*index] {
                    return Err(SmeError::InvalidMomentSpec(format!(
                        "shift {shift} above box lower bound {}; the power would not be increasing",
                        state_box.lower()[*index]
                    )));
                }
            }
            Primitive::Min(a, b) => {
                a.validate(state_box, mask)?;
                b.validate(state_box, mask)?;
            }
        }
        Ok(())
    }
}

fn check_observable(index: usize, state_box: &StateBox, mask: &[usize]) -> Result<()> {
    if index >= state_box.dim() {
        return Err(SmeError::DimensionMismatch {
            expected: state_box.dim(),
            got: index + 1,
        });
    }
    if !mask.contains(&index) {
        return Err(SmeError::InvalidMomentSpec(format!(
            "coordinate {index} is latent (not in the observable mask)"
        )));
    }
    Ok(())
}

/// A statistic computed from the primitive moment vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Derived {
    /// The primitive moment itself.
    Identity { primitive: usize },
    /// `m[sq] - (m[mean] - shift)^2` where `sq` is the unscaled shifted
    /// square and `mean` the unscaled coordinate, both of one coordinate.
    Variance {
        sq: usize,
        mean: usize,
        shift: f64,
    },
    /// Square root of the corresponding variance.
    StdDev {
        sq: usize,
        mean: usize,
        shift: f64,
    },
}

impl Derived {
    pub fn eval(&self, moments: &[f64]) -> f64 {
        match *self {
            Derived::Identity { primitive } => moments[primitive],
            Derived::Variance { sq, mean, shift } => {
                let c = moments[mean] - shift;
                moments[sq] - c * c
            }
            Derived::StdDev { sq, mean, shift } => {
                let c = moments[mean] - shift;
                (moments[sq] - c * c).max(0.0).sqrt()
            }
        }
    }

    fn validate(&self, primitives: &[(String, Primitive)]) -> Result<()> {
        let check_idx = |i: usize| -> Result<()> {
            if i >= primitives.len() {
                return Err(SmeError::InvalidMomentSpec(format!(
                    "derived statistic references primitive {i}, only {} defined",
                    primitives.len()
                )));
            }
            Ok(())
        };
        match *self {
            Derived::Identity { primitive } => check_idx(primitive),
            Derived::Variance { sq, mean, shift } | Derived::StdDev { sq, mean, shift } => {
                check_idx(sq)?;
                check_idx(mean)?;
                let ok_sq = matches!(
                    primitives[sq].1,
                    Primitive::ShiftedPower { power: 2, scale, shift: s, .. }
                        if scale == 1.0 && s == shift
                );
                let ok_mean = matches!(
                    primitives[mean].1,
                    Primitive::Coord { scale, .. } if scale == 1.0
                );
                if !ok_sq || !ok_mean {
                    return Err(SmeError::InvalidMomentSpec(
                        "variance/std-dev need an unscaled coordinate and an unscaled \
                         shifted square with the same shift"
                            .into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// The function of interest: named increasing primitives over the
/// observable coordinates, plus derived statistics.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    primitives: Vec<(String, Primitive)>,
    observable_mask: Vec<usize>,
    derived: Vec<(String, Derived)>,
}

impl MomentSpec {
    pub fn new(
        state_box: &StateBox,
        observable_mask: Vec<usize>,
        primitives: Vec<(String, Primitive)>,
        derived: Vec<(String, Derived)>,
    ) -> Result<Self> {
        if primitives.is_empty() {
            return Err(SmeError::InvalidMomentSpec(
                "at least one primitive required".into(),
            ));
        }
        let mut mask = observable_mask;
        mask.sort_unstable();
        mask.dedup();
        if mask.is_empty() || mask.iter().any(|&i| i >= state_box.dim()) {
            return Err(SmeError::InvalidMomentSpec(format!(
                "observable mask must name valid coordinates of a dim-{} state",
                state_box.dim()
            )));
        }
        for (_, p) in &primitives {
            p.validate(state_box, &mask)?;
        }
        for (_, d) in &derived {
            d.validate(&primitives)?;
        }
        Ok(MomentSpec {
            primitives,
            observable_mask: mask,
            derived,
        })
    }

    /// Mean of the first coordinate: the minimal useful spec.
    pub fn coord_mean(state_box: &StateBox) -> Self {
        MomentSpec::new(
            state_box,
            (0..state_box.dim()).collect(),
            vec![("m1".into(), Primitive::coord(0))],
            vec![],
        )
        .unwrap()
    }

    /// Mean and lower-shifted second moment of coordinate `index`, with
    /// derived variance and standard deviation.
    pub fn mean_and_dispersion(state_box: &StateBox, index: usize) -> Result<Self> {
        let shift = state_box.lower()[index];
        MomentSpec::new(
            state_box,
            (0..state_box.dim()).collect(),
            vec![
                ("m1".into(), Primitive::coord(index)),
                ("m2s".into(), Primitive::shifted_square(index, shift)),
            ],
            vec![
                ("mean".into(), Derived::Identity { primitive: 0 }),
                (
                    "var".into(),
                    Derived::Variance {
                        sq: 1,
                        mean: 0,
                        shift,
                    },
                ),
                (
                    "sd".into(),
                    Derived::StdDev {
                        sq: 1,
                        mean: 0,
                        shift,
                    },
                ),
            ],
        )
    }

    pub fn dim(&self) -> usize {
        self.primitives.len()
    }

    pub fn primitives(&self) -> &[(String, Primitive)] {
        &self.primitives
    }

    pub fn derived(&self) -> &[(String, Derived)] {
        &self.derived
    }

    pub fn observable_mask(&self) -> &[usize] {
        &self.observable_mask
    }

    pub fn eval_primitives_into(&self, s: &[f64], out: &mut [f64]) {
        for (j, (_, p)) in self.primitives.iter().enumerate() {
            out[j] = p.eval(s);
        }
    }

    pub fn eval_derived(&self, moments: &[f64]) -> Vec<f64> {
        self.derived.iter().map(|(_, d)| d.eval(moments)).collect()
    }
}

/// A vector of `p` moment values with provenance.
#[derive(Debug, Clone)]
pub struct MomentVector {
    pub values: Vec<f64>,
    pub n_used: usize,
    pub std_errors: Option<Vec<f64>>,
}

/// Arithmetic mean of each primitive over the path rows after `burn`.
pub fn sample_moments(path: &Path, spec: &MomentSpec, burn: usize) -> Result<MomentVector> {
    if burn >= path.len() {
        return Err(SmeError::EmptyWindow {
            what: "effective moment window",
            got: path.len() as i64 - burn as i64,
        });
    }
    let p = spec.dim();
    let mut acc = vec![0.0; p];
    let mut row = vec![0.0; p];
    let mut n_used = 0usize;
    for s in path.rows().skip(burn) {
        spec.eval_primitives_into(s, &mut row);
        for (a, v) in acc.iter_mut().zip(&row) {
            *a += v;
        }
        n_used += 1;
    }
    for a in acc.iter_mut() {
        *a /= n_used as f64;
    }
    Ok(MomentVector {
        values: acc,
        n_used,
        std_errors: None,
    })
}

/// Evaluates the primitives on a data row laid out in observable-mask
/// order (latent coordinates absent).
pub fn eval_primitives_masked_into(
    spec: &MomentSpec,
    obs_row: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let mask = spec.observable_mask();
    if obs_row.len() != mask.len() {
        return Err(SmeError::Data(format!(
            "data row has {} columns, observable mask has {}",
            obs_row.len(),
            mask.len()
        )));
    }
    // scatter the observables into a dense state row; latent coordinates
    // are never read by a validated primitive
    let dim = mask.iter().max().map(|&m| m + 1).unwrap_or(1);
    let mut dense = vec![f64::NAN; dim];
    for (pos, &idx) in mask.iter().enumerate() {
        dense[idx] = obs_row[pos];
    }
    for (j, (_, p)) in spec.primitives().iter().enumerate() {
        out[j] = p.eval(&dense);
    }
    Ok(())
}

/// Sample moments of an observed data series (rows in mask order).
pub fn data_moments(spec: &MomentSpec, rows: &[Vec<f64>]) -> Result<MomentVector> {
    if rows.is_empty() {
        return Err(SmeError::EmptyWindow {
            what: "data series",
            got: 0,
        });
    }
    let p = spec.dim();
    let mut acc = vec![0.0; p];
    let mut row_f = vec![0.0; p];
    for row in rows {
        eval_primitives_masked_into(spec, row, &mut row_f)?;
        for (a, v) in acc.iter_mut().zip(&row_f) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
    Ok(MomentVector {
        values: acc,
        n_used: rows.len(),
        std_errors: None,
    })
}

/// Running means of each primitive at the given prefix lengths (burn 0),
/// for law-of-large-numbers ladders over one path.
pub fn prefix_moments(path: &Path, spec: &MomentSpec, prefixes: &[usize]) -> Vec<MomentVector> {
    let p = spec.dim();
    let mut acc = vec![0.0; p];
    let mut row = vec![0.0; p];
    let mut out = Vec::with_capacity(prefixes.len());
    let mut next = 0usize;
    for (n, s) in path.rows().enumerate() {
        spec.eval_primitives_into(s, &mut row);
        for (a, v) in acc.iter_mut().zip(&row) {
            *a += v;
        }
        while next < prefixes.len() && n + 1 == prefixes[next] {
            out.push(MomentVector {
                values: acc.iter().map(|a| a / (n + 1) as f64).collect(),
                n_used: n + 1,
                std_errors: None,
            });
            next += 1;
        }
    }
    out
}

/// Oracle estimate of the invariant-measure moments.
#[derive(Debug, Clone)]
pub struct OracleExpectation {
    /// Across-replication mean, with across-replication standard errors.
    pub moments: MomentVector,
    /// Per-replication primitive means (replication-major).
    pub per_replication: Vec<Vec<f64>>,
    /// Across-replication range per primitive.
    pub spread: Vec<f64>,
    /// Max over primitives of the across-replication range; large values
    /// are evidence against uniqueness of the invariant probability.
    pub max_spread: f64,
    /// Largest within-replication standard error per primitive (batch
    /// means); the yardstick replication disagreement is judged against.
    pub within_se: Vec<f64>,
}

/// Configuration for oracle runs.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub n_steps: usize,
    pub burn: usize,
    pub replications: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_steps: 1_000_000,
            burn: 10_000,
            replications: 8,
            seed: 0x0eac1e,
        }
    }
}

/// Approximates `E_theta f` by long-run averages over independent streams
/// started from distinct initial conditions, always including both box
/// corners. Corner starts are the stress set: by monotone coupling they
/// bracket every other start pathwise.
pub fn oracle_expectation<M: MarkovMap + ?Sized>(
    map: &M,
    theta: &[f64],
    spec: &MomentSpec,
    cfg: &OracleConfig,
) -> Result<OracleExpectation> {
    if cfg.replications < 2 {
        return Err(SmeError::InvalidEstimation(
            "oracle needs at least 2 replications".into(),
        ));
    }
    if cfg.burn >= cfg.n_steps {
        return Err(SmeError::EmptyWindow {
            what: "oracle window",
            got: cfg.n_steps as i64 - cfg.burn as i64,
        });
    }
    let sbox = map.state_box();
    let p = spec.dim();
    let mut per_replication = Vec::with_capacity(cfg.replications);
    let mut within_se = vec![0.0f64; p];
    let mut s0_sampler = UniformSampler::new(cfg.seed, u64::MAX);
    for rep in 0..cfg.replications {
        let s0 = match rep {
            0 => sbox.bottom_corner(),
            1 => sbox.top_corner(),
            _ => Point::new_from_sampler(sbox, &mut s0_sampler),
        };
        let path = simulate_path(
            map,
            &s0,
            ShockStream::new(cfg.seed, rep as u64),
            theta,
            cfg.n_steps,
        )?;
        per_replication.push(sample_moments(&path, spec, cfg.burn)?.values);
        let se = batch_means_se(&path, spec, cfg.burn, 32);
        for j in 0..p {
            within_se[j] = within_se[j].max(se[j]);
        }
    }

    let r = cfg.replications as f64;
    let mut mean = vec![0.0; p];
    for rep in &per_replication {
        for (m, v) in mean.iter_mut().zip(rep) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r);

    let mut se = vec![0.0; p];
    let mut spread = vec![0.0; p];
    let mut max_spread = 0.0f64;
    for j in 0..p {
        let vals: Vec<f64> = per_replication.iter().map(|rep| rep[j]).collect();
        let var = vals.iter().map(|v| (v - mean[j]) * (v - mean[j])).sum::<f64>()
            / (r - 1.0);
        se[j] = (var / r).sqrt();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        spread[j] = hi - lo;
        max_spread = max_spread.max(hi - lo);
    }

    Ok(OracleExpectation {
        moments: MomentVector {
            values: mean,
            n_used: cfg.replications * (cfg.n_steps - cfg.burn),
            std_errors: Some(se),
        },
        per_replication,
        spread,
        max_spread,
        within_se,
    })
}

/// Standard error of the post-burn moment means by batch means: split
/// the window into equal batches and use the dispersion of batch means.
/// Robust to serial dependence as long as batches dwarf the correlation
/// time.
pub fn batch_means_se(path: &Path, spec: &MomentSpec, burn: usize, n_batches: usize) -> Vec<f64> {
    let p = spec.dim();
    let window = path.len().saturating_sub(burn);
    let b = n_batches.max(2).min(window.max(2));
    let batch_len = (window / b).max(1);
    let mut batch_means = vec![0.0; b * p];
    let mut row = vec![0.0; p];
    for (i, s) in path.rows().skip(burn).take(batch_len * b).enumerate() {
        let batch = i / batch_len;
        spec.eval_primitives_into(s, &mut row);
        for j in 0..p {
            batch_means[batch * p + j] += row[j];
        }
    }
    let mut se = vec![0.0; p];
    for j in 0..p {
        let means: Vec<f64> = (0..b)
            .map(|i| batch_means[i * p + j] / batch_len as f64)
            .collect();
        let m = means.iter().sum::<f64>() / b as f64;
        let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (b - 1) as f64;
        se[j] = (var / b as f64).sqrt();
    }
    se
}

impl Point {
    fn new_from_sampler(sbox: &StateBox, sampler: &mut UniformSampler) -> Point {
        Point::new(
            (0..sbox.dim())
                .map(|i| {
                    sbox.lower()[i] + sampler.next_f64() * (sbox.upper()[i] - sbox.lower()[i])
                })
                .collect(),
        )
        .expect("interior point is finite")
    }
}

/// Monte Carlo approximation of the distance between two maps at a fixed
/// parameter: max over probe states of the expected max-norm one-step
/// difference, sharing one shock sample across all states.
#[derive(Debug, Clone)]
pub struct MapDistance {
    pub value: f64,
    pub std_error: f64,
    pub argmax: Point,
}

pub fn map_distance<A: MarkovMap + ?Sized, B: MarkovMap + ?Sized>(
    map1: &A,
    map2: &B,
    theta: &[f64],
    s_points: &[Point],
    mc_draws: usize,
    seed: u64,
) -> Result<MapDistance> {
    if s_points.is_empty() || mc_draws == 0 {
        return Err(SmeError::InvalidEstimation(
            "map_distance needs probe points and at least one draw".into(),
        ));
    }
    let k = map1.state_box().dim();
    let dim_e = map1.shock_spec().dim_e();
    let mut sampler = UniformSampler::new(seed, 4);
    let eps_draws: Vec<Vec<f64>> = (0..mc_draws)
        .map(|_| {
            let u: Vec<f64> = (0..dim_e).map(|_| sampler.next_f64()).collect();
            map1.shock_spec().quantile(&u, theta)
        })
        .collect();

    let mut best = f64::NEG_INFINITY;
    let mut best_se = 0.0;
    let mut argmax = s_points[0].clone();
    let (mut o1, mut o2) = (vec![0.0; k], vec![0.0; k]);
    for s in s_points {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for eps in &eps_draws {
            crate::models::eval_into(map1, s.coords(), eps, theta, &mut o1);
            crate::models::eval_into(map2, s.coords(), eps, theta, &mut o2);
            let d = max_norm_diff(&o1, &o2);
            sum += d;
            sumsq += d * d;
        }
        let mean = sum / mc_draws as f64;
        if mean > best {
            best = mean;
            argmax = s.clone();
            let var = (sumsq / mc_draws as f64 - mean * mean).max(0.0);
            best_se = (var / mc_draws as f64).sqrt();
        }
    }

    Ok(MapDistance {
        value: best,
        std_error: best_se,
        argmax,
    })
}

/// Default probe set for the distance metric: a deterministic lattice for
/// low dimension, a seeded Latin hypercube for three or more.
pub fn default_probe_points(sbox: &StateBox, seed: u64) -> Vec<Point> {
    if sbox.dim() <= 2 {
        sbox.lattice_grid(33).expect("33^k within cap for k <= 2")
    } else {
        latin_hypercube(sbox, 1024, seed)
    }
}

/// Seeded Latin hypercube sample: one stratum per point per dimension,
/// strata order shuffled independently across dimensions.
pub fn latin_hypercube(sbox: &StateBox, n: usize, seed: u64) -> Vec<Point> {
    let k = sbox.dim();
    let mut sampler = UniformSampler::new(seed, 5);
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates driven by the uniform stream
        for i in (1..n).rev() {
            let j = (sampler.next_f64() * (i + 1) as f64) as usize;
            perm.swap(i, j.min(i));
        }
        strata.push(perm);
    }
    (0..n)
        .map(|row| {
            Point::new(
                (0..k)
                    .map(|d| {
                        let cell = strata[d][row] as f64;
                        let u = sampler.next_f64();
                        let frac = (cell + u) / n as f64;
                        sbox.lower()[d] + frac * (sbox.upper()[d] - sbox.lower()[d])
                    })
                    .collect(),
            )
            .expect("finite lhs point")
        })
        .collect()
}
