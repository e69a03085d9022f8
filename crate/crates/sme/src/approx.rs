//! Numerical approximations of the transition map and the convergence of
//! the estimator under them.
//!
//! An [`InterpolatedMap`] replaces the base map by multilinear
//! interpolation *in the state* over a uniform node lattice, calling the
//! true map at the surrounding nodes with the exact `(eps, theta)` being
//! queried. This mimics how computed decision rules are stored on state
//! grids. Nodes are exact, affine maps are reproduced, and monotonicity
//! survives because the interpolation weights are nonnegative: within a
//! cell the value is `v0 + t * (v1 - v0)` with `v1 >= v0`, every factor
//! of which is rounding-monotone.

use crate::error::Result;
use crate::models::{eval_into, MarkovMap, ParameterBox};
use crate::moments::{map_distance, MapDistance, MomentSpec, OracleConfig};
use crate::shocks::ShockSpec;
use crate::state_space::{Point, StateBox};

/// Multilinear interpolant of a base map over a uniform state lattice.
#[derive(Debug, Clone)]
pub struct InterpolatedMap<M> {
    base: M,
    points_per_dim: usize,
    axes: Vec<Vec<f64>>,
    name: String,
}

/// Builds the interpolant with `points_per_dim` nodes per state
/// dimension (the lattice of the state box, corners included).
pub fn build_interpolant<M: MarkovMap>(
    base: M,
    points_per_dim: usize,
) -> Result<InterpolatedMap<M>> {
    // reuse the lattice cap check without materializing the lattice
    base.state_box().lattice_grid_capped(
        points_per_dim,
        crate::state_space::DEFAULT_GRID_CAP,
    )?;
    let sbox = base.state_box();
    let axes: Vec<Vec<f64>> = (0..sbox.dim())
        .map(|i| {
            let (lo, hi) = (sbox.lower()[i], sbox.upper()[i]);
            let step = (hi - lo) / (points_per_dim - 1) as f64;
            (0..points_per_dim)
                .map(|j| {
                    if j == points_per_dim - 1 {
                        hi
                    } else {
                        lo + step * j as f64
                    }
                })
                .collect()
        })
        .collect();
    let name = format!("interp[{} j={}]", base.name(), points_per_dim);
    Ok(InterpolatedMap {
        base,
        points_per_dim,
        axes,
        name,
    })
}

impl<M: MarkovMap> InterpolatedMap<M> {
    pub fn points_per_dim(&self) -> usize {
        self.points_per_dim
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    /// Cell index and barycentric coordinate along one dimension; the top
    /// node maps to `(last cell, t = 1)` and is special-cased to return
    /// the node value exactly.
    fn locate(&self, dim: usize, x: f64) -> (usize, f64) {
        let axis = &self.axes[dim];
        let n = axis.len();
        let lo = axis[0];
        let step = (axis[n - 1] - lo) / (n - 1) as f64;
        let raw = ((x - lo) / step).floor();
        let cell = (raw.max(0.0) as usize).min(n - 2);
        let width = axis[cell + 1] - axis[cell];
        let t = ((x - axis[cell]) / width).clamp(0.0, 1.0);
        (cell, t)
    }
}

impl<M: MarkovMap> MarkovMap for InterpolatedMap<M> {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_box(&self) -> &StateBox {
        self.base.state_box()
    }

    fn shock_spec(&self) -> &ShockSpec {
        self.base.shock_spec()
    }

    fn param_box(&self) -> &ParameterBox {
        self.base.param_box()
    }

    fn monotone_in_state(&self) -> bool {
        self.base.monotone_in_state()
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        let k = s.len();
        let mut cells = vec![0usize; k];
        let mut ts = vec![0.0; k];
        for d in 0..k {
            let (c, t) = self.locate(d, s[d]);
            cells[d] = c;
            ts[d] = t;
        }
        // evaluate the projected base map at the 2^k surrounding nodes
        let corners = 1usize << k;
        let mut values = vec![0.0; corners * k];
        let mut node = vec![0.0; k];
        for c in 0..corners {
            for d in 0..k {
                let hi = (c >> d) & 1 == 1;
                node[d] = self.axes[d][cells[d] + hi as usize];
            }
            let (head, tail) = values.split_at_mut(c * k);
            let _ = head;
            eval_into(&self.base, &node, eps, theta, &mut tail[..k]);
        }
        // collapse one dimension at a time with the guarded lerp
        let mut width = corners;
        for d in 0..k {
            let t = ts[d];
            width /= 2;
            for c in 0..width {
                for j in 0..k {
                    let v0 = values[(2 * c) * k + j];
                    let v1 = values[(2 * c + 1) * k + j];
                    values[c * k + j] = if t == 1.0 { v1 } else { v0 + t * (v1 - v0) };
                }
            }
        }
        out.copy_from_slice(&values[..k]);
    }
}

/// One rung of the approximation-error ladder.
#[derive(Debug, Clone)]
pub struct ErrorCurvePoint {
    pub resolution: usize,
    /// Max over probe parameters of the map distance to the base.
    pub distance: f64,
    pub std_error: f64,
    pub argmax_state: Point,
    pub argmax_theta: Vec<f64>,
}

/// Distance between the base map and its interpolants over a resolution
/// ladder, sharing shock draws across resolutions and parameters so the
/// ladder ratios carry no Monte Carlo noise of their own.
///
/// The probe lattice is sized so its interior points never coincide with
/// interpolation nodes of the usual dyadic resolutions (a nested probe
/// would report an exactly-zero distance at its own points).
pub fn approx_error_curve<M: MarkovMap + Clone>(
    map: &M,
    theta_probes: &[Vec<f64>],
    resolutions: &[usize],
    mc_draws: usize,
    seed: u64,
) -> Result<Vec<ErrorCurvePoint>> {
    let probe_points = error_probe_points(map.state_box(), seed);
    let mut out = Vec::with_capacity(resolutions.len());
    for &j in resolutions {
        let interp = build_interpolant(map.clone(), j)?;
        let mut best: Option<(MapDistance, Vec<f64>)> = None;
        for theta in theta_probes {
            let d = map_distance(map, &interp, theta, &probe_points, mc_draws, seed)?;
            let better = best.as_ref().map(|(b, _)| d.value > b.value).unwrap_or(true);
            if better {
                best = Some((d, theta.clone()));
            }
        }
        let (d, th) = best.expect("at least one probe theta");
        out.push(ErrorCurvePoint {
            resolution: j,
            distance: d.value,
            std_error: d.std_error,
            argmax_state: d.argmax,
            argmax_theta: th,
        });
    }
    Ok(out)
}

/// Probe set for the error curve: a 50-per-dim lattice for k <= 2 (its
/// spacing is coprime to the dyadic node ladders), Latin hypercube above.
pub fn error_probe_points(sbox: &StateBox, seed: u64) -> Vec<Point> {
    if sbox.dim() <= 2 {
        sbox.lattice_grid(50).expect("50^k within cap for k <= 2")
    } else {
        crate::moments::latin_hypercube(sbox, 1024, seed)
    }
}

/// One rung of the estimation ladder under approximation.
#[derive(Debug, Clone)]
pub struct ApproxEstimationPoint {
    pub resolution: usize,
    pub theta: Vec<f64>,
    /// Max-norm distance to the base-map population solution.
    pub error: f64,
    /// Across-start spread of the oracle moments under the interpolant;
    /// the invariant probability of an approximated map need not be
    /// unique, so the spread is reported rather than assumed away.
    pub oracle_spread: f64,
}

#[derive(Debug, Clone)]
pub struct ApproxEstimationStudy {
    pub theta0: Vec<f64>,
    pub points: Vec<ApproxEstimationPoint>,
}

/// Population-level estimation under each interpolant: data moments come
/// from the base map at `theta_data`,every interpolant is solved with the
/// same oracle seeds, and the distance of each solution to the base-map
/// solution is reported.
pub fn approx_estimation_study<M: MarkovMap + Clone>(
    map: &M,
    spec: &MomentSpec,
    distance: &crate::estimator::DistanceSpec,
    theta_data: &[f64],
    oracle: &OracleConfig,
    search: &crate::estimator::SearchConfig,
    resolutions: &[usize],
) -> Result<ApproxEstimationStudy> {
    let data_oracle = crate::moments::oracle_expectation(map, theta_data, spec, oracle)?;
    let data_stats = distance.stats(spec, &data_oracle.moments);

    let base_solution =
        crate::estimator::population_solve(map, spec, distance, &data_stats, oracle, search)?;
    let theta0 = base_solution.theta.clone();

    let mut points = Vec::with_capacity(resolutions.len());
    for &j in resolutions {
        let interp = build_interpolant(map.clone(), j)?;
        let sol = crate::estimator::population_solve(
            &interp, spec, distance, &data_stats, oracle, search,
        )?;
        let spread = crate::moments::oracle_expectation(&interp, &sol.theta, spec, oracle)?
            .max_spread;
        let error = sol
            .theta
            .iter()
            .zip(&theta0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        points.push(ApproxEstimationPoint {
            resolution: j,
            theta: sol.theta,
            error,
            oracle_spread: spread,
        });
    }
    Ok(ApproxEstimationStudy { theta0, points })
}
