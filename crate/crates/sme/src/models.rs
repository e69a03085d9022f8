//! The random dynamical system abstraction and the model zoo.
//!
//! A [`MarkovMap`] is a deterministic transition rule `(s, eps, theta) ->
//! s'` on a box state space, composed with the natural projection into the
//! box. Monotonicity in `s` for every fixed `(eps, theta)` is the load-
//! bearing structural property: every coupling, envelope and sandwich
//! argument in this crate reduces to it.
//!
//! Zoo maps are written so monotonicity holds *exactly in floating point*:
//! every arithmetic path from a state coordinate to an output coordinate
//! goes through rounding-monotone operations (adds/multiplies by shared
//! operands with nonnegative coefficients, monotone branches, clamps).

use crate::error::{Result, SmeError};
use crate::shocks::ShockSpec;
use crate::state_space::{leq_coords, Point, StateBox};

/// Compact parameter domain `Theta`, a box in `R^l` with named coordinates.
/// Degenerate (singleton) coordinates are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<String>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, names: Vec<&str>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != names.len() {
            return Err(SmeError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len().max(names.len()),
            });
        }
        if lower.is_empty() {
            return Err(SmeError::DimensionMismatch { expected: 1, got: 0 });
        }
        for (i, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(SmeError::NonFinite {
                    index: i,
                    value: if a.is_finite() { b } else { a },
                });
            }
            if a > b {
                return Err(SmeError::InvalidBox {
                    index: i,
                    lower: a,
                    upper: b,
                });
            }
        }
        Ok(ParameterBox {
            lower,
            upper,
            names: names.into_iter().map(String::from).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&a, &b))| a <= v && v <= b)
    }

    pub fn check_contains(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(SmeError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        for (i, &v) in theta.iter().enumerate() {
            if v < self.lower[i] || v > self.upper[i] {
                return Err(SmeError::OutOfBounds {
                    space: "parameter box",
                    index: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// Clamp a candidate into the box (used by search refinement).
    pub fn clamp(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &v)| v.max(self.lower[i]).min(self.upper[i]))
            .collect()
    }
}

/// A parameterized monotone random dynamical system on a box.
pub trait MarkovMap: Send + Sync {
    fn name(&self) -> &str;
    fn state_box(&self) -> &StateBox;
    fn shock_spec(&self) -> &ShockSpec;
    fn param_box(&self) -> &ParameterBox;

    /// Declared monotone-in-state flag; verified empirically by
    /// [`check_monotone`], never assumed by it.
    fn monotone_in_state(&self) -> bool {
        true
    }

    /// The transition rule *before* the final projection into the state
    /// box. `out` has the state dimension.
    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]);
}

/// One projected step; returns whether the projection clamped anything.
/// No validation: hot-path helper for simulation loops.
pub fn eval_into<M: MarkovMap + ?Sized>(
    map: &M,
    s: &[f64],
    eps: &[f64],
    theta: &[f64],
    out: &mut [f64],
) -> bool {
    map.transition_raw(s, eps, theta, out);
    map.state_box().project_in_place(out)
}

/// Validated single evaluation of the projected map.
pub fn eval_map<M: MarkovMap + ?Sized>(
    map: &M,
    s: &Point,
    eps: &[f64],
    theta: &[f64],
) -> Result<Point> {
    map.state_box().check_contains(s, "state box")?;
    map.param_box().check_contains(theta)?;
    if eps.len() != map.shock_spec().dim_e() {
        return Err(SmeError::DimensionMismatch {
            expected: map.shock_spec().dim_e(),
            got: eps.len(),
        });
    }
    let mut out = vec![0.0; map.state_box().dim()];
    eval_into(map, s.coords(), eps, theta, &mut out);
    Ok(Point::new(out)?)
}

// ---------------------------------------------------------------------------
// Zoo: threshold jump
// ---------------------------------------------------------------------------

/// Scalar map with an upward jump: `t = s + eps + theta`, mapped to `t`
/// when `t <= 2` and to `t + 5` when `t > 2`, then projected.
///
/// Increasing in `s` on each branch and across the branch switch (the jump
/// goes up), so monotone overall.
#[derive(Debug, Clone)]
pub struct ThresholdJump {
    state_box: StateBox,
    shocks: ShockSpec,
    params: ParameterBox,
    name: String,
}

impl ThresholdJump {
    pub const THRESHOLD: f64 = 2.0;
    pub const JUMP: f64 = 5.0;

    /// Wide-box parameterization: `S = [0, 10]`, `eps ~ N(0, 0.5)`.
    ///
    /// Faithful to the textbook presentation of the example, and the right
    /// object for the exact order diagnostics (dominance, sandwich,
    /// coupling). Not suitable for moment-based estimation at desk scale:
    /// the upper branch is an absorbing trap (returning below the
    /// threshold from the top is a ~10-sigma event), so the invariant
    /// distribution is numerically a point mass at the top for every
    /// theta. See [`ThresholdJump::ergodic`].
    pub fn new() -> Self {
        Self::with_bounds(0.0, 10.0, 0.5, "threshold")
    }

    /// Compact-box, large-shock parameterization: `S = [0, 3.4]`,
    /// `eps ~ N(0, 1)`.
    ///
    /// The clamp at 3.4 keeps the upper branch within one shock standard
    /// deviation or so of the threshold, so the chain switches regimes
    /// every few dozen steps and has a genuinely theta-dependent invariant
    /// distribution. This is the variant the ergodic studies (uniform LLN,
    /// envelope continuity, estimation consistency, interpolation ladder)
    /// run on.
    pub fn ergodic() -> Self {
        Self::with_bounds(0.0, 3.4, 1.0, "threshold-ergodic")
    }

    /// Custom state bounds and shock scale, same transition rule.
    pub fn with_bounds(lo: f64, hi: f64, shock_sd: f64, name: &str) -> Self {
        ThresholdJump {
            state_box: StateBox::scalar(lo, hi).expect("valid threshold bounds"),
            shocks: ShockSpec::gaussian(0.0, shock_sd),
            params: ParameterBox::new(vec![-0.5], vec![0.5], vec!["theta"]).unwrap(),
            name: name.to_string(),
        }
    }
}

impl Default for ThresholdJump {
    fn default() -> Self {
        Self::new()
    }
}

impl MarkovMap for ThresholdJump {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    fn shock_spec(&self) -> &ShockSpec {
        &self.shocks
    }

    fn param_box(&self) -> &ParameterBox {
        &self.params
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        let t = s[0] + eps[0] + theta[0];
        out[0] = if t <= Self::THRESHOLD { t } else { t + Self::JUMP };
    }
}

// ---------------------------------------------------------------------------
// Zoo: log growth
// ---------------------------------------------------------------------------

/// Log-linear growth map `x' = ln(alpha * beta) + alpha * x + eps` with
/// `eps ~ N(0, sigma)`, `theta = (alpha, sigma)` and fixed `beta`.
///
/// A stationary AR(1) in disguise, which makes it the analytic oracle of
/// the zoo: mean `ln(alpha beta) / (1 - alpha)` and variance
/// `sigma^2 / (1 - alpha^2)` are known in closed form.
#[derive(Debug, Clone)]
pub struct LogGrowth {
    state_box: StateBox,
    shocks: ShockSpec,
    params: ParameterBox,
    beta: f64,
}

impl LogGrowth {
    pub const BETA: f64 = 0.95;

    pub fn new() -> Self {
        LogGrowth {
            state_box: StateBox::scalar(-6.0, 2.0).unwrap(),
            // sd is read from theta[1]
            shocks: ShockSpec::gaussian_sd_from_theta(0.0, 1),
            params: ParameterBox::new(
                vec![0.1, 0.01],
                vec![0.9, 0.5],
                vec!["alpha", "sigma"],
            )
            .unwrap(),
            beta: Self::BETA,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Stationary mean of the unclamped AR(1).
    pub fn stationary_mean(&self, alpha: f64) -> f64 {
        (alpha * self.beta).ln() / (1.0 - alpha)
    }

    /// Stationary variance of the unclamped AR(1).
    pub fn stationary_variance(&self, alpha: f64, sigma: f64) -> f64 {
        sigma * sigma / (1.0 - alpha * alpha)
    }
}

impl Default for LogGrowth {
    fn default() -> Self {
        Self::new()
    }
}

impl MarkovMap for LogGrowth {
    fn name(&self) -> &str {
        "log-growth"
    }

    fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    fn shock_spec(&self) -> &ShockSpec {
        &self.shocks
    }

    fn param_box(&self) -> &ParameterBox {
        &self.params
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        let alpha = theta[0];
        out[0] = (alpha * self.beta).ln() + alpha * s[0] + eps[0];
    }
}

// ---------------------------------------------------------------------------
// Zoo: adoption diffusion
// ---------------------------------------------------------------------------

/// Reduced-form technology diffusion with constant adoption probability.
///
/// State `(ln x, Z, A)`; `theta = (phi_x, sigma_x, lambda)`:
///
/// ```text
/// ln x' = phi_x * ln x + eps
/// Z'    = phi * Z + exp(ln x')
/// A'    = lambda * Z + (phi - lambda) * A
/// ```
///
/// with fixed survival rate `phi = 0.97`. `A'` is the adoption recursion
/// `A' = lambda (Z - A) + phi A` rearranged into nonnegative-coefficient
/// form so monotonicity in `A` is exact in floating point
/// (`phi - lambda >= 0.47` on the parameter box).
#[derive(Debug, Clone)]
pub struct AdoptionDiffusion {
    state_box: StateBox,
    shocks: ShockSpec,
    params: ParameterBox,
    phi: f64,
}

impl AdoptionDiffusion {
    pub const PHI: f64 = 0.97;
    /// Default steady-state adoption probability.
    pub const LAMBDA_BAR: f64 = 0.1;

    pub fn new() -> Self {
        AdoptionDiffusion {
            state_box: StateBox::new(vec![-8.0, 0.0, 0.0], vec![8.0, 200.0, 200.0]).unwrap(),
            shocks: ShockSpec::gaussian_sd_from_theta(0.0, 1),
            params: ParameterBox::new(
                vec![0.1, 0.01, 0.01],
                vec![0.99, 0.5, 0.5],
                vec!["phi_x", "sigma_x", "lambda"],
            )
            .unwrap(),
            phi: Self::PHI,
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Deterministic-skeleton fixed point `(0, Z*, A*)` for `eps = 0`.
    pub fn skeleton_fixed_point(&self, lambda: f64) -> Point {
        let z_star = 1.0 / (1.0 - self.phi);
        let a_star = lambda * z_star / (1.0 - self.phi + lambda);
        Point::new(vec![0.0, z_star, a_star]).unwrap()
    }
}

impl Default for AdoptionDiffusion {
    fn default() -> Self {
        Self::new()
    }
}

impl MarkovMap for AdoptionDiffusion {
    fn name(&self) -> &str {
        "adoption"
    }

    fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    fn shock_spec(&self) -> &ShockSpec {
        &self.shocks
    }

    fn param_box(&self) -> &ParameterBox {
        &self.params
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        let (lnx, z, a) = (s[0], s[1], s[2]);
        let (phi_x, lambda) = (theta[0], theta[2]);
        let lnx_next = phi_x * lnx + eps[0];
        out[0] = lnx_next;
        out[1] = self.phi * z + lnx_next.exp();
        out[2] = lambda * z + (self.phi - lambda) * a;
    }
}

// ---------------------------------------------------------------------------
// Fixtures: constant, decreasing, bistable
// ---------------------------------------------------------------------------

/// Degenerate map `s' = c`, weakly increasing; used as the trivial case in
/// most diagnostics.
#[derive(Debug, Clone)]
pub struct ConstantMap {
    state_box: StateBox,
    shocks: ShockSpec,
    params: ParameterBox,
    value: Vec<f64>,
}

impl ConstantMap {
    pub fn new(state_box: StateBox, value: Point) -> Result<Self> {
        state_box.check_contains(&value, "state box")?;
        Ok(ConstantMap {
            state_box,
            shocks: ShockSpec::gaussian(0.0, 1.0),
            params: ParameterBox::new(vec![-0.5], vec![0.5], vec!["theta"]).unwrap(),
            value: value.into_coords(),
        })
    }

    /// Scalar constant map at `c` on `[0, 1]`-padded bounds around it.
    pub fn scalar(c: f64) -> Self {
        ConstantMap::new(
            StateBox::scalar(c - 1.0, c + 1.0).unwrap(),
            Point::scalar(c).unwrap(),
        )
        .unwrap()
    }
}

impl MarkovMap for ConstantMap {
    fn name(&self) -> &str {
        "constant"
    }

    fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    fn shock_spec(&self) -> &ShockSpec {
        &self.shocks
    }

    fn param_box(&self) -> &ParameterBox {
        &self.params
    }

    fn transition_raw(&self, _s: &[f64], _eps: &[f64], _theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}

/// Order-reversing map `s' = proj(-s + eps)`: deliberately violates
/// monotonicity so the diagnostics have a designed failure case.
#[derive(Debug, Clone)]
pub struct DecreasingMap {
    state_box: StateBox,
    shocks: ShockSpec,
    params: ParameterBox,
}

impl DecreasingMap {
    pub fn new() -> Self {
        DecreasingMap {
            state_box: StateBox::scalar(-5.0, 5.0).unwrap(),
            shocks: ShockSpec::gaussian(0.0, 1.0),
            params: ParameterBox::new(vec![-0.5], vec![0.5], vec!["theta"]).unwrap(),
        }
    }
}

impl Default for DecreasingMap {
    fn default() -> Self {
        Self::new()
    }
}

impl MarkovMap for DecreasingMap {
    fn name(&self) -> &str {
        "decreasing"
    }

    fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    fn shock_spec(&self) -> &ShockSpec {
        &self.shocks
    }

    fn param_box(&self) -> &ParameterBox {
        &self.params
    }

    fn monotone_in_state(&self) -> bool {
        false
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = -s[0] + eps[0];
    }
}

/// Monotone but bistable map `s' = proj(1.6 s - 0.3 + eps)` on `[0, 1]`
/// with `eps ~ N(0, 0.05)`: two absorbing clamp regions, so the invariant
/// probability is not unique at desk scale. Exists to prove the
/// uniqueness diagnostic can detect an (A.5) failure.
#[derive(Debug, Clone)]
pub struct BistableMap {
    state_box: StateBox,
    shocks: ShockSpec,
    params: ParameterBox,
}

impl BistableMap {
    pub fn new() -> Self {
        BistableMap {
            state_box: StateBox::scalar(0.0, 1.0).unwrap(),
            shocks: ShockSpec::gaussian(0.0, 0.05),
            params: ParameterBox::new(vec![-0.5], vec![0.5], vec!["theta"]).unwrap(),
        }
    }
}

impl Default for BistableMap {
    fn default() -> Self {
        Self::new()
    }
}

impl MarkovMap for BistableMap {
    fn name(&self) -> &str {
        "bistable"
    }

    fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    fn shock_spec(&self) -> &ShockSpec {
        &self.shocks
    }

    fn param_box(&self) -> &ParameterBox {
        &self.params
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 1.6 * s[0] - 0.3 + eps[0];
    }
}

/// A zoo map with configuration overrides: replacement state box (which
/// only changes where the projection clamps), shock law, or parameter
/// box. The transition formula itself is untouched.
pub struct CustomizedMap {
    base: Box<dyn MarkovMap>,
    state_box: Option<StateBox>,
    shocks: Option<ShockSpec>,
    params: Option<ParameterBox>,
    name: String,
}

impl CustomizedMap {
    pub fn new(
        base: Box<dyn MarkovMap>,
        state_box: Option<StateBox>,
        shocks: Option<ShockSpec>,
        params: Option<ParameterBox>,
    ) -> Result<Self> {
        if let Some(sb) = &state_box {
            if sb.dim() != base.state_box().dim() {
                return Err(SmeError::DimensionMismatch {
                    expected: base.state_box().dim(),
                    got: sb.dim(),
                });
            }
        }
        if let Some(sp) = &shocks {
            if sp.dim_e() != base.shock_spec().dim_e() {
                return Err(SmeError::DimensionMismatch {
                    expected: base.shock_spec().dim_e(),
                    got: sp.dim_e(),
                });
            }
        }
        if let Some(pb) = &params {
            if pb.dim() != base.param_box().dim() {
                return Err(SmeError::DimensionMismatch {
                    expected: base.param_box().dim(),
                    got: pb.dim(),
                });
            }
        }
        let name = base.name().to_string();
        Ok(CustomizedMap {
            base,
            state_box,
            shocks,
            params,
            name,
        })
    }
}

impl MarkovMap for CustomizedMap {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_box(&self) -> &StateBox {
        self.state_box.as_ref().unwrap_or_else(|| self.base.state_box())
    }

    fn shock_spec(&self) -> &ShockSpec {
        self.shocks.as_ref().unwrap_or_else(|| self.base.shock_spec())
    }

    fn param_box(&self) -> &ParameterBox {
        self.params.as_ref().unwrap_or_else(|| self.base.param_box())
    }

    fn monotone_in_state(&self) -> bool {
        self.base.monotone_in_state()
    }

    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        self.base.transition_raw(s, eps, theta, out)
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

pub const MODEL_IDS: &str =
    "threshold, threshold-ergodic, log-growth, adoption, constant, decreasing, bistable";

/// Look up a model by its CLI identifier.
pub fn model_by_id(id: &str) -> Result<Box<dyn MarkovMap>> {
    match id {
        "threshold" => Ok(Box::new(ThresholdJump::new())),
        "threshold-ergodic" => Ok(Box::new(ThresholdJump::ergodic())),
        "log-growth" => Ok(Box::new(LogGrowth::new())),
        "adoption" => Ok(Box::new(AdoptionDiffusion::new())),
        "constant" => Ok(Box::new(ConstantMap::scalar(0.5))),
        "decreasing" => Ok(Box::new(DecreasingMap::new())),
        "bistable" => Ok(Box::new(BistableMap::new())),
        other => Err(SmeError::UnknownModel(other.to_string(), MODEL_IDS)),
    }
}

/// The monotone zoo proper (the fixtures are not part of it).
pub fn zoo_models() -> Vec<Box<dyn MarkovMap>> {
    vec![
        Box::new(ThresholdJump::new()),
        Box::new(ThresholdJump::ergodic()),
        Box::new(LogGrowth::new()),
        Box::new(AdoptionDiffusion::new()),
    ]
}

// ---------------------------------------------------------------------------
// Monotonicity and Feller diagnostics
// ---------------------------------------------------------------------------

/// Witness of a monotonicity violation.
#[derive(Debug, Clone)]
pub struct MonotoneViolation {
    pub s_low: Vec<f64>,
    pub s_high: Vec<f64>,
    pub eps: Vec<f64>,
    pub theta: Vec<f64>,
    pub out_low: Vec<f64>,
    pub out_high: Vec<f64>,
    /// Largest coordinatewise amount by which the order is broken.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct MonotoneReport {
    pub model: String,
    pub n_pairs: usize,
    pub violations: usize,
    pub worst: Option<MonotoneViolation>,
}

impl MonotoneReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples ordered state pairs `s_high >= s_low` (built by adding a
/// nonnegative vector and projecting) with random shocks and parameters,
/// and counts order violations of the evaluated map.
pub fn check_monotone<M: MarkovMap + ?Sized>(
    map: &M,
    n_pairs: usize,
    seed: u64,
) -> MonotoneReport {
    let mut sampler = crate::simulate::UniformSampler::new(seed, 0);
    let sbox = map.state_box();
    let k = sbox.dim();
    let dim_e = map.shock_spec().dim_e();
    let pbox = map.param_box();

    let mut violations = 0usize;
    let mut worst: Option<MonotoneViolation> = None;
    let mut out_low = vec![0.0; k];
    let mut out_high = vec![0.0; k];

    for _ in 0..n_pairs {
        let s_low: Vec<f64> = (0..k)
            .map(|i| sbox.lower()[i] + sampler.next_f64() * (sbox.upper()[i] - sbox.lower()[i]))
            .collect();
        let mut s_high: Vec<f64> = s_low
            .iter()
            .enumerate()
            .map(|(i, &v)| v + sampler.next_f64() * 0.5 * (sbox.upper()[i] - sbox.lower()[i]))
            .collect();
        sbox.project_in_place(&mut s_high);

        let theta: Vec<f64> = (0..pbox.dim())
            .map(|i| pbox.lower()[i] + sampler.next_f64() * (pbox.upper()[i] - pbox.lower()[i]))
            .collect();
        let u: Vec<f64> = (0..dim_e).map(|_| sampler.next_f64()).collect();
        let eps = map.shock_spec().quantile(&u, &theta);

        eval_into(map, &s_low, &eps, &theta, &mut out_low);
        eval_into(map, &s_high, &eps, &theta, &mut out_high);

        if !leq_coords(&out_low, &out_high) {
            violations += 1;
            let gap = out_low
                .iter()
                .zip(&out_high)
                .map(|(&lo, &hi)| lo - hi)
                .fold(0.0, f64::max);
            let is_worse = worst.as_ref().map(|w| gap > w.gap).unwrap_or(true);
            if is_worse {
                worst = Some(MonotoneViolation {
                    s_low: s_low.clone(),
                    s_high: s_high.clone(),
                    eps: eps.clone(),
                    theta: theta.clone(),
                    out_low: out_low.clone(),
                    out_high: out_high.clone(),
                    gap,
                });
            }
        }
    }

    MonotoneReport {
        model: map.name().to_string(),
        n_pairs,
        violations,
        worst,
    }
}

#[derive(Debug, Clone)]
pub struct FellerReport {
    pub model: String,
    pub state: Vec<f64>,
    /// Step sizes `h_j = 2^-j`.
    pub steps: Vec<f64>,
    /// `g[d][j]` for direction `d` and step `j`.
    pub gaps: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference probe of the Feller property: for random unit
/// directions `d` and shrinking steps `h_j`, compares Monte Carlo
/// expectations of `f` after one step from `s + h_j d` and from `s`,
/// sharing the shock sample. Decay of the gap is evidence of weak
/// continuity, not a proof.
pub fn check_feller<M: MarkovMap + ?Sized>(
    map: &M,
    f: &dyn Fn(&[f64]) -> f64,
    theta: &[f64],
    s: &Point,
    n_dirs: usize,
    mc_draws: usize,
    n_steps: u32,
    tolerance: f64,
    seed: u64,
) -> Result<FellerReport> {
    map.state_box().check_contains(s, "state box")?;
    map.param_box().check_contains(theta)?;
    let mut sampler = crate::simulate::UniformSampler::new(seed, 1);
    let k = map.state_box().dim();
    let dim_e = map.shock_spec().dim_e();

    // shared shock sample across all states and steps
    let eps_draws: Vec<Vec<f64>> = (0..mc_draws)
        .map(|_| {
            let u: Vec<f64> = (0..dim_e).map(|_| sampler.next_f64()).collect();
            map.shock_spec().quantile(&u, theta)
        })
        .collect();

    let mc_mean = |state: &[f64]| -> f64 {
        let mut out = vec![0.0; k];
        let mut acc = 0.0;
        for eps in &eps_draws {
            eval_into(map, state, eps, theta, &mut out);
            acc += f(&out);
        }
        acc / mc_draws as f64
    };
    let base = mc_mean(s.coords());

    let steps: Vec<f64> = (1..=n_steps).map(|j| 0.5f64.powi(j as i32)).collect();
    let mut gaps = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        // random unit direction
        let mut d: Vec<f64> = (0..k)
            .map(|_| crate::shocks::normal_quantile(sampler.next_f64()))
            .collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            d.iter_mut().for_each(|v| *v /= norm);
        } else {
            d[0] = 1.0;
        }

        let mut row = Vec::with_capacity(steps.len());
        for &h in &steps {
            let mut shifted: Vec<f64> = s
                .coords()
                .iter()
                .zip(&d)
                .map(|(&v, &dv)| v + h * dv)
                .collect();
            map.state_box().project_in_place(&mut shifted);
            row.push((mc_mean(&shifted) - base).abs());
        }
        gaps.push(row);
    }

    let last = steps.len() - 1;
    let passed = gaps.iter().all(|row| row[last] <= tolerance);
    Ok(FellerReport {
        model: map.name().to_string(),
        state: s.coords().to_vec(),
        steps,
        gaps,
        tolerance,
        passed,
    })
}
