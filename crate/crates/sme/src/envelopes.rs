//! Majorizing and minorizing envelope maps.
//!
//! For a monotone map `phi` and `kappa >= 0`, the majorant is
//! `proj[ phi(proj[s + kappa e], eps, theta) + kappa e ]` and the minorant
//! is the mirror image with `-kappa e`. Because projection preserves the
//! componentwise order and `phi` is increasing in the state, the majorant
//! dominates the base map pointwise and the minorant is dominated by it.
//! That is an algebraic fact and it holds exactly in floating point, which
//! is why the dominance checks below run at zero tolerance.
//!
//! Envelopes at a center parameter also dominate the base map at *nearby*
//! parameters (the continuity-in-parameters condition); how wide "nearby"
//! can be is an empirical question answered per model by
//! [`check_parameter_neighborhood`].

use crate::error::{Result, SmeError};
use crate::models::{eval_into, MarkovMap, ParameterBox};
use crate::shocks::ShockSpec;
use crate::state_space::{leq_coords, StateBox};

/// Which side of the base map an envelope sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeSide {
    Majorant,
    Minorant,
}

/// A kappa-shifted envelope of a base map; itself a [`MarkovMap`], so all
/// simulation and moment machinery applies unchanged.
#[derive(Debug, Clone)]
pub struct EnvelopeMap<M> {
    base: M,
    kappa: f64,
    side: EnvelopeSide,
    name: String,
}

impl<M: MarkovMap> EnvelopeMap<M> {
    fn new(base: M, kappa: f64, side: EnvelopeSide) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(SmeError::NegativeKappa(kappa));
        }
        let tag = match side {
            EnvelopeSide::Majorant => "majorant",
            EnvelopeSide::Minorant => "minorant",
        };
        let name = format!("{}[{} k={}]", tag, base.name(), kappa);
        Ok(EnvelopeMap {
            base,
            kappa,
            side,
            name,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn side(&self) -> EnvelopeSide {
        self.side
    }

    pub fn base(&self) -> &M {
        &self.base
    }
}

/// `phi^kappa`: shifts the state up by `kappa e` before the step and the
/// result up by `kappa e` after it, projecting both times.
pub fn majorize<M: MarkovMap>(base: M, kappa: f64) -> Result<EnvelopeMap<M>> {
    EnvelopeMap::new(base, kappa, EnvelopeSide::Majorant)
}

/// `phi_kappa`: the downward mirror image of [`majorize`].
pub fn minorize<M: MarkovMap>(base: M, kappa: f64) -> Result<EnvelopeMap<M>> {
    EnvelopeMap::new(base, kappa, EnvelopeSide::Minorant)
}

impl<M: MarkovMap> MarkovMap for EnvelopeMap<M> {
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
        let shift = match self.side {
            EnvelopeSide::Majorant => self.kappa,
            EnvelopeSide::Minorant => -self.kappa,
        };
        let mut inner: Vec<f64> = s.iter().map(|&v| v + shift).collect();
        self.base.state_box().project_in_place(&mut inner);
        // full projected base step, then the outer shift; the caller's
        // projection completes the composition
        eval_into(&self.base, &inner, eps, theta, out);
        for v in out.iter_mut() {
            *v += shift;
        }
    }
}

// Reference and box delegation so envelopes can wrap borrowed or boxed
// dynamic maps without cloning.
impl<M: MarkovMap + ?Sized> MarkovMap for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn state_box(&self) -> &StateBox {
        (**self).state_box()
    }
    fn shock_spec(&self) -> &ShockSpec {
        (**self).shock_spec()
    }
    fn param_box(&self) -> &ParameterBox {
        (**self).param_box()
    }
    fn monotone_in_state(&self) -> bool {
        (**self).monotone_in_state()
    }
    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).transition_raw(s, eps, theta, out)
    }
}

impl<M: MarkovMap + ?Sized> MarkovMap for Box<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn state_box(&self) -> &StateBox {
        (**self).state_box()
    }
    fn shock_spec(&self) -> &ShockSpec {
        (**self).shock_spec()
    }
    fn param_box(&self) -> &ParameterBox {
        (**self).param_box()
    }
    fn monotone_in_state(&self) -> bool {
        (**self).monotone_in_state()
    }
    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).transition_raw(s, eps, theta, out)
    }
}

/// Witness of a dominance failure.
#[derive(Debug, Clone)]
pub struct DominanceViolation {
    pub s: Vec<f64>,
    pub eps: Vec<f64>,
    pub theta: Vec<f64>,
    pub majorant: Vec<f64>,
    pub base: Vec<f64>,
    pub minorant: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DominanceReport {
    pub model: String,
    pub kappa: f64,
    pub n_samples: usize,
    pub violations: usize,
    pub witness: Option<DominanceViolation>,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Verifies `majorant >= base >= minorant` componentwise over random
/// `(s, eps, theta)` samples. Zero tolerance: any violation is a bug in
/// the map's monotonicity, not sampling noise.
pub fn check_dominance<M: MarkovMap + ?Sized>(
    map: &M,
    kappa: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DominanceReport> {
    let upper = majorize(&map, kappa)?;
    let lower = minorize(&map, kappa)?;
    let sbox = map.state_box();
    let pbox = map.param_box();
    let k = sbox.dim();
    let dim_e = map.shock_spec().dim_e();
    let mut sampler = crate::simulate::UniformSampler::new(seed, 2);

    let mut violations = 0usize;
    let mut witness = None;
    let (mut hi, mut mid, mut lo) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);

    for _ in 0..n_samples {
        let s: Vec<f64> = (0..k)
            .map(|i| sbox.lower()[i] + sampler.next_f64() * (sbox.upper()[i] - sbox.lower()[i]))
            .collect();
        let theta: Vec<f64> = (0..pbox.dim())
            .map(|i| pbox.lower()[i] + sampler.next_f64() * (pbox.upper()[i] - pbox.lower()[i]))
            .collect();
        let u: Vec<f64> = (0..dim_e).map(|_| sampler.next_f64()).collect();
        let eps = map.shock_spec().quantile(&u, &theta);

        eval_into(&upper, &s, &eps, &theta, &mut hi);
        eval_into(&map, &s, &eps, &theta, &mut mid);
        eval_into(&lower, &s, &eps, &theta, &mut lo);

        if !leq_coords(&mid, &hi) || !leq_coords(&lo, &mid) {
            violations += 1;
            if witness.is_none() {
                witness = Some(DominanceViolation {
                    s,
                    eps,
                    theta,
                    majorant: hi.clone(),
                    base: mid.clone(),
                    minorant: lo.clone(),
                });
            }
        }
    }

    Ok(DominanceReport {
        model: map.name().to_string(),
        kappa,
        n_samples,
        violations,
        witness,
    })
}

#[derive(Debug, Clone)]
pub struct NeighborhoodReport {
    pub model: String,
    pub kappa: f64,
    pub theta_center: Vec<f64>,
    pub radius: f64,
    pub n_samples: usize,
    pub violations: usize,
    /// Largest max-norm distance rung (of the tested ladder) that passed
    /// with every rung below it clean; 0 if even the smallest rung failed.
    pub largest_passing_radius: f64,
    pub witness_theta: Option<Vec<f64>>,
}

impl NeighborhoodReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples parameters `theta'` in the max-norm ball of the given radius
/// around the center (intersected with the parameter box) and verifies
/// the envelope dominance `phi^kappa(., theta) >= phi(., theta') >=
/// phi_kappa(., theta)` over random `(s, u)`, where both sides see the
/// same base uniform and apply their own parameter's quantile transform.
///
/// Distances are tested in an increasing ladder of rungs, so the report
/// can name the largest radius that held.
pub fn check_parameter_neighborhood<M: MarkovMap + ?Sized>(
    map: &M,
    theta_center: &[f64],
    kappa: f64,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<NeighborhoodReport> {
    map.param_box().check_contains(theta_center)?;
    if !(radius > 0.0) {
        return Err(SmeError::InvalidEstimation(format!(
            "neighborhood radius must be > 0, got {radius}"
        )));
    }
    let upper = majorize(&map, kappa)?;
    let lower = minorize(&map, kappa)?;
    let sbox = map.state_box();
    let pbox = map.param_box();
    let k = sbox.dim();
    let l = pbox.dim();
    let dim_e = map.shock_spec().dim_e();
    let mut sampler = crate::simulate::UniformSampler::new(seed, 3);

    const RUNGS: usize = 8;
    let per_rung = (n_samples / RUNGS).max(1);
    let mut violations = 0usize;
    let mut witness_theta = None;
    let mut largest_passing = 0.0f64;
    let mut all_below_clean = true;
    let (mut hi, mut mid, mut lo) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);

    for rung in 1..=RUNGS {
        let r = radius * rung as f64 / RUNGS as f64;
        let mut rung_clean = true;
        for sample in 0..per_rung {
            // alternate random interior offsets with extreme corners of
            // the max-norm sphere at this rung
            let theta_p: Vec<f64> = if sample % 2 == 0 {
                (0..l)
                    .map(|i| theta_center[i] + (2.0 * sampler.next_f64() - 1.0) * r)
                    .collect()
            } else {
                (0..l)
                    .map(|i| {
                        let sign = if sampler.next_f64() < 0.5 { -1.0 } else { 1.0 };
                        theta_center[i] + sign * r
                    })
                    .collect()
            };
            let theta_p = pbox.clamp(&theta_p);

            let s: Vec<f64> = (0..k)
                .map(|i| {
                    sbox.lower()[i] + sampler.next_f64() * (sbox.upper()[i] - sbox.lower()[i])
                })
                .collect();
            let u: Vec<f64> = (0..dim_e).map(|_| sampler.next_f64()).collect();
            let eps_center = map.shock_spec().quantile(&u, theta_center);
            let eps_p = map.shock_spec().quantile(&u, &theta_p);

            eval_into(&upper, &s, &eps_center, theta_center, &mut hi);
            eval_into(&map, &s, &eps_p, &theta_p, &mut mid);
            eval_into(&lower, &s, &eps_center, theta_center, &mut lo);

            if !leq_coords(&mid, &hi) || !leq_coords(&lo, &mid) {
                violations += 1;
                rung_clean = false;
                if witness_theta.is_none() {
                    witness_theta = Some(theta_p.clone());
                }
            }
        }
        if rung_clean && all_below_clean {
            largest_passing = r;
        } else {
            all_below_clean = false;
        }
    }

    Ok(NeighborhoodReport {
        model: map.name().to_string(),
        kappa,
        theta_center: theta_center.to_vec(),
        radius,
        n_samples: per_rung * RUNGS,
        violations,
        largest_passing_radius: largest_passing,
        witness_theta,
    })
}
