//! Experiment configuration: one TOML file with explicit sections.
//!
//! Unknown keys are hard errors, every default becomes explicit after
//! [`ExperimentConfig::normalize`], and all randomness flows from the
//! named seeds in the `[seeds]` section; nothing reads the clock.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmeError};
use crate::models::{model_by_id, CustomizedMap, MarkovMap, ParameterBox};
use crate::moments::{Derived, MomentSpec, Primitive};
use crate::shocks::{ShockCoord, ShockFamily, ShockSpec};
use crate::state_space::StateBox;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub shocks: Option<ShocksSection>,
    #[serde(default)]
    pub theta_box: Option<ThetaBoxSection>,
    #[serde(default)]
    pub moments: MomentsSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Zoo identifier, e.g. "threshold-ergodic".
    pub id: String,
    /// Optional replacement state bounds (projection box).
    #[serde(default)]
    pub state_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub state_upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShocksSection {
    pub coords: Vec<ShockCoordConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShockCoordConfig {
    /// One of "uniform", "gaussian", "truncated-gaussian", "constant".
    pub family: String,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub sd: f64,
    #[serde(default)]
    pub lo: f64,
    #[serde(default)]
    pub hi: f64,
    #[serde(default)]
    pub value: f64,
    #[serde(default)]
    pub sd_from_theta: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ThetaBoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct MomentsSection {
    /// Observable state coordinates (0-based); empty means all.
    #[serde(default)]
    pub observable: Vec<usize>,
    /// Empty means the per-model default (mean and dispersion of the
    /// first observable coordinate).
    #[serde(default)]
    pub primitives: Vec<PrimitiveConfig>,
    #[serde(default)]
    pub derived: Vec<DerivedConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveConfig {
    /// "coord" or "shifted-power".
    pub kind: String,
    pub index: usize,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift: Option<f64>,
    #[serde(default = "two")]
    pub power: u32,
    #[serde(default)]
    pub name: Option<String>,
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DerivedConfig {
    /// "identity", "variance" or "std-dev".
    pub kind: String,
    #[serde(default)]
    pub primitive: usize,
    #[serde(default)]
    pub sq: usize,
    #[serde(default)]
    pub mean: usize,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    /// "primitives" or "derived".
    #[serde(default = "default_statistics")]
    pub statistics: String,
    /// Explicit weights, or empty to use `weighting`.
    #[serde(default)]
    pub weights: Vec<f64>,
    /// "unit" | "bootstrap" | "volatility-match".
    #[serde(default = "default_weighting")]
    pub weighting: String,
    #[serde(default = "one")]
    pub horizon_c: f64,
    /// 0 means no cap.
    #[serde(default)]
    pub horizon_cap: usize,
    #[serde(default = "default_levels")]
    pub search_levels: usize,
    #[serde(default = "default_points")]
    pub search_points: usize,
    #[serde(default = "default_shrink")]
    pub search_shrink: f64,
    #[serde(default)]
    pub polish: bool,
    #[serde(default)]
    pub fixed_indices: Vec<usize>,
    #[serde(default)]
    pub fixed_values: Vec<f64>,
    /// Synthetic data-generating parameter (empty: use data_csv).
    #[serde(default)]
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub data_csv: String,
    #[serde(default = "default_n_data")]
    pub n_data: usize,
    /// Consistency-study ladder; empty for a single estimate.
    #[serde(default)]
    pub n_list: Vec<usize>,
    /// Start state for simulated paths; empty means the box midpoint.
    #[serde(default)]
    pub s0: Vec<f64>,
    /// When set, evaluate the volatility preset at this sigma triple and
    /// write the objective instead of running a search.
    #[serde(default)]
    pub volatility_sigma: Vec<f64>,
    #[serde(default = "default_bootstrap_replicates")]
    pub bootstrap_replicates: usize,
}

fn default_statistics() -> String {
    "derived".into()
}
fn default_weighting() -> String {
    "unit".into()
}
fn default_levels() -> usize {
    3
}
fn default_points() -> usize {
    11
}
fn default_shrink() -> f64 {
    0.2
}
fn default_n_data() -> usize {
    100_000
}
fn default_bootstrap_replicates() -> usize {
    200
}

impl Default for EstimationSection {
    fn default() -> Self {
        toml::from_str("").expect("all estimation fields carry defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_kappa_grid")]
    pub kappa_grid: Vec<f64>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_sandwich_steps")]
    pub sandwich_steps: usize,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: u64,
    #[serde(default = "default_n_theta_samples")]
    pub n_theta_samples: usize,
    /// Parameter-ball radius for sandwich/neighborhood studies; 0 picks
    /// 0.75 of the smallest kappa.
    #[serde(default)]
    pub radius: f64,
    /// Center for neighborhood-based studies; empty means the box
    /// midpoint.
    #[serde(default)]
    pub theta_center: Vec<f64>,
    #[serde(default = "default_theta_grid_points")]
    pub theta_grid_points: usize,
    #[serde(default = "default_n_ladder")]
    pub n_ladder: Vec<usize>,
    #[serde(default = "default_sup_tol")]
    pub sup_tolerance: f64,
    #[serde(default = "default_slope_tol")]
    pub slope_tolerance: f64,
    #[serde(default = "default_gap_tol")]
    pub gap_tolerance: f64,
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<usize>,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    #[serde(default = "default_feller_tol")]
    pub feller_tolerance: f64,
    #[serde(default = "default_decay_factor")]
    pub approx_decay_factor: f64,
    #[serde(default = "default_final_err_tol")]
    pub approx_error_tolerance: f64,
    #[serde(default = "default_monotone_pairs")]
    pub monotone_pairs: usize,
}

fn default_kappa_grid() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05, 0.025]
}
fn default_n_samples() -> usize {
    10_000
}
fn default_sandwich_steps() -> usize {
    10_000
}
fn default_n_seeds() -> u64 {
    10
}
fn default_n_theta_samples() -> usize {
    20
}
fn default_theta_grid_points() -> usize {
    21
}
fn default_n_ladder() -> Vec<usize> {
    (10..=18).map(|k| 1usize << k).collect()
}
fn default_sup_tol() -> f64 {
    0.01
}
fn default_slope_tol() -> f64 {
    -0.3
}
fn default_gap_tol() -> f64 {
    0.02
}
fn default_resolutions() -> Vec<usize> {
    vec![9, 17, 33, 65, 129]
}
fn default_mc_draws() -> usize {
    400
}
fn default_feller_tol() -> f64 {
    0.02
}
fn default_decay_factor() -> f64 {
    0.75
}
fn default_final_err_tol() -> f64 {
    0.05
}
fn default_monotone_pairs() -> usize {
    10_000
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        toml::from_str("").expect("all diagnostics fields carry defaults")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_oracle_steps")]
    pub n_steps: usize,
    #[serde(default = "default_oracle_burn")]
    pub burn: usize,
    #[serde(default = "default_oracle_reps")]
    pub replications: usize,
}

fn default_oracle_steps() -> usize {
    1_000_000
}
fn default_oracle_burn() -> usize {
    10_000
}
fn default_oracle_reps() -> usize {
    8
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            n_steps: default_oracle_steps(),
            burn: default_oracle_burn(),
            replications: default_oracle_reps(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default = "default_sim_seed")]
    pub sim_seed: u64,
    #[serde(default = "default_oracle_seed")]
    pub oracle_seed: u64,
    #[serde(default = "default_diag_seed")]
    pub diag_seed: u64,
}

fn default_data_seed() -> u64 {
    9_001
}
fn default_sim_seed() -> u64 {
    2_024
}
fn default_oracle_seed() -> u64 {
    771
}
fn default_diag_seed() -> u64 {
    55
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection {
            data_seed: default_data_seed(),
            sim_seed: default_sim_seed(),
            oracle_seed: default_oracle_seed(),
            diag_seed: default_diag_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "out".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
        }
    }
}

impl ExperimentConfig {
    /// Strict parse: unknown keys anywhere are errors. A file carrying a
    /// `[run]` table is a manifest; its embedded `[config]` is used.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text)
            .map_err(|e| SmeError::Config(format!("TOML parse error: {e}")))?;
        let table = value
            .as_table()
            .ok_or_else(|| SmeError::Config("top level must be a table".into()))?;
        let config_value = if table.contains_key("run") {
            table
                .get("config")
                .cloned()
                .ok_or_else(|| SmeError::Config("manifest has [run] but no [config]".into()))?
        } else {
            value
        };
        config_value
            .try_into()
            .map_err(|e| SmeError::Config(format!("{e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Makes every default explicit; idempotent by construction (the
    /// round trip through TOML re-applies the same defaults).
    pub fn normalize(&self) -> Result<ExperimentConfig> {
        let mut c = self.clone();
        let map = c.build_map()?;
        if c.moments.observable.is_empty() {
            c.moments.observable = (0..map.state_box().dim()).collect();
        }
        c.moments.observable.sort_unstable();
        c.moments.observable.dedup();
        if c.moments.primitives.is_empty() {
            let idx = c.moments.observable[0];
            c.moments.primitives = vec![
                PrimitiveConfig {
                    kind: "coord".into(),
                    index: idx,
                    scale: 1.0,
                    shift: None,
                    power: 2,
                    name: Some("m1".into()),
                },
                PrimitiveConfig {
                    kind: "shifted-power".into(),
                    index: idx,
                    scale: 1.0,
                    shift: Some(map.state_box().lower()[idx]),
                    power: 2,
                    name: Some("m2s".into()),
                },
            ];
            c.moments.derived = vec![
                DerivedConfig {
                    kind: "identity".into(),
                    primitive: 0,
                    sq: 0,
                    mean: 0,
                    name: Some("mean".into()),
                },
                DerivedConfig {
                    kind: "variance".into(),
                    primitive: 0,
                    sq: 1,
                    mean: 0,
                    name: Some("var".into()),
                },
                DerivedConfig {
                    kind: "std-dev".into(),
                    primitive: 0,
                    sq: 1,
                    mean: 0,
                    name: Some("sd".into()),
                },
            ];
        }
        for p in &mut c.moments.primitives {
            if p.kind == "shifted-power" && p.shift.is_none() {
                p.shift = Some(map.state_box().lower()[p.index]);
            }
            if p.name.is_none() {
                p.name = Some(format!("f{}", p.index));
            }
        }
        for (i, d) in c.moments.derived.iter_mut().enumerate() {
            if d.name.is_none() {
                d.name = Some(format!("d{i}"));
            }
        }
        if c.estimation.s0.is_empty() {
            c.estimation.s0 = map.state_box().midpoint().into_coords();
        }
        if c.diagnostics.theta_center.is_empty() {
            let pb = map.param_box();
            c.diagnostics.theta_center = pb
                .lower()
                .iter()
                .zip(pb.upper())
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect();
        }
        if c.diagnostics.radius == 0.0 {
            let kmin = c
                .diagnostics
                .kappa_grid
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            c.diagnostics.radius = 0.75 * kmin;
        }
        // validate the fully-specified artifacts once
        c.build_moment_spec(&map)?;
        Ok(c)
    }

    /// Constructs the (possibly customized) model.
    pub fn build_map(&self) -> Result<Box<dyn MarkovMap>> {
        let base = model_by_id(&self.model.id)?;
        let state_box = match (&self.model.state_lower, &self.model.state_upper) {
            (Some(lo), Some(hi)) => Some(StateBox::new(lo.clone(), hi.clone())?),
            (None, None) => None,
            _ => {
                return Err(SmeError::Config(
                    "state_lower and state_upper must be given together".into(),
                ))
            }
        };
        let shocks = match &self.shocks {
            Some(s) => Some(build_shock_spec(s)?),
            None => None,
        };
        let params = match &self.theta_box {
            Some(t) => {
                let names: Vec<&str> = base
                    .param_box()
                    .names()
                    .iter()
                    .map(|s| s.as_str())
                    .collect();
                Some(ParameterBox::new(t.lower.clone(), t.upper.clone(), names)?)
            }
            None => None,
        };
        if state_box.is_none() && shocks.is_none() && params.is_none() {
            return Ok(base);
        }
        Ok(Box::new(CustomizedMap::new(base, state_box, shocks, params)?))
    }

    /// Constructs the moment spec against the model's state box.
    pub fn build_moment_spec(&self, map: &dyn MarkovMap) -> Result<MomentSpec> {
        let mask = if self.moments.observable.is_empty() {
            (0..map.state_box().dim()).collect()
        } else {
            self.moments.observable.clone()
        };
        let mut prims = Vec::new();
        if self.moments.primitives.is_empty() {
            return MomentSpec::mean_and_dispersion(map.state_box(), mask[0]);
        }
        for p in &self.moments.primitives {
            let name = p.name.clone().unwrap_or_else(|| format!("f{}", p.index));
            let prim = match p.kind.as_str() {
                "coord" => Primitive::Coord {
                    index: p.index,
                    scale: p.scale,
                },
                "shifted-power" => Primitive::ShiftedPower {
                    index: p.index,
                    shift: p
                        .shift
                        .unwrap_or_else(|| map.state_box().lower()[p.index]),
                    power: p.power,
                    scale: p.scale,
                },
                other => {
                    return Err(SmeError::Config(format!(
                        "unknown primitive kind '{other}' (valid: coord, shifted-power)"
                    )))
                }
            };
            prims.push((name, prim));
        }
        let mut derived = Vec::new();
        for (i, d) in self.moments.derived.iter().enumerate() {
            let name = d.name.clone().unwrap_or_else(|| format!("d{i}"));
            let item = match d.kind.as_str() {
                "identity" => Derived::Identity {
                    primitive: d.primitive,
                },
                "variance" | "std-dev" => {
                    let shift = match &prims.get(d.sq) {
                        Some((_, Primitive::ShiftedPower { shift, .. })) => *shift,
                        _ => {
                            return Err(SmeError::Config(format!(
                                "derived '{name}' needs sq to reference a shifted-power primitive"
                            )))
                        }
                    };
                    if d.kind == "variance" {
                        Derived::Variance {
                            sq: d.sq,
                            mean: d.mean,
                            shift,
                        }
                    } else {
                        Derived::StdDev {
                            sq: d.sq,
                            mean: d.mean,
                            shift,
                        }
                    }
                }
                other => {
                    return Err(SmeError::Config(format!(
                        "unknown derived kind '{other}' (valid: identity, variance, std-dev)"
                    )))
                }
            };
            derived.push((name, item));
        }
        MomentSpec::new(map.state_box(), mask, prims, derived)
    }

    pub fn oracle_config(&self) -> crate::moments::OracleConfig {
        crate::moments::OracleConfig {
            n_steps: self.oracle.n_steps,
            burn: self.oracle.burn,
            replications: self.oracle.replications,
            seed: self.seeds.oracle_seed,
        }
    }
}

fn build_shock_spec(section: &ShocksSection) -> Result<ShockSpec> {
    let mut coords = Vec::new();
    for c in &section.coords {
        let family = match c.family.as_str() {
            "uniform" => ShockFamily::Uniform { lo: c.lo, hi: c.hi },
            "gaussian" => ShockFamily::Gaussian {
                mean: c.mean,
                sd: c.sd,
            },
            "truncated-gaussian" => ShockFamily::TruncatedGaussian {
                mean: c.mean,
                sd: c.sd,
                lo: c.lo,
                hi: c.hi,
            },
            "constant" => ShockFamily::Constant { value: c.value },
            other => {
                return Err(SmeError::Config(format!(
                    "unknown shock family '{other}' \
                     (valid: uniform, gaussian, truncated-gaussian, constant)"
                )))
            }
        };
        coords.push(ShockCoord {
            family,
            sd_from_theta: c.sd_from_theta,
        });
    }
    ShockSpec::new(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_and_normalizes() {
        let c = ExperimentConfig::from_toml_str("[model]\nid = \"threshold-ergodic\"").unwrap();
        let n = c.normalize().unwrap();
        assert_eq!(n.moments.observable, vec![0]);
        assert_eq!(n.moments.primitives.len(), 2);
        assert_eq!(n.estimation.s0, vec![1.7]);
        assert_eq!(n.diagnostics.radius, 0.75 * 0.025);
        // idempotence
        let n2 = n.normalize().unwrap();
        assert_eq!(n, n2);
    }

    #[test]
    fn normalization_round_trips_through_toml() {
        let c = ExperimentConfig::from_toml_str("[model]\nid = \"log-growth\"").unwrap();
        let n = c.normalize().unwrap();
        let text = n.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(n, back);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = ExperimentConfig::from_toml_str(
            "[model]\nid = \"threshold\"\ntypo_field = 3",
        )
        .unwrap_err();
        assert!(matches!(err, SmeError::Config(_)), "{err}");
        let err = ExperimentConfig::from_toml_str(
            "[model]\nid = \"threshold\"\n[estimation]\nhorizonn_c = 2.0",
        )
        .unwrap_err();
        assert!(format!("{err}").contains("horizonn_c"));
    }

    #[test]
    fn manifest_files_expose_their_embedded_config() {
        let text = r#"
[run]
command = "simulate"
version = "0.0.0"

[config.model]
id = "threshold"
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.model.id, "threshold");
    }

    #[test]
    fn overrides_build_a_customized_map() {
        let text = r#"
[model]
id = "threshold"
state_lower = [0.0]
state_upper = [3.4]

[shocks]
coords = [ { family = "gaussian", mean = 0.0, sd = 1.0 } ]
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        let map = c.build_map().unwrap();
        assert_eq!(map.state_box().upper(), &[3.4]);
    }

    #[test]
    fn bad_shock_family_named_in_error() {
        let text = r#"
[model]
id = "threshold"
[shocks]
coords = [ { family = "cauchy" } ]
"#;
        let err = ExperimentConfig::from_toml_str(text)
            .unwrap()
            .build_map()
            .err()
            .expect("cauchy family must be rejected");
        assert!(format!("{err}").contains("cauchy"));
    }

    #[test]
    fn custom_moment_spec_builds() {
        let text = r#"
[model]
id = "adoption"
[moments]
observable = [1, 2]
primitives = [
  { kind = "coord", index = 1, scale = 0.01, name = "z" },
  { kind = "coord", index = 2, name = "a" },
  { kind = "shifted-power", index = 2, name = "a2" },
]
derived = [ { kind = "variance", sq = 2, mean = 1, name = "var_a" } ]
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        let map = c.build_map().unwrap();
        let spec = c.build_moment_spec(map.as_ref()).unwrap();
        assert_eq!(spec.dim(), 3);
        assert_eq!(spec.observable_mask(), &[1, 2]);
        // latent coordinate rejected
        let bad = r#"
[model]
id = "adoption"
[moments]
observable = [1, 2]
primitives = [ { kind = "coord", index = 0 } ]
"#;
        let cb = ExperimentConfig::from_toml_str(bad).unwrap();
        let mapb = cb.build_map().unwrap();
        assert!(cb.build_moment_spec(mapb.as_ref()).is_err());
    }
}
