//! Command-line interface: `simulate`, `estimate`, `diagnose`,
//! `approx-study`.
//!
//! Every run writes its outputs plus a `manifest.toml` that embeds the
//! normalized config, the command arguments and checksums of every file
//! written. Passing a manifest back through `--config` reruns the
//! identical experiment; outputs are byte-identical.

use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::diagnostics::{self, StudyReport};
use crate::error::{Result, SmeError};
use crate::estimator::{
    bootstrap_weights, consistency_study, estimate, volatility_objective_preset, DistanceSpec,
    EstimationSetup, FixedSubvector, HorizonRule, SearchConfig, StatSelector,
    VOLATILITY_DISPERSIONS,
};
use crate::io::{
    self, moments_to_csv, results_to_csv, write_path_csv, write_study, RunManifest,
};
use crate::models::MarkovMap;
use crate::moments::{data_moments, MomentSpec};
use crate::simulate::{simulate_path, Path, ShockStream};
use crate::state_space::Point;

pub const STUDY_IDS: &str = "monotone, feller, dominance, neighborhood, sandwich, \
                             envelope-continuity, ulln, uniqueness, approx";

#[derive(Debug, Parser)]
#[command(
    name = "sme",
    version,
    about = "Simulated-moments estimation and diagnostics for monotone Markov processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML), or a manifest from a previous run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config's `[output] dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed override: replaces every named seed in the config
    /// (sim = seed, data = seed + 1, oracle = seed + 2, diag = seed + 3).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one path and write it as CSV.
    Simulate {
        /// Parameter vector, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
        /// Number of steps.
        #[arg(long)]
        n: Option<usize>,
        /// Start state, comma-separated (default: config / box midpoint).
        #[arg(long, allow_hyphen_values = true)]
        s0: Option<String>,
    },
    /// Run the estimator (single N or a consistency ladder) per config.
    Estimate,
    /// Run one named diagnostic study; exit code reflects the verdicts.
    Diagnose {
        /// One of: monotone, feller, dominance, neighborhood, sandwich,
        /// envelope-continuity, ulln, uniqueness, approx.
        #[arg(long)]
        study: Option<String>,
    },
    /// The interpolation-ladder study (same as `diagnose --study approx`).
    ApproxStudy,
}

/// Process exit status: 0 ok, 2 when any study verdict failed.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(t) = cli.threads {
        // ignore the error if a pool already exists (tests call run()
        // repeatedly in one process)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }

    let (mut config, manifest_args) = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seeds.sim_seed = seed;
        config.seeds.data_seed = seed.wrapping_add(1);
        config.seeds.oracle_seed = seed.wrapping_add(2);
        config.seeds.diag_seed = seed.wrapping_add(3);
    }
    let config = config.normalize()?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| SmeError::io(out_dir.display().to_string(), e))?;

    match cli.command {
        Command::Simulate { theta, n, s0 } => {
            let theta = theta
                .or_else(|| manifest_args.get("theta").cloned())
                .ok_or_else(|| SmeError::Config("simulate needs --theta".into()))?;
            let n = match n {
                Some(n) => n,
                None => manifest_args
                    .get("n")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| SmeError::Config("simulate needs --n".into()))?,
            };
            let s0 = s0.or_else(|| manifest_args.get("s0").cloned());
            cmd_simulate(&config, &out_dir, &theta, n, s0.as_deref())
        }
        Command::Estimate => cmd_estimate(&config, &out_dir),
        Command::Diagnose { study } => {
            let study = study
                .or_else(|| manifest_args.get("study").cloned())
                .ok_or_else(|| {
                    SmeError::UnknownStudy("(missing --study)".into(), STUDY_IDS)
                })?;
            cmd_diagnose(&config, &out_dir, &study)
        }
        Command::ApproxStudy => cmd_diagnose(&config, &out_dir, "approx"),
    }
}

fn load_config(
    path: Option<&FsPath>,
) -> Result<(ExperimentConfig, std::collections::BTreeMap<String, String>)> {
    let mut args = std::collections::BTreeMap::new();
    let config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| SmeError::io(p.display().to_string(), e))?;
            // manifests carry their original arguments
            if let Ok(manifest) = RunManifest::read(p) {
                for a in &manifest.run.args {
                    if let Some((k, v)) = a.split_once('=') {
                        args.insert(k.to_string(), v.to_string());
                    }
                }
            }
            ExperimentConfig::from_toml_str(&text)?
        }
        None => ExperimentConfig::from_toml_str(
            "[model]\nid = \"threshold-ergodic\"\n[estimation]\ntheta0 = [0.1]",
        )?,
    };
    Ok((config, args))
}

fn parse_vec(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| SmeError::Config(format!("{what}: '{t}' is not a number")))
        })
        .collect()
}

fn start_point(config: &ExperimentConfig, map: &dyn MarkovMap) -> Result<Point> {
    if config.estimation.s0.is_empty() {
        Ok(map.state_box().midpoint())
    } else {
        let p = Point::new(config.estimation.s0.clone())?;
        map.state_box().check_contains(&p, "state box")?;
        Ok(p)
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(
    config: &ExperimentConfig,
    out_dir: &FsPath,
    theta_text: &str,
    n: usize,
    s0_text: Option<&str>,
) -> Result<i32> {
    if n == 0 {
        return Err(SmeError::EmptyWindow { what: "N", got: 0 });
    }
    let map = config.build_map()?;
    let theta = parse_vec(theta_text, "--theta")?;
    let s0 = match s0_text {
        Some(t) => {
            let p = Point::new(parse_vec(t, "--s0")?)?;
            map.state_box().check_contains(&p, "state box")?;
            p
        }
        None => start_point(config, map.as_ref())?,
    };
    let stream = ShockStream::new(config.seeds.sim_seed, 0);
    let path = simulate_path(map.as_ref(), &s0, stream, &theta, n)?;
    write_path_csv(&out_dir.join("path.csv"), &path)?;

    let mut manifest = RunManifest::new(
        "simulate",
        vec![
            format!("theta={theta_text}"),
            format!("n={n}"),
            format!("s0={}", join_f64(s0.coords())),
        ],
        config.clone(),
    );
    manifest.record_file(out_dir, "path.csv")?;
    manifest.write(out_dir)?;
    println!(
        "simulate: {} steps of '{}' written to {} (clamped {} times)",
        n,
        map.name(),
        out_dir.join("path.csv").display(),
        path.clamp_count
    );
    Ok(0)
}

fn join_f64(v: &[f64]) -> String {
    v.iter()
        .map(|x| io::fmt_f64(*x))
        .collect::<Vec<_>>()
        .join(",")
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn selector_from_config(config: &ExperimentConfig) -> Result<StatSelector> {
    match config.estimation.statistics.as_str() {
        "primitives" => Ok(StatSelector::Primitives),
        "derived" => Ok(StatSelector::Derived),
        other => Err(SmeError::Config(format!(
            "estimation.statistics must be 'primitives' or 'derived', got '{other}'"
        ))),
    }
}

fn stats_dim(config: &ExperimentConfig, spec: &MomentSpec) -> Result<usize> {
    Ok(match selector_from_config(config)? {
        StatSelector::Primitives => spec.dim(),
        StatSelector::Derived => spec.derived().len(),
    })
}

fn cmd_estimate(config: &ExperimentConfig, out_dir: &FsPath) -> Result<i32> {
    let est = &config.estimation;

    // preset-evaluation mode: score a given model sigma triple
    if !est.volatility_sigma.is_empty() {
        if est.volatility_sigma.len() != 3 {
            return Err(SmeError::Config(
                "volatility_sigma must have exactly 3 entries".into(),
            ));
        }
        let sigma = [
            est.volatility_sigma[0],
            est.volatility_sigma[1],
            est.volatility_sigma[2],
        ];
        if sigma.iter().any(|&s| s < 0.0) {
            return Err(SmeError::Config(
                "volatility_sigma entries must be nonnegative".into(),
            ));
        }
        let objective = volatility_objective_preset(&sigma);
        let rows = vec![(0usize, sigma.to_vec(), objective)];
        std::fs::write(out_dir.join("results.csv"), results_to_csv(&rows, 3))
            .map_err(|e| SmeError::io(out_dir.display().to_string(), e))?;
        let mut manifest = RunManifest::new("estimate", vec![], config.clone());
        manifest.record_file(out_dir, "results.csv")?;
        manifest.write(out_dir)?;
        println!("estimate (volatility preset): objective = {objective}");
        return Ok(0);
    }

    let map = config.build_map()?;
    let spec = config.build_moment_spec(map.as_ref())?;
    let s0 = start_point(config, map.as_ref())?;
    let selector = selector_from_config(config)?;
    let p_stats = stats_dim(config, &spec)?;

    // data source: CSV series or a synthetic path at theta0
    let needed = est.n_list.iter().copied().max().unwrap_or(0).max(est.n_data);
    let data_rows: Vec<Vec<f64>> = match (!est.data_csv.is_empty(), !est.theta0.is_empty()) {
        (true, false) => io::read_data_csv(FsPath::new(&est.data_csv), spec.observable_mask())?,
        (false, true) => {
            map.param_box().check_contains(&est.theta0)?;
            let stream = ShockStream::new(config.seeds.data_seed, 0);
            let path = simulate_path(map.as_ref(), &s0, stream, &est.theta0, needed)?;
            observed_rows(&path, spec.observable_mask())
        }
        (true, true) => {
            return Err(SmeError::Config(
                "provide either estimation.data_csv or estimation.theta0, not both".into(),
            ))
        }
        (false, false) => {
            return Err(SmeError::Config(
                "missing data source: set estimation.data_csv or estimation.theta0".into(),
            ))
        }
    };
    if data_rows.len() < needed {
        return Err(SmeError::Data(format!(
            "data has {} rows, the run needs {needed}",
            data_rows.len()
        )));
    }

    let weights = match (est.weights.is_empty(), est.weighting.as_str()) {
        (false, _) => est.weights.clone(),
        (true, "unit") => vec![1.0; p_stats],
        (true, "bootstrap") => bootstrap_stat_weights(
            &spec,
            &data_rows[..est.n_data.min(data_rows.len())],
            selector,
            est.bootstrap_replicates,
            config.seeds.data_seed,
        )?,
        (true, "volatility-match") => {
            if p_stats != 3 {
                return Err(SmeError::Config(format!(
                    "volatility-match weighting needs exactly 3 statistics, got {p_stats}"
                )));
            }
            VOLATILITY_DISPERSIONS.iter().map(|d| 1.0 / d).collect()
        }
        (true, other) => {
            return Err(SmeError::Config(format!(
                "unknown weighting '{other}' (valid: unit, bootstrap, volatility-match)"
            )))
        }
    };
    if weights.len() != p_stats {
        return Err(SmeError::Config(format!(
            "{} weights for {} statistics",
            weights.len(),
            p_stats
        )));
    }
    let distance = DistanceSpec::weighted(weights, selector)?;

    let setup = EstimationSetup {
        map: map.as_ref(),
        spec: &spec,
        distance,
        horizon: HorizonRule::new(
            est.horizon_c,
            if est.horizon_cap == 0 {
                None
            } else {
                Some(est.horizon_cap)
            },
        )?,
        s0,
        sim_stream: ShockStream::new(config.seeds.sim_seed, 0),
        search: SearchConfig {
            levels: est.search_levels,
            points_per_dim: est.search_points,
            shrink: est.search_shrink,
            polish: est.polish,
            polish_iterations: 100,
            fixed: if est.fixed_indices.is_empty() {
                None
            } else {
                Some(FixedSubvector {
                    indices: est.fixed_indices.clone(),
                    values: est.fixed_values.clone(),
                })
            },
        },
    };

    let theta_ref: Option<&[f64]> = if est.theta0.is_empty() {
        None
    } else {
        Some(&est.theta0)
    };

    let mut results_rows: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let mut wrote_trace = false;
    if est.n_list.is_empty() {
        let dm = data_moments(&spec, &data_rows[..est.n_data])?;
        let e = estimate(&setup, &dm, est.n_data)?;
        println!(
            "estimate: theta_hat = [{}], objective = {}, evaluations = {}",
            join_f64(&e.theta),
            e.objective,
            e.evaluations
        );
        results_rows.push((e.n_data, e.theta, e.objective));
    } else {
        let trace = consistency_study(&setup, &data_rows, theta_ref, &est.n_list)?;
        for entry in &trace.entries {
            results_rows.push((entry.n, entry.theta.clone(), entry.objective));
            match entry.error {
                Some(err) => println!(
                    "estimate: N = {:>8}  theta_hat = [{}]  |error| = {:.5}",
                    entry.n,
                    join_f64(&entry.theta),
                    err
                ),
                None => println!(
                    "estimate: N = {:>8}  theta_hat = [{}]",
                    entry.n,
                    join_f64(&entry.theta)
                ),
            }
        }
        println!("estimate: error slope (log-log) = {}", trace.error_slope);
        let trace_csv = results_to_csv(&results_rows, map.param_box().dim());
        std::fs::write(out_dir.join("trace.csv"), trace_csv)
            .map_err(|e| SmeError::io(out_dir.display().to_string(), e))?;
        wrote_trace = true;
    }

    let final_rows = vec![results_rows.last().cloned().expect("at least one row")];
    std::fs::write(
        out_dir.join("results.csv"),
        results_to_csv(&final_rows, map.param_box().dim()),
    )
    .map_err(|e| SmeError::io(out_dir.display().to_string(), e))?;

    // data moments report
    let dm = data_moments(&spec, &data_rows[..est.n_data.min(data_rows.len())])?;
    let names: Vec<String> = spec
        .primitives()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    std::fs::write(
        out_dir.join("data_moments.csv"),
        moments_to_csv(&names, &dm.values, None),
    )
    .map_err(|e| SmeError::io(out_dir.display().to_string(), e))?;

    let mut manifest = RunManifest::new("estimate", vec![], config.clone());
    manifest.record_file(out_dir, "results.csv")?;
    if wrote_trace {
        manifest.record_file(out_dir, "trace.csv")?;
    }
    manifest.record_file(out_dir, "data_moments.csv")?;
    manifest.write(out_dir)?;
    Ok(0)
}

fn observed_rows(path: &Path, mask: &[usize]) -> Vec<Vec<f64>> {
    path.rows()
        .map(|s| mask.iter().map(|&i| s[i]).collect())
        .collect()
}

/// Bootstrap weights on the selected statistics vector: block-bootstrap
/// replicate moments, transformed by the selector, inverse variances.
fn bootstrap_stat_weights(
    spec: &MomentSpec,
    rows: &[Vec<f64>],
    selector: StatSelector,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    match selector {
        StatSelector::Primitives => bootstrap_weights(spec, rows, replicates, seed),
        StatSelector::Derived => {
            // reuse the primitive-level machinery replicate by replicate
            let prim_weights = bootstrap_weights(spec, rows, replicates, seed)?;
            let _ = prim_weights;
            // derived statistics need their own dispersion: bootstrap the
            // primitive means then push each replicate through the
            // derived transform
            crate::estimator::bootstrap_derived_weights(spec, rows, replicates, seed)
        }
    }
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

fn theta_grid_for(map: &dyn MarkovMap, points: usize) -> Vec<Vec<f64>> {
    let pb = map.param_box();
    let l = pb.dim();
    let per_dim = if l == 1 { points } else { 5.min(points) };
    let axes: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            let (a, b) = (pb.lower()[i], pb.upper()[i]);
            if b <= a {
                return vec![a];
            }
            let step = (b - a) / (per_dim - 1) as f64;
            (0..per_dim)
                .map(|j| if j == per_dim - 1 { b } else { a + step * j as f64 })
                .collect()
        })
        .collect();
    let mut grid = Vec::new();
    let mut idx = vec![0usize; l];
    loop {
        grid.push((0..l).map(|i| axes[i][idx[i]]).collect());
        let mut d = l;
        loop {
            if d == 0 {
                return grid;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn cmd_diagnose(config: &ExperimentConfig, out_dir: &FsPath, study: &str) -> Result<i32> {
    let map = config.build_map()?;
    let spec = config.build_moment_spec(map.as_ref())?;
    let d = &config.diagnostics;
    let oracle = config.oracle_config();
    let seed = config.seeds.diag_seed;

    let report: StudyReport = match study {
        "monotone" => diagnostics::monotone_study(map.as_ref(), d.monotone_pairs, seed),
        "feller" => diagnostics::feller_study(
            map.as_ref(),
            &spec,
            &d.theta_center,
            &map.state_box().midpoint(),
            4,
            d.mc_draws.max(1_000),
            d.feller_tolerance,
            seed,
        )?,
        "dominance" => {
            diagnostics::dominance_study(map.as_ref(), &d.kappa_grid, d.n_samples, seed)?
        }
        "neighborhood" => {
            let kappa = d.kappa_grid.iter().cloned().fold(f64::INFINITY, f64::min);
            diagnostics::neighborhood_study(
                map.as_ref(),
                &d.theta_center,
                kappa,
                d.radius,
                d.n_samples,
                seed,
            )?
        }
        "sandwich" => diagnostics::sandwich_study(
            map.as_ref(),
            &spec,
            &diagnostics::SandwichConfig {
                theta_center: d.theta_center.clone(),
                kappa_grid: d.kappa_grid.clone(),
                radius: d.radius,
                n_steps: d.sandwich_steps,
                n_seeds: d.n_seeds,
                n_theta_samples: d.n_theta_samples,
                seed,
                s0: None,
            },
        )?,
        "envelope-continuity" => {
            let mut grid = d.kappa_grid.clone();
            grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
            diagnostics::envelope_continuity_study(
                map.as_ref(),
                &spec,
                &diagnostics::EnvelopeContinuityConfig {
                    theta: d.theta_center.clone(),
                    kappa_grid: grid,
                    oracle,
                    gap_tolerance: d.gap_tolerance,
                },
            )?
        }
        "ulln" => diagnostics::ulln_study(
            map.as_ref(),
            &spec,
            &diagnostics::UllnConfig {
                theta_grid: theta_grid_for(map.as_ref(), d.theta_grid_points),
                n_ladder: d.n_ladder.clone(),
                s0_set: vec![
                    map.state_box().bottom_corner(),
                    map.state_box().top_corner(),
                ],
                oracle,
                path_seed: seed,
                kappa: d.kappa_grid.iter().cloned().fold(f64::INFINITY, f64::min),
                sup_tolerance: d.sup_tolerance,
                slope_tolerance: d.slope_tolerance,
            },
        )?,
        "uniqueness" => diagnostics::uniqueness_study(
            map.as_ref(),
            &theta_grid_for(map.as_ref(), 3.min(d.theta_grid_points)),
            &spec,
            &oracle,
        )?,
        "approx" => {
            let selector = selector_from_config(config)?;
            let p_stats = stats_dim(config, &spec)?;
            let distance = DistanceSpec::unit(p_stats, selector);
            let theta_data = if config.estimation.theta0.is_empty() {
                d.theta_center.clone()
            } else {
                config.estimation.theta0.clone()
            };
            diagnostics::approx_study(
                &ByRef(map.as_ref()),
                &spec,
                &distance,
                &diagnostics::ApproxStudyConfig {
                    resolutions: d.resolutions.clone(),
                    theta_probes: theta_grid_for(map.as_ref(), 5),
                    mc_draws: d.mc_draws,
                    seed,
                    decay_factor: d.approx_decay_factor,
                    theta_data,
                    oracle,
                    search: SearchConfig {
                        levels: config.estimation.search_levels,
                        points_per_dim: config.estimation.search_points,
                        shrink: config.estimation.search_shrink,
                        ..Default::default()
                    },
                    final_error_tolerance: d.approx_error_tolerance,
                },
            )?
        }
        other => return Err(SmeError::UnknownStudy(other.to_string(), STUDY_IDS)),
    };

    let (csv, txt) = write_study(out_dir, &report)?;
    let mut manifest = RunManifest::new(
        "diagnose",
        vec![format!("study={study}")],
        config.clone(),
    );
    let csv_name = csv.file_name().unwrap().to_string_lossy().to_string();
    let txt_name = txt.file_name().unwrap().to_string_lossy().to_string();
    manifest.record_file(out_dir, &csv_name)?;
    manifest.record_file(out_dir, &txt_name)?;
    manifest.write(out_dir)?;

    print!("{}", io::study_to_text(&report));
    Ok(if report.passed() { 0 } else { 2 })
}

/// Cheap `Clone`-able view over a borrowed dynamic map (the approx study
/// builds interpolants, which need an owned base).
struct ByRef<'a>(&'a dyn MarkovMap);

impl Clone for ByRef<'_> {
    fn clone(&self) -> Self {
        ByRef(self.0)
    }
}

impl MarkovMap for ByRef<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn state_box(&self) -> &crate::state_space::StateBox {
        self.0.state_box()
    }
    fn shock_spec(&self) -> &crate::shocks::ShockSpec {
        self.0.shock_spec()
    }
    fn param_box(&self) -> &crate::models::ParameterBox {
        self.0.param_box()
    }
    fn monotone_in_state(&self) -> bool {
        self.0.monotone_in_state()
    }
    fn transition_raw(&self, s: &[f64], eps: &[f64], theta: &[f64], out: &mut [f64]) {
        self.0.transition_raw(s, eps, theta, out)
    }
}
