//! Config-driven batch runs: validate, solve, extract the band, build the
//! value profile, simulate and check, then write the artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dynkin_solver::{solve_dynkin, DynkinSolution, SolverConfig, SweepOrder};
use crate::error::{Error, Result};
use crate::free_boundary::{check_hypothesis, extract_boundaries, lipschitz_estimate, row_band, FreeBoundaries, HypothesisReport};
use crate::grid_operator::{assemble_generator, build_grid, build_xz_grid, map_xz_to_xy, DiscreteOperator, Grid2D, Scheme, ValueField};
use crate::model::{validate_params, ModelConfig, ModelKind, ModelSpec, ValidationReport};
use crate::simulate::{sample_path, simulate_partially_observed, simulate_reflected, ErgodicEstimate, SimConfig, TraceRow};
use crate::stationary::{ergodic_value, factor_density, filter_stationary_density, Density};
use crate::value_profile::{
    build_pseudo_potential, check_alpha_invariance, check_degenerate_relation, compute_lambda_profile,
    compute_lambda_profile_xz, hjb_residual, hjb_residual_xz, HjbReport, LambdaProfile, PseudoPotential,
};

pub const ARTIFACTS: [&str; 8] = [
    "U.csv",
    "boundaries.csv",
    "V.csv",
    "lambda.csv",
    "density.csv",
    "sim.json",
    "report.json",
    "manifest.json",
];

pub const CHECK_NAMES: [&str; 8] = [
    "obstacle_bounds",
    "complementarity",
    "monotonicity",
    "hypothesis",
    "hjb_residual",
    "alpha_invariance",
    "simulation_consistency",
    "degenerate_relation",
];

const DEFAULT_CHECKS: [&str; 6] = [
    "obstacle_bounds",
    "monotonicity",
    "hypothesis",
    "hjb_residual",
    "alpha_invariance",
    "simulation_consistency",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    /// Defaults to the model's factor domain.
    #[serde(default)]
    pub y_lo: Option<f64>,
    #[serde(default)]
    pub y_hi: Option<f64>,
    pub n_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaChoice {
    Value(f64),
    Keyword(String),
}

impl Default for AlphaChoice {
    fn default() -> Self {
        AlphaChoice::Keyword("auto".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    /// Per-model default when absent.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub alpha: AlphaChoice,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Defaults to the standard check list for the model kind.
    #[serde(default)]
    pub checks: Option<Vec<String>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Solver used for `kind`: the configured one, or the default for the kind.
    pub fn solver_for(&self, kind: ModelKind) -> SolverConfig {
        match (&self.solver, kind) {
            (Some(s), _) => s.clone(),
            (None, ModelKind::FilteredInventory) => SolverConfig {
                omega: 1.0,
                sweep: SweepOrder::Symmetric,
                ..SolverConfig::default()
            },
            (None, _) => SolverConfig::default(),
        }
    }

    pub fn enabled_checks(&self, kind: ModelKind) -> Vec<String> {
        match &self.checks {
            Some(c) => c.clone(),
            None => {
                let mut c: Vec<String> = DEFAULT_CHECKS.iter().map(|s| s.to_string()).collect();
                if kind == ModelKind::DegenerateNoFactor {
                    c.push("degenerate_relation".to_string());
                }
                c
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(checks) = &self.checks {
            for c in checks {
                if !CHECK_NAMES.contains(&c.as_str()) {
                    return Err(Error::Config(format!("unknown check `{c}`")));
                }
            }
        }
        if let AlphaChoice::Keyword(k) = &self.alpha {
            if k != "auto" {
                return Err(Error::Config(format!("alpha must be a number or \"auto\", got `{k}`")));
            }
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        if let Some(s) = &self.sim {
            s.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form without `output_dir`.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Assemble,
    Solve,
    Boundaries,
    Value,
    Stationary,
    Simulate,
    Checks,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for PipelineError {}

impl PipelineError {
    /// 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.stage) {
            (_, Stage::Validate) => 2,
            (Error::Config(_) | Error::Json(_), _) => 2,
            _ => 3,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub outcome: Outcome,
    pub value: f64,
    pub threshold: f64,
    pub message: String,
}

impl CheckResult {
    fn new(name: &str, value: f64, threshold: f64, message: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            outcome: if value <= threshold { Outcome::Pass } else { Outcome::Fail },
            value,
            threshold,
            message: message.into(),
        }
    }

    fn skipped(name: &str, message: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            outcome: Outcome::Skipped,
            value: f64::NAN,
            threshold: f64::NAN,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub model: String,
    pub alpha: f64,
    pub lambda_star: Option<f64>,
    pub artifacts: Vec<ArtifactEntry>,
    pub checks: BTreeMap<String, String>,
    pub all_checks_passed: bool,
    pub versions: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn has(&self, file: &str) -> bool {
        self.artifacts.iter().any(|a| a.file == file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Everything computed by a run, before it is written to disk.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub spec: ModelSpec,
    pub validation: ValidationReport,
    pub grid: Grid2D,
    pub u: ValueField,
    pub solution: DynkinSolution,
    pub boundaries: FreeBoundaries,
    pub potential: PseudoPotential,
    pub lambda: LambdaProfile,
    pub density: Option<Density>,
    pub lambda_star: Option<f64>,
    pub hjb: HjbReport,
    pub hypothesis: HypothesisReport,
    pub sim: Option<SimOutput>,
    pub checks: Vec<CheckResult>,
    pub sensitivity: Value,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimOutput {
    pub config: SimConfig,
    pub x0: f64,
    pub y0: f64,
    pub estimate: ErgodicEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partially_observed: Option<ErgodicEstimate>,
    pub boundary_jumps: usize,
    pub jump_policy: String,
    pub trace: Vec<TraceRow>,
}

struct Solved {
    u_xy: ValueField,
    solution: DynkinSolution,
    op: DiscreteOperator,
    /// Flagged nodes from mapping back to `(x, y)`.
    mapped_out: usize,
}

fn solve_on(spec: &ModelSpec, grid: &Grid2D, solver: &SolverConfig) -> std::result::Result<Solved, PipelineError> {
    if spec.kind == ModelKind::FilteredInventory {
        let xz = build_xz_grid(spec, grid, grid.n_y()).at(Stage::Assemble)?;
        let op = assemble_generator(spec, &xz, Scheme::DegenerateXZ).at(Stage::Assemble)?;
        let solution = solve_dynkin(&op, spec, solver).at(Stage::Solve)?;
        let mapped = map_xz_to_xy(&solution.u, spec, grid).at(Stage::Solve)?;
        Ok(Solved {
            u_xy: mapped.field,
            mapped_out: mapped.out_of_domain.len(),
            solution,
            op,
        })
    } else {
        let op = assemble_generator(spec, grid, Scheme::EllipticNinePoint).at(Stage::Assemble)?;
        let solution = solve_dynkin(&op, spec, solver).at(Stage::Solve)?;
        Ok(Solved {
            u_xy: solution.u.clone(),
            mapped_out: 0,
            solution,
            op,
        })
    }
}

fn lambda_for(spec: &ModelSpec, s: &Solved, fb: &FreeBoundaries, alpha: f64, y: &[f64]) -> Result<LambdaProfile> {
    if spec.kind == ModelKind::FilteredInventory {
        compute_lambda_profile_xz(&s.solution.u, spec, fb, alpha, y)
    } else {
        compute_lambda_profile(&s.u_xy, spec, fb, alpha)
    }
}

/// Largest decrease of `U` along x and along y.
pub fn monotonicity_defect(u: &ValueField) -> (f64, f64) {
    let g = &u.grid;
    let (mut dx, mut dy) = (0.0f64, 0.0f64);
    for j in 0..g.n_y() {
        for i in 0..g.n_x() {
            if i + 1 < g.n_x() {
                dx = dx.max(u.at(i, j) - u.at(i + 1, j));
            }
            if j + 1 < g.n_y() {
                dy = dy.max(u.at(i, j) - u.at(i, j + 1));
            }
        }
    }
    (dx, dy)
}

fn default_start(spec: &ModelSpec) -> f64 {
    match spec.kind {
        ModelKind::OUInventory => spec.ou_params().map_or(0.0, |p| p.stationary_mean()),
        ModelKind::FilteredInventory => 0.5,
        ModelKind::DegenerateNoFactor => spec.frozen_params().map_or(0.0, |p| p.level),
        ModelKind::Custom1DFactor => 0.5 * (spec.factor_domain.0 + spec.factor_domain.1),
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1e3 * 1e3).round() / 1e3
}

/// Runs every stage in memory. `with_sim = false` skips simulation even if
/// the config has a `sim` section.
pub fn compute(config: &PipelineConfig, with_sim: bool) -> std::result::Result<PipelineOutput, PipelineError> {
    let mut timings = BTreeMap::new();
    let t = Instant::now();
    config.validate().at(Stage::Validate)?;
    let spec = config.model.build().at(Stage::Validate)?;
    let validation = validate_params(&spec);
    if !validation.overall {
        let failed: Vec<String> = validation.failures().map(|c| format!("{}: {}", c.name, c.message)).collect();
        return Err(PipelineError {
            stage: Stage::Validate,
            error: Error::Config(format!("model assumptions violated: {}", failed.join("; "))),
        });
    }
    let gc = &config.grid;
    let (y_lo, y_hi) = (
        gc.y_lo.unwrap_or(spec.factor_domain.0),
        gc.y_hi.unwrap_or(spec.factor_domain.1),
    );
    let grid = build_grid(gc.x_lo, gc.x_hi, gc.n_x, y_lo, y_hi, gc.n_y).at(Stage::Validate)?;
    let checks_enabled = config.enabled_checks(spec.kind);
    timings.insert("validate".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let solver = config.solver_for(spec.kind);
    let solved = solve_on(&spec, &grid, &solver)?;
    timings.insert("solve".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let fb = extract_boundaries(&solved.u_xy, &spec).at(Stage::Boundaries)?;
    let hypothesis = check_hypothesis(&fb, &spec, &grid);
    timings.insert("boundaries".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let alpha_req = match config.alpha {
        AlphaChoice::Value(a) => a,
        AlphaChoice::Keyword(_) => fb.gap_midpoint(),
    };
    let potential = build_pseudo_potential(&solved.u_xy, &fb, alpha_req).at(Stage::Value)?;
    let alpha = potential.alpha;
    let lambda = lambda_for(&spec, &solved, &fb, alpha, &grid.y_nodes).at(Stage::Value)?;
    let hjb = if spec.kind == ModelKind::FilteredInventory {
        hjb_residual_xz(&solved.solution.u, &solved.op, &solved.u_xy, &spec, &fb, alpha).at(Stage::Value)?
    } else {
        hjb_residual(&potential, &lambda, &solved.u_xy, &spec, &solved.op).at(Stage::Value)?
    };
    timings.insert("value".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let density = match spec.kind {
        ModelKind::Custom1DFactor => None,
        _ => Some(factor_density(&spec).at(Stage::Stationary)?),
    };
    let lambda_star = match &density {
        Some(d) => Some(ergodic_value(&lambda, d).at(Stage::Stationary)?),
        None => None,
    };
    timings.insert("stationary".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let sim = match (&config.sim, with_sim) {
        (Some(cfg), true) => {
            let y0 = default_start(&spec);
            let (lo, hi) = row_band(&fb, y0);
            let x0 = alpha.clamp(lo, hi);
            let estimate = simulate_reflected(&spec, &fb, x0, y0, cfg).at(Stage::Simulate)?;
            let partially_observed = if spec.kind == ModelKind::FilteredInventory {
                let mut c = cfg.clone();
                c.seed = cfg.seed.wrapping_add(1);
                Some(simulate_partially_observed(&spec, &fb, x0, y0, &c).at(Stage::Simulate)?)
            } else {
                None
            };
            let steps = (cfg.horizon / cfg.dt).round() as usize;
            let trace = sample_path(&spec, &fb, x0, y0, cfg, (steps / 2000).max(1)).at(Stage::Simulate)?;
            Some(SimOutput {
                config: cfg.clone(),
                x0,
                y0,
                estimate,
                partially_observed,
                boundary_jumps: fb.jumps.len(),
                jump_policy: "project to nearest band edge".to_string(),
                trace,
            })
        }
        _ => None,
    };
    timings.insert("simulate".to_string(), elapsed_ms(t));

    let t = Instant::now();
    let residual = solved.solution.report(&solved.op, &spec);
    let mut checks = Vec::new();
    let kpm = spec.k_plus + spec.k_minus;
    for name in &checks_enabled {
        let r = match name.as_str() {
            "obstacle_bounds" => {
                let lo = solved.u_xy.values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
                let hi = solved.u_xy.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let viol = (-spec.k_plus - lo).max(hi - spec.k_minus).max(0.0).max(residual.obstacle_violation);
                CheckResult::new(name, viol, 1e-12 * kpm, format!("U ranges over [{lo}, {hi}]"))
            }
            "complementarity" => {
                let cx = solved.op.source.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                CheckResult::new(name, residual.comp_residual, 1e-3 * cx, "complementarity defect vs 1e-3 sup|c_x|")
            }
            "monotonicity" => {
                let (dx, dy) = monotonicity_defect(&solved.u_xy);
                let worst = dx.max(dy);
                let mut c = CheckResult::new(
                    name,
                    worst,
                    1e-8,
                    format!("U drop along x {dx:e}, along y {dy:e}; boundary margin {:e}", hypothesis.monotone_ok.margin),
                );
                if !hypothesis.monotone_ok.ok {
                    c.outcome = Outcome::Fail;
                }
                c
            }
            "hypothesis" => {
                let mut c = CheckResult::new(name, 0.0, 0.0, format!("{hypothesis:?}"));
                if !hypothesis.all_ok() {
                    c.outcome = Outcome::Fail;
                    c.value = 1.0;
                }
                c
            }
            "hjb_residual" => {
                let h = grid.h_x.max(if spec.has_frozen_factor() { 0.0 } else { grid.h_y });
                let tol = 2.0 * h * (1.0 + lambda.max_abs());
                CheckResult::new(name, hjb.max(), tol, "first-order consistency bound 2 h (1 + max|lambda|)")
            }
            "alpha_invariance" => match &density {
                Some(d) => {
                    let (a, b) = (fb.sup_a_plus, fb.inf_a_minus);
                    let a1 = a + 0.25 * (b - a);
                    let a2 = a + 0.75 * (b - a);
                    let rep = if spec.kind == ModelKind::FilteredInventory {
                        let l1 = lambda_for(&spec, &solved, &fb, a1, &grid.y_nodes).at(Stage::Checks)?;
                        let l2 = lambda_for(&spec, &solved, &fb, a2, &grid.y_nodes).at(Stage::Checks)?;
                        let s1 = ergodic_value(&l1, d).at(Stage::Checks)?;
                        let s2 = ergodic_value(&l2, d).at(Stage::Checks)?;
                        (s1 - s2).abs()
                    } else {
                        let r = check_alpha_invariance(&solved.u_xy, &spec, &fb, a1, a2, d).at(Stage::Checks)?;
                        if r.pointwise_identity_err > 5e-2 {
                            f64::INFINITY
                        } else {
                            r.delta_star
                        }
                    };
                    CheckResult::new(name, rep, 1e-2, "|lambda*(a1) - lambda*(a2)| at the 25% and 75% gap quantiles")
                }
                None => CheckResult::skipped(name, "no stationary law"),
            },
            "simulation_consistency" => match (&sim, lambda_star) {
                (Some(s), Some(ls)) => {
                    let diff = (s.estimate.mean_cost - ls).abs();
                    CheckResult::new(
                        name,
                        diff,
                        3.0 * s.estimate.stderr,
                        format!("Monte Carlo {} +- {} vs lambda* {ls}", s.estimate.mean_cost, s.estimate.stderr),
                    )
                }
                _ => CheckResult::skipped(name, "simulation disabled"),
            },
            "degenerate_relation" => match spec.frozen_params() {
                Some(p) => {
                    let e = check_degenerate_relation(&spec, &fb, p.level).at(Stage::Checks)?;
                    CheckResult::new(name, e, 5e-2, "|c(a-) + K- b(a-) - c(a+) + K+ b(a+)|")
                }
                None => CheckResult::skipped(name, "factor is not frozen"),
            },
            other => {
                return Err(PipelineError {
                    stage: Stage::Checks,
                    error: Error::Config(format!("unknown check `{other}`")),
                })
            }
        };
        checks.push(r);
    }
    let sensitivity = sensitivity(&spec, &grid, &solver, &fb, lambda_star, &solved, alpha)?;
    timings.insert("checks".to_string(), elapsed_ms(t));
    let sensitivity = json!({
        "mapped_nodes_out_of_domain": solved.mapped_out,
        "lipschitz_estimate": lipschitz_estimate(&fb),
        "details": sensitivity,
    });

    Ok(PipelineOutput {
        spec,
        validation,
        grid,
        u: solved.u_xy.clone(),
        solution: solved.solution.clone(),
        boundaries: fb,
        potential,
        lambda,
        density,
        lambda_star,
        hjb,
        hypothesis,
        sim,
        checks,
        sensitivity,
        timings_ms: timings,
    })
}

/// OU factor: re-solve on a y-range shrunk by 20% and compare the bands on
/// the inner half. Filter: recompute `λ*` with `ε_y` doubled and halved.
fn sensitivity(
    spec: &ModelSpec,
    grid: &Grid2D,
    solver: &SolverConfig,
    fb: &FreeBoundaries,
    lambda_star: Option<f64>,
    solved: &Solved,
    alpha: f64,
) -> std::result::Result<Value, PipelineError> {
    match spec.kind {
        ModelKind::OUInventory => {
            let mid = 0.5 * (grid.y_lo() + grid.y_hi());
            let half = 0.4 * (grid.y_hi() - grid.y_lo());
            let n_y = ((grid.n_y() - 1) as f64 * 0.8).round() as usize + 1;
            let g2 = build_grid(grid.x_lo(), grid.x_hi(), grid.n_x(), mid - half, mid + half, n_y).at(Stage::Checks)?;
            let s2 = solve_on(spec, &g2, solver)?;
            let fb2 = extract_boundaries(&s2.u_xy, spec).at(Stage::Checks)?;
            let mut worst: f64 = 0.0;
            for &y in &grid.y_nodes {
                if (y - mid).abs() <= 0.5 * (grid.y_hi() - grid.y_lo()) * 0.5 {
                    let (p1, m1) = row_band(fb, y);
                    let (p2, m2) = row_band(&fb2, y);
                    worst = worst.max((p1 - p2).abs()).max((m1 - m2).abs());
                }
            }
            Ok(json!({
                "kind": "factor truncation shrunk by 20%",
                "max_boundary_shift_inner_half": worst,
                "h_x": grid.h_x,
            }))
        }
        ModelKind::FilteredInventory => {
            let p = spec.filtered_params().expect("filtered model");
            let lam = lambda_for(spec, solved, fb, alpha, &grid.y_nodes).at(Stage::Checks)?;
            let mut out = BTreeMap::new();
            for (label, eps) in [("eps_y_halved", 0.5 * p.eps_y), ("eps_y_doubled", 2.0 * p.eps_y)] {
                let v = filter_stationary_density(p.lambda1, p.lambda2, p.gamma(), 2001, eps)
                    .and_then(|d| ergodic_value(&lam, &d))
                    .ok();
                out.insert(label.to_string(), json!(v.zip(lambda_star).map(|(a, b)| (a - b).abs())));
            }
            Ok(json!({ "kind": "filter endpoint clipping", "lambda_star_change": out }))
        }
        _ => Ok(Value::Null),
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn report_json(out: &PipelineOutput, config_hash: &str) -> Value {
    json!({
        "config_hash": config_hash,
        "model": out.spec.kind.to_string(),
        "alpha": out.potential.alpha,
        "alpha_snap_distance": out.potential.snap_distance,
        "gap": [out.boundaries.sup_a_plus, out.boundaries.inf_a_minus],
        "boundary_jumps": out.boundaries.jumps,
        "lambda_star": out.lambda_star,
        "solver": {
            "iterations": out.solution.iters,
            "last_delta": out.solution.last_delta,
        },
        "hjb_residual": out.hjb,
        "hypothesis": out.hypothesis,
        "validation": out.validation,
        "density": out.density.as_ref().map(|d| json!({
            "kind": d.kind,
            "normalization_error": d.normalization_error,
            "clipped_mass": d.clipped_mass,
        })),
        "checks": out.checks,
        "sensitivity": out.sensitivity,
    })
}

/// Runs the pipeline and writes all artifacts to `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<RunManifest, PipelineError> {
    run_pipeline_with(config, true)
}

pub fn run_pipeline_with(config: &PipelineConfig, with_sim: bool) -> std::result::Result<RunManifest, PipelineError> {
    let out = compute(config, with_sim)?;
    write_outputs(config, &out).at(Stage::Write)
}

pub fn write_outputs(config: &PipelineConfig, out: &PipelineOutput) -> Result<RunManifest> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let hash = config.config_hash();
    write_file(dir, "U.csv", &out.u.to_csv())?;
    write_file(dir, "boundaries.csv", &out.boundaries.to_csv())?;
    write_file(dir, "V.csv", &out.potential.v.to_csv())?;
    write_file(dir, "lambda.csv", &out.lambda.to_csv())?;
    let density_csv = out.density.as_ref().map(|d| d.to_csv()).unwrap_or_else(|| "y,p\n".to_string());
    write_file(dir, "density.csv", &density_csv)?;
    let sim_path = dir.join("sim.json");
    match &out.sim {
        Some(s) => {
            let v = json!({
                "lambda_star": out.lambda_star,
                "simulation": s,
            });
            write_file(dir, "sim.json", &serde_json::to_string_pretty(&v)?)?;
        }
        None => {
            if sim_path.exists() {
                fs::remove_file(&sim_path)?;
            }
        }
    }
    write_file(dir, "report.json", &serde_json::to_string_pretty(&report_json(out, &hash))?)?;

    let mut artifacts = Vec::new();
    for name in ARTIFACTS.iter().filter(|n| **n != "manifest.json") {
        let p = dir.join(name);
        if p.exists() {
            artifacts.push(ArtifactEntry {
                file: name.to_string(),
                bytes: fs::metadata(&p)?.len(),
            });
        }
    }
    let checks: BTreeMap<String, String> = out
        .checks
        .iter()
        .map(|c| {
            let s = serde_json::to_value(c.outcome).expect("outcome serializes");
            (c.name.clone(), s.as_str().unwrap_or("?").to_string())
        })
        .collect();
    let mut versions = BTreeMap::new();
    versions.insert("ergodic-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
    let mut manifest = RunManifest {
        config_hash: hash,
        model: out.spec.kind.to_string(),
        alpha: out.potential.alpha,
        lambda_star: out.lambda_star,
        artifacts,
        all_checks_passed: out.checks.iter().all(|c| c.outcome != Outcome::Fail),
        checks,
        versions,
        timings_ms: out.timings_ms.clone(),
        output_dir: dir.clone(),
    };
    // The manifest lists itself; iterate until its recorded size is stable.
    manifest.artifacts.push(ArtifactEntry {
        file: "manifest.json".to_string(),
        bytes: 0,
    });
    let mut text = String::new();
    for _ in 0..8 {
        text = serde_json::to_string_pretty(&manifest)?;
        let len = text.len() as u64;
        let last = manifest.artifacts.last_mut().expect("manifest entry");
        if last.bytes == len {
            break;
        }
        last.bytes = len;
    }
    write_file(dir, "manifest.json", &text)?;
    Ok(manifest)
}

const PLOT_U: &str = r#"import csv
import matplotlib.pyplot as plt
import numpy as np

rows = list(csv.DictReader(open("U.csv")))
x = np.array(sorted({float(r["x"]) for r in rows}))
y = np.array(sorted({float(r["y"]) for r in rows}))
u = np.array([float(r["value"]) for r in rows]).reshape(len(y), len(x))
b = list(csv.DictReader(open("boundaries.csv")))
by = [float(r["y"]) for r in b]
plt.pcolormesh(x, y, u, shading="auto", cmap="RdBu_r")
plt.colorbar(label="U")
plt.plot([float(r["a_plus"]) for r in b], by, "k-", label="a+")
plt.plot([float(r["a_minus"]) for r in b], by, "k--", label="a-")
plt.xlabel("x")
plt.ylabel("y")
plt.legend()
plt.savefig("U.png", dpi=150)
"#;

const PLOT_LAMBDA: &str = r#"import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("lambda.csv")))
plt.plot([float(r["y"]) for r in rows], [float(r["lambda"]) for r in rows])
plt.xlabel("y")
plt.ylabel("lambda(y)")
plt.savefig("lambda.png", dpi=150)
"#;

const PLOT_PATH: &str = r#"import json
import matplotlib.pyplot as plt

sim = json.load(open("sim.json"))["simulation"]
tr = sim["trace"]
t = [r["t"] for r in tr]
fig, ax = plt.subplots(2, 1, sharex=True)
ax[0].plot(t, [r["x"] for r in tr], lw=0.6)
ax[0].set_ylabel("x")
ax[1].plot(t, [r["y"] for r in tr], lw=0.6)
ax[1].set_ylabel("y")
ax[1].set_xlabel("t")
fig.savefig("path.png", dpi=150)
"#;

/// Writes one plotting script per figure next to the artifacts and returns
/// their paths. Scripts read files relative to the output directory.
pub fn emit_plots(manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    let dir = &manifest.output_dir;
    for need in ["U.csv", "boundaries.csv", "lambda.csv"] {
        if !manifest.has(need) || !dir.join(need).exists() {
            return Err(Error::MissingArtifact(need.to_string()));
        }
    }
    let mut scripts = vec![("plot_U.py", PLOT_U), ("plot_lambda.py", PLOT_LAMBDA)];
    if manifest.has("sim.json") && dir.join("sim.json").exists() {
        scripts.push(("plot_path.py", PLOT_PATH));
    } else {
        eprintln!("notice: sim.json not present, skipping the path plot");
    }
    let mut out = Vec::new();
    for (name, body) in scripts {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> PipelineConfig {
        PipelineConfig::from_json(
            r#"{
                "model": {"kind": "OUInventory",
                          "params": {"m": 0.0, "b": 1.0, "delta": 0.5, "sigma1": 1.0, "sigma2": 1.0},
                          "K_plus": 1.0, "K_minus": 1.0},
                "grid": {"x_lo": -6, "x_hi": 6, "n_x": 41, "n_y": 41},
                "output_dir": "unused"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn hash_ignores_output_dir_but_not_params() {
        let a = minimal();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.grid.n_x = 43;
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn unknown_check_is_a_config_error() {
        let mut c = minimal();
        c.checks = Some(vec!["nope".to_string()]);
        let err = compute(&c, false).unwrap_err();
        assert_eq!(err.stage, Stage::Validate);
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_alpha_keyword() {
        let mut c = minimal();
        c.alpha = AlphaChoice::Keyword("middle".to_string());
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_checks_per_kind() {
        let c = minimal();
        assert_eq!(c.enabled_checks(ModelKind::OUInventory).len(), 6);
        assert!(c
            .enabled_checks(ModelKind::DegenerateNoFactor)
            .contains(&"degenerate_relation".to_string()));
        assert_eq!(c.solver_for(ModelKind::FilteredInventory).sweep, SweepOrder::Symmetric);
    }

    #[test]
    fn coarse_run_in_memory() {
        let out = compute(&minimal(), false).unwrap();
        assert!(out.lambda_star.unwrap() > 0.0);
        assert!((out.potential.alpha - out.boundaries.gap_midpoint()).abs() <= out.grid.h_x);
        let sim = out.checks.iter().find(|c| c.name == "simulation_consistency").unwrap();
        assert_eq!(sim.outcome, Outcome::Skipped);
    }
}
