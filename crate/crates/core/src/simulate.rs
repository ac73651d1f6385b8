//! Monte Carlo engine for the reflected inventory.
//!
//! Each path draws from its own ChaCha8 stream `(seed, path)`, so results do
//! not depend on scheduling. Reflection is an Euler step followed by a
//! projection onto `[a₊(Y), a₋(Y)]`; the projected distance is charged to
//! `ξ⁺` or `ξ⁻`.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_boundary::{row_band, FreeBoundaries};
use crate::model::{ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Stepper {
    #[default]
    EulerMaruyama,
    /// Exact Gaussian transition for an OU factor; Euler elsewhere.
    ExactOUFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// Defaults to 10% of the horizon.
    #[serde(default)]
    pub burn_in: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub stepper: Stepper,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            dt,
            n_paths,
            burn_in: None,
            seed,
            stepper: Stepper::EulerMaruyama,
        }
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(0.1 * self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive and finite"));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon / 100.0) {
            return Err(Error::invalid("dt", "must satisfy 0 < dt <= horizon / 100"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "need at least one path"));
        }
        let b = self.burn_in();
        if !(b >= 0.0 && b < self.horizon) {
            return Err(Error::invalid("burn_in", "must lie in [0, horizon)"));
        }
        Ok(())
    }

    fn steps(&self) -> (usize, usize) {
        let n = (self.horizon / self.dt).round() as usize;
        let burn = (self.burn_in() / self.dt).round() as usize;
        (n, burn.min(n.saturating_sub(1)))
    }
}

/// Long-run cost estimate; all rates are per unit time after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicEstimate {
    pub mean_cost: f64,
    pub stderr: f64,
    pub running: f64,
    pub push_plus: f64,
    pub push_minus: f64,
    /// Largest single-step overshoot outside the band before projection.
    pub band_violation_max: f64,
    pub paths_used: usize,
    /// Time average of the factor (of `Π` for the filtered model).
    pub factor_time_average: f64,
    /// Time average of `𝟙{ε = 1}` when the hidden chain is simulated.
    pub regime_one_fraction: Option<f64>,
    /// Fraction of steps whose factor lay outside the tabulated boundaries.
    pub extrapolated_fraction: f64,
    pub max_abs_x: f64,
    /// Steps in which both `ξ⁺` and `ξ⁻` increased.
    pub simultaneous_pushes: u64,
    pub path_costs: Vec<f64>,
    pub path_factor_averages: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_regime_averages: Option<Vec<f64>>,
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = Neumaier::default();
    v.iter().for_each(|&x| s.add(x));
    let mean = s.total() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut q = Neumaier::default();
    v.iter().for_each(|&x| q.add((x - mean) * (x - mean)));
    (mean, (q.total() / (n - 1) as f64 / n as f64).sqrt())
}

/// Band lookup with a fast path for constant bands (which may be infinite).
#[derive(Debug, Clone)]
pub enum ReflectionBand {
    Constant { lower: f64, upper: f64 },
    Interpolated(FreeBoundaries),
}

impl ReflectionBand {
    pub fn from_boundaries(fb: &FreeBoundaries) -> Self {
        let flat = |a: &[f64]| a.iter().all(|&v| v == a[0]);
        if flat(&fb.a_plus) && flat(&fb.a_minus) {
            ReflectionBand::Constant {
                lower: fb.a_plus[0],
                upper: fb.a_minus[0],
            }
        } else {
            ReflectionBand::Interpolated(fb.clone())
        }
    }

    /// `(a₊, a₋, extrapolated)` at factor level `y`.
    fn at(&self, y: f64) -> (f64, f64, bool) {
        match self {
            ReflectionBand::Constant { lower, upper } => (*lower, *upper, false),
            ReflectionBand::Interpolated(fb) => {
                let (lo, hi) = row_band(fb, y);
                let out = y < fb.y_nodes[0] || y > fb.y_nodes[fb.y_nodes.len() - 1];
                (lo, hi, out)
            }
        }
    }

    fn shifted(&self, dl: f64, du: f64) -> Self {
        match self {
            ReflectionBand::Constant { lower, upper } => ReflectionBand::Constant {
                lower: lower + dl,
                upper: upper + du,
            },
            ReflectionBand::Interpolated(fb) => {
                let mut g = fb.clone();
                g.a_plus.iter_mut().for_each(|a| *a += dl);
                g.a_minus.iter_mut().for_each(|a| *a += du);
                g.sup_a_plus += dl;
                g.inf_a_minus += du;
                ReflectionBand::Interpolated(g)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub xi_plus: f64,
    pub xi_minus: f64,
    pub cost_running: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("t,x,y,xi_plus,xi_minus,cost_running\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.10e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.x, r.y, r.xi_plus, r.xi_minus, r.cost_running
        );
    }
    s
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Separated,
    /// Hidden chain simulated; `y0` is the prior `Π₀`.
    PartiallyObserved,
}

type Observer<'o> = &'o mut dyn FnMut(usize, &TraceRow);

struct Engine<'a> {
    spec: &'a ModelSpec,
    band: &'a ReflectionBand,
    x0: f64,
    y0: f64,
    cfg: &'a SimConfig,
    mode: Mode,
}

#[derive(Debug, Clone, Copy, Default)]
struct PathStats {
    running: f64,
    push_plus: f64,
    push_minus: f64,
    factor_avg: f64,
    regime_avg: f64,
    violation: f64,
    extrapolated: u64,
    max_abs_x: f64,
    simultaneous: u64,
}

impl Engine<'_> {
    fn band_at(&self, y: f64) -> Result<(f64, f64, bool)> {
        let (lo, hi, out) = self.band.at(y);
        if !(lo < hi) {
            return Err(Error::BandCollapse { y, lower: lo, upper: hi });
        }
        Ok((lo, hi, out))
    }

    fn check_filter(&self, p: f64, t: f64) -> Result<f64> {
        if !(-1e-10..=1.0 + 1e-10).contains(&p) {
            return Err(Error::FilterEscape { t, value: p });
        }
        Ok(p.clamp(0.0, 1.0))
    }

    fn run(&self, path: u64, mut observer: Option<Observer<'_>>) -> Result<PathStats> {
        let spec = self.spec;
        let cfg = self.cfg;
        let dt = cfg.dt;
        let sq = dt.sqrt();
        let (n_steps, burn) = cfg.steps();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path);

        let rho = spec.rho();
        let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
        let frozen = spec.has_frozen_factor();
        let filtered = spec.kind == ModelKind::FilteredInventory;
        let ou = spec.ou_params().copied();
        let exact_ou = cfg.stepper == Stepper::ExactOUFactor && ou.is_some();
        let (ou_decay, ou_sd) = match ou {
            Some(p) if exact_ou => {
                let e = (-p.b * dt).exp();
                (e, p.sigma2 * ((1.0 - (-2.0 * p.b * dt).exp()) / (2.0 * p.b)).sqrt())
            }
            _ => (0.0, 0.0),
        };
        let fp = spec.filtered_params().copied();

        let mut x = self.x0;
        let mut y = self.y0;
        let mut regime_one = false;
        if let Mode::PartiallyObserved = self.mode {
            let u: f64 = Open01.sample(&mut rng);
            regime_one = u < self.y0;
        }
        let (lo, hi, _) = self.band_at(y)?;
        let (mut xi_p, mut xi_m) = (0.0, 0.0);
        if x < lo {
            xi_p += lo - x;
            x = lo;
        } else if x > hi {
            xi_m += x - hi;
            x = hi;
        }

        let mut running = Neumaier::default();
        let mut factor = Neumaier::default();
        let mut regime = 0u64;
        let (mut xi_p_burn, mut xi_m_burn) = (xi_p, xi_m);
        let mut st = PathStats::default();
        let mut emit = |k: usize, x: f64, y: f64, xp: f64, xm: f64, r: f64| {
            if let Some(f) = observer.as_mut() {
                f(
                    k,
                    &TraceRow {
                        t: k as f64 * dt,
                        x,
                        y,
                        xi_plus: xp,
                        xi_minus: xm,
                        cost_running: r,
                    },
                );
            }
        };
        emit(0, x, y, xi_p, xi_m, 0.0);

        for k in 0..n_steps {
            if k == burn {
                xi_p_burn = xi_p;
                xi_m_burn = xi_m;
            }
            if k >= burn {
                running.add(spec.c(x, y) * dt);
                factor.add(y * dt);
                if regime_one {
                    regime += 1;
                }
            }
            let t = (k + 1) as f64 * dt;
            let z1: f64 = StandardNormal.sample(&mut rng);
            let (x_new, y_new) = match self.mode {
                Mode::Separated => {
                    let x_new = x + spec.b(x, y) * dt + spec.sigma(x, y) * sq * z1;
                    let y_new = if frozen {
                        y
                    } else if exact_ou {
                        let p = ou.expect("OU model");
                        let z2: f64 = StandardNormal.sample(&mut rng);
                        let mean = p.m / p.b;
                        mean + (y - mean) * ou_decay + ou_sd * (rho * z1 + rho_perp * z2)
                    } else {
                        let noise = if rho_perp > 0.0 {
                            let z2: f64 = StandardNormal.sample(&mut rng);
                            rho * z1 + rho_perp * z2
                        } else {
                            rho * z1
                        };
                        y + spec.eta(y) * dt + spec.zeta(y) * sq * noise
                    };
                    let y_new = if filtered { self.check_filter(y_new, t)? } else { y_new };
                    (x_new, y_new)
                }
                Mode::PartiallyObserved => {
                    let p = fp.expect("filtered model");
                    let u: f64 = Open01.sample(&mut rng);
                    let dw = sq * z1;
                    let m_true = if regime_one { p.m1 } else { p.m2 };
                    let x_new = x + (m_true - p.delta * x) * dt + p.sigma * dw;
                    let innovation = dw + (m_true - p.mean_level(y)) / p.sigma * dt;
                    let y_new = y
                        + (p.lambda2 - (p.lambda1 + p.lambda2) * y) * dt
                        + p.gamma() * y * (1.0 - y) * innovation;
                    let rate = if regime_one { p.lambda1 } else { p.lambda2 };
                    if u < -(-rate * dt).exp_m1() {
                        regime_one = !regime_one;
                    }
                    (x_new, self.check_filter(y_new, t)?)
                }
            };
            x = x_new;
            y = y_new;
            let (lo, hi, out) = self.band_at(y)?;
            if out {
                st.extrapolated += 1;
            }
            let (mut dp, mut dm) = (0.0, 0.0);
            if x < lo {
                dp = lo - x;
                x = lo;
            } else if x > hi {
                dm = x - hi;
                x = hi;
            }
            if dp > 0.0 && dm > 0.0 {
                st.simultaneous += 1;
            }
            xi_p += dp;
            xi_m += dm;
            st.violation = st.violation.max(dp).max(dm);
            st.max_abs_x = st.max_abs_x.max(x.abs());
            emit(k + 1, x, y, xi_p, xi_m, running.total());
        }
        let span = (n_steps - burn) as f64 * dt;
        st.running = running.total() / span;
        st.push_plus = spec.k_plus * (xi_p - xi_p_burn) / span;
        st.push_minus = spec.k_minus * (xi_m - xi_m_burn) / span;
        st.factor_avg = factor.total() / span;
        st.regime_avg = regime as f64 * dt / span;
        Ok(st)
    }

    fn run_all(&self) -> Result<Vec<PathStats>> {
        self.cfg.validate()?;
        (0..self.cfg.n_paths as u64)
            .into_par_iter()
            .map(|p| self.run(p, None))
            .collect()
    }
}

fn aggregate(stats: &[PathStats], cfg: &SimConfig, with_regime: bool) -> ErgodicEstimate {
    let n_steps = cfg.steps().0 * stats.len();
    let col = |f: fn(&PathStats) -> f64| stats.iter().map(f).collect::<Vec<_>>();
    let running = mean_stderr(&col(|s| s.running)).0;
    let push_plus = mean_stderr(&col(|s| s.push_plus)).0;
    let push_minus = mean_stderr(&col(|s| s.push_minus)).0;
    let path_costs = col(|s| s.running + s.push_plus + s.push_minus);
    let (_, stderr) = mean_stderr(&path_costs);
    let path_factor_averages = col(|s| s.factor_avg);
    let path_regime = col(|s| s.regime_avg);
    ErgodicEstimate {
        mean_cost: running + push_plus + push_minus,
        stderr,
        running,
        push_plus,
        push_minus,
        band_violation_max: stats.iter().fold(0.0, |m, s| m.max(s.violation)),
        paths_used: stats.len(),
        factor_time_average: mean_stderr(&path_factor_averages).0,
        regime_one_fraction: with_regime.then(|| mean_stderr(&path_regime).0),
        extrapolated_fraction: stats.iter().map(|s| s.extrapolated).sum::<u64>() as f64 / n_steps.max(1) as f64,
        max_abs_x: stats.iter().fold(0.0, |m, s| m.max(s.max_abs_x)),
        simultaneous_pushes: stats.iter().map(|s| s.simultaneous).sum(),
        path_costs,
        path_factor_averages,
        path_regime_averages: with_regime.then_some(path_regime),
    }
}

fn simulate_band(spec: &ModelSpec, band: &ReflectionBand, x0: f64, y0: f64, cfg: &SimConfig) -> Result<ErgodicEstimate> {
    let engine = Engine {
        spec,
        band,
        x0,
        y0,
        cfg,
        mode: Mode::Separated,
    };
    Ok(aggregate(&engine.run_all()?, cfg, false))
}

/// Ergodic cost of reflecting at `fb` under the separated dynamics.
pub fn simulate_reflected(spec: &ModelSpec, fb: &FreeBoundaries, x0: f64, y0: f64, cfg: &SimConfig) -> Result<ErgodicEstimate> {
    simulate_band(spec, &ReflectionBand::from_boundaries(fb), x0, y0, cfg)
}

/// Same estimate when the hidden regime is simulated and `Π` is computed
/// online from the observed inventory.
pub fn simulate_partially_observed(
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    x0: f64,
    pi0: f64,
    cfg: &SimConfig,
) -> Result<ErgodicEstimate> {
    if spec.kind != ModelKind::FilteredInventory {
        return Err(Error::SchemeMismatch(format!(
            "partial observation needs a FilteredInventory model, got {}",
            spec.kind
        )));
    }
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::invalid("pi0", "must lie in (0, 1)"));
    }
    let band = ReflectionBand::from_boundaries(fb);
    let engine = Engine {
        spec,
        band: &band,
        x0,
        y0: pi0,
        cfg,
        mode: Mode::PartiallyObserved,
    };
    Ok(aggregate(&engine.run_all()?, cfg, true))
}

/// Records one path of the separated dynamics every `stride` steps.
pub fn sample_path(
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
    stride: usize,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let band = ReflectionBand::from_boundaries(fb);
    let engine = Engine {
        spec,
        band: &band,
        x0,
        y0,
        cfg,
        mode: Mode::Separated,
    };
    let stride = stride.max(1);
    let mut rows = Vec::new();
    let mut keep = |k: usize, r: &TraceRow| {
        if k.is_multiple_of(stride) {
            rows.push(*r);
        }
    };
    engine.run(0, Some(&mut keep))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Perturbation {
    Baseline,
    /// `(a₊ + s, a₋ + s)`.
    Shift,
    /// `(a₊ − s, a₋ + s)`.
    Widen,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyComparison {
    pub variant: Perturbation,
    pub shift: f64,
    pub estimate: ErgodicEstimate,
    /// Mean of `perturbed − baseline` over paired paths.
    pub diff_mean: f64,
    pub diff_stderr: f64,
}

/// Paired comparison of `fb` against shifted and widened bands under common
/// random numbers.
pub fn compare_policies(
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    x0: f64,
    y0: f64,
    perturbations: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<PolicyComparison>> {
    let base_band = ReflectionBand::from_boundaries(fb);
    let base = simulate_band(spec, &base_band, x0, y0, cfg)?;
    let mut out = vec![PolicyComparison {
        variant: Perturbation::Baseline,
        shift: 0.0,
        diff_mean: 0.0,
        diff_stderr: 0.0,
        estimate: base.clone(),
    }];
    for &s in perturbations {
        for (variant, dl, du) in [(Perturbation::Shift, s, s), (Perturbation::Widen, -s, s)] {
            let est = simulate_band(spec, &base_band.shifted(dl, du), x0, y0, cfg)?;
            let diffs: Vec<f64> = est.path_costs.iter().zip(&base.path_costs).map(|(a, b)| a - b).collect();
            let (diff_mean, diff_stderr) = mean_stderr(&diffs);
            out.push(PolicyComparison {
                variant,
                shift: s,
                estimate: est,
                diff_mean,
                diff_stderr,
            });
        }
    }
    Ok(out)
}

/// Paired cost difference of an arbitrary band against `fb`.
pub fn compare_bands(
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    other: &FreeBoundaries,
    x0: f64,
    y0: f64,
    cfg: &SimConfig,
) -> Result<(ErgodicEstimate, ErgodicEstimate, f64, f64)> {
    let a = simulate_reflected(spec, fb, x0, y0, cfg)?;
    let b = simulate_reflected(spec, other, x0, y0, cfg)?;
    let diffs: Vec<f64> = b.path_costs.iter().zip(&a.path_costs).map(|(p, q)| p - q).collect();
    let (m, s) = mean_stderr(&diffs);
    Ok((a, b, m, s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Fraction of post-burn-in time spent in each bin, pooled over paths.
    pub fractions: Vec<f64>,
    /// Time spent outside `[edges[0], edges[last]]`.
    pub outside: f64,
}

impl Histogram {
    /// `½ Σ |p_k − q_k|` against bin probabilities `q`.
    pub fn total_variation(&self, q: &[f64]) -> f64 {
        0.5 * self.fractions.iter().zip(q).map(|(p, q)| (p - q).abs()).sum::<f64>() + 0.5 * self.outside
    }
}

/// Occupation histogram of the uncontrolled factor started at `y0`.
pub fn factor_occupation_histogram(spec: &ModelSpec, y0: f64, edges: &[f64], cfg: &SimConfig) -> Result<Histogram> {
    cfg.validate()?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("edges", "need at least two increasing edges"));
    }
    let band = ReflectionBand::Constant {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    let engine = Engine {
        spec,
        band: &band,
        x0: 0.0,
        y0,
        cfg,
        mode: Mode::Separated,
    };
    let (n_steps, burn) = cfg.steps();
    let nb = edges.len() - 1;
    let counts: Vec<Vec<u64>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<Vec<u64>> {
            let mut c = vec![0u64; nb + 1];
            let mut count = |k: usize, r: &TraceRow| {
                if k < burn || k >= n_steps {
                    return;
                }
                let b = edges.partition_point(|&e| e <= r.y);
                if b == 0 || (b > nb && r.y > edges[nb]) {
                    c[nb] += 1;
                } else {
                    c[(b - 1).min(nb - 1)] += 1;
                }
            };
            engine.run(p, Some(&mut count))?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; nb + 1];
    for c in &counts {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    let all: u64 = total.iter().sum();
    Ok(Histogram {
        edges: edges.to_vec(),
        fractions: total[..nb].iter().map(|&c| c as f64 / all as f64).collect(),
        outside: total[nb] as f64 / all as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn drift_up() -> ModelSpec {
        let dynamics = CustomDynamics::constant(0.7, 0.0, 0.0, 0.0, 0.0, 0.0);
        make_custom_model(dynamics, CostSpec::quadratic(0.5, 0.0), 1.0, 2.0, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn deterministic_drift_sticks_at_upper_edge() {
        let spec = drift_up();
        let fb = FreeBoundaries::constant(0.0, 1.0, 0.0, 1.0);
        let mut cfg = SimConfig::new(10.0, 1e-2, 2, 1);
        cfg.burn_in = Some(1.0);
        let est = simulate_reflected(&spec, &fb, 0.5, 0.5, &cfg).unwrap();
        assert!((est.push_minus - 2.0 * 0.7).abs() < 1e-9, "{}", est.push_minus);
        assert!((est.running - 0.5).abs() < 1e-9);
        assert!((est.mean_cost - (0.5 + 1.4)).abs() < 1e-9);
        assert_eq!(est.push_plus, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    fn ou_spec() -> ModelSpec {
        make_ou_inventory_model(OuInventoryParams {
            m: 0.0,
            b: 1.0,
            delta: 0.5,
            sigma1: 1.0,
            sigma2: 1.0,
            rho: 0.3,
            k_plus: 1.0,
            k_minus: 1.0,
            truncation_sds: 6.0,
        })
        .unwrap()
    }

    #[test]
    fn seed_determinism_and_component_identity() {
        let spec = ou_spec();
        let fb = FreeBoundaries::constant(-3.0, 3.0, -1.0, 1.0);
        let cfg = SimConfig::new(20.0, 1e-2, 4, 99);
        let a = simulate_reflected(&spec, &fb, 0.0, 0.0, &cfg).unwrap();
        let b = simulate_reflected(&spec, &fb, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.mean_cost - (a.running + a.push_plus + a.push_minus)).abs() <= 1e-12);
        assert_eq!(a.simultaneous_pushes, 0);
        assert!(a.max_abs_x <= 1.0);
    }

    #[test]
    fn unreflected_ou_matches_lyapunov_second_moment() {
        // dX = (Y − δX)dt + σ₁dW₁, dY = −bY dt + σ₂dW₂, corr ρ.
        let spec = ou_spec();
        let (b, d, s1, s2, r) = (1.0, 0.5, 1.0, 1.0, 0.3);
        let vy = s2 * s2 / (2.0 * b);
        let cxy = r * s1 * s2 / (b + d) + vy / (b + d);
        let vx = (s1 * s1 + 2.0 * cxy) / (2.0 * d);
        let fb = FreeBoundaries::constant(-1.0, 1.0, f64::NEG_INFINITY, f64::INFINITY);
        let mut cfg = SimConfig::new(400.0, 1e-2, 16, 5);
        cfg.burn_in = Some(20.0);
        let est = simulate_reflected(&spec, &fb, 0.0, 0.0, &cfg).unwrap();
        assert!((est.mean_cost - 0.5 * vx).abs() <= 3.0 * est.stderr + 0.01, "{} vs {} ± {}", est.mean_cost, 0.5 * vx, est.stderr);
        assert_eq!(est.push_plus + est.push_minus, 0.0);
    }

    #[test]
    fn exact_ou_stepper_runs() {
        let spec = ou_spec();
        let fb = FreeBoundaries::constant(-1.0, 1.0, -1.0, 1.0);
        let mut cfg = SimConfig::new(50.0, 1e-2, 2, 3);
        cfg.stepper = Stepper::ExactOUFactor;
        let est = simulate_reflected(&spec, &fb, 0.0, 0.0, &cfg).unwrap();
        assert!(est.mean_cost.is_finite() && est.mean_cost > 0.0);
    }

    #[test]
    fn collapsed_band_is_an_error() {
        let spec = ou_spec();
        let fb = FreeBoundaries::constant(-1.0, 1.0, 0.5, 0.5);
        let cfg = SimConfig::new(1.0, 1e-2, 1, 0);
        assert!(matches!(simulate_reflected(&spec, &fb, 0.0, 0.0, &cfg), Err(Error::BandCollapse { .. })));
    }

    #[test]
    fn zero_shift_gives_zero_difference() {
        let spec = ou_spec();
        let fb = FreeBoundaries::constant(-3.0, 3.0, -1.0, 1.0);
        let cfg = SimConfig::new(5.0, 1e-2, 3, 8);
        let t = compare_policies(&spec, &fb, 0.0, 0.0, &[0.0], &cfg).unwrap();
        assert_eq!(t.len(), 3);
        for row in &t[1..] {
            assert_eq!(row.diff_mean, 0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1.0, 0.1, 1, 0).validate().is_err());
        assert!(SimConfig::new(1.0, 0.01, 0, 0).validate().is_err());
        let mut c = SimConfig::new(1.0, 0.01, 1, 0);
        c.burn_in = Some(1.0);
        assert!(c.validate().is_err());
        let json = r#"{"horizon": 10, "dt": 0.01, "n_paths": 2, "seed": 1}"#;
        let c: SimConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.burn_in(), 1.0);
        assert_eq!(c.stepper, Stepper::EulerMaruyama);
    }

    #[test]
    fn trace_is_thinned() {
        let spec = ou_spec();
        let fb = FreeBoundaries::constant(-3.0, 3.0, -1.0, 1.0);
        let cfg = SimConfig::new(1.0, 1e-2, 1, 0);
        let rows = sample_path(&spec, &fb, 0.0, 0.0, &cfg, 10).unwrap();
        assert_eq!(rows.len(), 11);
        assert!(trace_csv(&rows).starts_with("t,x,y,xi_plus,xi_minus,cost_running\n"));
    }

    fn filtered() -> ModelSpec {
        make_filtered_inventory_model(
            FilteredInventoryParams {
                m1: 0.5,
                m2: -0.5,
                sigma: 1.0,
                delta: 1.0,
                lambda1: 1.0,
                lambda2: 1.0,
                k_plus: 1.0,
                k_minus: 1.0,
                eps_y: 1e-3,
            },
            CostSpec::quadratic(1.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn filter_tracks_hidden_regime() {
        let spec = filtered();
        let fb = FreeBoundaries::constant(0.0, 1.0, -1.3, 1.3);
        let mut cfg = SimConfig::new(200.0, 1e-3, 8, 17);
        cfg.burn_in = Some(5.0);
        let est = simulate_partially_observed(&spec, &fb, 0.0, 0.5, &cfg).unwrap();
        let regime = est.path_regime_averages.as_ref().unwrap();
        let diffs: Vec<f64> = regime.iter().zip(&est.path_factor_averages).map(|(a, b)| a - b).collect();
        let (m, s) = mean_stderr(&diffs);
        assert!(m.abs() <= 3.0 * s + 1e-3, "{m} ± {s}");
    }

    #[test]
    fn histogram_counts_everything() {
        let spec = ou_spec();
        let edges: Vec<f64> = (0..=10).map(|k| -2.0 + 0.4 * k as f64).collect();
        let cfg = SimConfig::new(10.0, 1e-2, 2, 4);
        let h = factor_occupation_histogram(&spec, 0.0, &edges, &cfg).unwrap();
        let s: f64 = h.fractions.iter().sum::<f64>() + h.outside;
        assert!((s - 1.0).abs() < 1e-12);
    }
}
