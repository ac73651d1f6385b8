//! Problem instances: controlled inventory dynamics driven by a one-dimensional
//! factor, running cost and proportional push costs.
//!
//! The state `x` follows `dX = b(X,Y)dt + σ(X,Y)dW + dξ⁺ − dξ⁻` and the factor
//! `dY = η(Y)dt + ζ(Y)dB` with `d⟨W,B⟩ = ρ dt`. Two closed-form case studies
//! are built in (the filtered two-regime inventory and the OU-demand
//! inventory), plus a frozen-factor variant and a fully custom variant.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clipping of the filter state space `(0, 1)`.
pub const DEFAULT_EPS_Y: f64 = 1e-3;
/// Default truncation of the OU factor, in stationary standard deviations.
pub const DEFAULT_TRUNCATION_SDS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    FilteredInventory,
    OUInventory,
    Custom1DFactor,
    DegenerateNoFactor,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::FilteredInventory => "FilteredInventory",
            ModelKind::OUInventory => "OUInventory",
            ModelKind::Custom1DFactor => "Custom1DFactor",
            ModelKind::DegenerateNoFactor => "DegenerateNoFactor",
        };
        f.write_str(s)
    }
}

pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type FactorFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Running cost `c(x, y)` together with its x-derivative.
#[derive(Clone)]
pub enum CostSpec {
    /// `c(x) = weight · (x − target)²`
    Quadratic { weight: f64, target: f64 },
    Custom { c: StateFn, c_x: StateFn },
}

impl CostSpec {
    pub fn quadratic(weight: f64, target: f64) -> Self {
        CostSpec::Quadratic { weight, target }
    }

    pub fn custom(
        c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        c_x: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CostSpec::Custom {
            c: Arc::new(c),
            c_x: Arc::new(c_x),
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            CostSpec::Quadratic { weight, target } => weight * (x - target) * (x - target),
            CostSpec::Custom { c, .. } => c(x, y),
        }
    }

    pub fn marginal(&self, x: f64, y: f64) -> f64 {
        match self {
            CostSpec::Quadratic { weight, target } => 2.0 * weight * (x - target),
            CostSpec::Custom { c_x, .. } => c_x(x, y),
        }
    }

    /// `(c')⁻¹(v)` when the cost depends on x only and is strictly convex.
    pub fn inverse_marginal(&self, v: f64) -> Option<f64> {
        match self {
            CostSpec::Quadratic { weight, target } if *weight > 0.0 => {
                Some(target + v / (2.0 * weight))
            }
            _ => None,
        }
    }

    /// Growth exponent `p` of the cost, when known.
    pub fn growth_exponent(&self) -> Option<f64> {
        match self {
            CostSpec::Quadratic { .. } => Some(2.0),
            CostSpec::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::Quadratic { weight, target } => f
                .debug_struct("Quadratic")
                .field("weight", weight)
                .field("target", target)
                .finish(),
            CostSpec::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// User-supplied coefficient functions for [`ModelKind::Custom1DFactor`].
#[derive(Clone)]
pub struct CustomDynamics {
    pub b: StateFn,
    pub b_x: StateFn,
    pub sigma: StateFn,
    pub sigma_x: StateFn,
    pub eta: FactorFn,
    pub zeta: FactorFn,
    pub rho: f64,
}

impl CustomDynamics {
    /// Constant-coefficient dynamics; handy for building test problems.
    pub fn constant(b: f64, b_x: f64, sigma: f64, eta: f64, zeta: f64, rho: f64) -> Self {
        CustomDynamics {
            b: Arc::new(move |_, _| b),
            b_x: Arc::new(move |_, _| b_x),
            sigma: Arc::new(move |_, _| sigma),
            sigma_x: Arc::new(|_, _| 0.0),
            eta: Arc::new(move |_| eta),
            zeta: Arc::new(move |_| zeta),
            rho,
        }
    }
}

#[derive(Clone)]
enum Dynamics {
    Filtered(FilteredInventoryParams),
    Ou(OuInventoryParams),
    Frozen(FrozenFactorParams),
    Custom(CustomDynamics),
}

/// Two-regime inventory observed through its own path; the factor is the
/// Wonham filter `Π_t = P(ε_t = 1 | observations)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteredInventoryParams {
    pub m1: f64,
    pub m2: f64,
    pub sigma: f64,
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    pub eps_y: f64,
}

impl FilteredInventoryParams {
    pub fn gamma(&self) -> f64 {
        (self.m1 - self.m2) / self.sigma
    }

    /// Regime-averaged mean-reversion level `m(y) = m₂ + (m₁ − m₂)y`.
    pub fn mean_level(&self, y: f64) -> f64 {
        self.m2 + (self.m1 - self.m2) * y
    }
}

/// Inventory whose mean-reversion level is an observable OU process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuInventoryParams {
    pub m: f64,
    pub b: f64,
    pub delta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    pub truncation_sds: f64,
}

impl OuInventoryParams {
    pub fn stationary_mean(&self) -> f64 {
        self.m / self.b
    }

    pub fn stationary_sd(&self) -> f64 {
        self.sigma2 / (2.0 * self.b).sqrt()
    }
}

/// Mean-reverting inventory `dX = (y − δX)dt + σdW` with `y` a frozen parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenFactorParams {
    pub delta: f64,
    pub sigma: f64,
    pub level: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    pub half_width: f64,
}

/// One evaluation of every coefficient at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientSample {
    pub b: f64,
    pub b_x: f64,
    pub sigma: f64,
    pub sigma_x: f64,
    pub eta: f64,
    pub zeta: f64,
    pub rho_zeta: f64,
    pub c: f64,
    pub c_x: f64,
    /// `b + σσ_x`
    pub hat_drift_x: f64,
    /// `η + σ_x ρζ`
    pub hat_drift_y: f64,
}

#[derive(Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub cost: CostSpec,
    pub k_plus: f64,
    pub k_minus: f64,
    pub factor_domain: (f64, f64),
    pub params: BTreeMap<String, f64>,
    dynamics: Dynamics,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("kind", &self.kind)
            .field("cost", &self.cost)
            .field("k_plus", &self.k_plus)
            .field("k_minus", &self.k_minus)
            .field("factor_domain", &self.factor_domain)
            .field("params", &self.params)
            .finish()
    }
}

fn require(cond: bool, field: &str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(field, message))
    }
}

fn require_costs(k_plus: f64, k_minus: f64) -> Result<()> {
    require(k_plus > 0.0 && k_plus.is_finite(), "K_plus", "K_plus must be positive")?;
    require(k_minus > 0.0 && k_minus.is_finite(), "K_minus", "K_minus must be positive")
}

pub fn make_filtered_inventory_model(p: FilteredInventoryParams, cost: CostSpec) -> Result<ModelSpec> {
    require(p.m1 > p.m2, "m1", "m1 must exceed m2")?;
    require(p.sigma > 0.0, "sigma", "sigma must be positive")?;
    require(p.delta > 0.0, "delta", "delta must be positive")?;
    require(p.lambda1 > 0.0, "lambda1", "lambda1 must be positive")?;
    require(p.lambda2 > 0.0, "lambda2", "lambda2 must be positive")?;
    require(p.eps_y > 0.0 && p.eps_y < 0.5, "eps_y", "eps_y must lie in (0, 1/2)")?;
    require_costs(p.k_plus, p.k_minus)?;

    let mut params = BTreeMap::new();
    for (k, v) in [
        ("m1", p.m1),
        ("m2", p.m2),
        ("sigma", p.sigma),
        ("delta", p.delta),
        ("lambda1", p.lambda1),
        ("lambda2", p.lambda2),
        ("gamma", p.gamma()),
        ("eps_y", p.eps_y),
    ] {
        params.insert(k.to_string(), v);
    }
    if let CostSpec::Quadratic { target, .. } = cost {
        params.insert("x_bar".to_string(), target);
    }
    Ok(ModelSpec {
        kind: ModelKind::FilteredInventory,
        cost,
        k_plus: p.k_plus,
        k_minus: p.k_minus,
        factor_domain: (p.eps_y, 1.0 - p.eps_y),
        params,
        dynamics: Dynamics::Filtered(p),
    })
}

pub fn make_ou_inventory_model(p: OuInventoryParams) -> Result<ModelSpec> {
    require(p.delta > 0.0, "delta", "delta must be positive")?;
    require(p.b > p.delta, "b", "Assumption b > delta violated")?;
    require(p.sigma1 > 0.0, "sigma1", "sigma1 must be positive")?;
    require(p.sigma2 > 0.0, "sigma2", "sigma2 must be positive")?;
    require(p.rho.abs() < 1.0, "rho", "|rho| must be below 1")?;
    require(p.truncation_sds > 0.0, "truncation_sds", "truncation must be positive")?;
    require_costs(p.k_plus, p.k_minus)?;

    let mean = p.stationary_mean();
    let half = p.truncation_sds * p.stationary_sd();
    let mut params = BTreeMap::new();
    for (k, v) in [
        ("m", p.m),
        ("b", p.b),
        ("delta", p.delta),
        ("sigma1", p.sigma1),
        ("sigma2", p.sigma2),
        ("rho", p.rho),
        ("truncation_sds", p.truncation_sds),
        ("x_bar", 0.0),
    ] {
        params.insert(k.to_string(), v);
    }
    Ok(ModelSpec {
        kind: ModelKind::OUInventory,
        cost: CostSpec::quadratic(0.5, 0.0),
        k_plus: p.k_plus,
        k_minus: p.k_minus,
        factor_domain: (mean - half, mean + half),
        params,
        dynamics: Dynamics::Ou(p),
    })
}

pub fn make_frozen_factor_model(p: FrozenFactorParams, cost: CostSpec) -> Result<ModelSpec> {
    require(p.delta > 0.0, "delta", "delta must be positive")?;
    require(p.sigma > 0.0, "sigma", "sigma must be positive")?;
    require(p.half_width > 0.0, "half_width", "half_width must be positive")?;
    require_costs(p.k_plus, p.k_minus)?;
    let mut params = BTreeMap::new();
    for (k, v) in [
        ("delta", p.delta),
        ("sigma", p.sigma),
        ("level", p.level),
        ("half_width", p.half_width),
    ] {
        params.insert(k.to_string(), v);
    }
    if let CostSpec::Quadratic { target, .. } = cost {
        params.insert("x_bar".to_string(), target);
    }
    Ok(ModelSpec {
        kind: ModelKind::DegenerateNoFactor,
        cost,
        k_plus: p.k_plus,
        k_minus: p.k_minus,
        factor_domain: (p.level - p.half_width, p.level + p.half_width),
        params,
        dynamics: Dynamics::Frozen(p),
    })
}

pub fn make_custom_model(
    dynamics: CustomDynamics,
    cost: CostSpec,
    k_plus: f64,
    k_minus: f64,
    factor_domain: (f64, f64),
) -> Result<ModelSpec> {
    require_costs(k_plus, k_minus)?;
    require(dynamics.rho.abs() <= 1.0, "rho", "rho must lie in [-1, 1]")?;
    require(
        factor_domain.0 < factor_domain.1,
        "factor_domain",
        "factor domain must be a nonempty interval",
    )?;
    Ok(ModelSpec {
        kind: ModelKind::Custom1DFactor,
        cost,
        k_plus,
        k_minus,
        factor_domain,
        params: BTreeMap::new(),
        dynamics: Dynamics::Custom(dynamics),
    })
}

impl ModelSpec {
    pub fn with_cost(mut self, cost: CostSpec) -> Self {
        self.cost = cost;
        self
    }

    pub fn b(&self, x: f64, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Filtered(p) => p.mean_level(y) - p.delta * x,
            Dynamics::Ou(p) => y - p.delta * x,
            Dynamics::Frozen(p) => y - p.delta * x,
            Dynamics::Custom(d) => (d.b)(x, y),
        }
    }

    pub fn b_x(&self, x: f64, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Filtered(p) => -p.delta,
            Dynamics::Ou(p) => -p.delta,
            Dynamics::Frozen(p) => -p.delta,
            Dynamics::Custom(d) => (d.b_x)(x, y),
        }
    }

    pub fn sigma(&self, x: f64, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Filtered(p) => p.sigma,
            Dynamics::Ou(p) => p.sigma1,
            Dynamics::Frozen(p) => p.sigma,
            Dynamics::Custom(d) => (d.sigma)(x, y),
        }
    }

    pub fn sigma_x(&self, x: f64, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Custom(d) => (d.sigma_x)(x, y),
            _ => 0.0,
        }
    }

    pub fn eta(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Filtered(p) => p.lambda2 - (p.lambda1 + p.lambda2) * y,
            Dynamics::Ou(p) => p.m - p.b * y,
            Dynamics::Frozen(_) => 0.0,
            Dynamics::Custom(d) => (d.eta)(y),
        }
    }

    pub fn zeta(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Filtered(p) => p.gamma() * y * (1.0 - y),
            Dynamics::Ou(p) => p.sigma2,
            Dynamics::Frozen(_) => 0.0,
            Dynamics::Custom(d) => (d.zeta)(y),
        }
    }

    pub fn rho(&self) -> f64 {
        match &self.dynamics {
            Dynamics::Filtered(_) => 1.0,
            Dynamics::Ou(p) => p.rho,
            Dynamics::Frozen(_) => 0.0,
            Dynamics::Custom(d) => d.rho,
        }
    }

    pub fn c(&self, x: f64, y: f64) -> f64 {
        self.cost.value(x, y)
    }

    pub fn c_x(&self, x: f64, y: f64) -> f64 {
        self.cost.marginal(x, y)
    }

    /// Drift of the x-component of the Dynkin-game process.
    pub fn hat_drift_x(&self, x: f64, y: f64) -> f64 {
        self.b(x, y) + self.sigma(x, y) * self.sigma_x(x, y)
    }

    /// Drift of the factor component of the Dynkin-game process.
    pub fn hat_drift_y(&self, x: f64, y: f64) -> f64 {
        self.eta(y) + self.sigma_x(x, y) * self.rho() * self.zeta(y)
    }

    pub fn filtered_params(&self) -> Option<&FilteredInventoryParams> {
        match &self.dynamics {
            Dynamics::Filtered(p) => Some(p),
            _ => None,
        }
    }

    pub fn ou_params(&self) -> Option<&OuInventoryParams> {
        match &self.dynamics {
            Dynamics::Ou(p) => Some(p),
            _ => None,
        }
    }

    pub fn frozen_params(&self) -> Option<&FrozenFactorParams> {
        match &self.dynamics {
            Dynamics::Frozen(p) => Some(p),
            _ => None,
        }
    }

    /// `Some(δ)` when `b_x ≡ −δ` is known in closed form.
    pub fn constant_discount(&self) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Filtered(p) => Some(p.delta),
            Dynamics::Ou(p) => Some(p.delta),
            Dynamics::Frozen(p) => Some(p.delta),
            Dynamics::Custom(_) => None,
        }
    }

    /// True when the factor does not move (`η ≡ ζ ≡ 0`).
    pub fn has_frozen_factor(&self) -> bool {
        matches!(self.dynamics, Dynamics::Frozen(_))
    }

    pub fn in_factor_domain(&self, y: f64) -> bool {
        let (lo, hi) = self.factor_domain;
        y >= lo && y <= hi
    }

    /// Change of coordinates `(x, y) ↔ (x, z)` for the filtered model.
    pub fn filter_transform(&self) -> Option<FilterTransform> {
        self.filtered_params().map(|p| FilterTransform { p: *p })
    }
}

pub fn eval_coefficients(spec: &ModelSpec, x: f64, y: f64) -> Result<CoefficientSample> {
    if !x.is_finite() || !spec.in_factor_domain(y) {
        return Err(Error::DomainError { x, y });
    }
    let zeta = spec.zeta(y);
    Ok(CoefficientSample {
        b: spec.b(x, y),
        b_x: spec.b_x(x, y),
        sigma: spec.sigma(x, y),
        sigma_x: spec.sigma_x(x, y),
        eta: spec.eta(y),
        zeta,
        rho_zeta: spec.rho() * zeta,
        c: spec.c(x, y),
        c_x: spec.c_x(x, y),
        hat_drift_x: spec.hat_drift_x(x, y),
        hat_drift_y: spec.hat_drift_y(x, y),
    })
}

/// Log-odds coordinates for the filtered model: `z = (σ/γ) log(y/(1−y)) − x`.
///
/// In `(x, z)` the pair is driven by a single noise acting on `x` only, and
/// `z` has finite variation with drift `q(x, z)`.
#[derive(Debug, Clone, Copy)]
pub struct FilterTransform {
    p: FilteredInventoryParams,
}

impl FilterTransform {
    pub fn params(&self) -> &FilteredInventoryParams {
        &self.p
    }

    pub fn scale(&self) -> f64 {
        self.p.sigma / self.p.gamma()
    }

    pub fn z_of(&self, x: f64, y: f64) -> f64 {
        self.scale() * (y / (1.0 - y)).ln() - x
    }

    pub fn y_of(&self, x: f64, z: f64) -> f64 {
        let s = (z + x) / self.scale();
        // logistic, written to avoid overflow for large |s|
        if s >= 0.0 {
            1.0 / (1.0 + (-s).exp())
        } else {
            let e = s.exp();
            e / (1.0 + e)
        }
    }

    pub fn mu(&self, x: f64, z: f64) -> f64 {
        self.p.mean_level(self.y_of(x, z)) - self.p.delta * x
    }

    pub fn q(&self, x: f64, z: f64) -> f64 {
        let p = &self.p;
        let gamma = p.gamma();
        let s = (z + x) / self.scale();
        let y = self.y_of(x, z);
        // (1 + e^{-s})(λ₂ − λ₁e^{s}) = λ₂ − λ₁ + λ₂e^{-s} − λ₁e^{s}
        let regime = p.lambda2 - p.lambda1 + p.lambda2 * (-s).exp() - p.lambda1 * s.exp();
        p.sigma * gamma * (y - 0.5) + self.scale() * regime - p.mean_level(y) + p.delta * x
    }
}

/// Outcome of one named assumption check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub overall: bool,
}

impl ValidationReport {
    fn push(&mut self, name: &str, passed: bool, message: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            message,
        });
        self.overall = self.checks.iter().all(|c| c.passed);
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Checks the standing assumptions relevant to the model kind. Failures are
/// reported, never raised.
pub fn validate_params(spec: &ModelSpec) -> ValidationReport {
    let mut report = ValidationReport {
        checks: Vec::new(),
        overall: true,
    };
    report.push(
        "positive push costs",
        spec.k_plus > 0.0 && spec.k_minus > 0.0,
        format!("K_plus = {}, K_minus = {}", spec.k_plus, spec.k_minus),
    );

    match &spec.dynamics {
        Dynamics::Filtered(p) => {
            let gamma = p.gamma();
            report.push("gamma > 0", gamma > 0.0, format!("gamma = {gamma}"));
            report.push(
                "factor domain inside (0,1)",
                spec.factor_domain.0 > 0.0 && spec.factor_domain.1 < 1.0,
                format!("domain = {:?}", spec.factor_domain),
            );
            let lam = p.lambda1 + p.lambda2;
            match spec.cost.growth_exponent() {
                Some(2.0) => {
                    let bound = (gamma * gamma - lam).max(0.0);
                    report.push(
                        "discount bound (p = 2)",
                        p.delta > bound,
                        format!("delta = {} vs (gamma^2 - (lambda1+lambda2)) v 0 = {}", p.delta, bound),
                    );
                }
                Some(pw) => {
                    let g2 = gamma * gamma;
                    let r = (pw - 1.0) / pw;
                    let bound = (g2 - lam)
                        .max(6.0 * g2 - 2.0 * lam)
                        .max(2.0 * r * (2.0 * pw - 3.0) * g2 - 2.0 * r * lam)
                        .max(0.0);
                    report.push(
                        "discount bound (p > 2)",
                        p.delta > bound,
                        format!("delta = {} vs bound {}", p.delta, bound),
                    );
                }
                None => report.push(
                    "discount bound",
                    true,
                    "cost growth exponent unknown; bound not checked".to_string(),
                ),
            }
            convexity_check(spec, &mut report);
        }
        Dynamics::Ou(p) => {
            report.push(
                "b > delta",
                p.b > p.delta,
                format!("b = {}, delta = {}", p.b, p.delta),
            );
            report.push("|rho| < 1", p.rho.abs() < 1.0, format!("rho = {}", p.rho));
            convexity_check(spec, &mut report);
        }
        Dynamics::Frozen(p) => {
            report.push("delta > 0", p.delta > 0.0, format!("delta = {}", p.delta));
            convexity_check(spec, &mut report);
        }
        Dynamics::Custom(_) => {
            // Lipschitz/growth conditions cannot be verified symbolically; sample instead.
            let (lo, hi) = spec.factor_domain;
            let mut min_sigma = f64::INFINITY;
            let mut worst_cx: f64 = 0.0;
            let mut worst_bx: f64 = 0.0;
            let h = 1e-4;
            for i in 0..=20 {
                let x = -10.0 + i as f64;
                for j in 0..=20 {
                    let y = lo + (hi - lo) * j as f64 / 20.0;
                    min_sigma = min_sigma.min(spec.sigma(x, y));
                    let fd_c = (spec.c(x + h, y) - spec.c(x - h, y)) / (2.0 * h);
                    worst_cx = worst_cx.max((fd_c - spec.c_x(x, y)).abs() / (1.0 + fd_c.abs()));
                    let fd_b = (spec.b(x + h, y) - spec.b(x - h, y)) / (2.0 * h);
                    worst_bx = worst_bx.max((fd_b - spec.b_x(x, y)).abs() / (1.0 + fd_b.abs()));
                }
            }
            report.push(
                "sigma > 0 on sampled grid",
                min_sigma > 0.0,
                format!("min sigma = {min_sigma}"),
            );
            report.push(
                "c_x consistent with c",
                worst_cx < 1e-5,
                format!("max relative mismatch {worst_cx:e}"),
            );
            report.push(
                "b_x consistent with b",
                worst_bx < 1e-5,
                format!("max relative mismatch {worst_bx:e}"),
            );
        }
    }
    report
}

fn convexity_check(spec: &ModelSpec, report: &mut ValidationReport) {
    match &spec.cost {
        CostSpec::Quadratic { weight, .. } => report.push(
            "strictly convex cost",
            *weight > 0.0,
            format!("quadratic weight = {weight}"),
        ),
        CostSpec::Custom { .. } => report.push(
            "strictly convex cost",
            true,
            "custom cost; convexity not verified".to_string(),
        ),
    }
}

/// JSON form of a model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
    #[serde(rename = "K_plus")]
    pub k_plus: f64,
    #[serde(rename = "K_minus")]
    pub k_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: String,
    #[serde(default)]
    pub target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

struct ParamBag<'a> {
    map: &'a BTreeMap<String, f64>,
    allowed: &'static [&'static str],
}

impl ParamBag<'_> {
    fn check_keys(&self) -> Result<()> {
        for k in self.map.keys() {
            if !self.allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown parameter `{k}`")));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Result<f64> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{key}`")))
    }

    fn get_or(&self, key: &str, default: f64) -> f64 {
        self.map.get(key).copied().unwrap_or(default)
    }
}

impl ModelConfig {
    fn cost(&self, default_weight: f64) -> Result<CostSpec> {
        match &self.cost {
            None => Ok(CostSpec::quadratic(default_weight, 0.0)),
            Some(c) if c.kind == "quadratic" => {
                Ok(CostSpec::quadratic(c.weight.unwrap_or(default_weight), c.target))
            }
            Some(c) => Err(Error::Config(format!("unsupported cost kind `{}`", c.kind))),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match self.kind {
            ModelKind::FilteredInventory => {
                let bag = ParamBag {
                    map: &self.params,
                    allowed: &["m1", "m2", "sigma", "delta", "lambda1", "lambda2", "eps_y"],
                };
                bag.check_keys()?;
                let p = FilteredInventoryParams {
                    m1: bag.get("m1")?,
                    m2: bag.get("m2")?,
                    sigma: bag.get("sigma")?,
                    delta: bag.get("delta")?,
                    lambda1: bag.get("lambda1")?,
                    lambda2: bag.get("lambda2")?,
                    k_plus: self.k_plus,
                    k_minus: self.k_minus,
                    eps_y: bag.get_or("eps_y", DEFAULT_EPS_Y),
                };
                make_filtered_inventory_model(p, self.cost(1.0)?)
            }
            ModelKind::OUInventory => {
                let bag = ParamBag {
                    map: &self.params,
                    allowed: &["m", "b", "delta", "sigma1", "sigma2", "rho", "truncation_sds"],
                };
                bag.check_keys()?;
                let p = OuInventoryParams {
                    m: bag.get("m")?,
                    b: bag.get("b")?,
                    delta: bag.get("delta")?,
                    sigma1: bag.get("sigma1")?,
                    sigma2: bag.get("sigma2")?,
                    rho: bag.get_or("rho", 0.0),
                    k_plus: self.k_plus,
                    k_minus: self.k_minus,
                    truncation_sds: bag.get_or("truncation_sds", DEFAULT_TRUNCATION_SDS),
                };
                let spec = make_ou_inventory_model(p)?;
                Ok(match &self.cost {
                    Some(_) => spec.with_cost(self.cost(0.5)?),
                    None => spec,
                })
            }
            ModelKind::DegenerateNoFactor => {
                let bag = ParamBag {
                    map: &self.params,
                    allowed: &["delta", "sigma", "level", "half_width"],
                };
                bag.check_keys()?;
                let p = FrozenFactorParams {
                    delta: bag.get("delta")?,
                    sigma: bag.get("sigma")?,
                    level: bag.get_or("level", 0.0),
                    k_plus: self.k_plus,
                    k_minus: self.k_minus,
                    half_width: bag.get_or("half_width", 1.0),
                };
                make_frozen_factor_model(p, self.cost(0.5)?)
            }
            ModelKind::Custom1DFactor => Err(Error::Config(
                "Custom1DFactor models carry code and cannot be built from JSON".to_string(),
            )),
        }
    }
}
