//! Stationary law of the factor and the ergodic value `λ* = ∫ λ dp∞`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::value_profile::LambdaProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DensityKind {
    GaussianClosedForm { mean: f64, variance: f64 },
    GridDensity,
    /// All mass at one level; used when the factor is frozen.
    PointMass { at: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Density {
    pub kind: DensityKind,
    pub y_nodes: Vec<f64>,
    /// Density values at `y_nodes` (normalized on the tabulated range).
    pub mass: Vec<f64>,
    /// `|∫ p − 1|` on the tabulated range after normalization.
    pub normalization_error: f64,
    /// Probability outside the tabulated range.
    pub clipped_mass: f64,
}

fn trapezoid(y: &[f64], f: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut comp = 0.0;
    for k in 1..y.len() {
        let term = 0.5 * (y[k] - y[k - 1]) * (f[k] + f[k - 1]);
        let t = s + term;
        comp += if s.abs() >= term.abs() { (s - t) + term } else { (term - t) + s };
        s = t;
    }
    s + comp
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + h * i as f64 }).collect()
}

fn erfc_approx(x: f64) -> f64 {
    // Numerical Recipes erfcc, fractional error below 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

impl Density {
    /// Normal law tabulated on `mean ± half_width_sds · sd` with `n` nodes.
    pub fn gaussian(mean: f64, variance: f64, half_width_sds: f64, n: usize) -> Result<Density> {
        if !(variance > 0.0) {
            return Err(Error::invalid("variance", "must be positive"));
        }
        if n < 3 || !(half_width_sds > 0.0) {
            return Err(Error::invalid("n", "need at least 3 nodes and a positive width"));
        }
        let sd = variance.sqrt();
        let y_nodes = linspace(mean - half_width_sds * sd, mean + half_width_sds * sd, n);
        let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
        let mass: Vec<f64> = y_nodes
            .iter()
            .map(|y| norm * (-(y - mean) * (y - mean) / (2.0 * variance)).exp())
            .collect();
        let integral = trapezoid(&y_nodes, &mass);
        Ok(Density {
            kind: DensityKind::GaussianClosedForm { mean, variance },
            y_nodes,
            mass,
            normalization_error: (integral - 1.0).abs(),
            clipped_mass: erfc_approx(half_width_sds / std::f64::consts::SQRT_2),
        })
    }

    pub fn point_mass(at: f64) -> Density {
        Density {
            kind: DensityKind::PointMass { at },
            y_nodes: vec![at],
            mass: vec![1.0],
            normalization_error: 0.0,
            clipped_mass: 0.0,
        }
    }

    /// Trapezoid integral of the tabulated density.
    pub fn total_mass(&self) -> f64 {
        match self.kind {
            DensityKind::PointMass { .. } => 1.0,
            _ => trapezoid(&self.y_nodes, &self.mass),
        }
    }

    /// Probability of each bin `[edges[k], edges[k+1])`, from the tabulated
    /// density refined by linear interpolation.
    pub fn bin_masses(&self, edges: &[f64]) -> Vec<f64> {
        let total = self.total_mass();
        edges
            .windows(2)
            .map(|w| {
                let pts = linspace(w[0], w[1], 65);
                let vals: Vec<f64> = pts.iter().map(|&y| self.pdf(y)).collect();
                trapezoid(&pts, &vals) / total
            })
            .collect()
    }

    /// Tabulated density at `y` by linear interpolation (zero outside).
    pub fn pdf(&self, y: f64) -> f64 {
        let n = self.y_nodes.len();
        if n < 2 || y < self.y_nodes[0] || y > self.y_nodes[n - 1] {
            return 0.0;
        }
        let k = self.y_nodes.partition_point(|&v| v <= y).clamp(1, n - 1);
        let (y0, y1) = (self.y_nodes[k - 1], self.y_nodes[k]);
        let t = (y - y0) / (y1 - y0);
        self.mass[k - 1] + t * (self.mass[k] - self.mass[k - 1])
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            DensityKind::PointMass { at } => at,
            _ => {
                let f: Vec<f64> = self.y_nodes.iter().zip(&self.mass).map(|(y, p)| y * p).collect();
                trapezoid(&self.y_nodes, &f) / self.total_mass()
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,p\n");
        for (y, p) in self.y_nodes.iter().zip(&self.mass) {
            let _ = writeln!(s, "{y:.16e},{p:.16e}");
        }
        s
    }
}

pub fn ou_stationary_density(m: f64, b: f64, sigma2: f64) -> Result<Density> {
    if !(b > 0.0) {
        return Err(Error::invalid("b", "must be positive"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "must be positive"));
    }
    Density::gaussian(m / b, sigma2 * sigma2 / (2.0 * b), 6.0, 2001)
}

/// Antiderivative of `(λ₂ − (λ₁+λ₂)u) / (u²(1−u)²)`.
/// `v = 1 − u` is passed separately to keep precision near both ends.
fn filter_antiderivative(l1: f64, l2: f64, u: f64, v: f64) -> f64 {
    -l2 / u + (l2 - l1) * u.ln() - (l2 - l1) * v.ln() - l1 / v
}

fn filter_log_speed(l1: f64, l2: f64, gamma: f64, u: f64, v: f64) -> f64 {
    let f_half = -2.0 * l2 - 2.0 * l1;
    -2.0 * (u.ln() + v.ln()) + 2.0 / (gamma * gamma) * (filter_antiderivative(l1, l2, u, v) - f_half)
}

/// Stationary density of the Wonham filter on `[eps_y, 1 − eps_y]` from its
/// speed measure.
pub fn filter_stationary_density(lambda1: f64, lambda2: f64, gamma: f64, n_quad: usize, eps_y: f64) -> Result<Density> {
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2), ("gamma", gamma)] {
        if !(v > 0.0) {
            return Err(Error::invalid(name, "must be positive"));
        }
    }
    if n_quad < 100 {
        return Err(Error::invalid("n_quad", "need at least 100 nodes"));
    }
    if !(eps_y > 0.0 && eps_y < 0.5) {
        return Err(Error::invalid("eps_y", "must lie in (0, 1/2)"));
    }
    let logp = |u: f64, v: f64| filter_log_speed(lambda1, lambda2, gamma, u, v);

    // Reference integral over (0, 1) in logit coordinates, du = u(1−u) ds.
    let s_max = 60.0;
    let ss = linspace(-s_max, s_max, 48_001);
    let lw: Vec<f64> = ss
        .iter()
        .map(|&s| {
            let u = 1.0 / (1.0 + (-s).exp());
            let v = 1.0 / (1.0 + s.exp());
            logp(u, v) + u.ln() + v.ln()
        })
        .collect();
    let y_nodes = linspace(eps_y, 1.0 - eps_y, n_quad);
    let lp: Vec<f64> = y_nodes.iter().map(|&u| logp(u, 1.0 - u)).collect();
    let shift = lw.iter().chain(&lp).copied().fold(f64::NEG_INFINITY, f64::max);
    let full = trapezoid(&ss, &lw.iter().map(|v| (v - shift).exp()).collect::<Vec<_>>());

    let raw: Vec<f64> = lp.iter().map(|v| (v - shift).exp()).collect();
    let inside = trapezoid(&y_nodes, &raw);
    if !(inside > 0.0) || !full.is_finite() {
        return Err(Error::QuadratureFailure(f64::INFINITY));
    }
    let clipped = ((full - inside) / full).max(0.0);
    if clipped > 1e-4 {
        return Err(Error::QuadratureFailure(clipped));
    }
    let mass: Vec<f64> = raw.iter().map(|v| v / inside).collect();
    let normalization_error = (trapezoid(&y_nodes, &mass) - 1.0).abs();
    Ok(Density {
        kind: DensityKind::GridDensity,
        y_nodes,
        mass,
        normalization_error,
        clipped_mass: clipped,
    })
}

/// Stationary law of the factor of `spec`, when one is known.
pub fn factor_density(spec: &ModelSpec) -> Result<Density> {
    match spec.kind {
        ModelKind::OUInventory => {
            let p = spec.ou_params().expect("OU model");
            let (lo, hi) = spec.factor_domain;
            let d = ou_stationary_density(p.m, p.b, p.sigma2)?;
            // tabulate on the model's own truncation
            let DensityKind::GaussianClosedForm { mean, variance } = d.kind else {
                unreachable!()
            };
            let half = (hi - lo) / 2.0 / variance.sqrt();
            Density::gaussian(mean, variance, half, 2001)
        }
        ModelKind::FilteredInventory => {
            let p = spec.filtered_params().expect("filtered model");
            filter_stationary_density(p.lambda1, p.lambda2, p.gamma(), 2001, p.eps_y)
        }
        ModelKind::DegenerateNoFactor => {
            let p = spec.frozen_params().expect("frozen model");
            Ok(Density::point_mass(p.level))
        }
        ModelKind::Custom1DFactor => Err(Error::Config(
            "no stationary law is available for custom factors; use the simulated time average".to_string(),
        )),
    }
}

/// `∫ λ(y) p∞(dy)` with the density renormalized on its tabulated range.
pub fn ergodic_value(lam: &LambdaProfile, pinf: &Density) -> Result<f64> {
    if lam.y_nodes.is_empty() {
        return Err(Error::invalid("lambda", "empty profile"));
    }
    if let DensityKind::PointMass { at } = pinf.kind {
        return Ok(lam.at(at));
    }
    let f: Vec<f64> = pinf
        .y_nodes
        .iter()
        .zip(&pinf.mass)
        .map(|(&y, &p)| lam.at(y) * p)
        .collect();
    Ok(trapezoid(&pinf.y_nodes, &f) / pinf.total_mass())
}
