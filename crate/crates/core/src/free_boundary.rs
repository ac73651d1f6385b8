//! Reflection band `a₊(y) < x < a₋(y)` read off the solved Dynkin value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_operator::{Grid2D, ValueField};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundaries {
    pub y_nodes: Vec<f64>,
    /// Lower boundary (buy below it).
    pub a_plus: Vec<f64>,
    /// Upper boundary (sell above it).
    pub a_minus: Vec<f64>,
    pub sup_a_plus: f64,
    pub inf_a_minus: f64,
    /// Rows `j` with `|a(y_{j+1}) − a(y_j)| > 10 h_x` on either boundary.
    #[serde(default)]
    pub jumps: Vec<usize>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn inf(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl FreeBoundaries {
    /// Builds boundaries from explicit arrays; `h_x` sets the jump threshold.
    pub fn new(y_nodes: Vec<f64>, a_plus: Vec<f64>, a_minus: Vec<f64>, h_x: f64) -> Result<Self> {
        if y_nodes.is_empty() || a_plus.len() != y_nodes.len() || a_minus.len() != y_nodes.len() {
            return Err(Error::invalid("a_plus", "boundary arrays must match y_nodes"));
        }
        let jumps = (0..y_nodes.len().saturating_sub(1))
            .filter(|&j| {
                (a_plus[j + 1] - a_plus[j]).abs() > 10.0 * h_x || (a_minus[j + 1] - a_minus[j]).abs() > 10.0 * h_x
            })
            .collect();
        Ok(FreeBoundaries {
            sup_a_plus: sup(&a_plus),
            inf_a_minus: inf(&a_minus),
            y_nodes,
            a_plus,
            a_minus,
            jumps,
        })
    }

    /// Constant band, mostly for tests and brute-force searches.
    pub fn constant(y_lo: f64, y_hi: f64, lower: f64, upper: f64) -> Self {
        FreeBoundaries {
            y_nodes: vec![y_lo, y_hi],
            a_plus: vec![lower; 2],
            a_minus: vec![upper; 2],
            sup_a_plus: lower,
            inf_a_minus: upper,
            jumps: Vec::new(),
        }
    }

    pub fn h_y(&self) -> f64 {
        let n = self.y_nodes.len();
        if n < 2 {
            0.0
        } else {
            (self.y_nodes[n - 1] - self.y_nodes[0]) / (n - 1) as f64
        }
    }

    /// Midpoint of the gap `(sup a₊, inf a₋)`.
    pub fn gap_midpoint(&self) -> f64 {
        0.5 * (self.sup_a_plus + self.inf_a_minus)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,a_plus,a_minus\n");
        for j in 0..self.y_nodes.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e}",
                self.y_nodes[j], self.a_plus[j], self.a_minus[j]
            );
        }
        s
    }
}

/// Linear-interpolation crossing of `level` between nodes `i` and `i + 1`.
fn crossing(x: &[f64], u: &[f64], i: usize, level: f64) -> f64 {
    let du = u[i + 1] - u[i];
    if du.abs() < f64::MIN_POSITIVE {
        return x[i];
    }
    let t = ((level - u[i]) / du).clamp(0.0, 1.0);
    x[i] + t * (x[i + 1] - x[i])
}

/// Tolerance for the per-row monotonicity assertion.
pub fn monotonicity_tolerance(spec: &ModelSpec) -> f64 {
    1e-6 * (spec.k_plus + spec.k_minus)
}

pub fn extract_boundaries(u: &ValueField, spec: &ModelSpec) -> Result<FreeBoundaries> {
    let g = &u.grid;
    let n_x = g.n_x();
    let eps_c = 1e-6 * (spec.k_plus + spec.k_minus);
    let upper = spec.k_minus - eps_c;
    let lower = -spec.k_plus + eps_c;
    let mono_tol = monotonicity_tolerance(spec);

    let mut a_plus = Vec::with_capacity(g.n_y());
    let mut a_minus = Vec::with_capacity(g.n_y());
    let mut truncated = Vec::new();
    for j in 0..g.n_y() {
        let row = u.row(j);
        for i in 0..n_x - 1 {
            let drop = row[i] - row[i + 1];
            if drop > mono_tol {
                return Err(Error::NotMonotone { row: j, node: i, drop });
            }
        }
        let first_top = row.iter().position(|&v| v >= upper);
        let last_bottom = row.iter().rposition(|&v| v <= lower);
        match (last_bottom, first_top) {
            (Some(ib), Some(it)) if ib > 0 && it + 1 < n_x && ib < it => {
                a_plus.push(crossing(&g.x_nodes, row, ib, lower));
                a_minus.push(crossing(&g.x_nodes, row, it - 1, upper));
            }
            _ => {
                truncated.push(j);
                a_plus.push(f64::NAN);
                a_minus.push(f64::NAN);
            }
        }
    }
    if !truncated.is_empty() {
        return Err(Error::DomainTooSmall { rows: truncated });
    }
    FreeBoundaries::new(g.y_nodes.clone(), a_plus, a_minus, g.h_x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flag {
    pub ok: bool,
    /// Row (or node flat index for sign checks) of the worst margin.
    pub worst: Option<usize>,
    /// Worst signed margin; negative means violated.
    pub margin: f64,
}

impl Flag {
    fn from_margins(margins: impl Iterator<Item = (usize, f64)>, slack: f64) -> Flag {
        let mut worst = None;
        let mut margin = f64::INFINITY;
        for (k, m) in margins {
            if m < margin {
                margin = m;
                worst = Some(k);
            }
        }
        Flag {
            ok: margin >= -slack,
            worst,
            margin,
        }
    }

    fn vacuous() -> Flag {
        Flag {
            ok: true,
            worst: None,
            margin: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub separation_ok: Flag,
    pub sign_minus_ok: Flag,
    pub sign_plus_ok: Flag,
    pub monotone_ok: Flag,
    /// `None` when the analytic bounds do not apply (non-quadratic or
    /// factor-dependent cost, or non-constant `b_x`).
    pub bounds_ok: Option<Flag>,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.separation_ok.ok
            && self.sign_minus_ok.ok
            && self.sign_plus_ok.ok
            && self.monotone_ok.ok
            && self.bounds_ok.is_none_or(|f| f.ok)
    }
}

/// Analytic bounds `((c')⁻¹(−K₊δ), (c')⁻¹(K₋δ))` when they apply.
pub fn analytic_bounds(spec: &ModelSpec) -> Option<(f64, f64)> {
    let delta = spec.constant_discount()?;
    let lo = spec.cost.inverse_marginal(-spec.k_plus * delta)?;
    let hi = spec.cost.inverse_marginal(spec.k_minus * delta)?;
    Some((lo, hi))
}

pub fn check_hypothesis(fb: &FreeBoundaries, spec: &ModelSpec, grid: &Grid2D) -> HypothesisReport {
    let n = fb.y_nodes.len();
    let sign_tol = 1e-12 * (spec.k_plus + spec.k_minus).max(1.0);

    let mut sep: Vec<(usize, f64)> = (0..n).map(|j| (j, fb.a_minus[j] - fb.a_plus[j])).collect();
    sep.push((n, fb.inf_a_minus - fb.sup_a_plus));
    let mut separation_ok = Flag::from_margins(sep.into_iter(), 0.0);
    separation_ok.ok = separation_ok.margin > 0.0;

    let mut minus = Vec::new();
    let mut plus = Vec::new();
    for (j, &y) in grid.y_nodes.iter().enumerate() {
        let (ap, am) = row_band(fb, y);
        for (i, &x) in grid.x_nodes.iter().enumerate() {
            let k = grid.idx(i, j);
            if x >= am {
                minus.push((k, spec.c_x(x, y) + spec.k_minus * spec.b_x(x, y)));
            }
            if x <= ap {
                plus.push((k, -(spec.c_x(x, y) - spec.k_plus * spec.b_x(x, y))));
            }
        }
    }
    let sign_minus_ok = if minus.is_empty() {
        Flag::vacuous()
    } else {
        Flag::from_margins(minus.into_iter(), sign_tol)
    };
    let sign_plus_ok = if plus.is_empty() {
        Flag::vacuous()
    } else {
        Flag::from_margins(plus.into_iter(), sign_tol)
    };

    let slack = 1e-6 * grid.h_x;
    let monotone_ok = if n < 2 {
        Flag::vacuous()
    } else {
        Flag::from_margins(
            (0..n - 1).map(|j| {
                let m = (fb.a_plus[j] - fb.a_plus[j + 1]).min(fb.a_minus[j] - fb.a_minus[j + 1]);
                (j, m)
            }),
            slack,
        )
    };

    let bounds_ok = analytic_bounds(spec).map(|(lo, hi)| {
        Flag::from_margins(
            (0..n).map(|j| (j, (lo - fb.a_plus[j]).min(fb.a_minus[j] - hi))),
            2.0 * grid.h_x,
        )
    });

    HypothesisReport {
        separation_ok,
        sign_minus_ok,
        sign_plus_ok,
        monotone_ok,
        bounds_ok,
    }
}

/// Boundaries at factor level `y` by linear interpolation, constant beyond
/// the tabulated range.
pub fn row_band(fb: &FreeBoundaries, y: f64) -> (f64, f64) {
    let n = fb.y_nodes.len();
    if n == 1 || y <= fb.y_nodes[0] {
        return (fb.a_plus[0], fb.a_minus[0]);
    }
    if y >= fb.y_nodes[n - 1] {
        return (fb.a_plus[n - 1], fb.a_minus[n - 1]);
    }
    let h = fb.h_y();
    let s = (y - fb.y_nodes[0]) / h;
    let j = (s.floor() as usize).min(n - 2);
    let t = (y - fb.y_nodes[j]) / (fb.y_nodes[j + 1] - fb.y_nodes[j]);
    (
        fb.a_plus[j] + t * (fb.a_plus[j + 1] - fb.a_plus[j]),
        fb.a_minus[j] + t * (fb.a_minus[j + 1] - fb.a_minus[j]),
    )
}

/// `max_j |a(y_{j+1}) − a(y_j)| / h_y` over both boundaries.
pub fn lipschitz_estimate(fb: &FreeBoundaries) -> f64 {
    let h = fb.h_y();
    if fb.y_nodes.len() < 2 || h <= 0.0 {
        return 0.0;
    }
    let slope = |a: &[f64]| a.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    slope(&fb.a_plus).max(slope(&fb.a_minus)) / h
}

/// Largest `|U − K₋|` over nodes at least one cell beyond `a₋`, and the
/// symmetric quantity at `−K₊`.
pub fn contact_consistency(u: &ValueField, fb: &FreeBoundaries, spec: &ModelSpec) -> f64 {
    let g = &u.grid;
    let mut worst: f64 = 0.0;
    for j in 0..g.n_y() {
        for (i, &x) in g.x_nodes.iter().enumerate() {
            let v = u.at(i, j);
            if x >= fb.a_minus[j] + g.h_x {
                worst = worst.max((v - spec.k_minus).abs());
            }
            if x <= fb.a_plus[j] - g.h_x {
                worst = worst.max((v + spec.k_plus).abs());
            }
        }
    }
    worst
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::grid_operator::build_grid;
    use crate::model::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ramps_recover_their_kinks(lo in -2.0f64..-0.2, hi in 0.2f64..2.0, tilt in 0.0f64..0.5) {
            let spec = make_ou_inventory_model(OuInventoryParams {
                m: 0.0, b: 1.0, delta: 0.5, sigma1: 1.0, sigma2: 1.0, rho: 0.0,
                k_plus: 1.0, k_minus: 1.0, truncation_sds: 6.0,
            }).unwrap();
            let g = build_grid(-4.0, 4.0, 161, 0.0, 1.0, 6).unwrap();
            // band shifts left as y grows
            let u = ValueField::from_fn(g.clone(), "U", |x, y| {
                let s = x + tilt * y;
                (-1.0 + 2.0 * (s - lo) / (hi - lo)).clamp(-1.0, 1.0)
            });
            let fb = extract_boundaries(&u, &spec).unwrap();
            for j in 0..g.n_y() {
                let y = g.y_nodes[j];
                prop_assert!((fb.a_plus[j] - (lo - tilt * y)).abs() <= g.h_x);
                prop_assert!((fb.a_minus[j] - (hi - tilt * y)).abs() <= g.h_x);
            }
            prop_assert!(check_hypothesis(&fb, &spec, &g).monotone_ok.ok);
        }
    }
}
