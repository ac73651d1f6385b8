//! Pseudo-potential `V = ∫_α^x U`, value profile `λ(y)` and the checks that
//! tie them to the HJB equation with gradient constraints.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::free_boundary::{row_band, FreeBoundaries};
use crate::grid_operator::{DiscreteOperator, Grid2D, NodeKind, ValueField};
use crate::model::{ModelKind, ModelSpec};
use crate::stationary::{ergodic_value, Density};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaProfile {
    pub y_nodes: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub alpha: f64,
    pub model: ModelKind,
}

impl LambdaProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,lambda\n");
        for (y, l) in self.y_nodes.iter().zip(&self.lambda_values) {
            let _ = writeln!(s, "{y:.16e},{l:.16e}");
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.lambda_values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Linear interpolation in `y`, constant beyond the tabulated range.
    pub fn at(&self, y: f64) -> f64 {
        let n = self.y_nodes.len();
        if y <= self.y_nodes[0] {
            return self.lambda_values[0];
        }
        if y >= self.y_nodes[n - 1] {
            return self.lambda_values[n - 1];
        }
        let k = self.y_nodes.partition_point(|&v| v <= y).clamp(1, n - 1);
        let (y0, y1) = (self.y_nodes[k - 1], self.y_nodes[k]);
        let t = (y - y0) / (y1 - y0);
        self.lambda_values[k - 1] + t * (self.lambda_values[k] - self.lambda_values[k - 1])
    }
}

#[derive(Debug, Clone)]
pub struct PseudoPotential {
    pub v: ValueField,
    /// Anchor after snapping to the grid.
    pub alpha: f64,
    pub alpha_index: usize,
    /// `|requested α − snapped α|`.
    pub snap_distance: f64,
}

/// Snaps `alpha` to the nearest interior x-node after checking it lies in
/// the gap `(sup a₊, inf a₋)`.
pub fn snap_alpha(grid: &Grid2D, fb: &FreeBoundaries, alpha: f64) -> Result<(usize, f64)> {
    let (lo, hi) = (fb.sup_a_plus, fb.inf_a_minus);
    if !(alpha > lo && alpha < hi) {
        return Err(Error::AlphaOutsideGap { alpha, lo, hi });
    }
    let s = ((alpha - grid.x_lo()) / grid.h_x).round();
    let i = (s.max(1.0) as usize).min(grid.n_x() - 2);
    Ok((i, grid.x_nodes[i]))
}

pub fn build_pseudo_potential(u: &ValueField, fb: &FreeBoundaries, alpha: f64) -> Result<PseudoPotential> {
    let g = &u.grid;
    let (ia, snapped) = snap_alpha(g, fb, alpha)?;
    let n_x = g.n_x();
    let half_h = 0.5 * g.h_x;
    let mut values = vec![0.0; g.len()];
    for j in 0..g.n_y() {
        let row = u.row(j);
        let out = &mut values[j * n_x..(j + 1) * n_x];
        out[ia] = 0.0;
        for i in ia + 1..n_x {
            out[i] = out[i - 1] + half_h * (row[i - 1] + row[i]);
        }
        for i in (0..ia).rev() {
            out[i] = out[i + 1] - half_h * (row[i] + row[i + 1]);
        }
    }
    Ok(PseudoPotential {
        v: ValueField {
            grid: g.clone(),
            values,
            label: "V".to_string(),
        },
        alpha: snapped,
        alpha_index: ia,
        snap_distance: (alpha - snapped).abs(),
    })
}

fn d_dx(u: &ValueField, i: usize, j: usize) -> f64 {
    (u.at(i + 1, j) - u.at(i - 1, j)) / (2.0 * u.grid.h_x)
}

fn d_dy(u: &ValueField, i: usize, j: usize) -> f64 {
    let n = u.grid.n_y();
    let h = u.grid.h_y;
    if j == 0 {
        (-3.0 * u.at(i, 0) + 4.0 * u.at(i, 1) - u.at(i, 2)) / (2.0 * h)
    } else if j + 1 == n {
        (3.0 * u.at(i, n - 1) - 4.0 * u.at(i, n - 2) + u.at(i, n - 3)) / (2.0 * h)
    } else {
        (u.at(i, j + 1) - u.at(i, j - 1)) / (2.0 * h)
    }
}

fn d2_dy2(u: &ValueField, i: usize, j: usize) -> f64 {
    let n = u.grid.n_y();
    let h2 = u.grid.h_y * u.grid.h_y;
    if n < 4 || (j > 0 && j + 1 < n) {
        let j = j.clamp(1, n - 2);
        (u.at(i, j + 1) - 2.0 * u.at(i, j) + u.at(i, j - 1)) / h2
    } else if j == 0 {
        (2.0 * u.at(i, 0) - 5.0 * u.at(i, 1) + 4.0 * u.at(i, 2) - u.at(i, 3)) / h2
    } else {
        (2.0 * u.at(i, n - 1) - 5.0 * u.at(i, n - 2) + 4.0 * u.at(i, n - 3) - u.at(i, n - 4)) / h2
    }
}

/// `λ(y) = c(α,y) + U b(α,y) + ½σ²U_x + σρζ U_y` at the snapped anchor, with
/// derivatives by finite differences of `U` on its own grid.
pub fn compute_lambda_profile(u: &ValueField, spec: &ModelSpec, fb: &FreeBoundaries, alpha: f64) -> Result<LambdaProfile> {
    let g = &u.grid;
    let (ia, a) = snap_alpha(g, fb, alpha)?;
    let rho = spec.rho();
    let lambda_values = g
        .y_nodes
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            let s = spec.sigma(a, y);
            spec.c(a, y)
                + u.at(ia, j) * spec.b(a, y)
                + 0.5 * s * s * d_dx(u, ia, j)
                + s * rho * spec.zeta(y) * d_dy(u, ia, j)
        })
        .collect();
    Ok(LambdaProfile {
        y_nodes: g.y_nodes.clone(),
        lambda_values,
        alpha: a,
        model: spec.kind,
    })
}

/// Column `i` of `u` with z-derivatives, used for interpolation along z.
struct Column {
    u: Vec<f64>,
    du_dx: Vec<f64>,
    du_dz: Vec<f64>,
}

fn column(u: &ValueField, i: usize) -> Column {
    let n = u.grid.n_y();
    Column {
        u: (0..n).map(|j| u.at(i, j)).collect(),
        du_dx: (0..n).map(|j| d_dx(u, i, j)).collect(),
        du_dz: (0..n).map(|j| d_dy(u, i, j)).collect(),
    }
}

fn lerp_nodes(nodes: &[f64], h: f64, vals: &[f64], z: f64) -> f64 {
    let (k, t, _) = Grid2D::locate(nodes, h, z);
    vals[k] + t * (vals[k + 1] - vals[k])
}

/// Filtered model: `λ(y)` from the `(x, z)` solution. With `Û(x, z) = U(x, y)`,
/// `½σ²U_x + σζU_y = ½σ²(Û_x + Û_z)`.
pub fn compute_lambda_profile_xz(
    u_xz: &ValueField,
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    alpha: f64,
    y_nodes: &[f64],
) -> Result<LambdaProfile> {
    let t = spec.filter_transform().ok_or_else(|| {
        Error::SchemeMismatch(format!("(x, z) value profile needs a FilteredInventory model, got {}", spec.kind))
    })?;
    let g = &u_xz.grid;
    let (ia, a) = snap_alpha(g, fb, alpha)?;
    let col = column(u_xz, ia);
    let sigma = t.params().sigma;
    let lambda_values = y_nodes
        .iter()
        .map(|&y| {
            let z = t.z_of(a, y);
            let uu = lerp_nodes(&g.y_nodes, g.h_y, &col.u, z);
            let ux = lerp_nodes(&g.y_nodes, g.h_y, &col.du_dx, z);
            let uz = lerp_nodes(&g.y_nodes, g.h_y, &col.du_dz, z);
            spec.c(a, y) + uu * spec.b(a, y) + 0.5 * sigma * sigma * (ux + uz)
        })
        .collect();
    Ok(LambdaProfile {
        y_nodes: y_nodes.to_vec(),
        lambda_values,
        alpha: a,
        model: spec.kind,
    })
}

/// Sup of `|min{L V + c − λ, K₋ − V_x, V_x + K₊}|` per region.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HjbReport {
    pub continuation: f64,
    /// Buy region `{U = −K₊}`.
    pub buy: f64,
    /// Sell region `{U = K₋}`.
    pub sell: f64,
    /// Most negative `L V + c − λ` over the contact regions.
    pub contact_pde_min: f64,
}

impl HjbReport {
    pub fn max(&self) -> f64 {
        self.continuation.max(self.buy).max(self.sell)
    }

    fn record(&mut self, u: f64, pde: f64, spec: &ModelSpec) {
        let eps = 1e-6 * (spec.k_plus + spec.k_minus);
        let m = pde.min(spec.k_minus - u).min(u + spec.k_plus).abs();
        if u >= spec.k_minus - eps {
            self.sell = self.sell.max(m);
            self.contact_pde_min = self.contact_pde_min.min(pde);
        } else if u <= -spec.k_plus + eps {
            self.buy = self.buy.max(m);
            self.contact_pde_min = self.contact_pde_min.min(pde);
        } else {
            self.continuation = self.continuation.max(m);
        }
    }
}

/// HJB residual with the nine-point operator applied to `V` and `V_x = U`.
/// `op` must be assembled on the grid of `u` for the same model.
pub fn hjb_residual(
    pp: &PseudoPotential,
    lam: &LambdaProfile,
    u: &ValueField,
    spec: &ModelSpec,
    op: &DiscreteOperator,
) -> Result<HjbReport> {
    if op.grid != u.grid || pp.v.grid != u.grid {
        return Err(Error::invalid("grid", "V, U and the operator must share one grid"));
    }
    if (pp.alpha - lam.alpha).abs() > 1e-12 {
        return Err(Error::invalid("alpha", "V and lambda were built with different anchors"));
    }
    let lv = op.apply_generator(&pp.v.values);
    let g = &u.grid;
    let mut rep = HjbReport::default();
    for j in 0..g.n_y() {
        let y = g.y_nodes[j];
        for i in 0..g.n_x() {
            let k = g.idx(i, j);
            if op.kind[k] != NodeKind::Interior {
                continue;
            }
            let x = g.x_nodes[i];
            let pde = lv[k] + spec.c(x, y) - lam.lambda_values[j];
            rep.record(u.values[k], pde, spec);
        }
    }
    Ok(rep)
}

/// Filtered-model HJB residual through the identity
/// `(L V + c − λ)(x, y) = ∫_α^x (L̂U + b_x U + c_x)(x', y) dx'`, with the
/// integrand taken from the `(x, z)` operator and `U` from the mapped field.
pub fn hjb_residual_xz(
    u_xz: &ValueField,
    op_xz: &DiscreteOperator,
    u_xy: &ValueField,
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    alpha: f64,
) -> Result<HjbReport> {
    let t = spec.filter_transform().ok_or_else(|| {
        Error::SchemeMismatch(format!("(x, z) identity needs a FilteredInventory model, got {}", spec.kind))
    })?;
    let gz = &u_xz.grid;
    let g = &u_xy.grid;
    if gz.x_nodes != g.x_nodes {
        return Err(Error::invalid("grid", "(x, z) and (x, y) grids must share x-nodes"));
    }
    let (ia, _) = snap_alpha(g, fb, alpha)?;
    let r = op_xz.equation_residual(&u_xz.values);
    let r_field = ValueField {
        grid: gz.clone(),
        values: r,
        label: "r".to_string(),
    };
    let n_x = g.n_x();
    let mut rep = HjbReport::default();
    for j in 0..g.n_y() {
        let y = g.y_nodes[j];
        if j == 0 || j + 1 == g.n_y() {
            continue;
        }
        let line: Vec<f64> = (0..n_x)
            .map(|i| {
                let x = g.x_nodes[i];
                r_field.interpolate(x, t.z_of(x, y)).0
            })
            .collect();
        let mut acc = vec![0.0; n_x];
        let half_h = 0.5 * g.h_x;
        for i in ia + 1..n_x - 1 {
            acc[i] = acc[i - 1] + half_h * (line[i - 1] + line[i]);
        }
        for i in (1..ia).rev() {
            acc[i] = acc[i + 1] - half_h * (line[i] + line[i + 1]);
        }
        for i in 1..n_x - 1 {
            rep.record(u_xy.at(i, j), acc[i], spec);
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaInvarianceReport {
    pub lambda_star_1: f64,
    pub lambda_star_2: f64,
    pub delta_star: f64,
    pub pointwise_identity_err: f64,
}

/// Compares `λ*` for two anchors and checks
/// `λ(y;α₂) − λ(y;α₁) = −∫_{α₁}^{α₂} (η U_y + ½ζ² U_yy) dx`, excluding the two
/// outermost factor rows on each side.
pub fn check_alpha_invariance(
    u: &ValueField,
    spec: &ModelSpec,
    fb: &FreeBoundaries,
    alpha1: f64,
    alpha2: f64,
    pinf: &Density,
) -> Result<AlphaInvarianceReport> {
    let g = &u.grid;
    let l1 = compute_lambda_profile(u, spec, fb, alpha1)?;
    let l2 = compute_lambda_profile(u, spec, fb, alpha2)?;
    let (i1, _) = snap_alpha(g, fb, alpha1)?;
    let (i2, _) = snap_alpha(g, fb, alpha2)?;
    let (lo, hi, sign) = if i1 <= i2 { (i1, i2, 1.0) } else { (i2, i1, -1.0) };
    let mut err: f64 = 0.0;
    let n_y = g.n_y();
    for j in 2..n_y.saturating_sub(2) {
        let y = g.y_nodes[j];
        let (eta, zeta) = (spec.eta(y), spec.zeta(y));
        let integrand = |i: usize| eta * d_dy(u, i, j) + 0.5 * zeta * zeta * d2_dy2(u, i, j);
        let mut integral = 0.0;
        for i in lo..hi {
            integral += 0.5 * g.h_x * (integrand(i) + integrand(i + 1));
        }
        let diff = l2.lambda_values[j] - l1.lambda_values[j];
        err = err.max((diff + sign * integral).abs());
    }
    let s1 = ergodic_value(&l1, pinf)?;
    let s2 = ergodic_value(&l2, pinf)?;
    Ok(AlphaInvarianceReport {
        lambda_star_1: s1,
        lambda_star_2: s2,
        delta_star: (s1 - s2).abs(),
        pointwise_identity_err: err,
    })
}

/// `|c(a₋) + K₋ b(a₋) − (c(a₊) − K₊ b(a₊))|` at factor level `y` for a model
/// whose factor does not move.
pub fn check_degenerate_relation(spec: &ModelSpec, fb: &FreeBoundaries, y: f64) -> Result<f64> {
    if spec.eta(y) != 0.0 || spec.zeta(y) != 0.0 {
        return Err(Error::invalid("kind", "the one-dimensional relation needs eta = zeta = 0"));
    }
    let (ap, am) = row_band(fb, y);
    let lhs = spec.c(am, y) + spec.k_minus * spec.b(am, y);
    let rhs = spec.c(ap, y) - spec.k_plus * spec.b(ap, y);
    Ok((lhs - rhs).abs())
}
