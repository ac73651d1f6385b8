use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_operator::grid::Grid2D;
use crate::model::{ModelKind, ModelSpec};

/// Stencil slot `s` addresses neighbor `(s % 3 − 1, s / 3 − 1)` in `(i, j)`.
pub const CENTER: usize = 4;
const W: usize = 3;
const E: usize = 5;
const S: usize = 1;
const N: usize = 7;
const SW: usize = 0;
const SE: usize = 2;
const NW: usize = 6;
const NE: usize = 8;

#[inline]
pub fn slot_offset(s: usize) -> (isize, isize) {
    ((s % 3) as isize - 1, (s / 3) as isize - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    EllipticNinePoint,
    DegenerateXZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    /// First or last factor row: second-order and cross terms are dropped.
    FactorEdge,
    /// Fixed value at an x-extreme.
    Dirichlet(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub negative_weights: usize,
    pub worst_weight: f64,
    pub worst_node: Option<(usize, usize)>,
}

impl MonotonicityReport {
    pub fn is_monotone(&self) -> bool {
        self.negative_weights == 0
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Grid2D,
    pub scheme: Scheme,
    /// Generator weights (without the zeroth-order term).
    pub stencil: Vec<[f64; 9]>,
    /// `b_x` at each node.
    pub zeroth: Vec<f64>,
    /// `c_x` at each node.
    pub source: Vec<f64>,
    pub kind: Vec<NodeKind>,
    pub monotonicity: MonotonicityReport,
    /// Factor-edge nodes whose first-order factor drift pointed out of the grid.
    pub dropped_outflow: usize,
    pub coefficient_scale: f64,
}

impl DiscreteOperator {
    #[inline]
    pub fn diagonal(&self, k: usize) -> f64 {
        self.stencil[k][CENTER] + self.zeroth[k]
    }

    #[inline]
    fn gen_at(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let n_x = self.grid.n_x();
        let k = j * n_x + i;
        let w = &self.stencil[k];
        let mut acc = 0.0;
        for (s, &ws) in w.iter().enumerate() {
            if ws != 0.0 {
                let (di, dj) = slot_offset(s);
                let kk = (k as isize + di + dj * n_x as isize) as usize;
                acc += ws * u[kk];
            }
        }
        acc
    }

    /// `L u` without the zeroth-order term.
    pub fn apply_generator(&self, u: &[f64]) -> Vec<f64> {
        let n_x = self.grid.n_x();
        (0..self.grid.len())
            .map(|k| self.gen_at(u, k % n_x, k / n_x))
            .collect()
    }

    /// `L u + b_x u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n_x = self.grid.n_x();
        (0..self.grid.len())
            .map(|k| self.gen_at(u, k % n_x, k / n_x) + self.zeroth[k] * u[k])
            .collect()
    }

    /// `L u + b_x u + c_x`.
    pub fn equation_residual(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.apply(u);
        for (rk, s) in r.iter_mut().zip(&self.source) {
            *rk += s;
        }
        r
    }

    pub fn with_source(mut self, source: Vec<f64>) -> Result<Self> {
        if source.len() != self.grid.len() {
            return Err(Error::invalid("source", "length does not match the grid"));
        }
        self.source = source;
        Ok(self)
    }
}

/// Value of the spatially homogeneous problem `b_x U + c_x = 0` projected on
/// the obstacles. Equals `−K₊` (resp. `K₋`) at the lower (resp. upper) edge
/// whenever the edge lies inside the corresponding contact set.
fn edge_value(b_x: f64, c_x: f64, k_plus: f64, k_minus: f64, lower: bool) -> f64 {
    if b_x < 0.0 {
        (-c_x / b_x).clamp(-k_plus, k_minus)
    } else if lower {
        -k_plus
    } else {
        k_minus
    }
}

struct NodeCoeffs {
    sigma: f64,
    drift_x: f64,
    drift_y: f64,
    diff_y: f64,
    cross: f64,
}

fn monotonicity_of(stencils: &[[f64; 9]], n_x: usize) -> MonotonicityReport {
    let mut rep = MonotonicityReport::default();
    for (k, w) in stencils.iter().enumerate() {
        for (s, &ws) in w.iter().enumerate() {
            if s != CENTER && ws < -1e-14 * w[CENTER].abs().max(1.0) {
                rep.negative_weights += 1;
                if ws < rep.worst_weight {
                    rep.worst_weight = ws;
                    rep.worst_node = Some((k % n_x, k / n_x));
                }
            }
        }
    }
    rep
}

fn x_terms(w: &mut [f64; 9], sigma: f64, drift: f64, h: f64) {
    let d = 0.5 * sigma * sigma / (h * h);
    w[W] += d;
    w[E] += d;
    w[CENTER] -= 2.0 * d;
    if drift > 0.0 {
        w[E] += drift / h;
        w[CENTER] -= drift / h;
    } else {
        w[W] -= drift / h;
        w[CENTER] += drift / h;
    }
}

/// Upwinded first-order factor term; returns false if it had to be dropped.
fn y_drift(w: &mut [f64; 9], drift: f64, h: f64, j: usize, n_y: usize) -> bool {
    if drift > 0.0 {
        if j + 1 < n_y {
            w[N] += drift / h;
            w[CENTER] -= drift / h;
            return true;
        }
    } else if drift < 0.0 {
        if j > 0 {
            w[S] -= drift / h;
            w[CENTER] += drift / h;
            return true;
        }
    } else {
        return true;
    }
    false
}

fn nine_point_node(c: &NodeCoeffs, hx: f64, hy: f64, j: usize, n_y: usize) -> ([f64; 9], bool) {
    let mut w = [0.0; 9];
    x_terms(&mut w, c.sigma, c.drift_x, hx);
    let kept = y_drift(&mut w, c.drift_y, hy, j, n_y);
    if j > 0 && j + 1 < n_y {
        let d = 0.5 * c.diff_y / (hy * hy);
        w[S] += d;
        w[N] += d;
        w[CENTER] -= 2.0 * d;
        let m = c.cross.abs() / (2.0 * hx * hy);
        if m > 0.0 {
            if c.cross > 0.0 {
                w[NE] += m;
                w[SW] += m;
            } else {
                w[NW] += m;
                w[SE] += m;
            }
            w[CENTER] += 2.0 * m;
            w[E] -= m;
            w[W] -= m;
            w[N] -= m;
            w[S] -= m;
        }
    }
    (w, kept)
}

/// Builds the discrete generator with `b_x` as the zeroth-order term and
/// `c_x` as the source. For [`Scheme::DegenerateXZ`] the grid must be the
/// `(x, z)` grid (see [`build_xz_grid`]).
pub fn assemble_generator(spec: &ModelSpec, grid: &Grid2D, scheme: Scheme) -> Result<DiscreteOperator> {
    match scheme {
        Scheme::EllipticNinePoint => {
            let degenerate = spec.rho().abs() >= 1.0 && {
                let (lo, hi) = spec.factor_domain;
                (0..=8).any(|k| spec.zeta(lo + (hi - lo) * k as f64 / 8.0) != 0.0)
            };
            if degenerate {
                return Err(Error::SchemeMismatch(format!(
                    "nine-point scheme needs |rho| < 1 or zeta = 0; {} has rho = {}",
                    spec.kind,
                    spec.rho()
                )));
            }
            assemble_nine_point_unchecked(spec, grid)
        }
        Scheme::DegenerateXZ => assemble_xz(spec, grid),
    }
}

/// Nine-point assembly without the ellipticity precondition. Used to compare
/// the `(x, y)` discretization against the `(x, z)` one when `ρ = ±1`.
pub fn assemble_nine_point_unchecked(spec: &ModelSpec, grid: &Grid2D) -> Result<DiscreteOperator> {
    grid.validate()?;
    let (n_x, n_y) = (grid.n_x(), grid.n_y());
    let (hx, hy) = (grid.h_x, grid.h_y);
    let rho = spec.rho();
    let (k_plus, k_minus) = (spec.k_plus, spec.k_minus);

    let rows: Vec<_> = (0..n_y)
        .into_par_iter()
        .map(|j| {
            let y = grid.y_nodes[j];
            let mut out = Vec::with_capacity(n_x);
            let mut dropped = 0usize;
            let mut scale: f64 = 0.0;
            for i in 0..n_x {
                let x = grid.x_nodes[i];
                let sigma = spec.sigma(x, y);
                let zeta = spec.zeta(y);
                let c = NodeCoeffs {
                    sigma,
                    drift_x: spec.hat_drift_x(x, y),
                    drift_y: spec.hat_drift_y(x, y),
                    diff_y: zeta * zeta,
                    cross: sigma * rho * zeta,
                };
                let kind = if i == 0 || i + 1 == n_x {
                    NodeKind::Dirichlet(edge_value(spec.b_x(x, y), spec.c_x(x, y), k_plus, k_minus, i == 0))
                } else if j == 0 || j + 1 == n_y {
                    NodeKind::FactorEdge
                } else {
                    NodeKind::Interior
                };
                let w = match kind {
                    NodeKind::Dirichlet(_) => [0.0; 9],
                    _ => {
                        let (w, kept) = nine_point_node(&c, hx, hy, j, n_y);
                        if !kept {
                            dropped += 1;
                        }
                        w
                    }
                };
                scale = scale.max(w[CENTER].abs());
                out.push((w, spec.b_x(x, y), spec.c_x(x, y), kind));
            }
            (out, dropped, scale)
        })
        .collect();
    finish(grid.clone(), Scheme::EllipticNinePoint, rows)
}

type Row = (Vec<([f64; 9], f64, f64, NodeKind)>, usize, f64);

fn finish(grid: Grid2D, scheme: Scheme, rows: Vec<Row>) -> Result<DiscreteOperator> {
    let n = grid.len();
    let mut stencil = Vec::with_capacity(n);
    let mut zeroth = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    let mut kind = Vec::with_capacity(n);
    let mut dropped_outflow = 0;
    let mut coefficient_scale: f64 = 0.0;
    for (row, dropped, scale) in rows {
        dropped_outflow += dropped;
        coefficient_scale = coefficient_scale.max(scale);
        for (w, bx, cx, kd) in row {
            stencil.push(w);
            zeroth.push(bx);
            source.push(cx);
            kind.push(kd);
        }
    }
    let monotonicity = monotonicity_of(&stencil, grid.n_x());
    Ok(DiscreteOperator {
        grid,
        scheme,
        stencil,
        zeroth,
        source,
        kind,
        monotonicity,
        dropped_outflow,
        coefficient_scale,
    })
}

/// `(x, z)` grid sharing the x-nodes of `xy`, with a z-range that covers
/// the image of the whole `(x, y)` rectangle.
pub fn build_xz_grid(spec: &ModelSpec, xy: &Grid2D, n_z: usize) -> Result<Grid2D> {
    let t = spec.filter_transform().ok_or_else(|| {
        Error::SchemeMismatch(format!("(x, z) coordinates need a FilteredInventory model, got {}", spec.kind))
    })?;
    let z_lo = t.z_of(xy.x_hi(), xy.y_lo());
    let z_hi = t.z_of(xy.x_lo(), xy.y_hi());
    crate::grid_operator::build_grid(xy.x_lo(), xy.x_hi(), xy.n_x(), z_lo, z_hi, n_z)
}

fn assemble_xz(spec: &ModelSpec, grid: &Grid2D) -> Result<DiscreteOperator> {
    if spec.kind != ModelKind::FilteredInventory {
        return Err(Error::SchemeMismatch(format!(
            "DegenerateXZ applies to FilteredInventory only, got {}",
            spec.kind
        )));
    }
    let t = spec.filter_transform().expect("filtered model");
    grid.validate()?;
    let (n_x, n_z) = (grid.n_x(), grid.n_y());
    let (hx, hz) = (grid.h_x, grid.h_y);
    let sigma = t.params().sigma;
    let (k_plus, k_minus) = (spec.k_plus, spec.k_minus);

    let rows: Vec<_> = (0..n_z)
        .into_par_iter()
        .map(|j| {
            let z = grid.y_nodes[j];
            let mut out = Vec::with_capacity(n_x);
            let mut dropped = 0usize;
            let mut scale: f64 = 0.0;
            for i in 0..n_x {
                let x = grid.x_nodes[i];
                let y = t.y_of(x, z);
                let kind = if i == 0 || i + 1 == n_x {
                    NodeKind::Dirichlet(edge_value(spec.b_x(x, y), spec.c_x(x, y), k_plus, k_minus, i == 0))
                } else if j == 0 || j + 1 == n_z {
                    NodeKind::FactorEdge
                } else {
                    NodeKind::Interior
                };
                let w = match kind {
                    NodeKind::Dirichlet(_) => [0.0; 9],
                    _ => {
                        let mut w = [0.0; 9];
                        x_terms(&mut w, sigma, t.mu(x, z), hx);
                        if !y_drift(&mut w, t.q(x, z), hz, j, n_z) {
                            dropped += 1;
                        }
                        w
                    }
                };
                scale = scale.max(w[CENTER].abs());
                out.push((w, spec.b_x(x, y), spec.c_x(x, y), kind));
            }
            (out, dropped, scale)
        })
        .collect();
    finish(grid.clone(), Scheme::DegenerateXZ, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_operator::build_grid;
    use crate::model::*;

    fn laplace_spec() -> ModelSpec {
        make_custom_model(
            CustomDynamics::constant(0.0, 0.0, 2f64.sqrt(), 0.0, 0.0, 0.0),
            CostSpec::quadratic(1.0, 0.0),
            1.0,
            1.0,
            (0.0, 1.0),
        )
        .unwrap()
    }

    fn ou_spec(rho: f64) -> ModelSpec {
        make_ou_inventory_model(OuInventoryParams {
            m: 0.2,
            b: 1.0,
            delta: 0.5,
            sigma1: 1.0,
            sigma2: 0.8,
            rho,
            k_plus: 1.0,
            k_minus: 1.0,
            truncation_sds: 6.0,
        })
        .unwrap()
    }

    pub(crate) fn filtered_spec() -> ModelSpec {
        make_filtered_inventory_model(
            FilteredInventoryParams {
                m1: 0.5,
                m2: -0.5,
                sigma: 1.0,
                delta: 1.0,
                lambda1: 0.8,
                lambda2: 1.2,
                k_plus: 1.0,
                k_minus: 1.0,
                eps_y: 1e-3,
            },
            CostSpec::quadratic(1.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn pure_laplacian_in_x() {
        let g = build_grid(0.0, 1.0, 11, 0.0, 1.0, 5).unwrap();
        let op = assemble_generator(&laplace_spec(), &g, Scheme::EllipticNinePoint).unwrap();
        let k = g.idx(5, 2);
        let h2 = g.h_x * g.h_x;
        let w = op.stencil[k];
        assert!((w[W] - 1.0 / h2).abs() < 1e-9);
        assert!((w[CENTER] + 2.0 / h2).abs() < 1e-9);
        assert!((w[E] - 1.0 / h2).abs() < 1e-9);
        for s in [SW, S, SE, NW, N, NE] {
            assert_eq!(w[s], 0.0);
        }
        assert!(op.monotonicity.is_monotone());
    }

    #[test]
    fn constants_map_to_zeroth_order_term() {
        let spec = ou_spec(0.4);
        let (lo, hi) = spec.factor_domain;
        let g = build_grid(-6.0, 6.0, 41, lo, hi, 31).unwrap();
        let op = assemble_generator(&spec, &g, Scheme::EllipticNinePoint).unwrap();
        let ones = vec![1.0; g.len()];
        let gen = op.apply_generator(&ones);
        let scale = op.coefficient_scale;
        assert!(gen.iter().all(|v| v.abs() <= 1e-10 * scale));
        let full = op.apply(&ones);
        for (f, z) in full.iter().zip(&op.zeroth) {
            assert!((f - z).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn upwind_direction_follows_drift_sign() {
        let spec = ou_spec(0.0);
        let (lo, hi) = spec.factor_domain;
        let g = build_grid(-6.0, 6.0, 41, lo, hi, 31).unwrap();
        let op = assemble_generator(&spec, &g, Scheme::EllipticNinePoint).unwrap();
        let diff = 0.5 / (g.h_x * g.h_x);
        for j in 1..g.n_y() - 1 {
            for i in 1..g.n_x() - 1 {
                let (x, y) = (g.x_nodes[i], g.y_nodes[j]);
                let w = op.stencil[g.idx(i, j)];
                let b = spec.b(x, y);
                if b > 0.0 {
                    assert!((w[E] - diff - b / g.h_x).abs() < 1e-9);
                    assert!((w[W] - diff).abs() < 1e-9);
                } else {
                    assert!((w[W] - diff + b / g.h_x).abs() < 1e-9);
                }
                let eta = spec.eta(y);
                let dyy = 0.5 * 0.64 / (g.h_y * g.h_y);
                if eta > 0.0 {
                    assert!((w[N] - dyy - eta / g.h_y).abs() < 1e-8);
                } else {
                    assert!((w[S] - dyy + eta / g.h_y).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn degenerate_pairing_is_rejected() {
        let spec = filtered_spec();
        let g = build_grid(-3.0, 3.0, 11, 0.01, 0.99, 11).unwrap();
        assert!(matches!(
            assemble_generator(&spec, &g, Scheme::EllipticNinePoint),
            Err(Error::SchemeMismatch(_))
        ));
        assert!(matches!(
            assemble_generator(&ou_spec(0.0), &g, Scheme::DegenerateXZ),
            Err(Error::SchemeMismatch(_))
        ));
        assert!(assemble_nine_point_unchecked(&spec, &g).is_ok());
    }

    fn consistency_error(spec: &ModelSpec, n: usize) -> f64 {
        let (lo, hi) = spec.factor_domain;
        let g = build_grid(-3.0, 3.0, n, lo, hi, n).unwrap();
        let op = assemble_generator(spec, &g, Scheme::EllipticNinePoint).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|k| g.x_nodes[k % g.n_x()].powi(2)).collect();
        let lf = op.apply_generator(&f);
        let mut err: f64 = 0.0;
        for j in 1..g.n_y() - 1 {
            for i in 1..g.n_x() - 1 {
                let (x, y) = (g.x_nodes[i], g.y_nodes[j]);
                let exact = 2.0 * x * spec.hat_drift_x(x, y) + spec.sigma(x, y).powi(2);
                err = err.max((lf[g.idx(i, j)] - exact).abs());
            }
        }
        err
    }

    #[test]
    fn first_order_consistency_on_quadratic() {
        let spec = ou_spec(0.3);
        let e1 = consistency_error(&spec, 41);
        let e2 = consistency_error(&spec, 81);
        let order = (e1 / e2).log2();
        assert!(order >= 0.9, "observed order {order} ({e1} -> {e2})");
    }

    /// Applies the analytic (x, y) generator of the filtered model to a smooth f.
    fn analytic_generator(spec: &ModelSpec, x: f64, y: f64) -> f64 {
        // f(x, y) = sin(x) * y^2
        let (fx, fxx) = (x.cos() * y * y, -x.sin() * y * y);
        let (fy, fyy, fxy) = (2.0 * x.sin() * y, 2.0 * x.sin(), 2.0 * x.cos() * y);
        let s = spec.sigma(x, y);
        let z = spec.zeta(y);
        spec.b(x, y) * fx + 0.5 * s * s * fxx + spec.eta(y) * fy + 0.5 * z * z * fyy + s * spec.rho() * z * fxy
    }

    fn xz_error(n: usize) -> f64 {
        let spec = filtered_spec();
        let t = spec.filter_transform().unwrap();
        let g = build_grid(-1.0, 1.0, n, -1.0, 1.0, n).unwrap();
        let op = assemble_generator(&spec, &g, Scheme::DegenerateXZ).unwrap();
        let f: Vec<f64> = (0..g.len())
            .map(|k| {
                let (x, z) = (g.x_nodes[k % n], g.y_nodes[k / n]);
                x.sin() * t.y_of(x, z).powi(2)
            })
            .collect();
        let lf = op.apply_generator(&f);
        let mut err: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let (x, z) = (g.x_nodes[i], g.y_nodes[j]);
                let exact = analytic_generator(&spec, x, t.y_of(x, z));
                err = err.max((lf[g.idx(i, j)] - exact).abs());
            }
        }
        err
    }

    #[test]
    fn xz_operator_matches_chain_rule() {
        let e1 = xz_error(41);
        let e2 = xz_error(81);
        assert!(e2 < 0.6 * e1, "{e1} -> {e2}");
        assert!(e2 < 0.1, "{e2}");
    }

    #[test]
    fn xz_grid_covers_image() {
        let spec = filtered_spec();
        let t = spec.filter_transform().unwrap();
        let xy = build_grid(-2.0, 2.0, 21, 1e-3, 1.0 - 1e-3, 21).unwrap();
        let xz = build_xz_grid(&spec, &xy, 41).unwrap();
        assert_eq!(xz.x_nodes, xy.x_nodes);
        for &x in &xy.x_nodes {
            for &y in &xy.y_nodes {
                let z = t.z_of(x, y);
                assert!(z >= xz.y_lo() - 1e-12 && z <= xz.y_hi() + 1e-12);
            }
        }
        let op = assemble_generator(&spec, &xz, Scheme::DegenerateXZ).unwrap();
        assert!(op.monotonicity.is_monotone());
        assert_eq!(op.dropped_outflow, 0);
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::grid_operator::build_grid;
    use crate::model::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn generator_annihilates_constants(
            rho in -0.95f64..0.95,
            sigma2 in 0.2f64..2.0,
            m in -1.0f64..1.0,
            n in 5usize..25,
            c in -3.0f64..3.0,
        ) {
            let spec = make_ou_inventory_model(OuInventoryParams {
                m, b: 1.0, delta: 0.5, sigma1: 1.0, sigma2, rho,
                k_plus: 1.0, k_minus: 1.0, truncation_sds: 6.0,
            }).unwrap();
            let (lo, hi) = spec.factor_domain;
            let g = build_grid(-5.0, 5.0, n, lo, hi, n + 3).unwrap();
            let op = assemble_generator(&spec, &g, Scheme::EllipticNinePoint).unwrap();
            let u = vec![c; g.len()];
            let scale = op.coefficient_scale.max(1.0);
            for v in op.apply_generator(&u) {
                prop_assert!(v.abs() <= 1e-10 * scale * c.abs().max(1.0));
            }
        }

        #[test]
        fn positive_diagonal_never_appears(
            rho in -0.99f64..0.99,
            n in 5usize..25,
        ) {
            let spec = make_ou_inventory_model(OuInventoryParams {
                m: 0.0, b: 1.0, delta: 0.5, sigma1: 1.0, sigma2: 1.0, rho,
                k_plus: 1.0, k_minus: 1.0, truncation_sds: 6.0,
            }).unwrap();
            let (lo, hi) = spec.factor_domain;
            let g = build_grid(-5.0, 5.0, n, lo, hi, n).unwrap();
            let op = assemble_generator(&spec, &g, Scheme::EllipticNinePoint).unwrap();
            for k in 0..g.len() {
                if !matches!(op.kind[k], NodeKind::Dirichlet(_)) {
                    prop_assert!(op.diagonal(k) < 0.0);
                }
            }
        }
    }
}
