//! Projected SOR for the two-obstacle complementarity problem
//! `−K₊ ≤ U ≤ K₋`, `L U + b_x U + c_x = 0` strictly between the obstacles.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_operator::{slot_offset, DiscreteOperator, NodeKind, ValueField, CENTER};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepOrder {
    Lexicographic,
    RedBlack,
    /// Forward lexicographic sweep followed by a backward one.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop when the sup-norm change between sweeps is below
    /// `tolerance · (K₊ + K₋)`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_sweep")]
    pub sweep: SweepOrder,
    /// Record a trace row every `trace_stride` sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_stride: Option<usize>,
}

fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    200_000
}
fn default_omega() -> f64 {
    1.5
}
fn default_sweep() -> SweepOrder {
    SweepOrder::Lexicographic
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: default_tolerance(),
            max_iters: default_max_iters(),
            omega: default_omega(),
            sweep: default_sweep(),
            trace_stride: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::invalid("omega", "must lie in (0, 2)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be positive"));
        }
        if self.trace_stride == Some(0) {
            return Err(Error::invalid("trace_stride", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub delta: f64,
    pub comp_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ResidualReport {
    pub comp_residual: f64,
    pub obstacle_violation: f64,
    pub iters_used: usize,
}

#[derive(Debug, Clone)]
pub struct DynkinSolution {
    pub u: ValueField,
    pub iters: usize,
    pub last_delta: f64,
    pub trace: Vec<TraceRow>,
}

impl DynkinSolution {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,delta,comp_residual\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{:.16e},{:.16e}", r.iter, r.delta, r.comp_residual);
        }
        s
    }
}

fn sweep_order(op: &DiscreteOperator, order: SweepOrder) -> Vec<usize> {
    let n = op.grid.len();
    match order {
        SweepOrder::Lexicographic => (0..n).collect(),
        SweepOrder::Symmetric => (0..n).chain((0..n).rev()).collect(),
        SweepOrder::RedBlack => {
            let n_x = op.grid.n_x();
            let parity = |k: usize| (k % n_x + k / n_x) % 2;
            (0..n)
                .filter(|&k| parity(k) == 0)
                .chain((0..n).filter(|&k| parity(k) == 1))
                .collect()
        }
    }
}

/// Solves the discrete double-obstacle problem by projected SOR.
pub fn solve_dynkin(op: &DiscreteOperator, spec: &ModelSpec, cfg: &SolverConfig) -> Result<DynkinSolution> {
    solve_dynkin_from(op, spec, cfg, None)
}

/// As [`solve_dynkin`], optionally warm-started from `initial`.
pub fn solve_dynkin_from(
    op: &DiscreteOperator,
    spec: &ModelSpec,
    cfg: &SolverConfig,
    initial: Option<&[f64]>,
) -> Result<DynkinSolution> {
    cfg.validate()?;
    let grid = &op.grid;
    let n_x = grid.n_x();
    let n = grid.len();
    let (lo, hi) = (-spec.k_plus, spec.k_minus);

    let mut diag = vec![0.0; n];
    for k in 0..n {
        if let NodeKind::Dirichlet(_) = op.kind[k] {
            continue;
        }
        let d = op.diagonal(k);
        if !(d < 0.0) {
            return Err(Error::DiagonalSignError {
                i: k % n_x,
                j: k / n_x,
                value: d,
            });
        }
        diag[k] = d;
    }

    // Sparse neighbor lists keep the inner loop free of zero weights.
    let mut nbr_start = Vec::with_capacity(n + 1);
    let mut nbr: Vec<(usize, f64)> = Vec::with_capacity(n * 5);
    for k in 0..n {
        nbr_start.push(nbr.len());
        if let NodeKind::Dirichlet(_) = op.kind[k] {
            continue;
        }
        for (s, &w) in op.stencil[k].iter().enumerate() {
            if s != CENTER && w != 0.0 {
                let (di, dj) = slot_offset(s);
                nbr.push(((k as isize + di + dj * n_x as isize) as usize, w));
            }
        }
    }
    nbr_start.push(nbr.len());

    let mut u: Vec<f64> = match initial {
        Some(init) if init.len() == n => init.iter().map(|v| v.clamp(lo, hi)).collect(),
        Some(_) => return Err(Error::invalid("initial", "length does not match the grid")),
        None => (0..n)
            .map(|k| {
                let bx = op.zeroth[k];
                if bx < 0.0 {
                    (-op.source[k] / bx).clamp(lo, hi)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    for k in 0..n {
        if let NodeKind::Dirichlet(v) = op.kind[k] {
            u[k] = v;
        }
    }

    let order = sweep_order(op, cfg.sweep);
    let stop = cfg.tolerance * (spec.k_plus + spec.k_minus);
    let omega = cfg.omega;
    let mut trace = Vec::new();
    let mut delta = f64::INFINITY;

    for iter in 1..=cfg.max_iters {
        delta = 0.0;
        for &k in &order {
            if matches!(op.kind[k], NodeKind::Dirichlet(_)) {
                continue;
            }
            let mut off = op.source[k];
            for &(kk, w) in &nbr[nbr_start[k]..nbr_start[k + 1]] {
                off += w * u[kk];
            }
            let gs = -off / diag[k];
            let old = u[k];
            let new = (old + omega * (gs - old)).clamp(lo, hi);
            u[k] = new;
            let d = (new - old).abs();
            if d > delta {
                delta = d;
            }
        }
        if let Some(stride) = cfg.trace_stride {
            if iter % stride == 0 || delta <= stop {
                let field = ValueField {
                    grid: grid.clone(),
                    values: u.clone(),
                    label: "U".to_string(),
                };
                trace.push(TraceRow {
                    iter,
                    delta,
                    comp_residual: residual(&field, op, spec).comp_residual,
                });
            }
        }
        if delta <= stop {
            return Ok(DynkinSolution {
                u: ValueField {
                    grid: grid.clone(),
                    values: u,
                    label: "U".to_string(),
                },
                iters: iter,
                last_delta: delta,
                trace,
            });
        }
        if !delta.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iters: cfg.max_iters,
        last_delta: delta,
    })
}

/// Complementarity defect over interior nodes.
pub fn residual(u: &ValueField, op: &DiscreteOperator, spec: &ModelSpec) -> ResidualReport {
    let eps = 1e-9 * (spec.k_plus + spec.k_minus);
    let r = op.equation_residual(&u.values);
    let mut comp: f64 = 0.0;
    let mut viol: f64 = 0.0;
    for (k, &v) in u.values.iter().enumerate() {
        viol = viol.max(v - spec.k_minus).max(-spec.k_plus - v);
        if op.kind[k] != NodeKind::Interior {
            continue;
        }
        let defect = if v >= spec.k_minus - eps {
            (-r[k]).max(0.0)
        } else if v <= -spec.k_plus + eps {
            r[k].max(0.0)
        } else {
            r[k].abs()
        };
        comp = comp.max(defect);
    }
    ResidualReport {
        comp_residual: comp,
        obstacle_violation: viol.max(0.0),
        iters_used: 0,
    }
}

impl DynkinSolution {
    pub fn report(&self, op: &DiscreteOperator, spec: &ModelSpec) -> ResidualReport {
        ResidualReport {
            iters_used: self.iters,
            ..residual(&self.u, op, spec)
        }
    }
}
