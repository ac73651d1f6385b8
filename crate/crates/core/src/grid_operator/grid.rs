use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform tensor grid; `x` varies fastest in flattened storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x_nodes: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub h_x: f64,
    pub h_y: f64,
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + h * i as f64 })
        .collect()
}

pub fn build_grid(x_lo: f64, x_hi: f64, n_x: usize, y_lo: f64, y_hi: f64, n_y: usize) -> Result<Grid2D> {
    if !(x_lo < x_hi) || !x_lo.is_finite() || !x_hi.is_finite() {
        return Err(Error::invalid("x_lo", format!("need x_lo < x_hi, got [{x_lo}, {x_hi}]")));
    }
    if !(y_lo < y_hi) || !y_lo.is_finite() || !y_hi.is_finite() {
        return Err(Error::invalid("y_lo", format!("need y_lo < y_hi, got [{y_lo}, {y_hi}]")));
    }
    if n_x < 3 {
        return Err(Error::invalid("n_x", "need at least 3 nodes"));
    }
    if n_y < 3 {
        return Err(Error::invalid("n_y", "need at least 3 nodes"));
    }
    Ok(Grid2D {
        x_nodes: uniform(x_lo, x_hi, n_x),
        y_nodes: uniform(y_lo, y_hi, n_y),
        h_x: (x_hi - x_lo) / (n_x - 1) as f64,
        h_y: (y_hi - y_lo) / (n_y - 1) as f64,
    })
}

impl Grid2D {
    pub fn n_x(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_nodes.len()
    }

    pub fn len(&self) -> usize {
        self.n_x() * self.n_y()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n_x() + i
    }

    pub fn x_lo(&self) -> f64 {
        self.x_nodes[0]
    }

    pub fn x_hi(&self) -> f64 {
        *self.x_nodes.last().unwrap()
    }

    pub fn y_lo(&self) -> f64 {
        self.y_nodes[0]
    }

    pub fn y_hi(&self) -> f64 {
        *self.y_nodes.last().unwrap()
    }

    /// Checks strict ordering and uniform spacing.
    pub fn validate(&self) -> Result<()> {
        for (name, nodes, h) in [("x_nodes", &self.x_nodes, self.h_x), ("y_nodes", &self.y_nodes, self.h_y)] {
            if nodes.len() < 3 {
                return Err(Error::invalid(name, "need at least 3 nodes"));
            }
            for w in nodes.windows(2) {
                let d = w[1] - w[0];
                if !(d > 0.0) {
                    return Err(Error::invalid(name, "nodes must be strictly increasing"));
                }
                if (d - h).abs() > 1e-12 * h.abs().max(w[1].abs()) * 4.0 {
                    return Err(Error::invalid(name, "spacing is not uniform"));
                }
            }
        }
        Ok(())
    }

    /// Locates `v` in a node array: returns the left cell index and the
    /// fractional offset, clamping outside the range.
    pub(crate) fn locate(nodes: &[f64], h: f64, v: f64) -> (usize, f64, bool) {
        let n = nodes.len();
        let lo = nodes[0];
        let hi = nodes[n - 1];
        if v <= lo {
            return (0, 0.0, v < lo);
        }
        if v >= hi {
            return (n - 2, 1.0, v > hi);
        }
        let s = (v - lo) / h;
        let k = (s.floor() as usize).min(n - 2);
        (k, (s - k as f64).clamp(0.0, 1.0), false)
    }
}

/// Scalar field on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
    pub label: String,
}

impl ValueField {
    pub fn new(grid: Grid2D, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(
                "values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite value at flat index {k}")));
        }
        Ok(ValueField {
            grid,
            values,
            label: label.into(),
        })
    }

    pub fn constant(grid: Grid2D, value: f64, label: impl Into<String>) -> Self {
        let n = grid.len();
        ValueField {
            grid,
            values: vec![value; n],
            label: label.into(),
        }
    }

    pub fn from_fn(grid: Grid2D, label: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for &y in &grid.y_nodes {
            for &x in &grid.x_nodes {
                values.push(f(x, y));
            }
        }
        ValueField {
            grid,
            values,
            label: label.into(),
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.n_x();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Bilinear interpolation; points outside the grid are clamped and flagged.
    pub fn interpolate(&self, x: f64, y: f64) -> (f64, bool) {
        let g = &self.grid;
        let (i, tx, ox) = Grid2D::locate(&g.x_nodes, g.h_x, x);
        let (j, ty, oy) = Grid2D::locate(&g.y_nodes, g.h_y, y);
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        let v = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
        (v, ox || oy)
    }

    /// Sup-norm distance to another field on an identical grid.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// CSV with header `x,y,value`, rows ordered by y then x.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 72 + 16);
        out.push_str("x,y,value\n");
        for (j, &y) in self.grid.y_nodes.iter().enumerate() {
            for (i, &x) in self.grid.x_nodes.iter().enumerate() {
                let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", x, y, self.at(i, j));
            }
        }
        out
    }

    pub fn from_csv<R: Read>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut values = Vec::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line.trim() != "x,y,value" {
                    return Err(Error::Config(format!("unexpected CSV header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            if parts.len() != 3 {
                return Err(Error::Config(format!("line {}: expected 3 columns", n + 1)));
            }
            if ys.last() != Some(&parts[1]) {
                ys.push(parts[1]);
            }
            if ys.len() == 1 {
                xs.push(parts[0]);
            }
            values.push(parts[2]);
        }
        if xs.len() < 3 || ys.len() < 3 {
            return Err(Error::Config("CSV grid needs at least 3x3 nodes".to_string()));
        }
        let grid = Grid2D {
            h_x: (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64,
            h_y: (ys[ys.len() - 1] - ys[0]) / (ys.len() - 1) as f64,
            x_nodes: xs,
            y_nodes: ys,
        };
        ValueField::new(grid, values, label)
    }
}
