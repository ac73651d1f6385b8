use crate::error::{Error, Result};
use crate::grid_operator::grid::{Grid2D, ValueField};
use crate::model::{FilterTransform, ModelSpec};

/// Interpolated field plus the flat indices of target nodes whose preimage
/// fell outside the source grid (those take the nearest in-domain value).
#[derive(Debug, Clone)]
pub struct MappedField {
    pub field: ValueField,
    pub out_of_domain: Vec<usize>,
}

fn transform(spec: &ModelSpec) -> Result<FilterTransform> {
    spec.filter_transform().ok_or_else(|| {
        Error::SchemeMismatch(format!("coordinate change needs a FilteredInventory model, got {}", spec.kind))
    })
}

fn resample(source: &ValueField, target: &Grid2D, label: String, pre: impl Fn(f64, f64) -> (f64, f64)) -> MappedField {
    let mut values = Vec::with_capacity(target.len());
    let mut out_of_domain = Vec::new();
    for &b in &target.y_nodes {
        for &a in &target.x_nodes {
            let (p, q) = pre(a, b);
            let (v, out) = source.interpolate(p, q);
            if out {
                out_of_domain.push(values.len());
            }
            values.push(v);
        }
    }
    MappedField {
        field: ValueField {
            grid: target.clone(),
            values,
            label,
        },
        out_of_domain,
    }
}

/// Resamples an `(x, y)` field onto an `(x, z)` grid.
pub fn map_xy_to_xz(field: &ValueField, spec: &ModelSpec, xz_grid: &Grid2D) -> Result<MappedField> {
    let t = transform(spec)?;
    Ok(resample(field, xz_grid, field.label.clone(), |x, z| (x, t.y_of(x, z))))
}

/// Resamples an `(x, z)` field onto an `(x, y)` grid.
pub fn map_xz_to_xy(field: &ValueField, spec: &ModelSpec, xy_grid: &Grid2D) -> Result<MappedField> {
    let t = transform(spec)?;
    Ok(resample(field, xy_grid, field.label.clone(), |x, y| (x, t.z_of(x, y))))
}
