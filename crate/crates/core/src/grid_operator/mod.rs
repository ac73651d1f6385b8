//! Rectangular grids, value fields and the discrete generator of the
//! Dynkin-game process, in `(x, y)` and in the log-odds `(x, z)` chart.

mod grid;
mod mapping;
mod stencil;

pub use grid::{build_grid, Grid2D, ValueField};
pub use mapping::{map_xy_to_xz, map_xz_to_xy, MappedField};
pub use stencil::{
    assemble_generator, assemble_nine_point_unchecked, build_xz_grid, slot_offset, DiscreteOperator,
    MonotonicityReport, NodeKind, Scheme, CENTER,
};
