//! Projection of 2-D densities onto structured measures (points, curves,
//! segments) by minimizing the semi-discrete Wasserstein-2 distance.

pub mod curve_proj;
pub mod descent;
pub mod error;
pub mod geom;
pub mod grid_density;
pub mod laguerre;
pub mod linalg;
pub mod ot_dual;
pub mod pipeline;

pub use error::{Error, Result};
pub use geom::{ConvexPolygon, Point};
pub use grid_density::{GridDensity, Moments};
pub use laguerre::{compute_diagram, DualPotential, LaguerreDiagram, SiteSet};
