//! Littlewood-Paley decompositions and T(1)-type diagnostics for finite
//! atomic measures with polynomial growth, including non-doubling ones.

pub mod aoi;
pub mod czo;
pub mod error;
pub mod geometry;
pub mod lattice;
pub mod lp;
pub mod linalg;
pub mod measure;
pub mod pipeline;
pub mod report;
pub mod suites;

pub use error::{Error, Result};
pub use measure::{Cube, DiscreteMeasure};
pub use report::VerificationReport;
