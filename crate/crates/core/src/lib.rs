//! Numerical toolkit for transfer operators of interval maps and for chaotic
//! semiflows with Gaussian invariant measures.

pub mod certify;
pub mod cli;
pub mod conjugacy;
pub mod error;
pub mod interp;
pub mod maps;
pub mod plot;
pub mod quad;
pub mod sampling;
pub mod semiflow;
pub mod transfer;

pub use certify::{certify_exactness, CertificateReport, Status};
pub use error::{Error, Result};
pub use maps::{make_catalog_map, IntervalMap, MapKind, MapSpec};
pub use transfer::{GridDensity, TransferMatrix};
