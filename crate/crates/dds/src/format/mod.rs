//! Binary file formats: DDSM matrices and DDSF flow checkpoints.

pub mod ddsf;
pub mod ddsm;
