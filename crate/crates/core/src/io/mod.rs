//! File formats: NIfTI-1 ingestion, the raw `.pwt` tensor format and case
//! directories.

pub mod case;
pub mod nifti;
pub mod raw;
