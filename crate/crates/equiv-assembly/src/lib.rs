//! SE(3)-equivariant geometric shape assembly.
//!
//! Given N fractured point-cloud parts in arbitrary poses, the networks here
//! predict per-part rotations and translations that reassemble the canonical
//! whole. Rotation-equivariant and -invariant part encodings are combined
//! into per-part correlation features, decoded into poses, and trained
//! end-to-end on procedurally generated fracture data.
//!
//! In-memory math APIs treat shape mismatches and empty inputs as contract
//! violations and panic with the offending shapes; file, config, and
//! generation APIs return typed errors.

pub mod correlation;
pub mod data;
pub mod geometry;
pub mod vn;
pub mod grad;
pub mod harness;
pub mod losses;
pub mod metrics;
