//! Project-wide numerical tolerances. Tests and runtime checks reference
//! these constants rather than repeating literals.

/// Maximum `check_membership` residual for a value to count as on-manifold.
pub const MEMBERSHIP: f64 = 1e-10;

/// Maximum tangent-projection residual for a direction to count as tangent.
pub const TANGENCY: f64 = 1e-8;

/// Relative SVD reconstruction error.
pub const SVD_RECONSTRUCTION: f64 = 1e-12;

/// Relative gap between the R-th and (R+1)-th singular values below which a
/// fixed-rank projection is considered non-unique. Also the relative floor
/// under which a singular value counts as zero.
pub const RANK_GAP: f64 = 1e-12;
