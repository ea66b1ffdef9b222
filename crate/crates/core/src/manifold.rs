//! Embedded matrix manifolds and their nearest-point projections.
//!
//! Every manifold here is a subset of the ambient space of `p×r` real
//! matrices with the Frobenius inner product. Besides the projection
//! `𝒫_𝓜(a) = argmin_{x∈𝓜} ½‖a − x‖²`, each kind provides the orthogonal
//! projection onto its tangent space and a retraction.
//!
//! | kind        | set                                 | projection             |
//! |-------------|-------------------------------------|------------------------|
//! | `Sphere`    | `‖x‖_F = 1`                         | `a / ‖a‖`              |
//! | `Stiefel`   | `xᵀx = I_r`                         | polar factor `u vᵀ`    |
//! | `Oblique`   | every column has unit norm          | column normalization   |
//! | `FixedRank` | `rank(x) = R`                       | truncated SVD          |
//!
//! The projection is single-valued on a tube of radius `2γ` around the
//! manifold; `γ` is exposed by [`ManifoldKind::gamma`].

use std::sync::Once;

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, Matrix, Svd};
use crate::rng::{sample_gaussian, RngStream};
use crate::tol;

/// Constraint set together with its ambient shape.
#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldKind {
    Sphere {
        rows: usize,
        cols: usize,
    },
    Stiefel {
        rows: usize,
        cols: usize,
    },
    Oblique {
        rows: usize,
        cols: usize,
    },
    FixedRank {
        rows: usize,
        cols: usize,
        rank: usize,
        gamma: f64,
    },
}

/// Tube radius for the compact kinds.
const COMPACT_GAMMA: f64 = 0.5;

static FIXED_RANK_WARNING: Once = Once::new();

impl ManifoldKind {
    pub fn sphere(rows: usize, cols: usize) -> Result<Self> {
        check_dims(rows, cols)?;
        Ok(Self::Sphere { rows, cols })
    }

    pub fn stiefel(rows: usize, cols: usize) -> Result<Self> {
        check_dims(rows, cols)?;
        if rows < cols {
            return Err(Error::InvalidManifold(format!(
                "Stiefel({rows},{cols}) needs rows >= cols"
            )));
        }
        Ok(Self::Stiefel { rows, cols })
    }

    pub fn oblique(rows: usize, cols: usize) -> Result<Self> {
        check_dims(rows, cols)?;
        Ok(Self::Oblique { rows, cols })
    }

    /// The set of rank-`rank` matrices. It is not compact, so the tube
    /// radius has to be supplied by the caller.
    pub fn fixed_rank(rows: usize, cols: usize, rank: usize, gamma: f64) -> Result<Self> {
        check_dims(rows, cols)?;
        if rank == 0 || rank > rows.min(cols) {
            return Err(Error::InvalidManifold(format!(
                "FixedRank({rows},{cols},{rank}) needs 1 <= rank <= {}",
                rows.min(cols)
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidManifold(format!(
                "FixedRank needs a positive tube radius, got {gamma}"
            )));
        }
        FIXED_RANK_WARNING.call_once(|| {
            log::warn!(
                "fixed-rank manifolds are not compact; the tube radius gamma={gamma} is a \
                 user estimate and convergence guarantees do not apply"
            );
        });
        Ok(Self::FixedRank {
            rows,
            cols,
            rank,
            gamma,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            Self::Sphere { rows, cols }
            | Self::Stiefel { rows, cols }
            | Self::Oblique { rows, cols }
            | Self::FixedRank { rows, cols, .. } => (rows, cols),
        }
    }

    /// Ambient dimension `p·r`.
    pub fn ambient_dim(&self) -> usize {
        let (p, r) = self.shape();
        p * r
    }

    /// Half the proximal-smoothness radius.
    pub fn gamma(&self) -> f64 {
        match *self {
            Self::FixedRank { gamma, .. } => gamma,
            _ => COMPACT_GAMMA,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, Self::FixedRank { .. })
    }

    pub(crate) fn check_shape(&self, a: &Matrix) -> Result<()> {
        if a.shape() != self.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                found: a.shape(),
            });
        }
        Ok(())
    }

    /// Nearest point on the manifold.
    pub fn project(&self, a: &Matrix) -> Result<ManifoldPoint> {
        Ok(ManifoldPoint {
            manifold: self.clone(),
            value: self.project_value(a)?,
        })
    }

    pub(crate) fn project_value(&self, a: &Matrix) -> Result<Matrix> {
        self.check_shape(a)?;
        if !a.is_finite() {
            return Err(Error::NonFinite("projection input"));
        }
        match *self {
            Self::Sphere { .. } => {
                let n = a.norm();
                if !(n > 0.0) {
                    return Err(Error::DegenerateProjection(
                        "zero matrix onto sphere".into(),
                    ));
                }
                Ok(a.scale(1.0 / n))
            }
            Self::Oblique { .. } => {
                let norms = a.column_norms();
                if let Some(j) = norms.iter().position(|&n| !(n > 0.0)) {
                    return Err(Error::DegenerateProjection(format!("column {j} is zero")));
                }
                Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| {
                    a[(i, j)] / norms[j]
                }))
            }
            Self::Stiefel { .. } => {
                let svd = thin_svd(a)?;
                let smin = *svd.s.last().unwrap();
                if !(smin > tol::RANK_GAP * svd.s[0]) {
                    return Err(Error::DegenerateProjection(format!(
                        "rank-deficient input (singular values {:?})",
                        svd.s
                    )));
                }
                Ok(svd.u.matmul(&svd.v.transpose()))
            }
            Self::FixedRank { rank, .. } => {
                let svd = thin_svd(a)?;
                check_rank_gap(&svd.s, rank)?;
                Ok(truncate(&svd, rank))
            }
        }
    }

    /// Distance-like residual that is zero exactly on the manifold.
    pub fn check_membership(&self, a: &Matrix) -> Result<f64> {
        self.check_shape(a)?;
        Ok(match *self {
            Self::Sphere { .. } => (a.norm() - 1.0).abs(),
            Self::Stiefel { cols, .. } => (a.t_matmul(a) - Matrix::identity(cols)).norm(),
            Self::Oblique { .. } => a
                .column_norms()
                .into_iter()
                .fold(0.0_f64, |m, n| m.max((n - 1.0).abs())),
            Self::FixedRank { rank, .. } => {
                let s = thin_svd(a)?.s;
                fixed_rank_residual(&s, rank)
            }
        })
    }

    /// `‖a − 𝒫_𝓜(a)‖`.
    pub fn dist_to_manifold(&self, a: &Matrix) -> Result<f64> {
        let p = self.project_value(a)?;
        Ok((a - &p).norm())
    }

    /// Projection of a standard Gaussian draw; uniform for the compact kinds.
    pub fn random_point(&self, stream: &RngStream) -> Result<ManifoldPoint> {
        let (p, r) = self.shape();
        self.project(&sample_gaussian(stream, p, r))
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidManifold(format!("empty shape {rows}x{cols}")));
    }
    Ok(())
}

fn fixed_rank_residual(s: &[f64], rank: usize) -> f64 {
    if s[0] <= 0.0 {
        return 1.0;
    }
    s.get(rank).map_or(0.0, |next| next / s[0])
}

fn check_rank_gap(s: &[f64], rank: usize) -> Result<()> {
    let floor = tol::RANK_GAP * s[0];
    if !(s[rank - 1] > floor) {
        return Err(Error::DegenerateProjection(format!(
            "fewer than {rank} nonzero singular values ({s:?})"
        )));
    }
    if let Some(&next) = s.get(rank) {
        if s[rank - 1] - next <= floor {
            return Err(Error::DegenerateProjection(format!(
                "tie at singular value {rank}: {} vs {next}",
                s[rank - 1]
            )));
        }
    }
    Ok(())
}

fn truncate(svd: &Svd, rank: usize) -> Matrix {
    let (p, r) = (svd.u.rows(), svd.v.rows());
    Matrix::from_fn(p, r, |i, j| {
        (0..rank)
            .map(|k| svd.u[(i, k)] * svd.s[k] * svd.v[(j, k)])
            .sum()
    })
}

fn leading_columns(m: &Matrix, k: usize) -> Matrix {
    Matrix::from_fn(m.rows(), k, |i, j| m[(i, j)])
}

/// A matrix known to lie on its manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    manifold: ManifoldKind,
    value: Matrix,
}

impl ManifoldPoint {
    /// Wraps `value`, checking membership.
    pub fn new(manifold: ManifoldKind, value: Matrix) -> Result<Self> {
        let residual = manifold.check_membership(&value)?;
        if residual > tol::MEMBERSHIP {
            return Err(Error::MembershipViolation { residual });
        }
        Ok(Self { manifold, value })
    }

    pub fn manifold(&self) -> &ManifoldKind {
        &self.manifold
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn into_value(self) -> Matrix {
        self.value
    }

    /// Orthogonal projection of an ambient direction onto `T_x𝓜`.
    pub fn tangent_project(&self, v: &Matrix) -> Result<Matrix> {
        self.manifold.check_shape(v)?;
        let x = &self.value;
        match self.manifold {
            ManifoldKind::Sphere { .. } => {
                self.require_membership(self.manifold.check_membership(x)?)?;
                let mut out = v.clone();
                out.axpy(-v.dot(x), x);
                Ok(out)
            }
            ManifoldKind::Stiefel { .. } => {
                self.require_membership(self.manifold.check_membership(x)?)?;
                let s = x.t_matmul(v).sym();
                Ok(v - &x.matmul(&s))
            }
            ManifoldKind::Oblique { .. } => {
                self.require_membership(self.manifold.check_membership(x)?)?;
                let (p, r) = x.shape();
                let mut out = v.clone();
                for j in 0..r {
                    let c: f64 = (0..p).map(|i| x[(i, j)] * v[(i, j)]).sum();
                    for i in 0..p {
                        out[(i, j)] -= c * x[(i, j)];
                    }
                }
                Ok(out)
            }
            ManifoldKind::FixedRank { rank, .. } => {
                let svd = thin_svd(x)?;
                self.require_membership(fixed_rank_residual(&svd.s, rank))?;
                let u = leading_columns(&svd.u, rank);
                let w = leading_columns(&svd.v, rank);
                // P(v) = UUᵀv + vWWᵀ − UUᵀvWWᵀ
                let uu_v = u.matmul(&u.t_matmul(v));
                let v_ww = v.matmul(&w).matmul(&w.transpose());
                let uu_v_ww = uu_v.matmul(&w).matmul(&w.transpose());
                Ok(uu_v + &v_ww - &uu_v_ww)
            }
        }
    }

    fn require_membership(&self, residual: f64) -> Result<()> {
        if residual > tol::MEMBERSHIP {
            return Err(Error::MembershipViolation { residual });
        }
        Ok(())
    }

    /// `grad f(x)`: tangent component of the Euclidean gradient.
    pub fn riemannian_gradient(&self, euclid_grad: &Matrix) -> Result<Matrix> {
        self.tangent_project(euclid_grad)
    }

    /// Polar retraction. On the Stiefel manifold this is
    /// `(x + s)(I + sᵀs)^{-1/2}`, which for tangent `s` coincides with the
    /// polar factor of `x + s`; the other kinds use the projection of `x + s`.
    pub fn retract_polar(&self, s: &Matrix) -> Result<ManifoldPoint> {
        let proj = self.tangent_project(s)?;
        let residual = (&proj - s).norm();
        if residual > tol::TANGENCY * s.norm().max(1.0) {
            return Err(Error::NonTangentDirection { residual });
        }
        if s.as_slice().iter().all(|&v| v == 0.0) {
            return Ok(self.clone());
        }
        self.manifold.project(&(&self.value + s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inv_sqrt_spd;
    use crate::rng::sample_unit_sphere;

    fn stiefel_point(p: usize, r: usize, seed: u64) -> ManifoldPoint {
        ManifoldKind::stiefel(p, r)
            .unwrap()
            .random_point(&RngStream::new(seed))
            .unwrap()
    }

    #[test]
    fn constructors_validate() {
        assert!(ManifoldKind::stiefel(2, 3).is_err());
        assert!(ManifoldKind::fixed_rank(3, 3, 4, 0.5).is_err());
        assert!(ManifoldKind::fixed_rank(3, 3, 2, 0.0).is_err());
        assert!(ManifoldKind::sphere(0, 1).is_err());
        assert_eq!(ManifoldKind::stiefel(4, 2).unwrap().gamma(), 0.5);
        assert_eq!(ManifoldKind::fixed_rank(4, 3, 2, 0.2).unwrap().gamma(), 0.2);
    }

    #[test]
    fn stiefel_fixed_point() {
        let x = stiefel_point(3, 2, 1);
        let p = x.manifold().project(x.value()).unwrap();
        assert!((p.value() - x.value()).norm() < 1e-14);
    }

    #[test]
    fn sphere_radial_projection() {
        let m = ManifoldKind::sphere(2, 2).unwrap();
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(a.norm(), 2.0);
        assert_eq!(m.project(&a).unwrap().value(), &a.scale(0.5));
        assert!(matches!(
            m.project(&Matrix::zeros(2, 2)),
            Err(Error::DegenerateProjection(_))
        ));
    }

    #[test]
    fn fixed_rank_eckart_young_diagonal() {
        let m = ManifoldKind::fixed_rank(3, 3, 2, 0.5).unwrap();
        let p = m.project(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        assert!((p.value() - &Matrix::diag(&[3.0, 2.0, 0.0])).norm() < 1e-13);
    }

    #[test]
    fn fixed_rank_tie_is_an_error() {
        let m = ManifoldKind::fixed_rank(3, 3, 1, 0.5).unwrap();
        assert!(matches!(
            m.project(&Matrix::diag(&[2.0, 2.0, 1.0])),
            Err(Error::DegenerateProjection(_))
        ));
        let m2 = ManifoldKind::fixed_rank(3, 3, 2, 0.5).unwrap();
        assert!(m2.project(&Matrix::diag(&[2.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn stiefel_rank_deficient_is_an_error() {
        let m = ManifoldKind::stiefel(3, 2).unwrap();
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[0.0, 0.0]]);
        assert!(matches!(m.project(&a), Err(Error::DegenerateProjection(_))));
    }

    #[test]
    fn oblique_normalizes_columns() {
        let m = ManifoldKind::oblique(2, 2).unwrap();
        let p = m
            .project(&Matrix::from_rows(&[&[3.0, 0.0], &[4.0, -2.0]]))
            .unwrap();
        assert_eq!(p.value(), &Matrix::from_rows(&[&[0.6, 0.0], &[0.8, -1.0]]));
    }

    #[test]
    fn stiefel_projection_matches_descent_oracle() {
        // minimize ½‖a − x‖² over St(4,2) by Riemannian gradient descent with
        // a QR-free polar retraction; compare against the SVD projection
        let m = ManifoldKind::stiefel(4, 2).unwrap();
        let root = RngStream::new(31);
        let x = m.random_point(&root.spawn(0)).unwrap();
        let u = sample_unit_sphere(&root.spawn(1), 4, 2);
        let a = x.value() + &u.scale(0.3);

        let mut y = x.clone();
        for _ in 0..5000 {
            let g = y.riemannian_gradient(&(y.value() - &a)).unwrap();
            if g.norm() < 1e-13 {
                break;
            }
            let step = g.scale(-0.5);
            let z = y.value() + &step;
            let m2 = inv_sqrt_spd(&(Matrix::identity(2) + step.t_matmul(&step))).unwrap();
            y = ManifoldPoint::new(m.clone(), z.matmul(&m2)).unwrap();
        }
        let p = m.project(&a).unwrap();
        assert!((p.value() - y.value()).norm() < 1e-6);
    }

    #[test]
    fn sphere_tangent_projection_2d() {
        let m = ManifoldKind::sphere(2, 1).unwrap();
        let x = ManifoldPoint::new(m, Matrix::column(&[1.0, 0.0])).unwrap();
        let y = x.tangent_project(&Matrix::column(&[0.7, -1.3])).unwrap();
        assert_eq!(y, Matrix::column(&[0.0, -1.3]));
    }

    #[test]
    fn tangent_projection_rejects_off_manifold_points() {
        let m = ManifoldKind::sphere(2, 1).unwrap();
        assert!(matches!(
            ManifoldPoint::new(m, Matrix::column(&[2.0, 0.0])),
            Err(Error::MembershipViolation { .. })
        ));
    }

    #[test]
    fn stiefel_tangent_orthogonality() {
        let x = stiefel_point(4, 2, 7);
        let root = RngStream::new(8);
        let v = sample_gaussian(&root.spawn(0), 4, 2);
        let y = x.tangent_project(&v).unwrap();
        let xt_y = x.value().t_matmul(&y);
        assert!((&xt_y + &xt_y.transpose()).norm() <= 1e-12);
        let resid = &v - &y;
        for k in 1..=20 {
            let w = x
                .tangent_project(&sample_gaussian(&root.spawn(k), 4, 2))
                .unwrap();
            assert!(resid.dot(&w).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_rank_tangent_is_idempotent() {
        let m = ManifoldKind::fixed_rank(5, 4, 2, 0.5).unwrap();
        let x = m.random_point(&RngStream::new(3)).unwrap();
        let v = sample_gaussian(&RngStream::new(4), 5, 4);
        let y = x.tangent_project(&v).unwrap();
        let yy = x.tangent_project(&y).unwrap();
        assert!((&y - &yy).norm() <= 1e-12 * y.norm().max(1.0));
    }

    #[test]
    fn normal_gradient_is_annihilated() {
        let x = stiefel_point(5, 2, 9);
        // x·S with S symmetric is normal to the Stiefel manifold
        let s = Matrix::from_rows(&[&[2.0, 0.5], &[0.5, -1.0]]);
        let g = x.riemannian_gradient(&x.value().matmul(&s)).unwrap();
        assert!(g.norm() < 1e-14);

        let sphere = ManifoldKind::sphere(2, 1).unwrap();
        let e1 = ManifoldPoint::new(sphere, Matrix::column(&[1.0, 0.0])).unwrap();
        let g = e1
            .riemannian_gradient(&Matrix::column(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(g, Matrix::column(&[0.0, 0.0]));
    }

    #[test]
    fn retraction_axioms() {
        let x = stiefel_point(5, 3, 10);
        assert_eq!(&x.retract_polar(&Matrix::zeros(5, 3)).unwrap(), &x);
        // x itself is a normal direction
        let bad = x.value().scale(0.5);
        assert!(matches!(
            x.retract_polar(&bad),
            Err(Error::NonTangentDirection { .. })
        ));
    }

    #[test]
    fn stiefel_retraction_matches_closed_form() {
        // St(3,1) is the unit sphere: Retr_{e1}(t e2) = (e1 + t e2)/√(1+t²)
        let m = ManifoldKind::stiefel(3, 1).unwrap();
        let x = ManifoldPoint::new(m, Matrix::column(&[1.0, 0.0, 0.0])).unwrap();
        let t = 0.7;
        let r = x.retract_polar(&Matrix::column(&[0.0, t, 0.0])).unwrap();
        let n = (1.0 + t * t).sqrt();
        assert!((r.value() - &Matrix::column(&[1.0 / n, t / n, 0.0])).norm() < 1e-15);

        // general case: (x+s)(I+sᵀs)^{-1/2}
        let x = stiefel_point(6, 3, 12);
        let s = x
            .tangent_project(&sample_gaussian(&RngStream::new(13), 6, 3))
            .unwrap()
            .scale(0.4);
        let formula = (x.value() + &s)
            .matmul(&inv_sqrt_spd(&(Matrix::identity(3) + s.t_matmul(&s))).unwrap());
        let r = x.retract_polar(&s).unwrap();
        assert!((r.value() - &formula).norm() < 1e-12);
    }

    #[test]
    fn retraction_first_order_consistency() {
        let x = stiefel_point(5, 2, 21);
        let s = x
            .tangent_project(&sample_gaussian(&RngStream::new(22), 5, 2))
            .unwrap();
        let h = 1e-5;
        let plus = x.retract_polar(&s.scale(h)).unwrap();
        let minus = x.retract_polar(&s.scale(-h)).unwrap();
        let deriv = (plus.value() - minus.value()).scale(0.5 / h);
        assert!((&deriv - &s).norm() <= 1e-4 * s.norm());
    }

    #[test]
    fn membership_residuals() {
        let x = stiefel_point(4, 4, 2);
        assert!(x.manifold().check_membership(x.value()).unwrap() < 1e-14);
        let sphere = ManifoldKind::sphere(3, 1).unwrap();
        let y = sphere.random_point(&RngStream::new(1)).unwrap();
        let r = sphere.check_membership(&y.value().scale(2.0)).unwrap();
        assert!((r - 1.0).abs() < 1e-14);

        // independent recomputation for a random matrix
        let a = sample_gaussian(&RngStream::new(40), 4, 3);
        let st = ManifoldKind::stiefel(4, 3).unwrap();
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let g: f64 = (0..4).map(|k| a[(k, i)] * a[(k, j)]).sum();
                let d = g - if i == j { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        assert!((st.check_membership(&a).unwrap() - acc.sqrt()).abs() < 1e-12);

        let fr = ManifoldKind::fixed_rank(3, 3, 2, 0.5).unwrap();
        let r = fr
            .check_membership(&Matrix::diag(&[4.0, 2.0, 1.0]))
            .unwrap();
        assert!((r - 0.25).abs() < 1e-14);
    }

    #[test]
    fn distance_to_manifold() {
        let sphere = ManifoldKind::sphere(2, 1).unwrap();
        let d = sphere
            .dist_to_manifold(&Matrix::column(&[0.0, 1.3]))
            .unwrap();
        assert!((d - 0.3).abs() < 1e-15);

        let m = ManifoldKind::stiefel(4, 2).unwrap();
        let root = RngStream::new(50);
        let a = sample_gaussian(&root, 4, 2);
        let d = m.dist_to_manifold(&a).unwrap();
        for i in 0..100 {
            let y = m.random_point(&root.spawn(i)).unwrap();
            assert!(d <= (&a - y.value()).norm() + 1e-12);
        }
        let x = m.random_point(&root.spawn(999)).unwrap();
        assert!(m.dist_to_manifold(x.value()).unwrap() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = ManifoldKind::stiefel(4, 2).unwrap();
        assert!(matches!(
            m.project(&Matrix::zeros(2, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
