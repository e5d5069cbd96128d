//! Gaussian atoms, bounding boxes and the closed-form operations on them.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Diagonal floor (m²) added to every covariance before inversion or
/// eigendecomposition.
pub const COV_EPS: f64 = 1e-6;

/// Default σ-multiple used for index boxes and overlap tests.
pub const DEFAULT_BBOX_K: f64 = 2.0;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Occupied,
    Free,
}

impl Kind {
    pub fn as_u8(self) -> u8 {
        match self {
            Kind::Occupied => 0,
            Kind::Free => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Kind> {
        match v {
            0 => Some(Kind::Occupied),
            1 => Some(Kind::Free),
            _ => None,
        }
    }
}

/// Symmetric 3×3 matrix stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3 { xx: 0.0, xy: 0.0, xz: 0.0, yy: 0.0, yz: 0.0, zz: 0.0 };

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    pub fn diag(x: f64, y: f64, z: f64) -> Self {
        SymMat3 { xx: x, yy: y, zz: z, ..Self::ZERO }
    }

    /// Upper triangle in row order: xx, xy, xz, yy, yz, zz.
    pub fn to_array(&self) -> [f64; 6] {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        SymMat3 { xx: a[0], xy: a[1], xz: a[2], yy: a[3], yz: a[4], zz: a[5] }
    }

    /// Symmetrizes `m` by averaging it with its transpose.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        SymMat3 {
            xx: m[(0, 0)],
            xy: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            xz: 0.5 * (m[(0, 2)] + m[(2, 0)]),
            yy: m[(1, 1)],
            yz: 0.5 * (m[(1, 2)] + m[(2, 1)]),
            zz: m[(2, 2)],
        }
    }

    pub fn outer(v: &Vec3) -> Self {
        SymMat3 {
            xx: v.x * v.x,
            xy: v.x * v.y,
            xz: v.x * v.z,
            yy: v.y * v.y,
            yz: v.y * v.z,
            zz: v.z * v.z,
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, //
            self.xy, self.yy, self.yz, //
            self.xz, self.yz, self.zz,
        )
    }

    pub fn diagonal(&self) -> Vec3 {
        Vec3::new(self.xx, self.yy, self.zz)
    }

    pub fn add_diag(&self, e: f64) -> Self {
        SymMat3 { xx: self.xx + e, yy: self.yy + e, zz: self.zz + e, ..*self }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }

    pub fn add(&self, o: &SymMat3) -> Self {
        let (a, b) = (self.to_array(), o.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }

    pub fn sub(&self, o: &SymMat3) -> Self {
        let (a, b) = (self.to_array(), o.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] - b[i]))
    }

    /// Regularized copy (`+ COV_EPS·I`).
    pub fn regularized(&self) -> Self {
        self.add_diag(COV_EPS)
    }
}

/// One weighted 3D Gaussian of either kind. `id == 0` means unassigned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3 {
    pub kind: Kind,
    pub weight: f64,
    pub mean: Vec3,
    pub cov: SymMat3,
    pub id: u64,
}

impl Gaussian3 {
    pub fn new(kind: Kind, weight: f64, mean: Vec3, cov: SymMat3) -> Self {
        Gaussian3 { kind, weight, mean, cov, id: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.weight.is_finite()
            && self.weight >= 0.0
            && self.mean.iter().all(|v| v.is_finite())
            && self.cov.to_array().iter().all(|v| v.is_finite())
            && self.cov.regularized().to_matrix().cholesky().is_some()
    }

    /// Density at `x`, regularizing the covariance first.
    pub fn pdf(&self, x: &Vec3) -> Result<f64> {
        gaussian_pdf(self, x)
    }

    pub fn bbox(&self, k: f64) -> Aabb {
        bbox_of(self, k)
    }
}

/// Cholesky factor and normalizer of `cov + εI`, for repeated density
/// evaluation. [`gaussian_pdf`] goes through this too, so cached and direct
/// evaluation agree bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdfEval {
    mean: Vec3,
    l: Matrix3<f64>,
    norm: f64,
}

impl PdfEval {
    pub fn new(g: &Gaussian3) -> Result<Self> {
        let chol = g
            .cov
            .regularized()
            .to_matrix()
            .cholesky()
            .ok_or(Error::DegenerateCovariance)?;
        let l = chol.l();
        let det_sqrt = l[(0, 0)] * l[(1, 1)] * l[(2, 2)];
        if !(det_sqrt > 0.0) || !det_sqrt.is_finite() {
            return Err(Error::DegenerateCovariance);
        }
        Ok(PdfEval { mean: g.mean, l, norm: (2.0 * std::f64::consts::PI).powf(-1.5) / det_sqrt })
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        let d = x - self.mean;
        let l = &self.l;
        let y0 = d[0] / l[(0, 0)];
        let y1 = (d[1] - l[(1, 0)] * y0) / l[(1, 1)];
        let y2 = (d[2] - l[(2, 0)] * y0 - l[(2, 1)] * y1) / l[(2, 2)];
        let maha = y0 * y0 + y1 * y1 + y2 * y2;
        self.norm * (-0.5 * maha).exp()
    }
}

/// Normal density `N(x; mean, cov + εI)`.
pub fn gaussian_pdf(g: &Gaussian3, x: &Vec3) -> Result<f64> {
    Ok(PdfEval::new(g)?.eval(x))
}

/// Mixture moment matching of two same-kind Gaussians. The result keeps `a.id`.
pub fn moment_merge(a: &Gaussian3, b: &Gaussian3) -> Result<Gaussian3> {
    if a.kind != b.kind {
        return Err(Error::KindMismatch);
    }
    let w = a.weight + b.weight;
    if !(w > 0.0) {
        return Err(Error::ZeroWeight);
    }
    let mean = (a.mean * a.weight + b.mean * b.weight) / w;
    // Equivalent to E[xxᵀ] - μμᵀ without the cancellation.
    let delta = a.mean - b.mean;
    let spread = a.weight * b.weight / (w * w);
    let cov = a
        .cov
        .scale(a.weight)
        .add(&b.cov.scale(b.weight))
        .scale(1.0 / w)
        .add(&SymMat3::outer(&delta).scale(spread));
    Ok(Gaussian3 { kind: a.kind, weight: w, mean, cov, id: a.id })
}

/// Squared Hellinger distance between the regularized Gaussians, clamped to [0, 1].
pub fn hellinger_sq(a: &Gaussian3, b: &Gaussian3) -> f64 {
    let sa = a.cov.regularized().to_matrix();
    let sb = b.cov.regularized().to_matrix();
    let avg = (sa + sb) * 0.5;
    let Some(chol) = avg.cholesky() else {
        return 1.0;
    };
    let (da, db, dm) = (sa.determinant(), sb.determinant(), avg.determinant());
    if !(da > 0.0 && db > 0.0 && dm > 0.0) {
        return 1.0;
    }
    let diff = a.mean - b.mean;
    let maha = chol.solve(&diff).dot(&diff);
    let coeff = (da.sqrt() * db.sqrt()).sqrt() / dm.sqrt();
    let h = 1.0 - coeff * (-0.125 * maha).exp();
    h.clamp(0.0, 1.0)
}

/// Cheap sufficient test for `hellinger_sq(a, b) > tau`, from the means and
/// covariance traces alone. Never true when the exact value is within `tau`.
pub fn hellinger_exceeds(a: &Gaussian3, b: &Gaussian3, tau: f64) -> bool {
    if tau >= 1.0 {
        return false;
    }
    // Bhattacharyya coefficient ≤ exp(-m/8) and m ≥ |Δμ|² / tr(Σ̄).
    let trace = 0.5 * (a.cov.xx + a.cov.yy + a.cov.zz + b.cov.xx + b.cov.yy + b.cov.zz) + 3.0 * COV_EPS;
    let m_lo = (a.mean - b.mean).norm_squared() / trace;
    m_lo > -8.0 * (1.0 - tau).ln() * (1.0 + 1e-6) + 1e-12
}

/// Axis-aligned box. `Aabb::EMPTY` has `lo > hi` and intersects nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        lo: Vector3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        hi: Vector3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn new(lo: Vec3, hi: Vec3) -> Self {
        Aabb { lo, hi }
    }

    pub fn point(p: Vec3) -> Self {
        Aabb { lo: p, hi: p }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.lo[i] > self.hi[i])
    }

    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        points.into_iter().fold(Aabb::EMPTY, |b, p| b.union(&Aabb::point(*p)))
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { lo: self.lo.inf(&o.lo), hi: self.hi.sup(&o.hi) }
    }

    /// Closed-box intersection: touching boxes intersect.
    pub fn intersects(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.lo[i] <= o.hi[i] && o.lo[i] <= self.hi[i])
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.lo[i] <= p[i] && p[i] <= self.hi[i])
    }

    pub fn contains(&self, o: &Aabb) -> bool {
        o.is_empty() || (0..3).all(|i| self.lo[i] <= o.lo[i] && o.hi[i] <= self.hi[i])
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.hi - self.lo;
        e.x * e.y * e.z
    }

    /// Sum of edge lengths; breaks ties between zero-volume boxes.
    pub fn margin(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.hi - self.lo;
        e.x + e.y + e.z
    }

    pub fn center(&self) -> Vec3 {
        (self.lo + self.hi) * 0.5
    }
}

/// `mean ± k·sqrt(cov_ii + ε)` per axis.
pub fn bbox_of(g: &Gaussian3, k: f64) -> Aabb {
    let half = g.cov.regularized().diagonal().map(|v| k * v.max(0.0).sqrt());
    Aabb { lo: g.mean - half, hi: g.mean + half }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: [f64; 3], cov: SymMat3, w: f64) -> Gaussian3 {
        Gaussian3::new(Kind::Occupied, w, Vec3::from(mean), cov)
    }

    #[test]
    fn pdf_identity_at_mean() {
        let p = g([0.0; 3], SymMat3::identity(), 1.0).pdf(&Vec3::zeros()).unwrap();
        assert!((p - 0.063_493_6).abs() < 1e-6, "{p}");
    }

    #[test]
    fn pdf_tail_is_negligible() {
        let p = g([0.0; 3], SymMat3::identity(), 1.0).pdf(&Vec3::new(10.0, 10.0, 10.0)).unwrap();
        assert!(p < 1e-60);
    }

    #[test]
    fn pdf_matches_scalar_rederivation() {
        // Diagonal case written out by hand: per-axis scalar normal densities.
        let var = [0.04 + COV_EPS, 0.09 + COV_EPS, 0.25 + COV_EPS];
        let d = [0.1, 0.0, 0.0];
        let mut expected = 1.0;
        for i in 0..3 {
            expected *= (-0.5 * d[i] * d[i] / var[i]).exp() / (2.0 * std::f64::consts::PI * var[i]).sqrt();
        }
        let p = g([1.0, 2.0, 3.0], SymMat3::diag(0.04, 0.09, 0.25), 1.0)
            .pdf(&Vec3::new(1.1, 2.0, 3.0))
            .unwrap();
        assert!(((p - expected) / expected).abs() < 1e-12, "{p} vs {expected}");
        assert!((p - 1.867_732_946_380_323).abs() < 1e-12, "{p}");
    }

    #[test]
    fn pdf_rejects_indefinite_cov() {
        let bad = g([0.0; 3], SymMat3::diag(-1.0, 1.0, 1.0), 1.0);
        assert!(matches!(bad.pdf(&Vec3::zeros()), Err(Error::DegenerateCovariance)));
    }

    #[test]
    fn merge_symmetric_pair() {
        let a = g([0.0, 0.0, 0.0], SymMat3::identity(), 1.0);
        let b = g([2.0, 0.0, 0.0], SymMat3::identity(), 1.0);
        let m = moment_merge(&a, &b).unwrap();
        assert_eq!(m.mean, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(m.cov, SymMat3::diag(2.0, 1.0, 1.0));
        assert_eq!(m.weight, 2.0);
    }

    #[test]
    fn merge_with_self_doubles_weight() {
        let a = g([0.3, -1.0, 2.0], SymMat3 { xx: 0.5, xy: 0.1, xz: 0.0, yy: 0.4, yz: -0.05, zz: 0.2 }, 3.0);
        let m = moment_merge(&a, &a).unwrap();
        assert_eq!(m.weight, 6.0);
        assert_eq!(m.mean, a.mean);
        assert_eq!(m.cov, a.cov);
    }

    #[test]
    fn merge_rejects_kind_mismatch() {
        let a = g([0.0; 3], SymMat3::identity(), 1.0);
        let mut b = a;
        b.kind = Kind::Free;
        assert!(matches!(moment_merge(&a, &b), Err(Error::KindMismatch)));
    }

    #[test]
    fn bbox_examples() {
        let b = bbox_of(&g([0.0; 3], SymMat3::identity(), 1.0), 2.0);
        for i in 0..3 {
            assert!((b.lo[i] + 2.0).abs() < 1e-5 && (b.hi[i] - 2.0).abs() < 1e-5);
        }
        let b = bbox_of(&g([5.0; 3], SymMat3::ZERO, 1.0), 2.0);
        let half = 2.0 * COV_EPS.sqrt();
        for i in 0..3 {
            assert!((b.hi[i] - 5.0 - half).abs() < 1e-12 && (5.0 - b.lo[i] - half).abs() < 1e-12);
        }
        assert!(!b.is_empty());
        let b = bbox_of(&g([1.0, 0.0, 0.0], SymMat3::diag(4.0, 1.0, 0.25), 1.0), 2.0);
        let lo = [-3.0, -2.0, -1.0];
        let hi = [5.0, 2.0, 1.0];
        for i in 0..3 {
            assert!((b.lo[i] - lo[i]).abs() < 1e-5 && (b.hi[i] - hi[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn hellinger_basic() {
        let a = g([0.0; 3], SymMat3::diag(0.1, 0.2, 0.3), 1.0);
        assert!(hellinger_sq(&a, &a).abs() < 1e-12);
        let mut far = a;
        far.mean = Vec3::new(100.0, 0.0, 0.0);
        assert!(hellinger_sq(&a, &far) > 0.999_999);
    }

    #[test]
    fn aabb_empty_and_touching() {
        assert!(Aabb::EMPTY.is_empty());
        assert!(!Aabb::EMPTY.intersects(&Aabb::point(Vec3::zeros())));
        let a = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let b = Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0));
        assert!(a.intersects(&b));
    }

    proptest::proptest! {
        #[test]
        fn prefilter_is_sound(
            ma in proptest::array::uniform3(-2.0f64..2.0),
            mb in proptest::array::uniform3(-2.0f64..2.0),
            ca in proptest::array::uniform6(-0.5f64..0.5),
            cb in proptest::array::uniform6(-0.5f64..0.5),
            tau in 0.01f64..0.99,
        ) {
            let spd = |c: [f64; 6]| {
                let m = nalgebra::Matrix3::new(c[0], c[1], c[2], 0.0, c[3], c[4], 0.0, 0.0, c[5]);
                SymMat3::from_matrix(&(m * m.transpose()))
            };
            let a = g(ma, spd(ca), 1.0);
            let b = g(mb, spd(cb), 2.0);
            if hellinger_exceeds(&a, &b, tau) {
                proptest::prop_assert!(hellinger_sq(&a, &b) > tau);
            }
        }
    }
}
