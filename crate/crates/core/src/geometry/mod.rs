//! Calibrated two-view geometry.
//!
//! Everything here works in normalized (calibrated) image coordinates: a 2D
//! point `(u, v)` is the projection `(X/Z, Y/Z)` of a 3D point in the camera
//! frame. The relative pose convention maps first-camera coordinates into the
//! second camera, `x₂ = R·x₁ + t`, and the essential matrix `E = [t]× R`
//! satisfies `x₂ᵀ E x₁ = 0` for corresponding homogeneous directions.

mod five_point;
pub(crate) mod roots;

pub use five_point::five_point_solve;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

/// Errors from geometric constructions and solvers.
#[derive(Debug, Error)]
pub enum GeometryError {
    /// A rotation/translation pair violating the pose invariants.
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    /// A matrix that cannot be projected to the essential manifold.
    #[error("matrix cannot be normalized to an essential matrix")]
    InvalidEssential,
    /// A calibrated point outside the sanity bounds.
    #[error("invalid normalized point ({0}, {1})")]
    InvalidPoint(f64, f64),
    /// The minimal-solver constraint matrix has rank below five.
    #[error("degenerate correspondence configuration")]
    DegenerateConfiguration,
    /// The degree-10 polynomial of the minimal solver has no real roots.
    #[error("no real solution within tolerance")]
    NoRealSolution,
    /// No decomposition candidate places any correspondence in front of both cameras.
    #[error("cheirality test is ambiguous: no candidate has positive-depth support")]
    CheiralityAmbiguous,
    /// Triangulation rays are parallel (or meet at infinity).
    #[error("rays are parallel; triangulation undefined")]
    ParallelRays,
    /// Both epipolar lines of a pair are degenerate (both points at epipoles).
    #[error("epipolar lines degenerate for both views")]
    DegenerateLine,
}

/// Relative pose: rotation plus unit translation direction (scale is not
/// observable from two views).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Pose {
    const ORTHONORMAL_TOL: f64 = 1e-9;
    const UNIT_T_TOL: f64 = 1e-12;

    /// Validates `R·Rᵀ = I`, `det R = 1` and `‖t‖ = 1`.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeometryError> {
        let rrt = r * r.transpose();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                if !rrt[(i, j)].is_finite() || (rrt[(i, j)] - target).abs() > Self::ORTHONORMAL_TOL
                {
                    return Err(GeometryError::InvalidPose(format!(
                        "R not orthonormal at ({i},{j})"
                    )));
                }
            }
        }
        if (r.determinant() - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose("det(R) != 1".into()));
        }
        if (t.norm() - 1.0).abs() > Self::UNIT_T_TOL {
            return Err(GeometryError::InvalidPose("t not unit length".into()));
        }
        Ok(Self { r, t })
    }

    /// Normalizes `t` to unit length before validating. `t` must be nonzero.
    pub fn new_normalized(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = t.norm();
        if n <= 0.0 || !n.is_finite() {
            return Err(GeometryError::InvalidPose("t has zero norm".into()));
        }
        Self::new(r, t / n)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Maps a point from the first camera frame into the second.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }
}

/// Essential matrix stored in canonical form: projected onto the essential
/// manifold (two equal singular values, one zero), Frobenius norm one, and the
/// largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix {
    m: Matrix3<f64>,
}

impl EssentialMatrix {
    /// Projects an arbitrary nonzero matrix onto the essential manifold and
    /// normalizes scale and sign.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidEssential);
        }
        let svd = m.svd(true, true);
        let u = svd.u.ok_or(GeometryError::InvalidEssential)?;
        let v_t = svd.v_t.ok_or(GeometryError::InvalidEssential)?;
        let s = svd.singular_values;
        let avg = 0.5 * (s[0] + s[1]);
        if avg <= 0.0 || !avg.is_finite() {
            return Err(GeometryError::InvalidEssential);
        }
        let diag = Matrix3::from_diagonal(&Vector3::new(avg, avg, 0.0));
        let mut e = u * diag * v_t;
        e /= e.norm();
        // Sign convention: first row-major entry of maximal magnitude is positive.
        let mut best = (0usize, 0usize);
        let mut best_abs = -1.0;
        for i in 0..3 {
            for j in 0..3 {
                if e[(i, j)].abs() > best_abs {
                    best_abs = e[(i, j)].abs();
                    best = (i, j);
                }
            }
        }
        if e[best] < 0.0 {
            e = -e;
        }
        Ok(Self { m: e })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Checks the manifold invariants on the stored matrix.
    pub fn satisfies_invariants(&self) -> bool {
        let s = self.m.svd(false, false).singular_values;
        let s1 = s[0];
        s1 > 0.0
            && s[2] / s1 < 1e-7
            && (s[0] - s[1]).abs() / s1 < 1e-6
            && (self.m.norm() - 1.0).abs() < 1e-9
    }
}

/// Calibrated image point in focal-length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint2 {
    pub u: f64,
    pub v: f64,
}

impl NormalizedPoint2 {
    /// Sanity bound for desk-scale cameras: coordinates within ±10.
    pub const MAX_ABS: f64 = 10.0;

    pub fn new(u: f64, v: f64) -> Result<Self, GeometryError> {
        if !u.is_finite() || !v.is_finite() || u.abs() > Self::MAX_ABS || v.abs() > Self::MAX_ABS {
            return Err(GeometryError::InvalidPoint(u, v));
        }
        Ok(Self { u, v })
    }

    /// Homogeneous direction `(u, v, 1)`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// Pinhole intrinsics: focal length in pixels and principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Pixel coordinates to calibrated coordinates.
    pub fn calibrate(&self, px: f64, py: f64) -> Result<NormalizedPoint2, GeometryError> {
        NormalizedPoint2::new((px - self.cx) / self.focal, (py - self.cy) / self.focal)
    }

    /// Calibrated coordinates to pixel coordinates.
    pub fn uncalibrate(&self, p: &NormalizedPoint2) -> (f64, f64) {
        (p.u * self.focal + self.cx, p.v * self.focal + self.cy)
    }
}

/// Cross-product matrix `[v]×` so that `[v]× w = v × w`.
fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Ground-truth essential matrix `E = [t]× R` of a pose.
pub fn essential_from_pose(pose: &Pose) -> EssentialMatrix {
    let m = skew(pose.translation()) * pose.rotation();
    // [t]×R with unit t has singular values (1, 1, 0); projection cannot fail.
    EssentialMatrix::from_matrix(&m).expect("valid pose yields valid essential matrix")
}

/// Linear (DLT) two-view triangulation.
///
/// Returns the 3D point in the first camera frame together with its depth in
/// each camera. Fails with [`GeometryError::ParallelRays`] when the two
/// viewing rays are parallel within 1e-12 or the intersection lies at
/// infinity.
pub fn triangulate(
    pose: &Pose,
    x: &NormalizedPoint2,
    xp: &NormalizedPoint2,
) -> Result<(Vector3<f64>, [f64; 2]), GeometryError> {
    let d1 = x.homogeneous();
    let d2_world = pose.rotation().transpose() * xp.homogeneous();
    let cross = d1.cross(&d2_world);
    if cross.norm() < 1e-12 * d1.norm() * d2_world.norm() {
        return Err(GeometryError::ParallelRays);
    }

    // Rows of [I|0] and [R|t] combined into the standard DLT system.
    let r = pose.rotation();
    let t = pose.translation();
    let p2 = |row: usize| Vector4::new(r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]);
    let rows = [
        Vector4::new(-1.0, 0.0, x.u, 0.0),
        Vector4::new(0.0, -1.0, x.v, 0.0),
        xp.u * p2(2) - p2(0),
        xp.v * p2(2) - p2(1),
    ];
    let a = Matrix4::from_rows(&[
        rows[0].transpose(),
        rows[1].transpose(),
        rows[2].transpose(),
        rows[3].transpose(),
    ]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::ParallelRays)?;
    let h = v_t.row(3);
    let xyz = Vector3::new(h[0], h[1], h[2]);
    let w = h[3];
    if w.abs() < 1e-12 * xyz.norm() {
        return Err(GeometryError::ParallelRays);
    }
    let p = xyz / w;
    let depth1 = p.z;
    let depth2 = pose.transform(&p).z;
    Ok((p, [depth1, depth2]))
}

/// The four rotation/translation candidates of an essential matrix in the
/// fixed enumeration order `(R₁,+t), (R₁,−t), (R₂,+t), (R₂,−t)`.
fn decomposition_candidates(e: &EssentialMatrix) -> Result<[Pose; 4], GeometryError> {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.ok_or(GeometryError::InvalidEssential)?;
    let mut v_t = svd.v_t.ok_or(GeometryError::InvalidEssential)?;
    // Flipping the vector paired with the zero singular value preserves E
    // while making both factors proper rotations.
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    Ok([
        Pose::new_normalized(r1, t)?,
        Pose::new_normalized(r1, -t)?,
        Pose::new_normalized(r2, t)?,
        Pose::new_normalized(r2, -t)?,
    ])
}

/// Selects the decomposition of `E` that places the most correspondences in
/// front of both cameras; ties resolve to the lowest candidate index.
pub fn decompose_essential(
    e: &EssentialMatrix,
    correspondences: &[(NormalizedPoint2, NormalizedPoint2)],
) -> Result<Pose, GeometryError> {
    let candidates = decomposition_candidates(e)?;
    let mut best: Option<(usize, usize)> = None; // (count, index)
    for (idx, cand) in candidates.iter().enumerate() {
        let mut count = 0usize;
        for (x, xp) in correspondences {
            if let Ok((_, [d1, d2])) = triangulate(cand, x, xp) {
                if d1 > 0.0 && d2 > 0.0 {
                    count += 1;
                }
            }
        }
        match best {
            Some((best_count, _)) if count <= best_count => {}
            _ => best = Some((count, idx)),
        }
    }
    match best {
        Some((count, idx)) if count > 0 => Ok(candidates[idx]),
        _ => Err(GeometryError::CheiralityAmbiguous),
    }
}

/// Symmetric epipolar residual: the larger of the two point-to-epipolar-line
/// distances (`x′` to `E x`, and `x` to `Eᵀ x′`), in normalized coordinates.
///
/// When exactly one line is degenerate (a point sits on an epipole) the other
/// distance is returned; if both degenerate the residual is undefined.
pub fn epipolar_line_distance(
    e: &EssentialMatrix,
    x: &NormalizedPoint2,
    xp: &NormalizedPoint2,
) -> Result<f64, GeometryError> {
    let hx = x.homogeneous();
    let hxp = xp.homogeneous();
    let line2 = e.matrix() * hx; // epipolar line of x in the second image
    let line1 = e.matrix().transpose() * hxp; // epipolar line of x' in the first image
    let algebraic = hxp.dot(&line2);
    let n2 = (line2.x * line2.x + line2.y * line2.y).sqrt();
    let n1 = (line1.x * line1.x + line1.y * line1.y).sqrt();
    let d2 = if n2 > 0.0 {
        Some(algebraic.abs() / n2)
    } else {
        None
    };
    let d1 = if n1 > 0.0 {
        Some(algebraic.abs() / n1)
    } else {
        None
    };
    match (d1, d2) {
        (Some(a), Some(b)) => Ok(a.max(b)),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(GeometryError::DegenerateLine),
    }
}

/// Pose error in degrees: the maximum of the rotation angle between the two
/// rotations and the (sign-insensitive) angle between the two translation
/// directions.
///
/// Angles come from `atan2(sin, cos)` rather than `acos(cos)`: the arccosine
/// of `(trace−1)/2` loses half the significant digits near zero angle, while
/// the two-argument form stays exact for identical inputs.
pub fn angular_pose_error(est: &Pose, gt: &Pose) -> f64 {
    let rel = est.rotation().transpose() * gt.rotation();
    let cos_r = (rel.trace() - 1.0) / 2.0;
    let sin_vec = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin_r = 0.5 * sin_vec.norm();
    let rot_deg = sin_r.atan2(cos_r).to_degrees();
    // Translation direction is only defined up to sign.
    let cos_t = est.translation().dot(gt.translation()).abs();
    let sin_t = est.translation().cross(gt.translation()).norm();
    let trans_deg = sin_t.atan2(cos_t).to_degrees();
    rot_deg.max(trans_deg)
}

#[cfg(test)]
pub(crate) mod tests;
