//! Camera intrinsics, SE3 pose algebra, and pixel↔3D-point conversions.
//!
//! Conventions, used everywhere in this crate:
//! - camera frame is right-handed with +z forward into the scene, +x right,
//!   +y down, so positive depth lies in front of the camera;
//! - pixel centers at integer coordinates (x, y) ∈ {0..W−1}×{0..H−1};
//! - Euler rotations compose as Rz(rz)·Ry(ry)·Rx(rx).

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, ValidityMask};
use serde::{Deserialize, Serialize};

/// Points with camera-space z at or below this are flagged invalid by
/// projection instead of erroring; transformed points behind the camera are
/// expected during optimization.
pub const NEAR_EPS: f64 = 1e-6;

/// Pinhole camera intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(
                "focal lengths must be positive".into(),
            ));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidParameter(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Intrinsics for a pyramid level `s` (image halved `s` times); fx, fy,
    /// cx, cy all scale by the same factor.
    pub fn scaled(&self, level: u32) -> Intrinsics {
        let f = 0.5f64.powi(level as i32);
        Intrinsics {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width >> level,
            height: self.height >> level,
        }
    }

    /// Plain-text `key=value` serialization, one entry per line.
    pub fn to_key_values(&self) -> String {
        format!(
            "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        let mut width = None;
        let mut height = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad intrinsics line: {line:?}")))?;
            let key = key.trim();
            let val = val.trim();
            let parse_f = || {
                val.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad intrinsics value for {key}: {val:?}")))
            };
            let parse_u = || {
                val.parse::<usize>()
                    .map_err(|_| Error::Data(format!("bad intrinsics value for {key}: {val:?}")))
            };
            match key {
                "fx" => fx = Some(parse_f()?),
                "fy" => fy = Some(parse_f()?),
                "cx" => cx = Some(parse_f()?),
                "cy" => cy = Some(parse_f()?),
                "width" => width = Some(parse_u()?),
                "height" => height = Some(parse_u()?),
                other => return Err(Error::Lookup(format!("unknown intrinsics key: {other}"))),
            }
        }
        let missing = |k: &str| Error::Data(format!("missing intrinsics key: {k}"));
        Intrinsics::new(
            fx.ok_or_else(|| missing("fx"))?,
            fy.ok_or_else(|| missing("fy"))?,
            cx.ok_or_else(|| missing("cx"))?,
            cy.ok_or_else(|| missing("cy"))?,
            width.ok_or_else(|| missing("width"))?,
            height.ok_or_else(|| missing("height"))?,
        )
    }
}

/// 6-vector rigid transform: translation in world units, rotation angles in
/// radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose6 {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl Pose6 {
    pub fn new(tx: f64, ty: f64, tz: f64, rx: f64, ry: f64, rz: f64) -> Self {
        Pose6 {
            tx,
            ty,
            tz,
            rx,
            ry,
            rz,
        }
    }

    pub fn identity() -> Self {
        Pose6::default()
    }

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        Pose6::new(tx, ty, tz, 0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.tx, self.ty, self.tz, self.rx, self.ry, self.rz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Pose6::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of all six components.
    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn translation_vec(&self) -> [f64; 3] {
        [self.tx, self.ty, self.tz]
    }
}

/// 4×4 homogeneous rigid transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Matrix {
    pub m: [[f64; 4]; 4],
}

impl SE3Matrix {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        SE3Matrix { m }
    }

    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        SE3Matrix { m }
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            r[i].copy_from_slice(&self.m[i][..3]);
        }
        r
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Checks RᵀR = I and det(R) = 1 within 1e-9 and the (0,0,0,1) bottom row.
    pub fn validate(&self) -> Result<()> {
        const TOL: f64 = 1e-9;
        let bottom = self.m[3];
        if bottom[0].abs() > TOL
            || bottom[1].abs() > TOL
            || bottom[2].abs() > TOL
            || (bottom[3] - 1.0).abs() > TOL
        {
            return Err(Error::InvalidMatrix("bottom row must be (0,0,0,1)".into()));
        }
        if !self.m.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entries".into()));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > TOL {
                    return Err(Error::InvalidMatrix(
                        "rotation block is not orthonormal within 1e-9".into(),
                    ));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > TOL {
            return Err(Error::InvalidMatrix(
                "rotation determinant must be 1 within 1e-9".into(),
            ));
        }
        Ok(())
    }

    /// Matrix product self·other (apply `other` first).
    pub fn compose(&self, other: &SE3Matrix) -> SE3Matrix {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        SE3Matrix { m: out }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * p[0] + self.m[i][1] * p[1] + self.m[i][2] * p[2] + self.m[i][3];
        }
        out
    }

    /// Rotate a direction vector (no translation).
    pub fn rotate_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * v[0] + self.m[i][1] * v[1] + self.m[i][2] * v[2];
        }
        out
    }
}

/// Builds the SE3 matrix with rotation block Rz(rz)·Ry(ry)·Rx(rx) and
/// translation column (tx, ty, tz).
pub fn pose_to_matrix(p: &Pose6) -> Result<SE3Matrix> {
    if !p.is_finite() {
        return Err(Error::InvalidParameter(
            "pose components must be finite".into(),
        ));
    }
    let (sx, cx) = p.rx.sin_cos();
    let (sy, cy) = p.ry.sin_cos();
    let (sz, cz) = p.rz.sin_cos();
    let r = [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ];
    Ok(SE3Matrix::from_rotation_translation(
        r,
        [p.tx, p.ty, p.tz],
    ))
}

/// Recovers the Pose6 of a valid SE3 matrix; inverse of [`pose_to_matrix`].
/// Fails near the ry = ±π/2 gimbal singularity.
pub fn matrix_to_pose(m: &SE3Matrix) -> Result<Pose6> {
    m.validate()?;
    let r = m.rotation();
    let sy = -r[2][0];
    if sy.abs() > 1.0 - 1e-9 {
        return Err(Error::InvalidMatrix(
            "pose extraction is singular at |ry| = pi/2".into(),
        ));
    }
    let ry = sy.asin();
    let rx = r[2][1].atan2(r[2][2]);
    let rz = r[1][0].atan2(r[0][0]);
    let t = m.translation();
    Ok(Pose6::new(t[0], t[1], t[2], rx, ry, rz))
}

/// Analytic SE3 inverse: (R, t)⁻¹ = (Rᵀ, −Rᵀt). Validates the input first.
pub fn invert(m: &SE3Matrix) -> Result<SE3Matrix> {
    m.validate()?;
    let r = m.rotation();
    let t = m.translation();
    let mut rt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rt[i][j] = r[j][i];
        }
    }
    let nt = [
        -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
        -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
        -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
    ];
    Ok(SE3Matrix::from_rotation_translation(rt, nt))
}

/// H×W grid of 3D points in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid {
    pub x: Grid,
    pub y: Grid,
    pub z: Grid,
}

impl PointGrid {
    pub fn height(&self) -> usize {
        self.x.height()
    }

    pub fn width(&self) -> usize {
        self.x.width()
    }

    pub fn point(&self, px: usize, py: usize) -> [f64; 3] {
        [self.x.get(px, py), self.y.get(px, py), self.z.get(px, py)]
    }

    pub fn transform(&self, m: &SE3Matrix) -> PointGrid {
        let (h, w) = (self.height(), self.width());
        let mut out = PointGrid {
            x: Grid::new(h, w, 0.0),
            y: Grid::new(h, w, 0.0),
            z: Grid::new(h, w, 0.0),
        };
        for py in 0..h {
            for px in 0..w {
                let p = m.transform_point(self.point(px, py));
                out.x.set(px, py, p[0]);
                out.y.set(px, py, p[1]);
                out.z.set(px, py, p[2]);
            }
        }
        out
    }
}

/// Lifts each pixel to the 3D point d(x,y)·K⁻¹·(x,y,1)ᵀ.
pub fn backproject(d: &DepthMap, k: &Intrinsics) -> Result<PointGrid> {
    if d.width() != k.width || d.height() != k.height {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{} does not match intrinsics {}x{}",
            d.width(),
            d.height(),
            k.width,
            k.height
        )));
    }
    let (h, w) = (d.height(), d.width());
    let mut out = PointGrid {
        x: Grid::new(h, w, 0.0),
        y: Grid::new(h, w, 0.0),
        z: Grid::new(h, w, 0.0),
    };
    for py in 0..h {
        for px in 0..w {
            let depth = d.get(px, py);
            out.x.set(px, py, depth * (px as f64 - k.cx) / k.fx);
            out.y.set(px, py, depth * (py as f64 - k.cy) / k.fy);
            out.z.set(px, py, depth);
        }
    }
    Ok(out)
}

/// Pinhole projection of a point grid.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Projected x pixel coordinates.
    pub x: Grid,
    /// Projected y pixel coordinates.
    pub y: Grid,
    /// Camera-space z per point.
    pub depth: Grid,
    /// 0 where z ≤ [`NEAR_EPS`] (degenerate projection).
    pub valid: ValidityMask,
}

/// Projects camera-space points to pixel coordinates:
/// (x̂, ŷ) = (fx·x/z + cx, fy·y/z + cy). Points with z ≤ [`NEAR_EPS`] are
/// flagged invalid rather than erroring; their coordinates are computed with
/// z clamped to the epsilon.
pub fn project(pts: &PointGrid, k: &Intrinsics) -> Result<Projection> {
    if !pts.z.all_finite() {
        return Err(Error::InvalidInput(
            "point grid has non-finite z values".into(),
        ));
    }
    let (h, w) = (pts.height(), pts.width());
    let mut out = Projection {
        x: Grid::new(h, w, 0.0),
        y: Grid::new(h, w, 0.0),
        depth: Grid::new(h, w, 0.0),
        valid: ValidityMask::ones(h, w),
    };
    for py in 0..h {
        for px in 0..w {
            let [x, y, z] = pts.point(px, py);
            let zc = z.max(NEAR_EPS);
            out.x.set(px, py, k.fx * (x / zc) + k.cx);
            out.y.set(px, py, k.fy * (y / zc) + k.cy);
            out.depth.set(px, py, z);
            if z <= NEAR_EPS {
                out.valid.set(px, py, false);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = Pose6> {
        (
            -5.0..5.0f64,
            -5.0..5.0f64,
            -5.0..5.0f64,
            -3.0..3.0f64,
            -1.4..1.4f64,
            -3.0..3.0f64,
        )
            .prop_map(|(tx, ty, tz, rx, ry, rz)| Pose6::new(tx, ty, tz, rx, ry, rz))
    }

    #[test]
    fn zero_pose_is_exact_identity() {
        let m = pose_to_matrix(&Pose6::identity()).unwrap();
        assert_eq!(m, SE3Matrix::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_axis_to_y_axis() {
        let m = pose_to_matrix(&Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2))
            .unwrap();
        let p = m.transform_point([1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.0, epsilon = 1e-15);
        assert_eq!(m.translation(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_pose_rejected() {
        let p = Pose6::new(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(pose_to_matrix(&p).is_err());
    }

    // Oracle: compose the three elementary rotation matrices independently.
    fn elementary_rotation_product(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
        let rot_x = [
            [1.0, 0.0, 0.0],
            [0.0, rx.cos(), -rx.sin()],
            [0.0, rx.sin(), rx.cos()],
        ];
        let rot_y = [
            [ry.cos(), 0.0, ry.sin()],
            [0.0, 1.0, 0.0],
            [-ry.sin(), 0.0, ry.cos()],
        ];
        let rot_z = [
            [rz.cos(), -rz.sin(), 0.0],
            [rz.sin(), rz.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ];
        let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            out
        };
        mul(rot_z, mul(rot_y, rot_x))
    }

    proptest! {
        #[test]
        fn pose_matrix_matches_elementary_product(p in arb_pose()) {
            let m = pose_to_matrix(&p).unwrap();
            let oracle = elementary_rotation_product(p.rx, p.ry, p.rz);
            let r = m.rotation();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((r[i][j] - oracle[i][j]).abs() < 1e-12);
                }
            }
            prop_assert_eq!(m.translation(), [p.tx, p.ty, p.tz]);
        }

        // Oracle: general 4x4 inverse from nalgebra.
        #[test]
        fn invert_matches_general_inverse(p in arb_pose()) {
            let m = pose_to_matrix(&p).unwrap();
            let inv = invert(&m).unwrap();
            let na = nalgebra::Matrix4::from_fn(|i, j| m.m[i][j]);
            let na_inv = na.try_inverse().unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((inv.m[i][j] - na_inv[(i, j)]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn invert_left_inverse_within_1e9(p in arb_pose()) {
            let m = pose_to_matrix(&p).unwrap();
            let prod = invert(&m).unwrap().compose(&m);
            let id = SE3Matrix::identity();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((prod.m[i][j] - id.m[i][j]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn compose_then_transform_is_sequential(p1 in arb_pose(), p2 in arb_pose()) {
            let m1 = pose_to_matrix(&p1).unwrap();
            let m2 = pose_to_matrix(&p2).unwrap();
            let pt = [0.7, -1.3, 2.9];
            let a = m1.compose(&m2).transform_point(pt);
            let b = m1.transform_point(m2.transform_point(pt));
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn matrix_to_pose_round_trips(p in arb_pose()) {
            let m = pose_to_matrix(&p).unwrap();
            let q = matrix_to_pose(&m).unwrap();
            for (a, b) in p.as_array().iter().zip(q.as_array()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        // Matches nalgebra's extrinsic roll/pitch/yaw (same Rz·Ry·Rx order).
        #[test]
        fn rotation_matches_nalgebra_euler(p in arb_pose()) {
            let m = pose_to_matrix(&p).unwrap();
            let na = nalgebra::Rotation3::from_euler_angles(p.rx, p.ry, p.rz);
            let r = m.rotation();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((r[i][j] - na[(i, j)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invert_pure_translation() {
        let m = pose_to_matrix(&Pose6::translation(1.0, 2.0, 3.0)).unwrap();
        let inv = invert(&m).unwrap();
        assert_eq!(inv.translation(), [-1.0, -2.0, -3.0]);
        assert_eq!(inv.rotation(), SE3Matrix::identity().rotation());
    }

    #[test]
    fn invert_rejects_non_rigid() {
        let mut m = SE3Matrix::identity();
        m.m[0][0] = 2.0;
        assert!(matches!(invert(&m), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn backproject_principal_ray() {
        let k = Intrinsics::new(100.0, 100.0, 3.0, 2.0, 8, 6).unwrap();
        let d = DepthMap::new(Grid::new(6, 8, 5.0)).unwrap();
        let pts = backproject(&d, &k).unwrap();
        assert_eq!(pts.point(3, 2), [0.0, 0.0, 5.0]);
    }

    #[test]
    fn backproject_unit_focal_arithmetic() {
        // fx=fy=100, cx=cy=0, pixel (100,0), depth 2 -> (2, 0, 2)
        let k = Intrinsics::new(100.0, 100.0, 0.0, 0.0, 128, 4).unwrap();
        let d = DepthMap::new(Grid::new(4, 128, 2.0)).unwrap();
        let pts = backproject(&d, &k).unwrap();
        assert_eq!(pts.point(100, 0), [2.0, 0.0, 2.0]);
    }

    #[test]
    fn project_principal_point() {
        let k = Intrinsics::new(50.0, 60.0, 4.0, 3.0, 10, 8).unwrap();
        let pts = PointGrid {
            x: Grid::new(1, 1, 0.0),
            y: Grid::new(1, 1, 0.0),
            z: Grid::new(1, 1, 5.0),
        };
        let p = project(&pts, &k).unwrap();
        assert_eq!(p.x.get(0, 0), 4.0);
        assert_eq!(p.y.get(0, 0), 3.0);
        assert_eq!(p.depth.get(0, 0), 5.0);
        assert!(p.valid.is_valid(0, 0));
    }

    #[test]
    fn project_flags_degenerate_z() {
        let k = Intrinsics::new(50.0, 60.0, 4.0, 3.0, 10, 8).unwrap();
        let pts = PointGrid {
            x: Grid::new(1, 2, 1.0),
            y: Grid::new(1, 2, 1.0),
            z: Grid::from_vec(1, 2, vec![0.0, -2.0]),
        };
        let p = project(&pts, &k).unwrap();
        assert!(!p.valid.is_valid(0, 0));
        assert!(!p.valid.is_valid(1, 0));
    }

    proptest! {
        // Elementwise oracle for projection.
        #[test]
        fn project_matches_scalar_computation(
            xs in proptest::collection::vec(-4.0..4.0f64, 6),
            ys in proptest::collection::vec(-4.0..4.0f64, 6),
            zs in proptest::collection::vec(0.5..9.0f64, 6),
        ) {
            let k = Intrinsics::new(80.0, 70.0, 3.0, 2.5, 8, 6).unwrap();
            let pts = PointGrid {
                x: Grid::from_vec(2, 3, xs.clone()),
                y: Grid::from_vec(2, 3, ys.clone()),
                z: Grid::from_vec(2, 3, zs.clone()),
            };
            let p = project(&pts, &k).unwrap();
            for i in 0..6 {
                let (px, py) = (i % 3, i / 3);
                prop_assert!((p.x.get(px, py) - (k.fx * xs[i] / zs[i] + k.cx)).abs() < 1e-9);
                prop_assert!((p.y.get(px, py) - (k.fy * ys[i] / zs[i] + k.cy)).abs() < 1e-9);
            }
        }

        // Round-trip oracle: project(backproject(d)) returns the pixel grid.
        #[test]
        fn project_backproject_round_trip(seed_depths in proptest::collection::vec(0.5..20.0f64, 48)) {
            let k = Intrinsics::new(40.0, 44.0, 3.5, 2.5, 8, 6).unwrap();
            let d = DepthMap::new(Grid::from_vec(6, 8, seed_depths)).unwrap();
            let p = project(&backproject(&d, &k).unwrap(), &k).unwrap();
            for py in 0..6 {
                for px in 0..8 {
                    prop_assert!((p.x.get(px, py) - px as f64).abs() < 1e-6);
                    prop_assert!((p.y.get(px, py) - py as f64).abs() < 1e-6);
                    prop_assert!((p.depth.get(px, py) - d.get(px, py)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn intrinsics_key_value_round_trip() {
        let k = Intrinsics::new(64.0, 66.5, 31.5, 23.5, 64, 48).unwrap();
        let text = k.to_key_values();
        let back = Intrinsics::from_key_values(&text).unwrap();
        assert_eq!(k, back);
    }

    #[test]
    fn intrinsics_rejects_unknown_key() {
        assert!(matches!(
            Intrinsics::from_key_values("fx=1\nfy=1\ncx=0\ncy=0\nwidth=2\nheight=2\nskew=0\n"),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    }
}
