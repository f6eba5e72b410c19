//! Differentiable inverse warping: reconstructs a target frame by sampling a
//! source frame at coordinates obtained from the target depth and a relative
//! motion, per (x̂, ŷ, 1)ᵀ = K·E·(D(x,y)·K⁻¹·(x,y,1)ᵀ).
//!
//! Two fronts share the same arithmetic: a pure evaluation path
//! ([`inverse_warp`]) and a tape path ([`warp_on_tape`]) whose forward values
//! are bit-identical to the pure path. Out-of-bounds samples are
//! clamp-to-edge for values but excluded from losses via the validity mask.

use crate::autodiff::{sample_cell, snap_coord, NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::{pose_to_matrix, Intrinsics, Pose6, SE3Matrix, NEAR_EPS};
use crate::grid::{DepthMap, Grid, ImageField, ValidityMask};

/// Inverse-warp output: the reconstructed image, the per-pixel validity, and
/// the sampling coordinates. Entries with validity 0 hold a defined (clamped)
/// sample but must be excluded from losses.
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub image: ImageField,
    pub validity: ValidityMask,
    pub coords_x: Grid,
    pub coords_y: Grid,
}

/// Bilinear interpolation of all channels at (x, y), clamped to the image
/// rectangle; the flag reports whether (x, y) lies within
/// [0, W−1]×[0, H−1].
pub fn bilinear_sample(img: &ImageField, x: f64, y: f64) -> (Vec<f64>, bool) {
    let cell = sample_cell(img.width(), img.height(), x, y);
    let values = img.planes().iter().map(|p| cell.interpolate(p)).collect();
    (values, cell.in_x && cell.in_y)
}

/// Warp coordinates for one pixel under a rigid transform, shared by the pure
/// and tape paths. Returns (x̂, ŷ, z′).
#[inline]
fn warp_coord(m: &SE3Matrix, k: &Intrinsics, u: f64, v: f64, d: f64) -> (f64, f64, f64) {
    let px = d * u;
    let py = d * v;
    let pz = d;
    let r = &m.m;
    // Same association order as the tape builder so values stay bit-equal.
    let tx = ((r[0][0] * px + r[0][1] * py) + r[0][2] * pz) + r[0][3];
    let ty = ((r[1][0] * px + r[1][1] * py) + r[1][2] * pz) + r[1][3];
    let tz = ((r[2][0] * px + r[2][1] * py) + r[2][2] * pz) + r[2][3];
    let zc = tz.max(NEAR_EPS);
    let xh = (tx / zc) * k.fx + k.cx;
    let yh = (ty / zc) * k.fy + k.cy;
    (xh, yh, tz)
}

fn check_shapes(src: &ImageField, depth: &Grid, k: &Intrinsics) -> Result<()> {
    if src.width() != k.width || src.height() != k.height {
        return Err(Error::ContractViolation(format!(
            "source image {}x{} does not match intrinsics {}x{}",
            src.width(),
            src.height(),
            k.width,
            k.height
        )));
    }
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Error::ContractViolation(format!(
            "target depth {}x{} does not match intrinsics {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    Ok(())
}

/// Inverse-warps `src` toward the frame of `target_depth` under an explicit
/// rigid transform matrix.
pub fn warp_with_matrix(
    src: &ImageField,
    target_depth: &DepthMap,
    m: &SE3Matrix,
    k: &Intrinsics,
) -> Result<WarpResult> {
    check_shapes(src, target_depth.grid(), k)?;
    let (h, w) = (k.height, k.width);
    let mut xs = Grid::new(h, w, 0.0);
    let mut ys = Grid::new(h, w, 0.0);
    let mut validity = ValidityMask::ones(h, w);
    let mut planes: Vec<Grid> = (0..src.channels()).map(|_| Grid::new(h, w, 0.0)).collect();
    for y in 0..h {
        let v = (y as f64 - k.cy) / k.fy;
        for x in 0..w {
            let u = (x as f64 - k.cx) / k.fx;
            let d = target_depth.get(x, y);
            let (xh, yh, tz) = warp_coord(m, k, u, v, d);
            xs.set(x, y, xh);
            ys.set(x, y, yh);
            let cell = sample_cell(w, h, xh, yh);
            let ok = tz > NEAR_EPS && cell.in_x && cell.in_y;
            validity.set(x, y, ok);
            for (plane, out) in src.planes().iter().zip(planes.iter_mut()) {
                out.set(x, y, cell.interpolate(plane));
            }
        }
    }
    Ok(WarpResult {
        image: ImageField::new(planes)?,
        validity,
        coords_x: xs,
        coords_y: ys,
    })
}

/// The warping operator: reconstructs the target frame from `src` given the
/// target depth and the relative motion as a Pose6.
pub fn inverse_warp(
    src: &ImageField,
    target_depth: &DepthMap,
    motion: &Pose6,
    k: &Intrinsics,
) -> Result<WarpResult> {
    let m = pose_to_matrix(motion)?;
    warp_with_matrix(src, target_depth, &m, k)
}

/// A 3×4 rigid transform as scalar tape nodes (rotation block + translation).
#[derive(Debug, Clone, Copy)]
pub struct MatNodes {
    pub r: [[NodeId; 3]; 3],
    pub t: [NodeId; 3],
}

/// Builds the rotation Rz·Ry·Rx and translation of a pose vector node
/// (shape [6]: tx ty tz rx ry rz) as scalar tape expressions.
pub fn pose_matrix_on_tape(tape: &mut Tape, pose: NodeId) -> MatNodes {
    let tx = tape.index(pose, 0);
    let ty = tape.index(pose, 1);
    let tz = tape.index(pose, 2);
    let rx = tape.index(pose, 3);
    let ry = tape.index(pose, 4);
    let rz = tape.index(pose, 5);
    let sx = tape.sin(rx);
    let cx = tape.cos(rx);
    let sy = tape.sin(ry);
    let cy = tape.cos(ry);
    let sz = tape.sin(rz);
    let cz = tape.cos(rz);

    let cz_cy = tape.mul(cz, cy);
    let sz_cy = tape.mul(sz, cy);
    let cz_sy = tape.mul(cz, sy);
    let sz_sy = tape.mul(sz, sy);

    // r01 = cz·sy·sx − sz·cx, r02 = cz·sy·cx + sz·sx
    let cz_sy_sx = tape.mul(cz_sy, sx);
    let sz_cx = tape.mul(sz, cx);
    let r01 = tape.sub(cz_sy_sx, sz_cx);
    let cz_sy_cx = tape.mul(cz_sy, cx);
    let sz_sx = tape.mul(sz, sx);
    let r02 = tape.add(cz_sy_cx, sz_sx);

    // r11 = sz·sy·sx + cz·cx, r12 = sz·sy·cx − cz·sx
    let sz_sy_sx = tape.mul(sz_sy, sx);
    let cz_cx = tape.mul(cz, cx);
    let r11 = tape.add(sz_sy_sx, cz_cx);
    let sz_sy_cx = tape.mul(sz_sy, cx);
    let cz_sx = tape.mul(cz, sx);
    let r12 = tape.sub(sz_sy_cx, cz_sx);

    let r20 = tape.neg(sy);
    let r21 = tape.mul(cy, sx);
    let r22 = tape.mul(cy, cx);

    MatNodes {
        r: [[cz_cy, r01, r02], [sz_cy, r11, r12], [r20, r21, r22]],
        t: [tx, ty, tz],
    }
}

/// Constant transform lifted onto the tape (no gradient flows into it).
pub fn const_matrix_on_tape(tape: &mut Tape, m: &SE3Matrix) -> MatNodes {
    let s = |tape: &mut Tape, v: f64| tape.constant_scalar(v);
    let r = [
        [
            s(tape, m.m[0][0]),
            s(tape, m.m[0][1]),
            s(tape, m.m[0][2]),
        ],
        [
            s(tape, m.m[1][0]),
            s(tape, m.m[1][1]),
            s(tape, m.m[1][2]),
        ],
        [
            s(tape, m.m[2][0]),
            s(tape, m.m[2][1]),
            s(tape, m.m[2][2]),
        ],
    ];
    let t = [
        s(tape, m.m[0][3]),
        s(tape, m.m[1][3]),
        s(tape, m.m[2][3]),
    ];
    MatNodes { r, t }
}

/// Rigid-transform composition a·b on tape nodes (apply `b` first).
pub fn compose_on_tape(tape: &mut Tape, a: &MatNodes, b: &MatNodes) -> MatNodes {
    let mut r = [[a.r[0][0]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let p0 = tape.mul(a.r[i][0], b.r[0][j]);
            let p1 = tape.mul(a.r[i][1], b.r[1][j]);
            let p2 = tape.mul(a.r[i][2], b.r[2][j]);
            let s01 = tape.add(p0, p1);
            r[i][j] = tape.add(s01, p2);
        }
    }
    let mut t = [a.t[0]; 3];
    for i in 0..3 {
        let p0 = tape.mul(a.r[i][0], b.t[0]);
        let p1 = tape.mul(a.r[i][1], b.t[1]);
        let p2 = tape.mul(a.r[i][2], b.t[2]);
        let s01 = tape.add(p0, p1);
        let s012 = tape.add(s01, p2);
        t[i] = tape.add(s012, a.t[i]);
    }
    MatNodes { r, t }
}

/// Tape-side warp output. Validity is derived from forward values and enters
/// losses as a constant (non-differentiated) mask.
#[derive(Debug, Clone)]
pub struct TapeWarp {
    pub channels: Vec<NodeId>,
    pub xs: NodeId,
    pub ys: NodeId,
    pub validity: ValidityMask,
}

/// Differentiable inverse warp: samples the constant source image at
/// coordinates computed from the depth node and transform nodes. Gradients
/// flow into the depth and the transform through the sampling coordinates.
pub fn warp_on_tape(
    tape: &mut Tape,
    src: &ImageField,
    depth: NodeId,
    m: &MatNodes,
    k: &Intrinsics,
) -> TapeWarp {
    let shape = tape.value(depth).shape().to_vec();
    assert_eq!(shape.len(), 2, "depth node must be H×W");
    let (h, w) = (shape[0], shape[1]);
    assert_eq!((k.height, k.width), (h, w), "intrinsics mismatch");
    assert_eq!((src.height(), src.width()), (h, w), "source shape mismatch");

    let ugrid = Grid::from_fn(h, w, |x, _| (x as f64 - k.cx) / k.fx);
    let vgrid = Grid::from_fn(h, w, |_, y| (y as f64 - k.cy) / k.fy);
    let un = tape.constant_grid(&ugrid);
    let vn = tape.constant_grid(&vgrid);

    let px = tape.mul(depth, un);
    let py = tape.mul(depth, vn);
    let pz = depth;

    let affine = |tape: &mut Tape, row: usize| -> NodeId {
        let a = tape.mul(px, m.r[row][0]);
        let b = tape.mul(py, m.r[row][1]);
        let c = tape.mul(pz, m.r[row][2]);
        let ab = tape.add(a, b);
        let abc = tape.add(ab, c);
        tape.add(abc, m.t[row])
    };
    let tx = affine(tape, 0);
    let ty = affine(tape, 1);
    let tz = affine(tape, 2);

    let zc = tape.clamp_min(tz, NEAR_EPS);
    let rx = tape.div(tx, zc);
    let ry = tape.div(ty, zc);
    let fx_rx = tape.muls(rx, k.fx);
    let xs = tape.adds(fx_rx, k.cx);
    let fy_ry = tape.muls(ry, k.fy);
    let ys = tape.adds(fy_ry, k.cy);

    let xs_v = tape.value(xs).to_grid();
    let ys_v = tape.value(ys).to_grid();
    let tz_v = tape.value(tz).to_grid();
    let mut validity = ValidityMask::ones(h, w);
    for y in 0..h {
        for x in 0..w {
            let sx = snap_coord(xs_v.get(x, y));
            let sy = snap_coord(ys_v.get(x, y));
            let ok = tz_v.get(x, y) > NEAR_EPS
                && (0.0..=(w - 1) as f64).contains(&sx)
                && (0.0..=(h - 1) as f64).contains(&sy);
            validity.set(x, y, ok);
        }
    }

    let channels = src
        .planes()
        .iter()
        .map(|p| {
            let img = tape.constant_grid(p);
            tape.sample(img, xs, ys)
        })
        .collect();

    TapeWarp {
        channels,
        xs,
        ys,
        validity,
    }
}
