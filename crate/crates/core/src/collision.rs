//! Safety regions, over-approximated bounding boxes and their overlap area.
//!
//! All boxes live in the ego agent's body frame (x forward, y left). The
//! functions are generic over [`Scalar`] so the optimizer can run them on
//! dual numbers; with `f64` they are the plain formulas.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentGeometry {
    pub length: f64,
    pub width: f64,
}

impl AgentGeometry {
    pub const fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }
}

/// Motion-independent distances plus the time gaps that inflate them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub d_front: f64,
    pub d_rear: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub t_gap_x: f64,
    pub t_gap_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x_g: f64,
    pub y_g: f64,
    pub psi: f64,
    pub v: f64,
}

impl Pose2D {
    pub const fn new(x_g: f64, y_g: f64, psi: f64, v: f64) -> Self {
        Self { x_g, y_g, psi, v }
    }
}

/// Axis-aligned box given by its lower-left and upper-right corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D<S = f64> {
    pub lower: [S; 2],
    pub upper: [S; 2],
}

/// Safety distances `(front, rear, left, right)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyDistances<S = f64> {
    pub front: S,
    pub rear: S,
    pub left: S,
    pub right: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap<S = f64> {
    pub area: S,
    pub length: S,
    pub width: S,
}

/// Direction of motion of agent `l` expressed in agent `i`'s body frame.
pub fn heading_unit_vector<S: Scalar>(psi_i: S, psi_l: S) -> [S; 2] {
    let d = psi_l - psi_i;
    [d.cos(), d.sin()]
}

pub fn safety_distances<S: Scalar>(v_i: S, v_l: S, n_psi: [S; 2], p: &SafetyParams) -> SafetyDistances<S> {
    let c = S::cst;
    let long = v_i * c(p.t_gap_x);
    let lat = v_l * c(p.t_gap_y);
    SafetyDistances {
        front: c(p.d_front) + long,
        rear: c(p.d_rear) + long * n_psi[0].pos(),
        left: c(p.d_left) + lat * (-n_psi[1]).pos(),
        right: c(p.d_right) + lat * n_psi[1].pos(),
    }
}

pub fn safety_region_corners<S: Scalar>(geom: &AgentGeometry, d: &SafetyDistances<S>) -> Box2D<S> {
    let hl = S::cst(0.5 * geom.length);
    let hw = S::cst(0.5 * geom.width);
    Box2D {
        lower: [-hl - d.rear, -hw - d.right],
        upper: [hl + d.front, hw + d.left],
    }
}

/// Axis-aligned hull, in agent `i`'s body frame, of agent `l`'s footprint.
///
/// `i_pose` supplies the ego position and heading; `l_xy`/`l_psi` the other
/// agent's. Exact when the headings differ by a multiple of π/2.
pub fn overapprox_bounding_box<S: Scalar>(
    l_xy: [S; 2],
    l_psi: S,
    geom_l: &AgentGeometry,
    i_xy: [S; 2],
    i_psi: S,
) -> Box2D<S> {
    let (ci, si) = (i_psi.cos(), i_psi.sin());
    let (cl, sl) = (l_psi.cos(), l_psi.sin());
    let dx = l_xy[0] - i_xy[0];
    let dy = l_xy[1] - i_xy[1];
    // centre of l in i's frame
    let cx = ci * dx + si * dy;
    let cy = -si * dx + ci * dy;
    // l's body axes in i's frame: R(-psi_i) R(psi_l)
    let ux = [ci * cl + si * sl, -si * cl + ci * sl];
    let uy = [-(ci * sl) + si * cl, si * sl + ci * cl];
    let hl = S::cst(0.5 * geom_l.length);
    let hw = S::cst(0.5 * geom_l.width);

    let mut lower = [cx, cy];
    let mut upper = [cx, cy];
    let mut first = true;
    for (a, b) in [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)] {
        let px = cx + a * ux[0] + b * uy[0];
        let py = cy + a * ux[1] + b * uy[1];
        if first {
            lower = [px, py];
            upper = [px, py];
            first = false;
        } else {
            lower = [lower[0].min(px), lower[1].min(py)];
            upper = [upper[0].max(px), upper[1].max(py)];
        }
    }
    Box2D { lower, upper }
}

/// Convenience wrapper over [`overapprox_bounding_box`] for plain poses.
pub fn overapprox_box_of(pose_l: &Pose2D, geom_l: &AgentGeometry, pose_i: &Pose2D) -> Box2D {
    overapprox_bounding_box(
        [pose_l.x_g, pose_l.y_g],
        pose_l.psi,
        geom_l,
        [pose_i.x_g, pose_i.y_g],
        pose_i.psi,
    )
}

pub fn overlap_area<S: Scalar>(region_i: &Box2D<S>, box_l: &Box2D<S>) -> Overlap<S> {
    let length = region_i.upper[0].min(box_l.upper[0]) - region_i.lower[0].max(box_l.lower[0]);
    let width = region_i.upper[1].min(box_l.upper[1]) - region_i.lower[1].max(box_l.lower[1]);
    Overlap {
        area: length.pos() * width.pos(),
        length,
        width,
    }
}

/// Overlap of agent `i`'s safety region with agent `l`'s bounding box,
/// evaluated from the two poses.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_overlap<S: Scalar>(
    i_xy: [S; 2],
    i_psi: S,
    i_v: S,
    geom_i: &AgentGeometry,
    safety_i: &SafetyParams,
    l_xy: [S; 2],
    l_psi: S,
    l_v: S,
    geom_l: &AgentGeometry,
) -> Overlap<S> {
    let n_psi = heading_unit_vector(i_psi, l_psi);
    let d = safety_distances(i_v, l_v, n_psi, safety_i);
    let region = safety_region_corners(geom_i, &d);
    let bbox = overapprox_bounding_box(l_xy, l_psi, geom_l, i_xy, i_psi);
    overlap_area(&region, &bbox)
}

/// Plain-pose form of [`pairwise_overlap`].
pub fn pose_overlap(
    pose_i: &Pose2D,
    geom_i: &AgentGeometry,
    safety_i: &SafetyParams,
    pose_l: &Pose2D,
    geom_l: &AgentGeometry,
) -> Overlap {
    pairwise_overlap(
        [pose_i.x_g, pose_i.y_g],
        pose_i.psi,
        pose_i.v,
        geom_i,
        safety_i,
        [pose_l.x_g, pose_l.y_g],
        pose_l.psi,
        pose_l.v,
        geom_l,
    )
}

/// Signed separation between two axis-aligned boxes: Euclidean gap when
/// disjoint, minus the penetration depth when they overlap.
pub fn box_separation(a: &Box2D, b: &Box2D) -> f64 {
    let gx = (b.lower[0] - a.upper[0]).max(a.lower[0] - b.upper[0]);
    let gy = (b.lower[1] - a.upper[1]).max(a.lower[1] - b.upper[1]);
    if gx > 0.0 || gy > 0.0 {
        gx.max(0.0).hypot(gy.max(0.0))
    } else {
        gx.max(gy)
    }
}

/// Corners of a rotated rectangle footprint in the global frame,
/// counter-clockwise.
pub fn footprint_corners(pose: &Pose2D, geom: &AgentGeometry) -> [[f64; 2]; 4] {
    let (c, s) = (pose.psi.cos(), pose.psi.sin());
    let hl = 0.5 * geom.length;
    let hw = 0.5 * geom.width;
    [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].map(|(a, b)| {
        [pose.x_g + a * c - b * s, pose.y_g + a * s + b * c]
    })
}

/// Exact intersection area of two convex polygons given counter-clockwise
/// (Sutherland–Hodgman clipping followed by the shoelace formula).
pub fn convex_intersection_area(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> f64 {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[e];
        let b = clip[(e + 1) % m];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let n = input.len();
        for k in 0..n {
            let cur = input[k];
            let prev = input[(k + n - 1) % n];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    polygon_area(&output)
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Exact overlap of two physical footprints (no safety margins).
pub fn footprint_overlap(pose_a: &Pose2D, geom_a: &AgentGeometry, pose_b: &Pose2D, geom_b: &AgentGeometry) -> f64 {
    convex_intersection_area(&footprint_corners(pose_a, geom_a), &footprint_corners(pose_b, geom_b))
}
