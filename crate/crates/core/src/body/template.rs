use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Gender, MeshTopology, Region, TemplateMesh};
use crate::skeleton::{rest_directions, Frame, JointId, Pose3D, NUM_BONES};

/// Texture atlas edge length in texels.
pub const ATLAS_SIZE: u32 = 256;

/// Half-height of the waist overlap band (meters, rest template).
pub const WAIST_BAND: f64 = 0.03;

const ANKLE_HEIGHT: f64 = 0.085;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Torso,
    Head,
    UpperArm,
    Forearm,
    Hand,
    Thigh,
    Shin,
    Foot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Center,
    Left,
    Right,
}

/// One tube of the template and its atlas rectangle.
///
/// Texel column `i` of a `w`-wide rectangle samples the ring angle
/// `φ = 2π(i + 0.5)/w`, measured from the segment's forward direction;
/// row `j` samples the axial parameter `t = (j + 0.5)/h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub side: Side,
    /// `[x0, y0, w, h]` in texels.
    pub rect: [u32; 4],
    pub vertex_range: Range<u32>,
    /// Axial parameter of the waist seam (torso only).
    pub t_seam: Option<f64>,
    /// Index of the left/right counterpart (itself for central segments).
    pub partner: usize,
}

impl Segment {
    /// Region of a texel row.
    pub fn region_at(&self, t: f64) -> Region {
        match self.kind {
            SegmentKind::Torso => {
                if t >= self.t_seam.unwrap_or(0.0) {
                    Region::UpperCloth
                } else {
                    Region::LowerCloth
                }
            }
            SegmentKind::Head => Region::Head,
            SegmentKind::UpperArm | SegmentKind::Forearm => Region::UpperCloth,
            SegmentKind::Hand => Region::Hands,
            SegmentKind::Thigh | SegmentKind::Shin => Region::LowerCloth,
            SegmentKind::Foot => Region::Feet,
        }
    }

    pub fn contains_texel(&self, x: u32, y: u32) -> bool {
        let [x0, y0, w, h] = self.rect;
        (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y)
    }
}

struct Proportions {
    lengths: [f64; NUM_BONES],
    /// (axial fraction of spine, depth, width) keyframes for the torso.
    torso: &'static [(f64, f64, f64)],
    head_radius: f64,
    arm: [f64; 3],
    thigh: [f64; 2],
    shin: [f64; 2],
    hand: [f64; 3],
    foot: [f64; 3],
}

fn proportions(gender: Gender) -> Proportions {
    match gender {
        Gender::Male => Proportions {
            lengths: [0.52, 0.24, 0.19, 0.30, 0.27, 0.19, 0.30, 0.27, 0.10, 0.46, 0.44, 0.10, 0.46, 0.44],
            torso: &[
                (-0.20, 0.06, 0.08),
                (-0.15, 0.10, 0.15),
                (0.00, 0.115, 0.175),
                (0.25, 0.105, 0.155),
                (0.45, 0.11, 0.15),
                (0.70, 0.125, 0.18),
                (0.88, 0.115, 0.20),
                (0.96, 0.08, 0.15),
                (1.02, 0.055, 0.06),
                (1.14, 0.05, 0.055),
            ],
            head_radius: 0.115,
            arm: [0.055, 0.044, 0.034],
            thigh: [0.085, 0.058],
            shin: [0.058, 0.04],
            hand: [0.18, 0.045, 0.02],
            foot: [0.25, 0.04, 0.045],
        },
        Gender::Female => Proportions {
            lengths: [0.48, 0.22, 0.16, 0.27, 0.24, 0.16, 0.27, 0.24, 0.11, 0.43, 0.41, 0.11, 0.43, 0.41],
            torso: &[
                (-0.22, 0.06, 0.09),
                (-0.16, 0.11, 0.17),
                (0.00, 0.12, 0.19),
                (0.30, 0.095, 0.135),
                (0.50, 0.10, 0.14),
                (0.68, 0.125, 0.155),
                (0.88, 0.10, 0.17),
                (0.96, 0.07, 0.13),
                (1.03, 0.048, 0.052),
                (1.15, 0.045, 0.05),
            ],
            head_radius: 0.105,
            arm: [0.046, 0.037, 0.028],
            thigh: [0.092, 0.055],
            shin: [0.055, 0.037],
            hand: [0.16, 0.04, 0.018],
            foot: [0.23, 0.036, 0.04],
        },
    }
}

/// Piecewise-linear interpolation over sorted keyframes.
fn keyframe(keys: &[(f64, f64, f64)], x: f64) -> (f64, f64) {
    if x <= keys[0].0 {
        return (keys[0].1, keys[0].2);
    }
    for w in keys.windows(2) {
        if x <= w[1].0 {
            let s = (x - w[0].0) / (w[1].0 - w[0].0);
            return (w[0].1 + s * (w[1].1 - w[0].1), w[0].2 + s * (w[1].2 - w[0].2));
        }
    }
    let last = keys[keys.len() - 1];
    (last.1, last.2)
}

/// Rounds the ends of a tube: 1 in the middle, `floor` at `t = 0, 1`.
fn rounded(t: f64, floor: f64) -> f64 {
    let e = 2.0 * t - 1.0;
    (1.0 - e.powi(4)).max(0.0).sqrt().max(floor)
}

struct TubeSpec<'a> {
    kind: SegmentKind,
    side: Side,
    rect: [u32; 4],
    start: Vector3<f64>,
    axis: Vector3<f64>,
    forward: Vector3<f64>,
    rings: usize,
    ring_verts: usize,
    /// `t ↦ (axial distance, forward radius, lateral radius)`.
    profile: &'a dyn Fn(f64) -> (f64, f64, f64),
    weights: &'a dyn Fn(f64) -> Vec<(u8, f64)>,
    t_seam: Option<f64>,
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Vector3<f64>>,
    uvs: Vec<[f64; 2]>,
    regions: Vec<Region>,
    weights: Vec<Vec<(u8, f64)>>,
    weld: Vec<u32>,
    triangles: Vec<[u32; 3]>,
    segments: Vec<Segment>,
}

impl Builder {
    fn push(&mut self, p: Vector3<f64>, uv: [f64; 2], region: Region, w: Vec<(u8, f64)>, weld: Option<u32>) -> u32 {
        let i = self.vertices.len() as u32;
        self.vertices.push(p);
        self.uvs.push(uv);
        self.regions.push(region);
        self.weights.push(w);
        self.weld.push(weld.unwrap_or(i));
        i
    }

    fn tube(&mut self, spec: TubeSpec<'_>) {
        let begin = self.vertices.len() as u32;
        let u = spec.axis.normalize();
        let e1 = (spec.forward - u * spec.forward.dot(&u)).normalize();
        let e2 = u.cross(&e1);
        let [x0, y0, w, h] = spec.rect;
        let size = ATLAS_SIZE as f64;
        let r = spec.ring_verts;
        let mut segment = Segment {
            kind: spec.kind,
            side: spec.side,
            rect: spec.rect,
            vertex_range: 0..0,
            t_seam: spec.t_seam,
            partner: self.segments.len(),
        };
        let ring_start = |i: usize| begin + (i * (r + 1)) as u32;
        for i in 0..spec.rings {
            let t = i as f64 / (spec.rings - 1) as f64;
            let (s, r1, r2) = (spec.profile)(t);
            let region = segment.region_at(t);
            let ws = (spec.weights)(t);
            let first = self.vertices.len() as u32;
            for j in 0..=r {
                let phi = 2.0 * PI * j as f64 / r as f64;
                let p = spec.start + u * s + e1 * (r1 * phi.cos()) + e2 * (r2 * phi.sin());
                let uv = [(x0 as f64 + phi / (2.0 * PI) * w as f64) / size, (y0 as f64 + t * h as f64) / size];
                self.push(p, uv, region, ws.clone(), (j == r).then_some(first));
            }
        }
        for i in 0..spec.rings - 1 {
            for j in 0..r as u32 {
                let a = ring_start(i) + j;
                let b = a + 1;
                let d = ring_start(i + 1) + j;
                let c = d + 1;
                self.triangles.push([a, b, c]);
                self.triangles.push([a, c, d]);
            }
        }
        for (end, t) in [(0usize, 0.0f64), (spec.rings - 1, 1.0)] {
            let (s, _, _) = (spec.profile)(t);
            let uv = [(x0 as f64 + w as f64 / 2.0) / size, (y0 as f64 + t * h as f64) / size];
            let c = self.push(spec.start + u * s, uv, segment.region_at(t), (spec.weights)(t), None);
            for j in 0..r as u32 {
                let a = ring_start(end) + j;
                let b = ring_start(end) + (j + 1) % r as u32;
                self.triangles.push(if end == 0 { [c, b, a] } else { [c, a, b] });
            }
        }
        segment.vertex_range = begin..self.vertices.len() as u32;
        self.segments.push(segment);
    }
}

fn blend(bone: usize, parent: usize, t: f64, width: f64) -> Vec<(u8, f64)> {
    if t >= width {
        return vec![(bone as u8, 1.0)];
    }
    let wp = 0.5 * (1.0 - t / width);
    vec![(bone as u8, 1.0 - wp), (parent as u8, wp)]
}

pub(super) fn build(gender: Gender) -> TemplateMesh {
    let p = proportions(gender);
    let l = p.lengths;
    let pelvis_y = ANKLE_HEIGHT + l[10] + l[9];
    let rest = Pose3D::from_bones(Vector3::new(0.0, pelvis_y, 0.0), &rest_directions(), &l, Frame::Body);
    let j = |id: JointId| rest.joint(id);
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let mut b = Builder::default();

    let spine = l[0];
    let torso_lo = p.torso[0].0;
    let torso_hi = p.torso[p.torso.len() - 1].0;
    let torso_len = (torso_hi - torso_lo) * spine;
    let seam_frac = 0.2;
    let t_seam = (seam_frac - torso_lo) / (torso_hi - torso_lo);
    let torso_profile = |t: f64| {
        let f = torso_lo + t * (torso_hi - torso_lo);
        let (d, w) = keyframe(p.torso, f);
        (t * torso_len, d, w)
    };
    b.tube(TubeSpec {
        kind: SegmentKind::Torso,
        side: Side::Center,
        rect: [0, 0, 128, 128],
        start: j(JointId::Pelvis) + y * (torso_lo * spine),
        axis: y,
        forward: z,
        rings: 40,
        ring_verts: 32,
        profile: &torso_profile,
        weights: &|_| vec![(0, 1.0)],
        t_seam: Some(t_seam),
    });

    let hr = p.head_radius;
    let head_center = j(JointId::Neck) + y * (0.65 * l[1]);
    let head_profile = |t: f64| {
        let theta = PI * (0.03 + 0.94 * t);
        (hr * (1.0 - theta.cos()), hr * theta.sin(), hr * 0.9 * theta.sin())
    };
    // Forward points backwards so the face sits in the middle of the rectangle.
    b.tube(TubeSpec {
        kind: SegmentKind::Head,
        side: Side::Center,
        rect: [128, 0, 64, 64],
        start: head_center - y * hr,
        axis: y,
        forward: -z,
        rings: 16,
        ring_verts: 24,
        profile: &head_profile,
        weights: &|_| vec![(1, 1.0)],
        t_seam: None,
    });

    for (side, s, col) in [(Side::Left, 1.0, 0u32), (Side::Right, -1.0, 1u32)] {
        let (clav, upper, fore) = if side == Side::Left { (2, 3, 4) } else { (5, 6, 7) };
        let (shoulder, elbow, wrist) = match side {
            Side::Left => (JointId::LShoulder, JointId::LElbow, JointId::LWrist),
            _ => (JointId::RShoulder, JointId::RElbow, JointId::RWrist),
        };
        let dir = x * s;
        let [r0, r1, r2] = p.arm;
        let ua_len = l[upper] + 0.06;
        b.tube(TubeSpec {
            kind: SegmentKind::UpperArm,
            side,
            rect: [128 + 64 * col, 64, 64, 64],
            start: j(shoulder) - dir * 0.04,
            axis: dir,
            forward: z,
            rings: 14,
            ring_verts: 24,
            profile: &|t| {
                let r = (r0 + (r1 - r0) * t) * rounded(t, 0.85);
                (t * ua_len, r, r)
            },
            weights: &|t| blend(upper, clav, t, 0.15),
            t_seam: None,
        });
        let fa_len = l[fore] + 0.03;
        b.tube(TubeSpec {
            kind: SegmentKind::Forearm,
            side,
            rect: [64 * col, 128, 64, 64],
            start: j(elbow) - dir * 0.02,
            axis: dir,
            forward: z,
            rings: 14,
            ring_verts: 24,
            profile: &|t| {
                let r = (r1 + (r2 - r1) * t) * rounded(t, 0.85);
                (t * fa_len, r, r)
            },
            weights: &|t| blend(fore, upper, t, 0.15),
            t_seam: None,
        });
        let [hl, hw, hd] = p.hand;
        b.tube(TubeSpec {
            kind: SegmentKind::Hand,
            side,
            rect: [192 + 32 * col, 0, 32, 32],
            start: j(wrist) - dir * 0.01,
            axis: dir,
            forward: z,
            rings: 8,
            ring_verts: 16,
            profile: &|t| {
                let k = rounded(t, 0.4);
                (t * hl, hw * k, hd * k)
            },
            weights: &|_| vec![(fore as u8, 1.0)],
            t_seam: None,
        });
    }

    for (side, s, col) in [(Side::Left, 1.0, 0u32), (Side::Right, -1.0, 1u32)] {
        let (hipb, thigh, shin) = if side == Side::Left { (8, 9, 10) } else { (11, 12, 13) };
        let (hip, knee, ankle) = match side {
            Side::Left => (JointId::LHip, JointId::LKnee, JointId::LAnkle),
            _ => (JointId::RHip, JointId::RKnee, JointId::RAnkle),
        };
        let [t0, t1] = p.thigh;
        let th_len = l[thigh] + 0.08;
        b.tube(TubeSpec {
            kind: SegmentKind::Thigh,
            side,
            rect: [128 + 64 * col, 128, 64, 64],
            start: j(hip) + y * 0.06 - x * (s * 0.01),
            axis: -y,
            forward: z,
            rings: 18,
            ring_verts: 24,
            profile: &|t| {
                let r = (t0 + (t1 - t0) * t) * rounded(t, 0.85);
                (t * th_len, r, r)
            },
            weights: &|t| blend(thigh, hipb, t, 0.2),
            t_seam: None,
        });
        let [s0, s1] = p.shin;
        let sh_len = l[shin] + 0.03;
        b.tube(TubeSpec {
            kind: SegmentKind::Shin,
            side,
            rect: [64 * col, 192, 64, 64],
            start: j(knee) + y * 0.03,
            axis: -y,
            forward: z,
            rings: 18,
            ring_verts: 24,
            profile: &|t| {
                let r = (s0 + (s1 - s0) * t) * rounded(t, 0.85);
                (t * sh_len, r, r)
            },
            weights: &|t| blend(shin, thigh, t, 0.15),
            t_seam: None,
        });
        let [fl, fh, fw] = p.foot;
        b.tube(TubeSpec {
            kind: SegmentKind::Foot,
            side,
            rect: [192 + 32 * col, 32, 32, 32],
            start: j(ankle) - y * 0.045 - z * 0.05,
            axis: z,
            forward: y,
            rings: 8,
            ring_verts: 16,
            profile: &|t| {
                let k = rounded(t, 0.45);
                (t * fl, fh * k, fw * k)
            },
            weights: &|_| vec![(shin as u8, 1.0)],
            t_seam: None,
        });
    }

    // Pair left/right segments.
    let n = b.segments.len();
    for i in 0..n {
        if b.segments[i].side == Side::Center {
            continue;
        }
        let kind = b.segments[i].kind;
        let side = b.segments[i].side;
        b.segments[i].partner =
            (0..n).find(|&k| b.segments[k].kind == kind && b.segments[k].side != side).expect("paired segment");
    }

    let seam_y = j(JointId::Pelvis).y + seam_frac * spine;
    let torso_range = b.segments[0].vertex_range.clone();
    let waist_band: BTreeSet<u32> =
        torso_range.filter(|&i| (b.vertices[i as usize].y - seam_y).abs() <= WAIST_BAND).collect();

    let topology = MeshTopology {
        triangles: b.triangles,
        uvs: b.uvs,
        regions: b.regions,
        weights: b.weights,
        weld: b.weld,
        segments: b.segments,
        waist_band,
    };
    TemplateMesh { gender, topology: Arc::new(topology), vertices: b.vertices, rest_pose: rest }
}
