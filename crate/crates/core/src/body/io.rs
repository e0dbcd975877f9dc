//! Wavefront OBJ geometry plus a JSON sidecar with rig data.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{ArticulatedMesh, BodyError, Gender, MeshTopology, Region, Segment, TemplateMesh};
use crate::skeleton::{Pose3D, PoseRecord, NUM_BONES};

#[derive(Serialize, Deserialize)]
struct Sidecar {
    gender: Gender,
    regions: Vec<Region>,
    weights: Vec<Vec<(u8, f64)>>,
    weld: Vec<u32>,
    segments: Vec<Segment>,
    waist_band: BTreeSet<u32>,
    rest_pose: PoseRecord,
}

pub fn sidecar_path(obj: &Path) -> PathBuf {
    obj.with_extension("rig.json")
}

fn obj_text(vertices: &[Vector3<f64>], topo: &MeshTopology) -> String {
    let mut s = String::with_capacity(vertices.len() * 64);
    for v in vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for uv in &topo.uvs {
        // OBJ texture rows grow upwards.
        let _ = writeln!(s, "vt {:?} {:?}", uv[0], 1.0 - uv[1]);
    }
    for t in &topo.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
    }
    s
}

/// Writes `path` (OBJ) and its sidecar.
pub fn write_template(template: &TemplateMesh, path: &Path) -> Result<(), BodyError> {
    let topo = &template.topology;
    fs::write(path, obj_text(&template.vertices, topo))?;
    let sidecar = Sidecar {
        gender: template.gender,
        regions: topo.regions.clone(),
        weights: topo.weights.clone(),
        weld: topo.weld.clone(),
        segments: topo.segments.clone(),
        waist_band: topo.waist_band.clone(),
        rest_pose: template.rest_pose.to_record(),
    };
    let json = serde_json::to_string(&sidecar).map_err(|e| BodyError::Malformed(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn write_articulated_obj(mesh: &ArticulatedMesh, path: &Path) -> Result<(), BodyError> {
    fs::write(path, obj_text(&mesh.vertices, &mesh.topology))?;
    Ok(())
}

fn parse_floats<const N: usize>(rest: &str, line: usize) -> Result<[f64; N], BodyError> {
    let vals: Vec<f64> = rest
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| BodyError::Malformed(format!("line {line}: {e}")))?;
    if vals.len() < N || vals.iter().any(|v| !v.is_finite()) {
        return Err(BodyError::Malformed(format!("line {line}: expected {N} finite numbers")));
    }
    Ok(std::array::from_fn(|i| vals[i]))
}

pub fn read_template(path: &Path) -> Result<TemplateMesh, BodyError> {
    let text = fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("v ") {
            let [x, y, z] = parse_floats::<3>(rest, n + 1)?;
            vertices.push(Vector3::new(x, y, z));
        } else if let Some(rest) = line.strip_prefix("vt ") {
            let [u, v] = parse_floats::<2>(rest, n + 1)?;
            uvs.push([u, 1.0 - v]);
        } else if let Some(rest) = line.strip_prefix("f ") {
            let idx: Vec<u32> = rest
                .split_whitespace()
                .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|e| BodyError::Malformed(format!("line {}: {e}", n + 1)))?;
            if idx.len() != 3 || idx.contains(&0) {
                return Err(BodyError::Malformed(format!("line {}: faces must be 1-based triangles", n + 1)));
            }
            triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
        }
    }
    let json = fs::read_to_string(sidecar_path(path))?;
    let side: Sidecar = serde_json::from_str(&json).map_err(|e| BodyError::Malformed(e.to_string()))?;
    let nv = vertices.len();
    if uvs.len() != nv || side.regions.len() != nv || side.weights.len() != nv || side.weld.len() != nv {
        return Err(BodyError::Malformed("per-vertex array lengths disagree".into()));
    }
    if triangles.iter().flatten().any(|&i| i as usize >= nv) || side.weld.iter().any(|&i| i as usize >= nv) {
        return Err(BodyError::Malformed("vertex index out of range".into()));
    }
    for ws in &side.weights {
        let sum: f64 = ws.iter().map(|w| w.1).sum();
        if ws.is_empty() || ws.len() > 4 || ws.iter().any(|w| w.0 as usize >= NUM_BONES || w.1 < 0.0) {
            return Err(BodyError::Malformed("invalid skinning weights".into()));
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(BodyError::Malformed("skinning weights must sum to 1".into()));
        }
    }
    let rest_pose = Pose3D::from_record(&side.rest_pose)?;
    rest_pose.validate()?;
    let topology = MeshTopology {
        triangles,
        uvs,
        regions: side.regions,
        weights: side.weights,
        weld: side.weld,
        segments: side.segments,
        waist_band: side.waist_band,
    };
    Ok(TemplateMesh { gender: side.gender, topology: Arc::new(topology), vertices, rest_pose })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("female.obj");
        let t = TemplateMesh::builtin(Gender::Female);
        write_template(&t, &path).unwrap();
        let back = read_template(&path).unwrap();
        assert_eq!(back.vertices, t.vertices);
        assert_eq!(back.rest_pose, t.rest_pose);
        assert_eq!(back.topology.triangles, t.topology.triangles);
        assert_eq!(back.topology.segments, t.topology.segments);
        assert_eq!(back.topology.weights, t.topology.weights);
        for (a, b) in back.topology.uvs.iter().zip(&t.topology.uvs) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_face() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let t = TemplateMesh::builtin(Gender::Male);
        write_template(&t, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("f 0 1 2\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_template(&path), Err(BodyError::Malformed(_))));
    }
}
