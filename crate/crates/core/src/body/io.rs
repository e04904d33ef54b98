use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::canonical_json::{self, float};
use crate::error::{bad_data, Error, Result};
use crate::math::Vec3;

use super::BodyModel;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyFile {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    joints: Vec<[f64; 3]>,
    parents: Vec<i64>,
    skin_weights: Vec<Vec<(usize, f64)>>,
    shape_basis: Vec<Vec<[f64; 3]>>,
    pose_basis: Vec<Vec<[f64; 3]>>,
    vertex_part: Vec<usize>,
    part_joint: Vec<usize>,
}

fn vec3_json(v: &Vec3) -> Value {
    Value::Array(vec![float(v.x), float(v.y), float(v.z)])
}

fn basis_json(rows: &[Vec<Vec3>]) -> Value {
    Value::Array(rows.iter().map(|r| Value::Array(r.iter().map(vec3_json).collect())).collect())
}

/// Canonical JSON text for a body model.
pub fn body_to_json(model: &BodyModel) -> String {
    let value = json!({
        "vertices": model.vertices.iter().map(vec3_json).collect::<Vec<_>>(),
        "faces": model.faces,
        "joints": model.joints.iter().map(vec3_json).collect::<Vec<_>>(),
        "parents": model.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect::<Vec<_>>(),
        "skin_weights": model.skin_weights.iter().map(|w| {
            Value::Array(w.iter().map(|&(j, x)| Value::Array(vec![json!(j), float(x)])).collect())
        }).collect::<Vec<_>>(),
        "shape_basis": basis_json(&model.shape_basis),
        "pose_basis": basis_json(&model.pose_basis),
        "vertex_part": model.vertex_part,
        "part_joint": model.part_joint,
    });
    canonical_json::to_string(&value)
}

pub fn body_from_json(text: &str) -> Result<BodyModel> {
    let file: BodyFile = serde_json::from_str(text).map_err(|e| Error::Data(format!("body JSON: {e}")))?;
    let mut parents = Vec::with_capacity(file.parents.len());
    for (k, &p) in file.parents.iter().enumerate() {
        parents.push(match p {
            -1 => None,
            p if p >= 0 => Some(p as usize),
            p => bad_data!("joint {k} has invalid parent {p}"),
        });
    }
    let to_vecs = |v: Vec<[f64; 3]>| v.into_iter().map(Vec3::from).collect::<Vec<_>>();
    let model = BodyModel {
        vertices: to_vecs(file.vertices),
        faces: file.faces,
        joints: to_vecs(file.joints),
        parents,
        skin_weights: file.skin_weights,
        shape_basis: file.shape_basis.into_iter().map(to_vecs).collect(),
        pose_basis: file.pose_basis.into_iter().map(to_vecs).collect(),
        vertex_part: file.vertex_part,
        part_joint: file.part_joint,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_body(path: &Path) -> Result<BodyModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    body_from_json(&text)
}

pub fn save_body(model: &BodyModel, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, body_to_json(model).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::make_toy_body;

    #[test]
    fn json_round_trip_is_byte_identical() {
        let model = make_toy_body(16, 16, 2).unwrap();
        let text = body_to_json(&model);
        let loaded = body_from_json(&text).unwrap();
        assert_eq!(body_to_json(&loaded), text);
    }

    #[test]
    fn rejects_length_mismatch() {
        let model = make_toy_body(2, 8, 0).unwrap();
        let mut v: Value = serde_json::from_str(&body_to_json(&model)).unwrap();
        v["vertex_part"].as_array_mut().unwrap().pop();
        assert!(matches!(body_from_json(&v.to_string()), Err(Error::Data(_))));
    }
}
