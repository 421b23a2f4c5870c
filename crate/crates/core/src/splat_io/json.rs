//! `cameras.json` and `drag.json` readers/writers.
//!
//! Documents are walked as untyped JSON so every rejection can name the
//! JSON pointer of the offending field.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use serde_json::{json, Map, Value};

use crate::camera::{Camera, CameraDefect, CameraSet};
use crate::drag::{DragSpec, Handle, Region};

#[derive(Debug, thiserror::Error)]
pub enum JsonError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("schema violation at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
}

impl JsonError {
    pub fn pointer(&self) -> Option<&str> {
        match self {
            JsonError::Schema { pointer, .. } => Some(pointer),
            _ => None,
        }
    }
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> JsonError {
    JsonError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn object<'a>(v: &'a Value, ptr: &str) -> Result<&'a Map<String, Value>, JsonError> {
    v.as_object().ok_or_else(|| schema(ptr, "expected an object"))
}

fn field<'a>(obj: &'a Map<String, Value>, ptr: &str, key: &str) -> Result<&'a Value, JsonError> {
    obj.get(key)
        .ok_or_else(|| schema(format!("{ptr}/{key}"), "missing required field"))
}

fn number(v: &Value, ptr: &str) -> Result<f64, JsonError> {
    let x = v.as_f64().ok_or_else(|| schema(ptr, "expected a number"))?;
    if !x.is_finite() {
        return Err(schema(ptr, "expected a finite number"));
    }
    Ok(x)
}

fn positive_int(v: &Value, ptr: &str) -> Result<u32, JsonError> {
    v.as_u64()
        .filter(|&n| n > 0 && n <= u32::MAX as u64)
        .map(|n| n as u32)
        .ok_or_else(|| schema(ptr, "expected a positive integer"))
}

fn numbers<const N: usize>(v: &Value, ptr: &str) -> Result<[f64; N], JsonError> {
    let arr = v.as_array().ok_or_else(|| schema(ptr, format!("expected an array of {N} numbers")))?;
    if arr.len() != N {
        return Err(schema(ptr, format!("expected {N} numbers, found {}", arr.len())));
    }
    let mut out = [0.0; N];
    for (k, item) in arr.iter().enumerate() {
        out[k] = number(item, &format!("{ptr}/{k}"))?;
    }
    Ok(out)
}

fn vec3(v: &Value, ptr: &str) -> Result<Vector3<f64>, JsonError> {
    Ok(Vector3::from(numbers::<3>(v, ptr)?))
}

fn vec3_json(v: &Vector3<f64>) -> Value {
    json!([v.x, v.y, v.z])
}

/// Parses a `cameras.json` document. Relative image paths are returned as written.
pub fn parse_cameras(text: &str) -> Result<CameraSet, JsonError> {
    let root: Value = serde_json::from_str(text)?;
    let root_obj = object(&root, "")?;
    let list = field(root_obj, "", "cameras")?
        .as_array()
        .ok_or_else(|| schema("/cameras", "expected an array"))?;
    let mut cameras = Vec::with_capacity(list.len());
    for (i, entry) in list.iter().enumerate() {
        let ptr = format!("/cameras/{i}");
        let obj = object(entry, &ptr)?;
        let width = positive_int(field(obj, &ptr, "width")?, &format!("{ptr}/width"))?;
        let height = positive_int(field(obj, &ptr, "height")?, &format!("{ptr}/height"))?;
        let fx = number(field(obj, &ptr, "fx")?, &format!("{ptr}/fx"))?;
        let fy = number(field(obj, &ptr, "fy")?, &format!("{ptr}/fy"))?;
        let cx = number(field(obj, &ptr, "cx")?, &format!("{ptr}/cx"))?;
        let cy = number(field(obj, &ptr, "cy")?, &format!("{ptr}/cy"))?;
        let c2w = numbers::<16>(field(obj, &ptr, "c2w")?, &format!("{ptr}/c2w"))?;
        let image_path = match obj.get("image") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(schema(format!("{ptr}/image"), "expected a string or null")),
        };
        let camera = Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            pose: Matrix4::from_row_slice(&c2w),
            image_path,
        };
        camera.validate().map_err(|defect| match defect {
            CameraDefect::NonPositive(name) => schema(format!("{ptr}/{name}"), "must be > 0"),
            CameraDefect::NotOrthonormal => schema(format!("{ptr}/c2w"), "rotation block is not orthonormal"),
            CameraDefect::Reflection => schema(format!("{ptr}/c2w"), "rotation block has determinant -1"),
            CameraDefect::BadBottomRow => schema(format!("{ptr}/c2w"), "last row must be [0, 0, 0, 1]"),
        })?;
        cameras.push(camera);
    }
    Ok(cameras)
}

/// Reads `cameras.json`; relative image paths are resolved against its directory.
pub fn read_cameras(path: impl AsRef<Path>) -> Result<CameraSet, JsonError> {
    let path = path.as_ref();
    let mut cameras = parse_cameras(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for cam in &mut cameras {
        if let Some(img) = &cam.image_path {
            if img.is_relative() {
                cam.image_path = Some(base.join(img));
            }
        }
    }
    Ok(cameras)
}

pub fn cameras_to_json(cameras: &[Camera]) -> Value {
    let list: Vec<Value> = cameras
        .iter()
        .map(|c| {
            let c2w: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |k| (r, k))).map(|(r, k)| c.pose[(r, k)]).collect();
            json!({
                "width": c.width,
                "height": c.height,
                "fx": c.fx,
                "fy": c.fy,
                "cx": c.cx,
                "cy": c.cy,
                "c2w": c2w,
                "image": c.image_path.as_ref().map(|p| p.to_string_lossy().into_owned()),
            })
        })
        .collect();
    json!({ "cameras": list })
}

pub fn write_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<(), JsonError> {
    fs::write(path, serde_json::to_string_pretty(&cameras_to_json(cameras))?)?;
    Ok(())
}

/// Parses a drag spec from an already-decoded JSON value.
pub fn dragspec_from_value(root: &Value) -> Result<DragSpec, JsonError> {
    let obj = object(root, "")?;
    let handles_json = field(obj, "", "handles")?
        .as_array()
        .ok_or_else(|| schema("/handles", "expected an array"))?;
    let mut handles = Vec::with_capacity(handles_json.len());
    for (i, h) in handles_json.iter().enumerate() {
        let ptr = format!("/handles/{i}");
        let ho = object(h, &ptr)?;
        handles.push(Handle {
            source: vec3(field(ho, &ptr, "source")?, &format!("{ptr}/source"))?,
            target: vec3(field(ho, &ptr, "target")?, &format!("{ptr}/target"))?,
        });
    }
    let anchors = match obj.get("anchors") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(list)) => list
            .iter()
            .enumerate()
            .map(|(i, a)| vec3(a, &format!("/anchors/{i}")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(schema("/anchors", "expected an array")),
    };
    let region = match obj.get("region") {
        None | Some(Value::Null) => None,
        Some(r) => {
            let ro = object(r, "/region")?;
            match field(ro, "/region", "type")?.as_str() {
                Some("box") => Some(Region::Box {
                    min: vec3(field(ro, "/region", "min")?, "/region/min")?,
                    max: vec3(field(ro, "/region", "max")?, "/region/max")?,
                }),
                Some("sphere") => Some(Region::Sphere {
                    center: vec3(field(ro, "/region", "center")?, "/region/center")?,
                    radius: number(field(ro, "/region", "radius")?, "/region/radius")?,
                }),
                _ => return Err(schema("/region/type", "expected \"box\" or \"sphere\"")),
            }
        }
    };
    let auto_anchor_radius = match obj.get("auto_anchor_radius") {
        None | Some(Value::Null) => None,
        Some(v) => Some(number(v, "/auto_anchor_radius")?),
    };
    let spec = DragSpec {
        handles,
        anchors,
        region,
        auto_anchor_radius,
    };
    spec.check().map_err(|(pointer, defect)| schema(pointer, defect.to_string()))?;
    Ok(spec)
}

pub fn parse_dragspec(text: &str) -> Result<DragSpec, JsonError> {
    dragspec_from_value(&serde_json::from_str(text)?)
}

pub fn read_dragspec(path: impl AsRef<Path>) -> Result<DragSpec, JsonError> {
    parse_dragspec(&fs::read_to_string(path)?)
}

pub fn dragspec_to_json(spec: &DragSpec) -> Value {
    let region = match &spec.region {
        None => Value::Null,
        Some(Region::Box { min, max }) => json!({"type": "box", "min": vec3_json(min), "max": vec3_json(max)}),
        Some(Region::Sphere { center, radius }) => {
            json!({"type": "sphere", "center": vec3_json(center), "radius": radius})
        }
    };
    json!({
        "handles": spec.handles.iter().map(|h| json!({"source": vec3_json(&h.source), "target": vec3_json(&h.target)})).collect::<Vec<_>>(),
        "anchors": spec.anchors.iter().map(vec3_json).collect::<Vec<_>>(),
        "region": region,
        "auto_anchor_radius": spec.auto_anchor_radius,
    })
}

pub fn write_dragspec(spec: &DragSpec, path: impl AsRef<Path>) -> Result<(), JsonError> {
    fs::write(path, serde_json::to_string_pretty(&dragspec_to_json(spec))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str = r#"{"cameras":[{"width":100,"height":100,"fx":100,"fy":100,"cx":50,"cy":50,
        "c2w":[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],"image":null}]}"#;

    #[test]
    fn identity_camera_parses() {
        let cams = parse_cameras(IDENTITY).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0], Camera::identity(100, 100, 100.0));
    }

    #[test]
    fn reflection_names_pose_pointer() {
        let text = IDENTITY.replace("[1,0,0,0,", "[-1,0,0,0,");
        let err = parse_cameras(&text).unwrap_err();
        assert_eq!(err.pointer(), Some("/cameras/0/c2w"));
    }

    #[test]
    fn wrong_type_names_field() {
        let text = IDENTITY.replace("\"fy\":100", "\"fy\":\"a\"");
        assert_eq!(parse_cameras(&text).unwrap_err().pointer(), Some("/cameras/0/fy"));
        let text = IDENTITY.replace("\"width\":100,", "");
        assert_eq!(parse_cameras(&text).unwrap_err().pointer(), Some("/cameras/0/width"));
        let text = IDENTITY.replace("\"fx\":100", "\"fx\":0");
        assert_eq!(parse_cameras(&text).unwrap_err().pointer(), Some("/cameras/0/fx"));
    }

    #[test]
    fn drag_round_trip() {
        let text = r#"{"handles":[{"source":[0,0,0],"target":[1,0,0]}],"anchors":[[2,2,2]],
            "region":{"type":"sphere","center":[0,0,0],"radius":5},"auto_anchor_radius":0.5}"#;
        let spec = parse_dragspec(text).unwrap();
        assert_eq!(spec.anchors, vec![Vector3::new(2.0, 2.0, 2.0)]);
        let again = dragspec_from_value(&dragspec_to_json(&spec)).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn drag_errors_carry_pointer() {
        let text = r#"{"handles":[{"source":[0,0],"target":[1,0,0]}]}"#;
        assert_eq!(parse_dragspec(text).unwrap_err().pointer(), Some("/handles/0/source"));
        let text = r#"{"handles":[]}"#;
        assert_eq!(parse_dragspec(text).unwrap_err().pointer(), Some("/handles"));
        let text = r#"{"handles":[{"source":[0,0,0],"target":[1,0,0]}],"region":{"type":"cone"}}"#;
        assert_eq!(parse_dragspec(text).unwrap_err().pointer(), Some("/region/type"));
    }

    #[test]
    fn handle_with_equal_source_and_target_is_valid() {
        let text = r#"{"handles":[{"source":[1,2,3],"target":[1,2,3]}],"anchors":[],"region":null,"auto_anchor_radius":null}"#;
        assert!(parse_dragspec(text).unwrap().is_identity());
    }
}
