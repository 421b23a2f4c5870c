//! Binary little-endian PLY in the layout written by the reference 3DGS trainer.

use std::fs;
use std::io;
use std::path::Path;

use crate::scene::{GaussianScene, SH_REST_LENS};

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed PLY header at line {line}: {message} (`{content}`)")]
    Format {
        line: usize,
        content: String,
        message: String,
    },
    #[error("PLY schema error for property `{property}`: {message}")]
    Schema { property: String, message: String },
    #[error("invalid value in property `{property}` of Gaussian {index}")]
    Data { index: usize, property: String },
    #[error("PLY payload truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_count(self, bytes: &[u8]) -> usize {
        match self {
            Self::I8 => bytes[0] as i8 as usize,
            Self::U8 => bytes[0] as usize,
            Self::I16 => i16::from_le_bytes([bytes[0], bytes[1]]).max(0) as usize,
            Self::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as usize,
            Self::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()).max(0) as usize,
            Self::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize,
            Self::F32 | Self::F64 => usize::MAX,
        }
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    elements: Vec<Element>,
    payload_offset: usize,
}

const MAX_HEADER_BYTES: usize = 1 << 20;

fn format_err(line: usize, content: &str, message: impl Into<String>) -> PlyError {
    PlyError::Format {
        line,
        content: content.chars().take(80).collect(),
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        line_no += 1;
        let rest = &bytes[pos..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            let tail = String::from_utf8_lossy(&rest[..rest.len().min(80)]).into_owned();
            return Err(format_err(line_no, &tail, "header not terminated by `end_header`"));
        };
        if pos + nl > MAX_HEADER_BYTES {
            return Err(format_err(line_no, "", "header too large"));
        }
        let raw = &rest[..nl];
        pos += nl + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw)
            .map_err(|_| format_err(line_no, &String::from_utf8_lossy(raw), "header line is not valid UTF-8"))?;
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(format_err(line_no, line, "missing `ply` magic"));
            }
            continue;
        }
        match tokens.first().copied() {
            Some("format") => {
                if tokens.len() != 3 {
                    return Err(format_err(line_no, line, "expected `format <kind> <version>`"));
                }
                if tokens[1] != "binary_little_endian" {
                    return Err(format_err(
                        line_no,
                        line,
                        format!("unsupported format `{}`; only binary_little_endian is accepted", tokens[1]),
                    ));
                }
                if tokens[2] != "1.0" {
                    return Err(format_err(line_no, line, "unsupported format version"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(format_err(line_no, line, "expected `element <name> <count>`"));
                }
                let count: usize = tokens[2]
                    .parse()
                    .map_err(|_| format_err(line_no, line, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: tokens[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let Some(element) = elements.last_mut() else {
                    return Err(format_err(line_no, line, "property before any element"));
                };
                let property = match tokens.get(1).copied() {
                    Some("list") if tokens.len() == 5 => {
                        let count = ScalarType::parse(tokens[2])
                            .filter(|t| !matches!(t, ScalarType::F32 | ScalarType::F64))
                            .ok_or_else(|| format_err(line_no, line, "invalid list count type"))?;
                        let item = ScalarType::parse(tokens[3])
                            .ok_or_else(|| format_err(line_no, line, "unknown list item type"))?;
                        Property {
                            name: tokens[4].to_string(),
                            kind: PropertyKind::List { count, item },
                        }
                    }
                    Some(ty) if tokens.len() == 3 => {
                        let ty = ScalarType::parse(ty).ok_or_else(|| format_err(line_no, line, "unknown property type"))?;
                        Property {
                            name: tokens[2].to_string(),
                            kind: PropertyKind::Scalar(ty),
                        }
                    }
                    _ => return Err(format_err(line_no, line, "expected `property <type> <name>`")),
                };
                element.properties.push(property);
            }
            Some("end_header") if tokens.len() == 1 => {
                if !saw_format {
                    return Err(format_err(line_no, line, "missing `format` line"));
                }
                return Ok(Header {
                    elements,
                    payload_offset: pos,
                });
            }
            _ => return Err(format_err(line_no, line, "unrecognized header line")),
        }
    }
}

/// Skips one element's records starting at `offset`, returning the new offset.
fn skip_element(bytes: &[u8], mut offset: usize, element: &Element) -> Result<usize, PlyError> {
    let fixed: Option<usize> = element
        .properties
        .iter()
        .map(|p| match p.kind {
            PropertyKind::Scalar(t) => Some(t.size()),
            PropertyKind::List { .. } => None,
        })
        .sum();
    if let Some(record) = fixed {
        let end = record
            .checked_mul(element.count)
            .and_then(|n| n.checked_add(offset))
            .ok_or(PlyError::Truncated {
                expected: usize::MAX,
                actual: bytes.len(),
            })?;
        if end > bytes.len() {
            return Err(PlyError::Truncated {
                expected: end,
                actual: bytes.len(),
            });
        }
        return Ok(end);
    }
    for _ in 0..element.count {
        for p in &element.properties {
            let need = |offset: usize, n: usize| -> Result<(), PlyError> {
                match offset.checked_add(n) {
                    Some(end) if end <= bytes.len() => Ok(()),
                    _ => Err(PlyError::Truncated {
                        expected: offset.saturating_add(n),
                        actual: bytes.len(),
                    }),
                }
            };
            match p.kind {
                PropertyKind::Scalar(t) => {
                    need(offset, t.size())?;
                    offset += t.size();
                }
                PropertyKind::List { count, item } => {
                    need(offset, count.size())?;
                    let n = count.read_count(&bytes[offset..]);
                    offset += count.size();
                    let len = n.checked_mul(item.size()).ok_or(PlyError::Truncated {
                        expected: usize::MAX,
                        actual: bytes.len(),
                    })?;
                    need(offset, len)?;
                    offset += len;
                }
            }
        }
    }
    Ok(offset)
}

/// Parses a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<GaussianScene, PlyError> {
    let header = parse_header(bytes)?;
    let Some(vertex_pos) = header.elements.iter().position(|e| e.name == "vertex") else {
        return Err(PlyError::Schema {
            property: "vertex".into(),
            message: "no `vertex` element".into(),
        });
    };
    let mut offset = header.payload_offset;
    for element in &header.elements[..vertex_pos] {
        offset = skip_element(bytes, offset, element)?;
    }
    let vertex = &header.elements[vertex_pos];

    let mut column: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut record = 0usize;
    for p in &vertex.properties {
        match p.kind {
            PropertyKind::Scalar(t) => {
                if column.insert(p.name.as_str(), record).is_some() {
                    return Err(PlyError::Schema {
                        property: p.name.clone(),
                        message: "duplicate property".into(),
                    });
                }
                let required = is_known_property(&p.name);
                if required && t != ScalarType::F32 {
                    return Err(PlyError::Schema {
                        property: p.name.clone(),
                        message: "must be a 32-bit float".into(),
                    });
                }
                record += t.size();
            }
            PropertyKind::List { .. } => {
                return Err(PlyError::Schema {
                    property: p.name.clone(),
                    message: "list properties are not supported on `vertex`".into(),
                })
            }
        }
    }

    let lookup = |name: &str| -> Result<usize, PlyError> {
        column.get(name).copied().ok_or_else(|| PlyError::Schema {
            property: name.to_string(),
            message: "required property missing".into(),
        })
    };
    let pos_cols = [lookup("x")?, lookup("y")?, lookup("z")?];
    let dc_cols = [lookup("f_dc_0")?, lookup("f_dc_1")?, lookup("f_dc_2")?];
    let opacity_col = lookup("opacity")?;
    let scale_cols = [lookup("scale_0")?, lookup("scale_1")?, lookup("scale_2")?];
    let rot_cols = [lookup("rot_0")?, lookup("rot_1")?, lookup("rot_2")?, lookup("rot_3")?];

    let rest_len = column.keys().filter(|k| k.starts_with("f_rest_")).count();
    if !SH_REST_LENS.contains(&rest_len) {
        return Err(PlyError::Schema {
            property: "f_rest_*".into(),
            message: format!("found {rest_len} SH rest coefficients, expected 0, 9, 24 or 45"),
        });
    }
    let rest_cols: Vec<usize> = (0..rest_len)
        .map(|k| lookup(&format!("f_rest_{k}")))
        .collect::<Result<_, _>>()?;

    let payload = vertex
        .count
        .checked_mul(record)
        .and_then(|n| n.checked_add(offset))
        .ok_or(PlyError::Truncated {
            expected: usize::MAX,
            actual: bytes.len(),
        })?;
    if payload > bytes.len() {
        return Err(PlyError::Truncated {
            expected: payload,
            actual: bytes.len(),
        });
    }

    let n = vertex.count;
    let mut scene = GaussianScene::with_sh_rest_len(rest_len);
    scene.centers.reserve_exact(n);
    scene.rotations.reserve_exact(n);
    scene.log_scales.reserve_exact(n);
    scene.opacity_logits.reserve_exact(n);
    scene.sh_dc.reserve_exact(n);
    scene.sh_rest.reserve_exact(n * rest_len);
    let mut rest = vec![0f32; rest_len];
    for i in 0..n {
        let base = offset + i * record;
        let rec = &bytes[base..base + record];
        let f = |col: usize| f32::from_le_bytes(rec[col..col + 4].try_into().unwrap());
        let center = pos_cols.map(f);
        let dc = dc_cols.map(f);
        let opacity = f(opacity_col);
        let scale = scale_cols.map(f);
        let rot = rot_cols.map(f);
        for (dst, &col) in rest.iter_mut().zip(&rest_cols) {
            *dst = f(col);
        }
        let bad = |name: &str| PlyError::Data {
            index: i,
            property: name.to_string(),
        };
        if !center.iter().all(|v| v.is_finite()) {
            return Err(bad("x/y/z"));
        }
        if !dc.iter().all(|v| v.is_finite()) {
            return Err(bad("f_dc"));
        }
        if !opacity.is_finite() {
            return Err(bad("opacity"));
        }
        if !scale.iter().all(|v| v.is_finite()) {
            return Err(bad("scale"));
        }
        if !rot.iter().all(|v| v.is_finite()) {
            return Err(bad("rot"));
        }
        if !rest.iter().all(|v| v.is_finite()) {
            return Err(bad("f_rest"));
        }
        scene.push(center, rot, scale, opacity, dc, &rest);
    }
    Ok(scene)
}

fn is_known_property(name: &str) -> bool {
    matches!(
        name,
        "x" | "y"
            | "z"
            | "f_dc_0"
            | "f_dc_1"
            | "f_dc_2"
            | "opacity"
            | "scale_0"
            | "scale_1"
            | "scale_2"
            | "rot_0"
            | "rot_1"
            | "rot_2"
            | "rot_3"
    ) || name.starts_with("f_rest_")
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<GaussianScene, PlyError> {
    parse_ply(&fs::read(path)?)
}

/// Property names in the order they are written.
pub fn property_names(sh_rest_len: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..sh_rest_len).map(|k| format!("f_rest_{k}")));
    names.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

pub fn header_bytes(count: usize, sh_rest_len: usize) -> Vec<u8> {
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for name in property_names(sh_rest_len) {
        header.push_str("property float ");
        header.push_str(&name);
        header.push('\n');
    }
    header.push_str("end_header\n");
    header.into_bytes()
}

/// Bytes per Gaussian record in the written layout.
pub fn record_size(sh_rest_len: usize) -> usize {
    property_names(sh_rest_len).len() * 4
}

/// Serializes a scene; the output is a pure function of the scene.
pub fn encode_ply(scene: &GaussianScene) -> Vec<u8> {
    let n = scene.len();
    let mut out = header_bytes(n, scene.sh_rest_len);
    out.reserve(n * record_size(scene.sh_rest_len));
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for i in 0..n {
        scene.centers[i].iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        scene.sh_dc[i].iter().for_each(|&v| put(v));
        scene.sh_rest_of(i).iter().for_each(|&v| put(v));
        put(scene.opacity_logits[i]);
        scene.log_scales[i].iter().for_each(|&v| put(v));
        scene.rotations[i].iter().for_each(|&v| put(v));
    }
    out
}

pub fn write_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), PlyError> {
    fs::write(path, encode_ply(scene))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_scene() -> GaussianScene {
        let mut s = GaussianScene::default();
        s.push([0.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.0; 3], &[]);
        s
    }

    #[test]
    fn single_gaussian_activations() {
        let scene = parse_ply(&encode_ply(&unit_scene())).unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(scene.scale(0), [1.0; 3]);
        assert_eq!(scene.opacity(0), 0.5);
    }

    #[test]
    fn empty_rest_has_no_f_rest_properties() {
        let bytes = encode_ply(&unit_scene());
        let text = String::from_utf8_lossy(&bytes);
        assert!(!text.contains("f_rest"));
        assert_eq!(record_size(0), 17 * 4);
        assert_eq!(record_size(45), 62 * 4);
    }

    #[test]
    fn ascii_rejected_with_line() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        match parse_ply(bytes) {
            Err(PlyError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_property_named() {
        let bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        match parse_ply(bytes) {
            Err(PlyError::Schema { property, .. }) => assert_eq!(property, "f_dc_0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_reports_index() {
        let mut s = unit_scene();
        s.push([1.0; 3], [1.0, 0.0, 0.0, 0.0], [0.0; 3], 0.0, [0.0; 3], &[]);
        let mut bytes = encode_ply(&s);
        let header = header_bytes(2, 0).len();
        // opacity of record 1
        let off = header + record_size(0) + 9 * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match parse_ply(&bytes) {
            Err(PlyError::Data { index, property }) => {
                assert_eq!(index, 1);
                assert_eq!(property, "opacity");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_ply(&unit_scene());
        assert!(matches!(parse_ply(&bytes[..bytes.len() - 1]), Err(PlyError::Truncated { .. })));
    }

    #[test]
    fn double_typed_position_rejected() {
        let mut header = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty double x\n");
        header.push_str("end_header\n");
        match parse_ply(header.as_bytes()) {
            Err(PlyError::Schema { property, .. }) => assert_eq!(property, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
