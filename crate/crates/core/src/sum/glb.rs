//! Binary glTF 2.0 container for colored point clouds: one mesh, one `POINTS` primitive with
//! float32 `POSITION` and normalized uint8 RGBA `COLOR_0`.

use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{CameraPose, Intrinsics, PointCloud};

const MAGIC: u32 = 0x4654_6C67;
const VERSION: u32 = 2;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;
const MODE_POINTS: u64 = 0;
const FLOAT: u64 = 5126;
const UNSIGNED_BYTE: u64 = 5121;
const UNSIGNED_SHORT: u64 = 5123;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GlbError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unsupported glTF version {0}")]
    UnsupportedVersion(u32),
    #[error("no POSITION accessor in any primitive")]
    MissingPositionAccessor,
    #[error("chunk length mismatch: {0}")]
    ChunkLengthMismatch(String),
    #[error("{0}")]
    Malformed(String),
}

/// Point cloud plus the camera metadata carried in `asset.extras`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlbContents {
    pub cloud: PointCloud,
    pub frame_ids: Vec<u64>,
    pub frame_poses: Vec<Option<CameraPose>>,
    pub intrinsics: Option<Intrinsics>,
}

fn pose_value(p: &Option<CameraPose>) -> Value {
    match p {
        Some(p) => json!([p.position[0], p.position[1], p.position[2], p.yaw, p.pitch]),
        None => Value::Null,
    }
}

fn pad_to_4(buf: &mut Vec<u8>, fill: u8) {
    while !buf.len().is_multiple_of(4) {
        buf.push(fill);
    }
}

pub fn write_glb(c: &GlbContents) -> Vec<u8> {
    let n = c.cloud.len();
    let mut bin = Vec::with_capacity(n * 16);
    let mut min = [f32::INFINITY; 3];
    let mut max = [f32::NEG_INFINITY; 3];
    for p in &c.cloud.points {
        for (a, v) in p.iter().enumerate() {
            let v = *v as f32;
            min[a] = min[a].min(v);
            max[a] = max[a].max(v);
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let pos_len = bin.len();
    for rgb in &c.cloud.colors {
        bin.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
    }
    let col_len = bin.len() - pos_len;

    let mut position = json!({
        "bufferView": 0, "componentType": FLOAT, "count": n, "type": "VEC3"
    });
    if n > 0 {
        position["min"] = json!(min);
        position["max"] = json!(max);
    }
    let doc = json!({
        "asset": {
            "version": "2.0",
            "generator": "vlnmem",
            "extras": {
                "frame_ids": c.frame_ids,
                "frame_poses": c.frame_poses.iter().map(pose_value).collect::<Vec<_>>(),
                "intrinsics": c.intrinsics,
            }
        },
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [{"attributes": {"POSITION": 0, "COLOR_0": 1}, "mode": MODE_POINTS}]}],
        "buffers": [{"byteLength": bin.len()}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": pos_len},
            {"buffer": 0, "byteOffset": pos_len, "byteLength": col_len},
        ],
        "accessors": [
            position,
            {"bufferView": 1, "componentType": UNSIGNED_BYTE, "normalized": true, "count": n, "type": "VEC4"},
        ],
    });
    let mut json_bytes = serde_json::to_vec(&doc).expect("json value serializes");
    pad_to_4(&mut json_bytes, b' ');
    pad_to_4(&mut bin, 0);

    let total = 12 + 8 + json_bytes.len() + 8 + bin.len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(json_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_JSON.to_le_bytes());
    out.extend_from_slice(&json_bytes);
    out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
    out.extend_from_slice(&bin);
    out
}

fn u32_at(data: &[u8], off: usize) -> Option<u32> {
    data.get(off..off + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn malformed(msg: impl Into<String>) -> GlbError {
    GlbError::Malformed(msg.into())
}

fn get_usize(v: &Value, key: &str) -> Option<usize> {
    v.get(key).and_then(Value::as_u64).map(|x| x as usize)
}

struct Accessor<'a> {
    data: Option<(&'a [u8], usize)>,
    count: usize,
    component_type: u64,
    components: usize,
}

fn components(ty: &str) -> Result<usize, GlbError> {
    match ty {
        "SCALAR" => Ok(1),
        "VEC2" => Ok(2),
        "VEC3" => Ok(3),
        "VEC4" => Ok(4),
        other => Err(malformed(format!("unsupported accessor type {other}"))),
    }
}

fn component_size(ct: u64) -> Result<usize, GlbError> {
    match ct {
        FLOAT => Ok(4),
        UNSIGNED_BYTE => Ok(1),
        UNSIGNED_SHORT => Ok(2),
        other => Err(malformed(format!("unsupported component type {other}"))),
    }
}

fn accessor<'a>(doc: &Value, bin: Option<&'a [u8]>, index: usize) -> Result<Accessor<'a>, GlbError> {
    let acc = doc["accessors"].get(index).ok_or_else(|| malformed(format!("accessor {index} missing")))?;
    let count = get_usize(acc, "count").ok_or_else(|| malformed("accessor without count"))?;
    let component_type = acc.get("componentType").and_then(Value::as_u64).unwrap_or(0);
    let comps = components(acc.get("type").and_then(Value::as_str).unwrap_or(""))?;
    let elem = component_size(component_type)? * comps;
    let data = match get_usize(acc, "bufferView") {
        None => None,
        Some(vi) => {
            let view = doc["bufferViews"].get(vi).ok_or_else(|| malformed(format!("bufferView {vi} missing")))?;
            if get_usize(view, "buffer") != Some(0) {
                return Err(malformed("only the embedded buffer is supported"));
            }
            let bin = bin.ok_or_else(|| malformed("accessor refers to a missing BIN chunk"))?;
            let start = get_usize(view, "byteOffset").unwrap_or(0) + get_usize(acc, "byteOffset").unwrap_or(0);
            let view_end = get_usize(view, "byteOffset").unwrap_or(0)
                + get_usize(view, "byteLength").ok_or_else(|| malformed("bufferView without byteLength"))?;
            let stride = get_usize(view, "byteStride").unwrap_or(elem).max(elem);
            let needed = if count == 0 { 0 } else { (count - 1) * stride + elem };
            if start + needed > view_end || view_end > bin.len() {
                return Err(malformed(format!("accessor {index} exceeds its buffer")));
            }
            Some((&bin[start..start + needed], stride))
        }
    };
    Ok(Accessor { data, count, component_type, components: comps })
}

impl Accessor<'_> {
    fn component(&self, i: usize, c: usize) -> f64 {
        let Some((bytes, stride)) = self.data else { return 0.0 };
        let size = component_size(self.component_type).unwrap_or(1);
        let off = i * stride + c * size;
        let b = &bytes[off..off + size];
        match self.component_type {
            FLOAT => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            UNSIGNED_SHORT => u16::from_le_bytes([b[0], b[1]]) as f64,
            _ => b[0] as f64,
        }
    }

    fn color(&self, i: usize) -> [u8; 3] {
        let mut rgb = [255u8; 3];
        for (c, out) in rgb.iter_mut().enumerate().take(self.components.min(3)) {
            let v = self.component(i, c);
            *out = match self.component_type {
                UNSIGNED_BYTE => v as u8,
                UNSIGNED_SHORT => (v / 257.0).round() as u8,
                _ => (v.clamp(0.0, 1.0) * 255.0).round() as u8,
            };
        }
        rgb
    }
}

fn parse_pose(v: &Value) -> Option<CameraPose> {
    let a = v.as_array()?;
    if a.len() != 5 {
        return None;
    }
    let f: Vec<f64> = a.iter().filter_map(Value::as_f64).collect();
    (f.len() == 5).then(|| CameraPose::new([f[0], f[1], f[2]], f[3], f[4]))
}

pub fn read_glb(data: &[u8]) -> Result<GlbContents, GlbError> {
    if data.len() < 12 {
        return Err(GlbError::ChunkLengthMismatch(format!("{} bytes is shorter than the header", data.len())));
    }
    let magic = u32_at(data, 0).unwrap_or(0);
    if magic != MAGIC {
        return Err(GlbError::BadMagic(magic));
    }
    let version = u32_at(data, 4).unwrap_or(0);
    if version != VERSION {
        return Err(GlbError::UnsupportedVersion(version));
    }
    let total = u32_at(data, 8).unwrap_or(0) as usize;
    if total != data.len() {
        return Err(GlbError::ChunkLengthMismatch(format!("header says {total} bytes, got {}", data.len())));
    }

    let mut json_chunk = None;
    let mut bin_chunk = None;
    let mut off = 12;
    while off < total {
        let (Some(len), Some(ty)) = (u32_at(data, off), u32_at(data, off + 4)) else {
            return Err(GlbError::ChunkLengthMismatch(format!("truncated chunk header at {off}")));
        };
        let start = off + 8;
        let end = start + len as usize;
        if end > total {
            return Err(GlbError::ChunkLengthMismatch(format!("chunk at {off} runs past the end")));
        }
        match ty {
            CHUNK_JSON if json_chunk.is_none() && off == 12 => json_chunk = Some(&data[start..end]),
            CHUNK_BIN if bin_chunk.is_none() => bin_chunk = Some(&data[start..end]),
            _ if off == 12 => return Err(malformed("first chunk is not JSON")),
            _ => {}
        }
        off = end;
    }
    let json_chunk = json_chunk.ok_or_else(|| malformed("missing JSON chunk"))?;
    let doc: Value = serde_json::from_slice(json_chunk).map_err(|e| malformed(format!("JSON chunk: {e}")))?;

    let primitives: Vec<&Value> = doc["meshes"]
        .as_array()
        .map(|ms| ms.iter().flat_map(|m| m["primitives"].as_array().into_iter().flatten()).collect())
        .unwrap_or_default();
    let has_pos = |p: &&Value| p["attributes"].get("POSITION").is_some();
    let mode = |p: &&Value| p.get("mode").and_then(Value::as_u64).unwrap_or(4);
    let mut chosen: Vec<&Value> = primitives.iter().copied().filter(|p| has_pos(p) && mode(p) == MODE_POINTS).collect();
    if chosen.is_empty() {
        chosen = primitives.iter().copied().filter(has_pos).collect();
    }
    if chosen.is_empty() {
        return Err(GlbError::MissingPositionAccessor);
    }

    let mut cloud = PointCloud::new();
    for prim in chosen {
        let pi = get_usize(&prim["attributes"], "POSITION").ok_or(GlbError::MissingPositionAccessor)?;
        let pos = accessor(&doc, bin_chunk, pi)?;
        if pos.component_type != FLOAT || pos.components != 3 {
            return Err(malformed("POSITION must be float32 VEC3"));
        }
        let col = match get_usize(&prim["attributes"], "COLOR_0") {
            Some(ci) => {
                let a = accessor(&doc, bin_chunk, ci)?;
                if a.count != pos.count || a.components < 3 {
                    return Err(malformed("COLOR_0 does not match POSITION"));
                }
                Some(a)
            }
            None => None,
        };
        for i in 0..pos.count {
            let p = [pos.component(i, 0), pos.component(i, 1), pos.component(i, 2)];
            let c = col.as_ref().map_or([255; 3], |a| a.color(i));
            cloud.push(p, c);
        }
    }

    let extras = &doc["asset"]["extras"];
    let frame_ids = extras["frame_ids"].as_array().map(|a| a.iter().filter_map(Value::as_u64).collect()).unwrap_or_default();
    let frame_poses = extras["frame_poses"].as_array().map(|a| a.iter().map(parse_pose).collect()).unwrap_or_default();
    let intrinsics = serde_json::from_value(extras["intrinsics"].clone()).ok().flatten();
    Ok(GlbContents { cloud, frame_ids, frame_poses, intrinsics })
}
