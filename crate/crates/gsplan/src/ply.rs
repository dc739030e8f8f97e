//! Splat PLY files: binary little-endian vertices carrying position,
//! log-scales, a w-first rotation quaternion and an opacity logit.

use std::io::Write;
use std::path::Path;

use gsplan_core::linalg::{self, Mat3};
use gsplan_core::splat::{scene_from_records, Gaussian3, OpacityPolicy, SplatRecord, SplatScene};

use crate::error::{io, Error, Result};

const REQUIRED: [&str; 11] =
    ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

struct Header {
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&c| c == b'\n').ok_or_else(|| Error::Ply("truncated header".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(|s| s.trim_end_matches('\r'))
            .map_err(|_| Error::Ply("header is not text".into()))
    };
    if next_line()? != "ply" {
        return Err(Error::Ply("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format = None;
    loop {
        let line = next_line()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => format = Some(f.to_string()),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| Error::Ply(format!("bad element count in '{line}'")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ..] => {
                let e = elements.last().ok_or_else(|| Error::Ply("property before element".into()))?;
                return Err(Error::Ply(format!("list property in element '{}' is not supported", e.name)));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| Error::Ply(format!("unknown property type '{ty}'")))?;
                let e = elements.last_mut().ok_or_else(|| Error::Ply("property before element".into()))?;
                e.props.push((name.to_string(), ty));
            }
            _ => return Err(Error::Ply(format!("unrecognized header line '{line}'"))),
        }
    }
    match format.as_deref() {
        Some("binary_little_endian") => {}
        Some(f) => return Err(Error::Ply(format!("unsupported format '{f}', expected binary_little_endian"))),
        None => return Err(Error::Ply("missing format line".into())),
    }
    Ok(Header { elements, body_start: pos })
}

/// Decodes the vertex records of an in-memory splat PLY.
pub fn parse_splat_records(bytes: &[u8]) -> Result<Vec<SplatRecord>> {
    let header = parse_header(bytes)?;
    let mut offset = header.body_start;
    for e in &header.elements {
        let stride: usize = e.props.iter().map(|p| p.1.size()).sum();
        if e.name != "vertex" {
            offset += stride * e.count;
            continue;
        }
        let mut at = [usize::MAX; 11];
        let mut field_offset = 0;
        let mut types = [Scalar::F32; 11];
        for (name, ty) in &e.props {
            if let Some(k) = REQUIRED.iter().position(|r| r == name) {
                at[k] = field_offset;
                types[k] = *ty;
            }
            field_offset += ty.size();
        }
        if let Some(k) = at.iter().position(|&a| a == usize::MAX) {
            return Err(Error::Ply(format!("vertex element is missing property '{}'", REQUIRED[k])));
        }
        let end = offset + stride * e.count;
        if bytes.len() < end {
            return Err(Error::Ply(format!(
                "body holds {} bytes, {} vertices need {}",
                bytes.len() - offset,
                e.count,
                stride * e.count
            )));
        }
        return Ok(bytes[offset..end]
            .chunks_exact(stride)
            .map(|row| {
                let v = |k: usize| types[k].read(&row[at[k]..]);
                SplatRecord {
                    position: [v(0), v(1), v(2)],
                    log_scale: [v(3), v(4), v(5)],
                    rotation: [v(6), v(7), v(8), v(9)],
                    opacity_logit: v(10),
                }
            })
            .collect());
    }
    Err(Error::Ply("no vertex element".into()))
}

pub fn read_splat_records(path: &Path) -> Result<Vec<SplatRecord>> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    parse_splat_records(&bytes).map_err(|e| match e {
        Error::Ply(m) => Error::Ply(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Loads a splat PLY as a scene, dropping records below the opacity
/// threshold.
pub fn load_splat_ply(path: &Path, policy: OpacityPolicy) -> Result<SplatScene> {
    Ok(scene_from_records(&read_splat_records(path)?, policy)?)
}

/// Unit quaternion (w first) of a proper rotation matrix.
pub fn rotation_to_quat(r: &Mat3) -> [f64; 4] {
    let t = r[0][0] + r[1][1] + r[2][2];
    let q = if t > 0.0 {
        let s = 2.0 * (t + 1.0).sqrt();
        [0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = 2.0 * (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt();
        [(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s]
    } else if r[1][1] > r[2][2] {
        let s = 2.0 * (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt();
        [(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s]
    } else {
        let s = 2.0 * (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt();
        [(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Splat record for a Gaussian; the weight is stored as opacity, clamped so
/// its logit stays finite.
pub fn record_from_gaussian(g: &Gaussian3) -> SplatRecord {
    let (vals, mut vecs) = linalg::sym_eigen(&g.cov);
    if linalg::det(&vecs) < 0.0 {
        for row in &mut vecs {
            row[2] = -row[2];
        }
    }
    let alpha = g.weight.clamp(1e-6, 0.99);
    SplatRecord {
        position: g.mean,
        log_scale: vals.map(|v| 0.5 * v.max(1e-300).ln()),
        rotation: rotation_to_quat(&vecs),
        opacity_logit: (alpha / (1.0 - alpha)).ln(),
    }
}

/// Extra per-vertex color written as the zero-order spherical-harmonic
/// coefficients viewers expect.
pub type Rgb = [f64; 3];

const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Encodes records as a binary little-endian splat PLY with f32 fields.
pub fn encode_splat_ply(records: &[SplatRecord], colors: Option<&[Rgb]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + records.len() * 68);
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", records.len());
    for p in REQUIRED[..3].iter() {
        header += &format!("property float {p}\n");
    }
    if colors.is_some() {
        header += "property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n";
    }
    for p in REQUIRED[3..11].iter() {
        header += &format!("property float {p}\n");
    }
    header += "end_header\n";
    out.extend_from_slice(header.as_bytes());
    for (i, r) in records.iter().enumerate() {
        let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        r.position.iter().for_each(|&v| put(v));
        if let Some(c) = colors {
            c[i].iter().for_each(|&v| put((v - 0.5) / SH_C0));
        }
        r.log_scale.iter().for_each(|&v| put(v));
        r.rotation.iter().for_each(|&v| put(v));
        put(r.opacity_logit);
    }
    out
}

pub fn write_splat_ply(path: &Path, records: &[SplatRecord], colors: Option<&[Rgb]>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io(path))?;
    f.write_all(&encode_splat_ply(records, colors)).map_err(io(path))
}

pub fn write_scene_ply(path: &Path, scene: &SplatScene) -> Result<()> {
    let records: Vec<SplatRecord> = scene.gaussians().iter().map(record_from_gaussian).collect();
    write_splat_ply(path, &records, None)
}
