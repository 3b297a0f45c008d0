//! File formats: ASCII OBJ and binary little-endian PLY meshes, PFM and raw
//! `.f32` depth maps, 8-bit PNG masks.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{GeometryError, TriangleMesh};
use crate::raster::{DepthMap, InstanceMask};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("unsupported mesh extension for {0}")]
    UnknownExtension(String),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Loads `.obj` or `.ply` by extension.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("obj") => read_obj(BufReader::new(fs::File::open(path)?)),
        Some("ply") => read_ply(BufReader::new(fs::File::open(path)?)),
        _ => Err(FormatError::UnknownExtension(path.display().to_string())),
    }
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = Vec::new();
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("obj") => write_obj(&mut out, mesh)?,
        Some("ply") => write_ply(&mut out, &mesh.vertices, &mesh.faces)?,
        _ => return Err(FormatError::UnknownExtension(path.display().to_string())),
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads `v` and `f` records; polygons are fan-triangulated. Negative
/// (relative) indices are accepted, everything else is ignored.
pub fn read_obj<R: BufRead>(reader: R) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| FormatError::Parse { line: line_no, msg: e.to_string() })?;
                if coords.len() != 3 {
                    return Err(FormatError::Parse { line: line_no, msg: "vertex needs 3 coordinates".into() });
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tokens {
                    let idx_str = t.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str.parse().map_err(|_| FormatError::Parse { line: line_no, msg: format!("bad face index {t:?}") })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(FormatError::Parse { line: line_no, msg: "face index 0".into() });
                    };
                    if resolved < 0 {
                        return Err(FormatError::Parse { line: line_no, msg: format!("face index {idx} out of range") });
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(FormatError::Parse { line: line_no, msg: "face needs at least 3 vertices".into() });
                }
                for i in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[i], poly[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

pub fn write_obj<W: Write>(mut w: W, mesh: &TriangleMesh) -> Result<()> {
    for v in &mesh.vertices {
        // `{:?}` prints the shortest representation that round-trips.
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Binary little-endian PLY, float32 vertices and int32 face indices.
pub fn write_ply<W: Write>(mut w: W, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Result<()> {
    write!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", vertices.len())?;
    w.write_all(b"property float x\nproperty float y\nproperty float z\n")?;
    if !faces.is_empty() {
        writeln!(w, "element face {}", faces.len())?;
        w.write_all(b"property list uchar int vertex_indices\n")?;
    }
    w.write_all(b"end_header\n")?;
    for v in vertices {
        for c in [v.x, v.y, v.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    for f in faces {
        w.write_all(&[3u8])?;
        for &i in f {
            let i = i32::try_from(i).map_err(|_| FormatError::Format("face index exceeds int32".into()))?;
            w.write_all(&i.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
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

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Self::I8 => rd!(i8),
            Self::U8 => rd!(u8),
            Self::I16 => rd!(i16),
            Self::U16 => rd!(u16),
            Self::I32 => rd!(i32),
            Self::U32 => rd!(u32),
            Self::F32 => rd!(f32),
            Self::F64 => rd!(f64),
        })
    }
}

enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

/// Reads a binary little-endian PLY. Vertices need `x`, `y`, `z`; a `face`
/// element with a list property is optional (point clouds have none).
pub fn read_ply<R: BufRead>(mut r: R) -> Result<TriangleMesh> {
    let header_line = |r: &mut R| -> Result<String> {
        let mut s = String::new();
        if r.read_line(&mut s)? == 0 {
            return Err(FormatError::Format("unexpected end of PLY header".into()));
        }
        Ok(s.trim_end().to_string())
    };
    if header_line(&mut r)? != "ply" {
        return Err(FormatError::Format("missing PLY magic".into()));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = header_line(&mut r)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(FormatError::Format(format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| FormatError::Format(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| FormatError::Format("property before element".into()))?;
                let (ct, it) = PlyScalar::parse(ct).zip(PlyScalar::parse(it)).ok_or_else(|| FormatError::Format(format!("bad list types in {line:?}")))?;
                el.props.push(PlyProperty::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| FormatError::Format("property before element".into()))?;
                let ty = PlyScalar::parse(ty).ok_or_else(|| FormatError::Format(format!("bad property type {ty}")))?;
                el.props.push(PlyProperty::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(FormatError::Format(format!("unrecognised PLY header line {line:?}"))),
        }
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0f64; 3];
            for p in &el.props {
                match p {
                    PlyProperty::Scalar(name, ty) => {
                        let v = ty.read(&mut r)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    PlyProperty::List(name, ct, it) => {
                        let n = ct.read(&mut r)? as usize;
                        let mut poly = Vec::with_capacity(n);
                        for _ in 0..n {
                            let i = it.read(&mut r)?;
                            if i < 0.0 {
                                return Err(FormatError::Format("negative PLY face index".into()));
                            }
                            poly.push(i as usize);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") && n >= 3 {
                            for i in 1..n - 1 {
                                faces.push([poly[0], poly[i], poly[i + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

/// Writes a greyscale PFM (`Pf`), little-endian, rows bottom-to-top.
pub fn write_pfm<W: Write>(mut w: W, depth: &DepthMap) -> Result<()> {
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width, depth.height)?;
    let width = depth.width as usize;
    for row in depth.values.chunks(width).rev() {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm<R: BufRead>(mut r: R) -> Result<DepthMap> {
    let mut tokens = Vec::new();
    // Header is three whitespace-separated fields after the magic.
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(FormatError::Format("truncated PFM header".into()));
        }
        tokens.extend(line.split_whitespace().map(str::to_string));
    }
    if tokens[0] != "Pf" {
        return Err(FormatError::Format(format!("expected greyscale PFM, got {}", tokens[0])));
    }
    let parse_dim = |s: &str| s.parse::<u32>().map_err(|_| FormatError::Format(format!("bad PFM dimension {s}")));
    let (width, height) = (parse_dim(&tokens[1])?, parse_dim(&tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|_| FormatError::Format("bad PFM scale".into()))?;
    let little = scale < 0.0;
    let n = width as usize * height as usize;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let mut values = vec![0.0f32; n];
    let width_us = width as usize;
    for (row_idx, row) in raw.chunks(width_us * 4).enumerate() {
        let dst_row = height as usize - 1 - row_idx;
        for (i, b) in row.chunks(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            values[dst_row * width_us + i] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    DepthMap::from_values(width, height, values).map_err(|e| FormatError::Format(e.to_string()))
}

/// Raw row-major little-endian float32, no header.
pub fn write_f32_raw<W: Write>(mut w: W, depth: &DepthMap) -> Result<()> {
    for v in &depth.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f32_raw<R: Read>(mut r: R, width: u32, height: u32) -> Result<DepthMap> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let n = width as usize * height as usize;
    if raw.len() != n * 4 {
        return Err(FormatError::Format(format!("expected {} bytes for {width}x{height} f32 map, got {}", n * 4, raw.len())));
    }
    let values = raw.chunks(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    DepthMap::from_values(width, height, values).map_err(|e| FormatError::Format(e.to_string()))
}

/// Loads a depth map by extension: `.pfm` self-describing, `.f32` needs the size.
pub fn load_depth(path: &Path, width: u32, height: u32) -> Result<DepthMap> {
    let file = BufReader::new(fs::File::open(path)?);
    let map = match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm(file)?,
        Some("f32") => read_f32_raw(file, width, height)?,
        _ => return Err(FormatError::UnknownExtension(path.display().to_string())),
    };
    if !map.same_size(width, height) {
        return Err(FormatError::Format(format!("{}: depth map is {}x{}, expected {width}x{height}", path.display(), map.width, map.height)));
    }
    Ok(map)
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut out = Vec::with_capacity(depth.values.len() * 4 + 32);
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => write_pfm(&mut out, depth)?,
        Some("f32") => write_f32_raw(&mut out, depth)?,
        _ => return Err(FormatError::UnknownExtension(path.display().to_string())),
    }
    fs::write(path, out)?;
    Ok(())
}

/// Saves a mask as an 8-bit greyscale PNG with values 0 / 255.
pub fn save_mask_png(path: &Path, mask: &InstanceMask) -> Result<()> {
    let pixels = mask.values.iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width, mask.height, pixels).ok_or_else(|| FormatError::Format("mask buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Loads a PNG mask; any non-zero luma counts as foreground.
pub fn load_mask_png(path: &Path) -> Result<InstanceMask> {
    let img = image::open(path)?.into_luma8();
    let (width, height) = img.dimensions();
    Ok(InstanceMask { width, height, values: img.into_raw().into_iter().map(|v| v > 0).collect() })
}
