//! Minimal PLY support for point clouds: a single `vertex` element with
//! scalar properties, in ASCII or binary little-endian encoding.
//!
//! Labeled scans use the properties `x y z` (double), `nx ny nz` (float),
//! `body visible_class hidden_class` (uchar; codes of the body, visible and
//! hidden layers of the fine-grained strategy, see
//! [`crate::layering::Strategy::S5`]) and `view` (ushort, index of the
//! scanner view that produced the point).

use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::layering::{decode, encode, CanonicalLabel, Decoded, Strategy, StrategyLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
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
    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I8 => "char",
            ScalarType::U8 => "uchar",
            ScalarType::I16 => "short",
            ScalarType::U16 => "ushort",
            ScalarType::I32 => "int",
            ScalarType::U32 => "uint",
            ScalarType::F32 => "float",
            ScalarType::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

impl FromStr for ScalarType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return Err(Error::Format(format!("unsupported PLY type '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyProperty {
    pub name: String,
    pub ty: ScalarType,
}

/// Vertex table held column-wise as `f64` (exact for every supported type).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub comments: Vec<String>,
    pub properties: Vec<PlyProperty>,
    pub columns: Vec<Vec<f64>>,
}

impl PlyData {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push_column(&mut self, name: &str, ty: ScalarType, values: Vec<f64>) -> Result<()> {
        if !self.columns.is_empty() && values.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "column '{name}' has {} values, table has {}",
                values.len(),
                self.len()
            )));
        }
        self.properties.push(PlyProperty { name: name.to_string(), ty });
        self.columns.push(values);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.properties.iter().position(|p| p.name == name).map(|i| self.columns[i].as_slice())
    }

    /// Value of a `comment key value` line.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
    }
}

fn write_scalar<W: Write>(w: &mut W, ty: ScalarType, v: f64) -> std::io::Result<()> {
    match ty {
        ScalarType::I8 => w.write_all(&(v as i8).to_le_bytes()),
        ScalarType::U8 => w.write_all(&(v as u8).to_le_bytes()),
        ScalarType::I16 => w.write_all(&(v as i16).to_le_bytes()),
        ScalarType::U16 => w.write_all(&(v as u16).to_le_bytes()),
        ScalarType::I32 => w.write_all(&(v as i32).to_le_bytes()),
        ScalarType::U32 => w.write_all(&(v as u32).to_le_bytes()),
        ScalarType::F32 => w.write_all(&(v as f32).to_le_bytes()),
        ScalarType::F64 => w.write_all(&v.to_le_bytes()),
    }
}

fn read_scalar(bytes: &[u8], ty: ScalarType) -> f64 {
    let b = |n: usize| -> [u8; 8] {
        let mut a = [0u8; 8];
        a[..n].copy_from_slice(&bytes[..n]);
        a
    };
    match ty {
        ScalarType::I8 => bytes[0] as i8 as f64,
        ScalarType::U8 => bytes[0] as f64,
        ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        ScalarType::I32 => i32::from_le_bytes(b(4)[..4].try_into().unwrap()) as f64,
        ScalarType::U32 => u32::from_le_bytes(b(4)[..4].try_into().unwrap()) as f64,
        ScalarType::F32 => f32::from_le_bytes(b(4)[..4].try_into().unwrap()) as f64,
        ScalarType::F64 => f64::from_le_bytes(b(8)),
    }
}

/// Writes `data` as a PLY file.
pub fn write_ply<W: Write>(mut w: W, data: &PlyData, format: PlyFormat) -> Result<()> {
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    for c in &data.comments {
        if c.contains('\n') {
            return Err(Error::InvalidArgument("PLY comments must be single lines".into()));
        }
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!("element vertex {}\n", data.len()));
    for p in &data.properties {
        header.push_str(&format!("property {} {}\n", p.ty.name(), p.name));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let n = data.len();
    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for i in 0..n {
                line.clear();
                for (k, (p, col)) in data.properties.iter().zip(&data.columns).enumerate() {
                    if k > 0 {
                        line.push(' ');
                    }
                    let v = col[i];
                    match p.ty {
                        // Shortest round-trip representation of the stored type.
                        ScalarType::F32 => line.push_str(&format!("{}", v as f32)),
                        ScalarType::F64 => line.push_str(&format!("{v}")),
                        _ => line.push_str(&format!("{}", v as i64)),
                    }
                }
                line.push('\n');
                w.write_all(line.as_bytes())?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = Vec::with_capacity(n * data.properties.iter().map(|p| p.ty.size()).sum::<usize>());
            for i in 0..n {
                for (p, col) in data.properties.iter().zip(&data.columns) {
                    write_scalar(&mut buf, p.ty, col[i])?;
                }
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the `vertex` element of a PLY file. Elements after it are ignored.
pub fn read_ply<R: BufRead>(mut r: R) -> Result<PlyData> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut data = PlyData::default();
    let mut count = None;
    let mut in_vertex = false;
    let mut vertex_seen = false;
    loop {
        let l = next_line(&mut r)?;
        let f: Vec<&str> = l.split_whitespace().collect();
        match f.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, ..] => return Err(Error::Format(format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] => {
                data.comments.push(l.split_once(' ').map_or("", |x| x.1).to_string())
            }
            ["element", name, n] => {
                if vertex_seen && *name != "vertex" && !in_vertex {
                    continue;
                }
                in_vertex = *name == "vertex";
                if in_vertex {
                    if vertex_seen {
                        return Err(Error::Format("duplicate vertex element".into()));
                    }
                    vertex_seen = true;
                    count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("bad count '{n}'")))?);
                } else if !vertex_seen {
                    return Err(Error::Format(format!("element '{name}' before vertex is not supported")));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Format("list properties on vertices are not supported".into()))
            }
            ["property", ty, name] if in_vertex => {
                data.properties.push(PlyProperty { name: name.to_string(), ty: ty.parse()? });
            }
            ["property", ..] => {}
            _ => return Err(Error::Format(format!("unrecognized header line '{l}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::Format("missing format line".into()))?;
    let n = count.ok_or_else(|| Error::Format("no vertex element".into()))?;
    let np = data.properties.len();
    data.columns = vec![Vec::with_capacity(n); np];
    match format {
        PlyFormat::Ascii => {
            let mut l = String::new();
            for i in 0..n {
                l.clear();
                if r.read_line(&mut l)? == 0 {
                    return Err(Error::Format(format!("file ends after {i} of {n} vertices")));
                }
                let vals: Vec<&str> = l.split_whitespace().collect();
                if vals.len() != np {
                    return Err(Error::Format(format!("vertex {i} has {} values, expected {np}", vals.len())));
                }
                for (k, v) in vals.iter().enumerate() {
                    let x: f64 = v.parse().map_err(|_| Error::Format(format!("bad number '{v}' at vertex {i}")))?;
                    if !data.properties[k].ty.is_float() && x.fract() != 0.0 {
                        return Err(Error::Format(format!("non-integer '{v}' in integer property")));
                    }
                    data.columns[k].push(x);
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = data.properties.iter().map(|p| p.ty.size()).sum();
            let mut buf = vec![0u8; stride * n];
            r.read_exact(&mut buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::Format("binary vertex data is truncated".into()),
                _ => Error::Io(e),
            })?;
            for row in buf.chunks_exact(stride.max(1)).take(n) {
                let mut off = 0;
                for (k, p) in data.properties.iter().enumerate() {
                    data.columns[k].push(read_scalar(&row[off..], p.ty));
                    off += p.ty.size();
                }
            }
        }
    }
    Ok(data)
}

/// Vertex table of a point cloud, with optional ground-truth labels.
pub fn cloud_to_ply(cloud: &PointCloud, labels: Option<&[CanonicalLabel]>, comments: Vec<String>) -> Result<PlyData> {
    let mut d = PlyData { comments, ..PlyData::default() };
    let coord = |k: usize, v: &[Vec3]| v.iter().map(|p| p[k]).collect::<Vec<f64>>();
    for (k, name) in ["x", "y", "z"].into_iter().enumerate() {
        d.push_column(name, ScalarType::F64, coord(k, &cloud.positions))?;
    }
    for (k, name) in ["nx", "ny", "nz"].into_iter().enumerate() {
        d.push_column(name, ScalarType::F32, coord(k, &cloud.normals))?;
    }
    if let Some(labels) = labels {
        if labels.len() != cloud.len() {
            return Err(Error::InvalidArgument("label count differs from point count".into()));
        }
        let enc = encode(labels, Strategy::S5)?;
        for (name, layer) in ["body", "visible_class", "hidden_class"].into_iter().zip(&enc.layers) {
            d.push_column(name, ScalarType::U8, layer.iter().map(|&c| c as f64).collect())?;
        }
    }
    if let Some(v) = &cloud.source_view {
        d.push_column("view", ScalarType::U16, v.iter().map(|&c| c as f64).collect())?;
    }
    Ok(d)
}

fn required<'a>(d: &'a PlyData, name: &str) -> Result<&'a [f64]> {
    d.column(name).ok_or_else(|| Error::Format(format!("PLY is missing property '{name}'")))
}

/// Point cloud and, if present, ground-truth labels from a vertex table.
/// Normals are renormalized after the single-precision round trip.
pub fn ply_to_cloud(d: &PlyData) -> Result<(PointCloud, Option<Vec<CanonicalLabel>>)> {
    let n = d.len();
    let [x, y, z] = ["x", "y", "z"].map(|k| required(d, k));
    let (x, y, z) = (x?, y?, z?);
    let positions: Vec<Vec3> = (0..n).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    let normals: Vec<Vec3> = match (d.column("nx"), d.column("ny"), d.column("nz")) {
        (Some(a), Some(b), Some(c)) => (0..n)
            .map(|i| {
                let v = Vec3::new(a[i], b[i], c[i]);
                let len = v.norm();
                if len > 0.0 { v / len } else { v }
            })
            .collect(),
        _ => return Err(Error::Format("PLY is missing normals".into())),
    };
    let view = d.column("view").map(|v| v.iter().map(|&c| c as u16).collect());
    let cloud = PointCloud::new(positions, normals, view)?;
    let labels = match (d.column("body"), d.column("visible_class"), d.column("hidden_class")) {
        (Some(b), Some(v), Some(h)) => {
            let to_u8 = |c: &[f64]| c.iter().map(|&x| x as u8).collect::<Vec<u8>>();
            let enc = StrategyLabels::new(Strategy::S5, vec![to_u8(b), to_u8(v), to_u8(h)])
                .map_err(|e| Error::Format(format!("bad label codes: {e}")))?;
            let out = decode(&enc)?;
            if let Some(&i) = out.inconsistent.first() {
                return Err(Error::Format(format!("vertex {i} carries an impossible label combination")));
            }
            let Decoded::Canonical(labels) = out.labels else { unreachable!("S5 decodes to canonical labels") };
            if let Some(i) = labels.iter().position(|l| !l.is_valid()) {
                return Err(Error::Format(format!("vertex {i} carries an impossible label {:?}", labels[i])));
            }
            Some(labels)
        }
        _ => None,
    };
    Ok((cloud, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garment::GarmentClass;

    fn sample() -> (PointCloud, Vec<CanonicalLabel>) {
        let positions = vec![Vec3::new(0.1, -0.2, 1.3), Vec3::new(1.0 / 3.0, 2.0, -7.5), Vec3::zeros()];
        let normals = vec![Vec3::x(), Vec3::new(0.6, 0.8, 0.0), -Vec3::z()];
        let labels = vec![
            CanonicalLabel::SKIN,
            CanonicalLabel::garment(false, GarmentClass::TShirt, Some(GarmentClass::LongPants)),
            CanonicalLabel::garment(true, GarmentClass::Skirt, None),
        ];
        (PointCloud::new(positions, normals, Some(vec![0, 5, 12])).unwrap(), labels)
    }

    #[test]
    fn round_trip_both_encodings() {
        let (cloud, labels) = sample();
        let d = cloud_to_ply(&cloud, Some(&labels), vec!["seed 7".into()]).unwrap();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply(&mut buf, &d, fmt).unwrap();
            let back = read_ply(&buf[..]).unwrap();
            assert_eq!(back.comment_value("seed"), Some("7"));
            let (c2, l2) = ply_to_cloud(&back).unwrap();
            assert_eq!(c2.positions, cloud.positions, "{fmt:?}");
            assert_eq!(c2.source_view, cloud.source_view);
            assert_eq!(l2.unwrap(), labels);
            for (a, b) in c2.normals.iter().zip(&cloud.normals) {
                assert!((a - b).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn header_is_readable_text() {
        let (cloud, labels) = sample();
        let d = cloud_to_ply(&cloud, Some(&labels), vec![]).unwrap();
        let mut buf = Vec::new();
        write_ply(&mut buf, &d, PlyFormat::Ascii).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\n"));
        assert!(text.contains("property uchar visible_class\n"));
        assert!(text.contains("property ushort view\n"));
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_ply(&b"plx\n"[..]).is_err());
        let truncated = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nend_header\n\0\0\0\0";
        assert!(matches!(read_ply(&truncated[..]), Err(Error::Format(_))));
        let bad_row = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1\n";
        assert!(read_ply(&bad_row[..]).is_err());
        let skirt_over_shorts = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar body\nproperty uchar visible_class\nproperty uchar hidden_class\nend_header\n0 0 0 1 0 0 0 6 2\n";
        let d = read_ply(&skirt_over_shorts[..]).unwrap();
        assert!(ply_to_cloud(&d).is_err());
    }

    #[test]
    fn ignores_trailing_elements() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n2.5\n";
        let d = read_ply(&text[..]).unwrap();
        assert_eq!(d.column("x").unwrap(), &[2.5]);
    }
}
