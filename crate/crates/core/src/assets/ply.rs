//! Binary little-endian PLY: a generic element reader plus mesh and Gaussian
//! splat layouts.
//!
//! Splat files carry one `vertex` element with float properties, in order:
//! `x y z opacity scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3 f_dc_0
//! f_dc_1 f_dc_2`. Opacity and scales are stored raw (logit and log),
//! rotations as `[w, x, y, z]`, colors as degree-0 spherical harmonic
//! coefficients. A skinning binding, when present, follows as a `skin`
//! element with `uchar`-counted lists `joint_index` (uint) and `joint_weight`
//! (float). Readers accept properties in any order and skip undeclared ones.

use super::error::AssetError;
use crate::gaussian::GaussianSet;
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::skinning::{SkinningWeights, K_MAX};

type Res<T> = std::result::Result<T, AssetError>;

const MAX_HEADER: usize = 1 << 16;
/// Zeroth-order real spherical harmonic.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Stored SH coefficients below this magnitude are written as zero, which
/// keeps save-load-save byte stable for colors at (or within 1e-7 of) 0.5.
const DC_FLUSH: f64 = 1e-6;

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
}

#[derive(Debug, Clone, PartialEq)]
pub enum Property {
    Scalar {
        name: String,
        ty: ScalarType,
    },
    List {
        name: String,
        count: ScalarType,
        item: ScalarType,
    },
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDecl {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

/// One decoded element: every property as `f64` values per record.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementData {
    pub decl: ElementDecl,
    /// `records[r][p]` holds the values of property `p` (one for scalars).
    pub records: Vec<Vec<Vec<f64>>>,
}

impl ElementData {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.decl.properties.iter().position(|p| p.name() == name)
    }

    fn scalar_columns(&self, names: &[&str]) -> Res<Vec<usize>> {
        names
            .iter()
            .map(|n| match self.column(n).map(|c| (c, &self.decl.properties[c])) {
                Some((c, Property::Scalar { .. })) => Ok(c),
                _ => Err(AssetError::invariant(format!(
                    "element {} lacks scalar property {n}",
                    self.decl.name
                ))),
            })
            .collect()
    }
}

pub fn parse_header(bytes: &[u8]) -> Res<(Vec<ElementDecl>, usize)> {
    const END: &[u8] = b"end_header\n";
    let limit = bytes.len().min(MAX_HEADER);
    let end = bytes[..limit]
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| AssetError::bounds_at(limit, "no end_header within the header limit"))?
        + END.len();
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|e| AssetError::bounds_at(e.valid_up_to(), "header is not UTF-8"))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(AssetError::syntax_at_line(1, "missing ply magic"));
    }
    let mut format_seen = false;
    let mut elements: Vec<ElementDecl> = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", "1.0"] => format_seen = true,
            ["format", other, ..] => {
                return Err(AssetError::syntax_at_line(ln, format!("unsupported format {other}")));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| AssetError::syntax_at_line(ln, format!("bad element count {count:?}")))?;
                elements.push(ElementDecl {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", c, t, name] => {
                let (Some(count), Some(item)) = (ScalarType::parse(c), ScalarType::parse(t)) else {
                    return Err(AssetError::syntax_at_line(ln, "bad list property types"));
                };
                if matches!(count, ScalarType::F32 | ScalarType::F64) {
                    return Err(AssetError::syntax_at_line(ln, "list count must be an integer type"));
                }
                let el = elements
                    .last_mut()
                    .ok_or_else(|| AssetError::syntax_at_line(ln, "property before element"))?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", t, name] => {
                let ty = ScalarType::parse(t).ok_or_else(|| AssetError::syntax_at_line(ln, format!("bad type {t}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| AssetError::syntax_at_line(ln, "property before element"))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => {
                return Err(AssetError::syntax_at_line(
                    ln,
                    format!("unrecognized header line {line:?}"),
                ))
            }
        }
    }
    if !format_seen {
        return Err(AssetError::syntax_at_line(
            2,
            "missing binary_little_endian format line",
        ));
    }
    Ok((elements, end))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Res<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(AssetError::bounds_at(
                self.pos,
                format!("need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, ty: ScalarType) -> Res<f64> {
        let b = self.take(ty.size())?;
        Ok(match ty {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

/// Decodes every declared element. Trailing bytes are an error.
pub fn parse_elements(bytes: &[u8]) -> Res<Vec<ElementData>> {
    let (decls, start) = parse_header(bytes)?;
    let mut cur = Cursor { bytes, pos: start };
    let mut out = Vec::with_capacity(decls.len());
    for decl in decls {
        // every record takes at least one byte, so this bounds the allocation
        let mut records = Vec::with_capacity(decl.count.min(bytes.len() - cur.pos));
        for _ in 0..decl.count {
            let mut rec = Vec::with_capacity(decl.properties.len());
            for p in &decl.properties {
                match p {
                    Property::Scalar { ty, .. } => rec.push(vec![cur.scalar(*ty)?]),
                    Property::List { count, item, .. } => {
                        let at = cur.pos;
                        let n = cur.scalar(*count)?;
                        if n < 0.0 {
                            return Err(AssetError::bounds_at(at, "negative list length"));
                        }
                        let n = n as usize;
                        let mut vals = Vec::with_capacity(n.min(bytes.len() - cur.pos));
                        for _ in 0..n {
                            vals.push(cur.scalar(*item)?);
                        }
                        rec.push(vals);
                    }
                }
            }
            records.push(rec);
        }
        out.push(ElementData { decl, records });
    }
    if cur.pos != bytes.len() {
        return Err(AssetError::bounds_at(
            cur.pos,
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    Ok(out)
}

fn element<'a>(els: &'a [ElementData], name: &str) -> Option<&'a ElementData> {
    els.iter().find(|e| e.decl.name == name)
}

fn header(elements: &[(&str, usize, &[&str])]) -> Vec<u8> {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    for (name, count, props) in elements {
        h += &format!("element {name} {count}\n");
        for p in *props {
            h += &format!("property {p}\n");
        }
    }
    h += "end_header\n";
    h.into_bytes()
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn write_mesh_ply(mesh: &Mesh) -> Vec<u8> {
    let mut vprops = vec!["float x", "float y", "float z"];
    if mesh.uv.is_some() {
        vprops.extend(["float u", "float v"]);
    }
    let mut out = header(&[
        ("vertex", mesh.vertices.len(), &vprops),
        ("face", mesh.faces.len(), &["list uchar uint vertex_indices"]),
    ]);
    for (i, v) in mesh.vertices.iter().enumerate() {
        v.iter().for_each(|c| put_f32(&mut out, *c));
        if let Some(uv) = &mesh.uv {
            uv[i].iter().for_each(|c| put_f32(&mut out, *c));
        }
    }
    for f in &mesh.faces {
        out.push(3);
        f.iter().for_each(|i| out.extend_from_slice(&i.to_le_bytes()));
    }
    out
}

pub fn parse_mesh_ply(bytes: &[u8]) -> Res<Mesh> {
    let els = parse_elements(bytes)?;
    let v = element(&els, "vertex").ok_or_else(|| AssetError::invariant("no vertex element"))?;
    let xyz = v.scalar_columns(&["x", "y", "z"])?;
    let vertices: Vec<Vec3> = v
        .records
        .iter()
        .map(|r| Vec3::new(r[xyz[0]][0], r[xyz[1]][0], r[xyz[2]][0]))
        .collect();
    let uv = match v.scalar_columns(&["u", "v"]) {
        Ok(c) => Some(v.records.iter().map(|r| [r[c[0]][0], r[c[1]][0]]).collect()),
        Err(_) => None,
    };
    let mut faces = Vec::new();
    if let Some(f) = element(&els, "face") {
        let col = f
            .column("vertex_indices")
            .or_else(|| f.column("vertex_index"))
            .ok_or_else(|| AssetError::invariant("face element lacks vertex_indices"))?;
        for (r, rec) in f.records.iter().enumerate() {
            let idx = &rec[col];
            if idx.len() < 3 {
                return Err(AssetError::invariant(format!("face {r} has {} corners", idx.len())));
            }
            if idx.iter().any(|i| *i < 0.0 || *i >= vertices.len() as f64) {
                return Err(AssetError::invariant(format!("face {r} references a missing vertex")));
            }
            for k in 1..idx.len() - 1 {
                faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
            }
        }
    }
    Mesh::new(vertices, faces, uv).map_err(AssetError::from)
}

const SPLAT_PROPS: [&str; 14] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1",
    "f_dc_2",
];

fn color_to_dc(c: f64) -> f64 {
    let d = (c - 0.5) / SH_C0;
    if d.abs() < DC_FLUSH {
        0.0
    } else {
        d
    }
}

/// Inverse of [`color_to_dc`]; values within 1e-6 outside `[0, 1]` come from
/// f32 rounding and are clamped back.
fn dc_to_color(d: f64) -> f64 {
    let c = 0.5 + SH_C0 * d;
    if (-1e-6..=1.0 + 1e-6).contains(&c) {
        c.clamp(0.0, 1.0)
    } else {
        c
    }
}

pub fn write_splat_ply(g: &GaussianSet) -> Vec<u8> {
    let vprops: Vec<String> = SPLAT_PROPS.iter().map(|p| format!("float {p}")).collect();
    let vprops: Vec<&str> = vprops.iter().map(String::as_str).collect();
    let skin: &[&str] = &["list uchar uint joint_index", "list uchar float joint_weight"];
    let mut decl: Vec<(&str, usize, &[&str])> = vec![("vertex", g.len(), &vprops)];
    if g.binding.is_some() {
        decl.push(("skin", g.len(), skin));
    }
    let mut out = header(&decl);
    for i in 0..g.len() {
        g.centers[i].iter().for_each(|v| put_f32(&mut out, *v));
        put_f32(&mut out, g.raw_opacity[i]);
        g.raw_scale[i].iter().for_each(|v| put_f32(&mut out, *v));
        g.rotations[i].iter().for_each(|v| put_f32(&mut out, *v));
        g.colors[i].iter().for_each(|c| put_f32(&mut out, color_to_dc(*c)));
    }
    if let Some(b) = &g.binding {
        for i in 0..g.len() {
            let row = b.row_vec(i);
            out.push(row.len() as u8);
            row.iter().for_each(|(j, _)| out.extend_from_slice(&j.to_le_bytes()));
            out.push(row.len() as u8);
            row.iter().for_each(|(_, w)| put_f32(&mut out, *w));
        }
    }
    out
}

pub fn parse_splat_ply(bytes: &[u8]) -> Res<GaussianSet> {
    let els = parse_elements(bytes)?;
    let v = element(&els, "vertex").ok_or_else(|| AssetError::invariant("no vertex element"))?;
    let c = v.scalar_columns(&SPLAT_PROPS)?;
    let mut g = GaussianSet::default();
    for r in &v.records {
        let f = |k: usize| r[c[k]][0];
        g.centers.push(Vec3::new(f(0), f(1), f(2)));
        g.raw_opacity.push(f(3));
        g.raw_scale.push([f(4), f(5), f(6)]);
        g.rotations.push([f(7), f(8), f(9), f(10)]);
        g.colors.push([f(11), f(12), f(13)].map(dc_to_color));
    }
    if let Some(s) = element(&els, "skin") {
        let (Some(ji), Some(jw)) = (s.column("joint_index"), s.column("joint_weight")) else {
            return Err(AssetError::invariant("skin element lacks joint_index or joint_weight"));
        };
        if s.records.len() != g.len() {
            return Err(AssetError::invariant(format!(
                "skin element has {} rows for {} gaussians",
                s.records.len(),
                g.len()
            )));
        }
        let mut rows = Vec::with_capacity(g.len());
        for (r, rec) in s.records.iter().enumerate() {
            let (idx, w) = (&rec[ji], &rec[jw]);
            if idx.len() != w.len() || idx.is_empty() || idx.len() > K_MAX {
                return Err(AssetError::invariant(format!("skin row {r} is malformed")));
            }
            if idx.windows(2).any(|p| p[0] >= p[1]) {
                return Err(AssetError::invariant(format!(
                    "skin row {r} joints are not strictly increasing"
                )));
            }
            rows.push(idx.iter().zip(w).map(|(j, w)| (*j as u32, *w)).collect());
        }
        g.binding = Some(SkinningWeights::from_rows(rows)?);
    }
    g.validate()?;
    Ok(g)
}
