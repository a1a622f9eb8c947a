//! Wavefront OBJ subset: `v`, `vt`, `vn` and `f` records.
//!
//! Polygons are fan-triangulated from their first corner. A vertex referenced
//! with more than one texture coordinate is split; the first pairing keeps the
//! original index and later ones are appended. `vn` records are checked for
//! syntax but normals are always recomputed from geometry.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::error::AssetError;
use crate::math::Vec3;
use crate::mesh::Mesh;

type Res<T> = std::result::Result<T, AssetError>;

fn floats<const N: usize>(line: usize, parts: &[&str]) -> Res<[f64; N]> {
    if parts.len() < N {
        return Err(AssetError::syntax_at_line(line, format!("expected {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .map_err(|_| AssetError::syntax_at_line(line, format!("bad number {p:?}")))?;
        if !o.is_finite() {
            return Err(AssetError::syntax_at_line(line, format!("non-finite number {p:?}")));
        }
    }
    Ok(out)
}

/// Resolves a 1-based or negative (relative) OBJ index.
fn index(line: usize, s: &str, count: usize) -> Res<usize> {
    let i: i64 = s
        .parse()
        .map_err(|_| AssetError::syntax_at_line(line, format!("bad index {s:?}")))?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(AssetError::syntax_at_line(
            line,
            format!("index {i} out of range (count {count})"),
        ));
    }
    Ok(resolved as usize)
}

pub fn parse_obj(text: &str) -> Res<Mesh> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut normal_count = 0usize;
    // (line, corners as (vertex, texcoord))
    let mut polys: Vec<(usize, Vec<(usize, Option<usize>)>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let parts: Vec<&str> = content.split_whitespace().collect();
        let Some((&tag, rest)) = parts.split_first() else {
            continue;
        };
        match tag {
            "v" => positions.push(Vec3::from(floats::<3>(line, rest)?)),
            "vt" => texcoords.push(floats::<2>(line, rest)?),
            "vn" => {
                floats::<3>(line, rest)?;
                normal_count += 1;
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(AssetError::syntax_at_line(line, "face needs at least 3 corners"));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for c in rest {
                    let mut it = c.split('/');
                    let v = index(line, it.next().unwrap_or(""), positions.len())?;
                    let t = match it.next() {
                        None | Some("") => None,
                        Some(t) => Some(index(line, t, texcoords.len())?),
                    };
                    if let Some(n) = it.next().filter(|n| !n.is_empty()) {
                        index(line, n, normal_count)?;
                    }
                    if it.next().is_some() {
                        return Err(AssetError::syntax_at_line(line, format!("bad face corner {c:?}")));
                    }
                    corners.push((v, t));
                }
                polys.push((line, corners));
            }
            "o" | "g" | "s" | "usemtl" | "mtllib" | "l" | "p" => {}
            other => {
                return Err(AssetError::syntax_at_line(
                    line,
                    format!("unsupported record {other:?}"),
                ))
            }
        }
    }

    let textured = polys.iter().any(|(_, c)| c.iter().any(|x| x.1.is_some()));
    let mut vertices = positions.clone();
    let mut uv = vec![[0.0; 2]; positions.len()];
    let mut first_tc: Vec<Option<usize>> = vec![None; positions.len()];
    let mut split: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::new();
    for (line, corners) in &polys {
        let mut ids = Vec::with_capacity(corners.len());
        for &(v, t) in corners {
            let id = match (textured, t) {
                (false, _) => v,
                (true, None) => {
                    return Err(AssetError::syntax_at_line(
                        *line,
                        "face mixes textured and untextured corners",
                    ))
                }
                (true, Some(t)) => match first_tc[v] {
                    None => {
                        first_tc[v] = Some(t);
                        uv[v] = texcoords[t];
                        v
                    }
                    Some(t0) if t0 == t => v,
                    Some(_) => *split.entry((v, t)).or_insert_with(|| {
                        vertices.push(positions[v]);
                        uv.push(texcoords[t]);
                        vertices.len() - 1
                    }),
                },
            };
            ids.push(id as u32);
        }
        for k in 1..ids.len() - 1 {
            faces.push([ids[0], ids[k], ids[k + 1]]);
        }
    }
    Mesh::new(vertices, faces, textured.then_some(uv)).map_err(AssetError::from)
}

/// Writes vertices, texture coordinates (when present) and faces. Numbers use
/// the shortest representation that parses back to the same value.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    if let Some(uv) = &mesh.uv {
        for t in uv {
            let _ = writeln!(s, "vt {:?} {:?}", t[0], t[1]);
        }
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if mesh.uv.is_some() {
            let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}
