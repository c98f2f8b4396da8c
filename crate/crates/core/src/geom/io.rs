//! ASCII OBJ and PLY mesh I/O.
//!
//! Loaders accept triangle faces only and recompute vertex normals from the
//! geometry, so a loaded mesh always satisfies the `TriangleMesh` invariants.
//! Writers print floats with Rust's shortest round-trip formatting, which
//! makes save/load round trips bit-exact.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{GeomError, TriangleMesh, Vec3};

pub fn load_mesh(path: &Path) -> Result<TriangleMesh, GeomError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply(path),
        other => Err(GeomError::Parse {
            line: 0,
            message: format!("unsupported mesh extension {other:?} (expected obj or ply)"),
        }),
    }
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh, GeomError> {
    let file = std::fs::File::open(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => vertices.push(parse_vec3(tokens, lineno)?),
            Some("f") => {
                let indices: Vec<usize> = tokens
                    .map(|tok| parse_face_vertex(tok, lineno, vertices.len()))
                    .collect::<Result<_, _>>()?;
                if indices.len() != 3 {
                    return Err(GeomError::NonTriangleFace {
                        count: indices.len(),
                        line: lineno,
                    });
                }
                triangles.push([indices[0], indices[1], indices[2]]);
            }
            // vn/vt/comments/groups carry nothing we keep.
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), GeomError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for n in &mesh.vertex_normals {
        writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
    }
    for [a, b, c] in &mesh.triangles {
        writeln!(
            out,
            "f {0}//{0} {1}//{1} {2}//{2}",
            a + 1,
            b + 1,
            c + 1
        )?;
    }
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<TriangleMesh, GeomError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let mut vertex_count = None;
    let mut face_count = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;

    let header_err = |line: usize, message: &str| GeomError::Parse {
        line,
        message: message.to_string(),
    };

    let (n, line) = lines
        .next()
        .ok_or_else(|| header_err(1, "empty file"))
        .and_then(|(n, l)| Ok((n + 1, l?)))?;
    if line.trim() != "ply" {
        return Err(header_err(n, "missing ply magic"));
    }

    loop {
        let (n, line) = lines
            .next()
            .ok_or_else(|| header_err(0, "unterminated header"))
            .and_then(|(n, l)| Ok((n + 1, l?)))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] | ["comment", ..] => {}
            ["format", other, ..] => {
                return Err(header_err(n, &format!("unsupported ply format {other}")))
            }
            ["element", "vertex", count] => {
                vertex_count = Some(count.parse().map_err(|_| header_err(n, "bad vertex count"))?);
                in_vertex_element = true;
            }
            ["element", "face", count] => {
                face_count = Some(count.parse().map_err(|_| header_err(n, "bad face count"))?);
                in_vertex_element = false;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", "list", ..] => {}
            ["property", _ty, name] if in_vertex_element => vertex_props.push(name.to_string()),
            ["property", ..] => {}
            _ => return Err(header_err(n, "unrecognized header line")),
        }
    }

    let vertex_count = vertex_count.ok_or_else(|| header_err(0, "missing vertex element"))?;
    let face_count = face_count.ok_or_else(|| header_err(0, "missing face element"))?;
    let pos = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| header_err(0, &format!("missing vertex property {name}")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);

    let mut vertices = Vec::with_capacity(vertex_count);
    for _ in 0..vertex_count {
        let (n, line) = lines
            .next()
            .ok_or_else(|| header_err(0, "truncated vertex data"))
            .and_then(|(n, l)| Ok((n + 1, l?)))?;
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| header_err(n, &format!("bad vertex value: {e}")))?;
        if fields.len() < vertex_props.len() {
            return Err(header_err(n, "short vertex line"));
        }
        vertices.push(Vec3::new(fields[ix], fields[iy], fields[iz]));
    }

    let mut triangles = Vec::with_capacity(face_count);
    for _ in 0..face_count {
        let (n, line) = lines
            .next()
            .ok_or_else(|| header_err(0, "truncated face data"))
            .and_then(|(n, l)| Ok((n + 1, l?)))?;
        let fields: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| header_err(n, &format!("bad face value: {e}")))?;
        let (&count, indices) = fields
            .split_first()
            .ok_or_else(|| header_err(n, "empty face line"))?;
        if count != 3 || indices.len() != 3 {
            return Err(GeomError::NonTriangleFace {
                count: count.max(indices.len()),
                line: n,
            });
        }
        triangles.push([indices[0], indices[1], indices[2]]);
    }

    TriangleMesh::new(vertices, triangles)
}

pub fn save_ply(mesh: &TriangleMesh, path: &Path) -> Result<(), GeomError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(out, "property double {name}")?;
    }
    writeln!(out, "element face {}", mesh.triangles.len())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;
    for (v, n) in mesh.vertices.iter().zip(&mesh.vertex_normals) {
        writeln!(out, "{} {} {} {} {} {}", v.x, v.y, v.z, n.x, n.y, n.z)?;
    }
    for [a, b, c] in &mesh.triangles {
        writeln!(out, "3 {a} {b} {c}")?;
    }
    Ok(())
}

fn parse_vec3<'a>(
    mut tokens: impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<Vec3, GeomError> {
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| GeomError::Parse {
                line,
                message: format!("missing {what} coordinate"),
            })?
            .parse::<f64>()
            .map_err(|e| GeomError::Parse {
                line,
                message: format!("bad {what} coordinate: {e}"),
            })
    };
    Ok(Vec3::new(next("x")?, next("y")?, next("z")?))
}

/// OBJ face vertices come as `i`, `i/t`, `i//n` or `i/t/n`, all 1-based.
fn parse_face_vertex(token: &str, line: usize, count: usize) -> Result<usize, GeomError> {
    let first = token.split('/').next().unwrap_or("");
    let idx: isize = first.parse().map_err(|e| GeomError::Parse {
        line,
        message: format!("bad face index {token:?}: {e}"),
    })?;
    if idx < 1 || idx as usize > count {
        return Err(GeomError::Parse {
            line,
            message: format!("face index {idx} out of range 1..={count}"),
        });
    }
    Ok(idx as usize - 1)
}
