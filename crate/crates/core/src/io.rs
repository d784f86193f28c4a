//! OFF, ASCII PLY and XYZ readers and writers.
//!
//! Coordinates are written in Rust's shortest round-trip decimal form, so a
//! write followed by a read reproduces every value exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::{Mesh, PointCloud};
use crate::error::{Error, Result};
use crate::se3::Vec3;

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite coordinate `{tok}`")));
    }
    Ok(v)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("`{tok}` is not a non-negative integer")))
}

fn parse_xyz_tokens(toks: &[&str], line: usize) -> Result<Vec3> {
    if toks.len() < 3 {
        return Err(Error::parse(line, format!("expected 3 coordinates, found {}", toks.len())));
    }
    Ok(Vec3::new(
        parse_f64(toks[0], line)?,
        parse_f64(toks[1], line)?,
        parse_f64(toks[2], line)?,
    ))
}

/// Parses an OFF mesh. Accepts the header keyword fused with the counts
/// (`OFF4 4 0`) as found in some ModelNet files. Polygons with more than
/// three vertices are fan-triangulated.
pub fn parse_off(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(1, format!("not UTF-8: {e}")))?;
    let mut lines = content_lines(text);
    let last_line = text.lines().count();
    let eof = |what: &str| Error::parse(last_line + 1, format!("unexpected end of file, expected {what}"));

    let (hl, header) = lines.next().ok_or_else(|| eof("OFF header"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(hl, format!("expected `OFF`, found `{header}`")))?
        .trim();
    let (cl, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| eof("vertex and face counts"))?
    } else {
        (hl, rest)
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(Error::parse(cl, format!("expected vertex and face counts, found `{counts}`")));
    }
    let nv = parse_usize(toks[0], cl)?;
    let nf = parse_usize(toks[1], cl)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines.next().ok_or_else(|| eof("vertex"))?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        vertices.push(parse_xyz_tokens(&toks, l)?);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = lines.next().ok_or_else(|| eof("face"))?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        let k = parse_usize(toks.first().copied().unwrap_or(""), l)?;
        if k < 3 || toks.len() < k + 1 {
            return Err(Error::parse(l, format!("face needs at least 3 indices, got `{s}`")));
        }
        let idx = toks[1..=k]
            .iter()
            .map(|t| {
                let i = parse_usize(t, l)?;
                if i >= nv {
                    return Err(Error::parse(l, format!("vertex index {i} out of range (have {nv})")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<_>>>()?;
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Mesh::new(vertices, faces)
}

/// One `x y z` per line; further columns are ignored.
pub fn read_xyz(text: &str) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (l, s) in content_lines(text) {
        let toks: Vec<&str> = s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
        pts.push(parse_xyz_tokens(&toks, l)?);
    }
    if pts.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(pts)
}

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

/// Reads the vertex positions of an ASCII PLY file. Vertex properties other
/// than `x y z` and elements other than `vertex` are skipped; each skipped
/// vertex property produces a warning string.
pub fn read_ply_ascii(text: &str) -> Result<(PointCloud, Vec<String>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let last_line = text.lines().count();
    let eof = |what: &str| Error::parse(last_line + 1, format!("unexpected end of file, expected {what}"));
    let (l, magic) = lines.next().ok_or_else(|| eof("`ply`"))?;
    if magic != "ply" {
        return Err(Error::parse(l, format!("expected `ply`, found `{magic}`")));
    }
    // (name, count, properties)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut ascii = false;
    loop {
        let (l, s) = lines.next().ok_or_else(|| eof("`end_header`"))?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::parse(l, format!("unsupported PLY format `{fmt}`")));
                }
                ascii = true;
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push((name.to_string(), parse_usize(count, l)?, Vec::new())),
            ["property", "list", .., name] | ["property", _, name] => match elements.last_mut() {
                Some(e) => e.2.push(name.to_string()),
                None => return Err(Error::parse(l, "property before any element")),
            },
            _ => return Err(Error::parse(l, format!("unrecognized header line `{s}`"))),
        }
    }
    if !ascii {
        return Err(Error::parse(1, "missing `format ascii 1.0` line"));
    }
    let mut warnings = Vec::new();
    let mut pts = Vec::new();
    let mut found = false;
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                lines.next().ok_or_else(|| eof(&format!("{name} data")))?;
            }
            continue;
        }
        found = true;
        let pos = |axis: &str| {
            props
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| Error::parse(1, format!("vertex element lacks property `{axis}`")))
        };
        let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
        for p in props.iter().filter(|p| !["x", "y", "z"].contains(&p.as_str())) {
            let msg = format!("ignoring vertex property `{p}`");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        for _ in 0..*count {
            let (l, s) = lines.next().ok_or_else(|| eof("vertex data"))?;
            let toks: Vec<&str> = s.split_whitespace().collect();
            if toks.len() < props.len() {
                return Err(Error::parse(l, format!("expected {} values, found {}", props.len(), toks.len())));
            }
            pts.push(Vec3::new(parse_f64(toks[ix], l)?, parse_f64(toks[iy], l)?, parse_f64(toks[iz], l)?));
        }
    }
    if !found {
        return Err(Error::parse(1, "no vertex element"));
    }
    if pts.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok((PointCloud::new(pts)?, warnings))
}

pub fn write_ply_ascii(cloud: &PointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    s.push_str(&write_xyz(cloud));
    s
}

/// Loads a cloud by extension: `.xyz`/`.txt`, `.ply`, or `.off` (mesh
/// vertices).
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let bytes = std::fs::read(path)?;
    match ext.as_str() {
        "ply" => Ok(read_ply_ascii(&String::from_utf8_lossy(&bytes))?.0),
        "off" => PointCloud::new(parse_off(&bytes)?.vertices().to_vec()),
        _ => read_xyz(&String::from_utf8_lossy(&bytes)),
    }
}

/// Writes `.ply` as ASCII PLY and anything else as XYZ.
pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let text = if ext == "ply" { write_ply_ascii(cloud) } else { write_xyz(cloud) };
    std::fs::write(path, text)?;
    Ok(())
}
