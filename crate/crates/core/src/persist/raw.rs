//! Raw point ingestion: ASCII XYZ and a binary little-endian PLY subset.
//!
//! XYZ lines hold `x y z`, `x y z nx ny nz` or `x y z nx ny nz r g b`, with
//! fields separated by any mix of spaces, tabs and commas. `#` starts a
//! comment; blank lines are ignored. All data lines share one field count.
//!
//! PLY input must be `binary_little_endian` with the vertex element first.
//! Vertices need float `x y z` and may carry float `nx ny nz` and uchar
//! `red green blue`; other scalar properties are skipped. Elements after
//! the vertices are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sorter::RawPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl BoundingBox {
    pub const UNIT: BoundingBox = BoundingBox {
        min: [0.0; 3],
        max: [1.0; 3],
    };

    pub fn of(points: impl IntoIterator<Item = [f32; 3]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BoundingBox { min: first, max: first };
        for p in it {
            b.min = std::array::from_fn(|i| b.min[i].min(p[i]));
            b.max = std::array::from_fn(|i| b.max[i].max(p[i]));
        }
        Some(b)
    }

    /// Side of the cube used for normalization; 1 for degenerate boxes.
    pub fn scale(&self) -> f32 {
        let s = (0..3).map(|i| self.max[i] - self.min[i]).fold(0.0, f32::max);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

/// A cloud normalized into the unit cube, with its original bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCloud {
    pub points: Vec<RawPoint>,
    pub bbox: BoundingBox,
}

impl RawCloud {
    pub fn has_normals(&self) -> bool {
        self.points.first().is_some_and(|p| p.normal.is_some())
    }

    pub fn has_colors(&self) -> bool {
        self.points.first().is_some_and(|p| p.color.is_some())
    }
}

/// Moves points into [0, 1]³ by their tight bounding box, scaling all axes
/// alike so shapes keep their proportions.
pub fn normalize(mut points: Vec<RawPoint>) -> Result<RawCloud> {
    let bbox = BoundingBox::of(points.iter().map(|p| p.position)).ok_or(Error::EmptyInput)?;
    let s = bbox.scale();
    for p in &mut points {
        for i in 0..3 {
            p.position[i] = ((p.position[i] - bbox.min[i]) / s).clamp(0.0, 1.0);
        }
    }
    Ok(RawCloud { points, bbox })
}

/// Reads a PLY or XYZ file, chosen by the `ply` magic, and normalizes it.
pub fn read_raw(path: &Path) -> Result<RawCloud> {
    let mut r = BufReader::new(File::open(path)?);
    let is_ply = r.fill_buf()?.starts_with(b"ply");
    let points = if is_ply { read_ply(r, path)? } else { read_xyz(r, path)? };
    normalize(points)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses XYZ text into raw, unnormalized points.
pub fn read_xyz(r: impl BufRead, path: &Path) -> Result<Vec<RawPoint>> {
    let mut points = Vec::new();
    let mut width = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let data = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = data
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        if !matches!(fields.len(), 3 | 6 | 9) {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 3, 6 or 9 fields, found {}", fields.len()),
            ));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("line has {} fields but earlier lines have {w}", fields.len()),
                ))
            }
            _ => {}
        }
        let float = |k: usize| -> Result<f32> {
            fields[k].parse::<f32>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                parse_err(
                    path,
                    lineno,
                    format!("field {} is not a finite number: {:?}", k + 1, fields[k]),
                )
            })
        };
        let byte = |k: usize| -> Result<u8> {
            fields[k].parse::<u8>().map_err(|_| {
                parse_err(
                    path,
                    lineno,
                    format!("field {} is not a color byte: {:?}", k + 1, fields[k]),
                )
            })
        };
        let position = [float(0)?, float(1)?, float(2)?];
        let normal = if fields.len() >= 6 {
            Some([float(3)?, float(4)?, float(5)?])
        } else {
            None
        };
        let color = if fields.len() == 9 {
            Some([byte(6)?, byte(7)?, byte(8)?])
        } else {
            None
        };
        points.push(RawPoint {
            position,
            normal,
            color,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" | "uchar" | "uint8" => Scalar::I8,
            "short" | "int16" | "ushort" | "uint16" => Scalar::I16,
            "int" | "int32" | "uint" | "uint32" => Scalar::I32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 => 1,
            Scalar::I16 => 2,
            Scalar::I32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

/// Parses a binary little-endian PLY into raw, unnormalized points.
pub fn read_ply(mut r: impl BufRead, path: &Path) -> Result<Vec<RawPoint>> {
    let mut lineno = 0;
    let mut next_line = |r: &mut dyn BufRead| -> Result<(usize, String)> {
        let mut s = String::new();
        if r.read_line(&mut s)? == 0 {
            return Err(parse_err(path, lineno + 1, "unexpected end of header"));
        }
        lineno += 1;
        Ok((lineno, s.trim_end().to_string()))
    };
    let (_, magic) = next_line(&mut r)?;
    if magic != "ply" {
        return Err(parse_err(path, 1, "missing ply magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0;
    let mut in_vertex = false;
    loop {
        let (at, line) = next_line(&mut r)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(parse_err(path, at, format!("unsupported PLY format {other}")));
            }
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(parse_err(path, at, "duplicate vertex element"));
                }
                let n = n
                    .parse()
                    .map_err(|_| parse_err(path, at, format!("bad vertex count {n}")))?;
                count = Some(n);
                in_vertex = true;
            }
            ["element", name, _] => {
                if count.is_none() {
                    return Err(parse_err(path, at, format!("element {name} precedes the vertices")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(path, at, "list properties on vertices are not supported"));
            }
            ["property", kind, name] if in_vertex => {
                let kind =
                    Scalar::parse(kind).ok_or_else(|| parse_err(path, at, format!("unknown property type {kind}")))?;
                props.push(Property {
                    name: name.to_string(),
                    kind,
                    offset: stride,
                });
                stride += kind.size();
            }
            ["property", ..] => {}
            _ => return Err(parse_err(path, at, format!("unrecognized header line {line:?}"))),
        }
    }
    let header_lines = lineno;
    let count = count.ok_or_else(|| parse_err(path, header_lines, "no vertex element"))?;
    let find = |names: &[&str], kind: Scalar| -> Result<Option<Vec<usize>>> {
        let found: Vec<Option<&Property>> = names.iter().map(|n| props.iter().find(|p| p.name == *n)).collect();
        if found.iter().all(Option::is_none) {
            return Ok(None);
        }
        found
            .into_iter()
            .zip(names)
            .map(|(p, n)| match p {
                Some(p) if p.kind == kind => Ok(p.offset),
                Some(_) => Err(parse_err(
                    path,
                    header_lines,
                    format!("property {n} has an unsupported type"),
                )),
                None => Err(parse_err(path, header_lines, format!("property {n} is missing"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    let pos =
        find(&["x", "y", "z"], Scalar::F32)?.ok_or_else(|| parse_err(path, header_lines, "vertices have no x y z"))?;
    let nrm = find(&["nx", "ny", "nz"], Scalar::F32)?;
    let rgb = find(&["red", "green", "blue"], Scalar::I8)?;
    let f = |buf: &[u8], at: usize| f32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
    let mut buf = vec![0u8; stride];
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let got = super::read_full(&mut r, &mut buf)?;
        if got < stride {
            return Err(parse_err(
                path,
                header_lines,
                format!("vertex data ends after {i} of {count} vertices"),
            ));
        }
        let position = [f(&buf, pos[0]), f(&buf, pos[1]), f(&buf, pos[2])];
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        points.push(RawPoint {
            position,
            normal: nrm.as_ref().map(|o| [f(&buf, o[0]), f(&buf, o[1]), f(&buf, o[2])]),
            color: rgb.as_ref().map(|o| [buf[o[0]], buf[o[1]], buf[o[2]]]),
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(points)
}

/// Writes points as a binary little-endian PLY, with normals and colors
/// when every point has them.
pub fn write_ply(mut w: impl Write, points: &[RawPoint]) -> Result<()> {
    let normals = !points.is_empty() && points.iter().all(|p| p.normal.is_some());
    let colors = !points.is_empty() && points.iter().all(|p| p.color.is_some());
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        points.len()
    );
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if normals {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if colors {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(points.len() * 27);
    for p in points {
        for c in p.position {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        if normals {
            for c in p.normal.unwrap() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        if colors {
            buf.extend_from_slice(&p.color.unwrap());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}
