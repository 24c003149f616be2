//! PLY point reader (ASCII and binary little-endian) and ASCII writer.
//!
//! Only `x`, `y`, `z` of the `vertex` element are read; every other
//! property and element is parsed and discarded.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Line number of the first body line (ASCII diagnostics).
    body_line: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(line_no + 1, "unterminated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| err(line_no + 1, "header is not valid text".into()))?
            .trim_end_matches('\r');
        offset += nl + 1;
        line_no += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if tokens != ["ply"] {
                return Err(err(1, "missing 'ply' magic".into()));
            }
            continue;
        }
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, _version] => {
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(err(line_no, format!("unsupported format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| err(line_no, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let count = Scalar::parse(count)
                    .ok_or_else(|| err(line_no, format!("unknown type '{count}'")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| err(line_no, format!("unknown type '{item}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err(line_no, "property before element".into()))?
                    .props
                    .push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| err(line_no, format!("unknown type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err(line_no, "property before element".into()))?
                    .props
                    .push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
            }
            ["end_header"] => break,
            _ => return Err(err(line_no, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| err(line_no, "missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        body: offset,
        body_line: line_no + 1,
    })
}

/// Positions of x, y, z within the vertex element's property list.
fn xyz_slots(path: &Path, vertex: &Element) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (k, p) in vertex.props.iter().enumerate() {
        if let Property::Scalar { name, ty } = p {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !ty.is_float() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("vertex property '{name}' must be float or double"),
                });
            }
            slots[axis] = k;
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "vertex element lacks x/y/z".into(),
        });
    }
    Ok(slots)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

pub(crate) fn parse_ply(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(path, bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no vertex element".into(),
        })?;
    let slots = xyz_slots(path, &header.elements[vertex_pos])?;
    let body = &bytes[header.body..];
    let points = match header.format {
        Format::Ascii => read_ascii_body(path, &header, body, vertex_pos, slots)?,
        Format::BinaryLe => read_binary_body(path, &header, body, vertex_pos, slots)?,
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PointCloud::new(id, points).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

fn read_ascii_body(
    path: &Path,
    header: &Header,
    body: &[u8],
    vertex_pos: usize,
    slots: [usize; 3],
) -> Result<Vec<Point>> {
    let text = std::str::from_utf8(body).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: header.body_line,
        message: "body is not valid text".into(),
    })?;
    let tokens: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .flat_map(|(ln, l)| l.split_whitespace().map(move |t| (ln + header.body_line, t)))
        .collect();
    let mut cursor = 0usize;
    let mut next = |what: &str| -> Result<(usize, f64)> {
        let &(ln, tok) = tokens.get(cursor).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: tokens.last().map_or(header.body_line, |t| t.0),
            message: format!("unexpected end of data reading {what}"),
        })?;
        cursor += 1;
        let v = tok.parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: ln,
            message: format!("bad number '{tok}' in {what}"),
        })?;
        Ok((ln, v))
    };
    let mut points = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { .. } => {
                        let (_, v) = next(&el.name)?;
                        if ei == vertex_pos {
                            if let Some(axis) = slots.iter().position(|&s| s == k) {
                                xyz[axis] = v;
                            }
                        }
                    }
                    Property::List { .. } => {
                        let (ln, n) = next(&el.name)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(Error::Parse {
                                path: path.to_path_buf(),
                                line: ln,
                                message: format!("bad list length {n}"),
                            });
                        }
                        for _ in 0..n as usize {
                            next(&el.name)?;
                        }
                    }
                }
            }
            if ei == vertex_pos {
                points.push(Point::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok(points)
}

fn read_binary_body(
    path: &Path,
    header: &Header,
    body: &[u8],
    vertex_pos: usize,
    slots: [usize; 3],
) -> Result<Vec<Point>> {
    let truncated = || Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "truncated binary body".into(),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let mut points = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for (k, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = ty.read_le(take(ty.size())?);
                        if ei == vertex_pos {
                            if let Some(axis) = slots.iter().position(|&s| s == k) {
                                xyz[axis] = v;
                            }
                        }
                    }
                    Property::List { count, item } => {
                        let n = count.read_le(take(count.size())?);
                        if n < 0.0 {
                            return Err(truncated());
                        }
                        take(n as usize * item.size())?;
                    }
                }
            }
            if ei == vertex_pos {
                points.push(Point::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok(points)
}

/// ASCII PLY with `double` coordinates and, optionally, an `int` property
/// per vertex (e.g. a symmetry class label).
pub fn ply_string(cloud: &PointCloud, labels: Option<(&str, &[usize])>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment id {}", cloud.id());
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if let Some((name, _)) = labels {
        let _ = writeln!(s, "property int {name}");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some((_, l)) = labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, ply_string(cloud, None)).map_err(|e| Error::io(path, e))
}

pub fn write_ply_with_labels(
    path: &Path,
    cloud: &PointCloud,
    name: &str,
    labels: &[usize],
) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(Error::param("label count differs from point count"));
    }
    std::fs::write(path, ply_string(cloud, Some((name, labels)))).map_err(|e| Error::io(path, e))
}
