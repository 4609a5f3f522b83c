//! PLY point clouds: ASCII and binary (either endianness) input, binary
//! little-endian output. Only the `vertex` element is read; other elements
//! and properties are skipped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gauss::{logit, sh_len, GaussianCommon, StaticGaussian};
use crate::quat::Quat;
use crate::sh::rgb_to_dc;

/// Opacity given to freshly seeded Gaussians.
pub const SEED_OPACITY: f64 = 0.1;
/// Isotropic scale for a cloud with a single point.
pub const SINGLE_POINT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

    /// Full-scale value for color normalization.
    fn color_scale(self) -> f64 {
        match self {
            Scalar::U8 => 255.0,
            Scalar::I8 => 127.0,
            Scalar::U16 => 65535.0,
            Scalar::I16 => 32767.0,
            Scalar::U32 => u32::MAX as f64,
            Scalar::I32 => i32::MAX as f64,
            Scalar::F32 | Scalar::F64 => 1.0,
        }
    }

    fn read(self, b: &[u8], le: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if le { <$t>::from_le_bytes(arr) } else { <$t>::from_be_bytes(arr) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
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

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| perr(start, "unterminated header"))?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end]).map_err(|_| perr(start, "header is not UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };
    let (_, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(perr(0, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(perr(at, format!("unknown format '{other}'"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| perr(at, format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _name] => {
                let count = Scalar::parse(c).ok_or_else(|| perr(at, format!("unknown type '{c}'")))?;
                let item = Scalar::parse(i).ok_or_else(|| perr(at, format!("unknown type '{i}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| perr(at, "property before any element"))?
                    .props
                    .push(Property::List { count, item });
            }
            ["property", t, name] => {
                let ty = Scalar::parse(t).ok_or_else(|| perr(at, format!("unknown type '{t}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| perr(at, "property before any element"))?
                    .props
                    .push(Property::Scalar { name: name.to_string(), ty });
            }
            _ => return Err(perr(at, format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| perr(0, "missing format line"))?;
    Ok(Header { format, elements, body: pos })
}

/// Indices of x, y, z, red, green, blue among an element's scalar values.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<([usize; 3], f64)>,
}

fn vertex_layout(el: &Element, at: usize) -> Result<VertexLayout> {
    let find = |n: &str| {
        el.props.iter().enumerate().find_map(|(i, p)| match p {
            Property::Scalar { name, ty } if name == n => Some((i, *ty)),
            _ => None,
        })
    };
    let mut xyz = [0; 3];
    for (k, n) in ["x", "y", "z"].iter().enumerate() {
        xyz[k] = find(n).ok_or_else(|| perr(at, format!("vertex element lacks '{n}'")))?.0;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some(([r.0, g.0, b.0], r.1.color_scale())),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn push_vertex(cloud: &mut PointCloud, layout: &VertexLayout, values: &[f64]) {
    cloud.positions.push(layout.xyz.map(|i| values[i]));
    cloud.colors.push(match &layout.rgb {
        Some((idx, scale)) => idx.map(|i| (values[i] / scale).clamp(0.0, 1.0)),
        None => [0.5; 3],
    });
}

/// Parses a PLY file held in memory.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let mut cloud = PointCloud::default();
    let mut pos = header.body;
    for el in &header.elements {
        let layout = if el.name == "vertex" { Some(vertex_layout(el, header.body)?) } else { None };
        let mut values = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            match header.format {
                Format::Ascii => {
                    let start = pos;
                    let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
                    if start >= bytes.len() {
                        return Err(perr(start, format!("unexpected end of data in element '{}'", el.name)));
                    }
                    pos = (end + 1).min(bytes.len());
                    if layout.is_none() {
                        continue;
                    }
                    let line = std::str::from_utf8(&bytes[start..end]).map_err(|_| perr(start, "invalid UTF-8"))?;
                    let mut tokens = line.split_whitespace();
                    for (i, p) in el.props.iter().enumerate() {
                        let mut take = || -> Result<f64> {
                            let tok = tokens.next().ok_or_else(|| perr(start, "too few values on line"))?;
                            tok.parse::<f64>().map_err(|_| perr(start, format!("bad number '{tok}'")))
                        };
                        match p {
                            Property::Scalar { .. } => values[i] = take()?,
                            Property::List { .. } => {
                                let n = take()? as usize;
                                for _ in 0..n {
                                    take()?;
                                }
                            }
                        }
                    }
                }
                Format::BinaryLe | Format::BinaryBe => {
                    let le = header.format == Format::BinaryLe;
                    for (i, p) in el.props.iter().enumerate() {
                        match p {
                            Property::Scalar { ty, .. } => {
                                let sz = ty.size();
                                if pos + sz > bytes.len() {
                                    return Err(perr(pos, format!("truncated element '{}'", el.name)));
                                }
                                values[i] = ty.read(&bytes[pos..], le);
                                pos += sz;
                            }
                            Property::List { count, item } => {
                                if pos + count.size() > bytes.len() {
                                    return Err(perr(pos, "truncated list length"));
                                }
                                let n = count.read(&bytes[pos..], le) as usize;
                                pos += count.size() + n * item.size();
                                if pos > bytes.len() {
                                    return Err(perr(bytes.len(), "truncated list"));
                                }
                            }
                        }
                    }
                }
            }
            if let Some(l) = &layout {
                push_vertex(&mut cloud, l, &values);
            }
        }
    }
    Ok(cloud)
}

pub fn load_pointcloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let cloud = parse_ply(&bytes)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(cloud)
}

/// Writes `x y z` as doubles and colors as `uchar`, little-endian.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in c {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Log of the mean distance to the (up to) three nearest neighbours.
pub fn knn_log_scales(positions: &[[f64; 3]]) -> Vec<f64> {
    if positions.len() == 1 {
        return vec![SINGLE_POINT_SCALE.ln()];
    }
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in positions.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            let mean = found.iter().sum::<f64>() / found.len() as f64;
            mean.max(1e-7).ln()
        })
        .collect()
}

/// Static Gaussians seeded from a point cloud: isotropic kNN scale,
/// identity rotation, no drift, low opacity.
pub fn seed_statics(cloud: &PointCloud, sh_degree: usize) -> Result<Vec<StaticGaussian>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let scales = knn_log_scales(&cloud.positions);
    let n = sh_len(sh_degree);
    Ok(cloud
        .positions
        .iter()
        .zip(&cloud.colors)
        .zip(scales)
        .map(|((p, c), s)| {
            let mut sh = vec![0.0; n];
            for ch in 0..3 {
                sh[ch] = rgb_to_dc(c[ch]);
            }
            StaticGaussian {
                common: GaussianCommon {
                    scale: [s; 3],
                    rotation_base: Quat::IDENTITY,
                    opacity_base: logit(SEED_OPACITY),
                    sh_coeffs: sh,
                },
                pivot: *p,
                translation: [0.0; 3],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_ascii_point() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n1 2 3 255 0 0\n";
        let cloud = parse_ply(src).unwrap();
        assert_eq!(cloud.positions, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(cloud.colors, vec![[1.0, 0.0, 0.0]]);
        let seeds = seed_statics(&cloud, 0).unwrap();
        assert_eq!(seeds.len(), 1);
        assert_eq!(seeds[0].pivot, [1.0, 2.0, 3.0]);
        assert!((seeds[0].common.opacity() - 0.1).abs() < 1e-12);
        assert!((seeds[0].common.scale[0] - 0.01f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn skips_faces_and_extra_properties() {
        let src = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n9 0 0 0\n9 1 0 0\n3 0 1 1\n";
        let cloud = parse_ply(src).unwrap();
        assert_eq!(cloud.positions, vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(cloud.colors[0], [0.5; 3]);
    }

    #[test]
    fn binary_big_endian() {
        let mut src = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        for v in [1.5f32, -2.0, 0.25] {
            src.extend_from_slice(&v.to_be_bytes());
        }
        src.extend_from_slice(&[0, 51, 255]);
        let cloud = parse_ply(&src).unwrap();
        assert_eq!(cloud.positions, vec![[1.5, -2.0, 0.25]]);
        assert_eq!(cloud.colors, vec![[0.0, 0.2, 1.0]]);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut src = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        let body = src.len();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            src.extend_from_slice(&v.to_le_bytes());
        }
        match parse_ply(&src) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, body + 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_missing_coordinates() {
        assert!(matches!(parse_ply(b"plx\n"), Err(Error::Parse { offset: 0, .. })));
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(matches!(parse_ply(src), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        let cloud = parse_ply(src).unwrap();
        assert!(matches!(seed_statics(&cloud, 0), Err(Error::EmptyCloud)));
    }

    #[test]
    fn collinear_knn_scales() {
        // Each point only has two neighbours: the ends see {1, 2}, the middle {1, 1}.
        let s = knn_log_scales(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!((s[0] - 1.5f64.ln()).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
        assert!((s[2] - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        let cloud = PointCloud { positions: vec![[0.1, 0.2, 0.3], [-1.0, 5.0, 2.0]], colors: vec![[1.0, 0.0, 0.2], [0.0, 1.0, 1.0]] };
        write_ply(&path, &cloud).unwrap();
        let back = load_pointcloud(&path).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.colors, cloud.colors);
    }
}
