//! File formats: whitespace `.xyz` clouds (optional integer label per
//! line), binary little-endian PLY clouds, ASCII OBJ meshes and the
//! binary geodesic-table container (`LPIG`).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::extract::TriangleMesh;
use crate::geom::{GeodesicTable, PointCloud};
use crate::vec3::Vec3;

/// One "x y z [label]" line per point.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path)?;
    let mut points = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut labeled_lines = 0usize;
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 'x y z [label]', got {} fields",
                path.display(),
                ln + 1,
                fields.len()
            )));
        }
        let mut coords = [0.0f64; 3];
        for (i, f) in fields[..3].iter().enumerate() {
            coords[i] = f.parse().map_err(|_| {
                Error::Parse(format!("{}:{}: bad number '{f}'", path.display(), ln + 1))
            })?;
        }
        points.push(Vec3::from(coords));
        if fields.len() == 4 {
            let l: u32 = fields[3].parse().map_err(|_| {
                Error::Parse(format!(
                    "{}:{}: bad label '{}'",
                    path.display(),
                    ln + 1,
                    fields[3]
                ))
            })?;
            labels.push(l);
            labeled_lines += 1;
        }
    }
    if labeled_lines > 0 && labeled_lines != points.len() {
        return Err(Error::Parse(format!(
            "{}: {labeled_lines} of {} lines carry labels; all or none",
            path.display(),
            points.len()
        )));
    }
    PointCloud::new(points, (labeled_lines > 0).then_some(labels))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    match cloud.segment_labels() {
        Some(labels) => {
            for (p, l) in cloud.points().iter().zip(labels) {
                writeln!(out, "{} {} {} {}", p.x, p.y, p.z, l)?;
            }
        }
        None => {
            for p in cloud.points() {
                writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PlyType {
    F32,
    F64,
    I32,
    U8,
}

impl PlyType {
    fn size(self) -> usize {
        match self {
            PlyType::F32 | PlyType::I32 => 4,
            PlyType::F64 => 8,
            PlyType::U8 => 1,
        }
    }
}

fn ply_type(name: &str) -> Result<PlyType> {
    Ok(match name {
        "float" | "float32" => PlyType::F32,
        "double" | "float64" => PlyType::F64,
        "int" | "int32" | "uint" | "uint32" => PlyType::I32,
        "uchar" | "uint8" | "char" | "int8" => PlyType::U8,
        other => return Err(Error::Parse(format!("unsupported ply property type '{other}'"))),
    })
}

/// Binary little-endian PLY with float x/y/z vertex properties and an
/// optional int `segment` property. Only the vertex element is read.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut file = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    file.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Parse(format!("{}: missing ply magic", path.display())));
    }
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    let mut in_vertex_element = false;
    let mut format_seen = false;
    loop {
        line.clear();
        if file.read_line(&mut line)? == 0 {
            return Err(Error::Parse(format!("{}: truncated header", path.display())));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", kind, _] => {
                if *kind != "binary_little_endian" {
                    return Err(Error::Parse(format!(
                        "{}: only binary_little_endian ply is supported, got {kind}",
                        path.display()
                    )));
                }
                format_seen = true;
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse().map_err(|_| {
                    Error::Parse(format!("{}: bad vertex count '{n}'", path.display()))
                })?);
                in_vertex_element = true;
            }
            ["element", ..] => {
                if vertex_count.is_none() {
                    return Err(Error::Parse(format!(
                        "{}: vertex element must come first",
                        path.display()
                    )));
                }
                in_vertex_element = false;
            }
            ["property", ty, name] => {
                if in_vertex_element {
                    props.push((name.to_string(), ply_type(ty)?));
                }
            }
            ["property", "list", ..] => {}
            ["end_header"] => break,
            _ => {
                return Err(Error::Parse(format!(
                    "{}: unrecognized header line '{}'",
                    path.display(),
                    line.trim()
                )))
            }
        }
    }
    if !format_seen {
        return Err(Error::Parse(format!("{}: missing format line", path.display())));
    }
    let n = vertex_count
        .ok_or_else(|| Error::Parse(format!("{}: no vertex element", path.display())))?;
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let find = |name: &str| -> Option<(usize, PlyType)> {
        let mut off = 0usize;
        for (pname, ty) in &props {
            if pname == name {
                return Some((off, *ty));
            }
            off += ty.size();
        }
        None
    };
    let (x, xt) = find("x").ok_or_else(|| Error::Parse("ply: missing x".into()))?;
    let (y, yt) = find("y").ok_or_else(|| Error::Parse("ply: missing y".into()))?;
    let (z, zt) = find("z").ok_or_else(|| Error::Parse("ply: missing z".into()))?;
    let segment = find("segment");

    let mut buf = vec![0u8; stride];
    let mut points = Vec::with_capacity(n);
    let mut labels = segment.map(|_| Vec::with_capacity(n));
    let scalar = |buf: &[u8], off: usize, ty: PlyType| -> f64 {
        match ty {
            PlyType::F32 => f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()),
            PlyType::I32 => i32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64,
            PlyType::U8 => buf[off] as f64,
        }
    };
    for _ in 0..n {
        file.read_exact(&mut buf)?;
        points.push(Vec3::new(
            scalar(&buf, x, xt),
            scalar(&buf, y, yt),
            scalar(&buf, z, zt),
        ));
        if let (Some((off, ty)), Some(labels)) = (segment, labels.as_mut()) {
            let v = scalar(&buf, off, ty);
            if v < 0.0 {
                return Err(Error::Parse("ply: negative segment label".into()));
            }
            labels.push(v as u32);
        }
    }
    PointCloud::new(points, labels)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

/// ASCII OBJ: `v x y z` then 1-based `f i j k`.
pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let file = fs::File::open(path)?;
    let mut vertices = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| {
                        Error::Parse(format!("{}:{}: short vertex", path.display(), ln + 1))
                    })?;
                    *c = tok.parse().map_err(|_| {
                        Error::Parse(format!("{}:{}: bad coordinate '{tok}'", path.display(), ln + 1))
                    })?;
                }
                vertices.push(Vec3::from(coords));
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or(t);
                        let i: i64 = first.parse().map_err(|_| {
                            Error::Parse(format!(
                                "{}:{}: bad face index '{t}'",
                                path.display(),
                                ln + 1
                            ))
                        })?;
                        if i < 1 || i as usize > vertices.len() {
                            return Err(Error::Parse(format!(
                                "{}:{}: face index {i} out of range",
                                path.display(),
                                ln + 1
                            )));
                        }
                        Ok((i - 1) as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse(format!(
                        "{}:{}: face needs at least 3 vertices",
                        path.display(),
                        ln + 1
                    )));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // normals, texcoords, groups, materials: ignored
            Some(_) => {}
            None => {}
        }
    }
    if vertices.is_empty() {
        return Err(Error::Parse(format!("{}: no vertices", path.display())));
    }
    Ok(TriangleMesh { vertices, triangles, part_id: None })
}

const TABLE_MAGIC: &[u8; 4] = b"LPIG";

/// Binary geodesic table: magic `LPIG`, u32 I, u32 N, u32 knn_k, then
/// I*N row-major f64, all little-endian.
pub fn write_geodesic_table(path: &Path, table: &GeodesicTable) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(TABLE_MAGIC)?;
    out.write_all(&(table.center_count() as u32).to_le_bytes())?;
    out.write_all(&(table.point_count() as u32).to_le_bytes())?;
    out.write_all(&table.knn_k().to_le_bytes())?;
    for &v in table.raw() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_geodesic_table(path: &Path) -> Result<GeodesicTable> {
    let mut file = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != TABLE_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad table magic {magic:?}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let i = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf)?;
    let knn_k = u32::from_le_bytes(u32buf);
    let mut dist = Vec::with_capacity(i * n);
    let mut f64buf = [0u8; 8];
    for _ in 0..i * n {
        file.read_exact(&mut f64buf)?;
        dist.push(f64::from_le_bytes(f64buf));
    }
    Ok(GeodesicTable::new(i, n, knn_k, dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::farthest_point_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xyz_round_trip_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.xyz");
        let pts = vec![
            Vec3::new(0.25, -1.5, 3.125),
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(-0.1, 0.0, 0.7),
            Vec3::new(9.0, 8.0, 7.0),
        ];
        let cloud = PointCloud::new(pts, Some(vec![0, 1, 1, 0])).unwrap();
        write_xyz(&path, &cloud).unwrap();
        let back = read_xyz(&path).unwrap();
        assert_eq!(back.points(), cloud.points());
        assert_eq!(back.segment_labels(), cloud.segment_labels());
    }

    #[test]
    fn xyz_rejects_mixed_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "0 0 0\n1 0 0 2\n0 1 0\n0 0 1\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn xyz_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "0 0 zero\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.ply");
        let pts = [
            [0.5f32, 1.5, -2.5],
            [0.0, 0.0, 0.0],
            [1.0, 2.0, 3.0],
            [-1.0, -2.0, -3.0],
        ];
        let segs = [0i32, 1, 0, 1];
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"ply\n");
        bytes.extend_from_slice(b"format binary_little_endian 1.0\n");
        bytes.extend_from_slice(b"comment synthetic\n");
        bytes.extend_from_slice(format!("element vertex {}\n", pts.len()).as_bytes());
        bytes.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
        bytes.extend_from_slice(b"property int segment\n");
        bytes.extend_from_slice(b"end_header\n");
        for (p, s) in pts.iter().zip(&segs) {
            for c in p {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.segment_labels().unwrap(), &[0, 1, 0, 1]);
        assert!((cloud.point(0).x - 0.5).abs() < 1e-7);
        assert!((cloud.point(0).z + 2.5).abs() < 1e-7);
    }

    #[test]
    fn ply_rejects_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.ply");
        fs::write(
            &path,
            b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
        )
        .unwrap();
        assert!(matches!(read_ply(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.12345678901234567, -2.0, 0.5),
            ],
            triangles: vec![[0, 1, 2], [1, 3, 2]],
            part_id: None,
        };
        write_obj(&path, &mesh).unwrap();
        let back = read_obj(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.triangles, mesh.triangles);
    }

    #[test]
    fn obj_rejects_bad_face() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        fs::write(&path, "v 0 0 0\nv 1 0 0\nf 1 2 5\n").unwrap();
        assert!(matches!(read_obj(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn geodesic_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.lpig");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..25)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let centers = farthest_point_sample(&cloud, 4, 0).unwrap();
        let table = crate::geom::build_geodesic_table(&cloud, &centers, 5).unwrap();
        write_geodesic_table(&path, &table).unwrap();
        let back = read_geodesic_table(&path).unwrap();
        assert_eq!(back, table);
    }
}
