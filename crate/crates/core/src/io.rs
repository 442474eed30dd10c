//! File formats: JSON scene files, binary grid files, text point clouds and
//! ASCII PLY export.
//!
//! Grid files are little-endian throughout:
//!
//! ```text
//! magic "TFOC" | u32 version | tag "GRID" / "PROB" / "DPTH" | u32 dims[3]
//! | f64 origin[3] | f64 extent[3] | u32 class count | payload
//! ```
//!
//! `GRID` payloads hold one `u8` label per voxel, `PROB` payloads `C + 1`
//! `f32` probabilities per voxel, both with x varying fastest. `DPTH`
//! stores a depth map with dims `(bins, width, height)`, the bin interval in
//! `extent[0]` and `f32` probabilities bin-fastest.

use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3};
use crate::primitives::{Primitive, PrimitiveKind, NUM_BASIS_FIELDS};
use crate::scene::{GridData, GridSpec, OpacityCoupling, Scene, SemanticGrid};
use crate::skeleton::{PointCloud, PointSource};

pub const SCENE_FILE_VERSION: u32 = 1;
pub const GRID_MAGIC: &[u8; 4] = b"TFOC";
pub const GRID_VERSION: u32 = 1;
pub const GRID_HEADER_LEN: usize = 76;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub kind: PrimitiveKind,
    pub m: [f64; 3],
    pub s: [f64; 3],
    /// `(w, x, y, z)`.
    pub rot: [f64; 4],
    pub opacity: f64,
    pub semantics: Vec<f64>,
    #[serde(default = "unit_eps")]
    pub eps: [f64; 2],
    #[serde(default = "zero_warp")]
    pub warp_weights: [f64; NUM_BASIS_FIELDS],
    pub nu: f64,
}

fn unit_eps() -> [f64; 2] {
    [1.0, 1.0]
}

fn zero_warp() -> [f64; NUM_BASIS_FIELDS] {
    [0.0; NUM_BASIS_FIELDS]
}

const PRIMITIVE_KEYS: [&str; 9] = ["kind", "m", "s", "rot", "opacity", "semantics", "eps", "warp_weights", "nu"];
const SCENE_KEYS: [&str; 5] = ["version", "num_classes", "class_names", "coupling", "primitives"];

impl From<&Primitive> for PrimitiveRecord {
    fn from(p: &Primitive) -> Self {
        PrimitiveRecord {
            kind: p.kind,
            m: p.center.0,
            s: p.scale.0,
            rot: p.rotation.as_array(),
            opacity: p.opacity,
            semantics: p.semantics.clone(),
            eps: [p.eps1, p.eps2],
            warp_weights: p.warp,
            nu: p.nu,
        }
    }
}

impl From<&PrimitiveRecord> for Primitive {
    fn from(r: &PrimitiveRecord) -> Self {
        Primitive {
            kind: r.kind,
            center: Vec3(r.m),
            scale: Vec3(r.s),
            rotation: Quaternion::from_array(r.rot),
            opacity: r.opacity,
            semantics: r.semantics.clone(),
            eps1: r.eps[0],
            eps2: r.eps[1],
            warp: r.warp_weights,
            nu: r.nu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub num_classes: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub coupling: OpacityCoupling,
    pub primitives: Vec<PrimitiveRecord>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, class_names: Vec<String>) -> Self {
        SceneFile {
            version: SCENE_FILE_VERSION,
            num_classes: scene.num_classes,
            class_names,
            coupling: scene.coupling,
            primitives: scene.primitives.iter().map(PrimitiveRecord::from).collect(),
        }
    }

    pub fn to_scene(&self) -> Result<Scene> {
        let scene = Scene {
            num_classes: self.num_classes,
            primitives: self.primitives.iter().map(Primitive::from).collect(),
            coupling: self.coupling,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Parses and validates a scene file. In strict mode unknown keys are
    /// errors; otherwise they are ignored.
    pub fn parse(text: &str, strict: bool) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::format(format!("scene file: {e}")))?;
        if strict {
            check_keys(&value, &SCENE_KEYS, "scene")?;
            if let Some(prims) = value.get("primitives").and_then(Value::as_array) {
                for (i, p) in prims.iter().enumerate() {
                    check_keys(p, &PRIMITIVE_KEYS, &format!("primitive {i}"))?;
                }
            }
        }
        let file: SceneFile = serde_json::from_value(value).map_err(|e| Error::format(format!("scene file: {e}")))?;
        if file.version != SCENE_FILE_VERSION {
            return Err(Error::format(format!("unsupported scene file version {}", file.version)));
        }
        if !file.class_names.is_empty() && file.class_names.len() != file.num_classes {
            return Err(Error::format(format!(
                "{} class names given for {} classes",
                file.class_names.len(),
                file.num_classes
            )));
        }
        file.to_scene().map_err(|e| Error::format(format!("scene file: {e}")))?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene files always serialize")
    }
}

fn check_keys(value: &Value, allowed: &[&str], what: &str) -> Result<()> {
    let Some(obj) = value.as_object() else { return Ok(()) };
    let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
    if let Some(k) = obj.keys().find(|k| !allowed.contains(k.as_str())) {
        return Err(Error::format(format!("{what}: unknown key {k:?}")));
    }
    Ok(())
}

pub fn read_scene_file(path: &std::path::Path, strict: bool) -> Result<SceneFile> {
    SceneFile::parse(&std::fs::read_to_string(path)?, strict)
}

pub fn write_scene_file(path: &std::path::Path, file: &SceneFile) -> Result<()> {
    std::fs::write(path, file.to_json() + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordTag {
    Grid,
    Prob,
    Depth,
}

impl RecordTag {
    fn bytes(self) -> &'static [u8; 4] {
        match self {
            RecordTag::Grid => b"GRID",
            RecordTag::Prob => b"PROB",
            RecordTag::Depth => b"DPTH",
        }
    }

    fn from_bytes(b: &[u8]) -> Result<Self> {
        match b {
            b"GRID" => Ok(RecordTag::Grid),
            b"PROB" => Ok(RecordTag::Prob),
            b"DPTH" => Ok(RecordTag::Depth),
            _ => Err(Error::format(format!("unknown grid record tag {:?}", String::from_utf8_lossy(b)))),
        }
    }
}

/// Decoded grid file header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub tag: RecordTag,
    pub dims: [u32; 3],
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub num_classes: u32,
}

impl GridHeader {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GRID_HEADER_LEN);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        out.extend_from_slice(self.tag.bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in self.origin.iter().chain(&self.extent) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.num_classes.to_le_bytes());
        out
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < GRID_HEADER_LEN {
            return Err(Error::format("grid file shorter than its header"));
        }
        if &b[0..4] != GRID_MAGIC {
            return Err(Error::format("not a grid file (bad magic)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != GRID_VERSION {
            return Err(Error::format(format!("unsupported grid file version {version}")));
        }
        Ok(GridHeader {
            tag: RecordTag::from_bytes(&b[8..12])?,
            dims: [u32_at(12), u32_at(16), u32_at(20)],
            origin: [f64_at(24), f64_at(32), f64_at(40)],
            extent: [f64_at(48), f64_at(56), f64_at(64)],
            num_classes: u32_at(72),
        })
    }

    fn cells(&self) -> Result<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d as usize))
            .ok_or_else(|| Error::format("grid dims overflow"))
    }
}

fn dims_u32(dims: [usize; 3]) -> Result<[u32; 3]> {
    let c = |d: usize| u32::try_from(d).map_err(|_| Error::invalid("grid dimension exceeds u32"));
    Ok([c(dims[0])?, c(dims[1])?, c(dims[2])?])
}

/// Serializes a label or probability grid.
pub fn encode_grid(grid: &SemanticGrid) -> Result<Vec<u8>> {
    grid.validate()?;
    let header = GridHeader {
        tag: if grid.is_labels() { RecordTag::Grid } else { RecordTag::Prob },
        dims: dims_u32(grid.spec.dims)?,
        origin: grid.spec.origin.0,
        extent: grid.spec.extent.0,
        num_classes: grid.num_classes as u32,
    };
    let mut out = header.encode();
    match &grid.data {
        GridData::Labels(l) => out.extend_from_slice(l),
        GridData::Probabilities(p) => {
            out.reserve(p.len() * 4);
            for v in p {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn f32_payload(b: &[u8], count: usize) -> Result<Vec<f64>> {
    let need = count.checked_mul(4).ok_or_else(|| Error::format("payload size overflow"))?;
    if b.len() != need {
        return Err(Error::format(format!("payload is {} bytes, expected {need}", b.len())));
    }
    Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
}

pub fn decode_grid(bytes: &[u8]) -> Result<SemanticGrid> {
    let h = GridHeader::decode(bytes)?;
    let payload = &bytes[GRID_HEADER_LEN..];
    let spec = GridSpec {
        origin: Vec3(h.origin),
        extent: Vec3(h.extent),
        dims: [h.dims[0] as usize, h.dims[1] as usize, h.dims[2] as usize],
    };
    spec.validate().map_err(|e| Error::format(e.to_string()))?;
    let n = h.cells()?;
    let c = h.num_classes as usize;
    let grid = match h.tag {
        RecordTag::Grid => {
            if payload.len() != n {
                return Err(Error::format(format!("label payload is {} bytes, expected {n}", payload.len())));
            }
            SemanticGrid::from_labels(spec, c, payload.to_vec())
        }
        RecordTag::Prob => {
            let count = n.checked_mul(c + 1).ok_or_else(|| Error::format("payload size overflow"))?;
            SemanticGrid::from_probabilities(spec, c, f32_payload(payload, count)?)
        }
        RecordTag::Depth => return Err(Error::format("expected a GRID or PROB record, found DPTH")),
    };
    grid.map_err(|e| Error::format(e.to_string()))
}

pub fn encode_depth(map: &DepthMap) -> Result<Vec<u8>> {
    map.validate()?;
    let header = GridHeader {
        tag: RecordTag::Depth,
        dims: dims_u32([map.num_bins, map.width, map.height])?,
        origin: [0.0; 3],
        extent: [map.bin_interval, map.width as f64, map.height as f64],
        num_classes: 0,
    };
    let mut out = header.encode();
    for v in &map.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let h = GridHeader::decode(bytes)?;
    if h.tag != RecordTag::Depth {
        return Err(Error::format("expected a DPTH record"));
    }
    let n = h.cells()?;
    let map = DepthMap {
        num_bins: h.dims[0] as usize,
        width: h.dims[1] as usize,
        height: h.dims[2] as usize,
        bin_interval: h.extent[0],
        data: f32_payload(&bytes[GRID_HEADER_LEN..], n)?,
    };
    map.validate().map_err(|e| Error::format(e.to_string()))?;
    Ok(map)
}

fn read_all(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut b)?;
    Ok(b)
}

pub fn read_grid_file(path: &std::path::Path) -> Result<SemanticGrid> {
    decode_grid(&read_all(path)?)
}

pub fn write_grid_file(path: &std::path::Path, grid: &SemanticGrid) -> Result<()> {
    std::fs::write(path, encode_grid(grid)?)?;
    Ok(())
}

pub fn read_depth_file(path: &std::path::Path) -> Result<DepthMap> {
    decode_depth(&read_all(path)?)
}

pub fn write_depth_file(path: &std::path::Path, map: &DepthMap) -> Result<()> {
    std::fs::write(path, encode_depth(map)?)?;
    Ok(())
}

/// Reads `x y z` lines; blank lines and `#` comments are skipped.
pub fn read_points<R: BufRead>(r: R, source: Option<PointSource>) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("line {}: {e}", n + 1)))?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("line {}: expected three finite numbers", n + 1)));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    Ok(PointCloud { points, source })
}

/// Writes `x y z` lines, with an optional trailing source column.
pub fn write_points<W: Write>(mut w: W, points: &[Vec3], sources: Option<&[PointSource]>) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        match sources.and_then(|s| s.get(i)) {
            Some(PointSource::Lidar) => writeln!(w, "{} {} {} lidar", p[0], p[1], p[2])?,
            Some(PointSource::Camera) => writeln!(w, "{} {} {} camera", p[0], p[1], p[2])?,
            None => writeln!(w, "{} {} {}", p[0], p[1], p[2])?,
        }
    }
    Ok(())
}

/// RGB for class `c` (1-based); the same class always gets the same color.
pub fn class_color(c: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 10] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [170, 110, 40],
        [128, 128, 128],
    ];
    PALETTE[(c.max(1) as usize - 1) % PALETTE.len()]
}

/// ASCII PLY with one vertex per non-empty voxel center, colored by class.
pub fn write_ply<W: Write>(mut w: W, grid: &SemanticGrid) -> Result<usize> {
    let labels = grid.labels();
    let count = labels.iter().filter(|l| **l != 0).count();
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {count}")?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property float {p}")?;
    }
    for p in ["red", "green", "blue", "label"] {
        writeln!(w, "property uchar {p}")?;
    }
    writeln!(w, "end_header")?;
    for (idx, l) in labels.iter().enumerate() {
        if *l == 0 {
            continue;
        }
        let c = grid.spec.center_of(idx);
        let [r, g, b] = class_color(*l);
        writeln!(w, "{} {} {} {r} {g} {b} {l}", c[0] as f32, c[1] as f32, c[2] as f32)?;
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_scene() -> Scene {
        let mut w = [0.0; NUM_BASIS_FIELDS];
        w[5] = 0.125;
        w[17] = -0.3;
        Scene::new(
            2,
            vec![
                Primitive::tp(
                    Vec3::new(0.1, 0.2, 0.3),
                    Vec3::new(1.0, 2.0, 0.7),
                    Quaternion::new(0.9, 0.1, 0.0, 0.1),
                    0.6,
                    vec![0.3, 1.0 / 3.0],
                    3.0,
                ),
                Primitive::tsq(Vec3::ZERO, Vec3::splat(1.5), Quaternion::IDENTITY, 0.8, vec![0.0, 1.0], 0.3, 1.7, 12.0)
                    .with_warp(w),
            ],
        )
    }

    #[test]
    fn scene_file_round_trips() {
        let scene = sample_scene();
        let file = SceneFile::from_scene(&scene, vec!["car".into(), "road".into()]);
        let back = SceneFile::parse(&file.to_json(), true).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_scene().unwrap(), scene);
    }

    #[test]
    fn strict_mode_rejects_unknown_keys() {
        let file = SceneFile::from_scene(&sample_scene(), vec![]);
        let mut v: Value = serde_json::from_str(&file.to_json()).unwrap();
        v["primitives"][0]["colour"] = Value::from(3);
        let text = v.to_string();
        let err = SceneFile::parse(&text, true).unwrap_err();
        assert!(err.to_string().contains("colour"));
        assert!(SceneFile::parse(&text, false).is_ok());
        v["primitives"][0].as_object_mut().unwrap().remove("colour");
        v["extra"] = Value::Bool(true);
        assert!(SceneFile::parse(&v.to_string(), true).is_err());
    }

    #[test]
    fn scene_file_defaults_and_errors() {
        let text = r#"{"version":1,"num_classes":1,"primitives":[
            {"kind":"tp","m":[0,0,0],"s":[1,1,1],"rot":[1,0,0,0],"opacity":0.5,"semantics":[0],"nu":2}]}"#;
        let f = SceneFile::parse(text, true).unwrap();
        assert_eq!(f.primitives[0].eps, [1.0, 1.0]);
        assert!(SceneFile::parse("{", true).is_err());
        assert!(SceneFile::parse(&text.replace("\"version\":1", "\"version\":7"), true).is_err());
        assert!(SceneFile::parse(&text.replace("\"opacity\":0.5", "\"opacity\":1.5"), true).is_err());
    }

    #[test]
    fn label_grid_layout() {
        let spec = GridSpec::new(Vec3::new(-1.0, -2.0, -3.0), Vec3::new(2.0, 4.0, 6.0), [2, 3, 4]).unwrap();
        let labels: Vec<u8> = (0..24).map(|i| (i % 3) as u8).collect();
        let grid = SemanticGrid::from_labels(spec, 2, labels.clone()).unwrap();
        let bytes = encode_grid(&grid).unwrap();
        assert_eq!(bytes.len(), GRID_HEADER_LEN + 24);
        assert_eq!(&bytes[0..4], b"TFOC");
        assert_eq!(&bytes[8..12], b"GRID");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(bytes[64..72].try_into().unwrap()), 6.0);
        assert_eq!(u32::from_le_bytes(bytes[72..76].try_into().unwrap()), 2);
        assert_eq!(&bytes[GRID_HEADER_LEN..], &labels[..]);
        assert_eq!(decode_grid(&bytes).unwrap(), grid);
    }

    #[test]
    fn prob_and_depth_round_trip_bit_exact() {
        let spec = GridSpec::new(Vec3::ZERO, Vec3::splat(1.0), [2, 1, 1]).unwrap();
        let grid = SemanticGrid::from_probabilities(spec, 1, vec![0.25, 0.75, 0.1, 0.9]).unwrap();
        let bytes = encode_grid(&grid).unwrap();
        assert_eq!(bytes.len(), GRID_HEADER_LEN + 16);
        let back = decode_grid(&bytes).unwrap();
        assert_eq!(encode_grid(&back).unwrap(), bytes);

        let mut map = DepthMap::zeros(2, 3, 4, 0.3);
        map.set(1, 2, 3, 0.7);
        let bytes = encode_depth(&map).unwrap();
        let back = decode_depth(&bytes).unwrap();
        assert_eq!(back.bin_interval, 0.3);
        assert_eq!((back.height, back.width, back.num_bins), (2, 3, 4));
        assert_eq!(back.get(1, 2, 3), 0.7f32 as f64);
        assert_eq!(encode_depth(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_grids_are_format_errors() {
        let spec = GridSpec::new(Vec3::ZERO, Vec3::splat(1.0), [2, 2, 2]).unwrap();
        let bytes = encode_grid(&SemanticGrid::empty_labels(spec, 1)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_grid(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_grid(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_grid(&bytes[..10]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[GRID_HEADER_LEN] = 9;
        assert!(matches!(decode_grid(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_depth(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn points_round_trip() {
        let text = "# header\n1 2 3\n\n-0.5 0.25 1e3 # trailing\n";
        let pc = read_points(text.as_bytes(), Some(PointSource::Lidar)).unwrap();
        assert_eq!(pc.points, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.5, 0.25, 1000.0)]);
        let mut out = Vec::new();
        write_points(&mut out, &pc.points, None).unwrap();
        assert_eq!(read_points(out.as_slice(), None).unwrap().points, pc.points);
        assert!(read_points("1 2".as_bytes(), None).is_err());
        assert!(read_points("1 2 x".as_bytes(), None).is_err());
    }

    #[test]
    fn ply_counts_occupied_voxels() {
        let spec = GridSpec::new(Vec3::ZERO, Vec3::new(2.0, 2.0, 1.0), [2, 2, 1]).unwrap();
        let mut out = Vec::new();
        assert_eq!(write_ply(&mut out, &SemanticGrid::empty_labels(spec, 2)).unwrap(), 0);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(text.ends_with("end_header\n"));

        let grid = SemanticGrid::from_labels(spec, 2, vec![0, 0, 2, 0]).unwrap();
        let mut out = Vec::new();
        assert_eq!(write_ply(&mut out, &grid).unwrap(), 1);
        let text = String::from_utf8(out).unwrap();
        let last = text.lines().last().unwrap();
        assert_eq!(last, "0.5 1.5 0.5 60 180 75 2");
    }
}
