//! Point-cloud files (XYZ, ASCII PLY), procedural shapes, and toy datasets.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{center_and_scale, Point3, PointCloud, SeededRng};
use crate::error::{Error, Result};
use crate::metrics::EvalSample;
use crate::view::{sample_view, synthesize_partial, ViewParams};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_coord(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Parses whitespace-separated `x y z` lines. Blank lines are skipped.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(parse_err(path, i + 1, "expected 3 fields"));
        }
        points.push(Point3::new(
            parse_coord(path, i + 1, fields[0])?,
            parse_coord(path, i + 1, fields[1])?,
            parse_coord(path, i + 1, fields[2])?,
        ));
    }
    if points.is_empty() {
        return Err(format_err(path, "empty cloud"));
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

/// Shortest round-trip formatting, so reading back is bit-exact.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Reads the `x y z` properties of the `vertex` element of an ASCII PLY file.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(format_err(path, "missing PLY header")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (i, line) in lines.by_ref() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => saw_format = true,
            ["format", enc, ..] => return Err(Error::UnsupportedEncoding((*enc).to_string())),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "invalid element count"))?;
                elements.push(PlyElement {
                    name: (*name).to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, i + 1, "property before element"))?;
                el.properties.push(String::from("<list>"));
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, i + 1, "property before element"))?;
                el.properties.push((*name).to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("unrecognized header line {line:?}"),
                ))
            }
        }
    }
    if !saw_format || !header_done {
        return Err(format_err(path, "missing PLY header"));
    }
    let mut points = Vec::new();
    let mut found_vertex = false;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines
                    .next()
                    .ok_or_else(|| format_err(path, format!("truncated {} element", el.name)))?;
            }
            continue;
        }
        found_vertex = true;
        let pos = |axis: &str| {
            el.properties
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| format_err(path, format!("vertex element has no {axis} property")))
        };
        let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
        if el.properties.iter().any(|p| p == "<list>") {
            return Err(format_err(
                path,
                "list properties on vertex are not supported",
            ));
        }
        for _ in 0..el.count {
            let (i, line) = lines
                .next()
                .ok_or_else(|| format_err(path, "truncated vertex element"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != el.properties.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {} fields", el.properties.len()),
                ));
            }
            points.push(Point3::new(
                parse_coord(path, i + 1, fields[ix])?,
                parse_coord(path, i + 1, fields[iy])?,
                parse_coord(path, i + 1, fields[iz])?,
            ));
        }
    }
    if !found_vertex {
        return Err(format_err(path, "no vertex element"));
    }
    if points.is_empty() {
        return Err(format_err(path, "empty cloud"));
    }
    PointCloud::new(points)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    out.push_str(&format_xyz(cloud));
    out
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, format_ply(cloud)).map_err(|e| Error::io(path, e))
}

/// Reads `.ply` files as PLY and everything else as XYZ.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    if is_ply(path) {
        read_ply(path)
    } else {
        read_xyz(path)
    }
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    if is_ply(path) {
        write_ply(cloud, path)
    } else {
        write_xyz(cloud, path)
    }
}

fn is_ply(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Sphere,
    Cuboid,
    Cylinder,
    Capsule,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Cuboid,
        ShapeKind::Cylinder,
        ShapeKind::Capsule,
    ];
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(ShapeKind::Sphere),
            "cuboid" => Ok(ShapeKind::Cuboid),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "capsule" => Ok(ShapeKind::Capsule),
            other => Err(Error::InvalidArgument(format!(
                "unknown shape kind {other:?}"
            ))),
        }
    }
}

/// An axis-aligned primitive (axis of revolution along +y).
///
/// `size` meaning: sphere `[r, -, -]`; cuboid `[hx, hy, hz]` half extents;
/// cylinder `[r, half_height, -]`; capsule `[r, half_length_of_straight_part, -]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub size: [f64; 3],
    pub samples: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        let needed = match self.kind {
            ShapeKind::Sphere => 1,
            ShapeKind::Cylinder | ShapeKind::Capsule => 2,
            ShapeKind::Cuboid => 3,
        };
        if self.size[..needed]
            .iter()
            .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "shape sizes must be positive: {self:?}"
            )));
        }
        if self.samples < 8 || self.samples % 2 != 0 {
            return Err(Error::InvalidArgument(
                "shape sample count must be even and >= 8".into(),
            ));
        }
        Ok(())
    }

    /// Draws a random size for `kind`.
    pub fn random(kind: ShapeKind, samples: usize, rng: &mut SeededRng) -> Self {
        let size = match kind {
            ShapeKind::Sphere => [rng.uniform(0.3, 1.0), 0.0, 0.0],
            ShapeKind::Cuboid => [
                rng.uniform(0.2, 1.0),
                rng.uniform(0.2, 1.0),
                rng.uniform(0.2, 1.0),
            ],
            ShapeKind::Cylinder => [rng.uniform(0.2, 0.6), rng.uniform(0.2, 1.0), 0.0],
            ShapeKind::Capsule => [rng.uniform(0.15, 0.5), rng.uniform(0.1, 0.8), 0.0],
        };
        ShapeSpec {
            kind,
            size,
            samples,
            seed: rand::RngCore::next_u64(rng),
        }
    }
}

fn unit_vector(rng: &mut SeededRng) -> Point3 {
    loop {
        let v = Point3::new(
            rng.standard_normal(),
            rng.standard_normal(),
            rng.standard_normal(),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

fn disk_point(rng: &mut SeededRng, r: f64) -> (f64, f64) {
    let rad = r * rng.uniform(0.0, 1.0).sqrt();
    let (s, c) = rng.uniform(0.0, std::f64::consts::TAU).sin_cos();
    (rad * c, rad * s)
}

/// A uniformly distributed point on the surface of the (centered) primitive.
fn surface_point(spec: &ShapeSpec, rng: &mut SeededRng) -> Point3 {
    let [a, b, c] = spec.size;
    match spec.kind {
        ShapeKind::Sphere => unit_vector(rng) * a,
        ShapeKind::Cuboid => {
            let areas = [b * c, a * c, a * b];
            let total: f64 = areas.iter().sum();
            let t = rng.uniform(0.0, total);
            let axis = if t < areas[0] {
                0
            } else if t < areas[0] + areas[1] {
                1
            } else {
                2
            };
            let sign = if rng.below(2) == 0 { -1.0 } else { 1.0 };
            let u = [rng.uniform(-a, a), rng.uniform(-b, b), rng.uniform(-c, c)];
            let mut q = u;
            q[axis] = sign * spec.size[axis];
            Point3::from_array(q)
        }
        ShapeKind::Cylinder => {
            let (r, hh) = (a, b);
            let side = std::f64::consts::TAU * r * 2.0 * hh;
            let caps = 2.0 * std::f64::consts::PI * r * r;
            if rng.uniform(0.0, side + caps) < side {
                let (s, co) = rng.uniform(0.0, std::f64::consts::TAU).sin_cos();
                Point3::new(r * co, rng.uniform(-hh, hh), r * s)
            } else {
                let (x, z) = disk_point(rng, r);
                let y = if rng.below(2) == 0 { -hh } else { hh };
                Point3::new(x, y, z)
            }
        }
        ShapeKind::Capsule => {
            let (r, hl) = (a, b);
            let side = std::f64::consts::TAU * r * 2.0 * hl;
            let ends = 4.0 * std::f64::consts::PI * r * r;
            if rng.uniform(0.0, side + ends) < side {
                let (s, co) = rng.uniform(0.0, std::f64::consts::TAU).sin_cos();
                Point3::new(r * co, rng.uniform(-hl, hl), r * s)
            } else {
                let d = unit_vector(rng) * r;
                let shift = if d.y >= 0.0 { hl } else { -hl };
                Point3::new(d.x, d.y + shift, d.z)
            }
        }
    }
}

/// Extremal surface points along each axis, one per antipodal pair.
fn anchor_points(spec: &ShapeSpec) -> Vec<Point3> {
    let [a, b, c] = spec.size;
    match spec.kind {
        ShapeKind::Sphere => vec![
            Point3::new(a, 0.0, 0.0),
            Point3::new(0.0, a, 0.0),
            Point3::new(0.0, 0.0, a),
        ],
        ShapeKind::Cuboid => vec![
            Point3::new(a, b, c),
            Point3::new(a, b, -c),
            Point3::new(a, -b, c),
            Point3::new(-a, b, c),
        ],
        ShapeKind::Cylinder => vec![
            Point3::new(a, 0.0, 0.0),
            Point3::new(0.0, b, 0.0),
            Point3::new(0.0, 0.0, a),
        ],
        ShapeKind::Capsule => vec![
            Point3::new(a, 0.0, 0.0),
            Point3::new(0.0, a + b, 0.0),
            Point3::new(0.0, 0.0, a),
        ],
    }
}

/// Uniform surface sample of the primitive, normalized by [`center_and_scale`].
///
/// Points are emitted in antipodal pairs `(p, -p)` and include the primitive's
/// extremal points, so the sample centroid is exactly the origin and the
/// normalized shape has its analytic proportions.
pub fn gen_procedural_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let mut points = Vec::with_capacity(spec.samples);
    for a in anchor_points(spec) {
        points.push(a);
        points.push(-a);
    }
    while points.len() < spec.samples {
        let p = surface_point(spec, &mut rng);
        points.push(p);
        points.push(-p);
    }
    points.truncate(spec.samples);
    Ok(center_and_scale(&PointCloud::new(points)?))
}

/// Settings for a generated dataset of primitives and their partial views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDatasetConfig {
    pub n_shapes: usize,
    pub views_per_shape: usize,
    pub n_partial_points: usize,
    pub gt_points: usize,
    pub kinds: Vec<ShapeKind>,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        ToyDatasetConfig {
            n_shapes: 40,
            views_per_shape: 5,
            n_partial_points: 1024,
            gt_points: 2048,
            kinds: ShapeKind::ALL.to_vec(),
            grid_resolution: crate::view::DEFAULT_GRID_RESOLUTION,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyShape {
    pub id: String,
    pub spec: ShapeSpec,
    pub gt: PointCloud,
    pub partials: Vec<(ViewParams, PointCloud)>,
}

/// Generates shapes (kinds cycled in order) and their partial views in memory.
pub fn generate_toy_shapes(cfg: &ToyDatasetConfig) -> Result<Vec<ToyShape>> {
    if cfg.n_shapes == 0
        || cfg.views_per_shape == 0
        || cfg.n_partial_points == 0
        || cfg.kinds.is_empty()
    {
        return Err(Error::InvalidArgument(
            "n_shapes, views_per_shape, n_partial_points and kinds must be nonempty".into(),
        ));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let plans: Vec<(ShapeSpec, SeededRng)> = (0..cfg.n_shapes)
        .map(|i| {
            let kind = cfg.kinds[i % cfg.kinds.len()];
            let spec = ShapeSpec::random(kind, cfg.gt_points, &mut rng);
            (spec, rng.fork())
        })
        .collect();
    plans
        .into_par_iter()
        .enumerate()
        .map(|(i, (spec, mut view_rng))| {
            let gt = gen_procedural_shape(&spec)?;
            let partials = (0..cfg.views_per_shape)
                .map(|_| {
                    let mut view = sample_view(&mut view_rng);
                    view.grid_resolution = cfg.grid_resolution;
                    let partial =
                        synthesize_partial(&gt, &view, cfg.n_partial_points, &mut view_rng)?;
                    Ok((view, partial))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ToyShape {
                id: format!("shape{i:04}"),
                spec,
                gt,
                partials,
            })
        })
        .collect()
}

impl ToyShape {
    pub fn sample_id(&self, view: usize) -> String {
        format!("{}_v{view}", self.id)
    }
}

/// Flattens shapes into evaluation samples (one per partial view).
pub fn to_eval_samples(shapes: &[ToyShape]) -> Vec<EvalSample> {
    shapes
        .iter()
        .flat_map(|s| {
            s.partials
                .iter()
                .enumerate()
                .map(move |(v, (_, partial))| EvalSample {
                    id: s.sample_id(v),
                    partial: partial.clone(),
                    gt: Some(s.gt.clone()),
                })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub partial: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<ViewParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", r.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Writes GT and partial XYZ files plus `manifest.json` into `out_dir`.
pub fn build_toy_dataset(cfg: &ToyDatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let shapes = generate_toy_shapes(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::new();
    for s in &shapes {
        let gt_rel = PathBuf::from(format!("{}_gt.xyz", s.id));
        write_xyz(&s.gt, &out_dir.join(&gt_rel))?;
        for (v, (view, partial)) in s.partials.iter().enumerate() {
            let id = s.sample_id(v);
            let rel = PathBuf::from(format!("{id}.xyz"));
            write_xyz(partial, &out_dir.join(&rel))?;
            records.push(ManifestRecord {
                id,
                partial: rel,
                gt: Some(gt_rel.clone()),
                view: Some(*view),
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        records,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Loads every record of a manifest. `path` may be the manifest file or the
/// directory containing `manifest.json`.
pub fn load_dataset(path: &Path) -> Result<Vec<EvalSample>> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let manifest = DatasetManifest::load(&manifest_path)?;
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    manifest
        .records
        .par_iter()
        .map(|r| {
            let partial = read_cloud(&resolve(&r.partial))?;
            let gt = r.gt.as_ref().map(|g| read_cloud(&resolve(g))).transpose()?;
            Ok(EvalSample {
                id: r.id.clone(),
                partial,
                gt,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn xyz_parse_examples() {
        let path = Path::new("t.xyz");
        let c = parse_xyz("0 0 0\n1 0 0\n", path).unwrap();
        assert_eq!(c.points(), &[p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)]);
        let err = parse_xyz("1.0 2.0\n", path).unwrap_err();
        assert_eq!(err.to_string(), "t.xyz: line 1: expected 3 fields");
        let err = parse_xyz("0 0 0\n1 x 0\n", path).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(parse_xyz("", path).is_err());
        assert!(parse_xyz("\n\n", path).is_err());
    }

    #[test]
    fn xyz_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = PointCloud::new(vec![
            p(0.1, -1.0 / 3.0, 1e-300),
            p(std::f64::consts::PI, -0.0, 12345.678901234567),
        ])
        .unwrap();
        write_xyz(&c, &path).unwrap();
        let back = read_xyz(&path).unwrap();
        for (a, b) in c.iter().zip(back.iter()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn ply_examples() {
        let path = Path::new("t.ply");
        let minimal = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert_eq!(
            parse_ply(minimal, path).unwrap().points(),
            &[p(1.0, 2.0, 3.0)]
        );

        let binary = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        let err = parse_ply(binary, path).unwrap_err();
        assert!(matches!(err, Error::UnsupportedEncoding(_)));
        assert!(err.to_string().contains("unsupported encoding"));

        assert!(parse_ply("format ascii 1.0\n", path).is_err());
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(parse_ply(no_z, path)
            .unwrap_err()
            .to_string()
            .contains("no z property"));
    }

    #[test]
    fn ply_skips_other_elements_and_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement face 2\nproperty list uchar int vertex_indices\n\
                    element vertex 2\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nend_header\n\
                    3 0 1 2\n3 1 2 0\n0.5 1 2 3\n0.5 4 5 6\n";
        let c = parse_ply(text, Path::new("t.ply")).unwrap();
        assert_eq!(c.points(), &[p(1.0, 2.0, 3.0), p(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let c = PointCloud::new(vec![p(0.1, 0.2, 0.3), p(-1.5, 2.25, 1.0 / 7.0)]).unwrap();
        write_cloud(&c, &path).unwrap();
        assert_eq!(read_cloud(&path).unwrap(), c);
    }

    fn spec(kind: ShapeKind, size: [f64; 3]) -> ShapeSpec {
        ShapeSpec {
            kind,
            size,
            samples: 2000,
            seed: 17,
        }
    }

    #[test]
    fn sphere_points_lie_on_half_radius() {
        let c = gen_procedural_shape(&spec(ShapeKind::Sphere, [0.7, 0.0, 0.0])).unwrap();
        assert_eq!(c.len(), 2000);
        for q in c.iter() {
            assert!((q.norm() - 0.5).abs() < 1e-9, "{q:?}");
        }
    }

    #[test]
    fn cuboid_points_lie_on_faces() {
        let size = [0.3, 0.6, 0.9];
        let c = gen_procedural_shape(&spec(ShapeKind::Cuboid, size)).unwrap();
        let half: Vec<f64> = size.iter().map(|s| s / 0.9 * 0.5).collect();
        for q in c.iter() {
            let a = q.to_array();
            let on_face = (0..3).any(|k| (a[k].abs() - half[k]).abs() < 1e-9);
            let inside = (0..3).all(|k| a[k].abs() <= half[k] + 1e-9);
            assert!(on_face && inside, "{q:?}");
        }
        assert_eq!(c.max_abs_coord(), 0.5);
    }

    #[test]
    fn shapes_are_deterministic_and_centered() {
        for kind in ShapeKind::ALL {
            let s = spec(kind, [0.4, 0.5, 0.6]);
            let a = gen_procedural_shape(&s).unwrap();
            assert_eq!(a, gen_procedural_shape(&s).unwrap());
            assert_eq!(a.centroid(), Point3::ORIGIN);
            assert_eq!(a.max_abs_coord(), 0.5);
        }
    }

    #[test]
    fn shape_spec_validation() {
        assert!(gen_procedural_shape(&spec(ShapeKind::Sphere, [0.0, 0.0, 0.0])).is_err());
        let mut odd = spec(ShapeKind::Sphere, [1.0, 0.0, 0.0]);
        odd.samples = 11;
        assert!(gen_procedural_shape(&odd).is_err());
    }

    #[test]
    fn manifest_rejects_duplicates_and_versions() {
        let rec = ManifestRecord {
            id: "a".into(),
            partial: "a.xyz".into(),
            gt: None,
            view: None,
        };
        let dup = DatasetManifest {
            version: MANIFEST_VERSION,
            records: vec![rec.clone(), rec.clone()],
        };
        assert!(dup.validate().is_err());
        let v2 = DatasetManifest {
            version: 2,
            records: vec![rec],
        };
        assert!(v2.validate().is_err());
        assert!(
            serde_json::from_str::<DatasetManifest>(r#"{"version":1,"records":[],"extra":0}"#)
                .is_err()
        );
    }
}
