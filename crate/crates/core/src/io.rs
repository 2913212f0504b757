//! On-disk formats: rig bundles in, motion/geometry/frames out.
//!
//! A rig bundle is a directory holding `skeleton.json`, `mesh.obj`,
//! `weights.json` and optionally `mask.json`. Every JSON file carries a
//! `format_version`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::kinematics::{SkinWeights, SkinnedMesh};
use crate::linalg::Vec3;
use crate::renderer::FrameSequence;
use crate::rig::{normalize, Normalization, Rig};
use crate::skeleton::{Joint, MotionParams, Skeleton};
use crate::springmass::{DynamicRegionMask, Region};

pub const FORMAT_VERSION: u32 = 1;
pub const SKELETON_FILE: &str = "skeleton.json";
pub const MESH_FILE: &str = "mesh.obj";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const MASK_FILE: &str = "mask.json";

/// Weight rows off by more than this are rejected.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-3;
/// Weight rows off by more than this are renormalized with a warning.
pub const WEIGHT_SUM_WARN: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {msg}")]
    Json { path: PathBuf, line: usize, column: usize, msg: String },
    #[error("{path}:{line}: {msg}")]
    Obj { path: PathBuf, line: usize, msg: String },
    #[error("{path}: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

impl IoError {
    /// Problems with input data, as opposed to failures writing results.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, IoError::Write { .. })
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

fn invalid(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), msg: msg.into() }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Versioned {
        format_version: Option<u32>,
    }
    let json_err =
        |e: serde_json::Error| IoError::Json { path: path.to_path_buf(), line: e.line(), column: e.column(), msg: e.to_string() };
    let v: Versioned = serde_json::from_str(text).map_err(json_err)?;
    match v.format_version {
        Some(FORMAT_VERSION) => {}
        Some(found) => return Err(IoError::Version { path: path.to_path_buf(), found }),
        None => return Err(invalid(path, "missing format_version")),
    }
    serde_json::from_str(text).map_err(json_err)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let werr = |source| IoError::Write { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(werr)?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(werr)?;
    tmp.write_all(bytes).map_err(werr)?;
    tmp.as_file().sync_all().map_err(werr)?;
    tmp.persist(path).map_err(|e| werr(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------- skeleton

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    pub joints: Vec<Joint>,
}

pub fn skeleton_to_json(name: &str, skel: &Skeleton) -> String {
    let file = SkeletonFile { format_version: FORMAT_VERSION, name: name.to_string(), joints: skel.joints().to_vec() };
    serde_json::to_string_pretty(&file).expect("skeleton serializes")
}

// ---------------------------------------------------------------- weights

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub format_version: u32,
    /// One `{joint index: weight}` map per vertex.
    pub weights: Vec<BTreeMap<usize, f64>>,
}

pub fn weights_to_json(w: &SkinWeights) -> String {
    let file = WeightsFile { format_version: FORMAT_VERSION, weights: w.rows().iter().map(|r| r.iter().copied().collect()).collect() };
    serde_json::to_string(&file).expect("weights serialize")
}

/// Rows within [`WEIGHT_SUM_TOLERANCE`] of 1 are rescaled to sum to 1.
/// Returns the rows and one warning per row that moved by more than
/// [`WEIGHT_SUM_WARN`].
pub fn normalize_weight_rows(path: &Path, file: &WeightsFile) -> Result<(Vec<Vec<(usize, f64)>>, Vec<String>)> {
    let mut rows = Vec::with_capacity(file.weights.len());
    let mut warnings = Vec::new();
    for (v, map) in file.weights.iter().enumerate() {
        let sum: f64 = map.values().sum();
        // slack keeps a row written as exactly 0.999 on the accepting side
        if !sum.is_finite() || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE + 1e-12 {
            return Err(invalid(path, format!("vertex {v}: weights sum to {sum}, more than {WEIGHT_SUM_TOLERANCE} away from 1")));
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_WARN {
            warnings.push(format!("{}: vertex {v}: weights sum to {sum}; renormalized", path.display()));
        }
        rows.push(map.iter().map(|(&j, &w)| (j, w / sum)).collect());
    }
    Ok((rows, warnings))
}

// ---------------------------------------------------------------- mask

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub format_version: u32,
    /// Per-vertex blend weight in `[0, 1]`; non-zero means dynamic.
    pub blend: Vec<f64>,
    #[serde(default)]
    pub regions: Vec<Region>,
}

pub fn mask_to_json(mask: &DynamicRegionMask) -> String {
    let file = MaskFile { format_version: FORMAT_VERSION, blend: mask.blend.clone(), regions: mask.regions.clone() };
    serde_json::to_string_pretty(&file).expect("mask serializes")
}

// ---------------------------------------------------------------- OBJ

#[derive(Debug, Clone, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Present only when every vertex line carries `r g b`.
    pub colors: Option<Vec<Vec3>>,
}

/// Reads `v` and `f` records. Polygons are fanned into triangles; texture
/// and normal indices are ignored; negative indices count from the end.
pub fn parse_obj(path: &Path, text: &str) -> Result<ObjMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let err = |line: usize, msg: String| IoError::Obj { path: path.to_path_buf(), line, msg };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> =
                    it.map(|s| s.parse::<f64>().map_err(|e| err(line, format!("bad number '{s}': {e}")))).collect::<Result<_>>()?;
                if nums.len() != 3 && nums.len() != 6 {
                    return Err(err(line, format!("vertex needs 3 or 6 numbers, found {}", nums.len())));
                }
                if nums.iter().any(|x| !x.is_finite()) {
                    return Err(err(line, "vertex is not finite".into()));
                }
                vertices.push([nums[0], nums[1], nums[2]]);
                colors.push((nums.len() == 6).then(|| [nums[3], nums[4], nums[5]]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let k: i64 = head.parse().map_err(|_| err(line, format!("bad face index '{tok}'")))?;
                    let n = vertices.len() as i64;
                    let resolved = if k > 0 { k - 1 } else { n + k };
                    if k == 0 || resolved < 0 || resolved >= n {
                        return Err(err(line, format!("face index {k} out of range ({n} vertices so far)")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(err(line, format!("face needs at least 3 vertices, found {}", idx.len())));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let colors = if !colors.is_empty() && colors.iter().all(Option::is_some) { Some(colors.into_iter().flatten().collect()) } else { None };
    Ok(ObjMesh { vertices, faces, colors })
}

pub fn obj_string(vertices: &[Vec3], faces: &[[usize; 3]], colors: Option<&[Vec3]>) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20);
    for (i, v) in vertices.iter().enumerate() {
        match colors {
            Some(c) => writeln!(s, "v {} {} {} {} {} {}", v[0], v[1], v[2], c[i][0], c[i][1], c[i][2]),
            None => writeln!(s, "v {} {} {}", v[0], v[1], v[2]),
        }
        .unwrap();
    }
    for f in faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

// ---------------------------------------------------------------- rig bundle

#[derive(Debug, Clone)]
pub struct LoadedRig {
    pub rig: Rig,
    pub normalization: Normalization,
    pub mask: Option<DynamicRegionMask>,
    pub warnings: Vec<String>,
}

/// Loads, cross-checks and normalizes a rig bundle.
pub fn load_rig(dir: &Path) -> Result<LoadedRig> {
    let skel_path = dir.join(SKELETON_FILE);
    let mesh_path = dir.join(MESH_FILE);
    let weights_path = dir.join(WEIGHTS_FILE);
    let mask_path = dir.join(MASK_FILE);

    let skel_file: SkeletonFile = parse_json(&skel_path, &read(&skel_path)?)?;
    let obj = parse_obj(&mesh_path, &read(&mesh_path)?)?;
    let weights_file: WeightsFile = parse_json(&weights_path, &read(&weights_path)?)?;
    let mask_file: Option<MaskFile> = if mask_path.exists() { Some(parse_json(&mask_path, &read(&mask_path)?)?) } else { None };

    let mut joints = skel_file.joints;
    let mut vertices = obj.vertices;
    let normalization = normalize(&mut joints, &mut vertices);
    let skeleton = Skeleton::build(joints).map_err(|e| invalid(&skel_path, e.to_string()))?;

    if weights_file.weights.len() != vertices.len() {
        return Err(invalid(
            &weights_path,
            format!("{} weight rows but {} has {} vertices", weights_file.weights.len(), MESH_FILE, vertices.len()),
        ));
    }
    let (rows, warnings) = normalize_weight_rows(&weights_path, &weights_file)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let weights = SkinWeights::new(rows, skeleton.len()).map_err(|e| invalid(&weights_path, e.to_string()))?;
    let mesh = SkinnedMesh::new(vertices, obj.faces, weights, obj.colors).map_err(|e| invalid(&mesh_path, e.to_string()))?;

    let mask = match mask_file {
        Some(m) => {
            if m.blend.len() != mesh.vertex_count() {
                return Err(invalid(&mask_path, format!("{} blend weights for {} vertices", m.blend.len(), mesh.vertex_count())));
            }
            Some(DynamicRegionMask::from_blend(m.blend, m.regions).map_err(|e| invalid(&mask_path, e.to_string()))?)
        }
        None => None,
    };
    let name = if skel_file.name.is_empty() {
        dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        skel_file.name
    };
    Ok(LoadedRig { rig: Rig { name, skeleton, mesh }, normalization, mask, warnings })
}

/// Writes a rig bundle that [`load_rig`] reads back.
pub fn save_rig(dir: &Path, rig: &Rig, mask: Option<&DynamicRegionMask>) -> Result<()> {
    write_atomic(&dir.join(SKELETON_FILE), skeleton_to_json(&rig.name, &rig.skeleton).as_bytes())?;
    let obj = obj_string(&rig.mesh.vertices, &rig.mesh.faces, rig.mesh.colors.as_deref());
    write_atomic(&dir.join(MESH_FILE), obj.as_bytes())?;
    write_atomic(&dir.join(WEIGHTS_FILE), weights_to_json(&rig.mesh.weights).as_bytes())?;
    if let Some(m) = mask {
        write_atomic(&dir.join(MASK_FILE), mask_to_json(m).as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- motion

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFrame {
    pub root: Vec3,
    pub rotations: Vec<Vec3>,
    pub offsets: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub format_version: u32,
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub frames: Vec<MotionFrame>,
}

impl MotionFile {
    pub fn new(skel: &Skeleton, motion: &MotionParams, fps: f64) -> Self {
        let frames = (0..motion.frames)
            .map(|t| MotionFrame {
                root: motion.root(t),
                rotations: (0..motion.joints).map(|j| motion.rotation(t, j)).collect(),
                offsets: (0..motion.joints).map(|j| motion.offset(t, j)).collect(),
            })
            .collect();
        let joint_names = skel.joints().iter().map(|j| j.name.clone()).collect();
        Self { format_version: FORMAT_VERSION, fps, joint_names, frames }
    }

    pub fn params(&self) -> MotionParams {
        let joints = self.joint_names.len();
        let mut m = MotionParams::zeros(self.frames.len(), joints);
        for (t, f) in self.frames.iter().enumerate() {
            m.set_root(t, f.root);
            for j in 0..joints {
                m.set_rotation(t, j, f.rotations[j]);
                m.set_offset(t, j, f.offsets[j]);
            }
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("motion serializes")
    }

    fn check(&self, path: &Path) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(path, format!("fps must be positive, got {}", self.fps)));
        }
        let j = self.joint_names.len();
        for (t, f) in self.frames.iter().enumerate() {
            if f.rotations.len() != j || f.offsets.len() != j {
                return Err(invalid(
                    path,
                    format!("frame {t}: expected {j} rotations and offsets, found {} and {}", f.rotations.len(), f.offsets.len()),
                ));
            }
            let finite = f.root.iter().chain(f.rotations.iter().flatten()).chain(f.offsets.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(invalid(path, format!("frame {t}: non-finite value")));
            }
        }
        Ok(())
    }

    /// Checks the joint list against a skeleton.
    pub fn check_skeleton(&self, path: &Path, skel: &Skeleton) -> Result<()> {
        let names: Vec<&str> = skel.joints().iter().map(|j| j.name.as_str()).collect();
        if self.joint_names.iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(invalid(path, format!("joint names {:?} do not match the rig's {:?}", self.joint_names, names)));
        }
        Ok(())
    }
}

pub fn load_motion(path: &Path) -> Result<MotionFile> {
    let m: MotionFile = parse_json(path, &read(path)?)?;
    m.check(path)?;
    Ok(m)
}

pub fn save_motion(path: &Path, motion: &MotionFile) -> Result<()> {
    write_atomic(path, motion.to_json().as_bytes())
}

// ---------------------------------------------------------------- frames

/// `frame_0000.obj`, ... for a flat `[T,V,3]` vertex buffer.
pub fn save_obj_sequence(
    dir: &Path,
    vertices: &[f64],
    vertex_count: usize,
    faces: &[[usize; 3]],
    colors: Option<&[Vec3]>,
) -> Result<usize> {
    let frames = crate::metrics::frames_from_flat(vertices, vertex_count.max(1));
    for (t, f) in frames.iter().enumerate() {
        write_atomic(&dir.join(format!("frame_{t:04}.obj")), obj_string(f, faces, colors).as_bytes())?;
    }
    Ok(frames.len())
}

/// Reads `frame_*.obj` files in name order.
pub fn load_obj_sequence(dir: &Path) -> Result<Vec<ObjMesh>> {
    let entries = std::fs::read_dir(dir).map_err(|source| IoError::Read { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "obj") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("frame_")))
        .collect();
    paths.sort();
    paths.iter().map(|p| parse_obj(p, &read(p)?)).collect()
}

fn to_u8(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

pub fn png_bytes(frames: &FrameSequence, t: usize) -> Vec<u8> {
    let (c, h, w) = (frames.channels(), frames.height(), frames.width());
    let px = frames.frame(t);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data.push(to_u8(px[(ch * h + y) * w + x]));
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(&data).expect("png data");
    }
    out
}

/// `frame_0000.png`, ... one per frame.
pub fn save_png_frames(dir: &Path, frames: &FrameSequence) -> Result<usize> {
    for t in 0..frames.frames() {
        write_atomic(&dir.join(format!("frame_{t:04}.png")), &png_bytes(frames, t))?;
    }
    Ok(frames.frames())
}

/// Little-endian f32 `[T,C,H,W]`.
pub fn save_raw_frames(path: &Path, frames: &FrameSequence) -> Result<()> {
    let bytes: Vec<u8> = frames.pixels.data().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    write_atomic(path, &bytes)
}
