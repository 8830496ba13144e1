//! Dataset generation and on-disk formats.
//!
//! Layout: `<root>/manifest.txt` plus one directory per instance holding
//! per-view files. RGB is binary PPM (P6), masks are binary PGM (P5) with
//! pixel value = class id, depth is ASCII floats with an `inf` sentinel,
//! poses are 16 row-major decimals. All writes go through a temp file and
//! rename, so partially written files never shadow good ones.

use crate::camera::{sample_sphere_poses, CameraView, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::synthetic::{make_block_object, reference_render, Template};
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write as _};
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "semscene-dataset v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split tag {other:?}"))),
        }
    }
}

/// One posed view with its ground-truth images.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub split: Split,
    pub view: CameraView,
    /// `height*width*3` in [0,1].
    pub rgb: Vec<f64>,
    /// `height*width` class ids.
    pub mask: Vec<u8>,
    /// `height*width`, `DEPTH_NONE` where nothing was hit.
    pub depth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceRecord {
    pub id: String,
    pub seed: u64,
    pub views: Vec<ViewRecord>,
}

impl InstanceRecord {
    pub fn views_in(&self, split: Split) -> impl Iterator<Item = &ViewRecord> {
        self.views.iter().filter(move |v| v.split == split)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub template: Template,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub camera_radius: f64,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<InstanceRecord>,
}

impl Dataset {
    pub fn view_count(&self) -> usize {
        self.instances.iter().map(|i| i.views.len()).sum()
    }

    pub fn instance(&self, id: &str) -> Result<&InstanceRecord> {
        self.instances
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub template: Template,
    pub instances: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub resolution: usize,
    pub seed: u64,
    pub camera_radius: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            template: Template::Chair,
            instances: 12,
            train_views: 16,
            test_views: 8,
            resolution: 32,
            seed: 0,
            camera_radius: 2.5,
        }
    }
}

/// Renders a full synthetic dataset in memory. Instance i uses generator
/// seed `seed + i`, so consecutive instances vary in shape, color, and
/// (for chairs) arm presence.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    if cfg.instances == 0 {
        return Err(Error::InvalidArgument("instance count must be >= 1".into()));
    }
    if cfg.train_views == 0 {
        return Err(Error::InvalidArgument("train view count must be >= 1".into()));
    }
    if cfg.resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be >= 1".into()));
    }
    let intrinsics = Intrinsics::centered(cfg.resolution);
    let total_views = cfg.train_views + cfg.test_views;
    let mut instances = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let obj_seed = cfg.seed + i as u64;
        let scene = make_block_object(cfg.template, obj_seed);
        scene.validate()?;
        let pose_seed = obj_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
        let poses = sample_sphere_poses(total_views, cfg.camera_radius, pose_seed)?;
        let mut views = Vec::with_capacity(total_views);
        for (vi, pose) in poses.into_iter().enumerate() {
            let view = CameraView::new(intrinsics, pose, cfg.resolution, cfg.resolution)?;
            let gt = reference_render(&scene, &view);
            views.push(ViewRecord {
                split: if vi < cfg.train_views { Split::Train } else { Split::Test },
                view,
                rgb: gt.rgb,
                mask: gt.mask,
                depth: gt.depth,
            });
        }
        instances.push(InstanceRecord { id: format!("inst_{i:04}"), seed: obj_seed, views });
    }
    Ok(Dataset {
        template: cfg.template,
        classes: cfg.template.class_count(),
        class_names: cfg.template.class_names().iter().map(|s| s.to_string()).collect(),
        camera_radius: cfg.camera_radius,
        width: cfg.resolution,
        height: cfg.resolution,
        instances,
    })
}

// ── Atomic file helpers ──────────────────────────────────────────────

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

// ── PPM / PGM ────────────────────────────────────────────────────────

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255) from floats in [0,1], length `w*h*3`.
pub fn write_ppm(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidArgument(format!(
            "rgb has {} values for {width}x{height}",
            rgb.len()
        )));
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend(rgb.iter().map(|&v| quantize(v)));
    write_atomic(path, &bytes)
}

/// Binary PGM (P5, maxval 255); pixel value = class id.
pub fn write_pgm(path: &Path, mask: &[u8], width: usize, height: usize) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "mask has {} values for {width}x{height}",
            mask.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(mask);
    write_atomic(path, &bytes)
}

/// Reads the `P6`/`P5` header (magic, width, height, maxval) and returns
/// the payload offset.
fn parse_netpbm_header(path: &Path, bytes: &[u8], magic: &str) -> Result<(usize, usize, usize)> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, format!("truncated header reading {what}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let found = token("magic")?;
    if found != magic {
        return Err(Error::parse(path, format!("magic {found:?}, expected {magic:?}")));
    }
    let width: usize =
        token("width")?.parse().map_err(|_| Error::parse(path, "bad width"))?;
    let height: usize =
        token("height")?.parse().map_err(|_| Error::parse(path, "bad height"))?;
    let maxval: usize =
        token("maxval")?.parse().map_err(|_| Error::parse(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::parse(path, format!("maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    Ok((width, height, pos + 1))
}

/// Reads a P6 file back to floats in [0,1].
pub fn read_ppm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = read_bytes(path)?;
    let (w, h, offset) = parse_netpbm_header(path, &bytes, "P6")?;
    let need = w * h * 3;
    let payload = bytes
        .get(offset..offset + need)
        .ok_or_else(|| Error::parse(path, format!("payload shorter than {need} bytes")))?;
    Ok((payload.iter().map(|&b| b as f64 / 255.0).collect(), w, h))
}

pub fn read_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let bytes = read_bytes(path)?;
    let (w, h, offset) = parse_netpbm_header(path, &bytes, "P5")?;
    let need = w * h;
    let payload = bytes
        .get(offset..offset + need)
        .ok_or_else(|| Error::parse(path, format!("payload shorter than {need} bytes")))?;
    Ok((payload.to_vec(), w, h))
}

// ── Depth and pose text formats ──────────────────────────────────────

/// ASCII depth map: one line per row, space-separated, `inf` for misses.
/// Values round-trip bit-exactly.
pub fn write_depth(path: &Path, depth: &[f64], width: usize, height: usize) -> Result<()> {
    if depth.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "depth has {} values for {width}x{height}",
            depth.len()
        )));
    }
    let mut text = String::new();
    for row in depth.chunks(width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            let _ = write!(text, "{v}");
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_depth(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, "not utf-8"))?;
    let mut out = Vec::with_capacity(expect);
    for tok in text.split_ascii_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(path, format!("bad depth value {tok:?}")))?;
        out.push(v);
    }
    if out.len() != expect {
        return Err(Error::parse(path, format!("{} depth values, expected {expect}", out.len())));
    }
    Ok(out)
}

/// 16 row-major decimals of the camera-to-world matrix. Round-trips
/// bit-exactly through the shortest-representation float format.
pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let vals = pose.to_matrix4();
    let text = vals.map(|v| v.to_string()).join(" ") + "\n";
    write_atomic(path, text.as_bytes())
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, "not utf-8"))?;
    let mut vals = [0.0f64; 16];
    let mut count = 0;
    for tok in text.split_ascii_whitespace() {
        if count >= 16 {
            return Err(Error::parse(path, "more than 16 pose values"));
        }
        vals[count] = tok
            .parse()
            .map_err(|_| Error::parse(path, format!("bad pose value {tok:?}")))?;
        count += 1;
    }
    if count != 16 {
        return Err(Error::parse(path, format!("{count} pose values, expected 16")));
    }
    Pose::from_matrix4(&vals).map_err(|e| Error::parse(path, e.to_string()))
}

// ── Dataset write / read ─────────────────────────────────────────────

fn view_paths(instance: &str, vi: usize) -> (String, String, String, String) {
    (
        format!("{instance}/view_{vi:03}.pose"),
        format!("{instance}/view_{vi:03}.ppm"),
        format!("{instance}/view_{vi:03}.pgm"),
        format!("{instance}/view_{vi:03}.depth"),
    )
}

/// Writes every view's files plus the manifest under `root`.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::new();
    manifest.push_str(MANIFEST_HEADER);
    manifest.push('\n');
    let _ = writeln!(manifest, "template {}", ds.template.name());
    let _ = writeln!(manifest, "classes {}", ds.classes);
    let _ = writeln!(manifest, "class_names {}", ds.class_names.join(" "));
    let _ = writeln!(manifest, "camera_radius {}", ds.camera_radius);
    let _ = writeln!(manifest, "resolution {} {}", ds.width, ds.height);
    for inst in &ds.instances {
        let dir = root.join(&inst.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let _ = writeln!(manifest, "instance {} {}", inst.id, inst.seed);
        for (vi, v) in inst.views.iter().enumerate() {
            let (pose_p, rgb_p, mask_p, depth_p) = view_paths(&inst.id, vi);
            write_pose(&root.join(&pose_p), &v.view.pose)?;
            write_ppm(&root.join(&rgb_p), &v.rgb, v.view.width, v.view.height)?;
            write_pgm(&root.join(&mask_p), &v.mask, v.view.width, v.view.height)?;
            write_depth(&root.join(&depth_p), &v.depth, v.view.width, v.view.height)?;
            let k = v.view.intrinsics;
            let _ = writeln!(
                manifest,
                "view {} {} {} {} {} {} {} {} {}",
                v.split.tag(),
                k.fx,
                k.fy,
                k.cx,
                k.cy,
                pose_p,
                rgb_p,
                mask_p,
                depth_p
            );
        }
    }
    write_atomic(&root.join(MANIFEST_NAME), manifest.as_bytes())
}

/// Loads a dataset from disk, validating the manifest version, file
/// presence, and per-instance intrinsics consistency.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join(MANIFEST_NAME);
    let bytes = read_bytes(&manifest_path)?;
    let text =
        std::str::from_utf8(&bytes).map_err(|_| Error::parse(&manifest_path, "not utf-8"))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != MANIFEST_HEADER {
        return Err(Error::VersionMismatch {
            found: header.to_string(),
            expected: MANIFEST_HEADER.to_string(),
        });
    }

    let mut template = None;
    let mut classes = None;
    let mut class_names: Vec<String> = Vec::new();
    let mut camera_radius = None;
    let mut resolution = None;
    let mut instances: Vec<InstanceRecord> = Vec::new();

    let bad = |msg: String| Error::parse(&manifest_path, msg);

    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        let key = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match key {
            "template" => {
                template = Some(Template::parse(
                    rest.first().ok_or_else(|| bad("template missing value".into()))?,
                )?);
            }
            "classes" => {
                classes = Some(
                    rest.first()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| bad("bad classes line".into()))?,
                );
            }
            "class_names" => {
                class_names = rest.iter().map(|s| s.to_string()).collect();
            }
            "camera_radius" => {
                camera_radius = Some(
                    rest.first()
                        .and_then(|s| s.parse::<f64>().ok())
                        .ok_or_else(|| bad("bad camera_radius line".into()))?,
                );
            }
            "resolution" => {
                if rest.len() != 2 {
                    return Err(bad("resolution needs width and height".into()));
                }
                let w = rest[0].parse::<usize>().map_err(|_| bad("bad width".into()))?;
                let h = rest[1].parse::<usize>().map_err(|_| bad("bad height".into()))?;
                resolution = Some((w, h));
            }
            "instance" => {
                if rest.len() != 2 {
                    return Err(bad(format!("line {}: instance needs id and seed", lineno + 2)));
                }
                let seed =
                    rest[1].parse::<u64>().map_err(|_| bad("bad instance seed".into()))?;
                instances.push(InstanceRecord {
                    id: rest[0].to_string(),
                    seed,
                    views: Vec::new(),
                });
            }
            "view" => {
                if rest.len() != 9 {
                    return Err(bad(format!("line {}: view needs 9 fields", lineno + 2)));
                }
                let inst = instances
                    .last_mut()
                    .ok_or_else(|| bad("view line before any instance".into()))?;
                let split = Split::parse(rest[0])?;
                let fx = rest[1].parse::<f64>().map_err(|_| bad("bad fx".into()))?;
                let fy = rest[2].parse::<f64>().map_err(|_| bad("bad fy".into()))?;
                let cx = rest[3].parse::<f64>().map_err(|_| bad("bad cx".into()))?;
                let cy = rest[4].parse::<f64>().map_err(|_| bad("bad cy".into()))?;
                let intrinsics = Intrinsics::new(fx, fy, cx, cy)?;
                let pose = read_pose(&root.join(rest[5]))?;
                let (rgb, w, h) = read_ppm(&root.join(rest[6]))?;
                let (mask, mw, mh) = read_pgm(&root.join(rest[7]))?;
                if (mw, mh) != (w, h) {
                    return Err(bad(format!("mask dims {mw}x{mh} vs rgb {w}x{h}")));
                }
                let depth = read_depth(&root.join(rest[8]), w * h)?;
                let (ew, eh) = resolution.ok_or_else(|| bad("resolution line missing".into()))?;
                if (w, h) != (ew, eh) {
                    return Err(bad(format!("view dims {w}x{h} vs manifest {ew}x{eh}")));
                }
                inst.views.push(ViewRecord {
                    split,
                    view: CameraView::new(intrinsics, pose, w, h)?,
                    rgb,
                    mask,
                    depth,
                });
            }
            other => {
                return Err(bad(format!("unknown manifest key {other:?}")));
            }
        }
    }

    let template = template.ok_or_else(|| bad("template line missing".into()))?;
    let classes = classes.ok_or_else(|| bad("classes line missing".into()))?;
    let camera_radius = camera_radius.ok_or_else(|| bad("camera_radius line missing".into()))?;
    let (width, height) = resolution.ok_or_else(|| bad("resolution line missing".into()))?;
    if class_names.len() != classes {
        return Err(bad(format!("{} class names for {classes} classes", class_names.len())));
    }
    for inst in &instances {
        let mut intr: Option<Intrinsics> = None;
        for v in &inst.views {
            match intr {
                None => intr = Some(v.view.intrinsics),
                Some(k) if k == v.view.intrinsics => {}
                Some(k) => {
                    return Err(bad(format!(
                        "instance {} mixes intrinsics {:?} and {:?}",
                        inst.id, k, v.view.intrinsics
                    )));
                }
            }
        }
        for v in &inst.views {
            for (i, &m) in v.mask.iter().enumerate() {
                if m as usize >= classes {
                    return Err(Error::ClassOutOfRange { index: i, classes });
                }
            }
        }
    }
    Ok(Dataset {
        template,
        classes,
        class_names,
        camera_radius,
        width,
        height,
        instances,
    })
}

/// Paths of every file a dataset write produces, manifest last. Used by
/// callers that must clean up partial output on failure.
pub fn dataset_file_list(ds: &Dataset) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for inst in &ds.instances {
        for vi in 0..inst.views.len() {
            let (a, b, c, d) = view_paths(&inst.id, vi);
            files.extend([a, b, c, d].map(PathBuf::from));
        }
    }
    files.push(PathBuf::from(MANIFEST_NAME));
    files
}
