//! The full model bundle (shared weights plus per-instance latent codes)
//! and its plain-text checkpoint format.

use crate::camera::CameraView;
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::renderer::{
    point_cloud, render_view, LabeledPoint, MarcherParams, RenderOutput, RgbHead, SegHead,
};
use crate::scene::{ArchDims, Hypernetwork, LatentCode};
use crate::TensorShape;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_HEADER: &str = "semscene-checkpoint v1";

/// Everything needed to render and segment: one parameter store holding the
/// hypernetwork, marcher, and both heads, plus named per-instance latents.
pub struct Model {
    pub store: ParamStore,
    pub hypernetwork: Hypernetwork,
    pub marcher: MarcherParams,
    pub rgb_head: RgbHead,
    pub seg_head: SegHead,
    pub dims: ArchDims,
    pub camera_radius: f64,
    /// Latent code per instance id, ordered for deterministic iteration.
    pub latents: BTreeMap<String, LatentCode>,
}

impl Model {
    /// Fresh model with randomly initialized shared weights and no latents.
    pub fn init(dims: ArchDims, steps: usize, camera_radius: f64, seed: u64) -> Result<Model> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hypernetwork = Hypernetwork::init(&mut store, dims, &mut rng)?;
        let marcher = MarcherParams::init(&mut store, dims, steps, camera_radius, &mut rng)?;
        let rgb_head = RgbHead::init(&mut store, dims, &mut rng)?;
        let seg_head = SegHead::init(&mut store, dims, &mut rng)?;
        Ok(Model {
            store,
            hypernetwork,
            marcher,
            rgb_head,
            seg_head,
            dims,
            camera_radius,
            latents: BTreeMap::new(),
        })
    }

    pub fn latent(&self, instance_id: &str) -> Result<&LatentCode> {
        self.latents
            .get(instance_id)
            .ok_or_else(|| Error::UnknownInstance(instance_id.to_string()))
    }

    /// Renders a stored instance from a view.
    pub fn render(&self, instance_id: &str, view: &CameraView) -> Result<RenderOutput> {
        let z = self.latent(instance_id)?;
        self.render_code(z, view)
    }

    /// Renders an explicit latent code (e.g. an interpolant) from a view.
    pub fn render_code(&self, z: &LatentCode, view: &CameraView) -> Result<RenderOutput> {
        render_view(
            &self.store,
            &self.hypernetwork,
            z,
            view,
            &self.marcher,
            &self.rgb_head,
            &self.seg_head,
        )
    }

    /// Labeled surface points for a latent code over several views.
    pub fn point_cloud_code(
        &self,
        z: &LatentCode,
        views: &[CameraView],
    ) -> Result<Vec<LabeledPoint>> {
        point_cloud(
            &self.store,
            &self.hypernetwork,
            z,
            views,
            &self.marcher,
            &self.rgb_head,
            &self.seg_head,
        )
    }

    // ── Checkpoint serialization ─────────────────────────────────────

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        let d = self.dims;
        let _ = writeln!(s, "{CHECKPOINT_HEADER}");
        let _ = writeln!(
            s,
            "dims {} {} {} {} {}",
            d.latent, d.hidden, d.feature, d.marcher_hidden, d.classes
        );
        let m = &self.marcher;
        let _ = writeln!(s, "marcher {} {} {}", m.steps, m.d0, m.max_depth);
        let _ = writeln!(s, "camera_radius {}", self.camera_radius);
        let _ = writeln!(s, "params {}", self.store.len());
        for id in self.store.ids() {
            let shape = self.store.shape(id);
            let dims: Vec<String> = shape.dims().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                s,
                "param {} {} {}",
                self.store.name(id),
                shape.dims().len(),
                dims.join(" ")
            );
            let _ = writeln!(s, "{}", join_floats(self.store.data(id)));
        }
        let _ = writeln!(s, "latents {}", self.latents.len());
        for (id, z) in &self.latents {
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "instance id {id:?} cannot be stored in a checkpoint"
                )));
            }
            let _ = writeln!(s, "latent {} {}", id, z.dim());
            let _ = writeln!(s, "{}", join_floats(&z.z));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_text(&text, path)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Model> {
        let mut lines = Lines { inner: text.lines(), path, lineno: 0 };
        let header = lines.next_line()?;
        if header != CHECKPOINT_HEADER {
            return Err(Error::VersionMismatch {
                found: header.to_string(),
                expected: CHECKPOINT_HEADER.to_string(),
            });
        }
        let d = lines.fields("dims", 5)?;
        let dims = ArchDims {
            latent: lines.parse(&d[0])?,
            hidden: lines.parse(&d[1])?,
            feature: lines.parse(&d[2])?,
            marcher_hidden: lines.parse(&d[3])?,
            classes: lines.parse(&d[4])?,
        };
        dims.validate()?;
        let m = lines.fields("marcher", 3)?;
        let steps: usize = lines.parse(&m[0])?;
        let d0: f64 = lines.parse(&m[1])?;
        let max_depth: f64 = lines.parse(&m[2])?;
        let c = lines.fields("camera_radius", 1)?;
        let camera_radius: f64 = lines.parse(&c[0])?;

        let n = lines.fields("params", 1)?;
        let count: usize = lines.parse(&n[0])?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines.next_line()?.to_string();
            let mut it = head.split_whitespace();
            if it.next() != Some("param") {
                return Err(lines.err(&format!("expected param line, got {head:?}")));
            }
            let name =
                it.next().ok_or_else(|| lines.err("param line missing name"))?.to_string();
            let rank: usize =
                lines.parse(it.next().ok_or_else(|| lines.err("param line missing rank"))?)?;
            let mut shape_dims = Vec::new();
            for _ in 0..rank {
                shape_dims
                    .push(lines.parse(it.next().ok_or_else(|| lines.err("missing dim"))?)?);
            }
            if it.next().is_some() {
                return Err(lines.err(&format!("trailing tokens on param line {head:?}")));
            }
            let shape = TensorShape::new(&shape_dims)?;
            let data = lines.float_row(shape.numel())?;
            store.add(&name, data, shape)?;
        }

        let l = lines.fields("latents", 1)?;
        let latent_count: usize = lines.parse(&l[0])?;
        let mut latents = BTreeMap::new();
        for _ in 0..latent_count {
            let f = lines.fields("latent", 2)?;
            let id = f[0].clone();
            let dim: usize = lines.parse(&f[1])?;
            if dim != dims.latent {
                return Err(lines.err(&format!(
                    "latent {id} has dim {dim}, model dim {}",
                    dims.latent
                )));
            }
            let z = lines.float_row(dim)?;
            if latents.insert(id.clone(), LatentCode::new(z)?).is_some() {
                return Err(lines.err(&format!("duplicate latent {id}")));
            }
        }
        if let Some(extra) = lines.inner.next() {
            if !extra.trim().is_empty() {
                return Err(lines.err(&format!("trailing content {extra:?}")));
            }
        }

        let hypernetwork = Hypernetwork::from_store(&store, dims)?;
        let marcher = MarcherParams::from_store(&store, dims, steps, d0, max_depth)?;
        let rgb_head = RgbHead::from_store(&store, dims)?;
        let seg_head = SegHead::from_store(&store, dims)?;
        Ok(Model {
            store,
            hypernetwork,
            marcher,
            rgb_head,
            seg_head,
            dims,
            camera_radius,
            latents,
        })
    }
}

fn join_floats(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

/// Line cursor with positioned parse errors.
struct Lines<'a> {
    inner: std::str::Lines<'a>,
    path: &'a Path,
    lineno: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        self.lineno += 1;
        self.inner
            .next()
            .ok_or_else(|| Error::parse(self.path, format!("unexpected end at line {}", self.lineno)))
    }

    fn err(&self, detail: &str) -> Error {
        Error::parse(self.path, format!("line {}: {detail}", self.lineno))
    }

    /// Reads a line `key f1 f2 ...` with exactly `n` fields after the key.
    fn fields(&mut self, key: &str, n: usize) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some(k) if k == key => {}
            other => return Err(self.err(&format!("expected {key:?}, got {other:?}"))),
        }
        let fields: Vec<String> = it.map(str::to_string).collect();
        if fields.len() != n {
            return Err(self.err(&format!(
                "{key}: expected {n} fields, got {}",
                fields.len()
            )));
        }
        Ok(fields)
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(&format!("bad value {s:?}")))
    }

    fn float_row(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals: Result<Vec<f64>> = line.split_whitespace().map(|t| self.parse(t)).collect();
        let vals = vals?;
        if vals.len() != n {
            return Err(self.err(&format!("expected {n} values, got {}", vals.len())));
        }
        Ok(vals)
    }
}
