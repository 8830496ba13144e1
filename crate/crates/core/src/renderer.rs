//! Differentiable rendering: LSTM ray marcher locating ray-surface
//! intersections, an RGB head, and a linear segmentation head.

use crate::autodiff::{DiffValue, Tape, TensorShape};
use crate::camera::{rays_for_view, CameraView, Ray};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::nn::{LayerNormParams, Linear, LstmCell};
use crate::params::{ParamId, ParamStore};
use crate::scene::{generate_scene, ArchDims, Hypernetwork, LatentCode, SceneFunction};
use rand::Rng;

/// Initial marcher depth and depth cap, relative to the camera orbit radius.
/// Objects live in the unit sphere; the band [radius-1.2, radius+1.2]
/// covers every possible surface point with margin.
pub const MARCH_NEAR_MARGIN: f64 = 1.2;
pub const MARCH_FAR_MARGIN: f64 = 1.2;

/// Ray-marcher parameters: an LSTM cell reading scene features, and a
/// projection from hidden state to a step length.
pub struct MarcherParams {
    pub lstm: LstmCell,
    pub proj: Linear,
    pub steps: usize,
    pub d0: f64,
    pub max_depth: f64,
}

impl MarcherParams {
    /// `camera_radius` fixes the depth band. The projection bias starts at
    /// -2 so initial steps are small (softplus(-2) ~ 0.13) and the march
    /// stays inside the band under a random LSTM.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        dims: ArchDims,
        steps: usize,
        camera_radius: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("march step count must be >= 1".into()));
        }
        let d0 = camera_radius - MARCH_NEAR_MARGIN;
        if d0 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera radius {camera_radius} puts initial depth {d0} <= 0"
            )));
        }
        let lstm = LstmCell::init(store, "marcher.lstm", dims.feature, dims.marcher_hidden, rng)?;
        let proj = Linear::init(store, "marcher.proj", dims.marcher_hidden, 1, rng)?;
        store.data_mut(proj.b)[0] = -2.0;
        Ok(MarcherParams { lstm, proj, steps, d0, max_depth: camera_radius + MARCH_FAR_MARGIN })
    }

    pub fn from_store(
        store: &ParamStore,
        dims: ArchDims,
        steps: usize,
        d0: f64,
        max_depth: f64,
    ) -> Result<Self> {
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        let lstm = LstmCell {
            wx: [find("marcher.lstm.wxi")?, find("marcher.lstm.wxf")?, find("marcher.lstm.wxg")?, find("marcher.lstm.wxo")?],
            wh: [find("marcher.lstm.whi")?, find("marcher.lstm.whf")?, find("marcher.lstm.whg")?, find("marcher.lstm.who")?],
            b: [find("marcher.lstm.bi")?, find("marcher.lstm.bf")?, find("marcher.lstm.bg")?, find("marcher.lstm.bo")?],
            input_dim: dims.feature,
            hidden_dim: dims.marcher_hidden,
        };
        let proj = Linear {
            w: find("marcher.proj.w")?,
            b: find("marcher.proj.b")?,
            in_dim: dims.marcher_hidden,
            out_dim: 1,
        };
        Ok(MarcherParams { lstm, proj, steps, d0, max_depth })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.lstm.param_ids();
        ids.extend(self.proj.param_ids());
        ids
    }
}

/// 4-layer MLP mapping features to RGB in (0,1): three hidden layers with
/// layer normalization and ReLU, a linear output layer, sigmoid.
pub struct RgbHead {
    pub layers: [Linear; 4],
    pub norms: [LayerNormParams; 3],
}

/// Initial bias of the final color layer: sigmoid(2) ~ 0.88, so renders
/// start near the bright image statistics of white-background scenes
/// instead of mid-gray, which the saturating output otherwise leaves the
/// optimizer to climb toward at a vanishing gradient.
pub const RGB_BIAS_INIT: f64 = 2.0;

impl RgbHead {
    pub fn init<R: Rng>(store: &mut ParamStore, dims: ArchDims, rng: &mut R) -> Result<Self> {
        let (n, h) = (dims.feature, dims.hidden);
        let shapes = [(n, h), (h, h), (h, h), (h, 3)];
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for (i, (li, lo)) in shapes.into_iter().enumerate() {
            layers.push(Linear::init(store, &format!("rgb.l{i}"), li, lo, rng)?);
            if i < 3 {
                norms.push(LayerNormParams::init(store, &format!("rgb.ln{i}"), lo)?);
            }
        }
        for v in store.data_mut(layers[3].b) {
            *v = RGB_BIAS_INIT;
        }
        Ok(RgbHead {
            layers: [layers[0], layers[1], layers[2], layers[3]],
            norms: [norms[0], norms[1], norms[2]],
        })
    }

    pub fn from_store(store: &ParamStore, dims: ArchDims) -> Result<Self> {
        let (n, h) = (dims.feature, dims.hidden);
        let shapes = [(n, h), (h, h), (h, h), (h, 3)];
        let find = |name: String| {
            store.find(&name).ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for (i, (li, lo)) in shapes.into_iter().enumerate() {
            layers.push(Linear {
                w: find(format!("rgb.l{i}.w"))?,
                b: find(format!("rgb.l{i}.b"))?,
                in_dim: li,
                out_dim: lo,
            });
            if i < 3 {
                norms.push(LayerNormParams {
                    gain: find(format!("rgb.ln{i}.gain"))?,
                    bias: find(format!("rgb.ln{i}.bias"))?,
                    dim: lo,
                });
            }
        }
        Ok(RgbHead {
            layers: [layers[0], layers[1], layers[2], layers[3]],
            norms: [norms[0], norms[1], norms[2]],
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.extend(l.param_ids());
        }
        for n in &self.norms {
            ids.extend(n.param_ids());
        }
        ids
    }

    /// `features [B,n] -> rgb [B,3]` in (0,1).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: DiffValue,
    ) -> Result<DiffValue> {
        let mut x = features;
        for i in 0..4 {
            let bound = self.layers[i].bind(tape, store);
            let h = bound.forward(tape, x)?;
            if i < 3 {
                let ln = self.norms[i].bind(tape, store);
                let normed = ln.forward(tape, h)?;
                x = tape.relu(normed);
            } else {
                x = h;
            }
        }
        Ok(tape.sigmoid(x))
    }
}

/// Linear map from features to class logits: exactly n*c + c parameters.
pub struct SegHead {
    pub linear: Linear,
}

impl SegHead {
    pub fn init<R: Rng>(store: &mut ParamStore, dims: ArchDims, rng: &mut R) -> Result<Self> {
        Ok(SegHead { linear: Linear::init(store, "seg", dims.feature, dims.classes, rng)? })
    }

    pub fn from_store(store: &ParamStore, dims: ArchDims) -> Result<Self> {
        let find = |name: &str| {
            store.find(name).ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        Ok(SegHead {
            linear: Linear {
                w: find("seg.w")?,
                b: find("seg.b")?,
                in_dim: dims.feature,
                out_dim: dims.classes,
            },
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.linear.param_ids().to_vec()
    }

    /// `features [B,n] -> logits [B,c]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: DiffValue,
    ) -> Result<DiffValue> {
        self.linear.bind(tape, store).forward(tape, features)
    }
}

/// On-tape result of marching a ray batch.
#[derive(Debug)]
pub struct MarchResult {
    /// Final intersection points, `[B,3]`.
    pub points: DiffValue,
    /// Final depths, `[B,1]`.
    pub depth: DiffValue,
    /// Plain snapshots of the depth column: initial plus one per step.
    pub step_depths: Vec<Vec<f64>>,
}

/// `min(x, cap)` elementwise via `cap - relu(cap - x)`.
fn clamp_max(tape: &mut Tape, x: DiffValue, cap: f64) -> Result<DiffValue> {
    let shape = tape.shape(x).clone();
    let capv = tape.constant(&vec![cap; shape.numel()], shape);
    let neg = tape.scale(x, -1.0);
    let diff = tape.add(capv, neg)?;
    let r = tape.relu(diff);
    let negr = tape.scale(r, -1.0);
    tape.add(capv, negr)
}

/// World points `origin + depth * direction` from a depth column `[B,1]`.
fn points_from_depth(
    tape: &mut Tape,
    depth: DiffValue,
    origins: DiffValue,
    dirs: DiffValue,
) -> Result<DiffValue> {
    let ones = tape.constant(&[1.0, 1.0, 1.0], TensorShape::matrix(1, 3));
    let depth3 = tape.matmul(depth, ones)?;
    let scaled = tape.mul(depth3, dirs)?;
    tape.add(scaled, origins)
}

fn check_finite(tape: &Tape, v: DiffValue, what: &str, width: usize) -> Result<()> {
    if let Some(idx) = tape.data(v).iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: format!("{what} (ray {})", idx / width), index: idx });
    }
    Ok(())
}

/// Marches `rays` through `scene` for `marcher.steps` LSTM steps. Depth is
/// non-decreasing (softplus step lengths) and capped at `max_depth`. Fully
/// differentiable through all steps.
pub fn march(
    tape: &mut Tape,
    store: &ParamStore,
    scene: &SceneFunction,
    rays: &[Ray],
    marcher: &MarcherParams,
) -> Result<MarchResult> {
    if rays.is_empty() {
        return Err(Error::InvalidArgument("march needs at least one ray".into()));
    }
    let b = rays.len();
    let n = scene.dims.feature;
    let hm = marcher.lstm.hidden_dim;

    let mut origin_data = Vec::with_capacity(b * 3);
    let mut dir_data = Vec::with_capacity(b * 3);
    for r in rays {
        origin_data.extend_from_slice(&r.origin.to_array());
        dir_data.extend_from_slice(&r.direction.to_array());
    }
    let origins = tape.constant(&origin_data, TensorShape::matrix(b, 3));
    let dirs = tape.constant(&dir_data, TensorShape::matrix(b, 3));

    let lstm = marcher.lstm.bind(tape, store);
    let proj = marcher.proj.bind(tape, store);

    let mut depth = tape.constant(&vec![marcher.d0; b], TensorShape::matrix(b, 1));
    let zeros = vec![0.0; b * hm];
    let mut h = tape.constant(&zeros, TensorShape::matrix(b, hm));
    let mut c = tape.constant(&zeros, TensorShape::matrix(b, hm));

    let mut step_depths = Vec::with_capacity(marcher.steps + 1);
    step_depths.push(tape.data(depth).to_vec());

    for _ in 0..marcher.steps {
        let points = points_from_depth(tape, depth, origins, dirs)?;
        let v = scene.features(tape, points)?;
        check_finite(tape, v, "march feature", n)?;
        let (h_next, c_next) = lstm.step(tape, v, h, c)?;
        h = h_next;
        c = c_next;
        let pre = proj.forward(tape, h)?;
        let steplen = tape.softplus(pre);
        let advanced = tape.add(depth, steplen)?;
        depth = clamp_max(tape, advanced, marcher.max_depth)?;
        step_depths.push(tape.data(depth).to_vec());
    }

    let points = points_from_depth(tape, depth, origins, dirs)?;
    Ok(MarchResult { points, depth, step_depths })
}

/// On-tape render of a ray batch: march, query features at the final
/// points, and decode with both heads.
pub struct TapeRender {
    pub march: MarchResult,
    /// Features at the final intersection points, `[B,n]`.
    pub features: DiffValue,
    /// `[B,3]` in (0,1).
    pub rgb: DiffValue,
    /// `[B,c]`.
    pub logits: DiffValue,
}

/// Generates the scene for `z` (already on tape) and renders `rays` with
/// full differentiability: gradients reach the hypernetwork, z, the
/// marcher, and both heads.
pub fn render_rays_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    hn: &Hypernetwork,
    z: DiffValue,
    rays: &[Ray],
    marcher: &MarcherParams,
    rgb_head: &RgbHead,
    seg_head: &SegHead,
) -> Result<TapeRender> {
    let scene = generate_scene(tape, store, hn, z)?;
    let march = march_scene(tape, store, &scene, rays, marcher)?;
    let features = scene.features(tape, march.points)?;
    check_finite(tape, features, "surface feature", scene.dims.feature)?;
    let rgb = rgb_head.forward(tape, store, features)?;
    let logits = seg_head.forward(tape, store, features)?;
    Ok(TapeRender { march, features, rgb, logits })
}

fn march_scene(
    tape: &mut Tape,
    store: &ParamStore,
    scene: &SceneFunction,
    rays: &[Ray],
    marcher: &MarcherParams,
) -> Result<MarchResult> {
    march(tape, store, scene, rays, marcher)
}

/// Plain rendered view: per-pixel color, class logits, depth, and the 3D
/// intersection points, all row-major.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// `height*width*3`, values in (0,1).
    pub rgb: Vec<f64>,
    /// `height*width*classes`.
    pub logits: Vec<f64>,
    /// `height*width`.
    pub depth: Vec<f64>,
    /// `height*width*3`.
    pub points: Vec<f64>,
    /// `height*width*n` scene features at the intersection points.
    pub features: Vec<f64>,
}

impl RenderOutput {
    /// Per-pixel argmax class ids.
    pub fn class_map(&self) -> Vec<u8> {
        let c = self.classes;
        (0..self.width * self.height)
            .map(|i| argmax(&self.logits[i * c..(i + 1) * c]) as u8)
            .collect()
    }

    pub fn pixel_point(&self, idx: usize) -> Vec3 {
        Vec3::new(self.points[idx * 3], self.points[idx * 3 + 1], self.points[idx * 3 + 2])
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Renders a full view without keeping gradients. Ray batches are chunked
/// to bound tape size.
pub fn render_view(
    store: &ParamStore,
    hn: &Hypernetwork,
    z: &LatentCode,
    view: &CameraView,
    marcher: &MarcherParams,
    rgb_head: &RgbHead,
    seg_head: &SegHead,
) -> Result<RenderOutput> {
    let rays = rays_for_view(view);
    let c = hn.dims.classes;
    let mut out = RenderOutput {
        width: view.width,
        height: view.height,
        classes: c,
        rgb: Vec::with_capacity(rays.len() * 3),
        logits: Vec::with_capacity(rays.len() * c),
        depth: Vec::with_capacity(rays.len()),
        points: Vec::with_capacity(rays.len() * 3),
        features: Vec::with_capacity(rays.len() * hn.dims.feature),
    };
    for chunk in rays.chunks(2048) {
        let mut tape = Tape::new();
        let zv = tape.constant(&z.z, TensorShape::matrix(1, hn.dims.latent));
        let r = render_rays_on_tape(&mut tape, store, hn, zv, chunk, marcher, rgb_head, seg_head)?;
        out.rgb.extend_from_slice(tape.data(r.rgb));
        out.logits.extend_from_slice(tape.data(r.logits));
        out.depth.extend_from_slice(tape.data(r.march.depth));
        out.points.extend_from_slice(tape.data(r.march.points));
        out.features.extend_from_slice(tape.data(r.features));
    }
    debug_assert!(points_consistent(&out, &rays));
    Ok(out)
}

fn points_consistent(out: &RenderOutput, rays: &[Ray]) -> bool {
    rays.iter().enumerate().all(|(i, ray)| {
        let p = ray.origin + ray.direction * out.depth[i];
        (p - out.pixel_point(i)).norm() < 1e-9
    })
}

/// One labeled surface point extracted from a rendered pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub position: Vec3,
    /// In [0,1].
    pub rgb: [f64; 3],
    pub class: u8,
}

/// Union over views of final intersection points whose predicted class is
/// foreground (nonzero), with the color and label of their source pixels.
pub fn point_cloud(
    store: &ParamStore,
    hn: &Hypernetwork,
    z: &LatentCode,
    views: &[CameraView],
    marcher: &MarcherParams,
    rgb_head: &RgbHead,
    seg_head: &SegHead,
) -> Result<Vec<LabeledPoint>> {
    let mut cloud = Vec::new();
    for view in views {
        let out = render_view(store, hn, z, view, marcher, rgb_head, seg_head)?;
        let classes = out.class_map();
        for (i, &cls) in classes.iter().enumerate() {
            if cls == 0 {
                continue;
            }
            cloud.push(LabeledPoint {
                position: out.pixel_point(i),
                rgb: [out.rgb[i * 3], out.rgb[i * 3 + 1], out.rgb[i * 3 + 2]],
                class: cls,
            });
        }
    }
    Ok(cloud)
}
