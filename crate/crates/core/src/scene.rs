//! The latent-conditioned implicit scene: a hypernetwork maps a per-object
//! embedding z to the weights of a scene function, and the scene function
//! maps world coordinates to feature vectors.

use crate::autodiff::{DiffValue, Tape, TensorShape};
use crate::error::{Error, Result};
use crate::nn::{self, kaiming_sample};
use crate::params::{ParamId, ParamStore};
use rand::Rng;

/// Network dimensions shared across the model. Persisted in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchDims {
    /// Embedding dimension k.
    pub latent: usize,
    /// Scene-function hidden width h.
    pub hidden: usize,
    /// Feature dimension n.
    pub feature: usize,
    /// Ray-marcher LSTM hidden width.
    pub marcher_hidden: usize,
    /// Semantic class count c, including background class 0.
    pub classes: usize,
}

impl Default for ArchDims {
    fn default() -> Self {
        ArchDims { latent: 32, hidden: 32, feature: 32, marcher_hidden: 32, classes: 5 }
    }
}

impl ArchDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent", self.latent),
            ("hidden", self.hidden),
            ("feature", self.feature),
            ("marcher_hidden", self.marcher_hidden),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} dim must be >= 1")));
            }
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "class count must be >= 2 (background + foreground), got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// (input, output) of each scene-function layer.
    pub fn scene_layer_shapes(&self) -> [(usize, usize); 4] {
        let h = self.hidden;
        [(3, h), (h, h), (h, h), (h, self.feature)]
    }

    /// Total generated weight count l (weights + biases of all layers).
    pub fn scene_weight_count(&self) -> usize {
        self.scene_layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Per-object embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if let Some(idx) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "latent code".into(), index: idx });
        }
        Ok(LatentCode { z })
    }

    /// Zero-mean Gaussian draw with sigma 0.01, the prior for new objects.
    pub fn sample_prior<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let z = (0..dim).map(|_| gaussian(rng) * 0.01).collect();
        LatentCode { z }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn interpolate(&self, other: &LatentCode, alpha: f64) -> Result<LatentCode> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                op: "interpolate",
                detail: format!("{} vs {}", self.dim(), other.dim()),
            });
        }
        if alpha == 0.0 {
            return Ok(self.clone());
        }
        if alpha == 1.0 {
            return Ok(other.clone());
        }
        let z = self
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        Ok(LatentCode { z })
    }
}

/// Box-Muller standard normal draw.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// One-hidden-layer MLP emitting one scene-function layer's flat parameters.
#[derive(Clone, Copy, Debug)]
struct HyperHead {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    target_in: usize,
    target_out: usize,
}

impl HyperHead {
    fn out_dim(&self) -> usize {
        self.target_in * self.target_out + self.target_out
    }
}

/// Maps embeddings to scene-function weights, one head per target layer.
pub struct Hypernetwork {
    heads: Vec<HyperHead>,
    pub dims: ArchDims,
}

impl Hypernetwork {
    /// The hidden layer uses fan-in scaling. The output layer weights are
    /// shrunk by 1/hidden and its bias is set to a fan-in sample of the
    /// target layer, so every freshly generated scene function starts near
    /// standard MLP init regardless of z.
    pub fn init<R: Rng>(store: &mut ParamStore, dims: ArchDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let k = dims.latent;
        let mut heads = Vec::new();
        for (idx, (t_in, t_out)) in dims.scene_layer_shapes().into_iter().enumerate() {
            let out = t_in * t_out + t_out;
            let w1: Vec<f64> = (0..k * k).map(|_| kaiming_sample(rng, k)).collect();
            let w2: Vec<f64> =
                (0..k * out).map(|_| kaiming_sample(rng, k) / dims.hidden as f64).collect();
            let mut b2 = vec![0.0; out];
            for slot in b2.iter_mut().take(t_in * t_out) {
                *slot = kaiming_sample(rng, t_in);
            }
            let name = format!("hn.layer{idx}");
            heads.push(HyperHead {
                w1: store.add(&format!("{name}.w1"), w1, TensorShape::matrix(k, k))?,
                b1: store.add(&format!("{name}.b1"), vec![0.0; k], TensorShape::matrix(1, k))?,
                w2: store.add(&format!("{name}.w2"), w2, TensorShape::matrix(k, out))?,
                b2: store.add(&format!("{name}.b2"), b2, TensorShape::matrix(1, out))?,
                target_in: t_in,
                target_out: t_out,
            });
        }
        Ok(Hypernetwork { heads, dims })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(|h| [h.w1, h.b1, h.w2, h.b2]).collect()
    }

    /// Reassembles the handle from a store that already holds the buffers
    /// (checkpoint load path).
    pub fn from_store(store: &ParamStore, dims: ArchDims) -> Result<Self> {
        dims.validate()?;
        let mut heads = Vec::new();
        for (idx, (t_in, t_out)) in dims.scene_layer_shapes().into_iter().enumerate() {
            let name = format!("hn.layer{idx}");
            let get = |suffix: &str| {
                store.find(&format!("{name}.{suffix}")).ok_or_else(|| {
                    Error::InvalidArgument(format!("missing parameter {name}.{suffix}"))
                })
            };
            heads.push(HyperHead {
                w1: get("w1")?,
                b1: get("b1")?,
                w2: get("w2")?,
                b2: get("b2")?,
                target_in: t_in,
                target_out: t_out,
            });
        }
        Ok(Hypernetwork { heads, dims })
    }
}

/// Generated scene function: 4 affine layers living on a tape, with fixed
/// layer normalization and ReLU after each of the first three.
pub struct SceneFunction {
    layers: Vec<(DiffValue, DiffValue)>,
    pub dims: ArchDims,
}

/// Runs the hypernetwork on `z` (shape `[1,k]`), emitting all scene-function
/// weights on the tape. Gradients flow to both the hypernetwork parameters
/// and `z`.
pub fn generate_scene(
    tape: &mut Tape,
    store: &ParamStore,
    hn: &Hypernetwork,
    z: DiffValue,
) -> Result<SceneFunction> {
    let k = hn.dims.latent;
    let (zr, zc) = tape.shape(z).as_matrix();
    if zr != 1 || zc != k {
        return Err(Error::ShapeMismatch {
            op: "generate_scene",
            detail: format!("latent shape {} vs expected [1x{k}]", tape.shape(z)),
        });
    }
    let mut layers = Vec::with_capacity(hn.heads.len());
    for head in &hn.heads {
        let w1 = tape.param(store, head.w1);
        let b1 = tape.param(store, head.b1);
        let w2 = tape.param(store, head.w2);
        let b2 = tape.param(store, head.b2);
        let pre = tape.matmul(z, w1)?;
        let pre = tape.add_bias_row(pre, b1)?;
        let hid = tape.relu(pre);
        let out = tape.matmul(hid, w2)?;
        let out = tape.add_bias_row(out, b2)?;
        let wcount = head.target_in * head.target_out;
        let w_flat = tape.slice_cols(out, 0, wcount)?;
        let w = tape.reshape(w_flat, TensorShape::matrix(head.target_in, head.target_out))?;
        let b = tape.slice_cols(out, wcount, head.target_out)?;
        layers.push((w, b));
        debug_assert_eq!(head.out_dim(), wcount + head.target_out);
    }
    Ok(SceneFunction { layers, dims: hn.dims })
}

impl SceneFunction {
    /// Features for a batch of points `[B,3] -> [B,n]`. Row i depends only
    /// on point i.
    pub fn features(&self, tape: &mut Tape, points: DiffValue) -> Result<DiffValue> {
        let (_, cols) = tape.shape(points).as_matrix();
        if cols != 3 {
            return Err(Error::ShapeMismatch {
                op: "scene_features",
                detail: format!("points shape {}, want [Bx3]", tape.shape(points)),
            });
        }
        let mut x = points;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let h = tape.matmul(x, w)?;
            let h = tape.add_bias_row(h, b)?;
            if i < last {
                let (_, width) = tape.shape(h).as_matrix();
                let normed = nn::layer_norm_fixed(tape, h, width)?;
                x = tape.relu(normed);
            } else {
                x = h;
            }
        }
        Ok(x)
    }

    /// Flat copy of the generated weights, layer by layer (weights then
    /// bias), total `scene_weight_count` values.
    pub fn flat_weights(&self, tape: &Tape) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.scene_weight_count());
        for &(w, b) in &self.layers {
            out.extend_from_slice(tape.data(w));
            out.extend_from_slice(tape.data(b));
        }
        out
    }
}
