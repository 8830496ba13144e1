//! Optimization: Adam, RGB pretraining over a view collection, logistic
//! fitting of the segmentation head on frozen features, test-time latent
//! inference from partial observations, and labeled-subset selection.

use crate::autodiff::{Tape, TensorShape};
use crate::camera::{rays_for_view, CameraView, Ray};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{ParamId, ParamStore};
use crate::renderer::render_rays_on_tape;
use crate::scene::LatentCode;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ── Adam ─────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 4e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Bias-corrected Adam with per-buffer moment state. A buffer whose
/// gradient contains any non-finite value is left untouched for that step
/// and counted in `skipped`.
pub struct AdamState {
    pub cfg: AdamConfig,
    moments: Vec<Option<Moments>>,
    pub skipped: usize,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState { cfg, moments: Vec::new(), skipped: 0 }
    }

    /// Applies one update to `id`; returns false if the gradient was
    /// non-finite and the step was skipped.
    pub fn step(&mut self, store: &mut ParamStore, id: ParamId, grad: &[f64]) -> bool {
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        let idx = id.index();
        if self.moments.len() <= idx {
            self.moments.resize_with(idx + 1, || None);
        }
        let data = store.data_mut(id);
        assert_eq!(data.len(), grad.len(), "gradient length mismatch for parameter update");
        let mom = self.moments[idx].get_or_insert_with(|| Moments {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
            t: 0,
        });
        mom.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(mom.t as i32);
        let bc2 = 1.0 - c.beta2.powi(mom.t as i32);
        for i in 0..grad.len() {
            mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * grad[i];
            mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mhat = mom.m[i] / bc1;
            let vhat = mom.v[i] / bc2;
            data[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
        }
        true
    }
}

// ── Configuration ────────────────────────────────────────────────────

/// Relative weights of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub rgb: f64,
    pub ce: f64,
    pub latent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 1.0, ce: 0.04, latent: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    /// Rays sampled per optimization step (distinct pixels of one view).
    pub rays_per_step: usize,
    pub lr: f64,
    /// Adam second-moment decay; smaller values adapt faster to the
    /// high-variance gradients of single-view steps.
    pub beta2: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            rays_per_step: 1024,
            lr: 4e-4,
            beta2: 0.999,
            seed: 0,
            weights: LossWeights::default(),
            log_every: 50,
        }
    }
}

/// Per-run record: one loss per completed step, plus periodic
/// `key=value` log lines for display.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub skipped_steps: usize,
    pub lines: Vec<String>,
}

impl TrainLog {
    fn record(&mut self, stage: &str, step: usize, total: usize, loss: f64, every: usize) {
        self.step_losses.push(loss);
        if every > 0 && (step % every == 0 || step + 1 == total) {
            self.lines.push(format!(
                "stage={stage} step={step} loss={loss:.6} skipped={}",
                self.skipped_steps
            ));
        }
    }
}

/// `count` distinct indices out of `0..total` (all of them, in order, if
/// `count >= total`), via a partial shuffle.
pub fn sample_pixels<R: Rng>(rng: &mut R, total: usize, count: usize) -> Vec<usize> {
    if count >= total {
        return (0..total).collect();
    }
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.gen_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}

fn gather_rays(view: &CameraView, pixels: &[usize]) -> Vec<Ray> {
    let all = rays_for_view(view);
    pixels.iter().map(|&i| all[i]).collect()
}

// ── RGB pretraining ──────────────────────────────────────────────────

/// Jointly optimizes shared weights (hypernetwork, marcher, RGB head) and
/// one latent code per dataset instance on the training views, minimizing
/// `w.rgb * MSE(rgb) + w.latent * |z|^2`. Each step draws one instance,
/// one of its training views, and a pixel subset. Existing latents are
/// reused as starting points; missing ones start at prior samples.
pub fn pretrain(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    if data.instances.is_empty() {
        return Err(Error::InvalidArgument("dataset has no instances".into()));
    }
    for inst in &data.instances {
        let n = inst.views_in(Split::Train).count();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "instance {} has {n} training views; multi-view training needs at least 2",
                inst.id
            )));
        }
    }
    let k = model.dims.latent;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = model.store.clone();
    let mut zids = Vec::with_capacity(data.instances.len());
    for inst in &data.instances {
        let z0 = match model.latents.get(&inst.id) {
            Some(z) => z.clone(),
            None => LatentCode::sample_prior(k, &mut rng),
        };
        zids.push(store.add(&format!("z.{}", inst.id), z0.z, TensorShape::matrix(1, k))?);
    }
    let mut shared: Vec<ParamId> = model.hypernetwork.param_ids();
    shared.extend(model.marcher.param_ids());
    shared.extend(model.rgb_head.param_ids());

    let mut adam =
        AdamState::new(AdamConfig { lr: cfg.lr, beta2: cfg.beta2, ..AdamConfig::default() });
    let mut log = TrainLog::default();
    let zeros = vec![0.0; k];
    for step in 0..cfg.steps {
        let ii = rng.gen_range(0..data.instances.len());
        let inst = &data.instances[ii];
        let views: Vec<_> = inst.views_in(Split::Train).collect();
        let vr = views[rng.gen_range(0..views.len())];
        let pixels = sample_pixels(&mut rng, vr.view.pixel_count(), cfg.rays_per_step);
        let rays = gather_rays(&vr.view, &pixels);
        let target: Vec<f64> = pixels
            .iter()
            .flat_map(|&p| vr.rgb[p * 3..p * 3 + 3].iter().copied())
            .collect();

        let mut tape = Tape::new();
        let zv = tape.param(&store, zids[ii]);
        let render = render_rays_on_tape(
            &mut tape,
            &store,
            &model.hypernetwork,
            zv,
            &rays,
            &model.marcher,
            &model.rgb_head,
            &model.seg_head,
        )?;
        let rgb_mse = tape.mse(render.rgb, &target)?;
        let z_pen = tape.mse(zv, &zeros)?;
        let a = tape.scale(rgb_mse, cfg.weights.rgb);
        // mse(z, 0) is |z|^2 / k.
        let b = tape.scale(z_pen, cfg.weights.latent * k as f64);
        let loss = tape.add(a, b)?;
        let loss_val = tape.value(loss);
        if !loss_val.is_finite() {
            log.skipped_steps += 1;
            continue;
        }
        tape.backward(loss)?;
        for &id in shared.iter().chain(std::iter::once(&zids[ii])) {
            if let Some(g) = tape.param_grad(id) {
                adam.step(&mut store, id, &g);
            }
        }
        log.skipped_steps = log.skipped_steps.max(adam.skipped);
        log.record("pretrain", step, cfg.steps, loss_val, cfg.log_every);
    }

    let shared_ids: Vec<ParamId> = model.store.ids().collect();
    for id in shared_ids {
        model.store.data_mut(id).copy_from_slice(store.data(id));
    }
    for (inst, &zid) in data.instances.iter().zip(&zids) {
        model.latents.insert(inst.id.clone(), LatentCode::new(store.data(zid).to_vec())?);
    }
    Ok(log)
}

// ── Segmentation head fitting ────────────────────────────────────────

/// One view with ground-truth class labels for head fitting.
#[derive(Clone, Debug)]
pub struct LabeledView {
    pub instance_id: String,
    pub view: CameraView,
    /// `height*width` class ids, background included.
    pub mask: Vec<u8>,
}

#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { steps: 400, lr: 0.05, log_every: 50 }
    }
}

/// Full-batch multinomial logistic regression: optimizes `w [dim,classes]`
/// and `b [1,classes]` from the given starting values on mean cross-entropy
/// with Adam, inputs held constant. Returns the fitted weights and the
/// per-step losses.
pub fn fit_logistic(
    x: &[f64],
    rows: usize,
    dim: usize,
    labels: &[usize],
    classes: usize,
    w0: Vec<f64>,
    b0: Vec<f64>,
    cfg: &FitConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if x.len() != rows * dim || labels.len() != rows || rows == 0 {
        return Err(Error::ShapeMismatch {
            op: "fit_logistic",
            detail: format!("{} values, {rows} rows of {dim}, {} labels", x.len(), labels.len()),
        });
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::ClassOutOfRange { index: l, classes });
        }
    }
    let mut store = ParamStore::new();
    let wid = store.add("w", w0, TensorShape::matrix(dim, classes))?;
    let bid = store.add("b", b0, TensorShape::matrix(1, classes))?;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let xv = tape.constant(x, TensorShape::matrix(rows, dim));
        let wv = tape.param(&store, wid);
        let bv = tape.param(&store, bid);
        let xw = tape.matmul(xv, wv)?;
        let logits = tape.add_bias_row(xw, bv)?;
        let loss = tape.softmax_cross_entropy_rows(logits, labels)?;
        tape.backward(loss)?;
        losses.push(tape.value(loss));
        for id in [wid, bid] {
            if let Some(g) = tape.param_grad(id) {
                adam.step(&mut store, id, &g);
            }
        }
    }
    Ok((store.data(wid).to_vec(), store.data(bid).to_vec(), losses))
}

/// Argmax predictions of a fitted linear classifier.
pub fn logistic_predict(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    rows: usize,
    dim: usize,
    classes: usize,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..classes {
            let mut v = b[c];
            for d in 0..dim {
                v += x[r * dim + d] * w[d * classes + c];
            }
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        out.push(best as u8);
    }
    out
}

/// Fits only the segmentation head on the frozen backbone: renders each
/// labeled view once to collect per-pixel features, then runs logistic
/// regression over every pixel (background included). No other parameter
/// is touched.
pub fn fit_seg_head(model: &mut Model, labeled: &[LabeledView], cfg: &FitConfig) -> Result<TrainLog> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("segmentation fitting needs labeled views".into()));
    }
    let n = model.dims.feature;
    let c = model.dims.classes;
    let mut x = Vec::new();
    let mut y: Vec<usize> = Vec::new();
    for lv in labeled {
        let out = model.render(&lv.instance_id, &lv.view)?;
        if lv.mask.len() != out.width * out.height {
            return Err(Error::ShapeMismatch {
                op: "fit_seg_head",
                detail: format!(
                    "mask has {} pixels, view {}x{}",
                    lv.mask.len(),
                    out.width,
                    out.height
                ),
            });
        }
        for &m in &lv.mask {
            if m as usize >= c {
                return Err(Error::ClassOutOfRange { index: m as usize, classes: c });
            }
        }
        x.extend_from_slice(&out.features);
        y.extend(lv.mask.iter().map(|&m| m as usize));
    }
    let rows = y.len();
    let w0 = model.store.data(model.seg_head.linear.w).to_vec();
    let b0 = model.store.data(model.seg_head.linear.b).to_vec();
    let (w, b, losses) = fit_logistic(&x, rows, n, &y, c, w0, b0, cfg)?;
    model.store.data_mut(model.seg_head.linear.w).copy_from_slice(&w);
    model.store.data_mut(model.seg_head.linear.b).copy_from_slice(&b);
    let mut log = TrainLog::default();
    for (i, l) in losses.iter().enumerate() {
        log.record("fit-head", i, losses.len(), *l, cfg.log_every);
    }
    Ok(log)
}

// ── Test-time latent inference ───────────────────────────────────────

/// One observed view of an unseen object: color, labels, or both.
#[derive(Clone, Debug)]
pub struct Observation {
    pub view: CameraView,
    /// `height*width*3` in [0,1], if color was observed.
    pub rgb: Option<Vec<f64>>,
    /// `height*width` class ids, if labels were observed.
    pub mask: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Debug)]
pub struct InferConfig {
    pub iters: usize,
    pub rays_per_step: usize,
    /// Latent-only optimization tolerates a much larger rate than joint
    /// training; the prior scale is 0.01.
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub log_every: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            iters: 400,
            rays_per_step: 1024,
            lr: 1e-2,
            seed: 0,
            weights: LossWeights::default(),
            log_every: 50,
        }
    }
}

/// Optimizes a fresh latent code against the observations with all shared
/// weights frozen, and returns the iterate whose sampled objective was
/// lowest (the prior sample itself when `iters == 0`). The objective sums
/// `w.rgb * MSE` over observed colors, `w.ce * CE` over observed labels
/// (background pixels included), and `w.latent * |z|^2`.
pub fn infer_latent(
    model: &Model,
    observations: &[Observation],
    cfg: &InferConfig,
) -> Result<(LatentCode, TrainLog)> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("latent inference needs observations".into()));
    }
    let c = model.dims.classes;
    for (i, ob) in observations.iter().enumerate() {
        let px = ob.view.pixel_count();
        match (&ob.rgb, &ob.mask) {
            (None, None) => {
                return Err(Error::InvalidArgument(format!(
                    "observation {i} has neither color nor labels"
                )))
            }
            (rgb, mask) => {
                if let Some(rgb) = rgb {
                    if rgb.len() != px * 3 {
                        return Err(Error::ShapeMismatch {
                            op: "infer_latent",
                            detail: format!("observation {i}: {} rgb values for {px} pixels", rgb.len()),
                        });
                    }
                }
                if let Some(mask) = mask {
                    if mask.len() != px {
                        return Err(Error::ShapeMismatch {
                            op: "infer_latent",
                            detail: format!("observation {i}: {} labels for {px} pixels", mask.len()),
                        });
                    }
                    for &m in mask {
                        if m as usize >= c {
                            return Err(Error::ClassOutOfRange { index: m as usize, classes: c });
                        }
                    }
                }
            }
        }
    }

    let k = model.dims.latent;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z0 = LatentCode::sample_prior(k, &mut rng);
    let mut store = model.store.clone();
    let zid = store.add("z.infer", z0.z.clone(), TensorShape::matrix(1, k))?;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut log = TrainLog::default();
    let mut best = z0;
    let mut best_loss = f64::INFINITY;
    let zeros = vec![0.0; k];
    for iter in 0..cfg.iters {
        let ob = &observations[rng.gen_range(0..observations.len())];
        let pixels = sample_pixels(&mut rng, ob.view.pixel_count(), cfg.rays_per_step);
        let rays = gather_rays(&ob.view, &pixels);
        let mut tape = Tape::new();
        let zv = tape.param(&store, zid);
        let render = render_rays_on_tape(
            &mut tape,
            &store,
            &model.hypernetwork,
            zv,
            &rays,
            &model.marcher,
            &model.rgb_head,
            &model.seg_head,
        )?;
        let z_pen = tape.mse(zv, &zeros)?;
        let mut loss = tape.scale(z_pen, cfg.weights.latent * k as f64);
        if let Some(rgb) = &ob.rgb {
            let target: Vec<f64> =
                pixels.iter().flat_map(|&p| rgb[p * 3..p * 3 + 3].iter().copied()).collect();
            let e = tape.mse(render.rgb, &target)?;
            let e = tape.scale(e, cfg.weights.rgb);
            loss = tape.add(loss, e)?;
        }
        if let Some(mask) = &ob.mask {
            let targets: Vec<usize> = pixels.iter().map(|&p| mask[p] as usize).collect();
            let e = tape.softmax_cross_entropy_rows(render.logits, &targets)?;
            let e = tape.scale(e, cfg.weights.ce);
            loss = tape.add(loss, e)?;
        }
        let loss_val = tape.value(loss);
        if !loss_val.is_finite() {
            log.skipped_steps += 1;
            continue;
        }
        if loss_val < best_loss {
            best_loss = loss_val;
            best = LatentCode::new(store.data(zid).to_vec())?;
        }
        tape.backward(loss)?;
        if let Some(g) = tape.param_grad(zid) {
            adam.step(&mut store, zid, &g);
        }
        log.skipped_steps = log.skipped_steps.max(adam.skipped);
        log.record("infer", iter, cfg.iters, loss_val, cfg.log_every);
    }
    Ok((best, log))
}

// ── Labeled subset selection ─────────────────────────────────────────

/// Picks `count` distinct training views (as `(instance index, view index)`
/// pairs) whose masks jointly cover every class that appears anywhere in
/// the training split, by seeded rejection sampling.
pub fn select_labeled_subset(
    data: &Dataset,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let mut pool = Vec::new();
    let mut achievable = vec![false; data.classes];
    for (ii, inst) in data.instances.iter().enumerate() {
        for (vi, vr) in inst.views.iter().enumerate() {
            if vr.split == Split::Train {
                pool.push((ii, vi));
                for &m in &vr.mask {
                    achievable[m as usize] = true;
                }
            }
        }
    }
    if count == 0 || count > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {count} of {} training views",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let picks = sample_pixels(&mut rng, pool.len(), count);
        let mut seen = vec![false; data.classes];
        for &p in &picks {
            let (ii, vi) = pool[p];
            for &m in &data.instances[ii].views[vi].mask {
                seen[m as usize] = true;
            }
        }
        if seen == achievable {
            let mut chosen: Vec<(usize, usize)> = picks.iter().map(|&p| pool[p]).collect();
            chosen.sort_unstable();
            return Ok(chosen);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no {count}-view subset covering all classes found after 10000 draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, GenConfig};
    use crate::scene::ArchDims;
    use crate::synthetic::Template;

    fn tiny_dims() -> ArchDims {
        ArchDims { latent: 4, hidden: 8, feature: 8, marcher_hidden: 8, classes: 5 }
    }

    fn tiny_dataset(instances: usize, train_views: usize, seed: u64) -> Dataset {
        generate_dataset(&GenConfig {
            template: Template::Chair,
            instances,
            train_views,
            test_views: 1,
            resolution: 8,
            seed,
            camera_radius: 2.5,
        })
        .unwrap()
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let mut store = ParamStore::new();
        let id = store.add("p", vec![1.0, 2.0, 3.0, 4.0], TensorShape::vector(4)).unwrap();
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg);
        let grad = [1.0, -2.0, 3.0, -0.5];
        assert!(adam.step(&mut store, id, &grad));
        let data = store.data(id);
        let expect = [1.0 - cfg.lr, 2.0 + cfg.lr, 3.0 - cfg.lr, 4.0 + cfg.lr];
        for i in 0..4 {
            // First bias-corrected step is lr * g/(|g| + ~0) = lr * sign(g).
            assert!((data[i] - expect[i]).abs() < cfg.lr * 1e-4, "{:?}", data);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", vec![1.0], TensorShape::scalar()).unwrap();
        let mut adam = AdamState::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
        for _ in 0..200 {
            let x = store.data(id)[0];
            let grad = [2.0 * x];
            adam.step(&mut store, id, &grad);
        }
        let x = store.data(id)[0];
        assert!(x.abs() < 0.2, "x = {x}");
        assert_eq!(adam.skipped, 0);
    }

    #[test]
    fn adam_skips_non_finite_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("p", vec![0.5, -0.5], TensorShape::vector(2)).unwrap();
        let before: Vec<u64> = store.data(id).iter().map(|v| v.to_bits()).collect();
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(!adam.step(&mut store, id, &[f64::NAN, 1.0]));
        assert!(!adam.step(&mut store, id, &[0.0, f64::INFINITY]));
        let after: Vec<u64> = store.data(id).iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        assert_eq!(adam.skipped, 2);
        // A later finite step still behaves like a first step.
        assert!(adam.step(&mut store, id, &[1.0, 1.0]));
        let d = store.data(id);
        assert!((d[0] - (0.5 - adam.cfg.lr)).abs() < adam.cfg.lr * 1e-4);
    }

    #[test]
    fn default_weights_and_config() {
        let w = LossWeights::default();
        assert_eq!(w.rgb, 1.0);
        assert_eq!(w.ce, 0.04);
        assert_eq!(w.latent, 1e-3);
        let c = TrainConfig::default();
        assert_eq!(c.rays_per_step, 1024);
        assert_eq!(c.lr, 4e-4);
    }

    #[test]
    fn pixel_sampling_is_distinct_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let total = rng.gen_range(1..100);
            let count = rng.gen_range(1..120);
            let picks = sample_pixels(&mut rng, total, count);
            if count >= total {
                assert_eq!(picks, (0..total).collect::<Vec<_>>());
            } else {
                assert_eq!(picks.len(), count);
                let mut sorted = picks.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), count, "duplicates in {picks:?}");
                assert!(picks.iter().all(|&p| p < total));
            }
        }
    }

    #[test]
    fn pretrain_rejects_single_view_instances() {
        let data = tiny_dataset(1, 1, 3);
        let mut model = Model::init(tiny_dims(), 2, 2.5, 0).unwrap();
        let err = pretrain(&mut model, &data, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("inst_0000"), "{err}");
    }

    fn median(xs: &[f64]) -> f64 {
        let mut s = xs.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[s.len() / 2]
    }

    #[test]
    fn pretrain_reduces_loss_and_stores_latents() {
        let data = tiny_dataset(1, 2, 5);
        let mut model = Model::init(tiny_dims(), 3, 2.5, 1).unwrap();
        let cfg = TrainConfig {
            steps: 300,
            rays_per_step: 32,
            lr: 3e-3,
            seed: 9,
            ..TrainConfig::default()
        };
        let log = pretrain(&mut model, &data, &cfg).unwrap();
        assert_eq!(log.step_losses.len(), 300);
        let first = median(&log.step_losses[..50]);
        let last = median(&log.step_losses[250..]);
        assert!(last < first, "median loss went {first} -> {last}");
        assert!(model.latents.contains_key("inst_0000"));
        assert!(!log.lines.is_empty());
        assert!(log.lines[0].contains("stage=pretrain") && log.lines[0].contains("loss="));
    }

    #[test]
    fn pretrain_is_deterministic() {
        let data = tiny_dataset(2, 2, 7);
        let cfg = TrainConfig {
            steps: 20,
            rays_per_step: 16,
            lr: 1e-3,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = Model::init(tiny_dims(), 2, 2.5, 11).unwrap();
            pretrain(&mut model, &data, &cfg).unwrap();
            let mut bits = Vec::new();
            for id in model.store.ids() {
                bits.extend(model.store.data(id).iter().map(|v| v.to_bits()));
            }
            for z in model.latents.values() {
                bits.extend(z.z.iter().map(|v| v.to_bits()));
            }
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn heavy_latent_penalty_shrinks_codes() {
        let data = tiny_dataset(1, 2, 13);
        let mut model = Model::init(tiny_dims(), 2, 2.5, 2).unwrap();
        let mut weights = LossWeights::default();
        weights.latent = 1e4;
        let cfg = TrainConfig {
            steps: 80,
            rays_per_step: 16,
            lr: 3e-3,
            seed: 21,
            weights,
            ..TrainConfig::default()
        };
        // Reproduce the prior draw the run will start from.
        let z0 = LatentCode::sample_prior(
            model.dims.latent,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        );
        let norm0: f64 = z0.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        pretrain(&mut model, &data, &cfg).unwrap();
        let z = &model.latents["inst_0000"];
        let norm: f64 = z.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < norm0 * 0.5, "|z| {norm0} -> {norm}");
    }

    #[test]
    fn logistic_fit_separates_labeled_points() {
        let x = vec![0.0, 1.0, 1.0, 0.0, 0.1, 0.9, 0.9, 0.1];
        let labels = vec![1usize, 0, 1, 0];
        let cfg = FitConfig { steps: 300, lr: 0.1, log_every: 0 };
        let (w, b, losses) =
            fit_logistic(&x, 4, 2, &labels, 2, vec![0.0; 4], vec![0.0; 2], &cfg).unwrap();
        assert!(losses[losses.len() - 1] < losses[0] * 0.2);
        let pred = logistic_predict(&w, &b, &x, 4, 2, 2);
        assert_eq!(pred, vec![1, 0, 1, 0]);
    }

    #[test]
    fn seg_head_fit_leaves_backbone_untouched() {
        let mut model = Model::init(tiny_dims(), 2, 2.5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        model
            .latents
            .insert("a".into(), LatentCode::sample_prior(model.dims.latent, &mut rng));
        let pose = crate::camera::Pose::look_at(
            crate::math::Vec3::new(1.5, 1.0, -1.5),
            crate::math::Vec3::ZERO,
        );
        let view =
            CameraView::new(crate::camera::Intrinsics::centered(4), pose, 4, 4).unwrap();
        let mask: Vec<u8> = (0..16).map(|i| (i % 5) as u8).collect();
        let labeled =
            [LabeledView { instance_id: "a".into(), view, mask }];
        let seg_ids: Vec<usize> =
            model.seg_head.param_ids().iter().map(|p| p.index()).collect();
        let before: Vec<Vec<u64>> = model
            .store
            .ids()
            .map(|id| model.store.data(id).iter().map(|v| v.to_bits()).collect())
            .collect();
        let cfg = FitConfig { steps: 40, lr: 0.05, log_every: 0 };
        let log = fit_seg_head(&mut model, &labeled, &cfg).unwrap();
        let mut seg_changed = false;
        for id in model.store.ids() {
            let now: Vec<u64> = model.store.data(id).iter().map(|v| v.to_bits()).collect();
            if seg_ids.contains(&id.index()) {
                seg_changed |= now != before[id.index()];
            } else {
                assert_eq!(now, before[id.index()], "{} changed", model.store.name(id));
            }
        }
        assert!(seg_changed);
        let l = &log.step_losses;
        assert!(l[l.len() - 1] < l[0], "{} -> {}", l[0], l[l.len() - 1]);
    }

    #[test]
    fn infer_rejects_modality_free_observations() {
        let model = Model::init(tiny_dims(), 2, 2.5, 0).unwrap();
        let pose = crate::camera::Pose::look_at(
            crate::math::Vec3::new(0.0, 1.0, -2.0),
            crate::math::Vec3::ZERO,
        );
        let view =
            CameraView::new(crate::camera::Intrinsics::centered(4), pose, 4, 4).unwrap();
        let obs = [Observation { view, rgb: None, mask: None }];
        assert!(infer_latent(&model, &obs, &InferConfig::default()).is_err());
        assert!(infer_latent(&model, &[], &InferConfig::default()).is_err());
    }

    #[test]
    fn infer_zero_iters_returns_the_prior_sample() {
        let model = Model::init(tiny_dims(), 2, 2.5, 0).unwrap();
        let pose = crate::camera::Pose::look_at(
            crate::math::Vec3::new(0.0, 1.0, -2.0),
            crate::math::Vec3::ZERO,
        );
        let view =
            CameraView::new(crate::camera::Intrinsics::centered(4), pose, 4, 4).unwrap();
        let obs = [Observation { view, rgb: Some(vec![0.5; 48]), mask: None }];
        let cfg = InferConfig { iters: 0, seed: 77, ..InferConfig::default() };
        let (z, log) = infer_latent(&model, &obs, &cfg).unwrap();
        let expect =
            LatentCode::sample_prior(model.dims.latent, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(z, expect);
        assert!(log.step_losses.is_empty());
    }

    #[test]
    fn infer_reduces_loss_against_own_render() {
        let model = Model::init(tiny_dims(), 3, 2.5, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        // A "ground truth" object this model can represent exactly.
        let z_true = LatentCode::new(
            (0..4).map(|_| crate::scene::gaussian(&mut rng) * 0.05).collect(),
        )
        .unwrap();
        let pose = crate::camera::Pose::look_at(
            crate::math::Vec3::new(1.2, 0.8, -1.8),
            crate::math::Vec3::ZERO,
        );
        let view =
            CameraView::new(crate::camera::Intrinsics::centered(8), pose, 8, 8).unwrap();
        let gt = model.render_code(&z_true, &view).unwrap();
        let obs = [Observation {
            view,
            rgb: Some(gt.rgb.clone()),
            mask: Some(gt.class_map()),
        }];
        let cfg = InferConfig {
            iters: 50,
            rays_per_step: 24,
            lr: 0.02,
            seed: 3,
            ..InferConfig::default()
        };
        let (best, log) = infer_latent(&model, &obs, &cfg).unwrap();
        assert_eq!(best.dim(), 4);
        let first: f64 = log.step_losses[..5].iter().sum::<f64>() / 5.0;
        let last: f64 = log.step_losses[log.step_losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn labeled_subset_covers_every_reachable_class() {
        let data = tiny_dataset(4, 3, 0);
        let chosen = select_labeled_subset(&data, 4, 17).unwrap();
        assert_eq!(chosen.len(), 4);
        let mut achievable = vec![false; data.classes];
        let mut seen = vec![false; data.classes];
        for inst in &data.instances {
            for vr in inst.views_in(Split::Train) {
                for &m in &vr.mask {
                    achievable[m as usize] = true;
                }
            }
        }
        for &(ii, vi) in &chosen {
            assert_eq!(data.instances[ii].views[vi].split, Split::Train);
            for &m in &data.instances[ii].views[vi].mask {
                seen[m as usize] = true;
            }
        }
        assert_eq!(seen, achievable);
        // Deterministic in the seed.
        assert_eq!(chosen, select_labeled_subset(&data, 4, 17).unwrap());
        // Out-of-range requests fail.
        assert!(select_labeled_subset(&data, 0, 0).is_err());
        assert!(select_labeled_subset(&data, 1000, 0).is_err());
    }
}
