//! Experiment probe for the multi-instance protocol: trains (or reloads)
//! a 12-instance fixture, fits the segmentation head, then reports
//! held-out mIOU vs the raw-input control, consistency rate, and
//! mask-only inference quality.
//! Args: key=value. Keys: stages (steps:lr[,steps:lr...]), beta2,
//! ckpt (cache path), infer_iters, infer_lr, skip_infer (0/1).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semscene::camera::rays_for_view;
use semscene::dataset::{generate_dataset, Dataset, GenConfig, Split, ViewRecord};
use semscene::eval::{consistency_rate, miou, psnr, ConsistencyView, SegPair};
use semscene::synthetic::Template;
use semscene::training::{
    fit_logistic, fit_seg_head, infer_latent, logistic_predict, pretrain, select_labeled_subset,
    FitConfig, InferConfig, LabeledView, Observation, TrainConfig,
};
use semscene::{ArchDims, LatentCode, Model, Vec3};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

fn control_rows(vr: &ViewRecord) -> Vec<f64> {
    let rays = rays_for_view(&vr.view);
    let mut x = Vec::with_capacity(rays.len() * 6);
    for (i, ray) in rays.iter().enumerate() {
        let p = if vr.depth[i].is_finite() {
            ray.origin + ray.direction * vr.depth[i]
        } else {
            Vec3::ZERO
        };
        x.extend([p.x, p.y, p.z, vr.rgb[3 * i], vr.rgb[3 * i + 1], vr.rgb[3 * i + 2]]);
    }
    x
}

fn main() {
    let mut kv = BTreeMap::new();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value args");
        kv.insert(k.to_string(), v.to_string());
    }
    let num = |key: &str, default: f64| -> f64 {
        kv.get(key).map(|v| v.parse().expect("numeric value")).unwrap_or(default)
    };
    let beta2 = num("beta2", 0.999);
    let infer_iters = num("infer_iters", 300.0) as usize;
    let infer_lr = num("infer_lr", 1e-2);
    let skip_infer = num("skip_infer", 0.0) as usize == 1;
    let stages_str = kv.get("stages").cloned().unwrap_or_else(|| "4000:2e-3".into());
    let stages: Vec<(usize, f64)> = stages_str
        .split(',')
        .map(|s| {
            let (a, b) = s.split_once(':').expect("steps:lr");
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let default_ckpt = format!("/tmp/fixture_{}_{beta2}.ckpt", stages_str.replace([':', ','], "_"));
    let ckpt = kv.get("ckpt").cloned().unwrap_or(default_ckpt);

    let data = generate_dataset(&GenConfig {
        template: Template::Chair,
        instances: 12,
        train_views: 16,
        test_views: 2,
        resolution: 32,
        seed: 11,
        camera_radius: 2.5,
    })
    .unwrap();

    let t0 = Instant::now();
    let mut model = if Path::new(&ckpt).exists() {
        println!("loading cached fixture {ckpt}");
        Model::load(Path::new(&ckpt)).unwrap()
    } else {
        let mut model = Model::init(ArchDims::default(), 10, 2.5, 7).unwrap();
        let mut seed = 1;
        for &(steps, lr) in &stages {
            let cfg = TrainConfig {
                steps,
                lr,
                beta2,
                seed,
                log_every: 500,
                ..TrainConfig::default()
            };
            let log = pretrain(&mut model, &data, &cfg).unwrap();
            for l in &log.lines {
                println!("{l}");
            }
            seed += 1;
        }
        model.save(Path::new(&ckpt)).unwrap();
        println!("pretrain {:.0}s, saved {ckpt}", t0.elapsed().as_secs_f64());
        model
    };

    // Seg head fit on the class-covering labeled subset.
    let labeled_idx = select_labeled_subset(&data, 10, 3).unwrap();
    let views: Vec<LabeledView> = labeled_idx
        .iter()
        .map(|&(ii, vi)| {
            let inst = &data.instances[ii];
            LabeledView {
                instance_id: inst.id.clone(),
                view: inst.views[vi].view,
                mask: inst.views[vi].mask.clone(),
            }
        })
        .collect();
    fit_seg_head(&mut model, &views, &FitConfig { log_every: usize::MAX, ..FitConfig::default() })
        .unwrap();

    // Held-out mIOU and train PSNR.
    let classes = data.classes;
    let mut pairs = Vec::new();
    let mut test_psnr = Vec::new();
    for inst in &data.instances {
        for vr in inst.views_in(Split::Test) {
            let out = model.render(&inst.id, &vr.view).unwrap();
            test_psnr.push(psnr(&out.rgb, &vr.rgb).unwrap());
            pairs.push(SegPair { pred: out.class_map(), gt: vr.mask.clone() });
        }
    }
    let model_miou = miou(&pairs, classes, false).unwrap();
    let mean_test_psnr = test_psnr.iter().sum::<f64>() / test_psnr.len() as f64;

    // Raw-input control.
    let mut x = Vec::new();
    let mut y: Vec<usize> = Vec::new();
    for &(ii, vi) in &labeled_idx {
        let vr = &data.instances[ii].views[vi];
        x.extend(control_rows(vr));
        y.extend(vr.mask.iter().map(|&m| m as usize));
    }
    let rows = y.len();
    let (w, b, _) = fit_logistic(
        &x,
        rows,
        6,
        &y,
        classes,
        vec![0.0; 6 * classes],
        vec![0.0; classes],
        &FitConfig { log_every: usize::MAX, ..FitConfig::default() },
    )
    .unwrap();
    let mut control_pairs = Vec::new();
    for inst in &data.instances {
        for vr in inst.views_in(Split::Test) {
            let cx = control_rows(vr);
            let pred = logistic_predict(&w, &b, &cx, vr.mask.len(), 6, classes);
            control_pairs.push(SegPair { pred, gt: vr.mask.clone() });
        }
    }
    let control_miou = miou(&control_pairs, classes, false).unwrap();
    println!(
        "c4: heldout_miou={model_miou:.3} control_miou={control_miou:.3} margin={:.3} test_psnr={mean_test_psnr:.2}",
        model_miou - control_miou
    );

    // Consistency over 50 pairs x 200 samples.
    let mut rendered: Vec<(&ViewRecord, Vec<u8>)> = Vec::new();
    for inst in &data.instances {
        for vr in inst.views_in(Split::Train).take(4) {
            let out = model.render(&inst.id, &vr.view).unwrap();
            rendered.push((vr, out.class_map()));
        }
    }
    fn cv<'a>(r: &'a (&'a ViewRecord, Vec<u8>)) -> ConsistencyView<'a> {
        ConsistencyView { view: &r.0.view, gt_depth: &r.0.depth, pred_classes: &r.1 }
    }
    let mut cpairs = Vec::new();
    for chunk in rendered.chunks(4) {
        for i in 0..chunk.len() {
            for j in i + 1..chunk.len() {
                if cpairs.len() < 50 {
                    cpairs.push((cv(&chunk[i]), cv(&chunk[j])));
                }
            }
        }
    }
    let rate = consistency_rate(&cpairs, 200, 5).unwrap();
    println!("c5: consistency_rate={rate:.4}");

    if skip_infer {
        return;
    }

    // Mask-only inference on 12 fresh instances.
    let held = generate_dataset(&GenConfig {
        template: Template::Chair,
        instances: 12,
        train_views: 2,
        test_views: 0,
        resolution: 32,
        seed: 501,
        camera_radius: 2.5,
    })
    .unwrap();
    let mut successes = 0;
    let ti = Instant::now();
    for (i, inst) in held.instances.iter().enumerate() {
        let obs = &inst.views[0];
        let eval = &inst.views[1];
        let (code, _) = infer_latent(
            &model,
            &[Observation { view: obs.view, rgb: None, mask: Some(obs.mask.clone()) }],
            &InferConfig {
                iters: infer_iters,
                lr: infer_lr,
                seed: 60 + i as u64,
                log_every: usize::MAX,
                ..InferConfig::default()
            },
        )
        .unwrap();
        let out = model.render_code(&code, &eval.view).unwrap();
        let pair = SegPair { pred: out.class_map(), gt: eval.mask.clone() };
        let m = miou(std::slice::from_ref(&pair), classes, false).unwrap();
        let p = psnr(&out.rgb, &eval.rgb).unwrap();
        let mut prior_rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let rc = LatentCode::sample_prior(model.dims.latent, &mut prior_rng);
        let rp = psnr(&model.render_code(&rc, &eval.view).unwrap().rgb, &eval.rgb).unwrap();
        let ok = m >= 0.5 && p >= rp + 5.0;
        successes += usize::from(ok);
        println!(
            "  infer {}: miou={m:.3} psnr={p:.2} random_psnr={rp:.2} {}",
            inst.id,
            if ok { "ok" } else { "miss" }
        );
    }
    println!(
        "c6: successes={successes}/12 infer_time={:.0}s total_time={:.0}s",
        ti.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64()
    );
}
