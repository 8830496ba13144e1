//! Experiment probe: staged overfit runs, reporting PSNR and depth error
//! against the analytic ground truth.
//! Args: key=value pairs. Keys: hidden, feature, latent, mhidden, march,
//! rays, beta2, lambda_latent, stages (steps:lr[,steps:lr...]).

use semscene::dataset::{generate_dataset, GenConfig, Split};
use semscene::eval::psnr;
use semscene::synthetic::Template;
use semscene::training::{pretrain, TrainConfig};
use semscene::{ArchDims, Model};
use std::collections::BTreeMap;
use std::time::Instant;

fn main() {
    let mut kv = BTreeMap::new();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value args");
        kv.insert(k.to_string(), v.to_string());
    }
    let num = |kv: &BTreeMap<String, String>, key: &str, default: f64| -> f64 {
        kv.get(key).map(|v| v.parse().expect("numeric value")).unwrap_or(default)
    };
    let mut dims = ArchDims::default();
    dims.hidden = num(&kv, "hidden", dims.hidden as f64) as usize;
    dims.feature = num(&kv, "feature", dims.feature as f64) as usize;
    dims.latent = num(&kv, "latent", dims.latent as f64) as usize;
    dims.marcher_hidden = num(&kv, "mhidden", dims.marcher_hidden as f64) as usize;
    let march = num(&kv, "march", 10.0) as usize;
    let rays = num(&kv, "rays", 1024.0) as usize;
    let beta2 = num(&kv, "beta2", 0.999);
    let mut weights = semscene::training::LossWeights::default();
    weights.latent = num(&kv, "lambda_latent", weights.latent);
    let stages: Vec<(usize, f64)> = kv
        .get("stages")
        .expect("stages=steps:lr[,steps:lr...]")
        .split(',')
        .map(|s| {
            let (a, b) = s.split_once(':').expect("steps:lr");
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();

    let data = generate_dataset(&GenConfig {
        template: Template::Chair,
        instances: 1,
        train_views: 16,
        test_views: 0,
        resolution: 32,
        seed: 0,
        camera_radius: 2.5,
    })
    .unwrap();
    let mut model = Model::init(dims, march, 2.5, 7).unwrap();
    let t0 = Instant::now();
    let mut seed = 1;
    for &(steps, lr) in &stages {
        let cfg = TrainConfig {
            steps,
            rays_per_step: rays,
            lr,
            beta2,
            seed,
            weights,
            ..TrainConfig::default()
        };
        let log = pretrain(&mut model, &data, &cfg).unwrap();
        let tail: Vec<String> = log
            .lines
            .iter()
            .rev()
            .take(4)
            .rev()
            .map(|l| l.split("loss=").nth(1).unwrap_or("?").split(' ').next().unwrap().into())
            .collect();
        println!("stage steps={steps} lr={lr}: tail losses {}", tail.join(" "));
        seed += 1;
    }
    let train_secs = t0.elapsed().as_secs_f64();
    let znorm2: f64 = model.latents.get("inst_0000").unwrap().z.iter().map(|v| v * v).sum();

    let mut psnrs = Vec::new();
    let mut depth_err = Vec::new();
    let mut signed_depth = Vec::new();
    let (mut se_bg, mut n_bg) = (0.0, 0usize);
    // Foreground split: interior pixels (same GT class on all 4 neighbors)
    // vs edge pixels (silhouette or part boundary).
    let (mut se_int, mut n_int, mut se_edge, mut n_edge) = (0.0, 0usize, 0.0, 0usize);
    let (mut de_int, mut de_edge) = (Vec::new(), Vec::new());
    let res = 32i64;
    for vr in data.instances[0].views_in(Split::Train) {
        let out = model.render("inst_0000", &vr.view).unwrap();
        psnrs.push(psnr(&out.rgb, &vr.rgb).unwrap());
        for (i, &gt) in vr.depth.iter().enumerate() {
            let se: f64 = (0..3)
                .map(|c| (out.rgb[3 * i + c] - vr.rgb[3 * i + c]).powi(2))
                .sum();
            if gt.is_finite() {
                depth_err.push((out.depth[i] - gt).abs());
                signed_depth.push(out.depth[i] - gt);
                let (u, v) = (i as i64 % res, i as i64 / res);
                let cls = vr.mask[i];
                let interior = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().all(|&(du, dv)| {
                    let (nu, nv) = (u + du, v + dv);
                    nu >= 0
                        && nu < res
                        && nv >= 0
                        && nv < res
                        && vr.mask[(nv * res + nu) as usize] == cls
                });
                if interior {
                    se_int += se;
                    n_int += 1;
                    de_int.push((out.depth[i] - gt).abs());
                } else {
                    se_edge += se;
                    n_edge += 1;
                    de_edge.push((out.depth[i] - gt).abs());
                }
            } else {
                se_bg += se;
                n_bg += 1;
            }
        }
    }
    let med = |xs: &mut Vec<f64>| -> f64 {
        if xs.is_empty() {
            return f64::NAN;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs[xs.len() / 2]
    };
    let mean_psnr = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    let median_depth = med(&mut depth_err);
    let median_signed = med(&mut signed_depth);
    println!(
        "cfg={kv:?} time={train_secs:.0}s mean_psnr={mean_psnr:.2} \
         median_fg_depth_err={median_depth:.4} median_signed={median_signed:+.4} \
         mse_bg={:.5} ({n_bg} px) znorm2={znorm2:.3}",
        se_bg / (3.0 * n_bg.max(1) as f64),
    );
    println!(
        "  fg interior: mse={:.5} depth_med={:.4} ({n_int} px)  fg edge: mse={:.5} depth_med={:.4} ({n_edge} px)",
        se_int / (3.0 * n_int.max(1) as f64),
        med(&mut de_int),
        se_edge / (3.0 * n_edge.max(1) as f64),
        med(&mut de_edge),
    );
}
