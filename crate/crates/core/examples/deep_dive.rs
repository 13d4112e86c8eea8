// Scratch experiments on the desk dataset: probe convergence + hue metrics,
// and the h-vs-z gap across extended ssl training.
use cubelight::color::{hue_distance, rgb_to_hsv};
use cubelight::dataset::read_dataset;
use cubelight::nn::Layer;
use cubelight::probe::{
    evaluate_probe, extract_features, train_linear_probe, ProbeConfig, ProbeData, Task,
};
use cubelight::render::RenderScene;
use cubelight::scene::{build_scene, SceneOverrides};
use cubelight::tensor::Tensor;
use cubelight::train::{train_ssl, params_from_checkpoint, SslConfig, TrainData};
use cubelight::dataset::Split;
use std::path::Path;

fn cube_mask() -> Vec<bool> {
    let cfg = build_scene(&SceneOverrides::default()).unwrap();
    let rs = RenderScene::new(&cfg, 0).unwrap();
    let mut mask = vec![false; 1024];
    for py in 0..32 {
        for px in 0..32 {
            let ray = rs.center_ray(px, py, 32, 32);
            if let Some(hit) = rs.intersect(&ray) {
                mask[py * 32 + px] =
                    matches!(hit.surface, cubelight::render::SurfaceId::CubeFace(_));
            }
        }
    }
    mask
}

fn hue_alignment_masked(w: &Tensor<f32>, mask: Option<&[bool]>) -> f64 {
    let n_classes = w.shape()[0];
    let mut ok = 0usize;
    for class in 0..n_classes {
        let cw = &w.data()[class * 3072..(class + 1) * 3072];
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for i in 0..1024 {
            if let Some(m) = mask {
                if !m[i] {
                    continue;
                }
            }
            let pos = [
                (cw[i] as f64).max(0.0),
                (cw[1024 + i] as f64).max(0.0),
                (cw[2048 + i] as f64).max(0.0),
            ];
            if pos[0].max(pos[1]).max(pos[2]) <= 0.0 {
                continue;
            }
            let (h, s, v) = rgb_to_hsv(pos);
            let chroma = s * v;
            if chroma <= 0.0 {
                continue;
            }
            sx += (h * std::f64::consts::TAU).cos() * chroma;
            sy += (h * std::f64::consts::TAU).sin() * chroma;
        }
        if sx == 0.0 && sy == 0.0 {
            continue;
        }
        let mean_h = (sy.atan2(sx) / std::f64::consts::TAU).rem_euclid(1.0);
        if hue_distance(mean_h, class as f64 / n_classes as f64) <= 60.0 / 360.0 {
            ok += 1;
        }
    }
    ok as f64 / n_classes as f64
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let ds = read_dataset(Path::new("/tmp/desk0/dataset")).unwrap();
    if which == "probe" {
        let data = ProbeData::from_dataset(&ds).unwrap();
        let mask = cube_mask();
        println!("cube pixels: {}", mask.iter().filter(|&&b| b).count());
        let params = cubelight::nn::init_params(0, 64);
        let feats = extract_features(&params, Layer::X, Split::Train, &data.train.images).unwrap();
        let test_feats = extract_features(&params, Layer::X, Split::Test, &data.test.images).unwrap();
        for epochs in [200usize, 600, 2000] {
            let cfg = ProbeConfig { epochs, seed: 0, ..Default::default() };
            let probe =
                train_linear_probe(&feats, &data.train.labels, Task::Object, 50, &cfg).unwrap();
            let acc = evaluate_probe(&probe, &test_feats, &data.test.labels).unwrap();
            println!(
                "probe epochs {epochs}: test acc {:.4}, hue full {:.2}, hue cube {:.2}",
                acc,
                hue_alignment_masked(&probe.weight, None),
                hue_alignment_masked(&probe.weight, Some(&mask))
            );
        }
    } else {
        let data = TrainData::from_dataset(&ds).unwrap();
        let cfg = SslConfig {
            epochs: 160,
            n_pairs: 64,
            checkpoint_every: 20,
            seed: 0,
            ..Default::default()
        };
        let dir = Path::new("/tmp/ssl_long");
        std::fs::create_dir_all(dir).unwrap();
        let series = train_ssl(&data, &cfg, dir).unwrap();
        let probe_data = ProbeData::from_dataset(&ds).unwrap();
        for (epoch, path) in &series.checkpoints {
            let params = params_from_checkpoint(&cubelight::tensor::Checkpoint::load(path).unwrap()).unwrap();
            let pc = ProbeConfig { seed: 0, ..Default::default() };
            let mut accs = Vec::new();
            for layer in [Layer::H, Layer::Z] {
                let f = extract_features(&params, layer, Split::Train, &probe_data.train.images).unwrap();
                let p = train_linear_probe(&f, &probe_data.train.labels, Task::Object, 50, &pc).unwrap();
                let tf = extract_features(&params, layer, Split::Test, &probe_data.test.images).unwrap();
                accs.push(evaluate_probe(&p, &tf, &probe_data.test.labels).unwrap());
            }
            println!("ssl epoch {epoch}: h {:.4} z {:.4} gap {:+.4}", accs[0], accs[1], accs[0]-accs[1]);
        }
    }
}
