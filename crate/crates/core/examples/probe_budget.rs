// How do h and z probes respond to probe-training budget?
use cubelight::dataset::{read_dataset, Split};
use cubelight::nn::Layer;
use cubelight::probe::{evaluate_probe, extract_features, train_linear_probe, ProbeConfig, ProbeData, Task};
use cubelight::tensor::Checkpoint;
use cubelight::train::params_from_checkpoint;
use std::path::Path;

fn main() {
    let ds = read_dataset(Path::new("/tmp/desk0/dataset")).unwrap();
    let data = ProbeData::from_dataset(&ds).unwrap();
    for (name, ckpt) in [
        ("epoch40", "/tmp/ssl_long/ckpt_epoch0040.ckpt"),
        ("epoch160", "/tmp/ssl_long/ckpt_epoch0160.ckpt"),
    ] {
        let params = params_from_checkpoint(&Checkpoint::load(Path::new(ckpt)).unwrap()).unwrap();
        for layer in [Layer::H, Layer::Z] {
            let tr = extract_features(&params, layer, Split::Train, &data.train.images).unwrap();
            let te = extract_features(&params, layer, Split::Test, &data.test.images).unwrap();
            // feature scale diagnostic
            let norm: f64 = tr.data.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / tr.data.shape()[0] as f64;
            print!("{name} {layer}: rms {:.3} |", norm.sqrt());
            for epochs in [200usize, 1000, 3000] {
                let cfg = ProbeConfig { epochs, seed: 0, ..Default::default() };
                let p = train_linear_probe(&tr, &data.train.labels, Task::Object, 50, &cfg).unwrap();
                let acc = evaluate_probe(&p, &te, &data.test.labels).unwrap();
                print!(" {epochs}ep {:.4}", acc);
            }
            println!();
        }
    }
}
