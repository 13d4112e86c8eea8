// h-vs-z probe gap as a function of the projection output width.
use cubelight::dataset::{read_dataset, Split};
use cubelight::nn::Layer;
use cubelight::probe::{evaluate_probe, extract_features, train_linear_probe, ProbeConfig, ProbeData, Task};
use cubelight::train::{train_ssl, params_from_checkpoint, SslConfig, TrainData};
use std::path::Path;

fn main() {
    let ds = read_dataset(Path::new("/tmp/desk0/dataset")).unwrap();
    let data = TrainData::from_dataset(&ds).unwrap();
    let probe_data = ProbeData::from_dataset(&ds).unwrap();
    for d_z in [128usize, 32, 16] {
        for seed in [0u64, 1] {
            let cfg = SslConfig { epochs: 40, n_pairs: 64, checkpoint_every: 40, seed, d_z, ..Default::default() };
            let dir_s = format!("/tmp/ssl_dz{d_z}_s{seed}");
            let dir = Path::new(&dir_s);
            std::fs::create_dir_all(dir).unwrap();
            let series = train_ssl(&data, &cfg, dir).unwrap();
            let params = params_from_checkpoint(&cubelight::tensor::Checkpoint::load(&series.checkpoints.last().unwrap().1).unwrap()).unwrap();
            print!("d_z {d_z} seed {seed}: loss {:.3} |", series.log.last().unwrap().mean_loss);
            for layer in [Layer::H, Layer::Z] {
                let tr = extract_features(&params, layer, Split::Train, &probe_data.train.images).unwrap();
                let te = extract_features(&params, layer, Split::Test, &probe_data.test.images).unwrap();
                let pc = ProbeConfig { epochs: 200, seed, ..Default::default() };
                let p = train_linear_probe(&tr, &probe_data.train.labels, Task::Object, 50, &pc).unwrap();
                print!(" {layer} {:.4}", evaluate_probe(&p, &te, &probe_data.test.labels).unwrap());
            }
            println!();
        }
    }
}
