// Does feeding sRGB-encoded pixels (instead of linear) change training?
use cubelight::dataset::{read_dataset, split_dataset, Split};
use cubelight::nn::Layer;
use cubelight::probe::{evaluate_probe, extract_features, train_linear_probe, LabelSet, ProbeConfig, ProbeData, SplitData, Task};
use cubelight::render::Image8;
use cubelight::tensor::Tensor;
use cubelight::train::{train_ssl, params_from_checkpoint, SslConfig, TrainData};
use std::path::Path;

fn load_srgb(ds: &cubelight::dataset::Dataset, idx: &[usize]) -> Tensor<f32> {
    let mut data = vec![0.0f32; idx.len() * 3072];
    for (k, &i) in idx.iter().enumerate() {
        let rec = ds.record(i);
        let bytes = std::fs::read(ds.root.join(&rec.png)).unwrap();
        let img = Image8::from_png_bytes(&bytes).unwrap();
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[k * 3072 + c * 1024 + p] = px[c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![idx.len(), 3, 32, 32], data).unwrap()
}

fn main() {
    let ds = read_dataset(Path::new("/tmp/desk0/dataset")).unwrap();
    let (train_idx, val_idx, test_idx) = split_dataset(&ds.manifest);
    let labels = |idx: &[usize]| LabelSet {
        object_ids: idx.iter().map(|&g| ds.record(g).object_id).collect(),
        lighting_bits: idx.iter().map(|&g| ds.record(g).label).collect(),
    };
    let data = TrainData {
        images: load_srgb(&ds, &train_idx),
        object_ids: train_idx.iter().map(|&g| ds.record(g).object_id).collect(),
        n_objects: 50,
        per_object: ds.manifest.splits.train,
    };
    let cfg = SslConfig { epochs: 40, n_pairs: 64, checkpoint_every: 40, seed: 0, ..Default::default() };
    let dir = Path::new("/tmp/ssl_srgb");
    std::fs::create_dir_all(dir).unwrap();
    let series = train_ssl(&data, &cfg, dir).unwrap();
    println!("final loss {:.4}", series.log.last().unwrap().mean_loss);

    let probe_data = ProbeData {
        train: SplitData { images: load_srgb(&ds, &train_idx), labels: labels(&train_idx) },
        val: SplitData { images: load_srgb(&ds, &val_idx), labels: labels(&val_idx) },
        test: SplitData { images: load_srgb(&ds, &test_idx), labels: labels(&test_idx) },
        n_objects: 50,
    };
    let params = params_from_checkpoint(&cubelight::tensor::Checkpoint::load(&series.checkpoints.last().unwrap().1).unwrap()).unwrap();
    for layer in [Layer::H, Layer::Z, Layer::X] {
        let tr = extract_features(&params, layer, Split::Train, &probe_data.train.images).unwrap();
        let te = extract_features(&params, layer, Split::Test, &probe_data.test.images).unwrap();
        for epochs in [200usize, 1000] {
            let pc = ProbeConfig { epochs, seed: 0, ..Default::default() };
            let p = train_linear_probe(&tr, &probe_data.train.labels, Task::Object, 50, &pc).unwrap();
            let acc = evaluate_probe(&p, &te, &probe_data.test.labels).unwrap();
            print!("{layer} {epochs}ep {:.4}  ", acc);
        }
        println!();
    }
}
