//! End-to-end orchestration: dataset generation, the three training modes
//! over several seeds, the probe suite with statistics, learning curves,
//! weight visualization, and the aggregated report files.
//!
//! All outputs under the run directory are byte-deterministic for a fixed
//! master seed except run_manifest.json, which carries timestamps.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::srgb_decode;
use crate::config::PipelineConfig;
use crate::dataset::{generate_dataset, read_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::probe::{
    evaluate_probe, extract_features, probe_layer_task, train_linear_probe, LinearProbe,
    ProbeConfig, ProbeData, Task,
};
use crate::render::{reference_lighting, RenderScene};
use crate::rng::CALIBRATION_FRAME;
use crate::scene::{build_scene, SceneConfig};
use crate::stats::{bonferroni, mean, std_dev, two_sample_ttest};
use crate::tensor::{Checkpoint, Tensor};
use crate::train::{
    params_from_checkpoint, train_jitter_baseline, train_ssl, train_supervised_baseline,
    RunSeries, SslConfig, TrainData,
};
use crate::viz::{
    hue_alignment, weight_images, weight_montage, write_svg, BarChart, LinePlot, Series,
};

pub const ALPHA: f64 = 0.05;
/// Circular hue error allowed by the weight-structure check, in turns.
pub const HUE_TOLERANCE_TURNS: f64 = 60.0 / 360.0;
/// Minimum fraction of classes that must pass it.
pub const HUE_ALIGNED_FRACTION: f64 = 0.6;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ssl,
    Jitter,
    Supervised,
    /// Raw-pixel probes; no encoder involved.
    Raw,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ssl => "ssl",
            Mode::Jitter => "jitter",
            Mode::Supervised => "supervised",
            Mode::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "ssl" => Ok(Mode::Ssl),
            "jitter" => Ok(Mode::Jitter),
            "supervised" => Ok(Mode::Supervised),
            "raw" => Ok(Mode::Raw),
            other => Err(Error::config(
                "mode",
                format!("unknown mode {other:?}; valid: ssl, jitter, supervised"),
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Seed for repetition `i` under a master seed.
pub fn run_seed(master_seed: u64, i: usize) -> u64 {
    master_seed.wrapping_add(i as u64)
}

/// Generate the dataset unless a matching one already sits in `dir`.
pub fn ensure_dataset(cfg: &PipelineConfig, master_seed: u64, dir: &Path) -> Result<Dataset> {
    let scene = build_scene(&cfg.scene)?;
    if let Ok(ds) = read_dataset(dir) {
        let m = &ds.manifest;
        if m.seed == master_seed
            && m.frames_per_object == cfg.dataset.frames_per_object
            && m.n_objects == scene.palette.len()
            && m.render.samples_per_pixel == cfg.render.samples_per_pixel
            && m.render.bounce_count == cfg.render.bounce_count
            && m.render.width == cfg.render.width
            && m.scene == scene
        {
            return Ok(ds);
        }
    }
    generate_dataset(&scene, &cfg.render, &cfg.dataset, master_seed, dir)
}

/// One reference render per object (all spotlights on, white, 500 W) at
/// the dataset's calibrated exposure, quantized through the same 8-bit
/// path as stored frames.
pub fn render_jitter_base(scene: &SceneConfig, ds: &Dataset, master_seed: u64) -> Result<Tensor<f32>> {
    let settings = ds.manifest.render.clone();
    let n = scene.palette.len();
    let mut data = vec![0.0f32; n * 3 * settings.width * settings.height];
    let per = 3 * settings.width * settings.height;
    let results: Result<Vec<Vec<f32>>> = (0..n)
        .into_par_iter()
        .map(|object_id| {
            let rs = RenderScene::new(scene, object_id)?;
            let img = rs.render_frame(
                &reference_lighting(),
                &settings,
                master_seed,
                CALIBRATION_FRAME,
            )?;
            let plane = settings.width * settings.height;
            let mut out = vec![0.0f32; per];
            for (i, px) in img.data.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out[c * plane + i] = srgb_decode(px[c] as f64 / 255.0) as f32;
                }
            }
            Ok(out)
        })
        .collect();
    for (dst, src) in data.chunks_exact_mut(per).zip(results?) {
        dst.copy_from_slice(&src);
    }
    Tensor::new(vec![n, 3, settings.height, settings.width], data)
}

/// Everything trained for one master seed.
pub struct TrainedRuns {
    pub ssl: Vec<RunSeries>,
    pub jitter: Vec<RunSeries>,
    pub supervised: Vec<RunSeries>,
}

#[derive(Serialize)]
struct RunManifestEntry<'a> {
    mode: &'a str,
    seed_index: usize,
    seed: u64,
    config: &'a SslConfig,
    checkpoints: Vec<String>,
    collapsed: bool,
}

/// Emit a run's manifest (config echo, checkpoint list) and tabular loss
/// log next to its checkpoints.
pub fn write_run_outputs(dir: &Path, series: &RunSeries, cfg: &SslConfig, seed_index: usize) -> Result<()> {
    let log_path = dir.join("loss_log.csv");
    let mut text = String::from("epoch,mean_loss,embedding_std,collapsed\n");
    for row in &series.log {
        let std = row
            .embedding_std
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.mean_loss, std, row.collapsed
        ));
    }
    std::fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;

    let manifest = RunManifestEntry {
        mode: &series.tag,
        seed_index,
        seed: cfg.seed,
        config: cfg,
        checkpoints: series
            .checkpoints
            .iter()
            .map(|(_, p)| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
        collapsed: series.collapsed,
    };
    let path = dir.join("run.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Train ssl, jitter, and supervised runs for every seed. Runs execute
/// sequentially (each parallelizes internally); seeds are derived as
/// master + i.
pub fn train_all(
    cfg: &PipelineConfig,
    scene: &SceneConfig,
    ds: &Dataset,
    master_seed: u64,
    out_root: &Path,
    include_supervised: bool,
) -> Result<TrainedRuns> {
    let data = TrainData::from_dataset(ds)?;
    let jitter_base = render_jitter_base(scene, ds, master_seed)?;
    let runs_dir = out_root.join("runs");

    let mut runs = TrainedRuns {
        ssl: Vec::new(),
        jitter: Vec::new(),
        supervised: Vec::new(),
    };
    for i in 0..cfg.n_seeds {
        let seed_cfg = SslConfig {
            seed: run_seed(master_seed, i),
            ..cfg.train.clone()
        };

        let dir = runs_dir.join(format!("ssl_seed{i}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let series = train_ssl(&data, &seed_cfg, &dir)?;
        write_run_outputs(&dir, &series, &seed_cfg, i)?;
        runs.ssl.push(series);

        let dir = runs_dir.join(format!("jitter_seed{i}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let series = train_jitter_baseline(&jitter_base, data.len(), &cfg.jitter, &seed_cfg, &dir)?;
        write_run_outputs(&dir, &series, &seed_cfg, i)?;
        runs.jitter.push(series);

        if include_supervised {
            let dir = runs_dir.join(format!("supervised_seed{i}"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let series = train_supervised_baseline(&data, &seed_cfg, &dir)?;
            write_run_outputs(&dir, &series, &seed_cfg, i)?;
            runs.supervised.push(series);
        }
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Probe suite and report.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResultRow {
    pub mode: Mode,
    pub layer: Layer,
    pub task: Task,
    pub seed_index: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: Mode,
    pub layer: Layer,
    pub task: Task,
    pub mean_test_acc: f64,
    pub sd_test_acc: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub group_a: Vec<f64>,
    pub group_b: Vec<f64>,
    pub t: f64,
    pub df: usize,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub degenerate_variance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub alpha: f64,
    pub n_seeds: usize,
    pub results: Vec<ProbeResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub comparisons: Vec<ComparisonRow>,
    pub hue_alignment_fraction: f64,
    pub collapsed_runs: Vec<String>,
}

impl ProbeReport {
    pub fn aggregate(&self, mode: Mode, layer: Layer, task: Task) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.mode == mode && a.layer == layer && a.task == task)
    }

    pub fn accuracies(&self, mode: Mode, layer: Layer, task: Task) -> Vec<f64> {
        let mut rows: Vec<&ProbeResultRow> = self
            .results
            .iter()
            .filter(|r| r.mode == mode && r.layer == layer && r.task == task)
            .collect();
        rows.sort_by_key(|r| r.seed_index);
        rows.iter().map(|r| r.test_acc).collect()
    }

    pub fn comparison(&self, name: &str) -> Option<&ComparisonRow> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

struct ProbeJob {
    mode: Mode,
    layer: Layer,
    task: Task,
    seed_index: usize,
    params: Option<crate::nn::ModelParams>,
}

fn final_params(series: &RunSeries) -> Result<crate::nn::ModelParams> {
    let (_, path) = series
        .checkpoints
        .last()
        .ok_or_else(|| Error::Checkpoint("run has no checkpoints".to_string()))?;
    params_from_checkpoint(&Checkpoint::load(path)?)
}

/// Run every configured probe over the trained runs and assemble the
/// report, including the paper's four statistical comparisons under one
/// Bonferroni family and the raw-pixel weight-structure check.
pub fn probe_suite(
    cfg: &PipelineConfig,
    scene: &SceneConfig,
    data: &ProbeData,
    runs: &TrainedRuns,
    master_seed: u64,
) -> Result<ProbeReport> {
    let mut jobs: Vec<ProbeJob> = Vec::new();
    for i in 0..cfg.n_seeds {
        let ssl_params = final_params(&runs.ssl[i])?;
        for &layer in &cfg.probe_layers {
            if layer == Layer::X {
                continue;
            }
            for &task in &cfg.probe_tasks {
                jobs.push(ProbeJob {
                    mode: Mode::Ssl,
                    layer,
                    task,
                    seed_index: i,
                    params: Some(ssl_params.clone()),
                });
            }
        }
        for &task in &cfg.probe_tasks {
            jobs.push(ProbeJob {
                mode: Mode::Raw,
                layer: Layer::X,
                task,
                seed_index: i,
                params: None,
            });
        }
        if !runs.jitter.is_empty() {
            // Only object classification is defined for the jitter
            // baseline: its training images hold the lighting constant.
            jobs.push(ProbeJob {
                mode: Mode::Jitter,
                layer: Layer::H,
                task: Task::Object,
                seed_index: i,
                params: Some(final_params(&runs.jitter[i])?),
            });
        }
    }

    let results: Result<Vec<ProbeResultRow>> = jobs
        .par_iter()
        .map(|job| {
            let probe_cfg = ProbeConfig {
                seed: run_seed(master_seed, job.seed_index),
                ..cfg.probe.clone()
            };
            let params = match &job.params {
                Some(p) => p.clone(),
                // Raw-pixel probes never touch the encoder; any valid
                // parameter set satisfies the interface.
                None => crate::nn::init_params(0, cfg.train.d_z),
            };
            let (outcome, _) = probe_layer_task(&params, job.layer, job.task, data, &probe_cfg)?;
            Ok(ProbeResultRow {
                mode: job.mode,
                layer: job.layer,
                task: job.task,
                seed_index: job.seed_index,
                train_acc: outcome.train_acc,
                val_acc: outcome.val_acc,
                test_acc: outcome.test_acc,
            })
        })
        .collect();
    let mut results = results?;
    results.sort_by_key(|r| (r.mode.as_str(), r.layer, r.task, r.seed_index));

    // Aggregates.
    let mut aggregates: Vec<AggregateRow> = Vec::new();
    for r in &results {
        if aggregates
            .iter()
            .any(|a| a.mode == r.mode && a.layer == r.layer && a.task == r.task)
        {
            continue;
        }
        let accs: Vec<f64> = results
            .iter()
            .filter(|q| q.mode == r.mode && q.layer == r.layer && q.task == r.task)
            .map(|q| q.test_acc)
            .collect();
        aggregates.push(AggregateRow {
            mode: r.mode,
            layer: r.layer,
            task: r.task,
            mean_test_acc: mean(&accs),
            sd_test_acc: std_dev(&accs),
            n_seeds: accs.len(),
        });
    }

    // The four reported comparisons, one Bonferroni family.
    let pick = |mode: Mode, layer: Layer, task: Task| -> Vec<f64> {
        let mut rows: Vec<&ProbeResultRow> = results
            .iter()
            .filter(|r| r.mode == mode && r.layer == layer && r.task == task)
            .collect();
        rows.sort_by_key(|r| r.seed_index);
        rows.iter().map(|r| r.test_acc).collect()
    };
    let mut comparisons = Vec::new();
    let plan: Vec<(&str, Vec<f64>, Vec<f64>)> = vec![
        (
            "object: ssl h vs raw x",
            pick(Mode::Ssl, Layer::H, Task::Object),
            pick(Mode::Raw, Layer::X, Task::Object),
        ),
        (
            "object: ssl h vs ssl z",
            pick(Mode::Ssl, Layer::H, Task::Object),
            pick(Mode::Ssl, Layer::Z, Task::Object),
        ),
        (
            "lighting: ssl h vs raw x",
            pick(Mode::Ssl, Layer::H, Task::Lighting),
            pick(Mode::Raw, Layer::X, Task::Lighting),
        ),
        (
            "object: ssl h vs jitter h",
            pick(Mode::Ssl, Layer::H, Task::Object),
            pick(Mode::Jitter, Layer::H, Task::Object),
        ),
    ];
    let testable: Vec<&(&str, Vec<f64>, Vec<f64>)> = plan
        .iter()
        .filter(|(_, a, b)| a.len() >= 2 && b.len() >= 2)
        .collect();
    let raw_ps: Result<Vec<f64>> = testable
        .iter()
        .map(|(_, a, b)| Ok(two_sample_ttest(a, b)?.p))
        .collect();
    let adjusted = bonferroni(&raw_ps?);
    for ((name, a, b), p_adj) in testable.iter().zip(adjusted) {
        let tt = two_sample_ttest(a, b)?;
        comparisons.push(ComparisonRow {
            name: name.to_string(),
            group_a: a.clone(),
            group_b: b.clone(),
            t: tt.t,
            df: tt.df,
            p_raw: tt.p,
            p_adjusted: p_adj,
            significant: p_adj < ALPHA,
            degenerate_variance: tt.degenerate_variance,
        });
    }

    // Weight-structure check on the converged raw-pixel object probe.
    let probe_cfg = ProbeConfig {
        seed: run_seed(master_seed, 0),
        ..cfg.probe.clone()
    };
    let x_features = extract_features(
        &crate::nn::init_params(0, cfg.train.d_z),
        Layer::X,
        Split::Train,
        &data.train.images,
    )?;
    let x_probe = train_linear_probe(
        &x_features,
        &data.train.labels,
        Task::Object,
        data.n_objects,
        &probe_cfg,
    )?;
    let mask = RenderScene::new(scene, 0)?.cube_mask(32, 32);
    let hue_fraction = hue_alignment(&x_probe.weight, &scene.palette, HUE_TOLERANCE_TURNS, Some(&mask));

    let mut collapsed_runs = Vec::new();
    for (mode, list) in [(Mode::Ssl, &runs.ssl), (Mode::Jitter, &runs.jitter)] {
        for (i, s) in list.iter().enumerate() {
            if s.collapsed {
                collapsed_runs.push(format!("{mode}_seed{i}"));
            }
        }
    }

    Ok(ProbeReport {
        alpha: ALPHA,
        n_seeds: cfg.n_seeds,
        results,
        aggregates,
        comparisons,
        hue_alignment_fraction: hue_fraction,
        collapsed_runs,
    })
}

pub fn write_report(report: &ProbeReport, out_root: &Path) -> Result<(PathBuf, PathBuf)> {
    let report_path = out_root.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;

    let metrics_path = out_root.join("metrics.csv");
    let mut csv = String::from("mode,layer,task,seed,train_acc,val_acc,test_acc\n");
    for r in &report.results {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode, r.layer, r.task, r.seed_index, r.train_acc, r.val_acc, r.test_acc
        ));
    }
    csv.push_str("\nmode,layer,task,mean_test_acc,sd_test_acc,n\n");
    for a in &report.aggregates {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.mode, a.layer, a.task, a.mean_test_acc, a.sd_test_acc, a.n_seeds
        ));
    }
    csv.push_str("\ncomparison,t,df,p_raw,p_adjusted,significant\n");
    for c in &report.comparisons {
        csv.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            c.name, c.t, c.df, c.p_raw, c.p_adjusted, c.significant
        ));
    }
    std::fs::write(&metrics_path, csv).map_err(|e| Error::io(&metrics_path, e))?;
    Ok((report_path, metrics_path))
}

// ---------------------------------------------------------------------------
// Learning curve.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub mode: Mode,
    pub layer: Layer,
    pub task: Task,
    pub mean_acc: f64,
    pub sd_acc: f64,
}

/// Probe object accuracy at h for every checkpoint of every ssl seed, the
/// supervised baseline's own head accuracy per checkpoint, and the
/// raw-pixel reference level.
pub fn learning_curve(
    cfg: &PipelineConfig,
    data: &ProbeData,
    runs: &TrainedRuns,
    master_seed: u64,
) -> Result<(Vec<CurveRow>, f64)> {
    let epochs: Vec<usize> = runs.ssl[0].checkpoints.iter().map(|(e, _)| *e).collect();
    let mut rows = Vec::new();
    for (ei, &epoch) in epochs.iter().enumerate() {
        let per_seed: Result<Vec<f64>> = runs
            .ssl
            .par_iter()
            .enumerate()
            .map(|(i, series)| {
                let (_, path) = &series.checkpoints[ei];
                let params = params_from_checkpoint(&Checkpoint::load(path)?)?;
                let probe_cfg = ProbeConfig {
                    seed: run_seed(master_seed, i),
                    ..cfg.probe.clone()
                };
                let (outcome, _) =
                    probe_layer_task(&params, Layer::H, Task::Object, data, &probe_cfg)?;
                Ok(outcome.test_acc)
            })
            .collect();
        let per_seed = per_seed?;
        rows.push(CurveRow {
            epoch,
            mode: Mode::Ssl,
            layer: Layer::H,
            task: Task::Object,
            mean_acc: mean(&per_seed),
            sd_acc: std_dev(&per_seed),
        });
    }

    for (ei, &epoch) in runs
        .supervised
        .first()
        .map(|s| s.checkpoints.iter().map(|(e, _)| *e).collect::<Vec<_>>())
        .unwrap_or_default()
        .iter()
        .enumerate()
    {
        let per_seed: Result<Vec<f64>> = runs
            .supervised
            .par_iter()
            .map(|series| {
                let (_, path) = &series.checkpoints[ei];
                supervised_head_accuracy(path, data)
            })
            .collect();
        let per_seed = per_seed?;
        rows.push(CurveRow {
            epoch,
            mode: Mode::Supervised,
            layer: Layer::H,
            task: Task::Object,
            mean_acc: mean(&per_seed),
            sd_acc: std_dev(&per_seed),
        });
    }

    // Raw-pixel reference level (mean over seeds).
    let raw: Result<Vec<f64>> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|i| {
            let probe_cfg = ProbeConfig {
                seed: run_seed(master_seed, i),
                ..cfg.probe.clone()
            };
            let params = crate::nn::init_params(0, cfg.train.d_z);
            let (outcome, _) = probe_layer_task(&params, Layer::X, Task::Object, data, &probe_cfg)?;
            Ok(outcome.test_acc)
        })
        .collect();
    let raw_level = mean(&raw?);
    Ok((rows, raw_level))
}

/// Test accuracy of the supervised run's own classification head.
fn supervised_head_accuracy(ckpt_path: &Path, data: &ProbeData) -> Result<f64> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let params = params_from_checkpoint(&ckpt)?;
    let probe = LinearProbe {
        task: Task::Object,
        weight: ckpt.param("cls_w")?.clone(),
        bias: ckpt.param("cls_b")?.clone(),
    };
    let features = extract_features(&params, Layer::H, Split::Test, &data.test.images)?;
    evaluate_probe(&probe, &features, &data.test.labels)
}

pub fn write_curve(
    rows: &[CurveRow],
    raw_level: f64,
    out_root: &Path,
) -> Result<()> {
    let path = out_root.join("curve.csv");
    let mut csv = String::from("epoch,mode,layer,task,mean_acc,sd_acc\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.mode, r.layer, r.task, r.mean_acc, r.sd_acc
        ));
    }
    csv.push_str(&format!("\nraw_pixel_reference,{raw_level}\n"));
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    let mut series = Vec::new();
    for mode in [Mode::Ssl, Mode::Supervised] {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| (r.epoch as f64, r.mean_acc))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let sd: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.sd_acc)
            .collect();
        series.push(Series {
            name: format!("{mode} (h, object)"),
            points: pts,
            sd,
        });
    }
    let plot = LinePlot {
        title: "Object readout accuracy over training".to_string(),
        x_label: "epoch".to_string(),
        y_label: "test accuracy".to_string(),
        series,
        reference: Some(("raw pixels".to_string(), raw_level)),
        y_range: (0.0, 1.0),
    };
    let plots_dir = out_root.join("plots");
    std::fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;
    write_svg(&plots_dir.join("learning_curve.svg"), &plot.to_svg())
}

/// Per-layer bar chart of the aggregate accuracies.
pub fn write_layer_chart(report: &ProbeReport, out_root: &Path) -> Result<()> {
    let layers: Vec<Layer> = Layer::ALL.to_vec();
    let categories: Vec<String> = layers.iter().map(|l| l.to_string()).collect();
    let grab = |mode: Mode, task: Task| -> (Vec<f64>, Vec<f64>) {
        let mut means = Vec::new();
        let mut sds = Vec::new();
        for &l in &layers {
            let agg = report
                .aggregate(mode, l, task)
                .or_else(|| {
                    if l == Layer::X {
                        report.aggregate(Mode::Raw, l, task)
                    } else {
                        None
                    }
                });
            means.push(agg.map(|a| a.mean_test_acc).unwrap_or(f64::NAN));
            sds.push(agg.map(|a| a.sd_test_acc).unwrap_or(0.0));
        }
        (means, sds)
    };
    let (obj_m, obj_s) = grab(Mode::Ssl, Task::Object);
    let (lig_m, lig_s) = grab(Mode::Ssl, Task::Lighting);
    let (jit_m, jit_s) = grab(Mode::Jitter, Task::Object);
    let chart = BarChart {
        title: "Readout accuracy across the hierarchy".to_string(),
        categories,
        series: vec![
            ("object".to_string(), obj_m, obj_s),
            ("lighting".to_string(), lig_m, lig_s),
            ("object (jitter)".to_string(), jit_m, jit_s),
        ],
        y_label: "test accuracy".to_string(),
    };
    let plots_dir = out_root.join("plots");
    std::fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;
    write_svg(&plots_dir.join("layer_accuracy.svg"), &chart.to_svg())
}

/// Train the raw-pixel object probe and write the per-class weight tiles
/// plus the montage.
pub fn write_weight_visualization(
    cfg: &PipelineConfig,
    scene: &SceneConfig,
    data: &ProbeData,
    master_seed: u64,
    out_root: &Path,
) -> Result<f64> {
    let probe_cfg = ProbeConfig {
        seed: run_seed(master_seed, 0),
        ..cfg.probe.clone()
    };
    let features = extract_features(
        &crate::nn::init_params(0, cfg.train.d_z),
        Layer::X,
        Split::Train,
        &data.train.images,
    )?;
    let probe = train_linear_probe(
        &features,
        &data.train.labels,
        Task::Object,
        data.n_objects,
        &probe_cfg,
    )?;
    let tiles = weight_images(&probe.weight)?;
    let plots_dir = out_root.join("plots");
    let tiles_dir = plots_dir.join("weights");
    std::fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    for (i, tile) in tiles.iter().enumerate() {
        let p = tiles_dir.join(format!("obj{i:02}.png"));
        std::fs::write(&p, tile.to_png_bytes()?).map_err(|e| Error::io(&p, e))?;
    }
    let montage = weight_montage(&tiles, &scene.palette)?;
    let p = plots_dir.join("weight_montage.png");
    std::fs::write(&p, montage.to_png_bytes()?).map_err(|e| Error::io(&p, e))?;
    let mask = RenderScene::new(scene, 0)?.cube_mask(32, 32);
    Ok(hue_alignment(&probe.weight, &scene.palette, HUE_TOLERANCE_TURNS, Some(&mask)))
}

// ---------------------------------------------------------------------------
// reproduce-all.
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest<'a> {
    command: String,
    version: &'a str,
    master_seed: u64,
    started_unix: u64,
    finished_unix: u64,
    config: &'a PipelineConfig,
    artifacts: Vec<ArtifactEntry>,
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Checksums for the headline artifacts. Per-frame image checksums already
/// live in the dataset manifest, which is itself listed here.
fn collect_artifacts(out_root: &Path) -> Vec<ArtifactEntry> {
    let mut paths: Vec<PathBuf> = Vec::new();
    let candidates = [
        "report.json",
        "metrics.csv",
        "curve.csv",
        "dataset/dataset.toml",
        "dataset/manifest.jsonl",
        "plots/learning_curve.svg",
        "plots/layer_accuracy.svg",
        "plots/weight_montage.png",
    ];
    for c in candidates {
        let p = out_root.join(c);
        if p.exists() {
            paths.push(p);
        }
    }
    if let Ok(runs) = std::fs::read_dir(out_root.join("runs")) {
        let mut run_dirs: Vec<PathBuf> = runs.filter_map(|e| e.ok().map(|e| e.path())).collect();
        run_dirs.sort();
        for dir in run_dirs {
            for name in ["loss_log.csv", "run.json"] {
                let p = dir.join(name);
                if p.exists() {
                    paths.push(p);
                }
            }
        }
    }
    if let Ok(exports) = std::fs::read_dir(out_root.join("exports")) {
        let mut files: Vec<PathBuf> = exports.filter_map(|e| e.ok().map(|e| e.path())).collect();
        files.sort();
        paths.extend(files);
    }
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap_or_default();
            let mut h = Sha256::new();
            h.update(&bytes);
            ArtifactEntry {
                path: p
                    .strip_prefix(out_root)
                    .unwrap_or(&p)
                    .to_string_lossy()
                    .into_owned(),
                sha256: format!("{:x}", h.finalize()),
            }
        })
        .collect()
}

pub struct ReproduceOutputs {
    pub dataset: Dataset,
    pub report: ProbeReport,
    pub curve: Vec<CurveRow>,
    pub raw_level: f64,
}

/// The full pipeline: dataset, all trainings, probes, statistics, curve,
/// plots, montage, embedding exports, and the run manifest.
pub fn reproduce_all(
    cfg: &PipelineConfig,
    master_seed: u64,
    out_root: &Path,
    command: String,
) -> Result<ReproduceOutputs> {
    cfg.validate()?;
    let started = now_unix();
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let scene = build_scene(&cfg.scene)?;

    let ds = ensure_dataset(cfg, master_seed, &out_root.join("dataset"))?;
    let runs = train_all(cfg, &scene, &ds, master_seed, out_root, true)?;
    let data = ProbeData::from_dataset(&ds)?;

    let report = probe_suite(cfg, &scene, &data, &runs, master_seed)?;
    write_report(&report, out_root)?;
    let (curve, raw_level) = learning_curve(cfg, &data, &runs, master_seed)?;
    write_curve(&curve, raw_level, out_root)?;
    write_layer_chart(&report, out_root)?;
    write_weight_visualization(cfg, &scene, &data, master_seed, out_root)?;

    // Embedding export for external dimensionality-reduction tools.
    let exports = out_root.join("exports");
    std::fs::create_dir_all(&exports).map_err(|e| Error::io(&exports, e))?;
    let (_, _, test_idx) = crate::dataset::split_dataset(&ds.manifest);
    let params = final_params(&runs.ssl[0])?;
    crate::probe::export_embeddings(
        &params,
        Layer::H,
        Split::Test,
        &data.test,
        &test_idx,
        &exports.join("embeddings_h_test_seed0.csv"),
    )?;

    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        master_seed,
        started_unix: started,
        finished_unix: now_unix(),
        config: cfg,
        artifacts: collect_artifacts(out_root),
    };
    let mpath = out_root.join("run_manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&mpath, e))?;

    Ok(ReproduceOutputs {
        dataset: ds,
        report,
        curve,
        raw_level,
    })
}

/// Reference-frame diagnostic: renders the calibration condition, writes
/// the PNG and a luminance histogram, and reports cube-face visibility.
pub fn render_diagnostic(cfg: &PipelineConfig, master_seed: u64, out_dir: &Path) -> Result<String> {
    let scene = build_scene(&cfg.scene)?;
    let rs = RenderScene::new(&scene, 0)?;
    let mut settings = cfg.render.clone();
    settings.exposure = crate::render::calibrate_exposure(&rs, &settings, master_seed)?;
    let hdr = rs.render_hdr(
        &reference_lighting(),
        &settings,
        master_seed,
        CALIBRATION_FRAME,
    )?;
    let srgb = crate::render::tone_map(&hdr, settings.exposure)?;
    let img = crate::render::Image8::from_srgb(settings.width, settings.height, &srgb);

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let png_path = out_dir.join("reference_frame.png");
    std::fs::write(&png_path, img.to_png_bytes()?).map_err(|e| Error::io(&png_path, e))?;

    let hist = crate::render::luminance_histogram(&srgb, 16);
    let mut text = format!(
        "exposure {}\nluminance histogram (16 bins over [0,1]):\n",
        settings.exposure
    );
    for (i, count) in hist.iter().enumerate() {
        text.push_str(&format!(
            "[{:.3},{:.3}) {}\n",
            i as f64 / 16.0,
            (i + 1) as f64 / 16.0,
            count
        ));
    }
    let hist_path = out_dir.join("reference_histogram.txt");
    let mut f = std::fs::File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&hist_path, e))?;
    Ok(text)
}
