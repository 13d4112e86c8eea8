//! Single entry point wiring dataset generation, training, probing, and
//! reporting into reproducible pipelines. Every subcommand is
//! deterministic in (--seed, --out): rerunning reproduces identical
//! artifact checksums.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cubelight::config::{ConfigFile, PipelineConfig, Preset};
use cubelight::dataset::{read_dataset, split_dataset, Split};
use cubelight::nn::Layer;
use cubelight::pipeline::{self, Mode};
use cubelight::probe::{ProbeData, Task};
use cubelight::scene::build_scene;
use cubelight::tensor::Checkpoint;
use cubelight::train::{
    params_from_checkpoint, train_jitter_baseline, train_ssl, train_supervised_baseline,
    SslConfig, TrainData,
};

#[derive(Parser)]
#[command(name = "cubelight", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configuration preset.
    #[arg(long, default_value = "full")]
    preset: String,
    /// Sectioned key/value configuration file (TOML), applied on top of
    /// the preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CommonOpts {
    fn build(&self) -> anyhow::Result<PipelineConfig> {
        let preset = Preset::parse(&self.preset)?;
        let mut cfg = PipelineConfig::preset(preset);
        if let Some(path) = &self.config {
            cfg = ConfigFile::load(path)?.apply(cfg)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the full dataset with its manifest.
    GenDataset {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the reference frame and its luminance histogram.
    RenderDiagnostic {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one encoder run.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// ssl, jitter, or supervised.
        #[arg(long)]
        mode: String,
        /// Dataset directory (from gen-dataset).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the preset's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Linear probes from a checkpoint.
    Probe {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated layer tags (x,l1,l2,l3,h,z).
        #[arg(long, default_value = "x,l1,l2,l3,h,z")]
        layers: String,
        /// Comma-separated tasks (object,lighting).
        #[arg(long, default_value = "object,lighting")]
        tasks: String,
        /// Probe repetitions with distinct seeds.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Learning-curve table and plot from a directory of runs.
    Curve {
        #[command(flatten)]
        common: CommonOpts,
        /// Output root of a previous reproduce-all (contains runs/).
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raw-pixel probe weight montage.
    VizWeights {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame feature table for external tools.
    ExportEmbeddings {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Layer tag.
        #[arg(long, default_value = "h")]
        layer: String,
        /// train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-aggregate report.json/metrics.csv from probe outputs.
    Report {
        /// Output root of a previous reproduce-all.
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: dataset, all runs, probes, statistics, figures.
    ReproduceAll {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        out: PathBuf,
        /// Override the preset's seed count.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Print layer shapes and parameter counts.
    Inspect {
        #[command(flatten)]
        common: CommonOpts,
        /// Read parameters from a checkpoint instead of a fresh init.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenDataset { common, out } => {
            let cfg = common.build()?;
            let ds = pipeline::ensure_dataset(&cfg, common.seed, &out)?;
            println!(
                "dataset ready: {} frames ({} objects x {}), exposure {:.6}",
                ds.len(),
                ds.manifest.n_objects,
                ds.manifest.frames_per_object,
                ds.manifest.exposure
            );
        }
        Command::RenderDiagnostic { common, out } => {
            let cfg = common.build()?;
            let text = pipeline::render_diagnostic(&cfg, common.seed, &out)?;
            print!("{text}");
            println!("wrote {}", out.join("reference_frame.png").display());
        }
        Command::Train {
            common,
            mode,
            data,
            out,
            epochs,
        } => {
            let cfg = common.build()?;
            let mode = Mode::parse(&mode)?;
            let ds = read_dataset(&data)?;
            let train_data = TrainData::from_dataset(&ds)?;
            let mut ssl_cfg = SslConfig {
                seed: common.seed,
                ..cfg.train.clone()
            };
            if let Some(e) = epochs {
                ssl_cfg.epochs = e;
            }
            std::fs::create_dir_all(&out).context("create out dir")?;
            let series = match mode {
                Mode::Ssl => train_ssl(&train_data, &ssl_cfg, &out)?,
                Mode::Jitter => {
                    let scene = build_scene(&cfg.scene)?;
                    let base = pipeline::render_jitter_base(&scene, &ds, ds.manifest.seed)?;
                    train_jitter_baseline(&base, train_data.len(), &cfg.jitter, &ssl_cfg, &out)?
                }
                Mode::Supervised => train_supervised_baseline(&train_data, &ssl_cfg, &out)?,
                Mode::Raw => bail!("`raw` is a probe mode, not a training mode"),
            };
            pipeline::write_run_outputs(&out, &series, &ssl_cfg, 0)?;
            let last = series.checkpoints.last().expect("at least init checkpoint");
            println!(
                "{} run complete: {} checkpoints, final {}",
                series.tag,
                series.checkpoints.len(),
                last.1.display()
            );
            if series.collapsed {
                println!("warning: embedding collapse detected (see loss_log.csv)");
            }
        }
        Command::Probe {
            common,
            checkpoint,
            data,
            out,
            layers,
            tasks,
            seeds,
        } => {
            let cfg = common.build()?;
            let ds = read_dataset(&data)?;
            let probe_data = ProbeData::from_dataset(&ds)?;
            let params = params_from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let layers: Vec<Layer> = layers
                .split(',')
                .map(|s| Layer::parse(s.trim()))
                .collect::<cubelight::Result<_>>()?;
            let tasks: Vec<Task> = tasks
                .split(',')
                .map(|s| Task::parse(s.trim()))
                .collect::<cubelight::Result<_>>()?;
            std::fs::create_dir_all(&out).context("create out dir")?;

            let mut rows = Vec::new();
            for layer in &layers {
                for task in &tasks {
                    for rep in 0..seeds {
                        let probe_cfg = cubelight::probe::ProbeConfig {
                            seed: common.seed.wrapping_add(rep as u64),
                            ..cfg.probe.clone()
                        };
                        let (outcome, _) = cubelight::probe::probe_layer_task(
                            &params, *layer, *task, &probe_data, &probe_cfg,
                        )?;
                        println!(
                            "layer {layer} task {task} seed {rep}: train {:.4} val {:.4} test {:.4}",
                            outcome.train_acc, outcome.val_acc, outcome.test_acc
                        );
                        rows.push(outcome);
                    }
                }
            }
            let path = out.join("probe_results.json");
            std::fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
            println!("wrote {}", path.display());
        }
        Command::Curve {
            common,
            runs,
            data,
            out,
        } => {
            let cfg = common.build()?;
            let ds = read_dataset(&data)?;
            let probe_data = ProbeData::from_dataset(&ds)?;
            let trained = load_runs(&runs, cfg.n_seeds)?;
            let (rows, raw_level) =
                pipeline::learning_curve(&cfg, &probe_data, &trained, common.seed)?;
            std::fs::create_dir_all(&out).context("create out dir")?;
            pipeline::write_curve(&rows, raw_level, &out)?;
            println!(
                "curve with {} rows written to {} (raw-pixel level {:.4})",
                rows.len(),
                out.join("curve.csv").display(),
                raw_level
            );
        }
        Command::VizWeights { common, data, out } => {
            let cfg = common.build()?;
            let ds = read_dataset(&data)?;
            let scene = build_scene(&cfg.scene)?;
            let probe_data = ProbeData::from_dataset(&ds)?;
            std::fs::create_dir_all(&out).context("create out dir")?;
            let fraction =
                pipeline::write_weight_visualization(&cfg, &scene, &probe_data, common.seed, &out)?;
            println!(
                "montage written to {}; hue-aligned classes: {:.1}%",
                out.join("plots/weight_montage.png").display(),
                fraction * 100.0
            );
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            data,
            layer,
            split,
            out,
        } => {
            let _ = common.build()?;
            let ds = read_dataset(&data)?;
            let probe_data = ProbeData::from_dataset(&ds)?;
            let params = params_from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let layer = Layer::parse(&layer)?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => bail!("unknown split {other:?}; valid: train, val, test"),
            };
            let (train_idx, val_idx, test_idx) = split_dataset(&ds.manifest);
            let ids = match split {
                Split::Train => train_idx,
                Split::Val => val_idx,
                Split::Test => test_idx,
            };
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).ok();
            }
            cubelight::probe::export_embeddings(
                &params,
                layer,
                split,
                probe_data.split(split),
                &ids,
                &out,
            )?;
            println!("wrote {}", out.display());
        }
        Command::Report { out } => {
            let report_path = out.join("report.json");
            let text = std::fs::read_to_string(&report_path)
                .with_context(|| format!("no report at {}", report_path.display()))?;
            let report: cubelight::pipeline::ProbeReport = serde_json::from_str(&text)?;
            pipeline::write_report(&report, &out)?;
            println!("re-wrote report.json and metrics.csv under {}", out.display());
            for c in &report.comparisons {
                println!(
                    "{}: t({}) = {:.2}, p = {:.4} (adjusted {:.4}){}",
                    c.name,
                    c.df,
                    c.t,
                    c.p_raw,
                    c.p_adjusted,
                    if c.significant { " *" } else { "" }
                );
            }
        }
        Command::ReproduceAll { common, out, seeds } => {
            let mut cfg = common.build()?;
            if let Some(s) = seeds {
                cfg.n_seeds = s;
                cfg.validate()?;
            }
            let command = std::env::args().collect::<Vec<_>>().join(" ");
            let outputs = pipeline::reproduce_all(&cfg, common.seed, &out, command)?;
            println!(
                "pipeline complete: {} probe results, {} comparisons",
                outputs.report.results.len(),
                outputs.report.comparisons.len()
            );
            for c in &outputs.report.comparisons {
                println!(
                    "{}: t({}) = {:.2}, p = {:.4} (adjusted {:.4}){}",
                    c.name,
                    c.df,
                    c.t,
                    c.p_raw,
                    c.p_adjusted,
                    if c.significant { " *" } else { "" }
                );
            }
            println!(
                "hue-aligned classes: {:.1}%",
                outputs.report.hue_alignment_fraction * 100.0
            );
            println!("report: {}", out.join("report.json").display());
        }
        Command::Inspect { common, checkpoint } => {
            let cfg = common.build()?;
            let params = match checkpoint {
                Some(path) => params_from_checkpoint(&Checkpoint::load(&path)?)?,
                None => cubelight::nn::init_params(common.seed, cfg.train.d_z),
            };
            print!("{}", cubelight::nn::describe(&params));
        }
    }
    Ok(())
}

/// Reload the run series of a previous reproduce-all from its directory
/// layout (runs/<mode>_seed<i>/ckpt_epoch*.ckpt).
fn load_runs(out_root: &Path, n_seeds: usize) -> anyhow::Result<pipeline::TrainedRuns> {
    use cubelight::train::RunSeries;
    let runs_dir = out_root.join("runs");
    let load_mode = |mode: &str| -> anyhow::Result<Vec<RunSeries>> {
        let mut all = Vec::new();
        for i in 0..n_seeds {
            let dir = runs_dir.join(format!("{mode}_seed{i}"));
            if !dir.exists() {
                break;
            }
            let mut ckpts: Vec<(usize, PathBuf)> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.extension().map(|x| x == "ckpt").unwrap_or(false)
                        && p.file_name()
                            .map(|n| n.to_string_lossy().starts_with("ckpt_epoch"))
                            .unwrap_or(false)
                })
                .filter_map(|p| {
                    let name = p.file_stem()?.to_string_lossy().into_owned();
                    let epoch: usize = name.strip_prefix("ckpt_epoch")?.parse().ok()?;
                    Some((epoch, p))
                })
                .collect();
            ckpts.sort();
            if ckpts.is_empty() {
                bail!("no checkpoints under {}", dir.display());
            }
            all.push(RunSeries {
                tag: mode.to_string(),
                checkpoints: ckpts,
                log: Vec::new(),
                collapsed: false,
            });
        }
        Ok(all)
    };
    let ssl = load_mode("ssl")?;
    if ssl.is_empty() {
        bail!("no ssl runs under {}", runs_dir.display());
    }
    Ok(pipeline::TrainedRuns {
        ssl,
        jitter: load_mode("jitter")?,
        supervised: load_mode("supervised")?,
    })
}
