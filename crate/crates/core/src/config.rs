//! Pipeline configuration: presets, the TOML config file, and overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::GenerateOptions;
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::probe::{ProbeConfig, Task};
use crate::render::RenderSettings;
use crate::scene::SceneOverrides;
use crate::train::{JitterConfig, SslConfig};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Paper-scale: 50 objects x 1000 frames, 100 epochs, 2N = 600, 5 seeds.
    Full,
    /// CI-scale: 50 objects x 200 frames, 40 epochs, 2N = 128, 3 seeds.
    Desk,
    /// Smoke-scale for end-to-end determinism checks.
    Micro,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Preset> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            "micro" => Ok(Preset::Micro),
            other => Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; valid: full, desk, micro"),
            )),
        }
    }
}

/// Concrete configuration for the whole pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scene: SceneOverrides,
    pub render: RenderSettings,
    pub dataset: GenerateOptions,
    pub train: SslConfig,
    pub jitter: JitterConfig,
    pub probe: ProbeConfig,
    /// Number of independent seeds (training + probing repetitions).
    pub n_seeds: usize,
    pub probe_layers: Vec<Layer>,
    pub probe_tasks: Vec<Task>,
}

impl PipelineConfig {
    pub fn preset(p: Preset) -> PipelineConfig {
        let base = PipelineConfig {
            scene: SceneOverrides::default(),
            render: RenderSettings::default(),
            dataset: GenerateOptions::default(),
            train: SslConfig::default(),
            jitter: JitterConfig::default(),
            probe: ProbeConfig::default(),
            n_seeds: 5,
            probe_layers: Layer::ALL.to_vec(),
            probe_tasks: Task::ALL.to_vec(),
        };
        match p {
            Preset::Full => base,
            Preset::Desk => PipelineConfig {
                dataset: GenerateOptions {
                    frames_per_object: 200,
                    ..base.dataset
                },
                train: SslConfig {
                    epochs: 40,
                    n_pairs: 64, // 2N = 128
                    ..base.train
                },
                n_seeds: 3,
                ..base
            },
            Preset::Micro => {
                let mut scene = SceneOverrides::default();
                scene.n_objects = Some(10);
                PipelineConfig {
                    scene,
                    render: RenderSettings {
                        samples_per_pixel: 8,
                        ..base.render
                    },
                    dataset: GenerateOptions {
                        frames_per_object: 40,
                        ..base.dataset
                    },
                    train: SslConfig {
                        epochs: 4,
                        n_pairs: 8, // 2N = 16
                        checkpoint_every: 2,
                        d_z: 32,
                        ..base.train
                    },
                    probe: ProbeConfig {
                        epochs: 10,
                        batch: 120,
                        ..base.probe
                    },
                    n_seeds: 2,
                    ..base
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.jitter.validate()?;
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "need at least one seed"));
        }
        if self.probe_layers.is_empty() || self.probe_tasks.is_empty() {
            return Err(Error::config("probe", "need at least one layer and task"));
        }
        Ok(())
    }
}

/// Optional overrides loaded from a sectioned key/value (TOML) file. Any
/// field left out keeps the preset value.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub scene: SceneOverrides,
    pub render: RenderSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub jitter: JitterSection,
    pub probe: ProbeSection,
    pub seeds: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub samples_per_pixel: Option<usize>,
    pub bounce_count: Option<u8>,
    pub width: Option<usize>,
    pub height: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub frames_per_object: Option<usize>,
    pub write_sidecar: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub tau: Option<f64>,
    pub n_pairs: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub d_z: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub with_replacement: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSection {
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub saturation: Option<f64>,
    pub hue: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub layers: Option<Vec<String>>,
    pub tasks: Option<Vec<String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Toml(format!("{path:?}: {e}")))
    }

    /// Merge file values onto a preset-derived config.
    pub fn apply(&self, mut cfg: PipelineConfig) -> Result<PipelineConfig> {
        // Scene overrides merge field-wise (file wins where set).
        macro_rules! merge {
            ($dst:expr, $src:expr) => {
                if $src.is_some() {
                    $dst = $src.clone();
                }
            };
        }
        merge!(cfg.scene.n_objects, self.scene.n_objects);
        merge!(cfg.scene.ground_albedo, self.scene.ground_albedo);
        merge!(cfg.scene.cube_size, self.scene.cube_size);
        merge!(cfg.scene.cube_yaw_deg, self.scene.cube_yaw_deg);
        merge!(cfg.scene.camera_position, self.scene.camera_position);
        merge!(cfg.scene.camera_pitch_deg, self.scene.camera_pitch_deg);
        merge!(cfg.scene.camera_fov_deg, self.scene.camera_fov_deg);
        merge!(cfg.scene.light_circle_radius, self.scene.light_circle_radius);
        merge!(cfg.scene.light_height, self.scene.light_height);
        merge!(cfg.scene.cone_half_angle_deg, self.scene.cone_half_angle_deg);
        merge!(cfg.scene.cone_blend, self.scene.cone_blend);

        if let Some(v) = self.render.samples_per_pixel {
            cfg.render.samples_per_pixel = v;
        }
        if let Some(v) = self.render.bounce_count {
            cfg.render.bounce_count = v;
        }
        if let Some(v) = self.render.width {
            cfg.render.width = v;
        }
        if let Some(v) = self.render.height {
            cfg.render.height = v;
        }
        if let Some(v) = self.dataset.frames_per_object {
            cfg.dataset.frames_per_object = v;
        }
        if let Some(v) = self.dataset.write_sidecar {
            cfg.dataset.write_sidecar = v;
        }
        if let Some(v) = self.train.tau {
            cfg.train.tau = v;
        }
        if let Some(v) = self.train.n_pairs {
            cfg.train.n_pairs = v;
        }
        if let Some(v) = self.train.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.train.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.train.d_z {
            cfg.train.d_z = v;
        }
        if let Some(v) = self.train.checkpoint_every {
            cfg.train.checkpoint_every = v;
        }
        if let Some(v) = self.train.with_replacement {
            cfg.train.with_replacement = v;
        }
        if let Some(v) = self.jitter.brightness {
            cfg.jitter.brightness = v;
        }
        if let Some(v) = self.jitter.contrast {
            cfg.jitter.contrast = v;
        }
        if let Some(v) = self.jitter.saturation {
            cfg.jitter.saturation = v;
        }
        if let Some(v) = self.jitter.hue {
            cfg.jitter.hue = v;
        }
        if let Some(v) = self.probe.epochs {
            cfg.probe.epochs = v;
        }
        if let Some(v) = self.probe.lr {
            cfg.probe.lr = v;
        }
        if let Some(v) = self.probe.batch {
            cfg.probe.batch = v;
        }
        if let Some(layers) = &self.probe.layers {
            cfg.probe_layers = layers
                .iter()
                .map(|s| Layer::parse(s))
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(tasks) = &self.probe.tasks {
            cfg.probe_tasks = tasks
                .iter()
                .map(|s| Task::parse(s))
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(v) = self.seeds {
            cfg.n_seeds = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
