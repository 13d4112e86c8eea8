//! On-disk dataset: rendered PNG frames (optionally with lossless float
//! sidecars), a JSONL manifest with one record per frame, and a TOML echo
//! of the effective configuration.
//!
//! Layout under the dataset root:
//!   dataset.toml                    — config echo; written last, its
//!                                     presence marks a complete dataset
//!   manifest.jsonl                  — per-frame lighting, labels, checksums
//!   images/obj{DD}_frame{NNNN}.png  — 8-bit sRGB
//!   images/obj{DD}_frame{NNNN}.f32  — little-endian linear RGB (optional)

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::srgb_decode;
use crate::error::{Error, Result};
use crate::lighting::{encode_lighting_label, sample_frame_lighting, FrameLighting, LightingLabel};
use crate::render::{calibrate_exposure, Image8, RenderScene, RenderSettings};
use crate::scene::SceneConfig;
use crate::tensor::Tensor;

const INCOMPLETE_MARKER: &str = ".incomplete";

/// Per-frame manifest record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub object_id: usize,
    pub frame: usize,
    pub global_index: usize,
    pub lighting: FrameLighting,
    pub label: [u8; 24],
    pub png: String,
    pub png_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sidecar_sha256: Option<String>,
}

/// Split sizes per 1000-frame sequence (scaled for other lengths).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLens {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// 60/20/20 contiguous blocks per sequence, so temporal successor pairs
/// never straddle a split boundary.
pub fn split_lens(frames_per_object: usize) -> SplitLens {
    let train = (frames_per_object as f64 * 0.6).round() as usize;
    let val = (frames_per_object as f64 * 0.2).round() as usize;
    SplitLens {
        train,
        val,
        test: frames_per_object - train - val,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Everything needed to reproduce and read a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_objects: usize,
    pub frames_per_object: usize,
    pub splits: SplitLens,
    pub exposure: f64,
    pub scene: SceneConfig,
    pub render: RenderSettings,
    /// Label triplet codes, surfaced so downstream consumers see the
    /// off/color -> binary RGB mapping explicitly.
    pub color_codes: Vec<(String, [u8; 3])>,
    #[serde(skip)]
    pub frames: Vec<FrameRecord>,
}

/// Handle to an on-disk dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub frames_per_object: usize,
    pub write_sidecar: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            frames_per_object: 1000,
            write_sidecar: false,
        }
    }
}

fn frame_name(object_id: usize, frame: usize) -> String {
    format!("obj{object_id:02}_frame{frame:04}")
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn color_code_table() -> Vec<(String, [u8; 3])> {
    let mut t = vec![("off".to_string(), [0u8, 0, 0])];
    for c in crate::lighting::SpotColor::ALL {
        let name = format!("{c:?}").to_lowercase();
        t.push((name, c.code()));
    }
    t
}

/// Render the full dataset: `n_objects` sequences of `frames_per_object`
/// frames each, every frame lit by its own sampled spotlight state.
/// Deterministic in `seed`; parallel over frames. On I/O failure an
/// `.incomplete` marker is left behind and the next run restarts cleanly.
pub fn generate_dataset(
    scene: &SceneConfig,
    render: &RenderSettings,
    opts: &GenerateOptions,
    seed: u64,
    out_dir: &Path,
) -> Result<Dataset> {
    render.validate()?;
    if opts.frames_per_object == 0 {
        return Err(Error::config("frames_per_object", "must be positive"));
    }
    let images_dir = out_dir.join("images");
    let marker = out_dir.join(INCOMPLETE_MARKER);

    // A leftover marker (or missing dataset.toml) means the previous run
    // died halfway; wipe the image directory and start over.
    if marker.exists() || (images_dir.exists() && !out_dir.join("dataset.toml").exists()) {
        std::fs::remove_dir_all(&images_dir).ok();
        std::fs::remove_file(out_dir.join("manifest.jsonl")).ok();
    }
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::write(&marker, b"generation in progress").map_err(|e| Error::io(&marker, e))?;
    std::fs::remove_file(out_dir.join("dataset.toml")).ok();

    // Exposure is calibrated once on the reference condition with object 0
    // in the scene, then shared by every frame.
    let calib_scene = RenderScene::new(scene, 0)?;
    let mut settings = render.clone();
    settings.exposure = calibrate_exposure(&calib_scene, &settings, seed)?;

    let n_objects = scene.palette.len();
    let fpo = opts.frames_per_object;
    let jobs: Vec<(usize, usize)> = (0..n_objects)
        .flat_map(|o| (0..fpo).map(move |f| (o, f)))
        .collect();

    let frames: Result<Vec<FrameRecord>> = jobs
        .par_iter()
        .map(|&(object_id, frame)| {
            let rs = RenderScene::new(scene, object_id)?;
            let (record, png_bytes, sidecar_bytes) =
                render_one(&rs, &settings, seed, object_id, frame, fpo, opts.write_sidecar)?;
            let png_path = images_dir.join(format!("{}.png", frame_name(object_id, frame)));
            std::fs::write(&png_path, &png_bytes).map_err(|e| Error::io(&png_path, e))?;
            if let Some(bytes) = sidecar_bytes {
                let sc_path = images_dir.join(format!("{}.f32", frame_name(object_id, frame)));
                std::fs::write(&sc_path, &bytes).map_err(|e| Error::io(&sc_path, e))?;
            }
            Ok(record)
        })
        .collect();
    let frames = frames?;

    let manifest = DatasetManifest {
        seed,
        n_objects,
        frames_per_object: fpo,
        splits: split_lens(fpo),
        exposure: settings.exposure,
        scene: scene.clone(),
        render: settings,
        color_codes: color_code_table(),
        frames,
    };
    write_manifest(out_dir, &manifest)?;
    std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(Dataset {
        root: out_dir.to_path_buf(),
        manifest,
    })
}

/// Render one frame and produce its record plus encoded bytes. Exposed so
/// regeneration checks can recompute checksums without touching disk.
pub fn render_one(
    rs: &RenderScene,
    settings: &RenderSettings,
    seed: u64,
    object_id: usize,
    frame: usize,
    frames_per_object: usize,
    sidecar: bool,
) -> Result<(FrameRecord, Vec<u8>, Option<Vec<u8>>)> {
    let global_index = object_id * frames_per_object + frame;
    let lighting = sample_frame_lighting(seed, object_id as u64, frame as u64);
    let hdr = rs.render_hdr(&lighting, settings, seed, global_index as u64)?;
    let srgb = crate::render::tone_map(&hdr, settings.exposure)?;
    let image = Image8::from_srgb(settings.width, settings.height, &srgb);
    let png_bytes = image.to_png_bytes()?;

    let sidecar_bytes = if sidecar {
        // Linear RGB float CHW, the exact tensor the reader returns.
        let mut bytes = Vec::with_capacity(srgb.len() * 12);
        for c in 0..3 {
            for p in &srgb {
                bytes.extend_from_slice(&(srgb_decode(p[c]) as f32).to_le_bytes());
            }
        }
        Some(bytes)
    } else {
        None
    };

    let name = frame_name(object_id, frame);
    let record = FrameRecord {
        object_id,
        frame,
        global_index,
        lighting,
        label: encode_lighting_label(&lighting).bits,
        png: format!("images/{name}.png"),
        png_sha256: sha_hex(&png_bytes),
        sidecar: sidecar_bytes.as_ref().map(|_| format!("images/{name}.f32")),
        sidecar_sha256: sidecar_bytes.as_ref().map(|b| sha_hex(b)),
    };
    Ok((record, png_bytes, sidecar_bytes))
}

fn write_manifest(out_dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let jsonl_path = out_dir.join("manifest.jsonl");
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?,
    );
    for record in &manifest.frames {
        serde_json::to_writer(&mut f, record)?;
        f.write_all(b"\n").map_err(|e| Error::io(&jsonl_path, e))?;
    }
    f.flush().map_err(|e| Error::io(&jsonl_path, e))?;

    let toml_path = out_dir.join("dataset.toml");
    let toml_str = toml::to_string_pretty(manifest)
        .map_err(|e| Error::Toml(e.to_string()))?;
    std::fs::write(&toml_path, toml_str).map_err(|e| Error::io(&toml_path, e))?;
    Ok(())
}

/// Open a dataset directory: parses dataset.toml and manifest.jsonl.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let toml_path = root.join("dataset.toml");
    if root.join(INCOMPLETE_MARKER).exists() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            reason: "incomplete generation marker present; regenerate".to_string(),
        });
    }
    let toml_str = std::fs::read_to_string(&toml_path).map_err(|e| Error::io(&toml_path, e))?;
    let mut manifest: DatasetManifest =
        toml::from_str(&toml_str).map_err(|e| Error::Toml(e.to_string()))?;

    let jsonl_path = root.join("manifest.jsonl");
    let text = std::fs::read_to_string(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?;
    let mut frames = Vec::with_capacity(manifest.n_objects * manifest.frames_per_object);
    for (i, line) in text.lines().enumerate() {
        let record: FrameRecord = serde_json::from_str(line).map_err(|e| Error::Dataset {
            path: jsonl_path.clone(),
            reason: format!("line {i}: {e}"),
        })?;
        if record.global_index != i {
            return Err(Error::Dataset {
                path: jsonl_path.clone(),
                reason: format!("line {i} has global_index {}", record.global_index),
            });
        }
        frames.push(record);
    }
    let expect = manifest.n_objects * manifest.frames_per_object;
    if frames.len() != expect {
        return Err(Error::Dataset {
            path: jsonl_path,
            reason: format!("expected {expect} records, found {}", frames.len()),
        });
    }
    manifest.frames = frames;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
    })
}

/// Global frame indices of the three splits, per-sequence contiguous:
/// within each object's sequence the first 60% is train, then 20% val,
/// then 20% test. Disjoint and exhaustive.
pub fn split_dataset(manifest: &DatasetManifest) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let lens = manifest.splits;
    let fpo = manifest.frames_per_object;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for o in 0..manifest.n_objects {
        let base = o * fpo;
        train.extend(base..base + lens.train);
        val.extend(base + lens.train..base + lens.train + lens.val);
        test.extend(base + lens.train + lens.val..base + fpo);
    }
    (train, val, test)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn record(&self, global_index: usize) -> &FrameRecord {
        &self.manifest.frames[global_index]
    }

    pub fn label(&self, global_index: usize) -> LightingLabel {
        LightingLabel {
            bits: self.manifest.frames[global_index].label,
        }
    }

    /// Load one frame as a linear-RGB float tensor [3, 32, 32] in [0,1],
    /// checksum-verified. Reads the float sidecar when present, otherwise
    /// decodes the PNG and inverts the sRGB transfer.
    pub fn load_image(&self, global_index: usize) -> Result<Tensor<f32>> {
        let record = &self.manifest.frames[global_index];
        let (w, h) = (self.manifest.render.width, self.manifest.render.height);
        if let (Some(rel), Some(sha)) = (&record.sidecar, &record.sidecar_sha256) {
            let path = self.root.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if &sha_hex(&bytes) != sha {
                return Err(self.frame_error(record, "sidecar checksum mismatch"));
            }
            if bytes.len() != 3 * w * h * 4 {
                return Err(self.frame_error(record, "sidecar has wrong size"));
            }
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            return Tensor::new(vec![3, h, w], data);
        }
        let path = self.root.join(&record.png);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha_hex(&bytes) != record.png_sha256 {
            return Err(self.frame_error(record, "png checksum mismatch"));
        }
        let img = Image8::from_png_bytes(&bytes)?;
        if img.width != w || img.height != h {
            return Err(self.frame_error(record, "png has wrong dimensions"));
        }
        let mut data = vec![0.0f32; 3 * w * h];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = srgb_decode(px[c] as f64 / 255.0) as f32;
            }
        }
        Tensor::new(vec![3, h, w], data)
    }

    fn frame_error(&self, record: &FrameRecord, reason: &str) -> Error {
        Error::Dataset {
            path: self.root.join(&record.png),
            reason: format!(
                "object {} frame {}: {reason}",
                record.object_id, record.frame
            ),
        }
    }

    /// Bulk-load `indices` into one [n, 3, 32, 32] tensor (parallel).
    pub fn load_images(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let (w, h) = (self.manifest.render.width, self.manifest.render.height);
        let per = 3 * w * h;
        let mut data = vec![0.0f32; indices.len() * per];
        let chunks: Result<Vec<()>> = data
            .par_chunks_mut(per)
            .zip(indices.par_iter())
            .map(|(dst, &idx)| {
                let img = self.load_image(idx)?;
                dst.copy_from_slice(img.data());
                Ok(())
            })
            .collect();
        chunks?;
        Tensor::new(vec![indices.len(), 3, h, w], data)
    }

    /// Iterate (global_index, object_id, label) in deterministic order.
    pub fn iter_meta(&self) -> impl Iterator<Item = (usize, usize, LightingLabel)> + '_ {
        self.manifest.frames.iter().map(|r| {
            (
                r.global_index,
                r.object_id,
                LightingLabel { bits: r.label },
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, SceneOverrides};

    fn tiny_scene() -> SceneConfig {
        let mut o = SceneOverrides::default();
        o.n_objects = Some(2);
        build_scene(&o).unwrap()
    }

    fn tiny_settings() -> RenderSettings {
        RenderSettings {
            samples_per_pixel: 4,
            ..Default::default()
        }
    }

    fn tmp(name: &str) -> PathBuf {
        let p = std::env::temp_dir().join(format!("cubelight_ds_{name}"));
        std::fs::remove_dir_all(&p).ok();
        p
    }

    #[test]
    fn split_lens_scale_proportionally() {
        assert_eq!(
            split_lens(1000),
            SplitLens {
                train: 600,
                val: 200,
                test: 200
            }
        );
        assert_eq!(
            split_lens(10),
            SplitLens {
                train: 6,
                val: 2,
                test: 2
            }
        );
    }

    #[test]
    fn splits_partition_all_frames() {
        let scene = tiny_scene();
        let manifest = DatasetManifest {
            seed: 0,
            n_objects: 2,
            frames_per_object: 10,
            splits: split_lens(10),
            exposure: 1.0,
            scene,
            render: tiny_settings(),
            color_codes: color_code_table(),
            frames: Vec::new(),
        };
        let (train, val, test) = split_dataset(&manifest);
        assert_eq!(train.len(), 12);
        assert_eq!(val.len(), 4);
        assert_eq!(test.len(), 4);
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn generate_read_round_trip_and_determinism() {
        let scene = tiny_scene();
        let settings = tiny_settings();
        let opts = GenerateOptions {
            frames_per_object: 3,
            write_sidecar: true,
        };
        let dir_a = tmp("a");
        let ds = generate_dataset(&scene, &settings, &opts, 11, &dir_a).unwrap();
        assert_eq!(ds.len(), 6);

        let back = read_dataset(&dir_a).unwrap();
        assert_eq!(back.manifest.frames, ds.manifest.frames);
        assert_eq!(back.manifest.exposure, ds.manifest.exposure);

        // Same seed elsewhere: byte-identical artifacts.
        let dir_b = tmp("b");
        let ds_b = generate_dataset(&scene, &settings, &opts, 11, &dir_b).unwrap();
        for (ra, rb) in ds.manifest.frames.iter().zip(&ds_b.manifest.frames) {
            assert_eq!(ra.png_sha256, rb.png_sha256);
            assert_eq!(ra.sidecar_sha256, rb.sidecar_sha256);
        }
        // Different seed: different pixels.
        let dir_c = tmp("c");
        let ds_c = generate_dataset(&scene, &settings, &opts, 12, &dir_c).unwrap();
        assert_ne!(
            ds.manifest.frames[0].png_sha256,
            ds_c.manifest.frames[0].png_sha256
        );

        // Object id layout convention.
        for (i, r) in ds.manifest.frames.iter().enumerate() {
            assert_eq!(r.object_id, i / 3);
            assert_eq!(r.global_index, i);
        }

        // Images load as [3,32,32] in [0,1]; sidecar and PNG paths agree
        // within 8-bit quantization.
        let img = ds.load_image(4).unwrap();
        assert_eq!(img.shape(), &[3, 32, 32]);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        for d in [dir_a, dir_b, dir_c] {
            std::fs::remove_dir_all(d).ok();
        }
    }

    #[test]
    fn corrupt_png_is_reported_with_frame_identity() {
        let scene = tiny_scene();
        let opts = GenerateOptions {
            frames_per_object: 2,
            write_sidecar: false,
        };
        let dir = tmp("corrupt");
        let ds = generate_dataset(&scene, &tiny_settings(), &opts, 5, &dir).unwrap();
        let victim = dir.join(&ds.manifest.frames[3].png);
        std::fs::write(&victim, b"garbage").unwrap();
        let err = ds.load_image(3).unwrap_err().to_string();
        assert!(err.contains("object 1 frame 1"), "{err}");
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn incomplete_marker_blocks_read_and_triggers_regen() {
        let scene = tiny_scene();
        let opts = GenerateOptions {
            frames_per_object: 2,
            write_sidecar: false,
        };
        let dir = tmp("marker");
        generate_dataset(&scene, &tiny_settings(), &opts, 5, &dir).unwrap();
        std::fs::write(dir.join(INCOMPLETE_MARKER), b"x").unwrap();
        assert!(read_dataset(&dir).is_err());
        // Regeneration clears the marker and restores a readable dataset.
        generate_dataset(&scene, &tiny_settings(), &opts, 5, &dir).unwrap();
        assert!(read_dataset(&dir).is_ok());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn sidecar_read_matches_png_read_up_to_quantization() {
        let scene = tiny_scene();
        let opts = GenerateOptions {
            frames_per_object: 1,
            write_sidecar: true,
        };
        let dir = tmp("sidecar");
        let ds = generate_dataset(&scene, &tiny_settings(), &opts, 9, &dir).unwrap();
        let with_sidecar = ds.load_image(0).unwrap();

        // Strip the sidecar from the record to force the PNG path.
        let mut ds2 = ds.clone();
        ds2.manifest.frames[0].sidecar = None;
        ds2.manifest.frames[0].sidecar_sha256 = None;
        let from_png = ds2.load_image(0).unwrap();
        let max_diff = with_sidecar
            .data()
            .iter()
            .zip(from_png.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        // One 8-bit step in sRGB is at most ~0.0088 in linear space.
        assert!(max_diff < 0.01, "max diff {max_diff}");
        std::fs::remove_dir_all(dir).ok();
    }
}
