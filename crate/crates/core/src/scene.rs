//! Static world description: cube palette, geometry, camera, and the
//! eight-spotlight rig.

use serde::{Deserialize, Serialize};

use crate::color::{hsv_to_rgb, Rgb};
use crate::error::{Error, Result};
use crate::vec3::Vec3;

pub const PALETTE_SATURATION: f64 = 0.5;
pub const PALETTE_VALUE: f64 = 1.0;

/// One entry of the object palette: equidistant hues at fixed S and V.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeColor {
    pub object_id: usize,
    /// Fraction of the color circle in [0,1).
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
    /// Linear RGB derived from (hue, saturation, value).
    pub albedo_rgb: Rgb,
}

/// Eight spotlights on a circle, all aimed at the same point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotlightRig {
    pub positions: [Vec3; 8],
    pub aim_point: Vec3,
    pub cone_half_angle_deg: f64,
    /// Falloff band as a fraction of the half angle.
    pub cone_blend: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub roughness: f64,
    pub sheen: f64,
    pub sheen_tint: f64,
    pub opacity: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            roughness: 0.5,
            sheen: 0.0,
            sheen_tint: 0.5,
            opacity: 1.0,
        }
    }
}

/// Full geometric and photometric description of the cube-plane-spotlight
/// world. Immutable after [`build_scene`]; safe to share across workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Neutral gray albedo of the 20 x 20 m ground plane.
    pub ground_albedo: Rgb,
    pub ground_half_extent: f64,
    /// Cube edge length in meters.
    pub cube_size: f64,
    /// Rotation about z in degrees.
    pub cube_yaw_deg: f64,
    pub camera_position: Vec3,
    /// Downward tilt of the optical axis from the horizontal, degrees.
    pub camera_pitch_deg: f64,
    /// Vertical field of view, degrees.
    pub camera_fov_deg: f64,
    pub palette: Vec<CubeColor>,
    pub rig: SpotlightRig,
    pub material: Material,
}

/// Overridable scene parameters; unset fields take the built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneOverrides {
    pub n_objects: Option<usize>,
    pub ground_albedo: Option<f64>,
    pub cube_size: Option<f64>,
    pub cube_yaw_deg: Option<f64>,
    pub camera_position: Option<[f64; 3]>,
    pub camera_pitch_deg: Option<f64>,
    pub camera_fov_deg: Option<f64>,
    pub light_circle_radius: Option<f64>,
    pub light_height: Option<f64>,
    pub cone_half_angle_deg: Option<f64>,
    pub cone_blend: Option<f64>,
}

/// `n_objects` equidistant hues at S = 0.5, V = 1.
pub fn make_object_palette(n_objects: usize) -> Result<Vec<CubeColor>> {
    if n_objects == 0 {
        return Err(Error::config("n_objects", "palette needs at least one object"));
    }
    (0..n_objects)
        .map(|i| {
            let hue = i as f64 / n_objects as f64;
            Ok(CubeColor {
                object_id: i,
                hue,
                saturation: PALETTE_SATURATION,
                value: PALETTE_VALUE,
                albedo_rgb: hsv_to_rgb(hue, PALETTE_SATURATION, PALETTE_VALUE)?,
            })
        })
        .collect()
}

fn build_rig(radius: f64, height: f64, aim: Vec3, half_angle: f64, blend: f64) -> SpotlightRig {
    let mut positions = [Vec3::ZERO; 8];
    for (k, p) in positions.iter_mut().enumerate() {
        let angle = k as f64 * std::f64::consts::FRAC_PI_4;
        *p = Vec3::new(radius * angle.cos(), radius * angle.sin(), height);
    }
    SpotlightRig {
        positions,
        aim_point: aim,
        cone_half_angle_deg: half_angle,
        cone_blend: blend,
    }
}

/// Build and validate a scene. All defaults follow the reference setup:
/// a 2 m cube yawed 45 degrees on a 20 x 20 m gray plane, eight spotlights
/// on a 6 m circle at 5 m height aimed at the cube center, camera at
/// (0, -4, 4) pitched 50 degrees down with a 40 degree vertical FOV.
pub fn build_scene(overrides: &SceneOverrides) -> Result<SceneConfig> {
    let n_objects = overrides.n_objects.unwrap_or(50);
    let gray = overrides.ground_albedo.unwrap_or(0.5);
    let cube_size = overrides.cube_size.unwrap_or(2.0);
    let radius = overrides.light_circle_radius.unwrap_or(6.0);
    let height = overrides.light_height.unwrap_or(5.0);
    let cam = overrides
        .camera_position
        .map(|p| Vec3::new(p[0], p[1], p[2]))
        .unwrap_or(Vec3::new(0.0, -4.0, 4.0));

    let scene = SceneConfig {
        ground_albedo: [gray, gray, gray],
        ground_half_extent: 10.0,
        cube_size,
        cube_yaw_deg: overrides.cube_yaw_deg.unwrap_or(45.0),
        camera_position: cam,
        camera_pitch_deg: overrides.camera_pitch_deg.unwrap_or(50.0),
        camera_fov_deg: overrides.camera_fov_deg.unwrap_or(40.0),
        palette: make_object_palette(n_objects)?,
        rig: build_rig(
            radius,
            height,
            // Cube center: the cube rests on the plane, so its center sits
            // half an edge above the origin.
            Vec3::new(0.0, 0.0, cube_size / 2.0),
            overrides.cone_half_angle_deg.unwrap_or(22.5),
            overrides.cone_blend.unwrap_or(0.15),
        ),
        material: Material::default(),
    };
    validate(&scene)?;
    Ok(scene)
}

fn validate(scene: &SceneConfig) -> Result<()> {
    if scene.cube_size <= 0.0 {
        return Err(Error::config("cube_size", "must be positive"));
    }
    if scene.palette.is_empty() {
        return Err(Error::config("palette", "must not be empty"));
    }
    for c in &scene.palette {
        if c.saturation != PALETTE_SATURATION || c.value != PALETTE_VALUE {
            return Err(Error::config(
                "palette",
                format!("object {} must use S=0.5, V=1", c.object_id),
            ));
        }
        let expect = c.object_id as f64 / scene.palette.len() as f64;
        if (c.hue - expect).abs() > 1e-12 {
            return Err(Error::config(
                "palette",
                format!("object {} hue {} is not equidistant", c.object_id, c.hue),
            ));
        }
    }
    let expect_aim = Vec3::new(0.0, 0.0, scene.cube_size / 2.0);
    if (scene.rig.aim_point - expect_aim).norm() > 1e-9 {
        return Err(Error::config("rig.aim_point", "lights must aim at the cube center"));
    }
    if !(0.0..1.0).contains(&scene.rig.cone_blend) {
        return Err(Error::config("rig.cone_blend", "must lie in [0,1)"));
    }
    if scene.rig.cone_half_angle_deg <= 0.0 || scene.rig.cone_half_angle_deg >= 90.0 {
        return Err(Error::config("rig.cone_half_angle_deg", "must lie in (0,90)"));
    }
    if scene.camera_fov_deg <= 0.0 || scene.camera_fov_deg >= 180.0 {
        return Err(Error::config("camera_fov_deg", "must lie in (0,180)"));
    }
    let m = &scene.material;
    if m.opacity != 1.0 || m.sheen != 0.0 || m.sheen_tint != 0.5 || m.roughness != 0.5 {
        return Err(Error::config(
            "material",
            "expected opacity=1, sheen=0, sheen_tint=0.5, roughness=0.5",
        ));
    }
    Ok(())
}

impl SceneConfig {
    /// Center of the cube in world space.
    pub fn cube_center(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.cube_size / 2.0)
    }

    /// Elevation angle (degrees) from a rig light down to the aim point.
    pub fn light_aim_elevation_deg(&self) -> f64 {
        let light = self.rig.positions[0];
        let d = self.rig.aim_point - light;
        let horiz = (d.x * d.x + d.y * d.y).sqrt();
        (-d.z / horiz).atan().to_degrees()
    }
}
