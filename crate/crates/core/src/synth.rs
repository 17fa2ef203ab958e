//! Deterministic synthetic rooms of primitive objects standing on a floor.
//!
//! Scene `index` under seed `s` draws from its own substream, so scenes are
//! reproducible individually and in any order. Coordinates and colors are
//! rounded to `f32` so the on-disk scene format holds them exactly.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::scene::{Scene, NO_INSTANCE};

pub const FLOOR: usize = 0;
pub const SPHERE: usize = 1;
pub const BOX: usize = 2;
pub const CYLINDER: usize = 3;
pub const NUM_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["floor", "sphere", "box", "cylinder"];

const BASE_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.55, 0.50, 0.45],
    [0.85, 0.20, 0.20],
    [0.20, 0.70, 0.25],
    [0.20, 0.35, 0.85],
];
const FLOOR_FRACTION: f64 = 0.3;
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_train: usize,
    pub num_test: usize,
    pub points_per_scene: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Minimum gap between the footprints of any two objects, in meters.
    pub min_center_separation: f64,
    pub coord_noise: f64,
    pub color_jitter: f64,
    pub room: [f64; 3],
    /// Whether floor points form an instance or carry `NO_INSTANCE`.
    pub floor_instance: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_train: 200,
            num_test: 50,
            points_per_scene: 1024,
            min_objects: 3,
            max_objects: 7,
            min_center_separation: 0.5,
            coord_noise: 0.01,
            color_jitter: 0.05,
            room: [10.0, 10.0, 3.0],
            floor_instance: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if !(self.min_center_separation > 0.0) {
            return bad("min_center_separation must be positive");
        }
        if !(self.coord_noise >= 0.0) || !(self.color_jitter >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if self.room.iter().any(|&e| !(e > 2.0 * MAX_FOOTPRINT)) {
            return bad("room extents must exceed the largest object");
        }
        if self.room[2] < 2.0 * MAX_HALF_HEIGHT {
            return bad("room is lower than the tallest object");
        }
        let floor = self.floor_points();
        if self.points_per_scene <= floor || (self.max_objects > 0 && self.points_per_scene - floor < self.max_objects) {
            return bad("points_per_scene too small for the object count");
        }
        Ok(())
    }

    fn floor_points(&self) -> usize {
        (FLOOR_FRACTION * self.points_per_scene as f64).round() as usize
    }
}

// Size bounds per class: sphere radius, box half extents, cylinder radius
// and half height.
const SPHERE_RADIUS: (f64, f64) = (0.2, 0.4);
const BOX_HALF: (f64, f64) = (0.15, 0.4);
const CYLINDER_RADIUS: (f64, f64) = (0.15, 0.3);
const CYLINDER_HALF_HEIGHT: (f64, f64) = (0.2, 0.5);
const MAX_FOOTPRINT: f64 = 0.5657; // box half diagonal 0.4·√2, rounded up
const MAX_HALF_HEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Sphere { r: f64 },
    Box { half: [f64; 3], yaw: f64 },
    Cylinder { r: f64, h: f64 },
}

impl Shape {
    fn class(&self) -> usize {
        match self {
            Shape::Sphere { .. } => SPHERE,
            Shape::Box { .. } => BOX,
            Shape::Cylinder { .. } => CYLINDER,
        }
    }

    /// Radius of the vertical cylinder enclosing the object.
    fn footprint(&self) -> f64 {
        match *self {
            Shape::Sphere { r } | Shape::Cylinder { r, .. } => r,
            Shape::Box { half, .. } => half[0].hypot(half[1]),
        }
    }

    fn half_height(&self) -> f64 {
        match *self {
            Shape::Sphere { r } => r,
            Shape::Box { half, .. } => half[2],
            Shape::Cylinder { h, .. } => h,
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| rng.random_range(lo..hi);
        match rng.random_range(SPHERE..=CYLINDER) {
            SPHERE => Shape::Sphere { r: u(rng, SPHERE_RADIUS) },
            BOX => Shape::Box {
                half: [u(rng, BOX_HALF), u(rng, BOX_HALF), u(rng, BOX_HALF)],
                yaw: rng.random_range(0.0..PI),
            },
            _ => Shape::Cylinder {
                r: u(rng, CYLINDER_RADIUS),
                h: u(rng, CYLINDER_HALF_HEIGHT),
            },
        }
    }

    /// Uniform sample on the surface, relative to the object's center.
    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Shape::Sphere { r } => loop {
                let d: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if n > 1e-9 {
                    break d.map(|v| r * v / n);
                }
            },
            Shape::Box { half: [a, b, c], yaw } => {
                let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut face = 0;
                while face < 5 && pick >= areas[face] {
                    pick -= areas[face];
                    face += 1;
                }
                let s = |rng: &mut ChaCha8Rng, e: f64| rng.random_range(-e..e);
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let p = match face / 2 {
                    0 => [sign * a, s(rng, b), s(rng, c)],
                    1 => [s(rng, a), sign * b, s(rng, c)],
                    _ => [s(rng, a), s(rng, b), sign * c],
                };
                let (sn, cs) = yaw.sin_cos();
                [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1], p[2]]
            }
            Shape::Cylinder { r, h } => {
                let side = 2.0 * PI * r * 2.0 * h;
                let cap = PI * r * r;
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                let theta = rng.random_range(0.0..2.0 * PI);
                if pick < side {
                    [r * theta.cos(), r * theta.sin(), rng.random_range(-h..h)]
                } else {
                    let rho = r * rng.random_range(0.0f64..1.0).sqrt();
                    let z = if pick < side + cap { h } else { -h };
                    [rho * theta.cos(), rho * theta.sin(), z]
                }
            }
        }
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn jittered_color(rng: &mut ChaCha8Rng, class: usize, jitter: &Normal<f64>) -> [f64; 3] {
    BASE_COLORS[class].map(|c| quantize((c + jitter.sample(rng)).clamp(0.0, 1.0)))
}

/// Scene `index` of the stream defined by `cfg.seed`.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, stream::SCENE, index as u64);
    let noise = Normal::new(0.0, cfg.coord_noise).map_err(|e| Error::Config(e.to_string()))?;
    let jitter = Normal::new(0.0, cfg.color_jitter).map_err(|e| Error::Config(e.to_string()))?;
    let [lx, ly, _] = cfg.room;

    let num_objects = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut placed: Vec<(Shape, [f64; 2])> = Vec::with_capacity(num_objects);
    for object in 0..num_objects {
        let shape = Shape::random(&mut rng);
        let fp = shape.footprint();
        let mut attempts = 0;
        let center = loop {
            if attempts == MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::SceneTooCrowded { object, attempts });
            }
            attempts += 1;
            let c = [rng.random_range(fp..lx - fp), rng.random_range(fp..ly - fp)];
            let clear = placed.iter().all(|(other, o)| {
                (c[0] - o[0]).hypot(c[1] - o[1]) >= fp + other.footprint() + cfg.min_center_separation
            });
            if clear {
                break c;
            }
        };
        placed.push((shape, center));
    }

    let n = cfg.points_per_scene;
    let floor_n = if num_objects == 0 { n } else { cfg.floor_points() };
    let mut coords = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut semantic = Vec::with_capacity(n);
    let mut instances = Vec::with_capacity(n);
    let floor_id = if cfg.floor_instance { 0 } else { NO_INSTANCE };
    let first_object_id = if cfg.floor_instance { 1 } else { 0 };

    for _ in 0..floor_n {
        let p = [
            rng.random_range(0.0..lx) + noise.sample(&mut rng),
            rng.random_range(0.0..ly) + noise.sample(&mut rng),
            noise.sample(&mut rng),
        ];
        coords.push(p.map(quantize));
        colors.push(jittered_color(&mut rng, FLOOR, &jitter));
        semantic.push(FLOOR as i32);
        instances.push(floor_id);
    }
    let object_points = n - floor_n;
    for (k, (shape, c)) in placed.iter().enumerate() {
        let count = object_points / num_objects + usize::from(k < object_points % num_objects);
        let center = [c[0], c[1], shape.half_height()];
        for _ in 0..count {
            let s = shape.sample_surface(&mut rng);
            let p: [f64; 3] = std::array::from_fn(|d| center[d] + s[d] + noise.sample(&mut rng));
            coords.push(p.map(quantize));
            colors.push(jittered_color(&mut rng, shape.class(), &jitter));
            semantic.push(shape.class() as i32);
            instances.push(first_object_id + k as i32);
        }
    }

    Ok(Scene {
        id: format!("scene_{index:05}"),
        coords,
        colors,
        semantic_labels: semantic,
        instance_ids: instances,
        num_classes: NUM_CLASSES,
    })
}

/// Train scenes use indices `0..num_train`, test scenes the following
/// `num_test` indices.
pub fn generate_split(cfg: &SynthConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let train = (0..cfg.num_train).map(|i| generate_scene(cfg, i)).collect::<Result<_>>()?;
    let test = (cfg.num_train..cfg.num_train + cfg.num_test)
        .map(|i| generate_scene(cfg, i))
        .collect::<Result<_>>()?;
    Ok((train, test))
}
