//! Deterministic synthetic bi-temporal scenes with exact change masks.
//!
//! Every sample is a pure function of `(seed, index)`. A scene is a solid
//! background plus a handful of non-overlapping colored rectangles and
//! ellipses; each object is kept, removed (present only at t1) or added
//! (present only at t2). The mask is the symmetric difference of the two
//! coverage maps, computed from the recorded object list, so ground truth
//! is exact by construction. Photometric jitter (global brightness scale
//! plus Gaussian pixel noise) is applied to t2 only and never touches the
//! mask: apparent change that the model must learn to ignore.

pub mod augment;
pub mod manifest;
pub mod pnm;

pub use augment::AugmentOp;
pub use manifest::{generate_dataset, DatasetManifest, ManifestEntry, Split, SplitCounts};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Rectangle,
    Ellipse,
}

/// What happened to an object between the two time points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Keep,
    Remove,
    Add,
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    /// Square image size; power of two.
    pub size: usize,
    pub channels: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub p_keep: f64,
    pub p_remove: f64,
    pub p_add: f64,
    /// Brightness scale drawn from `[1-j, 1+j]` for t2.
    pub brightness_jitter: f64,
    /// Std dev of additive Gaussian noise on t2.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            channels: 3,
            min_objects: 2,
            max_objects: 5,
            p_keep: 0.5,
            p_remove: 0.25,
            p_add: 0.25,
            brightness_jitter: 0.1,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.size.is_power_of_two() || self.size < 8 {
            return Err(Error::value(
                "scene_spec",
                format!("size {} must be a power of two >= 8", self.size),
            ));
        }
        if self.channels != 3 {
            return Err(Error::value("scene_spec", "only 3-channel scenes are supported"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::value("scene_spec", "min_objects > max_objects"));
        }
        let psum = self.p_keep + self.p_remove + self.p_add;
        if self.p_keep < 0.0 || self.p_remove < 0.0 || self.p_add < 0.0 || (psum - 1.0).abs() > 1e-9
        {
            return Err(Error::value(
                "scene_spec",
                format!("fate probabilities must be nonnegative and sum to 1, got {psum}"),
            ));
        }
        if !(self.brightness_jitter.is_finite() && self.brightness_jitter >= 0.0)
            || !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0)
        {
            return Err(Error::value("scene_spec", "jitter ranges must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SceneObject {
    pub kind: ObjectKind,
    /// Bounding box, half-open pixel coordinates.
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub color: [f32; 3],
    pub fate: Fate,
}

impl SceneObject {
    /// Pixel-coverage test at integer pixel (x, y).
    pub fn covers(&self, x: usize, y: usize) -> bool {
        if x < self.x0 || x >= self.x1 || y < self.y0 || y >= self.y1 {
            return false;
        }
        match self.kind {
            ObjectKind::Rectangle => true,
            ObjectKind::Ellipse => {
                let rx = (self.x1 - self.x0) as f64 / 2.0;
                let ry = (self.y1 - self.y0) as f64 / 2.0;
                let cx = self.x0 as f64 + rx;
                let cy = self.y0 as f64 + ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn bbox_intersects(&self, other: &SceneObject) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Everything needed to re-rasterize a generated scene exactly.
#[derive(Clone, Debug)]
pub struct SceneDescription {
    pub background: [f32; 3],
    pub objects: Vec<SceneObject>,
}

/// Bi-temporal image pair plus its exact binary change mask.
#[derive(Clone, Debug)]
pub struct SamplePair {
    /// `[3, H, W]` in `[0, 1]`.
    pub t1: Tensor<f32>,
    pub t2: Tensor<f32>,
    /// `[1, H, W]` in `{0, 1}`.
    pub mask: Tensor<f32>,
}

fn present_at(fate: Fate, t2: bool) -> bool {
    match fate {
        Fate::Keep => true,
        Fate::Remove => !t2,
        Fate::Add => t2,
    }
}

/// Paint background + the objects present at one time point, in list order.
fn rasterize(desc: &SceneDescription, size: usize, t2: bool) -> Vec<f32> {
    let plane = size * size;
    let mut img = vec![0.0f32; 3 * plane];
    for ch in 0..3 {
        img[ch * plane..(ch + 1) * plane].fill(desc.background[ch]);
    }
    for obj in desc.objects.iter().filter(|o| present_at(o.fate, t2)) {
        for y in obj.y0..obj.y1 {
            for x in obj.x0..obj.x1 {
                if obj.covers(x, y) {
                    for ch in 0..3 {
                        img[ch * plane + y * size + x] = obj.color[ch];
                    }
                }
            }
        }
    }
    img
}

/// Exact mask: symmetric difference of the two coverage maps.
pub fn coverage_mask(desc: &SceneDescription, size: usize) -> Vec<f32> {
    let mut mask = vec![0.0f32; size * size];
    for (p, m) in mask.iter_mut().enumerate() {
        let (x, y) = (p % size, p / size);
        let c1 = desc.objects.iter().any(|o| present_at(o.fate, false) && o.covers(x, y));
        let c2 = desc.objects.iter().any(|o| present_at(o.fate, true) && o.covers(x, y));
        if c1 != c2 {
            *m = 1.0;
        }
    }
    mask
}

/// Generate sample `index` of the stream defined by `spec.seed`.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<(SamplePair, SceneDescription)> {
    spec.validate()?;
    let mut rng = Rng::for_index(spec.seed, index);
    let size = spec.size;

    let background = [
        rng.uniform(0.15, 0.85) as f32,
        rng.uniform(0.15, 0.85) as f32,
        rng.uniform(0.15, 0.85) as f32,
    ];

    let n_objects = rng.range_inclusive(spec.min_objects as u64, spec.max_objects as u64) as usize;
    let (min_side, max_side) = ((size / 6).max(4), size / 3);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        // reject overlapping bounding boxes so the coverage mask stays an
        // exact per-object ground truth
        let mut placed = None;
        for _try in 0..20 {
            let w = rng.range_inclusive(min_side as u64, max_side as u64) as usize;
            let h = rng.range_inclusive(min_side as u64, max_side as u64) as usize;
            let x0 = rng.range_inclusive(0, (size - w) as u64) as usize;
            let y0 = rng.range_inclusive(0, (size - h) as u64) as usize;
            let kind = if rng.next_below(2) == 0 {
                ObjectKind::Rectangle
            } else {
                ObjectKind::Ellipse
            };
            let mut color = [0.0f32; 3];
            for _attempt in 0..10 {
                for c in &mut color {
                    *c = rng.uniform(0.0, 1.0) as f32;
                }
                let contrast = color
                    .iter()
                    .zip(&background)
                    .map(|(c, b)| (c - b).abs())
                    .fold(0.0f32, f32::max);
                if contrast >= 0.3 {
                    break;
                }
            }
            let r = rng.next_f64();
            let fate = if r < spec.p_keep {
                Fate::Keep
            } else if r < spec.p_keep + spec.p_remove {
                Fate::Remove
            } else {
                Fate::Add
            };
            let candidate = SceneObject {
                kind,
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
                color,
                fate,
            };
            if objects.iter().all(|o| !o.bbox_intersects(&candidate)) {
                placed = Some(candidate);
                break;
            }
        }
        if let Some(obj) = placed {
            objects.push(obj);
        }
    }

    let desc = SceneDescription {
        background,
        objects,
    };

    let img1 = rasterize(&desc, size, false);
    let mut img2 = rasterize(&desc, size, true);
    if spec.brightness_jitter > 0.0 || spec.noise_sigma > 0.0 {
        let scale = rng.uniform(1.0 - spec.brightness_jitter, 1.0 + spec.brightness_jitter) as f32;
        for v in img2.iter_mut() {
            let noise = if spec.noise_sigma > 0.0 {
                (rng.normal() * spec.noise_sigma) as f32
            } else {
                0.0
            };
            *v = (*v * scale + noise).clamp(0.0, 1.0);
        }
    }
    let mask = coverage_mask(&desc, size);

    Ok((
        SamplePair {
            t1: Tensor::from_vec(&[3, size, size], img1),
            t2: Tensor::from_vec(&[3, size, size], img2),
            mask: Tensor::from_vec(&[1, size, size], mask),
        },
        desc,
    ))
}

pub fn generate_pair(spec: &SceneSpec, index: u64) -> Result<SamplePair> {
    Ok(generate_scene(spec, index)?.0)
}
