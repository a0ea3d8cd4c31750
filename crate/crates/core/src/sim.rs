//! Dynamic phantoms and measurement synthesis.
//!
//! Scenes live in normalized coordinates `[-1, 1]²` (y up) and are rendered
//! at any resolution. Shapes are painted in order: each pixel becomes
//! `value · (1 − coverage) + intensity · coverage`.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::projector::{AngleSchedule, Projector, ScanGeometry, Sinogram};
use crate::scalar::{lit, Real};

/// Sub-samples per axis for pixels straddling a shape boundary.
pub const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub step: usize,
    pub center: [f64; 2],
    pub radii: [f64; 2],
    /// Rotation in degrees, counter-clockwise.
    #[serde(default)]
    pub angle: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    /// Sorted by step; interpolated with Catmull–Rom splines and held constant
    /// outside the keyed range.
    pub keyframes: Vec<Keyframe>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    /// Normalized radius: `< 1` inside.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * (2.0 * p1 + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3)
}

impl Shape {
    pub fn fixed(center: [f64; 2], radii: [f64; 2], angle: f64, intensity: f64) -> Self {
        Self { keyframes: vec![Keyframe { step: 1, center, radii, angle, intensity }] }
    }

    fn at(&self, k: usize) -> Ellipse {
        let kf = &self.keyframes;
        let pick = |f: &dyn Fn(&Keyframe) -> f64| -> f64 {
            if kf.len() == 1 || k <= kf[0].step {
                return f(&kf[0]);
            }
            if k >= kf[kf.len() - 1].step {
                return f(&kf[kf.len() - 1]);
            }
            let i = kf.windows(2).position(|w| k >= w[0].step && k < w[1].step).expect("bracketed");
            let (k1, k2) = (&kf[i], &kf[i + 1]);
            let t = (k - k1.step) as f64 / (k2.step - k1.step) as f64;
            // phantom end points mirror the neighbour for a zero-curvature end
            let p0 = if i > 0 { f(&kf[i - 1]) } else { 2.0 * f(k1) - f(k2) };
            let p3 = if i + 2 < kf.len() { f(&kf[i + 2]) } else { 2.0 * f(k2) - f(k1) };
            catmull_rom(p0, f(k1), f(k2), p3, t)
        };
        let angle = pick(&|f| f.angle).to_radians();
        Ellipse {
            cx: pick(&|f| f.center[0]),
            cy: pick(&|f| f.center[1]),
            a: pick(&|f| f.radii[0]),
            b: pick(&|f| f.radii[1]),
            cos: angle.cos(),
            sin: angle.sin(),
            intensity: pick(&|f| f.intensity).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicPhantom {
    pub steps: usize,
    pub shapes: Vec<Shape>,
}

impl DynamicPhantom {
    pub fn new(steps: usize, shapes: Vec<Shape>) -> Result<Self> {
        let p = Self { steps, shapes };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("phantom needs at least one step".into()));
        }
        for (i, shape) in self.shapes.iter().enumerate() {
            if shape.keyframes.is_empty() {
                return Err(Error::InvalidParameter(format!("shape {i} has no keyframes")));
            }
            if shape.keyframes.windows(2).any(|w| w[1].step <= w[0].step) {
                return Err(Error::InvalidParameter(format!("shape {i} keyframes must have increasing steps")));
            }
            for kf in &shape.keyframes {
                if !(0.0..=1.0).contains(&kf.intensity) {
                    return Err(Error::InvalidParameter(format!("shape {i} intensity outside [0, 1]")));
                }
            }
            for k in 1..=self.steps {
                let e = shape.at(k);
                if !(e.a > 0.0 && e.b > 0.0) {
                    return Err(Error::InvalidParameter(format!("shape {i} has non-positive radii at step {k}")));
                }
                if e.cx.abs() + e.a.max(e.b) > 1.0 || e.cy.abs() + e.a.max(e.b) > 1.0 {
                    return Err(Error::InvalidParameter(format!("shape {i} leaves the image domain at step {k}")));
                }
            }
        }
        Ok(())
    }

    /// No shapes.
    pub fn empty(steps: usize) -> Self {
        Self { steps, shapes: Vec::new() }
    }

    /// Single centered disk of intensity 1 and radius `radius` (normalized).
    pub fn disk(steps: usize, radius: f64) -> Self {
        Self { steps, shapes: vec![Shape::fixed([0.0, 0.0], [radius, radius], 0.0, 1.0)] }
    }

    /// Two translating ellipses with oscillating radii over `steps` steps.
    pub fn default_scene(steps: usize) -> Self {
        let sample = |f: &dyn Fn(f64) -> Keyframe| -> Vec<Keyframe> {
            let mut keys: Vec<Keyframe> = (0..).map(|i| 1 + 5 * i).take_while(|&k| k < steps).map(|k| f(k as f64)).collect();
            keys.push(f(steps as f64));
            keys.dedup_by_key(|kf| kf.step);
            keys
        };
        let big = sample(&|k| Keyframe {
            step: k as usize,
            center: [-0.25 + 0.06 * (2.0 * PI * k / 100.0).sin(), 0.1],
            radii: [0.32 + 0.02 * (2.0 * PI * k / 50.0).sin(), 0.42],
            angle: 10.0,
            intensity: 0.8,
        });
        let small = sample(&|k| Keyframe {
            step: k as usize,
            center: [0.4, -0.15 + 0.06 * (2.0 * PI * k / 80.0).sin()],
            radii: [0.22, 0.3 + 0.02 * (2.0 * PI * k / 40.0).cos()],
            angle: -15.0,
            intensity: 0.5,
        });
        Self { steps, shapes: vec![Shape { keyframes: big }, Shape { keyframes: small }] }
    }

    /// An ellipse sweeping across the field at constant speed next to a static one.
    pub fn sustained_translation(steps: usize) -> Self {
        let start = Keyframe { step: 1, center: [-0.4, 0.15], radii: [0.3, 0.24], angle: 0.0, intensity: 0.9 };
        let end = Keyframe { step: steps.max(2), center: [0.4, 0.15], ..start };
        Self {
            steps,
            shapes: vec![
                Shape::fixed([0.0, -0.5], [0.45, 0.2], 0.0, 0.4),
                Shape { keyframes: vec![start, end] },
            ],
        }
    }

    /// Rasterizes step `k` onto a `size`×`size` grid.
    pub fn render<T: Real>(&self, size: usize, k: usize) -> Result<Image<T>> {
        if k == 0 || k > self.steps {
            return Err(Error::StepOutOfRange { step: k, steps: self.steps });
        }
        let ellipses: Vec<Ellipse> = self.shapes.iter().map(|s| s.at(k)).collect();
        let h = 2.0 / size as f64;
        let half_diag = h * std::f64::consts::FRAC_1_SQRT_2;
        let mut out = vec![0.0f64; size * size];
        for e in &ellipses {
            let min_axis = e.a.min(e.b);
            for r in 0..size {
                let y = 1.0 - (r as f64 + 0.5) * h;
                for c in 0..size {
                    let x = -1.0 + (c as f64 + 0.5) * h;
                    let rho = e.rho(x, y);
                    // ‖p − ellipse‖ ≥ |ρ − 1| · min(a, b)
                    let coverage = if (rho - 1.0).abs() * min_axis > half_diag {
                        if rho < 1.0 {
                            1.0
                        } else {
                            continue;
                        }
                    } else {
                        let mut hits = 0usize;
                        for i in 0..SUPERSAMPLE {
                            let sy = y + h * (0.5 - (i as f64 + 0.5) / SUPERSAMPLE as f64);
                            for j in 0..SUPERSAMPLE {
                                let sx = x + h * ((j as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5);
                                if e.rho(sx, sy) < 1.0 {
                                    hits += 1;
                                }
                            }
                        }
                        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
                    };
                    let v = &mut out[r * size + c];
                    *v = *v * (1.0 - coverage) + e.intensity * coverage;
                }
            }
        }
        Ok(Image::from_fn(size, |r, c| lit(out[r * size + c])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise standard deviation as a fraction of the step's peak `|y|`.
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::InvalidParameter("noise level must be non-negative".into()));
        }
        Ok(Self { level, seed })
    }
}

/// Noiseless sinogram of step `k` computed on an `oversample`-times finer grid
/// with the same detectors.
pub fn clean_measurement<T: Real>(
    phantom: &DynamicPhantom,
    geom: &ScanGeometry,
    oversample: usize,
    k: usize,
) -> Result<DVector<T>> {
    if oversample == 0 {
        return Err(Error::InvalidParameter("oversample factor must be at least 1".into()));
    }
    let n = geom.image_size();
    let fine = geom.with_grid(n * oversample, geom.pixel_size() / oversample as f64)?;
    let truth = phantom.render::<T>(n * oversample, k)?;
    Ok(Projector::new(&fine).forward(&truth)?.into_vector())
}

/// Per-step sinograms over the schedule's angle sets with additive Gaussian noise of
/// standard deviation `level · max|y_clean|`.
pub fn simulate_measurements<T: Real>(
    phantom: &DynamicPhantom,
    sched: &AngleSchedule,
    geom: &ScanGeometry,
    noise: &NoiseSpec,
    oversample: usize,
) -> Result<Vec<Sinogram<T>>> {
    if sched.steps > phantom.steps {
        return Err(Error::InvalidParameter(format!(
            "schedule has {} steps but the phantom only {}",
            sched.steps, phantom.steps
        )));
    }
    (1..=sched.steps)
        .into_par_iter()
        .map(|k| {
            let gk = geom.with_angles(sched.angles(k))?;
            let clean = clean_measurement::<T>(phantom, &gk, oversample, k)?;
            let noisy = add_noise(clean, noise, k);
            Sinogram::new(gk, noisy)
        })
        .collect()
}

/// Adds `N(0, (level · max|y|)²)` noise from a stream keyed by `(seed, k)`.
pub fn add_noise<T: Real>(mut y: DVector<T>, noise: &NoiseSpec, k: usize) -> DVector<T> {
    if noise.level == 0.0 {
        return y;
    }
    let peak = y.iter().map(|v| v.to_f64().unwrap_or(0.0).abs()).fold(0.0, f64::max);
    let std = noise.level * peak;
    if std == 0.0 {
        return y;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(k as u64);
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in y.iter_mut() {
        *v += lit::<T>(normal.sample(&mut rng));
    }
    y
}

/// `‖recon − truth‖₂ / ‖truth‖₂`.
pub fn relative_error<T: Real>(recon: &Image<T>, truth: &Image<T>) -> Result<T> {
    recon.check_size(truth.size())?;
    let denom = truth.norm();
    if denom == T::zero() {
        return Err(Error::ZeroTruth);
    }
    Ok((recon.as_vector() - truth.as_vector()).norm() / denom)
}
