//! Coarse-to-fine Horn–Schunck optical flow.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;
use crate::prior::resample;
use crate::scalar::{lit, Real};

use super::motion::FlowField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: usize,
    /// Weight of the smoothness term, applied to images rescaled to `[0, 255]`.
    pub smoothness: f64,
    pub iterations: usize,
    /// Largest accepted displacement; `None` means a quarter of the image side.
    pub max_displacement: Option<f64>,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { levels: 3, smoothness: 100.0, iterations: 200, max_displacement: None }
    }
}

impl FlowParams {
    pub fn max_displacement_for(&self, size: usize) -> f64 {
        self.max_displacement.unwrap_or(size as f64 / 4.0)
    }
}

#[derive(Debug, Clone)]
pub struct FlowEstimate<T: Real> {
    pub field: FlowField<T>,
    /// Set when an input was constant and the flow is undefined.
    pub degenerate: bool,
}

/// Plain square grid of `f64` used internally by the estimator.
#[derive(Clone)]
struct Grid {
    n: usize,
    data: Vec<f64>,
}

impl Grid {
    fn at(&self, r: isize, c: isize) -> f64 {
        let last = self.n as isize - 1;
        self.data[r.clamp(0, last) as usize * self.n + c.clamp(0, last) as usize]
    }

    fn downsample(&self) -> Grid {
        let m = self.n / 2;
        let mut data = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                let (r2, c2) = (2 * r as isize, 2 * c as isize);
                data[r * m + c] =
                    0.25 * (self.at(r2, c2) + self.at(r2, c2 + 1) + self.at(r2 + 1, c2) + self.at(r2 + 1, c2 + 1));
            }
        }
        Grid { n: m, data }
    }

    /// Bilinear sample with clamp-to-edge.
    fn sample(&self, r: f64, c: f64) -> f64 {
        let r0 = r.floor();
        let c0 = c.floor();
        let (fr, fc) = (r - r0, c - c0);
        let (r0, c0) = (r0 as isize, c0 as isize);
        (1.0 - fr) * ((1.0 - fc) * self.at(r0, c0) + fc * self.at(r0, c0 + 1))
            + fr * ((1.0 - fc) * self.at(r0 + 1, c0) + fc * self.at(r0 + 1, c0 + 1))
    }
}

fn to_grid<T: Real>(img: &Image<T>, scale: f64) -> Grid {
    Grid { n: img.size(), data: img.as_slice().iter().map(|v| v.to_f64().unwrap_or(0.0) * scale).collect() }
}

/// Dense displacement `d` with `next(p) ≈ prev(p − d(p))`.
pub fn estimate_flow<T: Real>(prev: &Image<T>, next: &Image<T>, params: &FlowParams) -> Result<FlowEstimate<T>> {
    next.check_size(prev.size())?;
    let n = prev.size();
    if prev.is_constant() || next.is_constant() {
        log::warn!("optical flow undefined for constant input; returning zero field");
        return Ok(FlowEstimate { field: FlowField::zeros(n), degenerate: true });
    }
    let peak = prev
        .as_slice()
        .iter()
        .chain(next.as_slice())
        .map(|v| v.to_f64().unwrap_or(0.0).abs())
        .fold(0.0, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 1.0 };

    let mut pyramid = vec![(to_grid(prev, scale), to_grid(next, scale))];
    while pyramid.len() < params.levels.max(1) {
        let (a, b) = pyramid.last().unwrap();
        if a.n / 2 < 4 {
            break;
        }
        let down = (a.downsample(), b.downsample());
        pyramid.push(down);
    }

    let coarsest = pyramid.last().unwrap().0.n;
    let mut u = vec![0.0; coarsest * coarsest];
    let mut v = vec![0.0; coarsest * coarsest];
    let mut size = coarsest;
    for (a, b) in pyramid.iter().rev() {
        if a.n != size {
            let factor = a.n as f64 / size as f64;
            let mut uu = vec![0.0; a.n * a.n];
            let mut vv = vec![0.0; a.n * a.n];
            resample(&u, size, a.n, &mut uu);
            resample(&v, size, a.n, &mut vv);
            u = uu.into_iter().map(|x| x * factor).collect();
            v = vv.into_iter().map(|x| x * factor).collect();
            size = a.n;
        }
        refine_level(a, b, &mut u, &mut v, params);
    }

    let limit = params.max_displacement_for(n);
    for (x, y) in u.iter_mut().zip(v.iter_mut()) {
        let mag = (*x * *x + *y * *y).sqrt();
        if mag > limit {
            *x *= limit / mag;
            *y *= limit / mag;
        }
    }
    let field = FlowField::new(n, u.into_iter().map(lit).collect(), v.into_iter().map(lit).collect())?;
    Ok(FlowEstimate { field, degenerate: false })
}

/// Jacobi Horn–Schunck iterations linearized around the current flow.
fn refine_level(prev: &Grid, next: &Grid, u: &mut [f64], v: &mut [f64], params: &FlowParams) {
    let n = prev.n;
    let warped = Grid {
        n,
        data: (0..n * n)
            .map(|i| prev.sample((i / n) as f64 - v[i], (i % n) as f64 - u[i]))
            .collect(),
    };
    let mut ix = vec![0.0; n * n];
    let mut iy = vec![0.0; n * n];
    let mut it = vec![0.0; n * n];
    for r in 0..n as isize {
        for c in 0..n as isize {
            let i = r as usize * n + c as usize;
            let dx = |g: &Grid| 0.5 * (g.at(r, c + 1) - g.at(r, c - 1));
            let dy = |g: &Grid| 0.5 * (g.at(r + 1, c) - g.at(r - 1, c));
            ix[i] = 0.5 * (dx(&warped) + dx(next));
            iy[i] = 0.5 * (dy(&warped) + dy(next));
            it[i] = next.data[i] - warped.data[i];
        }
    }
    let u0 = u.to_vec();
    let v0 = v.to_vec();
    let alpha2 = params.smoothness;
    let mut ubar = vec![0.0; n * n];
    let mut vbar = vec![0.0; n * n];
    for _ in 0..params.iterations {
        neighbour_mean(u, n, &mut ubar);
        neighbour_mean(v, n, &mut vbar);
        for i in 0..n * n {
            let t = (ix[i] * (ubar[i] - u0[i]) + iy[i] * (vbar[i] - v0[i]) + it[i])
                / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
            u[i] = ubar[i] - ix[i] * t;
            v[i] = vbar[i] - iy[i] * t;
        }
    }
}

fn neighbour_mean(f: &[f64], n: usize, out: &mut [f64]) {
    let last = n as isize - 1;
    let at = |r: isize, c: isize| f[r.clamp(0, last) as usize * n + c.clamp(0, last) as usize];
    for r in 0..n as isize {
        for c in 0..n as isize {
            out[r as usize * n + c as usize] = 0.25 * (at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1));
        }
    }
}
