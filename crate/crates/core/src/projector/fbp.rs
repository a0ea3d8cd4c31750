use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Real};

use super::Sinogram;

/// Discrete Ram–Lak kernel sampled at detector spacing `tau`.
fn ram_lak(offset: isize, tau: f64) -> f64 {
    if offset == 0 {
        1.0 / (4.0 * tau * tau)
    } else if offset % 2 == 0 {
        0.0
    } else {
        let n = offset as f64;
        -1.0 / (PI * PI * n * n * tau * tau)
    }
}

/// Ram–Lak filtered backprojection with linear detector interpolation.
pub fn fbp<T: Real>(sino: &Sinogram<T>) -> Result<Image<T>> {
    let geom = sino.geometry();
    let na = geom.angles().len();
    if na < 2 {
        return Err(Error::InsufficientAngles { required: 2, got: na });
    }
    let d = geom.detector_count();
    let tau = geom.detector_spacing();
    let kernel: Vec<f64> = (-(d as isize) + 1..d as isize).map(|o| ram_lak(o, tau)).collect();

    let n = geom.image_size();
    let h = geom.pixel_size();
    let half = 0.5 * n as f64 * h;
    let s0 = geom.detector_offset(0);
    let mut out = vec![0.0f64; n * n];
    let mut filtered = vec![0.0f64; d];
    for (a, &deg) in geom.angles().iter().enumerate() {
        let row: Vec<f64> = (0..d).map(|t| sino.value(a, t).to_f64().unwrap_or(0.0)).collect();
        for (t, f) in filtered.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &p) in row.iter().enumerate() {
                acc += kernel[t + d - 1 - k] * p;
            }
            *f = acc * tau;
        }
        let (sin, cos) = deg.to_radians().sin_cos();
        for r in 0..n {
            let y = half - (r as f64 + 0.5) * h;
            for c in 0..n {
                let x = -half + (c as f64 + 0.5) * h;
                let u = (x * cos + y * sin - s0) / tau;
                if u < 0.0 || u > (d - 1) as f64 {
                    continue;
                }
                let i0 = (u.floor() as usize).min(d.saturating_sub(2));
                let w = u - i0 as f64;
                let v = if d == 1 { filtered[0] } else { (1.0 - w) * filtered[i0] + w * filtered[i0 + 1] };
                out[r * n + c] += v;
            }
        }
    }
    let scale = PI / na as f64;
    Ok(Image::from_fn(n, |r, c| lit(out[r * n + c] * scale)))
}
