//! Binary containers for bases, sinograms, images and filter checkpoints.
//!
//! Every file has the same layout:
//!
//! | bytes      | content                                      |
//! |------------|----------------------------------------------|
//! | 0..4       | magic `DRTK`                                 |
//! | 4..8       | header length `h` as little-endian `u32`     |
//! | 8..8+h     | UTF-8 JSON header with a `kind` tag          |
//! | 8+h..      | little-endian `f32` payload                  |
//!
//! Payload order per kind:
//!
//! * `basis`: the `N²×r` matrix column-major.
//! * `sinogram`: values row-major, one row per angle.
//! * `image`: pixels row-major; physical value is `payload · scale`.
//! * `checkpoint`: `α` (r), then `Ψ` row-major (r², only if `has_covariance`),
//!   then `x^p` (N²), then flow `u` and `v` (N² each, only if `has_flow`).
//! * `coefficients`: `α` (r).
//!
//! Writers go through a temporary sibling file and a rename, so a reader never
//! observes a partially written file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FlowField, ReducedGaussianState};
use crate::image::Image;
use crate::prior::BasisProjection;
use crate::projector::{ScanGeometry, Sinogram};
use crate::scalar::{lit, Real};
use crate::smoother::SmoothedState;

pub const MAGIC: &[u8; 4] = b"DRTK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisHeader {
    pub kind: String,
    /// Grid the covariance was decomposed on.
    pub n_c: usize,
    /// Grid the columns live on.
    pub n: usize,
    pub r: usize,
    pub sigma: f64,
    pub length: f64,
    pub singular_values: Vec<f64>,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinogramHeader {
    pub kind: String,
    pub angles: Vec<f64>,
    pub detector_count: usize,
    pub detector_spacing: f64,
    pub n: usize,
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHeader {
    pub kind: String,
    pub n: usize,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    #[serde(default)]
    pub step: Option<usize>,
    /// Grey-level window `[lo, hi]` used for the 8-bit preview.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub config_hash: String,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub step: usize,
    pub r: usize,
    pub n: usize,
    pub config_hash: String,
    pub smoothed: bool,
    pub has_covariance: bool,
    pub has_flow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsHeader {
    pub kind: String,
    pub r: usize,
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub config_hash: String,
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub header: CheckpointHeader,
    pub prior_mean: DVector<T>,
    pub coefficients: DVector<T>,
    pub covariance: Option<DMatrix<T>>,
    /// Flow used to predict into this step, if any.
    pub flow: Option<FlowField<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn filtered(state: &ReducedGaussianState<T>, flow: Option<&FlowField<T>>, size: usize, config_hash: &str) -> Self {
        Self {
            header: CheckpointHeader {
                kind: "checkpoint".into(),
                step: state.step,
                r: state.rank(),
                n: size,
                config_hash: config_hash.into(),
                smoothed: false,
                has_covariance: true,
                has_flow: flow.is_some(),
            },
            prior_mean: state.prior_mean.clone(),
            coefficients: state.coefficients.clone(),
            covariance: Some(state.covariance.clone()),
            flow: flow.cloned(),
        }
    }

    pub fn smoothed(state: &SmoothedState<T>, size: usize, config_hash: &str) -> Self {
        Self {
            header: CheckpointHeader {
                kind: "checkpoint".into(),
                step: state.step,
                r: state.coefficients.len(),
                n: size,
                config_hash: config_hash.into(),
                smoothed: true,
                has_covariance: state.covariance.is_some(),
                has_flow: false,
            },
            prior_mean: state.prior_mean.clone(),
            coefficients: state.coefficients.clone(),
            covariance: state.covariance.clone(),
            flow: None,
        }
    }

    /// Filtered state; fails for smoothed or covariance-free checkpoints.
    pub fn state(&self) -> Result<ReducedGaussianState<T>> {
        if self.header.smoothed {
            return Err(Error::CheckpointMismatch(format!("step {} is a smoothed checkpoint", self.header.step)));
        }
        let covariance = self
            .covariance
            .clone()
            .ok_or_else(|| Error::CheckpointMismatch(format!("step {} has no covariance", self.header.step)))?;
        Ok(ReducedGaussianState {
            step: self.header.step,
            prior_mean: self.prior_mean.clone(),
            coefficients: self.coefficients.clone(),
            covariance,
        })
    }
}

fn to_f32<T: Real>(v: T) -> f32 {
    v.to_f32().unwrap_or(f32::NAN)
}

fn from_f32<T: Real>(v: f32) -> T {
    lit(v as f64)
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `header` and `payload` atomically.
pub fn write_container<H: Serialize>(path: &Path, header: &H, payload: &[f32]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut bytes = Vec::with_capacity(8 + json.len() + 4 * payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&len.to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a container, returning the raw JSON header and the payload.
pub fn read_raw(path: &Path) -> Result<(serde_json::Value, Vec<f32>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("{}: not a container file", path.display())));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + len).ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))?;
    let header: serde_json::Value = serde_json::from_slice(body)?;
    let rest = &bytes[8 + len..];
    if rest.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: payload is not a whole number of f32 values", path.display())));
    }
    let payload = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

/// Reads a container whose header has the given `kind`.
pub fn read_container<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f32>)> {
    let (header, payload) = read_raw(path)?;
    let found = header.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Format(format!("{}: expected a {kind} file, found '{found}'", path.display())));
    }
    Ok((serde_json::from_value(header)?, payload))
}

fn expect_len(path: &Path, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!("{}: payload has {got} values, header implies {want}", path.display())));
    }
    Ok(())
}

pub fn write_basis<T: Real>(path: &Path, basis: &BasisProjection<T>, config_hash: &str) -> Result<()> {
    let header = BasisHeader {
        kind: "basis".into(),
        n_c: basis.source_grid(),
        n: basis.target_grid(),
        r: basis.rank(),
        sigma: basis.variance().to_f64().unwrap_or(f64::NAN).sqrt(),
        length: basis.length().to_f64().unwrap_or(f64::NAN),
        singular_values: basis.singular_values().iter().map(|s| s.to_f64().unwrap_or(f64::NAN)).collect(),
        config_hash: config_hash.into(),
    };
    let payload: Vec<f32> = basis.columns().iter().map(|&v| to_f32(v)).collect();
    write_container(path, &header, &payload)
}

pub fn read_basis<T: Real>(path: &Path) -> Result<(BasisProjection<T>, BasisHeader)> {
    let (h, payload): (BasisHeader, _) = read_container(path, "basis")?;
    expect_len(path, payload.len(), h.n * h.n * h.r)?;
    let columns = DMatrix::from_iterator(h.n * h.n, h.r, payload.into_iter().map(from_f32));
    let sv = h.singular_values.iter().map(|&s| lit(s)).collect();
    let basis = BasisProjection::from_parts(columns, sv, h.n_c, h.n, lit(h.sigma * h.sigma), lit(h.length))?;
    Ok((basis, h))
}

pub fn write_sinogram<T: Real>(path: &Path, sino: &Sinogram<T>, step: Option<usize>, config_hash: &str) -> Result<()> {
    let g = sino.geometry();
    if g.pixel_size() != 1.0 {
        return Err(Error::Format("only unit pixel size sinograms can be stored".into()));
    }
    let header = SinogramHeader {
        kind: "sinogram".into(),
        angles: g.angles().to_vec(),
        detector_count: g.detector_count(),
        detector_spacing: g.detector_spacing(),
        n: g.image_size(),
        step,
        config_hash: config_hash.into(),
    };
    let payload: Vec<f32> = sino.as_vector().iter().map(|&v| to_f32(v)).collect();
    write_container(path, &header, &payload)
}

pub fn read_sinogram<T: Real>(path: &Path) -> Result<(Sinogram<T>, SinogramHeader)> {
    let (h, payload): (SinogramHeader, _) = read_container(path, "sinogram")?;
    expect_len(path, payload.len(), h.angles.len() * h.detector_count)?;
    let geom = ScanGeometry::new(h.angles.clone(), h.detector_count, h.detector_spacing, h.n)?;
    let sino = Sinogram::new(geom, DVector::from_iterator(payload.len(), payload.into_iter().map(from_f32)))?;
    Ok((sino, h))
}

/// Image header with defaults for the optional fields.
pub fn image_header(n: usize, config_hash: &str) -> ImageHeader {
    ImageHeader {
        kind: "image".into(),
        n,
        scale: 1.0,
        step: None,
        window: None,
        method: None,
        config_hash: config_hash.into(),
    }
}

pub fn write_image<T: Real>(path: &Path, image: &Image<T>, header: &ImageHeader) -> Result<()> {
    if header.n != image.size() {
        return Err(Error::DimensionMismatch(format!("header says {} but image is {}", header.n, image.size())));
    }
    let inv = 1.0 / header.scale;
    let payload: Vec<f32> = image.as_slice().iter().map(|&v| (v.to_f64().unwrap_or(f64::NAN) * inv) as f32).collect();
    write_container(path, header, &payload)
}

pub fn read_image<T: Real>(path: &Path) -> Result<(Image<T>, ImageHeader)> {
    let (h, payload): (ImageHeader, _) = read_container(path, "image")?;
    expect_len(path, payload.len(), h.n * h.n)?;
    let data = DVector::from_iterator(payload.len(), payload.into_iter().map(|v| lit(v as f64 * h.scale)));
    Ok((Image::from_vector(h.n, data)?, h))
}

pub fn write_coefficients<T: Real>(path: &Path, alpha: &DVector<T>, step: Option<usize>, config_hash: &str) -> Result<()> {
    let header = CoefficientsHeader { kind: "coefficients".into(), r: alpha.len(), step, config_hash: config_hash.into() };
    let payload: Vec<f32> = alpha.iter().map(|&v| to_f32(v)).collect();
    write_container(path, &header, &payload)
}

pub fn read_coefficients<T: Real>(path: &Path) -> Result<(DVector<T>, CoefficientsHeader)> {
    let (h, payload): (CoefficientsHeader, _) = read_container(path, "coefficients")?;
    expect_len(path, payload.len(), h.r)?;
    Ok((DVector::from_iterator(h.r, payload.into_iter().map(from_f32)), h))
}

pub fn write_checkpoint<T: Real>(path: &Path, cp: &Checkpoint<T>) -> Result<()> {
    let h = &cp.header;
    if cp.coefficients.len() != h.r || cp.prior_mean.len() != h.n * h.n {
        return Err(Error::DimensionMismatch("checkpoint vectors disagree with header".into()));
    }
    if cp.covariance.is_some() != h.has_covariance || cp.flow.is_some() != h.has_flow {
        return Err(Error::Format("checkpoint flags disagree with contents".into()));
    }
    let mut payload: Vec<f32> = cp.coefficients.iter().map(|&v| to_f32(v)).collect();
    if let Some(cov) = &cp.covariance {
        for i in 0..h.r {
            payload.extend(cov.row(i).iter().map(|&v| to_f32(v)));
        }
    }
    payload.extend(cp.prior_mean.iter().map(|&v| to_f32(v)));
    if let Some(flow) = &cp.flow {
        payload.extend(flow.u().iter().map(|&v| to_f32(v)));
        payload.extend(flow.v().iter().map(|&v| to_f32(v)));
    }
    write_container(path, h, &payload)
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let (h, payload): (CheckpointHeader, _) = read_container(path, "checkpoint")?;
    let (r, px) = (h.r, h.n * h.n);
    let want = r + if h.has_covariance { r * r } else { 0 } + px + if h.has_flow { 2 * px } else { 0 };
    expect_len(path, payload.len(), want)?;
    let mut it = payload.into_iter().map(from_f32::<T>);
    let coefficients = DVector::from_iterator(r, it.by_ref().take(r));
    let covariance = h.has_covariance.then(|| DMatrix::from_row_iterator(r, r, it.by_ref().take(r * r)));
    let prior_mean = DVector::from_iterator(px, it.by_ref().take(px));
    let flow = if h.has_flow {
        let u: Vec<T> = it.by_ref().take(px).collect();
        let v: Vec<T> = it.by_ref().take(px).collect();
        Some(FlowField::new(h.n, u, v)?)
    } else {
        None
    };
    Ok(Checkpoint { header: h, prior_mean, coefficients, covariance, flow })
}

/// 8-bit binary PGM preview with values mapped linearly from `window` to `0..=255`.
pub fn write_pgm<T: Real>(path: &Path, image: &Image<T>, window: [f64; 2]) -> Result<()> {
    let [lo, hi] = window;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = image.size();
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    bytes.extend(image.as_slice().iter().map(|&v| {
        let t = (v.to_f64().unwrap_or(0.0) - lo) / span;
        (t.clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    let tmp = temp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
