use std::fs;
use std::path::{Path, PathBuf};

use dimred_ct::filter::{DimReducedKalman, FilterConfig, MotionModel, NonNegativity, ProcessNoise, Transition};
use dimred_ct::io::{
    image_header, read_basis, read_checkpoint, read_image, read_raw, read_sinogram, write_basis,
    write_checkpoint, write_coefficients, write_image, write_pgm, write_sinogram, Checkpoint, ImageHeader,
};
use dimred_ct::prior::{build_basis, build_basis_kronecker, interpolate_basis, CovarianceModel};
use dimred_ct::projector::{fbp, Sinogram};
use dimred_ct::recon::{bayes_reduced, tikhonov_reduced, GaussianObservation, TikhonovConfig};
use dimred_ct::sim::{add_noise, clean_measurement, relative_error, DynamicPhantom, NoiseSpec};
use dimred_ct::smoother::{backward_step, SmoothedState, SmootherMode};
use dimred_ct::{Basis64, Image64, State64};
use serde::Serialize;

use crate::config::{BasisMethod, ExperimentConfig, SolverConfig};
use crate::error::{io_at, CliError, Result};

pub const CONFIG_ECHO: &str = "config.json";

fn scoped_hash(value: &impl Serialize) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(serde_json::to_vec(value).expect("serializable"));
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Identifies the basis: prior parameters and image size.
pub fn basis_hash(c: &ExperimentConfig) -> String {
    scoped_hash(&(&c.prior, c.geometry.size))
}

/// Identifies a filter run; smoother and output settings are left out so
/// they can change between the forward and backward passes.
pub fn run_hash(c: &ExperimentConfig) -> String {
    scoped_hash(&(&c.prior, &c.geometry, &c.noise, &c.filter, &c.simulation))
}

/// Identifies simulated data: acquisition, scene and noise realization.
pub fn data_hash(c: &ExperimentConfig) -> String {
    scoped_hash(&(&c.geometry, &c.simulation, c.noise.level, c.noise.seed))
}

fn write_atomic(path: &Path, text: String) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    io_at(&tmp, fs::write(&tmp, text))?;
    io_at(path, fs::rename(&tmp, path))
}

fn prepare_dir(dir: &Path, c: &ExperimentConfig) -> Result<()> {
    io_at(dir, fs::create_dir_all(dir))?;
    write_atomic(&dir.join(CONFIG_ECHO), c.to_json())
}

fn require_seed(c: &ExperimentConfig) -> Result<u64> {
    c.noise.seed.ok_or_else(|| CliError::config("--seed is required when simulating measurements"))
}

pub fn build_basis_from(c: &ExperimentConfig) -> Result<Basis64> {
    let n_c = c.covariance_grid();
    let model = CovarianceModel::from_std(c.prior.sigma, c.prior.length, n_c)?;
    let basis = match c.prior.method {
        BasisMethod::Kronecker => build_basis_kronecker(&model, c.prior.rank)?,
        BasisMethod::Dense => build_basis(&model, c.prior.rank)?,
    };
    if n_c == c.geometry.size {
        Ok(basis)
    } else {
        Ok(interpolate_basis(&basis, c.geometry.size)?)
    }
}

/// Reads `path` when given (checking it belongs to this configuration), otherwise builds the basis.
fn load_basis(c: &ExperimentConfig, path: Option<&Path>) -> Result<Basis64> {
    let Some(path) = path else {
        log::info!("building rank-{} basis on a {}x{} grid", c.prior.rank, c.covariance_grid(), c.covariance_grid());
        return build_basis_from(c);
    };
    let (basis, header) = read_basis::<f64>(path)?;
    if !header.config_hash.is_empty() && header.config_hash != basis_hash(c) {
        return Err(CliError::config(format!(
            "{}: basis was built for a different prior configuration (hash {} vs {})",
            path.display(),
            header.config_hash,
            basis_hash(c)
        )));
    }
    if basis.target_grid() != c.geometry.size || basis.rank() != c.prior.rank {
        return Err(CliError::config(format!(
            "{}: basis is rank {} on {}x{}, configuration asks for rank {} on {}x{}",
            path.display(),
            basis.rank(),
            basis.target_grid(),
            basis.target_grid(),
            c.prior.rank,
            c.geometry.size,
            c.geometry.size
        )));
    }
    Ok(basis)
}

pub fn cmd_basis(c: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    let hash = basis_hash(c);
    if !force && out.exists() {
        if let Ok((header, _)) = read_raw(out) {
            if header.get("config_hash").and_then(|h| h.as_str()) == Some(hash.as_str()) {
                log::info!("{} is up to date", out.display());
                return Ok(());
            }
        }
    }
    let basis = build_basis_from(c)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io_at(dir, fs::create_dir_all(dir))?;
    }
    write_basis(out, &basis, &hash)?;
    let s = basis.singular_values();
    log::info!("wrote {} (rank {}, s_1 = {:.4e}, s_r = {:.4e})", out.display(), basis.rank(), s[0], s[s.len() - 1]);
    Ok(())
}

fn load_phantom(c: &ExperimentConfig) -> Result<DynamicPhantom> {
    let steps = c.geometry.steps;
    let phantom = match (&c.simulation.scene, c.simulation.builtin.as_str()) {
        (Some(path), _) => {
            let p = Path::new(path);
            DynamicPhantom::from_json(&io_at(p, fs::read_to_string(p))?)?
        }
        (None, "default") => DynamicPhantom::default_scene(steps.max(100)),
        (None, "translation") => DynamicPhantom::sustained_translation(steps),
        (None, other) => return Err(CliError::config(format!("unknown built-in scene '{other}'"))),
    };
    if phantom.steps < steps {
        return Err(CliError::config(format!("scene has {} steps, geometry asks for {steps}", phantom.steps)));
    }
    Ok(phantom)
}

fn simulate_all(c: &ExperimentConfig, seed: u64) -> Result<(Vec<Sinogram<f64>>, DynamicPhantom)> {
    let phantom = load_phantom(c)?;
    let base = c.base_geometry()?;
    let noise = NoiseSpec::new(c.noise.level, seed)?;
    let sinos = (1..=c.geometry.steps)
        .map(|k| {
            let geom = base.with_angles(c.angles(k)?)?;
            let clean = clean_measurement::<f64>(&phantom, &geom, c.simulation.oversample, k)?;
            Ok(Sinogram::new(geom, add_noise(clean, &noise, k))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sinos, phantom))
}

fn frame_header(c: &ExperimentConfig, step: usize, method: &str, hash: &str) -> ImageHeader {
    let mut h = image_header(c.geometry.size, hash);
    h.step = Some(step);
    h.window = Some(c.output.window);
    h.method = Some(method.into());
    h
}

fn write_frame(c: &ExperimentConfig, dir: &Path, stem: &str, image: &Image64, header: &ImageHeader) -> Result<()> {
    write_image(&dir.join(format!("{stem}.drtk")), image, header)?;
    if c.output.previews {
        write_pgm(&dir.join(format!("{stem}.pgm")), image, c.output.window)?;
    }
    Ok(())
}

pub fn cmd_simulate(c: &ExperimentConfig, out: &Path) -> Result<()> {
    let seed = require_seed(c)?;
    prepare_dir(out, c)?;
    let hash = data_hash(c);
    let (sinos, phantom) = simulate_all(c, seed)?;
    for (i, sino) in sinos.iter().enumerate() {
        let k = i + 1;
        write_sinogram(&out.join(format!("sino_{k:04}.drtk")), sino, Some(k), &hash)?;
        let truth = phantom.render::<f64>(c.geometry.size, k)?;
        write_frame(c, out, &format!("truth_{k:04}"), &truth, &frame_header(c, k, "truth", &hash))?;
    }
    log::info!("wrote {} steps to {}", sinos.len(), out.display());
    Ok(())
}

fn observation(c: &ExperimentConfig) -> Result<GaussianObservation<f64>> {
    Ok(GaussianObservation::new(c.noise.observation_variance)?)
}

pub fn cmd_static(c: &ExperimentConfig, sinogram: &Path, basis: Option<&Path>, out: &Path) -> Result<()> {
    let (sino, header) = read_sinogram::<f64>(sinogram)?;
    if sino.geometry().image_size() != c.geometry.size {
        return Err(CliError::config(format!(
            "sinogram is for a {0}x{0} image, configuration says {1}",
            sino.geometry().image_size(),
            c.geometry.size
        )));
    }
    let basis = load_basis(c, basis)?;
    let (estimate, method) = match c.solver {
        SolverConfig::Tikhonov { gamma, mode } => (tikhonov_reduced(&sino, &basis, &TikhonovConfig::new(gamma, mode)?)?, "static-tikhonov"),
        SolverConfig::Bayes => (bayes_reduced(&sino, &basis, &observation(c)?)?, "static-bayes"),
    };
    prepare_dir(out, c)?;
    let hash = c.hash();
    let step = header.step.unwrap_or(1);
    write_frame(c, out, &format!("frame_{step:04}"), &estimate.image, &frame_header(c, step, method, &hash))?;
    write_coefficients(&out.join(format!("coefficients_{step:04}.drtk")), &estimate.coefficients, Some(step), &hash)?;
    log::info!("{method} reconstruction written to {}", out.display());
    Ok(())
}

pub fn cmd_fbp(c: &ExperimentConfig, sinogram: &Path, out: &Path) -> Result<()> {
    let (sino, header) = read_sinogram::<f64>(sinogram)?;
    let image = fbp(&sino)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io_at(dir, fs::create_dir_all(dir))?;
    }
    let mut h = image_header(image.size(), &header.config_hash);
    h.step = header.step;
    h.window = Some(c.output.window);
    h.method = Some("fbp".into());
    write_image(out, &image, &h)?;
    if c.output.previews {
        write_pgm(&out.with_extension("pgm"), &image, c.output.window)?;
    }
    Ok(())
}

/// Container files in `dir` whose name starts with `prefix`, sorted by name.
fn listing(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = io_at(dir, fs::read_dir(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(prefix) && name.ends_with(".drtk")
        })
        .collect();
    files.sort();
    Ok(files)
}

fn read_sinograms(dir: &Path, c: &ExperimentConfig) -> Result<Vec<Sinogram<f64>>> {
    let files = listing(dir, "sino_")?;
    if files.is_empty() {
        return Err(CliError::config(format!("no sino_*.drtk files in {}", dir.display())));
    }
    let mut hashes = std::collections::BTreeSet::new();
    let mut sinos = Vec::with_capacity(files.len());
    for f in &files {
        let (sino, h) = read_sinogram::<f64>(f)?;
        if sino.geometry().image_size() != c.geometry.size {
            return Err(CliError::config(format!("{}: image size differs from the configuration", f.display())));
        }
        if !h.config_hash.is_empty() {
            hashes.insert(h.config_hash);
        }
        sinos.push(sino);
    }
    if hashes.len() > 1 {
        return Err(CliError::config(format!("{} mixes sinograms from {} different runs", dir.display(), hashes.len())));
    }
    Ok(sinos)
}

fn filter_config(c: &ExperimentConfig) -> Result<FilterConfig<f64>> {
    let mut f = FilterConfig::new(observation(c)?, ProcessNoise::new(c.noise.process_variance)?);
    f.motion = c.filter.motion;
    f.flow = c.filter.flow;
    f.gate = c.filter.gate;
    f.nonnegativity = c.filter.nonnegativity;
    Ok(f)
}

fn read_run(dir: &Path, prefix: &str, hash: &str) -> Result<Vec<Checkpoint<f64>>> {
    let mut out = Vec::new();
    for f in listing(dir, prefix)? {
        let cp = read_checkpoint::<f64>(&f)?;
        if cp.header.config_hash != hash {
            return Err(dimred_ct::Error::CheckpointMismatch(format!(
                "{} has configuration hash {}, expected {hash}",
                f.display(),
                cp.header.config_hash
            ))
            .into());
        }
        if out.last().is_some_and(|p: &Checkpoint<f64>| p.header.step + 1 != cp.header.step) {
            return Err(dimred_ct::Error::CheckpointMismatch(format!("{}: steps are not consecutive", f.display())).into());
        }
        out.push(cp);
    }
    Ok(out)
}

#[derive(Serialize, serde::Deserialize)]
struct IndexEntry {
    step: usize,
    frame: String,
    checkpoint: String,
    flow_rejected: bool,
}

const INDEX: &str = "index.json";

pub struct FilterArgs<'a> {
    pub sinograms: Option<&'a Path>,
    pub simulate: bool,
    pub basis: Option<&'a Path>,
    pub out: &'a Path,
    pub resume: bool,
}

pub fn cmd_filter(c: &ExperimentConfig, a: FilterArgs) -> Result<()> {
    let sinos = match (a.sinograms, a.simulate) {
        (Some(dir), false) => read_sinograms(dir, c)?,
        (None, true) => simulate_all(c, require_seed(c)?)?.0,
        _ => return Err(CliError::config("give exactly one of --sinograms <dir> or --simulate")),
    };
    let hash = run_hash(c);
    let basis = load_basis(c, a.basis)?;
    let config = filter_config(c)?;

    let history = if a.resume && a.out.exists() {
        read_run(a.out, "checkpoint_", &hash)?.iter().map(Checkpoint::state).collect::<dimred_ct::Result<Vec<State64>>>()?
    } else {
        Vec::new()
    };
    let done = history.last().map_or(0, |s| s.step);
    let index_path = a.out.join(INDEX);
    let mut index: Vec<IndexEntry> = if done > 0 {
        log::info!("resuming after step {done}");
        fs::read_to_string(&index_path).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
    } else {
        Vec::new()
    };
    index.retain(|e| e.step <= done);
    prepare_dir(a.out, c)?;

    let mut kf = DimReducedKalman::resume(&basis, config, &history)?;
    for (i, sino) in sinos.iter().enumerate().skip(done) {
        let k = i + 1;
        let step = kf.step(sino)?;
        let flow = step.transition.as_ref().and_then(|t| t.motion.field());
        let checkpoint = format!("checkpoint_{k:04}.drtk");
        write_checkpoint(&a.out.join(&checkpoint), &Checkpoint::filtered(&step.state, flow, c.geometry.size, &hash))?;
        write_frame(c, a.out, &format!("frame_{k:04}"), &step.image, &frame_header(c, k, "filter", &hash))?;
        index.push(IndexEntry { step: k, frame: format!("frame_{k:04}.drtk"), checkpoint, flow_rejected: step.flow_rejected });
        write_atomic(&index_path, serde_json::to_string_pretty(&index).expect("index serializes"))?;
        log::info!("step {k}/{} done", sinos.len());
    }
    Ok(())
}

pub fn cmd_smooth(c: &ExperimentConfig, checkpoints: &Path, basis: Option<&Path>, out: &Path) -> Result<()> {
    let hash = run_hash(c);
    let run = read_run(checkpoints, "checkpoint_", &hash)?;
    if run.is_empty() {
        return Err(CliError::config(format!("no checkpoints in {}", checkpoints.display())));
    }
    let basis = load_basis(c, basis)?;
    let mode = if c.smoother.covariance { SmootherMode::WithCovariance } else { SmootherMode::MeanOnly };
    let noise = ProcessNoise::new(c.noise.process_variance)?;
    let states = run.iter().map(Checkpoint::state).collect::<dimred_ct::Result<Vec<_>>>()?;

    let mut smoothed = vec![SmoothedState::terminal(states.last().unwrap(), mode)];
    for k in (1..states.len()).rev() {
        let motion = match &run[k].flow {
            Some(field) => dimred_ct::filter::flow_model(field.clone()),
            None => MotionModel::Identity,
        };
        let transition = Transition::rebuild(states[k].step, motion, &states[k - 1].covariance, &basis, &noise)?;
        let prev = backward_step(&states[k - 1], &transition, smoothed.last().unwrap(), &basis, mode)
            .map_err(|e| e.at_step(states[k - 1].step))?;
        smoothed.push(prev);
    }
    smoothed.reverse();

    prepare_dir(out, c)?;
    let clamp = c.filter.nonnegativity != NonNegativity::Off;
    for s in &smoothed {
        let k = s.step;
        write_checkpoint(&out.join(format!("smoothed_{k:04}.drtk")), &Checkpoint::smoothed(s, c.geometry.size, &hash))?;
        let mut image = s.mean_image(&basis);
        if clamp {
            image = image.map(|v| v.max(0.0));
        }
        write_frame(c, out, &format!("frame_{k:04}"), &image, &frame_header(c, k, "smoother", &hash))?;
    }
    log::info!("smoothed {} steps into {}", smoothed.len(), out.display());
    Ok(())
}

/// Image containers in `dir` keyed by step.
fn read_frames(dir: &Path) -> Result<Vec<(usize, Image64, ImageHeader)>> {
    let mut frames = Vec::new();
    for f in listing(dir, "")? {
        let (header, _) = read_raw(&f)?;
        if header.get("kind").and_then(|k| k.as_str()) != Some("image") {
            continue;
        }
        let (image, h) = read_image::<f64>(&f)?;
        let step = h.step.unwrap_or(1);
        frames.push((step, image, h));
    }
    frames.sort_by_key(|f| f.0);
    Ok(frames)
}

pub fn cmd_metrics(frames: &[PathBuf], truth: &Path, method: Option<&str>) -> Result<String> {
    let truths = read_frames(truth)?;
    if truths.is_empty() {
        return Err(CliError::config(format!("no truth images in {}", truth.display())));
    }
    let mut csv = String::from("step,method,rel_error\n");
    for dir in frames {
        let recon = read_frames(dir)?;
        let hashes: std::collections::BTreeSet<&str> = recon.iter().map(|f| f.2.config_hash.as_str()).collect();
        if hashes.len() > 1 {
            return Err(CliError::config(format!("{} mixes frames from different runs", dir.display())));
        }
        for (step, image, h) in &recon {
            let Some((_, t, _)) = truths.iter().find(|t| t.0 == *step) else {
                return Err(CliError::config(format!("no truth frame for step {step} in {}", truth.display())));
            };
            let err = relative_error(image, t).map_err(|e| e.at_step(*step))?;
            let name = method.or(h.method.as_deref()).unwrap_or("unknown");
            csv.push_str(&format!("{step},{name},{err}\n"));
        }
    }
    Ok(csv)
}
