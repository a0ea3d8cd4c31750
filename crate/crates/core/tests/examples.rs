//! Worked examples for each module, checked against closed forms or dense references.

mod common;

use common::*;
use dimred_ct::filter::{
    predict, run_filter, update, FilterConfig, MotionModel, MotionPolicy, NonNegativity, PredictedState, ProcessNoise,
};
use dimred_ct::prior::{build_basis, build_basis_kronecker, interpolate_basis, truncated_factor, BasisProjection, CovarianceModel};
use dimred_ct::projector::{fbp, AngleSchedule, Projector, ScanGeometry, Sinogram};
use dimred_ct::recon::{bayes_dense, bayes_reduced, tikhonov_dense, tikhonov_reduced, GaussianObservation, TikhonovConfig, TikhonovMode};
use dimred_ct::sim::{relative_error, simulate_measurements, DynamicPhantom, NoiseSpec};
use dimred_ct::smoother::{run_smoother, SmootherMode};
use dimred_ct::Image;
use nalgebra::{DMatrix, DVector};

#[test]
fn diagonal_covariance_factor() {
    let (p, s) = truncated_factor(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 1).unwrap();
    assert_eq!(s, vec![4.0]);
    assert!((p - DMatrix::from_column_slice(2, 1, &[2.0, 0.0])).norm() < 1e-15);
}

#[test]
fn identity_covariance_gives_coordinate_vectors() {
    let (p, s) = truncated_factor(&DMatrix::<f64>::identity(5, 5), 3).unwrap();
    assert!(s.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    let mut hits = [0; 5];
    for j in 0..3 {
        let col = p.column(j);
        let i = col.iamax();
        assert!((col[i] - 1.0).abs() < 1e-14 && (col.norm() - 1.0).abs() < 1e-14);
        hits[i] += 1;
    }
    assert!(hits.iter().all(|&h| h <= 1));
}

#[test]
fn whitening_on_8x8() {
    let model = CovarianceModel::from_std(1.0, 2.0, 8).unwrap();
    let basis = build_basis(&model, 20).unwrap();
    let p = basis.columns();
    let w = p.transpose() * model.dense().cholesky().unwrap().solve(p);
    assert!((w - DMatrix::identity(20, 20)).amax() < 1e-8);
}

#[test]
fn kronecker_matches_dense_on_12x12() {
    let model = CovarianceModel::<f64>::from_std(1.0, 2.0, 12).unwrap();
    let r = 30;
    let dense = build_basis(&model, r).unwrap();
    let kron = build_basis_kronecker(&model, r).unwrap();
    for (a, b) in dense.singular_values().iter().zip(kron.singular_values()) {
        assert!((a - b).abs() <= 1e-8 * a);
    }
    // orthogonal projectors onto the two spans
    let proj = |b: &BasisProjection<f64>| {
        let p = b.columns();
        p * b.gram().clone().try_inverse().unwrap() * p.transpose()
    };
    assert!((proj(&dense) - proj(&kron)).amax() < 1e-6);
}

#[test]
fn coarse_to_fine_interpolation_shape() {
    let model = CovarianceModel::<f32>::from_std(1.0, 3.0, 100).unwrap();
    let basis = build_basis_kronecker(&model, 3000).unwrap();
    let big = interpolate_basis(&basis, 328).unwrap();
    assert_eq!(big.columns().shape(), (107584, 3000));
    assert_eq!(big.target_grid(), 328);
    assert_eq!(big.source_grid(), 100);
}

#[test]
fn disk_chords() {
    let n = 128;
    let radius = 0.3 * n as f64;
    let disk: Image<f64> = DynamicPhantom::disk(1, 0.6).render(n, 1).unwrap();
    let geom = ScanGeometry::parallel(n, vec![0.0]).unwrap();
    let sino = Projector::new(&geom).forward(&disk).unwrap();
    for t in 0..n {
        let s = geom.detector_offset(t);
        if s.abs() < 0.9 * radius {
            let chord = 2.0 * (radius * radius - s * s).sqrt();
            assert!((sino.value(0, t) - chord).abs() < 0.015 * chord, "offset {s}");
        }
    }
}

#[test]
fn reduced_operator_composes() {
    let n = 10;
    let basis = build_basis_kronecker(&CovarianceModel::from_std(1.0, 2.0, n).unwrap(), 15).unwrap();
    let geom = ScanGeometry::parallel(n, vec![5.0, 61.0, 133.0]).unwrap();
    let p = Projector::new(&geom);
    let hp = p.reduced_operator(&basis).unwrap();
    assert_eq!(hp.nrows(), geom.angles().len() * geom.detector_count());
    let alpha = gaussian_vector(&mut rng(9), 15);
    let direct = p.forward_vector(&basis.expand(&alpha)).unwrap();
    assert!(rel_vec(&(&hp * &alpha), &direct) < 1e-10);

    let mut column = DMatrix::zeros(n * n, 1);
    column[(34, 0)] = 1.0;
    let single = BasisProjection::from_parts(column.clone(), vec![1.0], n, n, 1.0, 1.0).unwrap();
    let hp1 = p.reduced_operator(&single).unwrap();
    let expected = p.forward_vector(&column.column(0).into_owned()).unwrap();
    assert_eq!(hp1.column(0).into_owned(), expected);
}

#[test]
fn fbp_examples() {
    let n = 64;
    let truth: Image<f64> = DynamicPhantom::disk(1, 0.5).render(n, 1).unwrap();
    let geom = ScanGeometry::parallel(n, (0..60).map(|j| j as f64 * 3.0).collect()).unwrap();
    let recon = fbp(&Projector::new(&geom).forward(&truth).unwrap()).unwrap();
    assert!(relative_error(&recon, &truth).unwrap() < 0.35);

    assert_eq!(fbp(&Sinogram::<f64>::zeros(geom.clone())).unwrap().norm(), 0.0);
    let sparse = geom.with_angles(vec![0.0, 45.0, 90.0, 135.0]).unwrap();
    let streaky = fbp(&Projector::new(&sparse).forward(&truth).unwrap()).unwrap();
    assert!(streaky.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn tikhonov_examples() {
    let n = 8;
    let model = CovarianceModel::from_std(1.0, 1.0, n).unwrap();
    let basis = build_basis(&model, n * n).unwrap();
    let geom = ScanGeometry::parallel(n, (0..10).map(|j| j as f64 * 18.0).collect()).unwrap();
    let truth = Image::from_fn(n, |r, c| ((r * 3 + c) as f64 * 0.25).sin().abs());
    let sino = Projector::new(&geom).forward(&truth).unwrap();
    let gamma = 0.5;
    let reduced = tikhonov_reduced(&sino, &basis, &TikhonovConfig::new(gamma, TikhonovMode::Whitened).unwrap()).unwrap();
    let dense = tikhonov_dense(&sino, &(DMatrix::identity(n * n, n * n) * gamma)).unwrap();
    assert!(relative_error(&reduced.image, &dense).unwrap() < 1e-6);
}

#[test]
fn tikhonov_on_interpolated_basis_runs() {
    let coarse = build_basis_kronecker(&CovarianceModel::from_std(1.0, 3.0, 100).unwrap(), 100).unwrap();
    let basis = interpolate_basis(&coarse, 328).unwrap();
    let geom = ScanGeometry::parallel(328, (0..20).map(|j| j as f64 * 9.0).collect()).unwrap();
    let truth: Image<f64> = DynamicPhantom::disk(1, 0.7).render(328, 1).unwrap();
    let sino = Projector::new(&geom).forward(&truth).unwrap();
    let est = tikhonov_reduced(&sino, &basis, &TikhonovConfig::new(10.0, TikhonovMode::Whitened).unwrap()).unwrap();
    assert!(est.image.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn bayes_full_rank_8x8() {
    let n = 8;
    let model = CovarianceModel::from_std(1.0, 1.5, n).unwrap();
    let basis = build_basis(&model, n * n).unwrap();
    let geom = ScanGeometry::parallel(n, vec![0.0, 30.0, 60.0, 90.0, 120.0]).unwrap();
    let truth = Image::from_fn(n, |r, c| if (r as i32 - 4).pow(2) + (c as i32 - 3).pow(2) < 6 { 1.0 } else { 0.0 });
    let sino = Projector::new(&geom).forward(&truth).unwrap();
    let reduced = bayes_reduced(&sino, &basis, &GaussianObservation::new(0.01).unwrap()).unwrap();
    let m = geom.measurements();
    let (dense, _) = bayes_dense(&sino, &model.dense(), &Image::zeros(n), &(DMatrix::identity(m, m) * 0.01)).unwrap();
    assert!(relative_error(&reduced.image, &dense).unwrap() < 1e-6);
}

#[test]
fn dense_solver_limits() {
    // a single pixel seen by one centered ray: H = [1]
    let geom = ScanGeometry::parallel(1, vec![0.0]).unwrap();
    let sino = Sinogram::new(geom, DVector::from_element(1, 2.5)).unwrap();
    assert!((tikhonov_dense(&sino, &DMatrix::<f64>::zeros(1, 1)).unwrap().get(0, 0) - 2.5).abs() < 1e-14);

    // near-flat prior approaches the unregularized least-squares solution
    let geom = ScanGeometry::parallel(2, vec![0.0, 45.0, 90.0, 135.0]).unwrap();
    let truth = Image::from_fn(2, |r, c| (1 + r * 2 + c) as f64);
    let sino = Projector::new(&geom).forward(&truth).unwrap();
    let ls = tikhonov_dense(&sino, &DMatrix::zeros(4, 4)).unwrap();
    let m = geom.measurements();
    let (flat, _) = bayes_dense(&sino, &(DMatrix::identity(4, 4) * 1e8), &Image::zeros(2), &DMatrix::identity(m, m)).unwrap();
    assert!(relative_error(&flat, &ls).unwrap() < 1e-3);
    assert!(relative_error(&ls, &truth).unwrap() < 1e-10);
}

#[test]
fn bayes_equals_tikhonov_with_prior_square_root() {
    let n = 6;
    let sigma = CovarianceModel::from_std(1.0, 1.0, n).unwrap().dense();
    let geom = ScanGeometry::parallel(n, vec![0.0, 50.0, 100.0]).unwrap();
    let y = gaussian_vector(&mut rng(11), geom.measurements());
    let sino = Sinogram::new(geom.clone(), y).unwrap();
    let precision = sigma.clone().cholesky().unwrap().inverse();
    let gamma = precision.cholesky().unwrap().l().transpose();
    let m = geom.measurements();
    let (bayes, _) = bayes_dense(&sino, &sigma, &Image::zeros(n), &DMatrix::identity(m, m)).unwrap();
    let tik = tikhonov_dense(&sino, &gamma).unwrap();
    assert!(relative_error(&bayes, &tik).unwrap() < 1e-8);
}

fn small_problem(n: usize, r: usize) -> (BasisProjection<f64>, Vec<Sinogram<f64>>, Vec<Image<f64>>) {
    let basis = build_basis_kronecker(&CovarianceModel::from_std(0.5, 2.0, n).unwrap(), r).unwrap();
    let phantom = DynamicPhantom::sustained_translation(14);
    let sched = AngleSchedule::new(10, 3.0, 14).unwrap();
    let geom = ScanGeometry::parallel(n, vec![0.0]).unwrap();
    let sinos = simulate_measurements(&phantom, &sched, &geom, &NoiseSpec::new(0.01, 3).unwrap(), 2).unwrap();
    let truths = (1..=14).map(|k| phantom.render(n, k).unwrap()).collect();
    (basis, sinos, truths)
}

#[test]
fn zero_innovation_keeps_prior_mean() {
    let n = 8;
    let basis = build_basis_kronecker(&CovarianceModel::from_std(1.0, 2.0, n).unwrap(), 20).unwrap();
    let xp = DVector::from_fn(n * n, |i, _| (i as f64 * 0.1).cos());
    let geom = ScanGeometry::parallel(n, vec![10.0, 80.0]).unwrap();
    let sino = Sinogram::new(geom.clone(), Projector::new(&geom).forward_vector(&xp).unwrap()).unwrap();
    let state = update(&PredictedState::initial(xp.clone()), &sino, &basis, &GaussianObservation::new(0.1).unwrap()).unwrap();
    assert!(state.coefficients.amax() < 1e-12);
    assert!(rel_vec(&state.mean(&basis), &xp) < 1e-14);
}

#[test]
fn single_step_filter_is_static_bayes() {
    let (basis, sinos, _) = small_problem(16, 40);
    let mu = Image::from_fn(16, |r, _| 0.01 * r as f64);
    let obs = GaussianObservation::new(0.05).unwrap().with_prior_mean(mu);
    let mut cfg = FilterConfig::new(obs.clone(), ProcessNoise::new(0.01).unwrap());
    cfg.nonnegativity = NonNegativity::Off;
    let run = run_filter(&sinos[..1], &basis, &cfg).unwrap();
    let stat = bayes_reduced(&sinos[0], &basis, &obs).unwrap();
    assert!(rel_vec(&run[0].state.coefficients, &stat.coefficients) < 1e-12);
    assert!(relative_error(&run[0].image, &stat.image).unwrap() < 1e-12);
}

#[test]
fn flow_policy_starts_after_configured_step() {
    let (basis, sinos, _) = small_problem(32, 120);
    let mut cfg = FilterConfig::new(GaussianObservation::new(1e-2).unwrap(), ProcessNoise::new(1e-3).unwrap());
    cfg.motion = MotionPolicy::Flow { start_step: 10 };
    let run = run_filter(&sinos, &basis, &cfg).unwrap();
    for s in &run[..10] {
        assert!(s.transition.as_ref().is_none_or(|t| t.motion.is_identity()));
    }
    assert!(run[10..].iter().any(|s| !s.transition.as_ref().unwrap().motion.is_identity()));
}

#[test]
fn smoother_trivial_cases() {
    let (basis, sinos, _) = small_problem(16, 40);
    let cfg = FilterConfig::new(GaussianObservation::new(1e-2).unwrap(), ProcessNoise::new(1e-3).unwrap());
    let run = run_filter(&sinos[..4], &basis, &cfg).unwrap();
    let smoothed = run_smoother(&run, &basis, SmootherMode::MeanOnly).unwrap();
    assert_eq!(smoothed[3].coefficients, run[3].state.coefficients);
    assert!(smoothed[0].covariance.is_none());

    let single = run_smoother(&run[..1], &basis, SmootherMode::WithCovariance).unwrap();
    assert_eq!(single[0].coefficients, run[0].state.coefficients);
    assert_eq!(single[0].covariance.as_ref(), Some(&run[0].state.covariance));

    // data that agree exactly with every prediction leave nothing to correct
    let geom = ScanGeometry::parallel(16, vec![0.0, 90.0]).unwrap();
    let obs = GaussianObservation::new(0.1).unwrap();
    let noise = ProcessNoise::new(0.01).unwrap();
    let zero = Sinogram::zeros(geom);
    let mut steps = Vec::new();
    for k in 0..4 {
        let pred = match k {
            0 => PredictedState::initial(DVector::zeros(256)),
            _ => predict(&steps.last().map(|s: &dimred_ct::filter::FilterStep<f64>| s.state.clone()).unwrap(), MotionModel::Identity, &basis, &noise).unwrap(),
        };
        let state = update(&pred, &zero, &basis, &obs).unwrap();
        let image = state.mean_image(&basis);
        steps.push(dimred_ct::filter::FilterStep { state, image, transition: pred.into_transition(), flow_rejected: false });
    }
    let smoothed = run_smoother(&steps, &basis, SmootherMode::MeanOnly).unwrap();
    for (s, f) in smoothed.iter().zip(&steps) {
        assert_eq!(s.coefficients, f.state.coefficients);
    }
}

#[test]
fn filter_at_128_with_rank_1000_runs() {
    let n = 128;
    let sigma: f64 = 0.1;
    let basis = build_basis_kronecker(&CovarianceModel::from_std(sigma, 1.5, n).unwrap(), 1000).unwrap();
    let phantom = DynamicPhantom::default_scene(3);
    let sched = AngleSchedule::new(4, 3.0, 3).unwrap();
    let geom = ScanGeometry::parallel(n, vec![0.0]).unwrap();
    let sinos = simulate_measurements(&phantom, &sched, &geom, &NoiseSpec::new(0.01, 8).unwrap(), 1).unwrap();
    let cfg = FilterConfig::new(GaussianObservation::new(sigma * sigma).unwrap(), ProcessNoise::new(sigma * sigma).unwrap());
    let run = run_filter(&sinos, &basis, &cfg).unwrap();
    for s in &run {
        assert!(s.state.coefficients.iter().chain(s.state.covariance.iter()).all(|v| v.is_finite()));
    }
}

#[test]
fn simulation_examples() {
    let n = 16;
    let phantom = DynamicPhantom::default_scene(3);
    let sched = AngleSchedule::new(3, 5.0, 3).unwrap();
    let geom = ScanGeometry::parallel(n, vec![0.0]).unwrap();
    let exact = simulate_measurements::<f64>(&phantom, &sched, &geom, &NoiseSpec::new(0.0, 0).unwrap(), 1).unwrap();
    for (k, s) in exact.iter().enumerate() {
        let direct = Projector::new(s.geometry()).forward(&phantom.render(n, k + 1).unwrap()).unwrap();
        assert_eq!(s.as_vector(), direct.as_vector());
    }
    let noisy = NoiseSpec::new(0.01, 99).unwrap();
    let a = simulate_measurements::<f32>(&phantom, &sched, &geom, &noisy, 2).unwrap();
    let b = simulate_measurements::<f32>(&phantom, &sched, &geom, &noisy, 2).unwrap();
    assert_eq!(a, b);

    let scene = DynamicPhantom::default_scene(1);
    let angles = AngleSchedule::new(60, 0.0, 1).unwrap();
    let sinos = simulate_measurements::<f32>(&scene, &angles, &ScanGeometry::parallel(128, vec![0.0]).unwrap(), &noisy, 4).unwrap();
    assert_eq!(sinos[0].as_vector().len(), 60 * 128);
    assert_eq!(sinos[0].geometry().image_size(), 128);
}
