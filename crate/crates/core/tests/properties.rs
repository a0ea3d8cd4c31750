use dimred_ct::filter::{predict, update, FlowField, MotionModel, PredictedState, ProcessNoise, WarpOperator};
use dimred_ct::io::{image_header, read_image, write_image};
use dimred_ct::linalg::{min_eigenvalue, smw_apply};
use dimred_ct::prior::{build_basis_kronecker, CovarianceModel};
use dimred_ct::projector::{AngleSchedule, Projector, ScanGeometry};
use dimred_ct::recon::GaussianObservation;
use dimred_ct::sim::relative_error;
use dimred_ct::Image;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projector_adjoint_identity(
        angles in prop::collection::vec(0.0f64..180.0, 1..6),
        x in vec_strategy(100),
        seed in vec_strategy(1),
    ) {
        let geom = ScanGeometry::parallel(10, angles).unwrap();
        let p = Projector::new(&geom);
        let xv = DVector::from_vec(x);
        let y = DVector::from_fn(geom.measurements(), |i, _| ((i as f64) * 0.37 + seed[0]).sin());
        let lhs = p.forward_vector(&xv).unwrap().dot(&y);
        let rhs = xv.dot(&p.adjoint_vector(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn projection_of_nonnegative_image_is_nonnegative(x in prop::collection::vec(0.0f64..1.0, 64), a in 0.0f64..180.0) {
        let geom = ScanGeometry::parallel(8, vec![a]).unwrap();
        let y = Projector::new(&geom).forward_vector(&DVector::from_vec(x)).unwrap();
        prop_assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn schedule_angles_stay_in_range(a in 1usize..12, delta in 0.0f64..50.0, k in 1usize..200) {
        let s = AngleSchedule::new(a, delta, 200).unwrap();
        let angles = s.angles(k);
        prop_assert_eq!(angles.len(), a);
        prop_assert!(angles.iter().all(|&t| (0.0..180.0).contains(&t)));
    }

    #[test]
    fn smw_result_is_symmetric_inverse(b in vec_strategy(24), q2 in 0.05f64..3.0) {
        let b = DMatrix::from_vec(8, 3, b);
        let inv = smw_apply(&b, q2, &DMatrix::identity(8, 8)).unwrap();
        let c = &b * b.transpose() + DMatrix::identity(8, 8) * q2;
        prop_assert!((&c * &inv - DMatrix::identity(8, 8)).norm() < 1e-10);
        prop_assert!((&inv - inv.transpose()).norm() < 1e-10);
    }

    #[test]
    fn relative_error_is_scale_invariant(x in prop::collection::vec(0.1f64..1.0, 16), y in vec_strategy(16), s in 0.1f64..10.0) {
        let t = Image::from_vector(4, DVector::from_vec(x)).unwrap();
        let r = Image::from_vector(4, DVector::from_vec(y)).unwrap();
        let e1 = relative_error(&r, &t).unwrap();
        let e2 = relative_error(&r.map(|v| v * s), &t.map(|v| v * s)).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12 * e1.max(1.0));
    }

    #[test]
    fn integer_flow_shifts_interior(dx in -2i32..=2, dy in -2i32..=2, x in vec_strategy(81)) {
        let n = 9;
        let field = FlowField::uniform(n, dx as f64, dy as f64);
        let warped = WarpOperator::new(&field).apply(&DVector::from_vec(x.clone()));
        for r in 2..n - 2 {
            for c in 2..n - 2 {
                let src = ((r as i32 - dy) as usize) * n + (c as i32 - dx) as usize;
                prop_assert!((warped[r * n + c] - x[src]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn image_container_round_trip(x in prop::collection::vec(-1e3f32..1e3, 36), step in 1usize..100) {
        let img = Image::from_vector(6, DVector::from_vec(x)).unwrap();
        let dir = std::env::temp_dir().join(format!("dimred-prop-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("img{step}.drtk"));
        let mut h = image_header(6, "cafe");
        h.step = Some(step);
        write_image(&path, &img, &h).unwrap();
        let (back, hb) = read_image::<f32>(&path).unwrap();
        prop_assert_eq!(back.as_slice(), img.as_slice());
        prop_assert_eq!(hb, h);
    }
}

/// Columns of the basis are orthogonal with squared norms equal to the singular values.
#[test]
fn basis_gram_is_singular_value_diagonal() {
    let basis = build_basis_kronecker(&CovarianceModel::from_std(1.0, 2.0, 16).unwrap(), 40).unwrap();
    let expected = DMatrix::from_diagonal(&DVector::from_vec(basis.singular_values().to_vec()));
    assert!((basis.gram() - &expected).norm() < 1e-10 * expected.norm());
}

/// With identity motion, vanishing model error and fixed angles, the posterior
/// uncertainty never grows.
#[test]
fn information_is_monotone_without_model_error() {
    let n = 12;
    let basis = build_basis_kronecker(&CovarianceModel::from_std(1.0, 2.0, n).unwrap(), 30).unwrap();
    let geom = ScanGeometry::parallel(n, vec![0.0, 60.0, 120.0]).unwrap();
    let sino = Projector::new(&geom).forward(&Image::from_fn(n, |r, c| ((r + c) as f64 * 0.2).sin())).unwrap();
    let obs = GaussianObservation::new(0.1).unwrap();
    let noise = ProcessNoise::new(1e-9).unwrap();
    let mut state = update(&PredictedState::initial(DVector::zeros(n * n)), &sino, &basis, &obs).unwrap();
    assert!(min_eigenvalue(&(DMatrix::identity(30, 30) - &state.covariance)) > -1e-12);
    let mut trace = state.covariance.trace();
    for _ in 0..6 {
        let pred = predict(&state, MotionModel::Identity, &basis, &noise).unwrap();
        state = update(&pred, &sino, &basis, &obs).unwrap();
        let t = state.covariance.trace();
        assert!(t <= trace * (1.0 + 1e-9), "trace grew from {trace} to {t}");
        trace = t;
    }
}
