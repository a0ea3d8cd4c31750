//! Dense full-space references and random instances shared by the integration tests.
#![allow(dead_code)]

use dimred_ct::filter::{
    flow_model, predict, update, FilterStep, FlowField, MotionModel, PredictedState, ProcessNoise,
    ReducedGaussianState,
};
use dimred_ct::prior::{build_basis, BasisProjection, CovarianceModel};
use dimred_ct::projector::{Projector, ScanGeometry, Sinogram};
use dimred_ct::recon::GaussianObservation;
use dimred_ct::Image;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Dense filter output for one step.
pub struct DenseStep {
    pub pred_mean: DVector<f64>,
    pub pred_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn spd_inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("SPD").inverse()
}

/// Textbook Kalman filter on the full pixel grid.
///
/// `motions[k]` maps step `k` to `k + 1` (index 0 is the first transition).
pub fn dense_kalman(
    sinos: &[Sinogram<f64>],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    motions: &[DMatrix<f64>],
    obs_var: f64,
    q2: f64,
) -> Vec<DenseStep> {
    let n2 = prior_mean.len();
    let mut out: Vec<DenseStep> = Vec::new();
    for (k, sino) in sinos.iter().enumerate() {
        let (xp, cp) = match out.last() {
            None => (prior_mean.clone(), prior_cov.clone()),
            Some(prev) => {
                let m = &motions[k - 1];
                let cp = m * &prev.cov * m.transpose() + DMatrix::identity(n2, n2) * q2;
                (m * &prev.mean, cp)
            }
        };
        let h = Projector::new(sino.geometry()).to_dense();
        let info = h.transpose() * &h / obs_var + spd_inv(&cp);
        let mut cov = spd_inv(&info);
        cov = (&cov + cov.transpose()) * 0.5;
        let mean = &xp + &cov * (h.transpose() * (sino.as_vector() - &h * &xp)) / obs_var;
        out.push(DenseStep { pred_mean: xp, pred_cov: cp, mean, cov });
    }
    out
}

/// Textbook RTS smoother over a dense filter run; returns `(means, covariances)` in forward order.
pub fn dense_rts(run: &[DenseStep], motions: &[DMatrix<f64>]) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let k = run.len();
    let mut means = vec![run[k - 1].mean.clone()];
    let mut covs = vec![run[k - 1].cov.clone()];
    for j in (0..k - 1).rev() {
        let next = &run[j + 1];
        let g = &run[j].cov * motions[j].transpose() * spd_inv(&next.pred_cov);
        let ms = &run[j].mean + &g * (means.last().unwrap() - &next.pred_mean);
        let cs = &run[j].cov + &g * (covs.last().unwrap() - &next.pred_cov) * g.transpose();
        means.push(ms);
        covs.push(cs);
    }
    means.reverse();
    covs.reverse();
    (means, covs)
}

/// A small random dynamic problem.
pub struct Instance {
    pub n: usize,
    pub basis: BasisProjection<f64>,
    pub prior_mean: DVector<f64>,
    pub sinos: Vec<Sinogram<f64>>,
    pub motions: Vec<MotionModel<f64>>,
    pub obs_var: f64,
    pub q2: f64,
}

impl Instance {
    pub fn random(seed: u64, n: usize, steps: usize) -> Self {
        let mut rng = rng(seed);
        let model = CovarianceModel::from_std(0.5, 1.0, n).unwrap();
        let basis = build_basis(&model, n * n).unwrap();
        let prior_mean = gaussian_vector(&mut rng, n * n) * 0.1;
        let obs_var: f64 = rng.random_range(0.01..0.1);
        let q2 = rng.random_range(0.001..0.05);
        let truth = basis.expand(&gaussian_vector(&mut rng, n * n));
        let sinos = (0..steps)
            .map(|_| {
                let angles: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..180.0)).collect();
                let geom = ScanGeometry::parallel(n, angles).unwrap();
                let y = Projector::new(&geom).forward_vector(&truth).unwrap();
                let noise = gaussian_vector(&mut rng, y.len()) * obs_var.sqrt();
                Sinogram::new(geom, y + noise).unwrap()
            })
            .collect();
        let motions = (1..steps)
            .map(|_| {
                if rng.random_bool(0.5) {
                    MotionModel::Identity
                } else {
                    let (u0, v0): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let u = (0..n * n).map(|i| u0 + 0.3 * ((i % n) as f64).sin()).collect();
                    let v = (0..n * n).map(|i| v0 + 0.3 * ((i / n) as f64).cos()).collect();
                    flow_model(FlowField::new(n, u, v).unwrap())
                }
            })
            .collect();
        Self { n, basis, prior_mean, sinos, motions, obs_var, q2 }
    }

    pub fn dense_motions(&self) -> Vec<DMatrix<f64>> {
        let n2 = self.n * self.n;
        self.motions
            .iter()
            .map(|m| m.apply_columns(&DMatrix::identity(n2, n2)).unwrap_or_else(|| DMatrix::identity(n2, n2)))
            .collect()
    }

    pub fn prior_covariance(&self) -> DMatrix<f64> {
        let p = self.basis.columns();
        p * p.transpose()
    }

    /// Reduced filter driven with the instance's motion sequence.
    pub fn reduced_run(&self) -> Vec<FilterStep<f64>> {
        let obs = GaussianObservation::new(self.obs_var).unwrap();
        let noise = ProcessNoise::new(self.q2).unwrap();
        let mut out: Vec<FilterStep<f64>> = Vec::new();
        for (k, sino) in self.sinos.iter().enumerate() {
            let pred = match out.last() {
                None => PredictedState::initial(self.prior_mean.clone()),
                Some(prev) => predict(&prev.state, self.motions[k - 1].clone(), &self.basis, &noise).unwrap(),
            };
            let state: ReducedGaussianState<f64> = update(&pred, sino, &self.basis, &obs).unwrap();
            let image = Image::from_vector(self.n, state.mean(&self.basis)).unwrap();
            out.push(FilterStep { state, image, transition: pred.into_transition(), flow_rejected: false });
        }
        out
    }
}

/// `P Ψ Pᵀ`.
pub fn lift(basis: &BasisProjection<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let p = basis.columns();
    p * psi * p.transpose()
}
