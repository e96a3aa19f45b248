//! The matrix Fisher distribution `p(R | F) = exp(tr(FᵀR)) / a(F)` on SO(3),
//! with density taken relative to the normalized Haar measure.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalizer::{build_lambda1, grad_log_norm_f_svd, ConcentrationTriple, Normalizer};
use crate::rotation::{proper_svd, quat_matrix, rot_to_quat, ProperSvd, RotationMatrix};

/// Below this expected acceptance rate the rejection sampler refuses to run.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Threshold on `s2 + s3p` below which the mode is not unique.
pub const DEGENERATE_MODE_TOL: f64 = 1e-9;

/// Unconstrained 3×3 parameter matrix with finite entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 9]", try_from = "[f64; 9]")]
pub struct FisherParams(Matrix3<f64>);

impl FisherParams {
    pub fn new(f: Matrix3<f64>) -> Result<Self> {
        if f.iter().all(|v| v.is_finite()) {
            Ok(FisherParams(f))
        } else {
            Err(Error::validation("parameter matrix has non-finite entries"))
        }
    }

    pub fn zero() -> Self {
        FisherParams(Matrix3::zeros())
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        std::array::from_fn(|k| self.0[(k / 3, k % 3)])
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

impl From<FisherParams> for [f64; 9] {
    fn from(f: FisherParams) -> Self {
        f.to_row_major()
    }
}

impl TryFrom<[f64; 9]> for FisherParams {
    type Error = Error;

    fn try_from(v: [f64; 9]) -> Result<Self> {
        FisherParams::from_row_major(&v)
    }
}

/// Maximizer of the density. `degenerate` is set when `s2 + s3p` is too small
/// for the maximizer to be unique, in which case `rotation` is one of them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub rotation: RotationMatrix,
    pub degenerate: bool,
}

/// Proposal and acceptance counts of one rejection-sampling run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl SamplerStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals as f64
    }
}

#[derive(Clone, Debug)]
pub struct MatrixFisher {
    f: FisherParams,
    svd: ProperSvd,
    log_a: f64,
    normalizer: Normalizer,
}

impl MatrixFisher {
    /// Distribution backed by the quadrature oracle.
    pub fn new(f: FisherParams) -> Self {
        Self::with_normalizer(f, Normalizer::default())
    }

    pub fn with_normalizer(f: FisherParams, normalizer: Normalizer) -> Self {
        let svd = proper_svd(&f.0);
        let log_a = normalizer.log_norm(&ConcentrationTriple::from_svd(&svd));
        MatrixFisher { f, svd, log_a, normalizer }
    }

    pub fn from_matrix(f: Matrix3<f64>) -> Result<Self> {
        Ok(Self::new(FisherParams::new(f)?))
    }

    pub fn params(&self) -> &FisherParams {
        &self.f
    }

    pub fn svd(&self) -> &ProperSvd {
        &self.svd
    }

    pub fn concentration(&self) -> ConcentrationTriple {
        ConcentrationTriple::from_svd(&self.svd)
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// `log a(F)`
    pub fn log_norm(&self) -> f64 {
        self.log_a
    }

    pub fn log_pdf(&self, r: &RotationMatrix) -> f64 {
        self.f.0.dot(r.matrix()) - self.log_a
    }

    /// The same density through the unit-quaternion form `qᵀΛ₁q` of the
    /// trace, with `q` the quaternion of `UᵀRV`.
    pub fn log_pdf_quaternion(&self, r: &RotationMatrix) -> f64 {
        let local = RotationMatrix::new_unchecked(self.svd.u.matrix().transpose() * r.matrix() * self.svd.v.matrix());
        let q = rot_to_quat(&local);
        let l = build_lambda1(&self.concentration()).0;
        l[0] * q.x * q.x + l[1] * q.y * q.y + l[2] * q.z * q.z + l[3] * q.w * q.w - self.log_a
    }

    pub fn mode(&self) -> Mode {
        Mode { rotation: self.svd.mode(), degenerate: self.svd.s2 + self.svd.s3p <= DEGENERATE_MODE_TOL }
    }

    /// `E[R | F]`, which is also `∇_F log a(F)`.
    pub fn mean_rotation_matrix(&self) -> Matrix3<f64> {
        grad_log_norm_f_svd(&self.svd, &self.normalizer)
    }

    /// `a(F) / exp(s1 + s2 + s3p)`, the acceptance rate of Haar proposals.
    pub fn expected_acceptance(&self) -> f64 {
        (self.log_a - self.concentration().sum()).exp()
    }

    /// Distribution with parameter `A·F·Bᵀ`. The proper singular values and
    /// therefore the cached normalizer are carried over unchanged.
    pub fn transform(&self, a: &RotationMatrix, b: &RotationMatrix) -> MatrixFisher {
        let f = FisherParams(a.matrix() * self.f.0 * b.matrix().transpose());
        let svd = ProperSvd { u: *a * self.svd.u, v: *b * self.svd.v, ..self.svd };
        MatrixFisher { f, svd, log_a: self.log_a, normalizer: self.normalizer.clone() }
    }

    /// `n` exact samples by rejection from the Haar measure.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<RotationMatrix>> {
        Ok(self.sample_with_stats(n, seed)?.0)
    }

    pub fn sample_with_stats(&self, n: usize, seed: u64) -> Result<(Vec<RotationMatrix>, SamplerStats)> {
        if n == 0 {
            return Err(Error::validation("sample size must be at least 1"));
        }
        self.check_acceptance()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proposer = Proposer::new(self);
        let mut out = Vec::with_capacity(n);
        let mut proposals = 0u64;
        while out.len() < n {
            proposals += 1;
            if let Some(q) = proposer.propose(&mut rng) {
                let local = quat_matrix(q[3], q[0], q[1], q[2]);
                out.push(RotationMatrix::new_unchecked(self.svd.u.matrix() * local * self.svd.v.matrix().transpose()));
            }
        }
        Ok((out, SamplerStats { proposals, accepted: n as u64 }))
    }

    /// Runs a fixed number of proposals and counts acceptances without
    /// materializing the samples.
    pub fn count_acceptances(&self, proposals: u64, seed: u64) -> Result<SamplerStats> {
        self.check_acceptance()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proposer = Proposer::new(self);
        let accepted = (0..proposals).filter(|_| proposer.propose(&mut rng).is_some()).count() as u64;
        Ok(SamplerStats { proposals, accepted })
    }

    fn check_acceptance(&self) -> Result<()> {
        let p = self.expected_acceptance();
        if p < MIN_ACCEPTANCE {
            return Err(Error::ConcentrationTooHigh(p));
        }
        Ok(())
    }
}

/// Haar proposals in the frame of the proper SVD, where the log acceptance
/// ratio is `qᵀΛ₁q − max Λ₁ ≤ 0`.
struct Proposer {
    excess: [f64; 4],
}

impl Proposer {
    fn new(d: &MatrixFisher) -> Self {
        let top = d.concentration().sum();
        Proposer { excess: build_lambda1(&d.concentration()).0.map(|l| l - top) }
    }

    /// Returns the accepted unit quaternion as `(x, y, z, w)`.
    fn propose<R: Rng>(&self, rng: &mut R) -> Option<[f64; 4]> {
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n2 = g.iter().map(|v| v * v).sum::<f64>();
        if n2 == 0.0 {
            return None;
        }
        let e = self.excess.iter().zip(&g).map(|(l, v)| l * v * v).sum::<f64>() / n2;
        let u: f64 = rng.random();
        if (1.0 - u).ln() < e {
            let n = n2.sqrt();
            Some(g.map(|v| v / n))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{axis_angle_to_rot, geodesic_distance, haar_sample, random_rotation};
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn diag(a: f64, b: f64, c: f64) -> MatrixFisher {
        MatrixFisher::from_matrix(Matrix3::from_diagonal(&Vector3::new(a, b, c))).unwrap()
    }

    #[test]
    fn uniform_density_is_zero() {
        let d = MatrixFisher::new(FisherParams::zero());
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            assert_eq!(d.log_pdf(&random_rotation(&mut rng)), 0.0);
        }
    }

    #[test]
    fn density_at_identity() {
        let d = diag(5.0, 5.0, 5.0);
        assert!((d.log_pdf(&RotationMatrix::identity()) - (15.0 - 9.974858362684436)).abs() < 1e-9);
    }

    #[test]
    fn figure_modes() {
        let m = diag(5.0, 5.0, 5.0).mode();
        assert!(!m.degenerate);
        assert!((m.rotation.matrix() - Matrix3::identity()).amax() < 1e-12);
        let a = axis_angle_to_rot(&Vector3::z(), -PI / 6.0).unwrap();
        let d = MatrixFisher::from_matrix(a.matrix() * Matrix3::from_diagonal(&Vector3::new(25.0, 5.0, 1.0))).unwrap();
        assert!((d.mode().rotation.matrix() - a.matrix()).amax() < 1e-9);
    }

    #[test]
    fn degenerate_mode_flag() {
        assert!(diag(1.0, 0.0, 0.0).mode().degenerate);
        assert!(diag(4.0, 2.0, -2.0).mode().degenerate);
        assert!(!diag(4.0, 2.0, -1.0).mode().degenerate);
    }

    #[test]
    fn mode_beats_haar_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let haar = haar_sample(43, 20_000).unwrap();
        for _ in 0..5 {
            let d = MatrixFisher::from_matrix(Matrix3::from_fn(|_, _| rng.random_range(-10.0..10.0))).unwrap();
            let best = d.log_pdf(&d.mode().rotation);
            assert!(haar.iter().all(|r| d.log_pdf(r) <= best));
        }
    }

    #[test]
    fn quaternion_form_matches_trace_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..200 {
            let d = MatrixFisher::from_matrix(Matrix3::from_fn(|_, _| rng.random_range(-10.0..10.0))).unwrap();
            let r = random_rotation(&mut rng);
            assert!((d.log_pdf(&r) - d.log_pdf_quaternion(&r)).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_bounds_and_zero() {
        assert_eq!(MatrixFisher::new(FisherParams::zero()).mean_rotation_matrix(), Matrix3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..100 {
            let d = MatrixFisher::from_matrix(Matrix3::from_fn(|_, _| rng.random_range(-20.0..20.0))).unwrap();
            assert!(d.mean_rotation_matrix().norm() <= 3f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn transform_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let d0 = diag(3.0, 2.0, 1.0);
        let same = d0.transform(&RotationMatrix::identity(), &RotationMatrix::identity());
        assert_eq!(same.params(), d0.params());
        assert_eq!(same.log_norm(), d0.log_norm());
        for _ in 0..100 {
            let d = MatrixFisher::from_matrix(Matrix3::from_fn(|_, _| rng.random_range(-8.0..8.0))).unwrap();
            let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
            let t = d.transform(&a, &b);
            assert_eq!(t.log_norm(), d.log_norm());
            let expected = a * d.mode().rotation * b.transpose();
            assert!((t.mode().rotation.matrix() - expected.matrix()).amax() < 1e-9);
            let r = random_rotation(&mut rng);
            let back = a.transpose() * r * b;
            assert!((t.log_pdf(&r) - d.log_pdf(&back)).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_sampler_second_moments() {
        let samples = MatrixFisher::new(FisherParams::zero()).sample(100_000, 47).unwrap();
        let mut mean = Matrix3::zeros();
        let mut sq = Matrix3::zeros();
        for r in &samples {
            mean += r.matrix();
            sq += r.matrix().component_mul(r.matrix());
        }
        let n = samples.len() as f64;
        assert!((mean / n).amax() < 0.01);
        assert!((sq / n - Matrix3::repeat(1.0 / 3.0)).amax() < 0.01);
    }

    #[test]
    fn concentrated_samples_near_identity() {
        let d = diag(20.0, 20.0, 20.0);
        let samples = d.sample(5_000, 48).unwrap();
        let near = samples.iter().filter(|r| geodesic_distance(r, &RotationMatrix::identity()) < 0.6).count();
        assert!(near as f64 / samples.len() as f64 >= 0.99);
    }

    #[test]
    fn sampler_is_deterministic_and_refuses_high_concentration() {
        let d = diag(2.0, 1.0, 0.5);
        assert_eq!(d.sample(50, 7).unwrap(), d.sample(50, 7).unwrap());
        assert!(d.sample(0, 7).is_err());
        let err = diag(3000.0, 3000.0, 3000.0).sample(1, 7).unwrap_err();
        assert!(matches!(err, Error::ConcentrationTooHigh(_)));
    }

    #[test]
    fn acceptance_rate_matches_normalizer() {
        let d = diag(3.0, 2.0, -1.0);
        let stats = d.count_acceptances(400_000, 49).unwrap();
        let p = d.expected_acceptance();
        let se = (p * (1.0 - p) / stats.proposals as f64).sqrt();
        assert!((stats.acceptance_rate() - p).abs() < 4.0 * se);
    }
}
