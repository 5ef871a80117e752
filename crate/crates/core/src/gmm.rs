//! Gaussian mixture fitting over joint (position, velocity) data and the
//! conditional velocity field it induces.
//!
//! The mixture lives in 2d dimensions. Conditioning on position gives the
//! regressed velocity estimate; nothing here makes that field stable, the
//! controller in [`crate::control`] is responsible for that.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::DemonstrationSet;
use crate::error::{Error, Result};

/// Relative covariance eigenvalue floor; scaled by the data's variance.
pub const EPS_PD_RELATIVE: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

/// Covariance eigenvalue floor for a given demonstration set.
pub fn eps_pd_for(set: &DemonstrationSet) -> f64 {
    EPS_PD_RELATIVE * set.variance_scale()
}

/// Priors, means, and covariances of a K-component mixture over joint
/// (position, velocity) points.
///
/// Means are 2d vectors partitioned as (position block, velocity block) and
/// covariances 2d x 2d matrices partitioned the same way. Every covariance is
/// symmetric with eigenvalues at or above the stored floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    d: usize,
    eps_pd: f64,
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl MixtureParams {
    pub fn new(
        d: usize,
        eps_pd: f64,
        priors: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let params = Self {
            d,
            eps_pd,
            priors,
            means,
            covariances,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks the mixture invariants: simplex priors, coherent dimensions,
    /// and symmetric covariances with eigenvalues at or above the floor.
    pub fn validate(&self) -> Result<()> {
        let k = self.priors.len();
        if k == 0 {
            return Err(Error::Argument("mixture needs at least one component".into()));
        }
        if self.means.len() != k || self.covariances.len() != k {
            return Err(Error::Argument(format!(
                "{k} priors but {} means and {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("priors sum to {sum}, expected 1")));
        }
        for (i, p) in self.priors.iter().enumerate() {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Numerical(format!("prior {i} is {p}, outside (0, 1]")));
            }
        }
        let dim = 2 * self.d;
        for (i, (mean, cov)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::Argument(format!(
                    "component {i} has wrong dimensions for d = {}",
                    self.d
                )));
            }
            let asym = (cov - cov.transpose()).norm();
            if asym > 1e-9 * cov.norm().max(1.0) {
                return Err(Error::Numerical(format!(
                    "covariance {i} is not symmetric (defect {asym:e})"
                )));
            }
            let min_eig = cov
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < self.eps_pd * 0.5 {
                return Err(Error::Numerical(format!(
                    "covariance {i} min eigenvalue {min_eig:e} below floor {:e}",
                    self.eps_pd
                )));
            }
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.priors.len()
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn eps_pd(&self) -> f64 {
        self.eps_pd
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Position block of component k's mean.
    pub fn mean_pos(&self, k: usize) -> DVector<f64> {
        self.means[k].rows(0, self.d).into_owned()
    }

    /// Velocity block of component k's mean.
    pub fn mean_vel(&self, k: usize) -> DVector<f64> {
        self.means[k].rows(self.d, self.d).into_owned()
    }

    /// Position-position covariance block of component k.
    pub fn cov_pos(&self, k: usize) -> DMatrix<f64> {
        self.covariances[k].view((0, 0), (self.d, self.d)).into_owned()
    }

    /// Velocity-position covariance block of component k.
    pub fn cov_vel_pos(&self, k: usize) -> DMatrix<f64> {
        self.covariances[k].view((self.d, 0), (self.d, self.d)).into_owned()
    }
}

/// Symmetrizes `mat` and raises its eigenvalues to at least `floor`.
pub(crate) fn spd_floor(mat: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let clamped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(floor)),
    );
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Log density of a multivariate normal, or None when the covariance is not
/// positive definite.
fn ln_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let chol = Cholesky::new(cov.clone())?;
    let diff = x - mean;
    let z = chol.l_dirty().solve_lower_triangular(&diff)?;
    let ln_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    Some(-0.5 * (x.len() as f64 * LN_2PI + ln_det + z.norm_squared()))
}

/// K-means++ seeded Lloyd clustering on the joint points, packaged as an
/// initial mixture: priors from cluster fractions, means from centroids,
/// covariances from within-cluster scatter floored to the data's eps.
///
/// An emptied cluster is re-seeded at the point farthest from its assigned
/// centroid, so the result stays deterministic per seed.
pub fn kmeans_init(set: &DemonstrationSet, k: usize, seed: u64) -> Result<MixtureParams> {
    let points = set.joint_samples();
    let n = points.len();
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds sample count {n}")));
    }
    let eps_pd = eps_pd_for(set);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // K-means++ seeding.
    let mut centroids: Vec<DVector<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| (p - &centroids[0]).norm_squared())
        .collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dist2.iter().enumerate() {
                r -= d;
                if r <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[idx].clone();
        for (i, p) in points.iter().enumerate() {
            dist2[i] = dist2[i].min((p - &c).norm_squared());
        }
        centroids.push(c);
    }

    // Lloyd iterations to an assignment fixpoint.
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = (p - c).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed the emptied cluster at the worst-represented point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (&points[a] - &centroids[assignment[a]]).norm_squared();
                        let db = (&points[b] - &centroids[assignment[b]]).norm_squared();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                counts[assignment[far]] -= 1;
                assignment[far] = j;
                counts[j] = 1;
                centroids[j] = points[far].clone();
                changed = true;
            }
        }

        let dim = 2 * set.dims();
        let mut sums = vec![DVector::<f64>::zeros(dim); k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]] += p;
        }
        for j in 0..k {
            centroids[j] = &sums[j] / counts[j] as f64;
        }
        if !changed {
            break;
        }
    }

    let dim = 2 * set.dims();
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    let mut priors = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for j in 0..k {
        priors.push(counts[j] as f64 / n as f64);
        let mut scatter = DMatrix::<f64>::zeros(dim, dim);
        for (i, p) in points.iter().enumerate() {
            if assignment[i] == j {
                let diff = p - &centroids[j];
                scatter += &diff * diff.transpose();
            }
        }
        scatter /= counts[j] as f64;
        covariances.push(spd_floor(&scatter, eps_pd));
    }

    MixtureParams::new(set.dims(), eps_pd, priors, centroids, covariances)
}

/// Expectation-maximization refinement of an initial mixture.
///
/// Stops when the log-likelihood gain drops below `tol` or after `max_iter`
/// iterations. Covariances are floored after every M-step.
pub fn em_fit(
    init: &MixtureParams,
    set: &DemonstrationSet,
    max_iter: usize,
    tol: f64,
) -> Result<MixtureParams> {
    em_fit_with_trace(init, set, max_iter, tol).map(|(params, _)| params)
}

/// Like [`em_fit`] but also returns the per-iteration log-likelihood trace.
pub fn em_fit_with_trace(
    init: &MixtureParams,
    set: &DemonstrationSet,
    max_iter: usize,
    tol: f64,
) -> Result<(MixtureParams, Vec<f64>)> {
    init.validate()?;
    if init.dims() != set.dims() {
        return Err(Error::Argument(format!(
            "mixture dimension {} does not match data dimension {}",
            init.dims(),
            set.dims()
        )));
    }
    let points = set.joint_samples();
    let n = points.len();
    let k = init.num_components();
    let dim = 2 * set.dims();
    let eps_pd = init.eps_pd();

    let mut params = init.clone();
    let mut trace = Vec::new();

    for iter in 0..max_iter {
        // E-step in log space.
        let mut resp = DMatrix::<f64>::zeros(n, k);
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut lw = vec![f64::NEG_INFINITY; k];
            for j in 0..k {
                let ln_g = ln_mvn(p, &params.means[j], &params.covariances[j]).ok_or_else(
                    || Error::Numerical(format!("component {j} covariance lost definiteness")),
                )?;
                lw[j] = params.priors[j].ln() + ln_g;
            }
            let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..k {
                let e = (lw[j] - max).exp();
                resp[(i, j)] = e;
                sum += e;
            }
            for j in 0..k {
                resp[(i, j)] /= sum;
            }
            ll += max + sum.ln();
        }
        if !ll.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite log-likelihood at EM iteration {iter}"
            )));
        }
        let done = trace.last().is_some_and(|prev| ll - prev < tol);
        trace.push(ll);
        if done {
            break;
        }

        // M-step.
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, j)]).sum();
            let nk_safe = nk.max(1e-12);
            let mut mean = DVector::<f64>::zeros(dim);
            for (i, p) in points.iter().enumerate() {
                mean += p * resp[(i, j)];
            }
            mean /= nk_safe;
            let mut scatter = DMatrix::<f64>::zeros(dim, dim);
            for (i, p) in points.iter().enumerate() {
                let diff = p - &mean;
                scatter += &diff * diff.transpose() * resp[(i, j)];
            }
            scatter /= nk_safe;
            params.priors[j] = (nk / n as f64).max(1e-12);
            params.means[j] = mean;
            params.covariances[j] = spd_floor(&scatter, eps_pd);
        }
        let total: f64 = params.priors.iter().sum();
        for p in &mut params.priors {
            *p /= total;
        }
    }

    params.validate()?;
    Ok((params, trace))
}

/// Per-component influence weights at position `x`.
///
/// Computed in log space from the position marginals; the result is
/// non-negative and sums to one. If every marginal underflows outright the
/// weight collapses to a one-hot on the component with the nearest mean.
pub fn weights(params: &MixtureParams, x: &DVector<f64>) -> DVector<f64> {
    let k = params.num_components();
    let mut lw = vec![f64::NEG_INFINITY; k];
    for j in 0..k {
        if let Some(ln_g) = ln_mvn(x, &params.mean_pos(j), &params.cov_pos(j)) {
            lw[j] = params.priors()[j].ln() + ln_g;
        }
    }
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // Total underflow: one-hot on the nearest component.
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let da = (x - params.mean_pos(a)).norm_squared();
                let db = (x - params.mean_pos(b)).norm_squared();
                da.total_cmp(&db)
            })
            .unwrap();
        let mut g = DVector::zeros(k);
        g[nearest] = 1.0;
        return g;
    }
    let mut g = DVector::from_iterator(k, lw.iter().map(|v| (v - max).exp()));
    let sum = g.sum();
    g /= sum;
    g
}

/// Conditional mean velocity of the mixture at position `x`.
///
/// Each component contributes its regression mean, solved through a Cholesky
/// factorization of the position block rather than an explicit inverse.
pub fn gmr_velocity(params: &MixtureParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    let gamma = weights(params, x);
    let mut v = DVector::<f64>::zeros(params.dims());
    for k in 0..params.num_components() {
        if gamma[k] == 0.0 {
            continue;
        }
        let cov_pos = params.cov_pos(k);
        let chol = Cholesky::new(cov_pos).ok_or_else(|| {
            Error::Numerical(format!("position covariance of component {k} is singular"))
        })?;
        let diff = x - params.mean_pos(k);
        let m = params.mean_vel(k) + params.cov_vel_pos(k) * chol.solve(&diff);
        v += m * gamma[k];
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_shape, Demonstration, DemonstrationSet, Sample, Shape};
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    /// One-demo set from raw joint points; a trailing zero-position sample
    /// keeps the ingest translation a no-op.
    fn set_from_points(points: &[(Vec<f64>, Vec<f64>)]) -> DemonstrationSet {
        let d = points[0].0.len();
        let mut samples: Vec<Sample> = points
            .iter()
            .enumerate()
            .map(|(i, (p, v))| Sample {
                position: DVector::from_row_slice(p),
                velocity: DVector::from_row_slice(v),
                time: i as f64,
            })
            .collect();
        samples.push(Sample {
            position: DVector::zeros(d),
            velocity: DVector::zeros(d),
            time: points.len() as f64,
        });
        DemonstrationSet::new(vec![Demonstration { samples }], 1e-9).unwrap()
    }

    fn sample_mean(points: &[DVector<f64>]) -> DVector<f64> {
        let mut m = DVector::zeros(points[0].len());
        for p in points {
            m += p;
        }
        m / points.len() as f64
    }

    fn sample_cov(points: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
        let dim = mean.len();
        let mut c = DMatrix::zeros(dim, dim);
        for p in points {
            let diff = p - mean;
            c += &diff * diff.transpose();
        }
        c / points.len() as f64
    }

    #[test]
    fn kmeans_single_cluster_is_sample_stats() {
        let set = synth_shape(Shape::Sine, 2, 50, 0.05, 3).unwrap();
        let params = kmeans_init(&set, 1, 0).unwrap();
        assert_eq!(params.priors(), &[1.0]);
        let points = set.joint_samples();
        let mean = sample_mean(&points);
        let cov = spd_floor(&sample_cov(&points, &mean), eps_pd_for(&set));
        assert_relative_eq!(params.means()[0], mean, epsilon = 1e-12);
        assert_relative_eq!(params.covariances()[0], cov, epsilon = 1e-10);
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points = Vec::new();
        for _ in 0..40 {
            let (a, b) = (rng.gen_range(-0.1..=0.1), rng.gen_range(-0.1..=0.1));
            points.push((vec![10.0 + a, 10.0 + b], vec![1.0, 1.0]));
        }
        for _ in 0..40 {
            let (a, b) = (rng.gen_range(-0.1..=0.1), rng.gen_range(-0.1..=0.1));
            points.push((vec![a, b], vec![-1.0, -1.0]));
        }
        let set = set_from_points(&points);
        let params = kmeans_init(&set, 2, 1).unwrap();

        // Blob means computed directly from the ingested set.
        let joint = set.joint_samples();
        let (far, near): (Vec<_>, Vec<_>) = joint.iter().cloned().partition(|p| p[0] > 5.0);
        let far_mean = sample_mean(&far);
        let near_mean = sample_mean(&near);
        let c0 = &params.means()[0];
        let c1 = &params.means()[1];
        let (got_far, got_near) = if c0[0] > 5.0 { (c0, c1) } else { (c1, c0) };
        assert_relative_eq!(*got_far, far_mean, epsilon = 1e-6);
        assert_relative_eq!(*got_near, near_mean, epsilon = 1e-6);
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let set = synth_shape(Shape::W, 3, 80, 0.02, 11).unwrap();
        let a = kmeans_init(&set, 4, 5).unwrap();
        let b = kmeans_init(&set, 4, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_rejects_k_above_sample_count() {
        let set = synth_shape(Shape::C, 1, 5, 0.0, 0).unwrap();
        assert!(matches!(
            kmeans_init(&set, 6, 0).unwrap_err(),
            Error::Argument(_)
        ));
    }

    #[test]
    fn em_recovers_single_gaussian_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 1000;
        // Box-Muller pairs, positions near zero, velocities offset.
        let mut points = Vec::with_capacity(n);
        let mut gauss = move || -> f64 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        for _ in 0..n {
            points.push((
                vec![0.7 * gauss(), 0.7 * gauss()],
                vec![0.5 + 0.4 * gauss(), -0.3 + 0.4 * gauss()],
            ));
        }
        let set = set_from_points(&points);
        let init = kmeans_init(&set, 1, 0).unwrap();
        let fitted = em_fit(&init, &set, 50, 1e-9).unwrap();

        // K = 1 EM mean equals the sample mean; compare against the
        // generator truth within 3 standard errors per coordinate.
        let truth = [0.0, 0.0, 0.5, -0.3];
        let se = [0.7 / (n as f64).sqrt(), 0.7 / (n as f64).sqrt(), 0.4 / (n as f64).sqrt(), 0.4 / (n as f64).sqrt()];
        for i in 0..4 {
            assert!(
                (fitted.means()[0][i] - truth[i]).abs() < 3.0 * se[i],
                "coordinate {i}: {} vs {}",
                fitted.means()[0][i],
                truth[i]
            );
        }
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let set = synth_shape(Shape::G, 3, 60, 0.04, 2).unwrap();
        let init = kmeans_init(&set, 3, 2).unwrap();
        let (_, trace) = em_fit_with_trace(&init, &set, 60, 1e-10).unwrap();
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-10, "log-likelihood dropped: {w:?}");
        }
    }

    #[test]
    fn em_balanced_blobs_get_balanced_priors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points = Vec::new();
        for i in 0..120 {
            let mut jitter = || -> f64 { rng.gen_range(-0.3..=0.3) };
            let (a, b, c, e) = (jitter(), jitter(), jitter(), jitter());
            if i % 2 == 0 {
                points.push((vec![8.0 + a, 8.0 + b], vec![1.0 + c, e]));
            } else {
                points.push((vec![a, b], vec![c, 1.0 + e]));
            }
        }
        let set = set_from_points(&points);
        let init = kmeans_init(&set, 2, 0).unwrap();
        let fitted = em_fit(&init, &set, 100, 1e-10).unwrap();
        for p in fitted.priors() {
            assert!((0.4..=0.6).contains(p), "priors {:?}", fitted.priors());
        }
    }

    #[test]
    fn fitted_covariances_stay_above_floor() {
        let set = synth_shape(Shape::S, 3, 80, 0.03, 6).unwrap();
        let init = kmeans_init(&set, 5, 1).unwrap();
        let fitted = em_fit(&init, &set, 40, 1e-9).unwrap();
        for cov in fitted.covariances() {
            let min_eig = cov
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= fitted.eps_pd() * 0.5);
        }
    }

    fn single_component_1d(mean: [f64; 2], cov: [[f64; 2]; 2]) -> MixtureParams {
        MixtureParams::new(
            1,
            1e-9,
            vec![1.0],
            vec![DVector::from_row_slice(&mean)],
            vec![DMatrix::from_row_slice(2, 2, &[
                cov[0][0], cov[0][1], cov[1][0], cov[1][1],
            ])],
        )
        .unwrap()
    }

    #[test]
    fn weights_single_component_is_one() {
        let params = single_component_1d([0.0, 1.0], [[1.0, 0.5], [0.5, 1.0]]);
        for x in [-3.0, 0.0, 42.0] {
            let g = weights(&params, &DVector::from_row_slice(&[x]));
            assert_eq!(g.len(), 1);
            assert_eq!(g[0], 1.0);
        }
    }

    #[test]
    fn weights_favor_the_local_component() {
        let params = MixtureParams::new(
            1,
            1e-9,
            vec![0.5, 0.5],
            vec![
                DVector::from_row_slice(&[0.0, 0.0]),
                DVector::from_row_slice(&[20.0, 0.0]),
            ],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        )
        .unwrap();
        let g = weights(&params, &DVector::from_row_slice(&[0.0]));
        assert!(g[0] > 0.99);
    }

    #[test]
    fn weights_sum_to_one_everywhere() {
        let set = synth_shape(Shape::C, 2, 60, 0.05, 9).unwrap();
        let init = kmeans_init(&set, 4, 3).unwrap();
        let fitted = em_fit(&init, &set, 30, 1e-8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            let g = weights(&fitted, &x);
            assert!((g.sum() - 1.0).abs() <= 1e-12);
            assert!(g.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn weights_vary_smoothly_along_a_segment() {
        let set = synth_shape(Shape::Sine, 2, 60, 0.05, 9).unwrap();
        let init = kmeans_init(&set, 3, 3).unwrap();
        let fitted = em_fit(&init, &set, 30, 1e-8).unwrap();
        let a = DVector::from_row_slice(&[-2.5, -0.5]);
        let b = DVector::from_row_slice(&[0.5, 0.8]);
        let steps = 400;
        let mut prev = weights(&fitted, &a);
        for i in 1..=steps {
            let x = &a + (&b - &a) * (i as f64 / steps as f64);
            let g = weights(&fitted, &x);
            // Finite difference of a smooth weight along a short segment
            // stays small.
            assert!((&g - &prev).norm() < 0.2, "jump at step {i}");
            prev = g;
        }
    }

    #[test]
    fn gmr_matches_conditional_mean_by_hand() {
        let params = single_component_1d([0.0, 1.0], [[1.0, 0.5], [0.5, 1.0]]);
        let v = gmr_velocity(&params, &DVector::from_row_slice(&[2.0])).unwrap();
        assert_relative_eq!(v[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gmr_zero_cross_covariance_is_constant() {
        let params = single_component_1d([0.3, -0.7], [[2.0, 0.0], [0.0, 1.5]]);
        for x in [-10.0, 0.0, 3.0, 100.0] {
            let v = gmr_velocity(&params, &DVector::from_row_slice(&[x])).unwrap();
            assert_eq!(v[0], -0.7);
        }
    }

    #[test]
    fn gmr_field_need_not_vanish_at_target() {
        let params = single_component_1d([1.0, 2.0], [[1.0, 0.5], [0.5, 1.0]]);
        let v = gmr_velocity(&params, &DVector::from_row_slice(&[0.0])).unwrap();
        assert!(v.norm() > 0.1);
    }

    #[test]
    fn gmr_is_affine_under_a_dominant_component() {
        let params = MixtureParams::new(
            1,
            1e-9,
            vec![0.5, 0.5],
            vec![
                DVector::from_row_slice(&[0.0, 1.0]),
                DVector::from_row_slice(&[50.0, -2.0]),
            ],
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
                DMatrix::identity(2, 2),
            ],
        )
        .unwrap();
        let x = DVector::from_row_slice(&[0.5]);
        let g = weights(&params, &x);
        assert!(g[0] > 1.0 - 1e-9);
        let v = gmr_velocity(&params, &x).unwrap();
        let affine = 1.0 + 0.5 * (x[0] - 0.0);
        assert!((v[0] - affine).abs() < 1e-8);
    }
}
