//! Gaussian-process models over grid locations: kernels, exact posterior
//! inference, and monotone confidence intervals.
//!
//! [`GpModel`] is the reference implementation: an immutable model holding
//! its observations and a Cholesky factor of `K_T + σ²I`. The learning loops
//! use [`DomainPosterior`], which keeps the joint posterior over the whole
//! finite domain and conditions on one observation at a time. Both give the
//! same posterior; the tests check one against the other.

use serde::{Deserialize, Serialize};

use crate::domain::{GridDomain, LocationId};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern52,
    Rbf,
}

/// Stationary kernel on cell-center distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    /// Length units.
    pub lengthscale: T,
    /// Prior variance `σ_k²`.
    pub output_scale: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(family: KernelFamily, lengthscale: T, output_scale: T) -> Result<Self> {
        let k = Self { family, lengthscale, output_scale };
        k.validate()?;
        Ok(k)
    }

    pub fn matern52(lengthscale: T, output_scale: T) -> Result<Self> {
        Self::new(KernelFamily::Matern52, lengthscale, output_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > T::zero()) || !self.lengthscale.is_finite() {
            return Err(Error::InvalidParameter(format!("lengthscale must be positive, got {}", self.lengthscale)));
        }
        if !(self.output_scale > T::zero()) || !self.output_scale.is_finite() {
            return Err(Error::InvalidParameter(format!("output scale must be positive, got {}", self.output_scale)));
        }
        Ok(())
    }

    /// Covariance at distance `d`.
    pub fn eval(&self, d: T) -> T {
        let l = self.lengthscale;
        match self.family {
            KernelFamily::Matern52 => {
                let s5 = T::lit(5.0).sqrt();
                let a = s5 * d / l;
                (T::one() + a + T::lit(5.0) * d * d / (T::lit(3.0) * l * l)) * (-a).exp() * self.output_scale
            }
            KernelFamily::Rbf => (-(d * d) / (T::lit(2.0) * l * l)).exp() * self.output_scale,
        }
    }

    /// Prior covariance over the listed locations, row-major.
    pub fn gram(&self, domain: &GridDomain<T>, points: &[LocationId]) -> Vec<T> {
        let n = points.len();
        let mut k = vec![T::zero(); n * n];
        for i in 0..n {
            k[i * n + i] = self.output_scale;
            for j in 0..i {
                let v = self.eval(domain.distance(points[i], points[j]));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }
}

/// Exact GP posterior given a list of noisy observations.
#[derive(Clone, Debug)]
pub struct GpModel<T> {
    kernel: KernelSpec<T>,
    noise_var: T,
    domain: GridDomain<T>,
    obs_locations: Vec<LocationId>,
    obs_values: Vec<T>,
    factor: Vec<T>,
    alpha: Vec<T>,
    jitter: T,
}

impl<T: Scalar> GpModel<T> {
    /// Prior model with no observations.
    pub fn new(kernel: KernelSpec<T>, noise_var: T, domain: &GridDomain<T>) -> Result<Self> {
        kernel.validate()?;
        if !(noise_var >= T::zero()) || !noise_var.is_finite() {
            return Err(Error::InvalidParameter(format!("noise variance must be non-negative, got {noise_var}")));
        }
        Ok(Self {
            kernel,
            noise_var,
            domain: domain.clone(),
            obs_locations: Vec::new(),
            obs_values: Vec::new(),
            factor: Vec::new(),
            alpha: Vec::new(),
            jitter: T::zero(),
        })
    }

    pub fn with_observations(
        kernel: KernelSpec<T>,
        noise_var: T,
        domain: &GridDomain<T>,
        observations: &[(LocationId, T)],
    ) -> Result<Self> {
        Self::new(kernel, noise_var, domain)?.add_observations(observations)
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn domain(&self) -> &GridDomain<T> {
        &self.domain
    }

    pub fn obs_locations(&self) -> &[LocationId] {
        &self.obs_locations
    }

    pub fn obs_values(&self) -> &[T] {
        &self.obs_values
    }

    pub fn num_observations(&self) -> usize {
        self.obs_locations.len()
    }

    /// Diagonal jitter the last factorization needed.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Appends one observation and refactorizes.
    pub fn add_observation(&self, at: LocationId, value: T) -> Result<Self> {
        self.add_observations(&[(at, value)])
    }

    /// Appends a batch of observations and refactorizes once.
    pub fn add_observations(&self, batch: &[(LocationId, T)]) -> Result<Self> {
        let mut next = self.clone();
        for &(at, value) in batch {
            self.domain.check(at)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteObservation { at, value: value.to_f64_lossy() });
            }
            next.obs_locations.push(at);
            next.obs_values.push(value);
        }
        next.refactor()?;
        Ok(next)
    }

    fn noisy_gram(&self) -> Vec<T> {
        let n = self.obs_locations.len();
        let mut k = self.kernel.gram(&self.domain, &self.obs_locations);
        for i in 0..n {
            k[i * n + i] = k[i * n + i] + self.noise_var;
        }
        k
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.obs_locations.len();
        if n == 0 {
            self.factor.clear();
            self.alpha.clear();
            self.jitter = T::zero();
            return Ok(());
        }
        let (l, jitter) = linalg::cholesky_with_jitter(&self.noisy_gram(), n)?;
        let z = linalg::solve_lower(&l, n, &self.obs_values);
        self.alpha = linalg::solve_lower_transposed(&l, n, &z);
        self.factor = l;
        self.jitter = jitter;
        Ok(())
    }

    /// Relative Frobenius error of `L Lᵀ` against `K_T + σ²I`.
    pub fn factor_residual(&self) -> T {
        let n = self.obs_locations.len();
        if n == 0 {
            return T::zero();
        }
        let a = self.noisy_gram();
        let (mut num, mut den) = (T::zero(), T::zero());
        for i in 0..n {
            for j in 0..n {
                let lij: T = (0..=i.min(j)).map(|k| self.factor[i * n + k] * self.factor[j * n + k]).sum();
                let e = lij - a[i * n + j];
                num = num + e * e;
                den = den + a[i * n + j] * a[i * n + j];
            }
        }
        (num / den).sqrt()
    }

    /// Posterior mean and marginal variance at each query location.
    pub fn posterior(&self, query: &[LocationId]) -> (Vec<T>, Vec<T>) {
        let n = self.obs_locations.len();
        let mut means = Vec::with_capacity(query.len());
        let mut vars = Vec::with_capacity(query.len());
        for &q in query {
            if n == 0 {
                means.push(T::zero());
                vars.push(self.kernel.output_scale);
                continue;
            }
            let kq: Vec<T> = self.obs_locations.iter().map(|&o| self.kernel.eval(self.domain.distance(o, q))).collect();
            let mean = kq.iter().zip(&self.alpha).map(|(&a, &b)| a * b).sum();
            let v = linalg::solve_lower(&self.factor, n, &kq);
            let reduction: T = v.iter().map(|&x| x * x).sum();
            means.push(mean);
            vars.push((self.kernel.output_scale - reduction).max(T::zero()));
        }
        (means, vars)
    }

    /// Posterior over every domain location.
    pub fn posterior_all(&self) -> (Vec<T>, Vec<T>) {
        let ids: Vec<LocationId> = self.domain.ids().collect();
        self.posterior(&ids)
    }
}

/// Joint posterior over all `|V|` locations, updated by sequential
/// conditioning. Each observation costs `O(|V|²)`.
#[derive(Clone, Debug)]
pub struct DomainPosterior<T> {
    n: usize,
    mean: Vec<T>,
    cov: Vec<T>,
    noise_var: T,
    prior_var: T,
    observations: usize,
}

impl<T: Scalar> DomainPosterior<T> {
    /// Starts from the model's prior and replays its observations.
    pub fn from_model(model: &GpModel<T>) -> Result<Self> {
        let ids: Vec<LocationId> = model.domain.ids().collect();
        let mut post = Self {
            n: ids.len(),
            mean: vec![T::zero(); ids.len()],
            cov: model.kernel.gram(&model.domain, &ids),
            noise_var: model.noise_var,
            prior_var: model.kernel.output_scale,
            observations: 0,
        };
        for (&at, &y) in model.obs_locations.iter().zip(&model.obs_values) {
            post.observe(at, y)?;
        }
        Ok(post)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_observations(&self) -> usize {
        self.observations
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn prior_var(&self) -> T {
        self.prior_var
    }

    pub fn mean(&self, v: LocationId) -> T {
        self.mean[v.0]
    }

    pub fn variance(&self, v: LocationId) -> T {
        self.cov[v.0 * self.n + v.0].max(T::zero())
    }

    pub fn covariance(&self, a: LocationId, b: LocationId) -> T {
        self.cov[a.0 * self.n + b.0]
    }

    pub fn means(&self) -> &[T] {
        &self.mean
    }

    pub fn variances(&self) -> Vec<T> {
        (0..self.n).map(|i| self.cov[i * self.n + i].max(T::zero())).collect()
    }

    /// Conditions on `y` observed at `at` with the model's noise.
    pub fn observe(&mut self, at: LocationId, y: T) -> Result<()> {
        if at.0 >= self.n {
            return Err(Error::OutOfDomain(at));
        }
        if !y.is_finite() {
            return Err(Error::NonFiniteObservation { at, value: y.to_f64_lossy() });
        }
        let (col, s) = self.column(at);
        let innovation = (y - self.mean[at.0]) / s;
        for (m, &c) in self.mean.iter_mut().zip(&col) {
            *m = *m + c * innovation;
        }
        self.rank_one_downdate(&col, s);
        self.observations += 1;
        Ok(())
    }

    /// Conditions the covariance on a measurement site without a value.
    /// The mean is left unchanged.
    pub fn hallucinate(&mut self, at: LocationId) {
        let (col, s) = self.column(at);
        self.rank_one_downdate(&col, s);
    }

    fn column(&self, at: LocationId) -> (Vec<T>, T) {
        let n = self.n;
        let col: Vec<T> = (0..n).map(|i| self.cov[i * n + at.0]).collect();
        let s = col[at.0].max(T::zero()) + self.noise_var;
        (col, s)
    }

    fn rank_one_downdate(&mut self, col: &[T], s: T) {
        let n = self.n;
        let inv = T::one() / s;
        for i in 0..n {
            let ci = col[i] * inv;
            if ci == T::zero() {
                continue;
            }
            let row = &mut self.cov[i * n..(i + 1) * n];
            for (r, &cj) in row.iter_mut().zip(col) {
                *r = *r - ci * cj;
            }
        }
    }

    /// Variance at each target after hypothetically measuring at `sites`
    /// (value-free), without modifying the posterior.
    pub fn conditioned_variances(&self, sites: &[LocationId], targets: &[LocationId]) -> Result<Vec<T>> {
        let m = sites.len();
        if m == 0 {
            return Ok(targets.iter().map(|&t| self.variance(t)).collect());
        }
        let mut a = vec![T::zero(); m * m];
        for i in 0..m {
            for j in 0..m {
                a[i * m + j] = self.covariance(sites[i], sites[j]);
            }
            a[i * m + i] = a[i * m + i] + self.noise_var;
        }
        let (l, _) = linalg::cholesky_with_jitter(&a, m)?;
        Ok(targets
            .iter()
            .map(|&t| {
                let k: Vec<T> = sites.iter().map(|&s| self.covariance(s, t)).collect();
                let v = linalg::solve_lower(&l, m, &k);
                let red: T = v.iter().map(|&x| x * x).sum();
                (self.variance(t) - red).max(T::zero())
            })
            .collect())
    }
}

/// Running intersection of GP confidence intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceBounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Multiplier on the posterior standard deviation.
    pub beta_sqrt: T,
}

impl<T: Scalar> ConfidenceBounds<T> {
    /// Effectively unbounded starting bounds: the prior interval widened
    /// tenfold, so the first update fully determines the result.
    pub fn unbounded(n: usize, prior_mean: T, prior_sd: T, beta_sqrt: T) -> Self {
        let half = T::lit(10.0) * beta_sqrt * prior_sd;
        Self { lower: vec![prior_mean - half; n], upper: vec![prior_mean + half; n], beta_sqrt }
    }

    /// Bounds fixed to the given values.
    pub fn fixed(lower: Vec<T>, upper: Vec<T>, beta_sqrt: T) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper, beta_sqrt }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Intersects the current intervals with `μ ± β^{1/2}σ`.
    ///
    /// If noise makes the intervals disjoint, both ends collapse onto the
    /// previous bound that was crossed, which keeps lower non-decreasing,
    /// upper non-increasing and `lower <= upper`.
    pub fn update(&mut self, means: &[T], variances: &[T]) {
        assert_eq!(means.len(), self.lower.len());
        assert_eq!(variances.len(), self.lower.len());
        for i in 0..self.lower.len() {
            let sd = variances[i].max(T::zero()).sqrt();
            let (lo, hi) = (means[i] - self.beta_sqrt * sd, means[i] + self.beta_sqrt * sd);
            let (old_l, old_u) = (self.lower[i], self.upper[i]);
            let mut l = old_l.max(lo);
            let mut u = old_u.min(hi);
            if l > u {
                if lo > old_u {
                    l = old_u;
                    u = old_u;
                } else {
                    l = old_l;
                    u = old_l;
                }
            }
            debug_assert!(l <= u);
            self.lower[i] = l;
            self.upper[i] = u;
        }
    }

    pub fn update_from_posterior(&mut self, post: &DomainPosterior<T>) {
        self.update(post.means(), &post.variances());
    }

    /// Returns the bounds after intersecting with `model`'s posterior.
    pub fn updated(&self, model: &GpModel<T>, beta_sqrt: T) -> Self {
        let (m, v) = model.posterior_all();
        let mut next = self.clone();
        next.beta_sqrt = beta_sqrt;
        next.update(&m, &v);
        next
    }

    #[inline]
    pub fn width(&self, at: LocationId) -> T {
        self.upper[at.0] - self.lower[at.0]
    }

    pub fn widths(&self) -> Vec<T> {
        self.upper.iter().zip(&self.lower).map(|(&u, &l)| u - l).collect()
    }
}

/// A learned function: joint posterior plus its running confidence bounds.
#[derive(Clone, Debug)]
pub struct FieldBelief<T> {
    posterior: DomainPosterior<T>,
    bounds: ConfidenceBounds<T>,
}

impl<T: Scalar> FieldBelief<T> {
    /// Prior belief; the bounds start at the prior interval `±β^{1/2}σ_k`.
    pub fn new(kernel: KernelSpec<T>, noise_var: T, domain: &GridDomain<T>, beta_sqrt: T) -> Result<Self> {
        if !(beta_sqrt > T::zero()) || !beta_sqrt.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta_sqrt}")));
        }
        let posterior = DomainPosterior::from_model(&GpModel::new(kernel, noise_var, domain)?)?;
        let mut bounds = ConfidenceBounds::unbounded(domain.len(), T::zero(), kernel.output_scale.sqrt(), beta_sqrt);
        bounds.update_from_posterior(&posterior);
        Ok(Self { posterior, bounds })
    }

    /// A belief whose bounds are fixed to `lower`/`upper` before learning.
    pub fn with_bounds(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        let beta = self.bounds.beta_sqrt;
        self.bounds = ConfidenceBounds::fixed(lower, upper, beta);
        self
    }

    /// Conditions on a batch of observations, then tightens the bounds once.
    pub fn observe(&mut self, batch: &[(LocationId, T)]) -> Result<()> {
        for &(at, y) in batch {
            self.posterior.observe(at, y)?;
        }
        if !batch.is_empty() {
            self.bounds.update_from_posterior(&self.posterior);
        }
        Ok(())
    }

    pub fn posterior(&self) -> &DomainPosterior<T> {
        &self.posterior
    }

    pub fn bounds(&self) -> &ConfidenceBounds<T> {
        &self.bounds
    }

    pub fn lower(&self) -> &[T] {
        &self.bounds.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.bounds.upper
    }

    pub fn width(&self, v: LocationId) -> T {
        self.bounds.width(v)
    }

    pub fn widths(&self) -> Vec<T> {
        self.bounds.widths()
    }
}

/// `B + 4σ sqrt(γ + 1 + ln(1/δ))`, the confidence multiplier from the
/// regret analysis. `gamma` (information capacity) must be supplied.
pub fn theoretical_beta_sqrt(rkhs_bound: f64, noise_sd: f64, gamma: f64, delta: f64) -> f64 {
    rkhs_bound + 4.0 * noise_sd * (gamma + 1.0 + (1.0 / delta).ln()).sqrt()
}
