//! Incremental Gaussian mixture with block-independent input/output
//! structure.
//!
//! Each component models `p(x, y | j) = N(x; mu_x, C_x) N(y; mu_y, C_y)`.
//! Samples arrive one at a time: a sample that no component explains well
//! enough (joint log-density below `novelty_threshold`) seeds a new component;
//! otherwise every component absorbs the sample in proportion to its
//! posterior responsibility, unless that share falls under
//! `update_skip_threshold`, in which case the component (and its cached
//! inverse) is left untouched.

mod component;
mod snapshot;

pub use component::{GaussianBlock, MixtureComponent};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Components evaluated with worker threads once the mixture is this large.
const PAR_MIN_COMPONENTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgmmConfig {
    /// Minimum joint log-density a sample must reach under some component to
    /// avoid spawning a new one. `-inf` disables creation after the first
    /// component.
    pub novelty_threshold: f64,
    /// Per-dimension standard deviations of a freshly created component.
    pub sigma_ini_x: Vec<f64>,
    pub sigma_ini_y: Vec<f64>,
    /// Minimum proportional contribution `w_j / (mass_j + w_j)` for an update
    /// to be applied. Zero disables skipping.
    pub update_skip_threshold: f64,
    /// Smallest eigenvalue allowed in any covariance block.
    pub regularization_floor: f64,
    /// Cumulative prior mass covered by the prediction-eligible components.
    pub min_mass_fraction_for_prediction: f64,
}

pub const DEFAULT_NOVELTY_DISTANCE: f64 = 3.0;
pub const DEFAULT_UPDATE_SKIP: f64 = 1e-4;
pub const DEFAULT_REGULARIZATION_FLOOR: f64 = 1e-6;
pub const DEFAULT_MASS_FRACTION: f64 = 0.90;

impl IgmmConfig {
    /// Config with isotropic initial scales and the novelty threshold set at
    /// Mahalanobis distance [`DEFAULT_NOVELTY_DISTANCE`] from a fresh component.
    pub fn new(sigma_ini_x: Vec<f64>, sigma_ini_y: Vec<f64>) -> Self {
        let mut cfg = Self {
            novelty_threshold: 0.0,
            sigma_ini_x,
            sigma_ini_y,
            update_skip_threshold: DEFAULT_UPDATE_SKIP,
            regularization_floor: DEFAULT_REGULARIZATION_FLOOR,
            min_mass_fraction_for_prediction: DEFAULT_MASS_FRACTION,
        };
        cfg.novelty_threshold = cfg.fresh_log_density_at(DEFAULT_NOVELTY_DISTANCE);
        cfg
    }

    /// Initial scales as `fraction` times the per-feature standard deviation
    /// of a warm-up batch (floored at `1e-6`).
    pub fn from_warmup(xs: &[Vec<f64>], ys: &[Vec<f64>], fraction: f64) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InsufficientData("empty or unbalanced warm-up batch".into()));
        }
        let sx = column_std(xs).into_iter().map(|s| (s * fraction).max(1e-6)).collect();
        let sy = column_std(ys).into_iter().map(|s| (s * fraction).max(1e-6)).collect();
        Ok(Self::new(sx, sy))
    }

    pub fn dx(&self) -> usize {
        self.sigma_ini_x.len()
    }

    pub fn dy(&self) -> usize {
        self.sigma_ini_y.len()
    }

    /// Joint log-density of a point at Mahalanobis distance `d` from the
    /// centre of a freshly created component.
    pub fn fresh_log_density_at(&self, d: f64) -> f64 {
        let dim = (self.dx() + self.dy()) as f64;
        let log_det: f64 = self
            .sigma_ini_x
            .iter()
            .chain(self.sigma_ini_y.iter())
            .map(|s| 2.0 * s.ln())
            .sum();
        -0.5 * (dim * LN_2PI + log_det + d * d)
    }

    pub fn with_novelty_distance(mut self, d: f64) -> Self {
        self.novelty_threshold = self.fresh_log_density_at(d);
        self
    }

    pub fn with_update_skip(mut self, threshold: f64) -> Self {
        self.update_skip_threshold = threshold;
        self
    }

    pub fn with_mass_fraction(mut self, fraction: f64) -> Self {
        self.min_mass_fraction_for_prediction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_ini_x.is_empty() || self.sigma_ini_y.is_empty() {
            return Err(Error::InvalidConfig("block dimensions must be >= 1".into()));
        }
        if self
            .sigma_ini_x
            .iter()
            .chain(self.sigma_ini_y.iter())
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidConfig("initial std devs must be positive".into()));
        }
        if self.novelty_threshold.is_nan() || self.novelty_threshold == f64::INFINITY {
            return Err(Error::InvalidConfig("novelty threshold must be < +inf".into()));
        }
        if !(self.update_skip_threshold >= 0.0 && self.update_skip_threshold < 1.0) {
            return Err(Error::InvalidConfig("update skip threshold must lie in [0, 1)".into()));
        }
        if !(self.regularization_floor > 0.0 && self.regularization_floor.is_finite()) {
            return Err(Error::InvalidConfig("regularization floor must be positive".into()));
        }
        let f = self.min_mass_fraction_for_prediction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig("mass fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn column_std(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    (0..d)
        .map(|c| {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// What a call to [`Mixture::learn_one`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnOutcome {
    Created { index: usize },
    /// `(component, posterior weight)` for every component that absorbed the
    /// sample, plus how many were skipped as negligible.
    Updated {
        applied: Vec<(usize, f64)>,
        skipped: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    components: Vec<MixtureComponent>,
    n_samples: u64,
    config: IgmmConfig,
}

impl Mixture {
    pub fn new(config: IgmmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            components: Vec::new(),
            n_samples: 0,
            config,
        })
    }

    pub fn config(&self) -> &IgmmConfig {
        &self.config
    }

    pub fn dx(&self) -> usize {
        self.config.dx()
    }

    pub fn dy(&self) -> usize {
        self.config.dy()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &MixtureComponent {
        &self.components[j]
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.mass).sum()
    }

    /// `P(m_j) = mass_j / sum_k mass_k`.
    pub fn priors(&self) -> Vec<f64> {
        let total = self.total_mass();
        self.components.iter().map(|c| c.mass / total).collect()
    }

    /// Appends a component built by hand (tests, restores).
    pub fn push_component(&mut self, mut c: MixtureComponent) -> Result<usize> {
        if c.x.dim() != self.dx() || c.y.dim() != self.dy() {
            return Err(Error::DimensionMismatch {
                what: "component block dims",
                expected: self.dx() + self.dy(),
                actual: c.x.dim() + c.y.dim(),
            });
        }
        let index = self.components.len();
        if !c.refresh() {
            return Err(Error::SingularCovariance { component: index });
        }
        self.components.push(c);
        Ok(index)
    }

    pub(crate) fn set_n_samples(&mut self, n: u64) {
        self.n_samples = n;
    }

    pub fn add_collision_value(&mut self, j: usize, amount: f64) {
        self.components[j].collision_value += amount;
    }

    pub fn set_collision_value(&mut self, j: usize, value: f64) {
        self.components[j].collision_value = value;
    }

    /// Rebuilds every dirty density cache.
    pub fn refresh_caches(&mut self) -> Result<()> {
        for (j, c) in self.components.iter_mut().enumerate() {
            if !c.refresh() {
                return Err(Error::SingularCovariance { component: j });
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64], y: Option<&[f64]>) -> Result<()> {
        if x.len() != self.dx() {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.dx(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input vector"));
        }
        if let Some(y) = y {
            if y.len() != self.dy() {
                return Err(Error::DimensionMismatch {
                    what: "output vector",
                    expected: self.dy(),
                    actual: y.len(),
                });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("output vector"));
            }
        }
        Ok(())
    }

    /// `log N(x; mu_x, C_x) [+ log N(y; mu_y, C_y)]` for component `j`.
    pub fn component_loglik(&self, j: usize, x: &[f64], y: Option<&[f64]>) -> Result<f64> {
        self.check_input(x, y)?;
        self.component_loglik_unchecked(j, x, y)
    }

    fn component_loglik_unchecked(&self, j: usize, x: &[f64], y: Option<&[f64]>) -> Result<f64> {
        let c = &self.components[j];
        let lx = c
            .x
            .log_density(x)
            .ok_or(Error::SingularCovariance { component: j })?;
        match y {
            Some(y) => {
                let ly = c
                    .y
                    .log_density(y)
                    .ok_or(Error::SingularCovariance { component: j })?;
                Ok(lx + ly)
            }
            None => Ok(lx),
        }
    }

    fn all_logliks(&self, x: &[f64], y: Option<&[f64]>) -> Result<Vec<f64>> {
        par::auto(self.components.len(), PAR_MIN_COMPONENTS)
            .map_range(self.components.len(), |j| {
                self.component_loglik_unchecked(j, x, y)
            })
            .into_iter()
            .collect()
    }

    /// Absorbs one `(x, y)` sample. Non-finite samples are rejected and leave
    /// the mixture untouched.
    pub fn learn_one(&mut self, x: &[f64], y: &[f64]) -> Result<LearnOutcome> {
        self.check_input(x, Some(y))?;
        let created_at = self.n_samples;

        let logliks = if self.components.is_empty() {
            Vec::new()
        } else {
            self.all_logliks(x, Some(y))?
        };
        let best = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        if self.components.is_empty() || best < self.config.novelty_threshold {
            let index = self.components.len();
            let mut c = MixtureComponent::new(
                GaussianBlock::isotropic(x.to_vec(), &self.config.sigma_ini_x)?,
                GaussianBlock::isotropic(y.to_vec(), &self.config.sigma_ini_y)?,
                1.0,
                created_at,
            )?;
            c.x.regularize(self.config.regularization_floor);
            c.y.regularize(self.config.regularization_floor);
            if !c.refresh() {
                return Err(Error::SingularCovariance { component: index });
            }
            self.components.push(c);
            self.n_samples += 1;
            return Ok(LearnOutcome::Created { index });
        }

        let log_total_mass = self.total_mass().ln();
        let log_post: Vec<f64> = logliks
            .iter()
            .zip(&self.components)
            .map(|(ll, c)| c.mass.ln() - log_total_mass + ll)
            .collect();
        let norm = log_sum_exp(&log_post);

        let z_floor = self.config.regularization_floor;
        let skip = self.config.update_skip_threshold;
        let mut applied = Vec::new();
        let mut skipped = 0;
        for (j, lp) in log_post.iter().enumerate() {
            let w = (lp - norm).exp();
            let c = &mut self.components[j];
            let share = w / (c.mass + w);
            if !(share >= skip) || w == 0.0 {
                skipped += 1;
                continue;
            }
            c.mass += w;
            let omega = w / c.mass;
            c.x.absorb(x, omega, z_floor);
            c.y.absorb(y, omega, z_floor);
            applied.push((j, w));
        }
        for &(j, _) in &applied {
            if !self.components[j].refresh() {
                return Err(Error::SingularCovariance { component: j });
            }
        }
        self.n_samples += 1;
        Ok(LearnOutcome::Updated { applied, skipped })
    }

    /// Smallest highest-mass prefix of components whose cumulative prior
    /// reaches the configured fraction. Ties go to the older component.
    pub fn prediction_set(&self) -> Result<Vec<usize>> {
        if self.components.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let mut order: Vec<usize> = (0..self.components.len()).collect();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.components[a], &self.components[b]);
            cb.mass
                .total_cmp(&ca.mass)
                .then(ca.created_at.cmp(&cb.created_at))
                .then(a.cmp(&b))
        });
        let total = self.total_mass();
        let target = self.config.min_mass_fraction_for_prediction * total * (1.0 - 1e-12);
        let mut cum = 0.0;
        let mut take = order.len();
        for (i, &j) in order.iter().enumerate() {
            cum += self.components[j].mass;
            if cum >= target {
                take = i + 1;
                break;
            }
        }
        order.truncate(take);
        Ok(order)
    }

    /// `log mass_j + log N(x; mu_x_j, C_x_j)` for each index in `set`.
    /// The prior normalization is omitted; it cancels in every use.
    pub fn input_scores(&self, x: &[f64], set: &[usize]) -> Result<Vec<f64>> {
        self.check_input(x, None)?;
        set.iter()
            .map(|&j| Ok(self.components[j].mass.ln() + self.component_loglik_unchecked(j, x, None)?))
            .collect()
    }

    /// Most probable component for `x` among `set` with its posterior
    /// (normalized within `set`). Earlier entries of `set` win ties.
    pub fn select_component(&self, x: &[f64], set: &[usize]) -> Result<(usize, f64)> {
        if set.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let scores = self.input_scores(x, set)?;
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        let norm = log_sum_exp(&scores);
        Ok((set[best], (scores[best] - norm).exp()))
    }

    /// The `k` most probable components for `x` within `set`, best first.
    pub fn top_components(&self, x: &[f64], set: &[usize], k: usize) -> Result<Vec<usize>> {
        if set.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let scores = self.input_scores(x, set)?;
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(idx.into_iter().take(k.max(1)).map(|i| set[i]).collect())
    }

    /// `log p(y | x)` under the mixture truncated to `set`, priors renormalized.
    pub fn conditional_loglik(&self, x: &[f64], y: &[f64], set: &[usize]) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::EmptyMixture);
        }
        self.check_input(x, Some(y))?;
        let scores = self.input_scores(x, set)?;
        let joint: Vec<f64> = scores
            .iter()
            .zip(set)
            .map(|(s, &j)| {
                self.components[j]
                    .y
                    .log_density(y)
                    .map(|ly| s + ly)
                    .ok_or(Error::SingularCovariance { component: j })
            })
            .collect::<Result<_>>()?;
        Ok(log_sum_exp(&joint) - log_sum_exp(&scores))
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
