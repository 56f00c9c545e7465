//! The regression model: a scalar outcome regressed on scalar covariates and
//! a K-mode tensor predictor through a Frobenius inner product with a
//! coefficient tensor, plus the full latent-parameter state of its
//! hierarchical prior and the joint log-density used to validate every Gibbs
//! conditional.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{default_hyperparameters, Hyperparameters};
use crate::error::{Result, SofterError};
use crate::tensor::{frobenius_inner, parafac_compose, soft_compose, DenseTensor};

/// Floor applied to component weights and variance parameters wherever they
/// appear as variance multipliers, so conditionals never divide by zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Symmetry structure of the tensor predictor and coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    /// No structure; all tensor entries are free.
    #[default]
    None,
    /// K = 2 with square dims; predictors and coefficient are symmetric
    /// matrices with ignorable diagonals.
    Symmetric,
    /// K = 3 with p_1 = p_2; symmetric in the first two modes.
    SemiSymmetric,
}

/// Outcome family tag. Only the Gaussian family is supported; the tag exists
/// so configurations remain forward-compatible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeFamily {
    Gaussian,
}

/// MCMC run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    /// Total sweeps per chain, including burn-in.
    pub iterations: usize,
    /// Sweeps discarded from the front of each chain.
    pub burn_in: usize,
    /// Keep every thin-th post-burn-in sweep.
    pub thin: usize,
    /// Number of independent chains.
    pub chains: usize,
    /// Master seed; chain c uses RNG stream c.
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings { iterations: 2000, burn_in: 1000, thin: 1, chains: 2, seed: 0 }
    }
}

/// Complete model and sampler configuration; the single source of truth a
/// fit is derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SofterConfig {
    /// Tensor predictor extents p_1..p_K.
    pub dims: Vec<usize>,
    /// Rank D of the decomposition.
    pub d: usize,
    pub hyper: Hyperparameters,
    pub symmetry: Symmetry,
    /// Freeze every mode-k slice of B_k^(d) at its slice mean gamma,
    /// recovering the constrained (hard) decomposition as a baseline.
    pub hard_mode: bool,
    pub family: OutcomeFamily,
    pub sampler: SamplerSettings,
}

impl SofterConfig {
    /// The standard default configuration for the given dims and rank:
    /// calibrated hyperparameters targeting entry variance 1 with a 10%
    /// softening share.
    pub fn default_for(dims: Vec<usize>, d: usize) -> Result<Self> {
        let k = dims.len();
        let cfg = SofterConfig {
            dims,
            d,
            hyper: default_hyperparameters(k, d)?,
            symmetry: Symmetry::None,
            hard_mode: false,
            family: OutcomeFamily::Gaussian,
            sampler: SamplerSettings::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    /// Total entry count prod(dims).
    pub fn tensor_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&p| p == 0) {
            return Err(SofterError::Shape(format!("bad dims {:?}", self.dims)));
        }
        if self.d == 0 {
            return Err(SofterError::Invalid("rank d must be at least 1".into()));
        }
        if self.d != self.hyper.d {
            return Err(SofterError::Invalid(format!(
                "config rank {} disagrees with hyperparameter rank {}",
                self.d, self.hyper.d
            )));
        }
        self.hyper.validate()?;
        match self.symmetry {
            Symmetry::None => {}
            Symmetry::Symmetric => {
                if self.k() != 2 || self.dims[0] != self.dims[1] {
                    return Err(SofterError::Shape(format!(
                        "symmetric mode needs square matrix dims, got {:?}",
                        self.dims
                    )));
                }
            }
            Symmetry::SemiSymmetric => {
                if self.k() != 3 || self.dims[0] != self.dims[1] {
                    return Err(SofterError::Shape(format!(
                        "semi-symmetric mode needs K = 3 with p_1 = p_2, got {:?}",
                        self.dims
                    )));
                }
            }
        }
        if self.symmetry != Symmetry::None && self.hard_mode {
            return Err(SofterError::Invalid(
                "hard_mode is only available without symmetry".into(),
            ));
        }
        let s = &self.sampler;
        if s.iterations == 0 || s.burn_in >= s.iterations || s.thin == 0 || s.chains == 0 {
            return Err(SofterError::Invalid(format!(
                "sampler settings must satisfy iterations > burn_in >= 0, thin >= 1, chains >= 1: {s:?}"
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding; identifies the model a
    /// chain was drawn under.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&json);
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Outcomes, scalar covariates, and tensor predictors, shape-checked against
/// one another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    /// n rows of length p; empty rows mean no scalar covariates.
    covariates: Vec<Vec<f64>>,
    predictors: Vec<DenseTensor>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, covariates: Vec<Vec<f64>>, predictors: Vec<DenseTensor>) -> Result<Self> {
        let n = y.len();
        if covariates.len() != n || predictors.len() != n {
            return Err(SofterError::Shape(format!(
                "lengths disagree: {} outcomes, {} covariate rows, {} predictors",
                n,
                covariates.len(),
                predictors.len()
            )));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SofterError::NonFinite(format!("outcome {} is {v}", i + 1)));
        }
        let p = covariates.first().map_or(0, |c| c.len());
        for (i, row) in covariates.iter().enumerate() {
            if row.len() != p {
                return Err(SofterError::Shape(format!(
                    "covariate row {} has length {}, expected {p}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(SofterError::NonFinite(format!(
                    "covariate ({}, {}) is {v}",
                    i + 1,
                    j + 1
                )));
            }
        }
        let dims = predictors
            .first()
            .map(|t| t.dims().to_vec())
            .ok_or_else(|| SofterError::Shape("dataset needs at least one unit".into()))?;
        for (i, t) in predictors.iter().enumerate() {
            if t.dims() != dims {
                return Err(SofterError::Shape(format!(
                    "predictor {} has dims {:?}, expected {:?}",
                    i + 1,
                    t.dims(),
                    dims
                )));
            }
            if let Some((off, v)) = t.values().iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(SofterError::NonFinite(format!(
                    "predictor {} entry {:?} is {v}",
                    i + 1,
                    crate::tensor::index_from_offset(&dims, off)
                )));
            }
        }
        Ok(Dataset { y, covariates, predictors })
    }

    /// An empty dataset over the given dims; prior-only runs use this.
    pub fn empty(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&p| p == 0) {
            return Err(SofterError::Shape(format!("bad dims {dims:?}")));
        }
        Ok(Dataset { y: vec![], covariates: vec![], predictors: vec![] })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Scalar covariate count p.
    pub fn p(&self) -> usize {
        self.covariates.first().map_or(0, |c| c.len())
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn predictors(&self) -> &[DenseTensor] {
        &self.predictors
    }

    pub fn dims(&self) -> Option<&[usize]> {
        self.predictors.first().map(|t| t.dims())
    }

    /// Checks shape compatibility with a configuration.
    pub fn check_config(&self, config: &SofterConfig) -> Result<()> {
        if let Some(dims) = self.dims() {
            if dims != config.dims {
                return Err(SofterError::Shape(format!(
                    "dataset dims {:?} disagree with config dims {:?}",
                    dims, config.dims
                )));
            }
        }
        Ok(())
    }

    /// Verifies mode-1/2 symmetry of every predictor within `tol` and that
    /// diagonal entries (equal first two indices) are exactly zero. Called
    /// before fitting under a symmetric configuration; loaders zero the
    /// diagonals, this only validates.
    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        let Some(dims) = self.dims() else { return Ok(()) };
        let r = dims[0];
        if dims.len() < 2 || dims[1] != r {
            return Err(SofterError::Shape(format!(
                "symmetric check needs p_1 = p_2, got {dims:?}"
            )));
        }
        let rest: usize = dims[2..].iter().product();
        for (i, t) in self.predictors.iter().enumerate() {
            let v = t.values();
            for j1 in 0..r {
                for j2 in 0..r {
                    for s in 0..rest {
                        let a = v[(j1 * r + j2) * rest + s];
                        let b = v[(j2 * r + j1) * rest + s];
                        if j1 == j2 {
                            if a != 0.0 {
                                return Err(SofterError::Asymmetric(format!(
                                    "predictor {} has nonzero diagonal at ({}, {}), slice {}",
                                    i + 1,
                                    j1 + 1,
                                    j1 + 1,
                                    s + 1
                                )));
                            }
                        } else if (a - b).abs() > tol {
                            return Err(SofterError::Asymmetric(format!(
                                "predictor {} differs at ({}, {}) vs ({}, {}): {a} vs {b}",
                                i + 1,
                                j1 + 1,
                                j2 + 1,
                                j2 + 1,
                                j1 + 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One complete point of the posterior's latent space for the unstructured
/// model. Component layout: `gamma[k][d]` has length p_{k+1} (the slice
/// means of mode k+1), `beta[k][d]` shares the config dims, `w` mirrors
/// `gamma`, `lambda[k][d]` is scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub mu: f64,
    pub delta: Vec<f64>,
    pub tau2: f64,
    pub gamma: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<DenseTensor>>,
    pub sigma2: Vec<f64>,
    pub zeta: Vec<f64>,
    pub w: Vec<Vec<Vec<f64>>>,
    pub lambda: Vec<Vec<f64>>,
    pub tau_gamma: f64,
}

impl ParameterState {
    /// Component weight d with the variance floor applied; every conditional
    /// that divides by zeta uses this accessor.
    pub fn zeta_floor(&self, d: usize) -> f64 {
        self.zeta[d].max(VARIANCE_FLOOR)
    }

    /// Composes the coefficient tensor from the current state. In hard mode
    /// the slice constraint makes this the rank-D outer-product sum of the
    /// gamma vectors; otherwise it is the sum of Hadamard products of the
    /// full component tensors.
    pub fn compose_b(&self, config: &SofterConfig) -> Result<DenseTensor> {
        if config.hard_mode {
            let factors: Vec<Vec<Vec<f64>>> = (0..config.d)
                .map(|d| (0..config.k()).map(|k| self.gamma[k][d].clone()).collect())
                .collect();
            parafac_compose(&factors)
        } else {
            let components: Vec<Vec<DenseTensor>> = (0..config.d)
                .map(|d| (0..config.k()).map(|k| self.beta[k][d].clone()).collect())
                .collect();
            soft_compose(&components)
        }
    }

    /// Deterministic initialization used at the start of every chain:
    /// dispersion parameters at their prior means, gamma and beta drawn from
    /// their priors given those values, mu at the outcome mean.
    pub fn init<R: Rng + ?Sized>(config: &SofterConfig, dataset: &Dataset, rng: &mut R) -> Result<Self> {
        config.validate()?;
        dataset.check_config(config)?;
        let h = &config.hyper;
        let k = config.k();
        let d = config.d;
        let zeta = vec![1.0 / d as f64; d];
        let sigma2 = vec![h.a_sigma / h.b_sigma; k];
        let tau_gamma = h.a_taugamma / h.b_taugamma;
        let lambda_init = h.a_lambda / h.b_lambda;
        // prior mean of an exponential with rate lambda^2 / 2
        let w_init = 2.0 / (lambda_init * lambda_init);
        let mut gamma = vec![vec![Vec::new(); d]; k];
        let mut w = vec![vec![Vec::new(); d]; k];
        let lambda = vec![vec![lambda_init; d]; k];
        let mut beta = vec![Vec::with_capacity(d); k];
        for kk in 0..k {
            for dd in 0..d {
                let pk = config.dims[kk];
                let g_sd = (tau_gamma * zeta[dd] * w_init).sqrt();
                let g: Vec<f64> = (0..pk).map(|_| draw_normal(rng, 0.0, g_sd)).collect();
                w[kk][dd] = vec![w_init; pk];
                gamma[kk][dd] = g;
            }
        }
        for kk in 0..k {
            for dd in 0..d {
                let b_sd = (sigma2[kk] * zeta[dd]).sqrt();
                let t = beta_from_gamma(config, kk, &gamma[kk][dd], |g| {
                    if config.hard_mode || b_sd == 0.0 {
                        g
                    } else {
                        draw_normal(rng, g, b_sd)
                    }
                })?;
                beta[kk].push(t);
            }
        }
        let n = dataset.n();
        let mu = if n > 0 { dataset.y().iter().sum::<f64>() / n as f64 } else { 0.0 };
        Ok(ParameterState {
            mu,
            delta: vec![0.0; dataset.p()],
            tau2: 1.0,
            gamma,
            beta,
            sigma2,
            zeta,
            w,
            lambda,
            tau_gamma,
        })
    }

    /// One independent draw of every parameter from the prior; the basis of
    /// the prior-moment oracle and the prior-invariance sampler check.
    pub fn draw_prior<R: Rng + ?Sized>(config: &SofterConfig, p_covariates: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = &config.hyper;
        let k = config.k();
        let d = config.d;
        let zeta = draw_dirichlet(rng, h.alpha / d as f64, d);
        let sigma2: Vec<f64> = (0..k).map(|_| draw_gamma(rng, h.a_sigma, h.b_sigma)).collect();
        let tau_gamma = draw_gamma(rng, h.a_taugamma, h.b_taugamma);
        let mut gamma = vec![vec![Vec::new(); d]; k];
        let mut w = vec![vec![Vec::new(); d]; k];
        let mut lambda = vec![vec![0.0; d]; k];
        for kk in 0..k {
            for dd in 0..d {
                let pk = config.dims[kk];
                let l = draw_gamma(rng, h.a_lambda, h.b_lambda);
                lambda[kk][dd] = l;
                let exp = Exp::new(l * l / 2.0)
                    .map_err(|e| SofterError::Numeric(format!("exponential rate: {e}")))?;
                let wv: Vec<f64> = (0..pk).map(|_| exp.sample(rng)).collect();
                let gv: Vec<f64> = wv
                    .iter()
                    .map(|&wj| draw_normal(rng, 0.0, (tau_gamma * zeta[dd] * wj).sqrt()))
                    .collect();
                w[kk][dd] = wv;
                gamma[kk][dd] = gv;
            }
        }
        let mut beta = vec![Vec::with_capacity(d); k];
        for kk in 0..k {
            for dd in 0..d {
                let b_sd = (sigma2[kk] * zeta[dd]).sqrt();
                let t = beta_from_gamma(config, kk, &gamma[kk][dd], |g| {
                    if config.hard_mode { g } else { draw_normal(rng, g, b_sd) }
                })?;
                beta[kk].push(t);
            }
        }
        let mu = draw_normal(rng, 0.0, h.prior_sd_mu_delta);
        let delta: Vec<f64> = (0..p_covariates)
            .map(|_| draw_normal(rng, 0.0, h.prior_sd_mu_delta))
            .collect();
        let tau2 = 1.0 / draw_gamma(rng, h.a_tau2, h.b_tau2);
        Ok(ParameterState {
            mu,
            delta,
            tau2,
            gamma,
            beta,
            sigma2,
            zeta,
            w,
            lambda,
            tau_gamma,
        })
    }
}

/// Builds the mode-k component tensor whose mode-k slice j has entries
/// produced by `f(gamma_j)`, visiting entries in canonical order.
fn beta_from_gamma(
    config: &SofterConfig,
    k: usize,
    gamma_k: &[f64],
    mut f: impl FnMut(f64) -> f64,
) -> Result<DenseTensor> {
    DenseTensor::from_fn(config.dims.clone(), |idx| f(gamma_k[idx[k] - 1]))
}

pub(crate) fn draw_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd.max(0.0)).expect("finite normal parameters").sample(rng)
}

/// Gamma(shape, rate) draw.
pub(crate) fn draw_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("admissible gamma parameters").sample(rng)
}

/// Symmetric Dirichlet draw by gamma normalization.
pub(crate) fn draw_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, d: usize) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive dirichlet concentration");
    let mut v: Vec<f64> = (0..d).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in &mut v {
            *x /= s;
        }
    } else {
        v.fill(1.0 / d as f64);
    }
    v
}

/// The linear predictor mu + C_i' delta + <X_i, B> for unit i (0-based),
/// recomposing B from the state.
pub fn linear_predictor(state: &ParameterState, dataset: &Dataset, config: &SofterConfig, i: usize) -> Result<f64> {
    if i >= dataset.n() {
        return Err(SofterError::Shape(format!("unit {} out of range, n = {}", i + 1, dataset.n())));
    }
    let b = state.compose_b(config)?;
    let cov: f64 = dataset.covariates()[i]
        .iter()
        .zip(&state.delta)
        .map(|(c, d)| c * d)
        .sum();
    Ok(state.mu + cov + frobenius_inner(&dataset.predictors()[i], &b)?)
}

/// Joint log-density of data and state under the configuration, up to an
/// additive constant that depends on hyperparameters only. Every
/// state-dependent term is present, which is what makes the single-site
/// conditional ratio tests exact.
///
/// In hard mode the beta tensors are a deterministic function of gamma, so
/// the beta and sigma2 blocks are excluded from the density.
pub fn log_joint(state: &ParameterState, dataset: &Dataset, config: &SofterConfig) -> Result<f64> {
    let h = &config.hyper;
    let k = config.k();
    let d = config.d;
    let mut lp = 0.0;

    let block = |name: &str, v: f64| -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SofterError::Numeric(format!("log density of block {name} is {v}")))
        }
    };

    // likelihood
    if dataset.n() > 0 {
        let b = state.compose_b(config)?;
        let mut ssr = 0.0;
        for i in 0..dataset.n() {
            let cov: f64 = dataset.covariates()[i]
                .iter()
                .zip(&state.delta)
                .map(|(c, dl)| c * dl)
                .sum();
            let fit = state.mu + cov + frobenius_inner(&dataset.predictors()[i], &b)?;
            let r = dataset.y()[i] - fit;
            ssr += r * r;
        }
        lp += block(
            "likelihood",
            -0.5 * dataset.n() as f64 * state.tau2.ln() - ssr / (2.0 * state.tau2),
        )?;
    }

    // intercept and covariate coefficients
    let s0 = h.prior_sd_mu_delta * h.prior_sd_mu_delta;
    let quad: f64 = state.mu * state.mu + state.delta.iter().map(|x| x * x).sum::<f64>();
    lp += block("mu_delta", -quad / (2.0 * s0))?;

    // residual variance, inverse-gamma
    lp += block(
        "tau2",
        -(h.a_tau2 + 1.0) * state.tau2.ln() - h.b_tau2 / state.tau2,
    )?;

    // component weights, Dirichlet
    let mut zeta_term = 0.0;
    for dd in 0..d {
        zeta_term += (h.alpha / d as f64 - 1.0) * state.zeta[dd].max(VARIANCE_FLOOR).ln();
    }
    lp += block("zeta", zeta_term)?;

    // global scale tau_gamma, gamma prior
    lp += block(
        "tau_gamma",
        (h.a_taugamma - 1.0) * state.tau_gamma.ln() - h.b_taugamma * state.tau_gamma,
    )?;

    for kk in 0..k {
        // softening variances, gamma prior; absent in hard mode
        if !config.hard_mode {
            lp += block(
                "sigma2",
                (h.a_sigma - 1.0) * state.sigma2[kk].ln() - h.b_sigma * state.sigma2[kk],
            )?;
        }
        for dd in 0..d {
            let zd = state.zeta_floor(dd);
            let l = state.lambda[kk][dd];
            // row-shrinkage rate, gamma prior
            lp += block("lambda", (h.a_lambda - 1.0) * l.ln() - h.b_lambda * l)?;
            for j in 0..config.dims[kk] {
                let wj = state.w[kk][dd][j];
                let gj = state.gamma[kk][dd][j];
                // local scale, exponential with rate lambda^2 / 2
                lp += block("w", (l * l / 2.0).ln() - l * l * wj / 2.0)?;
                // slice mean, Gaussian with variance tau_gamma zeta w
                let var_g = state.tau_gamma * zd * wj;
                lp += block("gamma", -0.5 * var_g.ln() - gj * gj / (2.0 * var_g))?;
            }
            if !config.hard_mode {
                // slice entries, Gaussian around the slice mean
                let var_b = state.sigma2[kk] * zd;
                let offsets_per_slice = config.tensor_len() / config.dims[kk];
                let mut quad = 0.0;
                for (j, &gj) in state.gamma[kk][dd].iter().enumerate() {
                    for &off in &crate::tensor::slice_offsets(&config.dims, kk + 1, j + 1) {
                        let r = state.beta[kk][dd].values()[off] - gj;
                        quad += r * r;
                    }
                }
                lp += block(
                    "beta",
                    -0.5 * (config.dims[kk] * offsets_per_slice) as f64 * var_b.ln()
                        - quad / (2.0 * var_b),
                )?;
            }
        }
    }
    Ok(lp)
}

/// One retained draw of the monitored quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub mu: f64,
    pub delta: Vec<f64>,
    pub tau2: f64,
    /// Composed coefficient tensor at this sweep.
    pub b: DenseTensor,
    pub sigma2: Vec<f64>,
    pub zeta: Vec<f64>,
}

/// Thinned post-burn-in draws of one chain, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    /// Hash of the configuration the chain was drawn under.
    pub config_hash: String,
    pub seed: u64,
    /// RNG stream id, equal to the chain index.
    pub stream: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub records: Vec<ChainRecord>,
}

impl ChainSamples {
    /// Number of retained records implied by the iteration plan.
    pub fn expected_records(iterations: usize, burn_in: usize, thin: usize) -> usize {
        (iterations - burn_in) / thin
    }
}
