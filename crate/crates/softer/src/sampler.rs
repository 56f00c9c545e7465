//! Gibbs sampler for the unstructured model: every full conditional in
//! closed form, swept in a fixed order, with slice-level Gaussian updates for
//! the component tensors.
//!
//! Each conditional's parameters are computed by a dedicated `cond_*` method
//! and the draw consumes exactly those parameters; the single-site tests
//! validate the same code path the sampler runs.
//!
//! Sweep order: (mu, delta); tau2; sigma2; gamma block (all gamma, then
//! tau_gamma, then per (k, d) lambda followed by its w vector); beta slices;
//! zeta. Lambda's conditional has the w block marginalized out, so w must be
//! redrawn immediately after it: the pair (lambda, w) then forms one exact
//! blocked draw. Drawing lambda after w without a refresh would leave the
//! pair independent given the rest, which the prior-invariance check detects.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SofterError};
use crate::gig::{sample_gig, GigParams};
use crate::model::{
    draw_gamma, ChainRecord, ChainSamples, Dataset, ParameterState, SofterConfig, Symmetry,
};
use crate::tensor::{slice_offsets, DenseTensor};

/// Jitter added to the diagonal on a failed Cholesky factorization before
/// one retry.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// A reproducible RNG handle: chain c of a run with master seed s uses
/// stream (s, c).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub config_hash: String,
    pub seed: u64,
    pub stream: u64,
    /// Completed sweeps.
    pub iteration: usize,
    /// ChaCha counter position, restored on resume.
    pub rng_word_pos: u128,
    pub state: ParameterState,
    pub records: Vec<ChainRecord>,
}

/// One running chain: the parameter state plus the precomputed tables and
/// residual vector that make the sweep cheap.
pub struct Chain<'a> {
    config: &'a SofterConfig,
    dataset: &'a Dataset,
    stream: RngStream,
    rng: ChaCha20Rng,
    state: ParameterState,
    iteration: usize,
    records: Vec<ChainRecord>,
    /// prod(dims)
    l: usize,
    sum_p: usize,
    /// Flat predictor matrix, n rows of length l in canonical entry order.
    x: Vec<f64>,
    /// Flat intercept-plus-covariate design, n rows of length p + 1.
    ct: Vec<f64>,
    /// Gram of `ct`.
    ctc: DMatrix<f64>,
    /// y_i - mu - c_i' delta - <X_i, B> under the current state.
    resid: Vec<f64>,
    /// Scratch for the composed coefficient tensor.
    b_buf: Vec<f64>,
    /// offsets[k][j]: linear offsets of mode-(k+1) slice j+1, ascending.
    offsets: Vec<Vec<Vec<usize>>>,
    /// gram[k][j]: M x M slice Gram sum_i x_i[S[m]] x_i[S[m']] (soft mode
    /// only; hard mode never needs it).
    gram: Vec<Vec<Vec<f64>>>,
}

impl<'a> Chain<'a> {
    pub fn new(config: &'a SofterConfig, dataset: &'a Dataset, stream: RngStream) -> Result<Self> {
        let mut rng = stream.rng();
        let state = ParameterState::init(config, dataset, &mut rng)?;
        Self::with_parts(config, dataset, stream, rng, state, 0, Vec::new())
    }

    /// Builds a chain around an externally supplied state; the residual
    /// vector and tables are reconstructed from scratch.
    pub fn from_state(
        config: &'a SofterConfig,
        dataset: &'a Dataset,
        stream: RngStream,
        state: ParameterState,
    ) -> Result<Self> {
        let rng = stream.rng();
        Self::with_parts(config, dataset, stream, rng, state, 0, Vec::new())
    }

    pub fn resume(
        config: &'a SofterConfig,
        dataset: &'a Dataset,
        ckpt: ChainCheckpoint,
    ) -> Result<Self> {
        if ckpt.config_hash != config.hash() {
            return Err(SofterError::VersionMismatch(format!(
                "checkpoint was written under config {} but the current config hashes to {}",
                ckpt.config_hash,
                config.hash()
            )));
        }
        let stream = RngStream { seed: ckpt.seed, stream: ckpt.stream };
        let mut rng = stream.rng();
        rng.set_word_pos(ckpt.rng_word_pos);
        Self::with_parts(config, dataset, stream, rng, ckpt.state, ckpt.iteration, ckpt.records)
    }

    fn with_parts(
        config: &'a SofterConfig,
        dataset: &'a Dataset,
        stream: RngStream,
        rng: ChaCha20Rng,
        mut state: ParameterState,
        iteration: usize,
        records: Vec<ChainRecord>,
    ) -> Result<Self> {
        config.validate()?;
        dataset.check_config(config)?;
        if config.symmetry != Symmetry::None {
            return Err(SofterError::Invalid(
                "symmetric configurations run through the symmetric sampler".into(),
            ));
        }
        check_state_shape(config, dataset, &state)?;
        if config.hard_mode {
            sync_hard_beta(config, &mut state)?;
        }
        let n = dataset.n();
        let l = config.tensor_len();
        let k = config.k();
        let sum_p: usize = config.dims.iter().sum();
        let mut x = Vec::with_capacity(n * l);
        for t in dataset.predictors() {
            x.extend_from_slice(t.values());
        }
        let q = dataset.p() + 1;
        let mut ct = Vec::with_capacity(n * q);
        for row in dataset.covariates() {
            ct.push(1.0);
            ct.extend_from_slice(row);
        }
        let mut ctc = DMatrix::zeros(q, q);
        for i in 0..n {
            let r = &ct[i * q..(i + 1) * q];
            for a in 0..q {
                for b in 0..q {
                    ctc[(a, b)] += r[a] * r[b];
                }
            }
        }
        let mut offsets = Vec::with_capacity(k);
        for kk in 0..k {
            let per: Vec<Vec<usize>> = (1..=config.dims[kk])
                .map(|j| slice_offsets(&config.dims, kk + 1, j))
                .collect();
            offsets.push(per);
        }
        let gram = if config.hard_mode {
            vec![Vec::new(); k]
        } else {
            offsets
                .iter()
                .map(|per| {
                    per.iter()
                        .map(|s| {
                            let m = s.len();
                            let mut g = vec![0.0; m * m];
                            for i in 0..n {
                                let xi = &x[i * l..(i + 1) * l];
                                for a in 0..m {
                                    let xa = xi[s[a]];
                                    if xa != 0.0 {
                                        for b in 0..m {
                                            g[a * m + b] += xa * xi[s[b]];
                                        }
                                    }
                                }
                            }
                            g
                        })
                        .collect()
                })
                .collect()
        };
        let mut chain = Chain {
            config,
            dataset,
            stream,
            rng,
            state,
            iteration,
            records,
            l,
            sum_p,
            x,
            ct,
            ctc,
            resid: vec![0.0; n],
            b_buf: vec![0.0; l],
            offsets,
            gram,
        };
        chain.refresh_residuals();
        Ok(chain)
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn records(&self) -> &[ChainRecord] {
        &self.records
    }

    pub fn checkpoint(&self) -> ChainCheckpoint {
        ChainCheckpoint {
            config_hash: self.config.hash(),
            seed: self.stream.seed,
            stream: self.stream.stream,
            iteration: self.iteration,
            rng_word_pos: self.rng.get_word_pos(),
            state: self.state.clone(),
            records: self.records.clone(),
        }
    }

    pub fn into_samples(self) -> ChainSamples {
        ChainSamples {
            config_hash: self.config.hash(),
            seed: self.stream.seed,
            stream: self.stream.stream,
            iterations: self.iteration,
            burn_in: self.config.sampler.burn_in,
            thin: self.config.sampler.thin,
            records: self.records,
        }
    }

    /// Recomposes the coefficient tensor and the residual vector from the
    /// current state; called at the start of every sweep so incremental
    /// residual updates cannot accumulate drift.
    fn refresh_residuals(&mut self) {
        self.compose_into_buf();
        let n = self.dataset.n();
        let q = self.dataset.p() + 1;
        for i in 0..n {
            let xi = &self.x[i * self.l..(i + 1) * self.l];
            let mut fit = self.state.mu;
            let row = &self.ct[i * q..(i + 1) * q];
            for (a, dl) in self.state.delta.iter().enumerate() {
                fit += row[a + 1] * dl;
            }
            let mut inner = 0.0;
            for (xv, bv) in xi.iter().zip(&self.b_buf) {
                inner += xv * bv;
            }
            self.resid[i] = self.dataset.y()[i] - fit - inner;
        }
    }

    fn compose_into_buf(&mut self) {
        self.b_buf.fill(0.0);
        for d in 0..self.config.d {
            for off in 0..self.l {
                let mut prod = 1.0;
                for k in 0..self.config.k() {
                    prod *= self.state.beta[k][d].values()[off];
                }
                self.b_buf[off] += prod;
            }
        }
    }

    /// Entrywise product of the other-mode component tensors over a slice:
    /// out[m] = prod_{l != k} B_l^(d)[S[m]].
    fn other_product(&self, k: usize, d: usize, s: &[usize]) -> Vec<f64> {
        let mut out = vec![1.0; s.len()];
        for kk in 0..self.config.k() {
            if kk == k {
                continue;
            }
            let vals = self.state.beta[kk][d].values();
            for (o, &off) in out.iter_mut().zip(s) {
                *o *= vals[off];
            }
        }
        out
    }

    /// v[m] = sum_i x_i[S[m]] resid_i.
    fn xv_slice(&self, s: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; s.len()];
        for i in 0..self.dataset.n() {
            let xi = &self.x[i * self.l..(i + 1) * self.l];
            let r = self.resid[i];
            if r != 0.0 {
                for (vm, &off) in v.iter_mut().zip(s) {
                    *vm += xi[off] * r;
                }
            }
        }
        v
    }

    // --- conditional parameters ---

    /// Gaussian conditional of (mu, delta): returns (mean, precision).
    pub fn cond_mu_delta(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        cond_mu_delta_shared(
            &self.ct,
            &self.ctc,
            &self.resid,
            self.state.mu,
            &self.state.delta,
            self.state.tau2,
            self.config.hyper.prior_sd_mu_delta,
        )
    }

    /// Inverse-gamma conditional of tau2: returns (shape, scale).
    pub fn cond_tau2(&self) -> (f64, f64) {
        let h = &self.config.hyper;
        let ssr: f64 = self.resid.iter().map(|r| r * r).sum();
        (h.a_tau2 + self.dataset.n() as f64 / 2.0, h.b_tau2 + ssr / 2.0)
    }

    /// Generalized inverse Gaussian conditional of sigma2_k.
    pub fn cond_sigma2(&self, k: usize) -> Result<GigParams> {
        let h = &self.config.hyper;
        let d = self.config.d;
        let mut bstar = 0.0;
        for dd in 0..d {
            let zd = self.state.zeta_floor(dd);
            let mut quad = 0.0;
            for (j, &g) in self.state.gamma[k][dd].iter().enumerate() {
                for &off in &self.offsets[k][j] {
                    let r = self.state.beta[k][dd].values()[off] - g;
                    quad += r * r;
                }
            }
            bstar += quad / zd;
        }
        let p = h.a_sigma - (d * self.l) as f64 / 2.0;
        GigParams::new(p, 2.0 * h.b_sigma, bstar)
    }

    /// Gaussian conditional of gamma_{k,j}^(d) given the slice entries it
    /// centers: returns (mean, variance).
    pub fn cond_gamma(&self, k: usize, d: usize, j: usize) -> (f64, f64) {
        let zd = self.state.zeta_floor(d);
        let prior_var = self.state.tau_gamma * zd * self.state.w[k][d][j];
        let m_k = (self.l / self.config.dims[k]) as f64;
        let prec = 1.0 / prior_var + m_k / (self.state.sigma2[k] * zd);
        let sum_beta: f64 = self.offsets[k][j]
            .iter()
            .map(|&off| self.state.beta[k][d].values()[off])
            .sum();
        let var = 1.0 / prec;
        (var * sum_beta / (self.state.sigma2[k] * zd), var)
    }

    /// Gaussian conditional of gamma_{k,j}^(d) in hard mode, where the
    /// likelihood acts on gamma directly through the products of the other
    /// modes' slice means: returns (mean, variance).
    pub fn cond_gamma_hard(&self, k: usize, d: usize, j: usize) -> (f64, f64) {
        let zd = self.state.zeta_floor(d);
        let prior_var = self.state.tau_gamma * zd * self.state.w[k][d][j];
        let s = &self.offsets[k][j];
        let o = self.other_product(k, d, s);
        let cur = self.state.gamma[k][d][j];
        let mut s_psi2 = 0.0;
        let mut s_psi_resid = 0.0;
        for i in 0..self.dataset.n() {
            let xi = &self.x[i * self.l..(i + 1) * self.l];
            let mut psi = 0.0;
            for (m, &off) in s.iter().enumerate() {
                psi += xi[off] * o[m];
            }
            s_psi2 += psi * psi;
            s_psi_resid += psi * self.resid[i];
        }
        let prec = 1.0 / prior_var + s_psi2 / self.state.tau2;
        // residual with this coefficient's own contribution restored
        let num = (s_psi_resid + cur * s_psi2) / self.state.tau2;
        (num / prec, 1.0 / prec)
    }

    pub fn cond_tau_gamma(&self) -> Result<GigParams> {
        let h = &self.config.hyper;
        let d = self.config.d;
        let mut bstar = 0.0;
        for k in 0..self.config.k() {
            for dd in 0..d {
                let zd = self.state.zeta_floor(dd);
                for (j, &g) in self.state.gamma[k][dd].iter().enumerate() {
                    bstar += g * g / (zd * self.state.w[k][dd][j]);
                }
            }
        }
        let p = h.a_taugamma - (d * self.sum_p) as f64 / 2.0;
        GigParams::new(p, 2.0 * h.b_taugamma, bstar)
    }

    /// Conditional of w_{k,j}^(d) given lambda and gamma.
    pub fn cond_w(&self, k: usize, d: usize, j: usize) -> Result<GigParams> {
        let zd = self.state.zeta_floor(d);
        let g = self.state.gamma[k][d][j];
        let lam = self.state.lambda[k][d];
        GigParams::new(0.5, lam * lam, g * g / (self.state.tau_gamma * zd))
    }

    /// Gamma conditional of lambda_k^(d) with its w block marginalized out
    /// (the slice means are then Laplace given lambda): returns
    /// (shape, rate).
    pub fn cond_lambda(&self, k: usize, d: usize) -> (f64, f64) {
        let h = &self.config.hyper;
        let zd = self.state.zeta_floor(d);
        let scale = (self.state.tau_gamma * zd).sqrt();
        let abs_sum: f64 = self.state.gamma[k][d].iter().map(|g| g.abs() / scale).sum();
        (h.a_lambda + self.config.dims[k] as f64, h.b_lambda + abs_sum)
    }

    /// Gaussian conditional of the free entries of mode-k slice j of
    /// B_k^(d): returns (mean, precision). The response contribution of the
    /// slice itself is reconstructed from the residual, so the parameters
    /// depend only on the rest of the state.
    pub fn cond_beta_slice(&self, k: usize, d: usize, j: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = &self.offsets[k][j];
        let m = s.len();
        let o = self.other_product(k, d, s);
        let g = &self.gram[k][j];
        let zd = self.state.zeta_floor(d);
        let prior_var = self.state.sigma2[k] * zd;
        let gamma_j = self.state.gamma[k][d][j];
        let tau2 = self.state.tau2;
        let v = self.xv_slice(s);
        let beta_vals = self.state.beta[k][d].values();
        // u[m] = sum_i x_i[S[m]] (resid_i + Psi_i' x_cur): the second term is
        // G (o . x_cur)
        let mut u = v;
        for a in 0..m {
            let mut acc = 0.0;
            for b in 0..m {
                acc += g[a * m + b] * o[b] * beta_vals[s[b]];
            }
            u[a] += acc;
        }
        let mut prec = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                prec[(a, b)] = o[a] * o[b] * g[a * m + b] / tau2;
            }
            prec[(a, a)] += 1.0 / prior_var;
        }
        let mut rhs = DVector::zeros(m);
        for a in 0..m {
            rhs[a] = gamma_j / prior_var + o[a] * u[a] / tau2;
        }
        let chol = cholesky_with_jitter(prec.clone(), "beta_slice")?;
        let mean = chol.solve(&rhs);
        Ok((mean, prec))
    }

    /// The generalized inverse Gaussian the zeta draw for component d uses
    /// before normalization.
    pub fn cond_zeta_raw(&self, d: usize) -> Result<GigParams> {
        let h = &self.config.hyper;
        let df = self.config.d as f64;
        let k = self.config.k();
        let mut bstar = 0.0;
        if !self.config.hard_mode {
            for kk in 0..k {
                let mut quad = 0.0;
                for (j, &g) in self.state.gamma[kk][d].iter().enumerate() {
                    for &off in &self.offsets[kk][j] {
                        let r = self.state.beta[kk][d].values()[off] - g;
                        quad += r * r;
                    }
                }
                bstar += quad / self.state.sigma2[kk];
            }
        }
        for kk in 0..k {
            for (j, &g) in self.state.gamma[kk][d].iter().enumerate() {
                bstar += g * g / (self.state.tau_gamma * self.state.w[kk][d][j]);
            }
        }
        let p = h.alpha / df - (k * (self.l + self.sum_p)) as f64 / 2.0;
        GigParams::new(p, 0.0, bstar)
    }

    // --- sweep steps ---

    pub(crate) fn step_mu_delta(&mut self) -> Result<()> {
        step_mu_delta_shared(
            &mut self.rng,
            &self.ct,
            &self.ctc,
            &mut self.resid,
            &mut self.state.mu,
            &mut self.state.delta,
            self.state.tau2,
            self.config.hyper.prior_sd_mu_delta,
        )
    }

    pub(crate) fn step_tau2(&mut self) -> Result<()> {
        let (shape, scale) = self.cond_tau2();
        let g = draw_gamma(&mut self.rng, shape, scale);
        let t = 1.0 / g;
        if !t.is_finite() || t <= 0.0 {
            return Err(SofterError::Numeric(format!("tau2 draw produced {t}")));
        }
        self.state.tau2 = t;
        Ok(())
    }

    pub(crate) fn step_sigma2(&mut self) -> Result<()> {
        for k in 0..self.config.k() {
            let p = self.cond_sigma2(k)?;
            let v = sample_gig(&p, &mut self.rng)
                .map_err(|e| SofterError::Numeric(format!("sigma2 draw: {e}")))?;
            self.state.sigma2[k] = v;
        }
        Ok(())
    }

    pub(crate) fn step_gamma_block(&mut self) -> Result<()> {
        for k in 0..self.config.k() {
            for d in 0..self.config.d {
                for j in 0..self.config.dims[k] {
                    if self.config.hard_mode {
                        let (mean, var) = self.cond_gamma_hard(k, d, j);
                        let new = mean + var.sqrt() * standard_normal(&mut self.rng);
                        self.apply_hard_gamma(k, d, j, new);
                    } else {
                        let (mean, var) = self.cond_gamma(k, d, j);
                        self.state.gamma[k][d][j] = mean + var.sqrt() * standard_normal(&mut self.rng);
                    }
                }
            }
        }
        let p = self.cond_tau_gamma()?;
        self.state.tau_gamma = sample_gig(&p, &mut self.rng)
            .map_err(|e| SofterError::Numeric(format!("tau_gamma draw: {e}")))?;
        for k in 0..self.config.k() {
            for d in 0..self.config.d {
                let (shape, rate) = self.cond_lambda(k, d);
                self.state.lambda[k][d] = draw_gamma(&mut self.rng, shape, rate);
                for j in 0..self.config.dims[k] {
                    let p = self.cond_w(k, d, j)?;
                    self.state.w[k][d][j] = sample_gig(&p, &mut self.rng)
                        .map_err(|e| SofterError::Numeric(format!("w draw: {e}")))?;
                }
            }
        }
        Ok(())
    }

    /// Writes a hard-mode gamma draw into the state, keeps the beta slice
    /// constant at it, and folds the fit change into the residuals.
    fn apply_hard_gamma(&mut self, k: usize, d: usize, j: usize, new: f64) {
        let old = self.state.gamma[k][d][j];
        self.state.gamma[k][d][j] = new;
        let s = std::mem::take(&mut self.offsets[k][j]);
        let o = self.other_product(k, d, &s);
        for &off in &s {
            self.state.beta[k][d].values_mut()[off] = new;
        }
        let diff = new - old;
        if diff != 0.0 {
            for i in 0..self.dataset.n() {
                let xi = &self.x[i * self.l..(i + 1) * self.l];
                let mut psi = 0.0;
                for (m, &off) in s.iter().enumerate() {
                    psi += xi[off] * o[m];
                }
                self.resid[i] -= diff * psi;
            }
        }
        self.offsets[k][j] = s;
    }

    pub(crate) fn step_beta_slices(&mut self) -> Result<()> {
        for k in 0..self.config.k() {
            for d in 0..self.config.d {
                for j in 0..self.config.dims[k] {
                    self.step_beta_slice_one(k, d, j)?;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn step_beta_slice_one(&mut self, k: usize, d: usize, j: usize) -> Result<()> {
        let (mean, prec) = self.cond_beta_slice(k, d, j)?;
        let draw = draw_gaussian(&mut self.rng, &mean, prec, "beta_slice")?;
        let s = std::mem::take(&mut self.offsets[k][j]);
        let o = self.other_product(k, d, &s);
        let mut dx = vec![0.0; s.len()];
        {
            let vals = self.state.beta[k][d].values_mut();
            for (m, &off) in s.iter().enumerate() {
                dx[m] = (draw[m] - vals[off]) * o[m];
                vals[off] = draw[m];
            }
        }
        for i in 0..self.dataset.n() {
            let xi = &self.x[i * self.l..(i + 1) * self.l];
            let mut dfit = 0.0;
            for (m, &off) in s.iter().enumerate() {
                dfit += xi[off] * dx[m];
            }
            self.resid[i] -= dfit;
        }
        self.offsets[k][j] = s;
        Ok(())
    }

    pub(crate) fn step_zeta(&mut self) -> Result<()> {
        let mut raw = Vec::with_capacity(self.config.d);
        for d in 0..self.config.d {
            let p = self.cond_zeta_raw(d)?;
            raw.push(
                sample_gig(&p, &mut self.rng)
                    .map_err(|e| SofterError::Numeric(format!("zeta draw: {e}")))?,
            );
        }
        let sum: f64 = raw.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(SofterError::Numeric(format!("zeta draws sum to {sum}")));
        }
        for (z, r) in self.state.zeta.iter_mut().zip(&raw) {
            *z = r / sum;
        }
        Ok(())
    }

    /// One full Gibbs sweep; increments the iteration counter and records
    /// the draw when the thinning schedule keeps it.
    pub fn sweep(&mut self) -> Result<()> {
        self.refresh_residuals();
        let it = self.iteration + 1;
        let named = |block: &str, e: SofterError| {
            SofterError::Numeric(format!("sweep {it}, block {block}: {e}"))
        };
        self.step_mu_delta().map_err(|e| named("mu_delta", e))?;
        self.step_tau2().map_err(|e| named("tau2", e))?;
        if !self.config.hard_mode {
            self.step_sigma2().map_err(|e| named("sigma2", e))?;
        }
        self.step_gamma_block().map_err(|e| named("gamma", e))?;
        if !self.config.hard_mode {
            self.step_beta_slices().map_err(|e| named("beta", e))?;
        }
        self.step_zeta().map_err(|e| named("zeta", e))?;
        self.iteration = it;
        let s = &self.config.sampler;
        if it > s.burn_in && (it - s.burn_in) % s.thin == 0 {
            self.compose_into_buf();
            self.records.push(ChainRecord {
                mu: self.state.mu,
                delta: self.state.delta.clone(),
                tau2: self.state.tau2,
                b: DenseTensor::new(self.config.dims.clone(), self.b_buf.clone())?,
                sigma2: self.state.sigma2.clone(),
                zeta: self.state.zeta.clone(),
            });
        }
        Ok(())
    }

    /// Sweeps until the configured iteration count is reached.
    pub fn run(&mut self) -> Result<()> {
        while self.iteration < self.config.sampler.iterations {
            self.sweep()?;
        }
        Ok(())
    }
}

/// The exact log full-conditional density of the component-weight vector,
/// up to an additive constant: the Dirichlet exponent plus every variance
/// term that scales with a component weight. The sampler's normalized draw
/// approximates this density; the single-site test compares against it.
pub fn zeta_exact_log_conditional(state: &ParameterState, config: &SofterConfig) -> f64 {
    let h = &config.hyper;
    let df = config.d as f64;
    let l = config.tensor_len();
    let sum_p: usize = config.dims.iter().sum();
    let mut acc = 0.0;
    for d in 0..config.d {
        let zd = state.zeta_floor(d);
        let count = if config.hard_mode { sum_p } else { config.k() * l + sum_p };
        let e_d = (h.alpha / df - 1.0) - count as f64 / 2.0;
        let mut q_d = 0.0;
        for k in 0..config.k() {
            if !config.hard_mode {
                let mut quad = 0.0;
                for (j, &g) in state.gamma[k][d].iter().enumerate() {
                    for &off in &slice_offsets(&config.dims, k + 1, j + 1) {
                        let r = state.beta[k][d].values()[off] - g;
                        quad += r * r;
                    }
                }
                q_d += quad / state.sigma2[k];
            }
            for (j, &g) in state.gamma[k][d].iter().enumerate() {
                q_d += g * g / (state.tau_gamma * state.w[k][d][j]);
            }
        }
        acc += e_d * zd.ln() - q_d / (2.0 * zd);
    }
    acc
}

fn check_state_shape(config: &SofterConfig, dataset: &Dataset, state: &ParameterState) -> Result<()> {
    let k = config.k();
    let d = config.d;
    let shape_err = |what: &str| Err(SofterError::Shape(format!("state {what} does not match config")));
    if state.gamma.len() != k || state.beta.len() != k || state.w.len() != k || state.lambda.len() != k {
        return shape_err("mode count");
    }
    for kk in 0..k {
        if state.gamma[kk].len() != d || state.beta[kk].len() != d || state.w[kk].len() != d || state.lambda[kk].len() != d {
            return shape_err("rank");
        }
        for dd in 0..d {
            if state.gamma[kk][dd].len() != config.dims[kk] || state.w[kk][dd].len() != config.dims[kk] {
                return shape_err("slice-mean length");
            }
            if state.beta[kk][dd].dims() != config.dims {
                return shape_err("component tensor dims");
            }
        }
    }
    if state.sigma2.len() != k || state.zeta.len() != d || state.delta.len() != dataset.p() {
        return shape_err("vector length");
    }
    Ok(())
}

/// In hard mode the component tensors are a broadcast of the slice means;
/// reasserted when a chain is (re)built around an external state.
fn sync_hard_beta(config: &SofterConfig, state: &mut ParameterState) -> Result<()> {
    for k in 0..config.k() {
        for d in 0..config.d {
            for j in 0..config.dims[k] {
                let g = state.gamma[k][d][j];
                for &off in &slice_offsets(&config.dims, k + 1, j + 1) {
                    state.beta[k][d].values_mut()[off] = g;
                }
            }
        }
    }
    Ok(())
}

/// Gaussian conditional of (mu, delta) given everything else, shared by the
/// unstructured and symmetric chains. `ct` is the n x (p+1) design with a
/// leading 1 per row; `resid` excludes nothing, so the intercept and
/// covariate contributions are added back before the normal equations.
pub(crate) fn cond_mu_delta_shared(
    ct: &[f64],
    ctc: &DMatrix<f64>,
    resid: &[f64],
    mu: f64,
    delta: &[f64],
    tau2: f64,
    prior_sd: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = delta.len() + 1;
    let s0 = prior_sd * prior_sd;
    let mut prec = ctc.clone() / tau2;
    for a in 0..q {
        prec[(a, a)] += 1.0 / s0;
    }
    // response with the tensor contribution removed
    let mut rhs = DVector::zeros(q);
    for (i, &res) in resid.iter().enumerate() {
        let row = &ct[i * q..(i + 1) * q];
        let mut fit = mu;
        for (a, dl) in delta.iter().enumerate() {
            fit += row[a + 1] * dl;
        }
        let rb = res + fit;
        for a in 0..q {
            rhs[a] += row[a] * rb;
        }
    }
    rhs /= tau2;
    let chol = cholesky_with_jitter(prec.clone(), "mu_delta")?;
    let mean = chol.solve(&rhs);
    Ok((mean, prec))
}

pub(crate) fn step_mu_delta_shared<R: Rng + ?Sized>(
    rng: &mut R,
    ct: &[f64],
    ctc: &DMatrix<f64>,
    resid: &mut [f64],
    mu: &mut f64,
    delta: &mut [f64],
    tau2: f64,
    prior_sd: f64,
) -> Result<()> {
    let (mean, prec) = cond_mu_delta_shared(ct, ctc, resid, *mu, delta, tau2, prior_sd)?;
    let draw = draw_gaussian(rng, &mean, prec, "mu_delta")?;
    let q = delta.len() + 1;
    let d_mu = draw[0] - *mu;
    let d_delta: Vec<f64> = (1..q).map(|a| draw[a] - delta[a - 1]).collect();
    *mu = draw[0];
    for a in 1..q {
        delta[a - 1] = draw[a];
    }
    for (i, res) in resid.iter_mut().enumerate() {
        let row = &ct[i * q..(i + 1) * q];
        let mut dfit = d_mu;
        for (a, dd) in d_delta.iter().enumerate() {
            dfit += row[a + 1] * dd;
        }
        *res -= dfit;
    }
    Ok(())
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn cholesky_with_jitter(prec: DMatrix<f64>, block: &str) -> Result<Cholesky<f64, Dyn>> {
    let m = prec.nrows();
    match Cholesky::new(prec.clone()) {
        Some(c) => Ok(c),
        None => {
            let mut jittered = prec;
            for a in 0..m {
                jittered[(a, a)] += CHOLESKY_JITTER;
            }
            Cholesky::new(jittered).ok_or_else(|| {
                SofterError::Numeric(format!(
                    "{block}: precision not positive definite even after jitter {CHOLESKY_JITTER}"
                ))
            })
        }
    }
}

/// Draw from N(mean, precision^{-1}) via x = mean + L^{-T} z with
/// precision = L L'.
pub(crate) fn draw_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    prec: DMatrix<f64>,
    block: &str,
) -> Result<DVector<f64>> {
    let q = mean.len();
    let chol = cholesky_with_jitter(prec, block)?;
    let z = DVector::from_fn(q, |_, _| standard_normal(rng));
    let lt = chol.l().transpose();
    let shift = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| SofterError::Numeric(format!("{block}: singular triangular solve")))?;
    let draw = mean + shift;
    if draw.iter().any(|v| !v.is_finite()) {
        return Err(SofterError::Numeric(format!("{block}: non-finite Gaussian draw")));
    }
    Ok(draw)
}

/// Runs one chain to completion on the given stream.
pub fn run_chain(config: &SofterConfig, dataset: &Dataset, stream: RngStream) -> Result<ChainSamples> {
    let mut chain = Chain::new(config, dataset, stream)?;
    chain.run()?;
    Ok(chain.into_samples())
}

/// Runs the configured number of chains (streams 0..chains), dispatching to
/// the symmetric sampler when the configuration declares structure. Chains
/// run in parallel when a multi-threaded rayon pool is active; results are
/// ordered by stream either way.
pub fn run_chains(config: &SofterConfig, dataset: &Dataset) -> Result<Vec<ChainSamples>> {
    use rayon::prelude::*;
    let seed = config.sampler.seed;
    (0..config.sampler.chains as u64)
        .into_par_iter()
        .map(|c| {
            let stream = RngStream { seed, stream: c };
            match config.symmetry {
                Symmetry::None => run_chain(config, dataset, stream),
                _ => crate::symmetric::run_chain_symmetric(config, dataset, stream),
            }
        })
        .collect()
}
