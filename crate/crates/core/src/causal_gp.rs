//! Causal multitask Gaussian process with a linear-model-of-
//! coregionalization kernel over the two treatment arms, host-conditioned
//! posterior, and closed-form information gains for candidate sites.
//!
//! The two conditional-outcome functions are jointly Gaussian with
//! matrix-valued kernel A0 k0 + A1 k1 (RBF base kernels with per-dimension
//! lengthscales). Conditioning on host data gives a posterior kernel; the
//! candidate-outcome covariance Sigma1, the CATE-at-host covariance
//! Sigma2 and their cross block Sigma12 assemble the joint from which both
//! information gains are log-determinant expressions.

use crate::data::TabularDataset;
use crate::linalg::{self, LdlFactors, LinalgError, Matrix};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("treatment arm {0} is empty")]
    EmptyArm(u8),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Symmetric PSD 2x2 coregionalization matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoregMatrix {
    pub var0: f64,
    pub var1: f64,
    pub cross: f64,
}

impl CoregMatrix {
    pub fn diagonal(var0: f64, var1: f64) -> Self {
        CoregMatrix { var0, var1, cross: 0.0 }
    }

    pub fn zero() -> Self {
        CoregMatrix { var0: 0.0, var1: 0.0, cross: 0.0 }
    }

    pub fn is_psd(&self) -> bool {
        self.var0 >= 0.0 && self.var1 >= 0.0 && self.cross * self.cross <= self.var0 * self.var1
    }

    fn entry(&self, a: usize, b: usize) -> f64 {
        match (a, b) {
            (0, 0) => self.var0,
            (1, 1) => self.var1,
            _ => self.cross,
        }
    }
}

/// Kernel hyperparameters: coregionalization matrices, per-dimension
/// squared lengthscales for each arm's RBF, and per-arm noise variances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmcKernelParams {
    pub a0: CoregMatrix,
    pub a1: CoregMatrix,
    pub lengthscales0: Vec<f64>,
    pub lengthscales1: Vec<f64>,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
}

impl LmcKernelParams {
    /// Unit defaults in `dim` covariate dimensions.
    pub fn unit(dim: usize) -> Self {
        LmcKernelParams {
            a0: CoregMatrix { var0: 1.0, var1: 0.5, cross: 0.3 },
            a1: CoregMatrix { var0: 0.5, var1: 1.0, cross: 0.3 },
            lengthscales0: vec![1.0; dim],
            lengthscales1: vec![1.0; dim],
            sigma0_sq: 1.0,
            sigma1_sq: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !self.a0.is_psd() || !self.a1.is_psd() {
            return Err(GpError::DimensionMismatch("coregionalization matrix not PSD".into()));
        }
        if self.lengthscales0.len() != self.lengthscales1.len() {
            return Err(GpError::DimensionMismatch("lengthscale dimension mismatch".into()));
        }
        if self
            .lengthscales0
            .iter()
            .chain(&self.lengthscales1)
            .any(|&l| !(l > 0.0))
        {
            return Err(GpError::DimensionMismatch("lengthscales must be positive".into()));
        }
        if !(self.sigma0_sq > 0.0) || !(self.sigma1_sq > 0.0) {
            return Err(GpError::DimensionMismatch("noise variances must be positive".into()));
        }
        Ok(())
    }

    fn rbf(&self, arm: usize, x: &[f64], z: &[f64]) -> f64 {
        let ls = if arm == 0 { &self.lengthscales0 } else { &self.lengthscales1 };
        let mut q = 0.0;
        for ((&a, &b), &l2) in x.iter().zip(z).zip(ls) {
            let d = a - b;
            q += d * d / l2;
        }
        (-0.5 * q).exp()
    }

    fn noise(&self, arm: u8) -> f64 {
        if arm == 0 {
            self.sigma0_sq
        } else {
            self.sigma1_sq
        }
    }
}

/// The 2x2 prior kernel block K(x, x') = A0 k0(x,x') + A1 k1(x,x').
pub fn kernel_eval(params: &LmcKernelParams, x: &[f64], z: &[f64]) -> Result<Matrix, GpError> {
    if x.len() != params.lengthscales0.len() || z.len() != params.lengthscales0.len() {
        return Err(GpError::DimensionMismatch(format!(
            "points of dim {}/{} vs lengthscale dim {}",
            x.len(),
            z.len(),
            params.lengthscales0.len()
        )));
    }
    let k0 = params.rbf(0, x, z);
    let k1 = params.rbf(1, x, z);
    Ok(Matrix::from_fn(2, 2, |a, b| {
        params.a0.entry(a, b) * k0 + params.a1.entry(a, b) * k1
    }))
}

fn prior_cov(params: &LmcKernelParams, x: &[f64], a: u8, z: &[f64], b: u8) -> f64 {
    let k0 = params.rbf(0, x, z);
    let k1 = params.rbf(1, x, z);
    params.a0.entry(a as usize, b as usize) * k0 + params.a1.entry(a as usize, b as usize) * k1
}

const JITTER_REL: f64 = 1e-8;

fn jitter_in_place(m: &mut Matrix) {
    let n = m.rows();
    if n == 0 {
        return;
    }
    let mean_diag = (0..n).map(|i| m[(i, i)].abs()).sum::<f64>() / n as f64;
    let eps = JITTER_REL * mean_diag.max(1.0);
    for i in 0..n {
        m[(i, i)] += eps;
    }
}

/// Host-conditioned GP state: the training design arranged untreated arm
/// first, the cached LDL of K + noise, and the weights for posterior means.
pub struct GpPosteriorState {
    pub params: LmcKernelParams,
    x_train: Matrix,
    arms: Vec<u8>,
    factors: LdlFactors,
    alpha: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

impl GpPosteriorState {
    /// Condition on host data with the given hyperparameters.
    pub fn condition(params: &LmcKernelParams, host: &TabularDataset) -> Result<Self, GpError> {
        params.validate()?;
        let y = host.outcomes().ok_or_else(|| {
            GpError::DimensionMismatch("host dataset must carry outcomes".into())
        })?;
        if host.treated_count() == 0 {
            return Err(GpError::EmptyArm(1));
        }
        if host.untreated_count() == 0 {
            return Err(GpError::EmptyArm(0));
        }
        // Arrange untreated rows first, treated rows after.
        let mut order: Vec<usize> = (0..host.n()).filter(|&i| host.treatments()[i] == 0).collect();
        order.extend((0..host.n()).filter(|&i| host.treatments()[i] == 1));
        let x_train =
            Matrix::from_fn(host.n(), host.dim(), |i, j| host.covariates()[(order[i], j)]);
        let arms: Vec<u8> = order.iter().map(|&i| host.treatments()[i]).collect();
        let y_ord: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let n = host.n();
        let mut k = Matrix::from_fn(n, n, |i, j| {
            prior_cov(params, x_train.row(i), arms[i], x_train.row(j), arms[j])
        });
        for i in 0..n {
            k[(i, i)] += params.noise(arms[i]);
        }
        jitter_in_place(&mut k);
        let factors = linalg::ldl_decompose(&k, linalg::default_pivot_tol(&k))?;
        if factors.d.iter().any(|&d| d <= 0.0) {
            return Err(GpError::Linalg(LinalgError::NotPsd { pivot: 0.0, index: 0 }));
        }
        let alpha = factors.solve_vec(&y_ord)?;
        let logdet: f64 = factors.d.iter().map(|d| d.ln()).sum();
        let quad: f64 = y_ord.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let lml = -0.5 * quad
            - 0.5 * logdet
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(GpPosteriorState {
            params: params.clone(),
            x_train,
            arms,
            factors,
            alpha,
            log_marginal_likelihood: lml,
        })
    }

    fn n_train(&self) -> usize {
        self.arms.len()
    }

    /// Cross-covariance of the training outcomes with query (point, arm)
    /// pairs, one query per column.
    fn cross_matrix(&self, queries: &[(&[f64], u8)]) -> Matrix {
        Matrix::from_fn(self.n_train(), queries.len(), |i, q| {
            prior_cov(&self.params, self.x_train.row(i), self.arms[i], queries[q].0, queries[q].1)
        })
    }

    fn solve_columns(&self, m: &Matrix) -> Result<Matrix, GpError> {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        let mut col = vec![0.0; m.rows()];
        for j in 0..m.cols() {
            for i in 0..m.rows() {
                col[i] = m[(i, j)];
            }
            let x = self.factors.solve_vec(&col)?;
            for i in 0..m.rows() {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }

    /// Posterior mean of f_arm at a point.
    pub fn posterior_mean(&self, x: &[f64], arm: u8) -> f64 {
        let c = self.cross_matrix(&[(x, arm)]);
        (0..self.n_train()).map(|i| c[(i, 0)] * self.alpha[i]).sum()
    }

    /// Posterior-mean CATE at a point: m_post(x, 1) - m_post(x, 0).
    pub fn predict_cate(&self, x: &[f64]) -> f64 {
        self.posterior_mean(x, 1) - self.posterior_mean(x, 0)
    }
}

/// The covariance blocks of (candidate outcomes, CATE at host points).
pub struct SigmaBlocks {
    pub sigma1: Matrix,
    pub sigma2: Matrix,
    pub sigma12: Matrix,
    pub sigma: Matrix,
    pub n_untreated: usize,
    pub n_treated: usize,
}

/// Assemble Sigma1 (candidate outcomes, arranged untreated arm first, plus
/// per-arm noise), Sigma2 (posterior covariance of the CATE vector on the
/// host points), their cross block and the joint. Everything is evaluated
/// under the posterior kernel, i.e. after conditioning on host data.
pub fn build_sigma_blocks(
    state: &GpPosteriorState,
    candidate: &TabularDataset,
) -> Result<SigmaBlocks, GpError> {
    let params = &state.params;
    // Candidate queries, untreated block first.
    let mut cand_order: Vec<usize> =
        (0..candidate.n()).filter(|&i| candidate.treatments()[i] == 0).collect();
    let n_untreated = cand_order.len();
    cand_order.extend((0..candidate.n()).filter(|&i| candidate.treatments()[i] == 1));
    let n_treated = cand_order.len() - n_untreated;
    let cand_queries: Vec<(&[f64], u8)> = cand_order
        .iter()
        .map(|&i| (candidate.covariate_row(i), candidate.treatments()[i]))
        .collect();

    let n_host = state.x_train.rows();
    let ne = cand_queries.len();

    // Cross covariances with the training set; for the CATE functional the
    // cross column is the arm-1 column minus the arm-0 column.
    let c_cand = state.cross_matrix(&cand_queries);
    let host_points: Vec<&[f64]> = (0..n_host).map(|i| state.x_train.row(i)).collect();
    let c_tau = {
        let q1: Vec<(&[f64], u8)> = host_points.iter().map(|&x| (x, 1u8)).collect();
        let q0: Vec<(&[f64], u8)> = host_points.iter().map(|&x| (x, 0u8)).collect();
        state.cross_matrix(&q1).sub(&state.cross_matrix(&q0))
    };
    let s_cand = state.solve_columns(&c_cand)?;
    let s_tau = state.solve_columns(&c_tau)?;

    // Sigma1: posterior kernel over candidate pairs plus the noise diagonal.
    let mut sigma1 = Matrix::from_fn(ne, ne, |i, j| {
        let (xi, ai) = cand_queries[i];
        let (xj, aj) = cand_queries[j];
        let prior = prior_cov(params, xi, ai, xj, aj);
        let mut corr = 0.0;
        for r in 0..n_host {
            corr += c_cand[(r, i)] * s_cand[(r, j)];
        }
        prior - corr
    });
    for i in 0..ne {
        sigma1[(i, i)] += params.noise(cand_queries[i].1);
    }
    if ne > 0 {
        jitter_in_place(&mut sigma1);
    }

    // Sigma2: posterior covariance of tau at the host points.
    let mut sigma2 = Matrix::from_fn(n_host, n_host, |u, v| {
        let xu = host_points[u];
        let xv = host_points[v];
        let prior = prior_cov(params, xu, 1, xv, 1) + prior_cov(params, xu, 0, xv, 0)
            - prior_cov(params, xu, 1, xv, 0)
            - prior_cov(params, xu, 0, xv, 1);
        let mut corr = 0.0;
        for r in 0..n_host {
            corr += c_tau[(r, u)] * s_tau[(r, v)];
        }
        prior - corr
    });
    jitter_in_place(&mut sigma2);

    // Sigma12: cross block between candidate outcomes and tau.
    let sigma12 = Matrix::from_fn(ne, n_host, |i, u| {
        let (xi, ai) = cand_queries[i];
        let xu = host_points[u];
        let prior = prior_cov(params, xi, ai, xu, 1) - prior_cov(params, xi, ai, xu, 0);
        let mut corr = 0.0;
        for r in 0..n_host {
            corr += c_cand[(r, i)] * s_tau[(r, u)];
        }
        prior - corr
    });

    let mut sigma = Matrix::zeros(ne + n_host, ne + n_host);
    sigma.set_block(0, 0, &sigma1);
    sigma.set_block(0, ne, &sigma12);
    sigma.set_block(ne, 0, &sigma12.transpose());
    sigma.set_block(ne, ne, &sigma2);

    Ok(SigmaBlocks { sigma1, sigma2, sigma12, sigma, n_untreated, n_treated })
}

/// Information gain on the conditional-outcome functions:
/// 1/2 log det Sigma1 - 1/2 (n0 log sigma0^2 + n1 log sigma1^2).
pub fn eig_f(state: &GpPosteriorState, candidate: &TabularDataset) -> Result<f64, GpError> {
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let blocks = build_sigma_blocks(state, candidate)?;
    let logdet = linalg::log_det_psd(&blocks.sigma1)?;
    let noise_term = blocks.n_untreated as f64 * state.params.sigma0_sq.ln()
        + blocks.n_treated as f64 * state.params.sigma1_sq.ln();
    Ok(0.5 * (logdet - noise_term))
}

/// Information gain on the CATE predictions at the host points: the
/// Gaussian mutual information 1/2 log(det Sigma1 det Sigma2 / det Sigma).
pub fn eig_tau_x0(state: &GpPosteriorState, candidate: &TabularDataset) -> Result<f64, GpError> {
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let blocks = build_sigma_blocks(state, candidate)?;
    let ld1 = linalg::log_det_psd(&blocks.sigma1)?;
    let ld2 = linalg::log_det_psd(&blocks.sigma2)?;
    let ld = linalg::log_det_psd(&blocks.sigma)?;
    Ok(0.5 * (ld1 + ld2 - ld))
}

// ---------------------------------------------------------------------------
// Hyperparameter fitting
// ---------------------------------------------------------------------------

/// Transformed parameter vector for unconstrained coordinate ascent:
/// log-variances, atanh-normalised correlations, log lengthscales.
fn pack(params: &LmcKernelParams) -> Vec<f64> {
    let mut v = Vec::new();
    for a in [&params.a0, &params.a1] {
        v.push(a.var0.max(1e-12).ln());
        v.push(a.var1.max(1e-12).ln());
        let denom = (a.var0 * a.var1).sqrt().max(1e-12);
        v.push((a.cross / denom).clamp(-0.999, 0.999).atanh());
    }
    for l in params.lengthscales0.iter().chain(&params.lengthscales1) {
        v.push(l.ln());
    }
    v.push(params.sigma0_sq.ln());
    v.push(params.sigma1_sq.ln());
    v
}

fn unpack(v: &[f64], dim: usize) -> LmcKernelParams {
    let coreg = |o: usize| {
        let var0 = v[o].exp();
        let var1 = v[o + 1].exp();
        CoregMatrix { var0, var1, cross: v[o + 2].tanh() * (var0 * var1).sqrt() }
    };
    LmcKernelParams {
        a0: coreg(0),
        a1: coreg(3),
        lengthscales0: (0..dim).map(|j| v[6 + j].exp()).collect(),
        lengthscales1: (0..dim).map(|j| v[6 + dim + j].exp()).collect(),
        sigma0_sq: v[6 + 2 * dim].exp(),
        sigma1_sq: v[6 + 2 * dim + 1].exp(),
    }
}

/// Marginal-likelihood maximisation by derivative-free coordinate ascent
/// with random restarts. `max_iters` caps the total number of marginal
/// likelihood evaluations; `max_iters = 0` returns the initial parameters
/// untouched. Only improving steps are accepted, so the reported marginal
/// likelihood never decreases.
pub fn fit_host(
    params_init: &LmcKernelParams,
    host: &TabularDataset,
    max_iters: usize,
    seed: u64,
) -> Result<(LmcKernelParams, GpPosteriorState), GpError> {
    params_init.validate()?;
    if max_iters == 0 {
        let state = GpPosteriorState::condition(params_init, host)?;
        return Ok((params_init.clone(), state));
    }
    let dim = host.dim();
    let lml_of = |v: &[f64]| -> Option<f64> {
        let p = unpack(v, dim);
        GpPosteriorState::condition(&p, host).ok().map(|s| s.log_marginal_likelihood)
    };
    let mut evals = 0usize;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best_v = pack(params_init);
    let mut best_lml = match lml_of(&best_v) {
        Some(l) => l,
        None => return Err(GpError::Linalg(LinalgError::NotPsd { pivot: 0.0, index: 0 })),
    };
    evals += 1;

    let restarts = 3usize;
    for restart in 0..restarts {
        let mut v = if restart == 0 {
            pack(params_init)
        } else {
            // Random restart around the initial point.
            let base = pack(params_init);
            base.iter().map(|b| b + rng.gen_range(-1.0..1.0)).collect()
        };
        let mut current = match lml_of(&v) {
            Some(l) => l,
            None => continue,
        };
        evals += 1;
        let mut step = 0.5f64;
        'ascent: while evals < max_iters && step > 1e-3 {
            let mut improved = false;
            for k in 0..v.len() {
                for dir in [1.0, -1.0] {
                    if evals >= max_iters {
                        break 'ascent;
                    }
                    let mut trial = v.clone();
                    trial[k] += dir * step;
                    evals += 1;
                    if let Some(l) = lml_of(&trial) {
                        if l > current {
                            current = l;
                            v = trial;
                            improved = true;
                            break;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if current > best_lml {
            best_lml = current;
            best_v = v;
        }
    }
    let best = unpack(&best_v, dim);
    let state = GpPosteriorState::condition(&best, host)?;
    Ok((best, state))
}
