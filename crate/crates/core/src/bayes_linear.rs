//! Conjugate Bayesian polynomial regression with the (nuisance, causal)
//! parameter split, closed-form posterior updates, CATE prediction, and
//! closed-form expected information gains.
//!
//! The model is y ~ N(phi(x,t)' theta, sigma^2) with theta ~ N(mu0,
//! sigma^2 Lambda0^-1) and phi(x,t) = [phi_nc(x), t * phi_c(x)]. Both the
//! full-parameter EIG and the causal-block EIG reduce to log-determinant
//! differences of precision matrices; the constants are resolved so the
//! empty candidate scores exactly zero.

use crate::data::{DataError, TabularDataset};
use crate::linalg::{self, gram, LinalgError, Matrix};
use crate::mpc::{
    self, mat_mul_shared, secure_ldl_logdet, LogdetOptions, MpcError, MpcSession, SharedMatrix,
    SharedValue,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset has no outcomes")]
    MissingOutcomes,
    #[error("dataset has no true CATE column")]
    MissingTrueCate,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A product of covariate powers, e.g. x1^2 * x3. Empty terms are the
/// intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialTerm {
    pub vars: Vec<usize>,
    pub powers: Vec<u32>,
}

impl MonomialTerm {
    pub fn intercept() -> Self {
        MonomialTerm { vars: vec![], powers: vec![] }
    }

    pub fn linear(var: usize) -> Self {
        MonomialTerm { vars: vec![var], powers: vec![1] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(&self.powers)
            .map(|(&v, &p)| x[v].powi(p as i32))
            .product()
    }

    fn max_var(&self) -> Option<usize> {
        self.vars.iter().copied().max()
    }
}

/// The feature map phi(x, t) = [phi_nc(x), t * phi_c(x)].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub nc_terms: Vec<MonomialTerm>,
    pub c_terms: Vec<MonomialTerm>,
}

impl FeatureMap {
    /// Default map per the linear experiments: intercept and first-order
    /// covariates in the nuisance block, treatment intercept and
    /// treatment-covariate interactions in the causal block.
    pub fn first_order(dim: usize) -> Self {
        let mut nc = vec![MonomialTerm::intercept()];
        let mut c = vec![MonomialTerm::intercept()];
        for j in 0..dim {
            nc.push(MonomialTerm::linear(j));
            c.push(MonomialTerm::linear(j));
        }
        FeatureMap { nc_terms: nc, c_terms: c }
    }

    pub fn p_nc(&self) -> usize {
        self.nc_terms.len()
    }

    pub fn p_c(&self) -> usize {
        self.c_terms.len()
    }

    pub fn dim(&self) -> usize {
        self.p_nc() + self.p_c()
    }

    /// Indices of the causal block within the stacked parameter vector.
    pub fn c_range(&self) -> std::ops::Range<usize> {
        self.p_nc()..self.dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        let needed = self
            .nc_terms
            .iter()
            .chain(&self.c_terms)
            .filter_map(|t| t.max_var())
            .max()
            .map(|v| v + 1)
            .unwrap_or(0);
        if x.len() < needed {
            return Err(ModelError::DimensionMismatch(format!(
                "feature map references covariate {} but row has {}",
                needed - 1,
                x.len()
            )));
        }
        Ok(())
    }

    /// phi(x, t): the causal block is zeroed whenever t = 0.
    pub fn features(&self, x: &[f64], t: u8) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.dim());
        for term in &self.nc_terms {
            out.push(term.eval(x));
        }
        let tf = t as f64;
        for term in &self.c_terms {
            out.push(tf * term.eval(x));
        }
        Ok(out)
    }

    /// phi_c(x) alone.
    pub fn c_features(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        Ok(self.c_terms.iter().map(|t| t.eval(x)).collect())
    }

    /// Row-wise feature matrix of a dataset.
    pub fn feature_matrix(&self, data: &TabularDataset) -> Result<Matrix, ModelError> {
        let mut m = Matrix::zeros(data.n(), self.dim());
        for i in 0..data.n() {
            let row = self.features(data.covariate_row(i), data.treatments()[i])?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    /// Row-wise t .* phi_c matrix (zero rows for untreated units).
    pub fn c_feature_matrix(&self, data: &TabularDataset) -> Result<Matrix, ModelError> {
        let mut m = Matrix::zeros(data.n(), self.p_c());
        for i in 0..data.n() {
            if data.treatments()[i] == 0 {
                continue;
            }
            let row = self.c_features(data.covariate_row(i))?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

/// theta ~ N(mu0, sigma^2 Lambda0^-1) with known outcome noise sigma^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugatePrior {
    pub mu0: Vec<f64>,
    pub lambda0: Matrix,
    pub sigma2: f64,
}

impl ConjugatePrior {
    /// Unit ridge prior: mu0 = 0, Lambda0 = I, sigma^2 = 1.
    pub fn unit(dim: usize) -> Self {
        ConjugatePrior { mu0: vec![0.0; dim], lambda0: Matrix::identity(dim), sigma2: 1.0 }
    }

    pub fn ridge(dim: usize, c: f64, sigma2: f64) -> Self {
        ConjugatePrior { mu0: vec![0.0; dim], lambda0: Matrix::identity(dim).scale(c), sigma2 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sigma2 <= 0.0 {
            return Err(ModelError::DimensionMismatch("sigma2 must be positive".into()));
        }
        if self.mu0.len() != self.lambda0.rows() {
            return Err(ModelError::DimensionMismatch("mu0 / Lambda0 size mismatch".into()));
        }
        let f = linalg::ldl_decompose(&self.lambda0, linalg::default_pivot_tol(&self.lambda0))?;
        if f.d.iter().any(|&d| d <= 0.0) {
            return Err(ModelError::Linalg(LinalgError::NotPsd { pivot: 0.0, index: 0 }));
        }
        Ok(())
    }

    pub fn posterior(&self) -> GaussianPosterior {
        GaussianPosterior {
            mean: self.mu0.clone(),
            precision: self.lambda0.clone(),
            sigma2: self.sigma2,
        }
    }
}

/// theta | D ~ N(mean, sigma^2 precision^-1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub precision: Matrix,
    pub sigma2: f64,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Conjugate update on outcome-bearing data. Updating with D then D'
/// equals updating with their union exactly.
pub fn posterior_update(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    data: &TabularDataset,
) -> Result<GaussianPosterior, ModelError> {
    let y = data.outcomes().ok_or(ModelError::MissingOutcomes)?;
    if data.is_empty() {
        return Ok(post.clone());
    }
    if post.dim() != fm.dim() {
        return Err(ModelError::DimensionMismatch(format!(
            "posterior dim {} vs feature map dim {}",
            post.dim(),
            fm.dim()
        )));
    }
    let phi = fm.feature_matrix(data)?;
    let precision = post.precision.add(&gram(&phi));
    // rhs = Lambda_old * mean_old + Phi' y
    let mut rhs = post.precision.matvec(&post.mean);
    for i in 0..phi.rows() {
        let row = phi.row(i);
        for j in 0..fm.dim() {
            rhs[j] += row[j] * y[i];
        }
    }
    let mean = linalg::solve_psd_vec(&precision, &rhs)?;
    Ok(GaussianPosterior { mean, precision, sigma2: post.sigma2 })
}

/// Full-parameter EIG, constant-resolved so the empty candidate scores 0:
/// 1/2 [log det(Lambda + Phi_e' Phi_e) - log det(Lambda)].
pub fn eig_theta(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    candidate: &TabularDataset,
) -> Result<f64, ModelError> {
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let phi = fm.feature_matrix(candidate)?;
    let merged = post.precision.add(&gram(&phi));
    Ok(0.5 * (linalg::log_det_psd(&merged)? - linalg::log_det_psd(&post.precision)?))
}

/// Causal-block EIG in the paper's form, on the c-block precision:
/// 1/2 [log det(Lambda_cc + Z_e' Z_e) - log det(Lambda_cc)] with
/// Z_e = t_e .* phi_c(X_e). The c-block of the stacked precision already
/// contains the host's own Z_0' Z_0 plus the prior block.
pub fn eig_theta_c_paper(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    candidate: &TabularDataset,
) -> Result<f64, ModelError> {
    let c_idx: Vec<usize> = fm.c_range().collect();
    let lambda_cc = post.precision.sub_block(&c_idx);
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let z = fm.c_feature_matrix(candidate)?;
    let merged = lambda_cc.add(&gram(&z));
    Ok(0.5 * (linalg::log_det_psd(&merged)? - linalg::log_det_psd(&lambda_cc)?))
}

/// Schur complement onto the c-block: S = Lambda_cc - Lambda_cn
/// Lambda_nn^-1 Lambda_nc, the exact marginal precision of theta_c.
fn c_marginal_precision(precision: &Matrix, fm: &FeatureMap) -> Result<Matrix, ModelError> {
    let p_nc = fm.p_nc();
    let c_idx: Vec<usize> = fm.c_range().collect();
    let lambda_cc = precision.sub_block(&c_idx);
    if p_nc == 0 {
        return Ok(lambda_cc);
    }
    let nc_idx: Vec<usize> = (0..p_nc).collect();
    let lambda_nn = precision.sub_block(&nc_idx);
    let lambda_nc = Matrix::from_fn(p_nc, c_idx.len(), |i, j| precision[(i, c_idx[j])]);
    let solved = linalg::solve_psd(&lambda_nn, &lambda_nc)?;
    Ok(lambda_cc.sub(&lambda_nc.transpose().matmul(&solved)))
}

/// Exact causal-block EIG from the marginal covariance of theta_c
/// (entropy difference of the exact Gaussian marginals). Serves as the
/// correctness oracle for the paper's c-block formula; the two agree when
/// the joint precision is block-diagonal across (nc, c).
pub fn eig_theta_c_exact(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    candidate: &TabularDataset,
) -> Result<f64, ModelError> {
    let prior_marg = c_marginal_precision(&post.precision, fm)?;
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let phi = fm.feature_matrix(candidate)?;
    let merged = post.precision.add(&gram(&phi));
    let post_marg = c_marginal_precision(&merged, fm)?;
    Ok(0.5 * (linalg::log_det_psd(&post_marg)? - linalg::log_det_psd(&prior_marg)?))
}

/// Posterior-mean CATE: phi_c(x)' mean_c, exactly the defining posterior
/// expectation for this model.
pub fn cate_predict(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    x: &[f64],
) -> Result<f64, ModelError> {
    if post.dim() != fm.dim() {
        return Err(ModelError::DimensionMismatch(format!(
            "posterior dim {} vs feature map dim {}",
            post.dim(),
            fm.dim()
        )));
    }
    let phi_c = fm.c_features(x)?;
    Ok(linalg::dot(&phi_c, &post.mean[fm.c_range()]))
}

/// Mean squared error between predicted and true CATE. Reports use the
/// squared convention; take the square root downstream where flagged.
pub fn pehe(predicted: &[f64], data: &TabularDataset) -> Result<f64, ModelError> {
    let tau = data.tau_true().ok_or(ModelError::MissingTrueCate)?;
    if predicted.len() != tau.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} predictions vs {} true values",
            predicted.len(),
            tau.len()
        )));
    }
    if tau.is_empty() {
        return Ok(0.0);
    }
    let n = tau.len() as f64;
    Ok(predicted.iter().zip(tau).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

// ---------------------------------------------------------------------------
// Secure evaluation
// ---------------------------------------------------------------------------

/// Pivot band the secure log-determinant is tuned for.
const SECURE_PIVOT_HI: f64 = 64.0;

/// How the whitened secure statistic is assembled; returned for reporting.
#[derive(Debug, Clone)]
pub struct SecureEigRun {
    pub value: SharedValue,
    /// Revealed (noised) trace used to pick the public scale.
    pub trace_estimate: f64,
    /// Public power-of-two matrix scale applied before the LDL.
    pub matrix_scale: f64,
}

fn whitener(precision: &Matrix) -> Result<Matrix, ModelError> {
    // T = D^-1/2 L^-1 from the plaintext LDL of the host posterior
    // precision, so T Lambda T' = I. Host-side plaintext; square roots of
    // public pivots are fine here, only the secure path avoids them.
    let f = linalg::ldl_decompose(precision, linalg::default_pivot_tol(precision))?;
    let n = f.dim();
    let mut l_inv = Matrix::identity(n);
    // Forward-substitute columns of the identity through unit-lower L.
    for col in 0..n {
        for i in (col + 1)..n {
            let mut acc = 0.0;
            for k in col..i {
                acc += f.l[(i, k)] * l_inv[(k, col)];
            }
            l_inv[(i, col)] = -acc;
        }
    }
    for i in 0..n {
        let d = f.d[i];
        if d <= 0.0 {
            return Err(ModelError::Linalg(LinalgError::ZeroPivot { pivot: d, index: i }));
        }
        let s = 1.0 / d.sqrt();
        for j in 0..=i {
            l_inv[(i, j)] *= s;
        }
    }
    Ok(l_inv)
}

fn secure_logdet_whitened(
    lambda: &Matrix,
    candidate_gram: &Matrix,
    session: &mut MpcSession,
) -> Result<SecureEigRun, ModelError> {
    let p = lambda.rows();
    let host = 0usize;
    let cand = 1usize.min(session.net.party_count() - 1);

    // Host whitens its own precision in plaintext and inputs the whitener
    // as its private share; the candidate inputs its Gram matrix. Both the
    // whitening products and the LDL run entirely on shares.
    let t = whitener(lambda)?;
    let st = SharedMatrix::share(&t, host, &mut session.net)?;
    let st_t = SharedMatrix::share(&t.transpose(), host, &mut session.net)?;
    let sg = SharedMatrix::share(candidate_gram, cand, &mut session.net)?;
    let tg = mat_mul_shared(&st, &sg, &mut session.dealer, &mut session.net)?;
    let w = mat_mul_shared(&tg, &st_t, &mut session.dealer, &mut session.net)?;
    let a = w.add_diag_public(1.0)?;

    // The pivots of I + T G T' sit in [1, 1 + tr(T G T')]. The trace is a
    // single aggregate; reveal it with a little noise to pick a public
    // power-of-two scale that brings heavy sites back into the pivot band.
    let mut trace = a.entry(0, 0).clone();
    for i in 1..p {
        trace = mpc::add_shared(&trace, a.entry(i, i))?;
    }
    let trace_estimate = session.net.reveal(&trace, Some(0.1)).max(1.0);
    let mut shift = 0i32;
    while trace_estimate * 1.25 * 2f64.powi(-shift) > SECURE_PIVOT_HI {
        shift += 1;
    }
    let matrix_scale = 2f64.powi(-shift);

    let scaled = if shift > 0 {
        SharedMatrix {
            rows: a.rows,
            cols: a.cols,
            entries: a.entries.iter().map(|e| mpc::scale_pow2(e, -shift)).collect(),
        }
    } else {
        a
    };
    let opts = LogdetOptions {
        pivot_lo: (0.5 * matrix_scale).max(2f64.powi(-6)),
        pivot_hi: SECURE_PIVOT_HI,
        recip_iters: None,
        log_iters: None,
    };
    let logdet = secure_ldl_logdet(&scaled, opts, &mut session.dealer, &mut session.net)?;
    // log det(Lambda + G) - log det(Lambda) = log det(scaled) - p ln(scale),
    // and the EIG halves it; both corrections are public.
    let corrected = mpc::add_public(&logdet, -(p as f64) * matrix_scale.ln())?;
    let value = mpc::scale_pow2(&corrected, -1);
    Ok(SecureEigRun { value, trace_estimate, matrix_scale })
}

/// Full-parameter EIG computed under the secure engine. The host holds the
/// posterior precision, the candidate holds its rows; only shares, masked
/// Beaver differences and the noised trace aggregate cross the network.
/// The returned share decodes to `eig_theta` up to fixed-point error.
pub fn eig_theta_shared(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    candidate: &TabularDataset,
    session: &mut MpcSession,
) -> Result<SecureEigRun, ModelError> {
    let phi = fm.feature_matrix(candidate)?;
    secure_logdet_whitened(&post.precision, &gram(&phi), session)
}

/// Causal-block EIG under the secure engine, on the c-block matrices.
pub fn eig_theta_c_shared(
    post: &GaussianPosterior,
    fm: &FeatureMap,
    candidate: &TabularDataset,
    session: &mut MpcSession,
) -> Result<SecureEigRun, ModelError> {
    let c_idx: Vec<usize> = fm.c_range().collect();
    let lambda_cc = post.precision.sub_block(&c_idx);
    let z = fm.c_feature_matrix(candidate)?;
    secure_logdet_whitened(&lambda_cc, &gram(&z), session)
}
