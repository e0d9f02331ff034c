//! Differential privacy layer: the sensitivity bound for the linear EIG
//! statistic, Laplace release, the per-site DP ranking baseline, and the
//! exponential mechanism for best-site selection.

use crate::bayes_linear::{FeatureMap, ModelError};
use crate::data::TabularDataset;
use crate::linalg::{self, gram, Matrix};
use crate::mpc::sample_laplace;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("invalid sensitivity inputs: {0}")]
    InvalidBound(String),
    #[error("utilities must be non-empty")]
    EmptyUtilities,
    #[error("utilities must be finite")]
    NonFiniteUtility,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the privacy budget is spent across candidate sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// Every site's release gets the full epsilon.
    PerRelease,
    /// The budget is split evenly over K sites.
    SplitAcrossSites,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub accounting: Accounting,
}

impl DpParams {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if !(self.epsilon > 0.0) {
            return Err(PrivacyError::InvalidBound("epsilon must be positive".into()));
        }
        if !(self.sensitivity > 0.0) {
            return Err(PrivacyError::InvalidBound("sensitivity must be positive".into()));
        }
        Ok(())
    }

    fn effective_epsilon(&self, sites: usize) -> f64 {
        match self.accounting {
            Accounting::PerRelease => self.epsilon,
            Accounting::SplitAcrossSites => self.epsilon / sites.max(1) as f64,
        }
    }
}

/// Inputs of the linear-statistic sensitivity bound: sup-norm bound M on
/// the rows, feature dimension d, ridge scale c with Lambda0 = c I.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensitivityInputs {
    pub m_bound: f64,
    pub d: usize,
    pub c: f64,
}

/// Global sensitivity of f(X) = log det(X'X + X0'X0 + cI) under a
/// one-row change with entries bounded by M: at most M d / sqrt(c).
pub fn sensitivity_linear_eig(inp: &SensitivityInputs) -> Result<f64, PrivacyError> {
    if !(inp.m_bound > 0.0) || !(inp.c > 0.0) || inp.d == 0 {
        return Err(PrivacyError::InvalidBound(format!("{inp:?}")));
    }
    Ok(inp.m_bound * inp.d as f64 / inp.c.sqrt())
}

/// Laplace mechanism: value + Laplace(sensitivity / epsilon), deterministic
/// per seed.
pub fn laplace_release(value: f64, dp: &DpParams, seed: u64) -> Result<f64, PrivacyError> {
    dp.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(value + sample_laplace(dp.sensitivity / dp.epsilon, &mut rng))
}

/// Exponential mechanism: select index i with probability proportional to
/// exp(epsilon u_i / (2 sensitivity)); deterministic per seed.
pub fn exponential_select(
    utilities: &[f64],
    dp: &DpParams,
    seed: u64,
) -> Result<usize, PrivacyError> {
    dp.validate()?;
    if utilities.is_empty() {
        return Err(PrivacyError::EmptyUtilities);
    }
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(PrivacyError::NonFiniteUtility);
    }
    let scale = dp.epsilon / (2.0 * dp.sensitivity);
    let logits: Vec<f64> = utilities.iter().map(|u| u * scale).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut target = (rng.next_u64() as f64 / u64::MAX as f64) * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return Ok(i);
        }
        target -= w;
    }
    Ok(utilities.len() - 1)
}

/// Entrywise clip of the covariate matrix to [-m, m].
pub fn clip_covariates(data: &TabularDataset, m: f64) -> TabularDataset {
    let x = Matrix::from_fn(data.n(), data.dim(), |i, j| {
        data.covariates()[(i, j)].clamp(-m, m)
    });
    TabularDataset::new(
        x,
        data.treatments().to_vec(),
        data.outcomes().map(|y| y.to_vec()),
        data.tau_true().map(|t| t.to_vec()),
    )
    .expect("clipping preserves validity")
}

/// Which log-determinant statistic the DP baseline releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpStatistic {
    FullTheta,
    CausalBlock,
}

/// One site's release in the DP ranking baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpSiteRelease {
    pub site: usize,
    pub plain: f64,
    pub noised: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpRankFragment {
    pub releases: Vec<DpSiteRelease>,
    pub ranking: Vec<usize>,
    pub sensitivity: f64,
    pub noise_scale: f64,
}

/// DP ranking baseline: each site's un-halved log-det statistic
/// f(X_e) = log det(G_e + G_0 + cI) is released with independent Laplace
/// noise at the derived scale, and sites are ranked by the noised values.
/// Covariates are clipped entrywise to M first, as the sensitivity proof
/// requires. With `noise_scale_override = Some(0.0)` this degenerates to
/// the plaintext ranking (diagnostic mode).
#[allow(clippy::too_many_arguments)]
pub fn dp_rank(
    host: &TabularDataset,
    candidates: &[&TabularDataset],
    fm: &FeatureMap,
    statistic: DpStatistic,
    ridge_c: f64,
    m_clip: f64,
    dp_epsilon: f64,
    accounting: Accounting,
    seed: u64,
    noise_scale_override: Option<f64>,
) -> Result<DpRankFragment, PrivacyError> {
    let host = clip_covariates(host, m_clip);
    let d = match statistic {
        DpStatistic::FullTheta => fm.dim(),
        DpStatistic::CausalBlock => fm.p_c(),
    };
    // Public feature sup-norm bound implied by the clip: each monomial is
    // bounded by max(1, M)^(total power).
    let term_bound =
        |t: &crate::bayes_linear::MonomialTerm| m_clip.max(1.0).powi(t.powers.iter().sum::<u32>() as i32);
    let m_feat = match statistic {
        DpStatistic::FullTheta => fm
            .nc_terms
            .iter()
            .chain(&fm.c_terms)
            .map(term_bound)
            .fold(1.0f64, f64::max),
        DpStatistic::CausalBlock => fm.c_terms.iter().map(term_bound).fold(1.0f64, f64::max),
    };
    let host_gram = match statistic {
        DpStatistic::FullTheta => gram(&fm.feature_matrix(&host)?),
        DpStatistic::CausalBlock => gram(&fm.c_feature_matrix(&host)?),
    };
    let base = host_gram.add(&Matrix::identity(d).scale(ridge_c));

    let mut plains = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let clipped = clip_covariates(cand, m_clip);
        let phi = match statistic {
            DpStatistic::FullTheta => fm.feature_matrix(&clipped)?,
            DpStatistic::CausalBlock => fm.c_feature_matrix(&clipped)?,
        };
        let f = linalg::log_det_psd(&base.add(&gram(&phi))).map_err(ModelError::from)?;
        plains.push(f);
    }

    let sensitivity =
        sensitivity_linear_eig(&SensitivityInputs { m_bound: m_feat, d, c: ridge_c })?;
    let eff_eps = DpParams { epsilon: dp_epsilon, sensitivity, accounting }
        .effective_epsilon(candidates.len());
    let noise_scale = noise_scale_override.unwrap_or(sensitivity / eff_eps);

    let mut releases = Vec::with_capacity(candidates.len());
    for (i, &plain) in plains.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(
            seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1),
        );
        let noise = if noise_scale > 0.0 { sample_laplace(noise_scale, &mut rng) } else { 0.0 };
        releases.push(DpSiteRelease { site: i, plain, noised: plain + noise });
    }
    let noised: Vec<f64> = releases.iter().map(|r| r.noised).collect();
    let ranking = crate::ranking::rank_descending(&noised);
    Ok(DpRankFragment { releases, ranking, sensitivity, noise_scale })
}
