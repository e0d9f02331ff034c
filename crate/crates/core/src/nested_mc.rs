//! Sampler-based expected-information-gain estimators: plain nested Monte
//! Carlo, the Rao-Blackwellised variant, and the causal-parameter-targeted
//! double-nested estimator. All three are generic over a posterior-sampler
//! interface; the exact conjugate-linear sampler is the reference
//! implementation (a tree-based sampler can slot into the same interface).

use crate::bayes_linear::{FeatureMap, GaussianPosterior};
use crate::data::TabularDataset;
use crate::linalg::{self, Matrix};
use rand::RngCore;
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NmcError {
    #[error("sampler failure: {0}")]
    SamplerFailure(String),
    #[error("non-finite likelihood encountered")]
    NonFiniteLikelihood,
    #[error("sampler does not support conditional draws of theta_nc given theta_c")]
    ConditionalSamplerUnsupported,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Posterior sampler interface: i.i.d. posterior draws, conditional
/// nuisance draws, and the per-row conditional means that determine the
/// fixed-variance normal likelihood.
pub trait PosteriorSampler {
    /// Candidate pre-processing cached across likelihood evaluations.
    type Prepared;

    fn dim(&self) -> usize;
    /// Index range of the causal block within a parameter vector.
    fn c_range(&self) -> std::ops::Range<usize>;
    fn sigma2(&self) -> f64;
    fn sample_theta(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Draw theta_nc | theta_c and return the assembled full vector.
    fn sample_given_c(&self, theta_c: &[f64], rng: &mut dyn RngCore)
        -> Result<Vec<f64>, NmcError>;
    fn prepare(&self, candidate: &TabularDataset) -> Result<Self::Prepared, NmcError>;
    fn mean_response(&self, theta: &[f64], prepared: &Self::Prepared) -> Vec<f64>;
}

/// Sample counts: N outer, M1 inner (marginal), M2 inner (conditional).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NmcConfig {
    pub n_outer: usize,
    pub m1: usize,
    pub m2: Option<usize>,
    pub seed: u64,
}

impl NmcConfig {
    pub fn new(n_outer: usize, m1: usize, seed: u64) -> Self {
        NmcConfig { n_outer, m1, m2: None, seed }
    }

    fn validate(&self) -> Result<(), NmcError> {
        if self.n_outer == 0 || self.m1 == 0 || self.m2 == Some(0) {
            return Err(NmcError::InvalidConfig("sample counts must be at least 1".into()));
        }
        Ok(())
    }

    fn m2(&self) -> usize {
        self.m2.unwrap_or(self.m1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub config: NmcConfig,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn gaussian_loglik(y: &[f64], mean: &[f64], sigma2: f64) -> f64 {
    let n = y.len() as f64;
    let ss: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - ss / (2.0 * sigma2)
}

fn summarize(terms: &[f64], config: NmcConfig) -> Result<EigEstimate, NmcError> {
    if terms.iter().any(|v| !v.is_finite()) {
        return Err(NmcError::NonFiniteLikelihood);
    }
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(2.0);
    Ok(EigEstimate { value: mean, standard_error: (var / n).sqrt(), config })
}

/// Shared sampling path for the pooled estimators: one pool of N*M1
/// posterior draws split into N groups; the group's first draw doubles as
/// the outer draw that simulates the synthetic outcomes.
struct PooledRun {
    /// Per outer iterate: numerator log-likelihood and inner log-marginal.
    numerators: Vec<f64>,
    inner_marginals: Vec<f64>,
    n_rows: usize,
}

fn run_pooled<S: PosteriorSampler>(
    sampler: &S,
    candidate: &TabularDataset,
    cfg: NmcConfig,
) -> Result<PooledRun, NmcError> {
    cfg.validate()?;
    let prepared = sampler.prepare(candidate)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let sigma2 = sampler.sigma2();
    let sigma = sigma2.sqrt();
    let mut numerators = Vec::with_capacity(cfg.n_outer);
    let mut inner_marginals = Vec::with_capacity(cfg.n_outer);
    let mut inner = vec![0.0; cfg.m1];
    let mut group: Vec<Vec<f64>> = Vec::with_capacity(cfg.m1);
    for _ in 0..cfg.n_outer {
        // One pool group at a time; the draw stream is a single split
        // sequence of N * M1 posterior samples.
        group.clear();
        group.extend((0..cfg.m1).map(|_| sampler.sample_theta(&mut rng)));
        let mean = sampler.mean_response(&group[0], &prepared);
        let y: Vec<f64> =
            mean.iter().map(|&m| m + sigma * crate::data::standard_normal(&mut rng)).collect();
        numerators.push(gaussian_loglik(&y, &mean, sigma2));
        for (j, theta) in group.iter().enumerate() {
            let mj = sampler.mean_response(theta, &prepared);
            inner[j] = gaussian_loglik(&y, &mj, sigma2);
        }
        inner_marginals.push(log_sum_exp(&inner) - (cfg.m1 as f64).ln());
    }
    Ok(PooledRun { numerators, inner_marginals, n_rows: candidate.n() })
}

/// Plain nested Monte Carlo estimator of the full-parameter EIG:
/// the outer average of log P(y | theta) minus the log of the inner
/// average of P(y | theta'_j).
pub fn eig_nmc<S: PosteriorSampler>(
    sampler: &S,
    candidate: &TabularDataset,
    cfg: NmcConfig,
) -> Result<EigEstimate, NmcError> {
    cfg.validate()?;
    if candidate.is_empty() {
        return Ok(EigEstimate { value: 0.0, standard_error: 0.0, config: cfg });
    }
    let run = run_pooled(sampler, candidate, cfg)?;
    let terms: Vec<f64> =
        run.numerators.iter().zip(&run.inner_marginals).map(|(a, b)| a - b).collect();
    summarize(&terms, cfg)
}

/// Rao-Blackwellised estimator: the numerator entropy is replaced by its
/// analytic value n_e/2 (1 + log 2 pi sigma^2) for the fixed-variance
/// normal likelihood. Same target, lower variance.
pub fn eig_rb<S: PosteriorSampler>(
    sampler: &S,
    candidate: &TabularDataset,
    cfg: NmcConfig,
) -> Result<EigEstimate, NmcError> {
    cfg.validate()?;
    if candidate.is_empty() {
        return Ok(EigEstimate { value: 0.0, standard_error: 0.0, config: cfg });
    }
    let run = run_pooled(sampler, candidate, cfg)?;
    let analytic_entropy = run.n_rows as f64 / 2.0
        * (1.0 + (2.0 * std::f64::consts::PI * sampler.sigma2()).ln());
    let terms: Vec<f64> = run.inner_marginals.iter().map(|b| -b).collect();
    let mut est = summarize(&terms, cfg)?;
    est.value -= analytic_entropy;
    Ok(est)
}

/// Double-nested estimator of the causal-block EIG: the numerator
/// marginalises theta_nc with M2 conditional draws, the denominator is the
/// usual M1-sample marginal. Fresh inner sets per outer iterate.
pub fn eig_theta_c_nmc<S: PosteriorSampler>(
    sampler: &S,
    candidate: &TabularDataset,
    cfg: NmcConfig,
) -> Result<EigEstimate, NmcError> {
    cfg.validate()?;
    if candidate.is_empty() {
        return Ok(EigEstimate { value: 0.0, standard_error: 0.0, config: cfg });
    }
    let prepared = sampler.prepare(candidate)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let sigma2 = sampler.sigma2();
    let sigma = sigma2.sqrt();
    let m2 = cfg.m2();
    let c_range = sampler.c_range();
    let mut terms = Vec::with_capacity(cfg.n_outer);
    let mut inner1 = vec![0.0; cfg.m1];
    let mut inner2 = vec![0.0; m2];
    for _ in 0..cfg.n_outer {
        let theta = sampler.sample_theta(&mut rng);
        let mean = sampler.mean_response(&theta, &prepared);
        let y: Vec<f64> =
            mean.iter().map(|&m| m + sigma * crate::data::standard_normal(&mut rng)).collect();
        let theta_c = &theta[c_range.clone()];
        for slot in inner1.iter_mut() {
            let tj = sampler.sample_theta(&mut rng);
            *slot = gaussian_loglik(&y, &sampler.mean_response(&tj, &prepared), sigma2);
        }
        for slot in inner2.iter_mut() {
            let tk = sampler.sample_given_c(theta_c, &mut rng)?;
            *slot = gaussian_loglik(&y, &sampler.mean_response(&tk, &prepared), sigma2);
        }
        let log_marginal = log_sum_exp(&inner1) - (cfg.m1 as f64).ln();
        let log_conditional = log_sum_exp(&inner2) - (m2 as f64).ln();
        terms.push(log_conditional - log_marginal);
    }
    summarize(&terms, cfg)
}

// ---------------------------------------------------------------------------
// Exact conjugate-linear reference sampler
// ---------------------------------------------------------------------------

/// Exact posterior sampler for the conjugate linear model: multivariate
/// normal draws via the LDL factor of the precision, exact Gaussian
/// conditionals for theta_nc | theta_c.
pub struct ConjugateLinearSampler {
    fm: FeatureMap,
    mean: Vec<f64>,
    sigma2: f64,
    /// LDL of the joint precision, for joint draws.
    joint: linalg::LdlFactors,
    /// LDL of the nuisance block, for conditional draws.
    nuisance: Option<linalg::LdlFactors>,
    /// Lambda_{nc,c}, coupling block of the precision.
    coupling: Matrix,
    mean_nc: Vec<f64>,
    mean_c: Vec<f64>,
}

/// Build the reference sampler from a fitted posterior.
pub fn conjugate_linear_sampler(
    post: &GaussianPosterior,
    fm: &FeatureMap,
) -> Result<ConjugateLinearSampler, NmcError> {
    let p = post.dim();
    if p != fm.dim() {
        return Err(NmcError::InvalidConfig(format!(
            "posterior dim {p} vs feature map dim {}",
            fm.dim()
        )));
    }
    let joint = linalg::ldl_decompose(&post.precision, linalg::default_pivot_tol(&post.precision))
        .map_err(|e| NmcError::SamplerFailure(e.to_string()))?;
    if joint.d.iter().any(|&d| d <= 0.0) {
        return Err(NmcError::SamplerFailure("posterior precision not positive definite".into()));
    }
    let p_nc = fm.p_nc();
    let nuisance = if p_nc > 0 {
        let idx: Vec<usize> = (0..p_nc).collect();
        let block = post.precision.sub_block(&idx);
        Some(
            linalg::ldl_decompose(&block, linalg::default_pivot_tol(&block))
                .map_err(|e| NmcError::SamplerFailure(e.to_string()))?,
        )
    } else {
        None
    };
    let coupling = Matrix::from_fn(p_nc, fm.p_c(), |i, j| post.precision[(i, p_nc + j)]);
    Ok(ConjugateLinearSampler {
        fm: fm.clone(),
        mean: post.mean.clone(),
        sigma2: post.sigma2,
        joint,
        nuisance,
        coupling,
        mean_nc: post.mean[..p_nc].to_vec(),
        mean_c: post.mean[p_nc..].to_vec(),
    })
}

impl ConjugateLinearSampler {
    /// mean + sigma * L^-T D^-1/2 z for z ~ N(0, I), which has covariance
    /// sigma^2 (L D L^T)^-1.
    fn draw_from_factors(
        factors: &linalg::LdlFactors,
        mean: &[f64],
        sigma: f64,
        rng: &mut dyn RngCore,
    ) -> Vec<f64> {
        let n = factors.dim();
        let mut w: Vec<f64> =
            (0..n).map(|i| crate::data::standard_normal(rng) / factors.d[i].sqrt()).collect();
        // Solve L^T u = w by back substitution.
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                w[i] -= factors.l[(k, i)] * w[k];
            }
        }
        w.iter().zip(mean).map(|(u, m)| m + sigma * u).collect()
    }
}

impl PosteriorSampler for ConjugateLinearSampler {
    type Prepared = Matrix;

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn c_range(&self) -> std::ops::Range<usize> {
        self.fm.c_range()
    }

    fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn sample_theta(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        Self::draw_from_factors(&self.joint, &self.mean, self.sigma2.sqrt(), rng)
    }

    fn sample_given_c(
        &self,
        theta_c: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>, NmcError> {
        let p_nc = self.fm.p_nc();
        let mut full = Vec::with_capacity(self.dim());
        if let Some(factors) = &self.nuisance {
            // Conditional mean mu_nc - Lambda_nn^-1 Lambda_nc (theta_c - mu_c),
            // conditional precision Lambda_nn.
            let delta: Vec<f64> =
                theta_c.iter().zip(&self.mean_c).map(|(t, m)| t - m).collect();
            let shift = self.coupling.matvec(&delta);
            let corr = factors
                .solve_vec(&shift)
                .map_err(|e| NmcError::SamplerFailure(e.to_string()))?;
            let cond_mean: Vec<f64> =
                self.mean_nc.iter().zip(&corr).map(|(m, c)| m - c).collect();
            full = Self::draw_from_factors(factors, &cond_mean, self.sigma2.sqrt(), rng);
        } else if p_nc > 0 {
            return Err(NmcError::ConditionalSamplerUnsupported);
        }
        full.extend_from_slice(theta_c);
        Ok(full)
    }

    fn prepare(&self, candidate: &TabularDataset) -> Result<Matrix, NmcError> {
        self.fm
            .feature_matrix(candidate)
            .map_err(|e| NmcError::SamplerFailure(e.to_string()))
    }

    fn mean_response(&self, theta: &[f64], prepared: &Matrix) -> Vec<f64> {
        prepared.matvec(theta)
    }
}

// ---------------------------------------------------------------------------
// Convergence probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ProbeCell {
    pub n_outer: usize,
    pub m1: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub cells: Vec<ProbeCell>,
    /// Least-squares slope of log RMSE against log N, one per M1 value.
    pub slope_in_n: Vec<(usize, f64)>,
}

/// RMSE of `eig_nmc` against a closed-form truth over a grid of sample
/// counts, with fitted log-log slopes in N.
pub fn convergence_probe<S: PosteriorSampler>(
    sampler: &S,
    candidate: &TabularDataset,
    truth: f64,
    n_grid: &[usize],
    m1_grid: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ProbeResult, NmcError> {
    let mut cells = Vec::new();
    for &m1 in m1_grid {
        for &n in n_grid {
            let mut se = 0.0;
            for rep in 0..reps.max(1) {
                let cfg = NmcConfig {
                    n_outer: n,
                    m1,
                    m2: None,
                    seed: seed
                        .wrapping_add(rep as u64)
                        .wrapping_mul(0x9e3779b97f4a7c15)
                        .wrapping_add((n as u64) << 20)
                        .wrapping_add(m1 as u64),
                };
                let est = eig_nmc(sampler, candidate, cfg)?;
                se += (est.value - truth) * (est.value - truth);
            }
            cells.push(ProbeCell { n_outer: n, m1, rmse: (se / reps.max(1) as f64).sqrt() });
        }
    }
    let mut slope_in_n = Vec::new();
    for &m1 in m1_grid {
        let pts: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.m1 == m1 && c.rmse > 0.0)
            .map(|c| ((c.n_outer as f64).ln(), c.rmse.ln()))
            .collect();
        if pts.len() >= 2 {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            slope_in_n.push((m1, sxy / sxx));
        }
    }
    Ok(ProbeResult { cells, slope_in_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes_linear::{eig_theta, posterior_update, ConjugatePrior};
    use crate::data::{illustrative_config, synth_rct, TabularDataset};
    use rand::Rng;
    use rand::rngs::StdRng;

    fn fitted(seed: u64, n_host: usize) -> (FeatureMap, GaussianPosterior) {
        let fm = FeatureMap::first_order(3);
        let host = synth_rct(&illustrative_config(), n_host, seed);
        let post =
            posterior_update(&ConjugatePrior::unit(fm.dim()).posterior(), &fm, &host).unwrap();
        (fm, post)
    }

    fn candidate(n: usize, seed: u64) -> TabularDataset {
        let d = synth_rct(&illustrative_config(), n, seed);
        let (masked, _) = d.mask_outcomes();
        masked
    }

    #[test]
    fn empty_candidate_gives_exact_zero() {
        let (fm, post) = fitted(1, 50);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let empty = candidate(0, 2);
        let cfg = NmcConfig::new(50, 50, 3);
        assert_eq!(eig_nmc(&sampler, &empty, cfg).unwrap().value, 0.0);
        assert_eq!(eig_rb(&sampler, &empty, cfg).unwrap().value, 0.0);
        assert_eq!(eig_theta_c_nmc(&sampler, &empty, cfg).unwrap().value, 0.0);
    }

    #[test]
    fn huge_noise_carries_no_information() {
        let fm = FeatureMap::first_order(3);
        let host = synth_rct(&illustrative_config(), 50, 4);
        // sigma^2 -> infinity proxy with unit-scale parameters: the prior
        // covariance sigma^2 Lambda0^-1 stays I when Lambda0 = sigma^2 I.
        let prior = ConjugatePrior::ridge(fm.dim(), 1e6, 1e6);
        let post = posterior_update(&prior.posterior(), &fm, &host).unwrap();
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(30, 5);
        let est = eig_nmc(&sampler, &cand, NmcConfig::new(200, 200, 6)).unwrap();
        assert!(
            est.value.abs() <= 3.0 * est.standard_error.max(1e-6),
            "estimate {} se {}",
            est.value,
            est.standard_error
        );
    }

    #[test]
    fn nmc_matches_closed_form_at_reference_sample_counts() {
        let (fm, post) = fitted(7, 100);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(60, 8);
        let truth = eig_theta(&post, &fm, &cand).unwrap();
        let mut errs = Vec::new();
        for seed in 0..5 {
            let est = eig_nmc(&sampler, &cand, NmcConfig::new(400, 800, seed)).unwrap();
            let tol = (0.05 * truth.abs()).max(3.0 * est.standard_error);
            errs.push(((est.value - truth).abs(), tol));
        }
        // Median over seeds.
        errs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let (err, tol) = errs[errs.len() / 2];
        assert!(err <= tol, "median error {err} vs tolerance {tol} (truth {truth})");
    }

    #[test]
    fn rb_matches_closed_form() {
        let (fm, post) = fitted(9, 100);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(60, 10);
        let truth = eig_theta(&post, &fm, &cand).unwrap();
        let mut errs = Vec::new();
        for seed in 0..5 {
            let est = eig_rb(&sampler, &cand, NmcConfig::new(400, 800, seed)).unwrap();
            let tol = (0.05 * truth.abs()).max(3.0 * est.standard_error);
            errs.push(((est.value - truth).abs(), tol));
        }
        errs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let (err, tol) = errs[errs.len() / 2];
        assert!(err <= tol, "median error {err} vs tolerance {tol} (truth {truth})");
    }

    #[test]
    fn rb_variance_not_larger_than_nmc() {
        // The Rao-Blackwell replacement wins when the analytic-entropy
        // noise it removes dominates the numerator-denominator coupling of
        // the plain ratio: small candidates against a diffuse posterior.
        let fm = FeatureMap::first_order(1);
        let host = synth_rct(
            &crate::data::DgpConfig {
                covariates: vec![crate::data::CovariateDist::Normal { mean: 0.0, sd: 1.0 }],
                baseline: crate::data::LinearModel { intercept: 0.5, coefficients: vec![1.0] },
                effect: crate::data::LinearModel { intercept: 1.0, coefficients: vec![0.5] },
                noise_sd: 1.0,
                treat_prob: 0.5,
            },
            4,
            300,
        );
        let prior = ConjugatePrior::ridge(fm.dim(), 0.2, 1.0);
        let post = posterior_update(&prior.posterior(), &fm, &host).unwrap();
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(1, 301);
        let mut nmc_vals = Vec::new();
        let mut rb_vals = Vec::new();
        for seed in 0..50 {
            let cfg = NmcConfig::new(100, 200, 7000 + seed);
            nmc_vals.push(eig_nmc(&sampler, &cand, cfg).unwrap().value);
            rb_vals.push(eig_rb(&sampler, &cand, cfg).unwrap().value);
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let v_nmc = var(&nmc_vals);
        let v_rb = var(&rb_vals);
        assert!(v_rb <= v_nmc * 1.1, "RB variance {v_rb} vs NMC {v_nmc}");
    }

    #[test]
    fn targeted_estimator_equals_full_when_all_parameters_causal() {
        let fm = FeatureMap {
            nc_terms: vec![],
            c_terms: vec![
                crate::bayes_linear::MonomialTerm::intercept(),
                crate::bayes_linear::MonomialTerm::linear(0),
            ],
        };
        let mut rng = StdRng::seed_from_u64(13);
        let x = Matrix::from_fn(50, 1, |_, _| rng.gen_range(-1.0..1.0));
        let t: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2) as u8).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let host = TabularDataset::new(x, t, Some(y), None).unwrap();
        let post =
            posterior_update(&ConjugatePrior::unit(fm.dim()).posterior(), &fm, &host).unwrap();
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(30, 14);
        let cand = TabularDataset::new(
            Matrix::from_fn(cand.n(), 1, |i, _| cand.covariate_row(i)[0]),
            cand.treatments().to_vec(),
            None,
            None,
        )
        .unwrap();
        let full = eig_nmc(&sampler, &cand, NmcConfig::new(300, 300, 15)).unwrap();
        let targeted = eig_theta_c_nmc(&sampler, &cand, NmcConfig::new(300, 300, 16)).unwrap();
        let combined = (full.standard_error.powi(2) + targeted.standard_error.powi(2)).sqrt();
        assert!(
            (full.value - targeted.value).abs() <= 3.0 * combined,
            "{} vs {}",
            full.value,
            targeted.value
        );
    }

    #[test]
    fn targeted_estimator_near_zero_for_untreated_candidate() {
        // A tight posterior and a small candidate keep the O(1/M) bias of
        // the two inner estimators far below the Monte Carlo band.
        let (fm, post) = fitted(17, 300);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let src = candidate(10, 18);
        let untreated = TabularDataset::new(
            src.covariates().clone(),
            vec![0; src.n()],
            None,
            None,
        )
        .unwrap();
        let est = eig_theta_c_nmc(&sampler, &untreated, NmcConfig::new(200, 800, 19)).unwrap();
        assert!(
            est.value.abs() <= 3.0 * est.standard_error.max(1e-3),
            "estimate {} se {}",
            est.value,
            est.standard_error
        );
    }

    #[test]
    fn targeted_no_more_informative_than_full() {
        let (fm, post) = fitted(21, 60);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(25, 22);
        let full = eig_nmc(&sampler, &cand, NmcConfig::new(300, 400, 23)).unwrap();
        let tgt = eig_theta_c_nmc(&sampler, &cand, NmcConfig::new(300, 400, 23)).unwrap();
        let slack = 3.0 * (full.standard_error.powi(2) + tgt.standard_error.powi(2)).sqrt();
        assert!(tgt.value <= full.value + slack);
    }

    #[test]
    fn sampler_moments_match_posterior() {
        let (fm, post) = fitted(25, 120);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let n = 100_000;
        let p = post.dim();
        let mut sums = vec![0.0; p];
        for _ in 0..n {
            let th = sampler.sample_theta(&mut rng);
            for j in 0..p {
                sums[j] += th[j];
            }
        }
        // Componentwise 4-sigma CLT band using the true posterior variances.
        let cov_diag: Vec<f64> = {
            let inv = linalg::solve_psd(&post.precision, &Matrix::identity(p)).unwrap();
            (0..p).map(|j| post.sigma2 * inv[(j, j)]).collect()
        };
        for j in 0..p {
            let mean = sums[j] / n as f64;
            let se = (cov_diag[j] / n as f64).sqrt();
            assert!(
                (mean - post.mean[j]).abs() <= 4.0 * se,
                "component {j}: {mean} vs {} (se {se})",
                post.mean[j]
            );
        }
    }

    #[test]
    fn conditional_draws_center_on_conditional_mean() {
        let (fm, post) = fitted(27, 120);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(28);
        let p_nc = fm.p_nc();
        let theta_c = post.mean[fm.c_range()].to_vec();
        let n = 100_000;
        let mut sums = vec![0.0; p_nc];
        for _ in 0..n {
            let th = sampler.sample_given_c(&theta_c, &mut rng).unwrap();
            for j in 0..p_nc {
                sums[j] += th[j];
            }
        }
        // At theta_c = mean_c the conditional mean is exactly mean_nc.
        let idx: Vec<usize> = (0..p_nc).collect();
        let block = post.precision.sub_block(&idx);
        let inv = linalg::solve_psd(&block, &Matrix::identity(p_nc)).unwrap();
        for j in 0..p_nc {
            let mean = sums[j] / n as f64;
            let se = (post.sigma2 * inv[(j, j)] / n as f64).sqrt();
            assert!(
                (mean - post.mean[j]).abs() <= 4.0 * se,
                "component {j}: {mean} vs {}",
                post.mean[j]
            );
        }
    }

    #[test]
    fn degenerate_scalar_sampler_matches_normal_distribution() {
        // One-parameter model: draws must be N(mean, sigma^2/precision),
        // checked with a Kolmogorov-Smirnov test against the analytic CDF.
        let fm = FeatureMap { nc_terms: vec![], c_terms: vec![crate::bayes_linear::MonomialTerm::intercept()] };
        let post = GaussianPosterior {
            mean: vec![1.5],
            precision: Matrix::diag(&[4.0]),
            sigma2: 1.0,
        };
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let n = 20_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sampler.sample_theta(&mut rng)[0]).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sd = (post.sigma2 / 4.0f64).sqrt();
        let normal = statrs::distribution::Normal::new(1.5, sd).unwrap();
        use statrs::distribution::ContinuousCDF;
        let mut ks: f64 = 0.0;
        for (i, &v) in draws.iter().enumerate() {
            let f = normal.cdf(v);
            ks = ks.max((f - i as f64 / n as f64).abs());
            ks = ks.max(((i + 1) as f64 / n as f64 - f).abs());
        }
        // p > 0.001 corresponds to KS < sqrt(ln(2/alpha)/2n) ~ 1.95/sqrt(n).
        let critical = (2f64 / 0.001).ln().sqrt() / (2.0 * n as f64).sqrt() * 2f64.sqrt();
        assert!(ks < critical, "KS statistic {ks} vs critical {critical}");
    }

    #[test]
    fn estimators_deterministic_in_seed() {
        let (fm, post) = fitted(41, 60);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(20, 42);
        let cfg = NmcConfig::new(50, 80, 43);
        for f in [eig_nmc::<ConjugateLinearSampler>, eig_rb, eig_theta_c_nmc] {
            let a = f(&sampler, &cand, cfg).unwrap();
            let b = f(&sampler, &cand, cfg).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }

    #[test]
    fn estimates_finite_at_tiny_noise() {
        let fm = FeatureMap::first_order(3);
        let host = synth_rct(&illustrative_config(), 50, 44);
        let mut prior = ConjugatePrior::unit(fm.dim());
        prior.sigma2 = 1e-4;
        let post = posterior_update(&prior.posterior(), &fm, &host).unwrap();
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(25, 45);
        let cfg = NmcConfig::new(60, 100, 46);
        assert!(eig_nmc(&sampler, &cand, cfg).unwrap().value.is_finite());
        assert!(eig_rb(&sampler, &cand, cfg).unwrap().value.is_finite());
        assert!(eig_theta_c_nmc(&sampler, &cand, cfg).unwrap().value.is_finite());
    }

    #[test]
    fn probe_smoke_single_rep() {
        let (fm, post) = fitted(29, 60);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(20, 30);
        let truth = eig_theta(&post, &fm, &cand).unwrap();
        let res =
            convergence_probe(&sampler, &cand, truth, &[50, 100], &[50], 1, 31).unwrap();
        assert_eq!(res.cells.len(), 2);
        assert!(res.cells.iter().all(|c| c.rmse.is_finite()));
    }

    #[test]
    fn probe_rmse_nonincreasing_in_m1() {
        let (fm, post) = fitted(33, 60);
        let sampler = conjugate_linear_sampler(&post, &fm).unwrap();
        let cand = candidate(20, 34);
        let truth = eig_theta(&post, &fm, &cand).unwrap();
        let res = convergence_probe(
            &sampler,
            &cand,
            truth,
            &[2000],
            &[10, 100, 1000],
            8,
            35,
        )
        .unwrap();
        let rmses: Vec<f64> = res.cells.iter().map(|c| c.rmse).collect();
        // Allow small non-monotonicity from Monte Carlo noise.
        assert!(
            rmses[2] <= rmses[0] * 1.15,
            "RMSE did not shrink with M1: {rmses:?}"
        );
    }
}
