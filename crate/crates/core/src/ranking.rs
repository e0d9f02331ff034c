//! Experiment orchestration: EIG scoring of candidate sites under the
//! configured model/estimator/privacy mode, ground-truth PEHE rankings by
//! retraining on merges, ranking-agreement metrics, baselines, and the
//! drivers for the ranking, illustrative, secure-benchmark and
//! DP-comparison experiments.

use crate::bayes_linear::{
    self, cate_predict, eig_theta, eig_theta_c_paper, eig_theta_c_shared, eig_theta_shared,
    posterior_update, ConjugatePrior, FeatureMap, GaussianPosterior,
};
use crate::causal_gp::{self, GpPosteriorState, LmcKernelParams};
use crate::config::{
    build_feature_map, EstimatorKind, ExperimentConfig, GpFitConfig, ModelKind, NmcSamples,
    PrivacyMode, SourceConfig,
};
use crate::data::{
    self, load_csv, make_sites, subsample, synth_rct, MaskedSite, TabularDataset,
};
use crate::linalg::{self, Matrix};
use crate::mpc::EngineConfig;
use crate::nested_mc::{
    conjugate_linear_sampler, eig_nmc, eig_rb, eig_theta_c_nmc, NmcConfig,
};
use crate::privacy::{self, clip_covariates, Accounting, DpStatistic};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("{stage}{}: {message}", site.map(|s| format!(" (site {s})")).unwrap_or_default())]
    Stage { stage: &'static str, site: Option<usize>, message: String },
    #[error("rankings have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ranking is not a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("k = {k} invalid for {n} sites")]
    BadK { k: usize, n: usize },
}

fn stage<E: std::fmt::Display>(name: &'static str, site: Option<usize>) -> impl Fn(E) -> RankError {
    move |e| RankError::Stage { stage: name, site, message: e.to_string() }
}

// ---------------------------------------------------------------------------
// Rankings and agreement metrics
// ---------------------------------------------------------------------------

/// Site order by descending score; ties broken by ascending site index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx
}

/// Site order by ascending score (lower PEHE is better).
pub fn rank_ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx
}

fn positions(ranking: &[usize]) -> Result<Vec<usize>, RankError> {
    let n = ranking.len();
    let mut pos = vec![usize::MAX; n];
    for (rank, &site) in ranking.iter().enumerate() {
        if site >= n || pos[site] != usize::MAX {
            return Err(RankError::NotAPermutation(n));
        }
        pos[site] = rank;
    }
    Ok(pos)
}

/// Spearman rank correlation between two orderings of the same sites.
/// Ties are impossible by the tie-break contract.
pub fn spearman_rho(r1: &[usize], r2: &[usize]) -> Result<f64, RankError> {
    if r1.len() != r2.len() {
        return Err(RankError::LengthMismatch(r1.len(), r2.len()));
    }
    let n = r1.len();
    if n < 2 {
        return Ok(1.0);
    }
    let p1 = positions(r1)?;
    let p2 = positions(r2)?;
    let d2: f64 = (0..n)
        .map(|site| {
            let d = p1[site] as f64 - p2[site] as f64;
            d * d
        })
        .sum();
    let nf = n as f64;
    Ok(1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0)))
}

/// |top-k(predicted) intersect top-k(truth)| / k.
pub fn precision_at_k(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64, RankError> {
    if k == 0 || k > predicted.len() || k > truth.len() {
        return Err(RankError::BadK { k, n: predicted.len().min(truth.len()) });
    }
    let top: std::collections::HashSet<usize> = truth[..k].iter().copied().collect();
    let hits = predicted[..k].iter().filter(|s| top.contains(s)).count();
    Ok(hits as f64 / k as f64)
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineScores {
    pub sample_size: Vec<f64>,
    pub cov_dist: Vec<f64>,
    pub prop_score_error: Vec<f64>,
}

/// Mean log-density of candidate covariates under a Gaussian fit to the
/// host covariates. Singular fits fall back to a ridged covariance.
fn gaussian_similarity(host: &TabularDataset, candidates: &[&TabularDataset]) -> Vec<f64> {
    let d = host.dim();
    let n = host.n() as f64;
    let mut mean = vec![0.0; d];
    for i in 0..host.n() {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += host.covariates()[(i, j)];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..host.n() {
        for a in 0..d {
            let da = host.covariates()[(i, a)] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (host.covariates()[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    // Regularised fallback for singular covariances.
    let mut ridge = 0.0;
    let factors = loop {
        let mut c = cov.clone();
        for i in 0..d {
            c[(i, i)] += ridge;
        }
        match linalg::ldl_decompose(&c, linalg::default_pivot_tol(&c)) {
            Ok(f) if f.d.iter().all(|&p| p > 0.0) => break f,
            _ => {
                ridge = if ridge == 0.0 { 1e-6 } else { ridge * 10.0 };
                assert!(ridge < 1e3, "covariance hopelessly singular");
            }
        }
    };
    let logdet: f64 = factors.d.iter().map(|p| p.ln()).sum();
    let const_term = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
    candidates
        .iter()
        .map(|cand| {
            let mut acc = 0.0;
            for i in 0..cand.n() {
                let delta: Vec<f64> =
                    (0..d).map(|j| cand.covariates()[(i, j)] - mean[j]).collect();
                let sol = factors.solve_vec(&delta).expect("factorisation is PD");
                acc += const_term - 0.5 * linalg::dot(&delta, &sol);
            }
            acc / cand.n().max(1) as f64
        })
        .collect()
}

/// Ridge-regularised logistic regression of treatment on covariates,
/// fitted by iteratively reweighted least squares.
fn fit_propensity(host: &TabularDataset) -> Vec<f64> {
    let d = host.dim();
    let n = host.n();
    let mut beta = vec![0.0; d + 1];
    for _ in 0..25 {
        // Gradient and Hessian of the penalised log-likelihood.
        let mut grad = vec![0.0; d + 1];
        let mut hess = Matrix::identity(d + 1).scale(1e-6);
        for i in 0..n {
            let x = host.covariate_row(i);
            let mut z = beta[0];
            for j in 0..d {
                z += beta[j + 1] * x[j];
            }
            let p = data::sigmoid(z);
            let r = host.treatments()[i] as f64 - p;
            let w = (p * (1.0 - p)).max(1e-9);
            grad[0] += r;
            for j in 0..d {
                grad[j + 1] += r * x[j];
            }
            for a in 0..=d {
                let xa = if a == 0 { 1.0 } else { x[a - 1] };
                for b in a..=d {
                    let xb = if b == 0 { 1.0 } else { x[b - 1] };
                    hess[(a, b)] += w * xa * xb;
                }
            }
        }
        for a in 0..=d {
            grad[a] -= 1e-6 * beta[a];
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        match linalg::solve_psd_vec(&hess, &grad) {
            Ok(step) => {
                let mut moved = 0.0;
                for (b, s) in beta.iter_mut().zip(&step) {
                    *b += s;
                    moved += s.abs();
                }
                if moved < 1e-10 {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    beta
}

fn propensity_log_loss(beta: &[f64], data: &TabularDataset) -> f64 {
    let d = data.dim();
    let mut acc = 0.0;
    for i in 0..data.n() {
        let x = data.covariate_row(i);
        let mut z = beta[0];
        for j in 0..d {
            z += beta[j + 1] * x[j];
        }
        let p = data::sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
        acc -= if data.treatments()[i] == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    acc / data.n().max(1) as f64
}

/// The three outcome-free baselines: candidate sample size, covariate
/// similarity under a Gaussian host fit, and the log-loss of a host-fitted
/// propensity model on the candidate (more error = more complementary
/// treatment allocation).
pub fn baseline_scores(
    host: &TabularDataset,
    candidates: &[&TabularDataset],
) -> Result<BaselineScores, RankError> {
    let sample_size = candidates.iter().map(|c| c.n() as f64).collect();
    let cov_dist = gaussian_similarity(host, candidates);
    let beta = fit_propensity(host);
    let prop_score_error =
        candidates.iter().map(|c| propensity_log_loss(&beta, c)).collect();
    Ok(BaselineScores { sample_size, cov_dist, prop_score_error })
}

// ---------------------------------------------------------------------------
// Model abstraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub fm: FeatureMap,
    pub prior: ConjugatePrior,
    pub gp: GpFitConfig,
    pub gp_seed: u64,
}

pub enum FittedModel {
    Poly(GaussianPosterior),
    Gp(GpPosteriorState),
}

impl ModelSpec {
    pub fn fit(&self, train: &TabularDataset) -> Result<FittedModel, RankError> {
        match self.kind {
            ModelKind::Polynomial => {
                let post = posterior_update(&self.prior.posterior(), &self.fm, train)
                    .map_err(stage("fit", None))?;
                Ok(FittedModel::Poly(post))
            }
            ModelKind::CausalGp => {
                let init =
                    self.gp.init.clone().unwrap_or_else(|| LmcKernelParams::unit(train.dim()));
                let iters = if self.gp.fit { self.gp.max_iters } else { 0 };
                let (_, state) = causal_gp::fit_host(&init, train, iters, self.gp_seed)
                    .map_err(stage("fit", None))?;
                Ok(FittedModel::Gp(state))
            }
        }
    }

    pub fn predict_cate(&self, fitted: &FittedModel, x: &[f64]) -> Result<f64, RankError> {
        match fitted {
            FittedModel::Poly(post) => {
                cate_predict(post, &self.fm, x).map_err(stage("predict", None))
            }
            FittedModel::Gp(state) => Ok(state.predict_cate(x)),
        }
    }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Retrain on each merge (re-tuning GP hyperparameters where enabled),
/// evaluate PEHE on the holdout, and rank ascending by PEHE with ties
/// broken by site index.
pub fn ground_truth_ranking(
    host: &TabularDataset,
    unmasked: &[TabularDataset],
    spec: &ModelSpec,
    holdout: &TabularDataset,
) -> Result<(Vec<f64>, Vec<usize>), RankError> {
    if holdout.tau_true().is_none() {
        return Err(RankError::Stage {
            stage: "ground-truth",
            site: None,
            message: "holdout carries no true CATE values".into(),
        });
    }
    let mut pehe_vals = Vec::with_capacity(unmasked.len());
    for (site, cand) in unmasked.iter().enumerate() {
        let merged = host.merged(cand);
        let fitted = spec.fit(&merged).map_err(|e| RankError::Stage {
            stage: "ground-truth-fit",
            site: Some(site),
            message: e.to_string(),
        })?;
        let preds: Result<Vec<f64>, RankError> = (0..holdout.n())
            .map(|i| spec.predict_cate(&fitted, holdout.covariate_row(i)))
            .collect();
        let v = bayes_linear::pehe(&preds?, holdout)
            .map_err(stage("ground-truth-pehe", Some(site)))?;
        pehe_vals.push(v);
    }
    let ranking = rank_ascending(&pehe_vals);
    Ok((pehe_vals, ranking))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub name: String,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub rho: f64,
    pub p_at_k: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub config: ExperimentConfig,
    pub manifest: crate::data::SiteManifest,
    pub eig_scores: Vec<f64>,
    pub noised_scores: Option<Vec<f64>>,
    pub implied_ranking: Vec<usize>,
    pub ground_truth_pehe: Vec<f64>,
    pub ground_truth_ranking: Vec<usize>,
    /// Which convention `ground_truth_pehe` is reported in.
    pub pehe_convention: String,
    pub rho: f64,
    pub p_at_k: Vec<(usize, f64)>,
    pub baselines: Vec<BaselineReport>,
    pub scoring_ms: u128,
    pub ground_truth_ms: u128,
    pub mpc_transcript_bytes: Option<usize>,
}

// ---------------------------------------------------------------------------
// Pipeline pieces
// ---------------------------------------------------------------------------

pub fn build_source(cfg: &ExperimentConfig) -> Result<TabularDataset, RankError> {
    match &cfg.source {
        SourceConfig::Synthetic { dgp, n } => Ok(synth_rct(dgp, *n, cfg.seed ^ 0x50ce)),
        SourceConfig::IhdpSurrogate => Ok(synth_rct(
            &data::ihdp_surrogate_config(),
            data::IHDP_SURROGATE_ROWS,
            cfg.seed ^ 0x50ce,
        )),
        SourceConfig::Csv { path, schema } => {
            load_csv(path, schema.as_ref()).map_err(stage("source", None))
        }
    }
}

fn model_spec(cfg: &ExperimentConfig, fm: FeatureMap) -> ModelSpec {
    let mut prior = ConjugatePrior::ridge(fm.dim(), cfg.prior.ridge_c, cfg.prior.sigma2);
    prior.mu0 = vec![0.0; fm.dim()];
    ModelSpec {
        kind: cfg.model,
        fm,
        prior,
        gp: cfg.gp.clone(),
        gp_seed: cfg.seed ^ 0x69,
    }
}

fn score_plaintext(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    fitted: &FittedModel,
    candidates: &[&TabularDataset],
) -> Result<Vec<f64>, RankError> {
    let mut scores = Vec::with_capacity(candidates.len());
    for (site, cand) in candidates.iter().enumerate() {
        let err = |e: String| RankError::Stage { stage: "score", site: Some(site), message: e };
        let v = match (fitted, cfg.estimator) {
            (FittedModel::Poly(post), EstimatorKind::ClosedFull) => {
                eig_theta(post, &spec.fm, cand).map_err(|e| err(e.to_string()))?
            }
            (FittedModel::Poly(post), EstimatorKind::ClosedCate) => {
                eig_theta_c_paper(post, &spec.fm, cand).map_err(|e| err(e.to_string()))?
            }
            (FittedModel::Poly(post), est) => {
                let sampler = conjugate_linear_sampler(post, &spec.fm)
                    .map_err(|e| err(e.to_string()))?;
                let nmc_cfg = NmcConfig {
                    n_outer: cfg.nmc.n_outer,
                    m1: cfg.nmc.m1,
                    m2: cfg.nmc.m2,
                    seed: cfg.seed ^ (site as u64).wrapping_mul(0x9e3779b97f4a7c15),
                };
                let est_val = match est {
                    EstimatorKind::Nmc => eig_nmc(&sampler, cand, nmc_cfg),
                    EstimatorKind::Rb => eig_rb(&sampler, cand, nmc_cfg),
                    EstimatorKind::NmcCate => eig_theta_c_nmc(&sampler, cand, nmc_cfg),
                    _ => unreachable!("closed forms handled above"),
                }
                .map_err(|e| err(e.to_string()))?;
                est_val.value
            }
            (FittedModel::Gp(state), EstimatorKind::ClosedFull) => {
                causal_gp::eig_f(state, cand).map_err(|e| err(e.to_string()))?
            }
            (FittedModel::Gp(state), EstimatorKind::ClosedCate) => {
                causal_gp::eig_tau_x0(state, cand).map_err(|e| err(e.to_string()))?
            }
            (FittedModel::Gp(_), _) => {
                return Err(err("GP model supports closed forms only".into()));
            }
        };
        scores.push(v);
    }
    Ok(scores)
}

/// Reveal-noise scale for the secure pipeline: the sensitivity of the
/// revealed whitened statistic to one candidate row is at most
/// ln(1 + p M^2 tr(Lambda^-1)), which the host can bound from its own
/// posterior; divided by epsilon it calibrates the final Laplace noising.
pub fn mpc_reveal_scale(
    lambda: &Matrix,
    fm: &FeatureMap,
    statistic: DpStatistic,
    m_clip: f64,
    epsilon: f64,
) -> Result<f64, RankError> {
    let p = lambda.rows();
    let inv = linalg::solve_psd(lambda, &Matrix::identity(p))
        .map_err(stage("mpc-scale", None))?;
    let trace: f64 = (0..p).map(|i| inv[(i, i)]).sum();
    let m_bound = m_clip.max(1.0);
    let m_feat = match statistic {
        DpStatistic::FullTheta => fm
            .nc_terms
            .iter()
            .chain(&fm.c_terms)
            .map(|t| m_bound.powi(t.powers.iter().sum::<u32>() as i32))
            .fold(1.0f64, f64::max),
        DpStatistic::CausalBlock => fm
            .c_terms
            .iter()
            .map(|t| m_bound.powi(t.powers.iter().sum::<u32>() as i32))
            .fold(1.0f64, f64::max),
    };
    let sensitivity = (1.0 + p as f64 * m_feat * m_feat * trace).ln();
    Ok(sensitivity / epsilon)
}

struct MpcScores {
    revealed: Vec<f64>,
    noised: Vec<f64>,
    transcript_bytes: usize,
}

fn score_mpc(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    host: &TabularDataset,
    candidates: &[&TabularDataset],
) -> Result<MpcScores, RankError> {
    let statistic = match cfg.estimator {
        EstimatorKind::ClosedFull => DpStatistic::FullTheta,
        _ => DpStatistic::CausalBlock,
    };
    let m_clip = cfg.privacy_params.m_clip;
    let clipped_host = clip_covariates(host, m_clip);
    let post = posterior_update(&spec.prior.posterior(), &spec.fm, &clipped_host)
        .map_err(stage("mpc-fit", None))?;
    let lambda = match statistic {
        DpStatistic::FullTheta => post.precision.clone(),
        DpStatistic::CausalBlock => {
            let idx: Vec<usize> = spec.fm.c_range().collect();
            post.precision.sub_block(&idx)
        }
    };
    let reveal_scale =
        mpc_reveal_scale(&lambda, &spec.fm, statistic, m_clip, cfg.privacy_params.epsilon)?;

    let mut revealed = Vec::with_capacity(candidates.len());
    let mut noised = Vec::with_capacity(candidates.len());
    let mut transcript_bytes = 0usize;
    for (site, cand) in candidates.iter().enumerate() {
        let clipped = clip_covariates(cand, m_clip);
        let err = |e: String| RankError::Stage { stage: "mpc-score", site: Some(site), message: e };
        let mut session = cfg
            .engine
            .session(cfg.seed ^ (site as u64 + 1).wrapping_mul(0xd1b54a32d192ed03));
        let run = match statistic {
            DpStatistic::FullTheta => eig_theta_shared(&post, &spec.fm, &clipped, &mut session),
            DpStatistic::CausalBlock => {
                eig_theta_c_shared(&post, &spec.fm, &clipped, &mut session)
            }
        }
        .map_err(|e| err(e.to_string()))?;
        let secure = session.net.reveal(&run.value, None);
        let with_noise = session.net.reveal(&run.value, Some(reveal_scale));
        transcript_bytes += session.net.transcript().total_bytes();
        revealed.push(secure);
        noised.push(with_noise);
    }
    Ok(MpcScores { revealed, noised, transcript_bytes })
}

fn metrics_against_truth(
    ranking: &[usize],
    truth: &[usize],
    k_values: &[usize],
) -> Result<(f64, Vec<(usize, f64)>), RankError> {
    let rho = spearman_rho(ranking, truth)?;
    let mut p_at_k = Vec::new();
    for &k in k_values {
        if k <= ranking.len() {
            p_at_k.push((k, precision_at_k(ranking, truth, k)?));
        }
    }
    Ok((rho, p_at_k))
}

/// The full ranking experiment: build sites, fit the host model, score
/// candidates under the configured estimator and privacy mode, build the
/// ground-truth PEHE ranking by retraining on merges, and score agreement.
pub fn run_ranking(cfg: &ExperimentConfig) -> Result<RankingReport, RankError> {
    cfg.validate().map_err(stage("config", None))?;
    let source = build_source(cfg)?;
    let fm = build_feature_map(&cfg.feature_map, source.dim()).map_err(stage("config", None))?;
    let spec = model_spec(cfg, fm);
    let collection = make_sites(&source, &cfg.sites, cfg.seed).map_err(stage("sites", None))?;
    let holdout = subsample(
        &source,
        &collection.manifest.host.selection,
        cfg.holdout_size.min(source.n()),
        cfg.seed ^ 0x601d_0007,
    )
    .map_err(stage("holdout", None))?;

    let masked: Vec<&TabularDataset> = collection.candidates.iter().map(|c| &c.data).collect();

    let scoring_start = Instant::now();
    let fitted = spec.fit(&collection.host)?;
    let (eig_scores, noised_scores, ranking_scores, transcript) = match cfg.privacy {
        PrivacyMode::None => {
            let scores = score_plaintext(cfg, &spec, &fitted, &masked)?;
            (scores.clone(), None, scores, None)
        }
        PrivacyMode::Mpc => {
            let mpc = score_mpc(cfg, &spec, &collection.host, &masked)?;
            (
                mpc.revealed.clone(),
                Some(mpc.noised.clone()),
                mpc.noised,
                Some(mpc.transcript_bytes),
            )
        }
        PrivacyMode::Dp => {
            let frag = privacy::dp_rank(
                &collection.host,
                &masked,
                &spec.fm,
                cfg.privacy_params.statistic,
                cfg.prior.ridge_c,
                cfg.privacy_params.m_clip,
                cfg.privacy_params.epsilon,
                cfg.privacy_params.accounting,
                cfg.seed ^ 0xd9,
                None,
            )
            .map_err(stage("dp-score", None))?;
            let plain: Vec<f64> = frag.releases.iter().map(|r| r.plain).collect();
            let noised: Vec<f64> = frag.releases.iter().map(|r| r.noised).collect();
            (plain, Some(noised.clone()), noised, None)
        }
    };
    let implied_ranking = rank_descending(&ranking_scores);
    let scoring_ms = scoring_start.elapsed().as_millis();

    let truth_start = Instant::now();
    let unmasked: Vec<TabularDataset> =
        collection.candidates.iter().map(MaskedSite::unseal).collect();
    let (pehe_raw, ground_truth) = ground_truth_ranking(&collection.host, &unmasked, &spec, &holdout)?;
    drop(unmasked);
    let ground_truth_ms = truth_start.elapsed().as_millis();

    let (rho, p_at_k) = metrics_against_truth(&implied_ranking, &ground_truth, &cfg.metrics.k_values)?;

    let mut baselines = Vec::new();
    let base = baseline_scores(&collection.host, &masked)?;
    for (name, scores) in [
        ("sample_size", base.sample_size.clone()),
        ("cov_dist", base.cov_dist.clone()),
        ("prop_score_error", base.prop_score_error.clone()),
    ] {
        let ranking = rank_descending(&scores);
        let (b_rho, b_p) = metrics_against_truth(&ranking, &ground_truth, &cfg.metrics.k_values)?;
        baselines.push(BaselineReport {
            name: name.into(),
            scores,
            ranking,
            rho: b_rho,
            p_at_k: b_p,
        });
    }

    let (pehe_vals, convention) = if cfg.metrics.root_pehe {
        (pehe_raw.iter().map(|v| v.sqrt()).collect(), "root".to_string())
    } else {
        (pehe_raw, "squared".to_string())
    };

    Ok(RankingReport {
        config: cfg.clone(),
        manifest: collection.manifest,
        eig_scores,
        noised_scores,
        implied_ranking,
        ground_truth_pehe: pehe_vals,
        ground_truth_ranking: ground_truth,
        pehe_convention: convention,
        rho,
        p_at_k,
        baselines,
        scoring_ms,
        ground_truth_ms,
        mpc_transcript_bytes: transcript,
    })
}

// ---------------------------------------------------------------------------
// Illustrative twin/complementary experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IllustrativeConfig {
    pub ratios: Vec<f64>,
    pub seeds: usize,
    pub n_host: usize,
    pub n_comp: usize,
    pub source_n: usize,
    pub holdout: usize,
    pub seed: u64,
    /// Also compute sampler-based estimates per cell (slower).
    pub with_nmc: bool,
    pub nmc: NmcSamples,
}

impl Default for IllustrativeConfig {
    fn default() -> Self {
        IllustrativeConfig {
            ratios: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 8.0, 16.0, 32.0],
            seeds: 50,
            n_host: 100,
            n_comp: 100,
            source_n: 20_000,
            holdout: 2000,
            seed: 1,
            with_nmc: false,
            nmc: NmcSamples::default(),
        }
    }
}

/// Which site each criterion preferred at one (seed, ratio) cell:
/// differences are complementary minus twin, so positive EIG differences
/// and negative PEHE differences favour the complementary site.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IllustrativeCell {
    pub d_eig_full: f64,
    pub d_eig_c: f64,
    pub d_pehe: f64,
    pub d_eig_full_nmc: Option<f64>,
    pub d_eig_c_nmc: Option<f64>,
}

impl IllustrativeCell {
    /// 1, 2 or 3 per the region taxonomy; 0 when the signs fit none.
    pub fn region(&self) -> u8 {
        let full_comp = self.d_eig_full > 0.0;
        let c_comp = self.d_eig_c > 0.0;
        let pehe_comp = self.d_pehe < 0.0;
        match (full_comp, c_comp, pehe_comp) {
            (true, true, true) => 1,
            (false, true, true) => 2,
            (false, false, false) => 3,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IllustrativeRatioRow {
    pub ratio: f64,
    pub mean_d_eig_full: f64,
    pub sd_d_eig_full: f64,
    pub mean_d_eig_c: f64,
    pub sd_d_eig_c: f64,
    pub mean_d_pehe: f64,
    pub sd_d_pehe: f64,
    pub mean_d_eig_full_nmc: Option<f64>,
    pub mean_d_eig_c_nmc: Option<f64>,
    pub region_counts: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IllustrativeReport {
    pub config: IllustrativeConfig,
    pub rows: Vec<IllustrativeRatioRow>,
    /// Fraction of seeds exhibiting a region-2 ratio band.
    pub region2_fraction: f64,
    /// Fraction of seeds in region 1 at the smallest ratio.
    pub region1_at_min_fraction: f64,
    /// Fraction of seeds in region 3 at the largest ratio.
    pub region3_at_max_fraction: f64,
    pub cells: Vec<Vec<IllustrativeCell>>,
}

/// Sweep the twin/complementary size ratio on the illustrative DGP.
pub fn run_illustrative(cfg: &IllustrativeConfig) -> Result<IllustrativeReport, RankError> {
    let dgp = data::illustrative_config();
    let host_sel = data::illustrative_host_selection();
    let (twin_sel, comp_sel) = data::twin_complement(&host_sel);
    let fm = FeatureMap::first_order(dgp.dim());
    let prior = ConjugatePrior::ridge(fm.dim(), 1.0, 1.0);
    let mut cells: Vec<Vec<IllustrativeCell>> = vec![Vec::new(); cfg.ratios.len()];

    for seed_idx in 0..cfg.seeds {
        let seed = cfg.seed.wrapping_add(seed_idx as u64);
        let source = synth_rct(&dgp, cfg.source_n, seed ^ 0xabc);
        let host = subsample(&source, &host_sel, cfg.n_host, seed ^ 0x1)
            .map_err(stage("illustrative-host", None))?;
        let comp = subsample(&source, &comp_sel, cfg.n_comp, seed ^ 0x2)
            .map_err(stage("illustrative-comp", None))?;
        let holdout = subsample(&source, &host_sel, cfg.holdout, seed ^ 0x3)
            .map_err(stage("illustrative-holdout", None))?;
        let post = posterior_update(&prior.posterior(), &fm, &host)
            .map_err(stage("illustrative-fit", None))?;
        let comp_masked = comp.clone().mask_outcomes().0;

        for (ri, &ratio) in cfg.ratios.iter().enumerate() {
            let n_twin = ((ratio * cfg.n_comp as f64).round() as usize).max(1);
            let twin = subsample(&source, &twin_sel, n_twin, seed ^ (0x100 + ri as u64))
                .map_err(stage("illustrative-twin", None))?;
            let twin_masked = twin.clone().mask_outcomes().0;

            let e = stage("illustrative-eig", None);
            let d_eig_full = eig_theta(&post, &fm, &comp_masked).map_err(&e)?
                - eig_theta(&post, &fm, &twin_masked).map_err(&e)?;
            let d_eig_c = eig_theta_c_paper(&post, &fm, &comp_masked).map_err(&e)?
                - eig_theta_c_paper(&post, &fm, &twin_masked).map_err(&e)?;

            let pehe_of = |cand: &TabularDataset| -> Result<f64, RankError> {
                let merged = host.merged(cand);
                let p = posterior_update(&prior.posterior(), &fm, &merged)
                    .map_err(stage("illustrative-retrain", None))?;
                let preds: Result<Vec<f64>, _> = (0..holdout.n())
                    .map(|i| cate_predict(&p, &fm, holdout.covariate_row(i)))
                    .collect();
                bayes_linear::pehe(&preds.map_err(stage("illustrative-pred", None))?, &holdout)
                    .map_err(stage("illustrative-pehe", None))
            };
            let d_pehe = pehe_of(&comp)? - pehe_of(&twin)?;

            let (mut d_full_nmc, mut d_c_nmc) = (None, None);
            if cfg.with_nmc {
                let sampler = conjugate_linear_sampler(&post, &fm)
                    .map_err(stage("illustrative-sampler", None))?;
                let nmc_cfg = NmcConfig {
                    n_outer: cfg.nmc.n_outer,
                    m1: cfg.nmc.m1,
                    m2: cfg.nmc.m2,
                    seed: seed ^ (0x9000 + ri as u64),
                };
                let e = stage("illustrative-nmc", None);
                d_full_nmc = Some(
                    eig_nmc(&sampler, &comp_masked, nmc_cfg).map_err(&e)?.value
                        - eig_nmc(&sampler, &twin_masked, nmc_cfg).map_err(&e)?.value,
                );
                d_c_nmc = Some(
                    eig_theta_c_nmc(&sampler, &comp_masked, nmc_cfg).map_err(&e)?.value
                        - eig_theta_c_nmc(&sampler, &twin_masked, nmc_cfg).map_err(&e)?.value,
                );
            }

            cells[ri].push(IllustrativeCell {
                d_eig_full,
                d_eig_c,
                d_pehe,
                d_eig_full_nmc: d_full_nmc,
                d_eig_c_nmc: d_c_nmc,
            });
        }
    }

    let stats = |vals: Vec<f64>| {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        (mean, sd)
    };
    let mut rows = Vec::new();
    for (ri, &ratio) in cfg.ratios.iter().enumerate() {
        let col = &cells[ri];
        let (mean_full, sd_full) = stats(col.iter().map(|c| c.d_eig_full).collect());
        let (mean_c, sd_c) = stats(col.iter().map(|c| c.d_eig_c).collect());
        let (mean_p, sd_p) = stats(col.iter().map(|c| c.d_pehe).collect());
        let mut region_counts = [0usize; 4];
        for c in col {
            region_counts[c.region() as usize] += 1;
        }
        let nmc_mean = |f: fn(&IllustrativeCell) -> Option<f64>| {
            let vals: Vec<f64> = col.iter().filter_map(f).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        rows.push(IllustrativeRatioRow {
            ratio,
            mean_d_eig_full: mean_full,
            sd_d_eig_full: sd_full,
            mean_d_eig_c: mean_c,
            sd_d_eig_c: sd_c,
            mean_d_pehe: mean_p,
            sd_d_pehe: sd_p,
            mean_d_eig_full_nmc: nmc_mean(|c| c.d_eig_full_nmc),
            mean_d_eig_c_nmc: nmc_mean(|c| c.d_eig_c_nmc),
            region_counts,
        });
    }

    let seeds = cfg.seeds.max(1);
    let mut region2_seeds = 0usize;
    let mut region1_min = 0usize;
    let mut region3_max = 0usize;
    for s in 0..cfg.seeds {
        if (0..cfg.ratios.len()).any(|ri| cells[ri][s].region() == 2) {
            region2_seeds += 1;
        }
        if cells[0][s].region() == 1 {
            region1_min += 1;
        }
        if cells[cfg.ratios.len() - 1][s].region() == 3 {
            region3_max += 1;
        }
    }

    Ok(IllustrativeReport {
        config: cfg.clone(),
        rows,
        region2_fraction: region2_seeds as f64 / seeds as f64,
        region1_at_min_fraction: region1_min as f64 / seeds as f64,
        region3_at_max_fraction: region3_max as f64 / seeds as f64,
        cells,
    })
}

// ---------------------------------------------------------------------------
// Secure benchmark and DP comparison
// ---------------------------------------------------------------------------

/// Site generation for the privacy benchmarks: equal-size candidates with
/// arm-stratified draws, so every site carries the same arm counts and
/// the statistic spread across sites comes from covariate coverage alone.
/// That places the spread between the secure reveal noise and the DP
/// noise, which is the regime the comparison is about.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyBenchConfig {
    pub sites: usize,
    pub seeds: usize,
    pub host_size: usize,
    pub site_size: usize,
    pub min_per_arm: usize,
    pub epsilon: f64,
    pub m_clip: f64,
    pub statistic: DpStatistic,
    pub accounting: Accounting,
    pub engine: EngineConfig,
    pub seed: u64,
}

impl Default for PrivacyBenchConfig {
    fn default() -> Self {
        PrivacyBenchConfig {
            sites: 20,
            seeds: 20,
            host_size: 400,
            site_size: 400,
            min_per_arm: 50,
            epsilon: 100.0,
            m_clip: 6.0,
            statistic: DpStatistic::CausalBlock,
            accounting: Accounting::PerRelease,
            // 16 fixed-point bits as in the fidelity contract; the wider
            // ring keeps local-truncation wraps negligible through the
            // matrix products.
            engine: EngineConfig { ring_bits: 96, ..EngineConfig::default() },
            seed: 7,
        }
    }
}

fn bench_sites(
    cfg: &PrivacyBenchConfig,
    seed: u64,
) -> Result<(TabularDataset, Vec<TabularDataset>), RankError> {
    let source = synth_rct(&data::ihdp_surrogate_config(), data::IHDP_SURROGATE_ROWS, seed ^ 0xfeed);
    let treated_frac = source.treated_count() as f64 / source.n().max(1) as f64;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut draw = |what: &'static str| -> Result<TabularDataset, RankError> {
        let size = if what == "host" { cfg.host_size } else { cfg.site_size };
        let k_treated =
            ((size as f64 * treated_frac).round() as usize).max(cfg.min_per_arm);
        let k_untreated = size - k_treated;
        if k_untreated < cfg.min_per_arm {
            return Err(RankError::Stage {
                stage: "bench-sites",
                site: None,
                message: format!("{what}: arm counts infeasible at size {size}"),
            });
        }
        let sel = data::random_selection_fn(source.dim(), rng.gen());
        let treated_idx: Vec<usize> =
            (0..source.n()).filter(|&i| source.treatments()[i] == 1).collect();
        let untreated_idx: Vec<usize> =
            (0..source.n()).filter(|&i| source.treatments()[i] == 0).collect();
        let treated_pool = source.subset(&treated_idx);
        let untreated_pool = source.subset(&untreated_idx);
        let a = subsample(&treated_pool, &sel, k_treated, rng.gen())
            .map_err(stage("bench-sites", None))?;
        let b = subsample(&untreated_pool, &sel, k_untreated, rng.gen())
            .map_err(stage("bench-sites", None))?;
        Ok(a.merged(&b))
    };
    let host = draw("host")?;
    let mut sites = Vec::with_capacity(cfg.sites);
    for _ in 0..cfg.sites {
        sites.push(draw("site")?.mask_outcomes().0);
    }
    Ok((host, sites))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcSeedResult {
    pub plain: Vec<f64>,
    pub secure: Vec<f64>,
    pub noised: Vec<f64>,
    pub rho_pre_noise: f64,
    pub rho_post_noise: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcBenchReport {
    pub config: PrivacyBenchConfig,
    pub per_seed: Vec<MpcSeedResult>,
    pub mse: f64,
    pub mean_rho_pre_noise: f64,
    pub median_rho_post_noise: f64,
    pub reveal_noise_scale: f64,
    pub mean_transcript_bytes_per_site: f64,
}

/// Secure-vs-plaintext benchmark: per seed, score every site in plaintext
/// and under the engine, then apply the final reveal noising.
pub fn run_mpc_bench(cfg: &PrivacyBenchConfig) -> Result<MpcBenchReport, RankError> {
    let mut per_seed = Vec::with_capacity(cfg.seeds);
    let mut sq_err_sum = 0.0;
    let mut count = 0usize;
    let mut transcript_total = 0usize;
    let mut reveal_scale_used = 0.0;
    for s in 0..cfg.seeds {
        let seed = cfg.seed.wrapping_add(s as u64).wrapping_mul(0x2545f4914f6cdd1d);
        let (host, sites) = bench_sites(cfg, seed)?;
        let fm = FeatureMap::first_order(host.dim());
        let prior = ConjugatePrior::ridge(fm.dim(), 1.0, 1.0);
        let clipped_host = clip_covariates(&host, cfg.m_clip);
        let post = posterior_update(&prior.posterior(), &fm, &clipped_host)
            .map_err(stage("mpc-bench-fit", None))?;
        let lambda = match cfg.statistic {
            DpStatistic::FullTheta => post.precision.clone(),
            DpStatistic::CausalBlock => {
                let idx: Vec<usize> = fm.c_range().collect();
                post.precision.sub_block(&idx)
            }
        };
        let reveal_scale =
            mpc_reveal_scale(&lambda, &fm, cfg.statistic, cfg.m_clip, cfg.epsilon)?;
        reveal_scale_used = reveal_scale;

        let mut plain = Vec::new();
        let mut secure = Vec::new();
        let mut noised = Vec::new();
        for (site, cand) in sites.iter().enumerate() {
            let clipped = clip_covariates(cand, cfg.m_clip);
            let err =
                |e: String| RankError::Stage { stage: "mpc-bench", site: Some(site), message: e };
            let p = match cfg.statistic {
                DpStatistic::FullTheta => {
                    eig_theta(&post, &fm, &clipped).map_err(|e| err(e.to_string()))?
                }
                DpStatistic::CausalBlock => {
                    eig_theta_c_paper(&post, &fm, &clipped).map_err(|e| err(e.to_string()))?
                }
            };
            let mut session =
                cfg.engine.session(seed ^ (site as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15));
            let run = match cfg.statistic {
                DpStatistic::FullTheta => eig_theta_shared(&post, &fm, &clipped, &mut session),
                DpStatistic::CausalBlock => {
                    eig_theta_c_shared(&post, &fm, &clipped, &mut session)
                }
            }
            .map_err(|e| err(e.to_string()))?;
            let sv = session.net.reveal(&run.value, None);
            let nv = session.net.reveal(&run.value, Some(reveal_scale));
            transcript_total += session.net.transcript().total_bytes();
            sq_err_sum += (sv - p) * (sv - p);
            count += 1;
            plain.push(p);
            secure.push(sv);
            noised.push(nv);
        }
        let truth_rank = rank_descending(&plain);
        let rho_pre = spearman_rho(&rank_descending(&secure), &truth_rank)?;
        let rho_post = spearman_rho(&rank_descending(&noised), &truth_rank)?;
        per_seed.push(MpcSeedResult {
            plain,
            secure,
            noised,
            rho_pre_noise: rho_pre,
            rho_post_noise: rho_post,
        });
    }
    let mut post_rhos: Vec<f64> = per_seed.iter().map(|r| r.rho_post_noise).collect();
    post_rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(MpcBenchReport {
        config: cfg.clone(),
        mse: sq_err_sum / count.max(1) as f64,
        mean_rho_pre_noise: per_seed.iter().map(|r| r.rho_pre_noise).sum::<f64>()
            / per_seed.len().max(1) as f64,
        median_rho_post_noise: post_rhos[post_rhos.len() / 2],
        reveal_noise_scale: reveal_scale_used,
        mean_transcript_bytes_per_site: transcript_total as f64 / count.max(1) as f64,
        per_seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpCompareReport {
    pub config: PrivacyBenchConfig,
    pub per_seed_rho: Vec<f64>,
    pub median_abs_rho: f64,
    pub mse: f64,
    pub noise_scale: f64,
    pub sensitivity: f64,
}

/// DP baseline on the same site generation: per-site Laplace release at
/// the derived scale, ranking agreement against the noise-free ranking.
pub fn run_dp_compare(cfg: &PrivacyBenchConfig) -> Result<DpCompareReport, RankError> {
    let mut rhos = Vec::with_capacity(cfg.seeds);
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    let mut scale = 0.0;
    let mut sens = 0.0;
    for s in 0..cfg.seeds {
        let seed = cfg.seed.wrapping_add(s as u64).wrapping_mul(0x2545f4914f6cdd1d);
        let (host, sites) = bench_sites(cfg, seed)?;
        let fm = FeatureMap::first_order(host.dim());
        let refs: Vec<&TabularDataset> = sites.iter().collect();
        let frag = privacy::dp_rank(
            &host,
            &refs,
            &fm,
            cfg.statistic,
            1.0,
            cfg.m_clip,
            cfg.epsilon,
            cfg.accounting,
            seed ^ 0xdada,
            None,
        )
        .map_err(stage("dp-compare", None))?;
        let plain: Vec<f64> = frag.releases.iter().map(|r| r.plain).collect();
        let rho = spearman_rho(&frag.ranking, &rank_descending(&plain))?;
        rhos.push(rho);
        for r in &frag.releases {
            sq_sum += (r.noised - r.plain) * (r.noised - r.plain);
            count += 1;
        }
        scale = frag.noise_scale;
        sens = frag.sensitivity;
    }
    let mut abs: Vec<f64> = rhos.iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(DpCompareReport {
        config: cfg.clone(),
        median_abs_rho: abs[abs.len() / 2],
        per_seed_rho: rhos,
        mse: sq_sum / count.max(1) as f64,
        noise_scale: scale,
        sensitivity: sens,
    })
}
