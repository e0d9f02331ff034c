//! Dataset ingestion, synthetic data-generating processes and the
//! selection-function subsampling that carves host/candidate sites out of
//! a source population.

use crate::linalg::Matrix;
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("treatment column contains non-binary value {0}")]
    NonBinaryTreatment(f64),
    #[error("requested {requested} rows but only {available} available")]
    InsufficientRows { requested: usize, available: usize },
    #[error("could not satisfy site constraints after {tries} attempts: {detail}")]
    InfeasibleConstraints { tries: usize, detail: String },
    #[error("dataset has no outcomes")]
    MissingOutcomes,
}

/// Covariates, binary treatments, optional outcomes and optional true
/// CATE values. Candidate sites circulate with `y = None`; only the
/// ground-truth harness unseals outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularDataset {
    x: Matrix,
    t: Vec<u8>,
    y: Option<Vec<f64>>,
    tau_true: Option<Vec<f64>>,
}

impl TabularDataset {
    pub fn new(
        x: Matrix,
        t: Vec<u8>,
        y: Option<Vec<f64>>,
        tau_true: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let n = x.rows();
        if t.len() != n {
            return Err(DataError::SchemaViolation(format!(
                "treatment length {} vs {} rows",
                t.len(),
                n
            )));
        }
        if let Some(b) = t.iter().find(|&&b| b > 1) {
            return Err(DataError::NonBinaryTreatment(*b as f64));
        }
        if let Some(ref y) = y {
            if y.len() != n {
                return Err(DataError::SchemaViolation("outcome length mismatch".into()));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(DataError::SchemaViolation("non-finite outcome".into()));
            }
        }
        if let Some(ref tau) = tau_true {
            if tau.len() != n {
                return Err(DataError::SchemaViolation("tau length mismatch".into()));
            }
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(DataError::SchemaViolation("non-finite covariate".into()));
        }
        Ok(TabularDataset { x, t, y, tau_true })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.x
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn treatments(&self) -> &[u8] {
        &self.t
    }

    pub fn outcomes(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn tau_true(&self) -> Option<&[f64]> {
        self.tau_true.as_deref()
    }

    pub fn treated_count(&self) -> usize {
        self.t.iter().filter(|&&b| b == 1).count()
    }

    pub fn untreated_count(&self) -> usize {
        self.n() - self.treated_count()
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> TabularDataset {
        let x = Matrix::from_fn(indices.len(), self.dim(), |i, j| self.x[(indices[i], j)]);
        let t = indices.iter().map(|&i| self.t[i]).collect();
        let y = self.y.as_ref().map(|y| indices.iter().map(|&i| y[i]).collect());
        let tau = self.tau_true.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        TabularDataset { x, t, y, tau_true: tau }
    }

    /// Concatenate two datasets with identical covariate layout. Outcomes
    /// and true CATEs survive only if present on both sides.
    pub fn merged(&self, other: &TabularDataset) -> TabularDataset {
        assert_eq!(self.dim(), other.dim(), "covariate dimension mismatch in merge");
        let n = self.n() + other.n();
        let x = Matrix::from_fn(n, self.dim(), |i, j| {
            if i < self.n() {
                self.x[(i, j)]
            } else {
                other.x[(i - self.n(), j)]
            }
        });
        let mut t = self.t.clone();
        t.extend_from_slice(&other.t);
        let y = match (&self.y, &other.y) {
            (Some(a), Some(b)) => {
                let mut v = a.clone();
                v.extend_from_slice(b);
                Some(v)
            }
            _ => None,
        };
        let tau_true = match (&self.tau_true, &other.tau_true) {
            (Some(a), Some(b)) => {
                let mut v = a.clone();
                v.extend_from_slice(b);
                Some(v)
            }
            _ => None,
        };
        TabularDataset { x, t, y, tau_true }
    }

    /// Split off the outcomes, leaving a masked dataset. The sealed half
    /// can only be reattached through [`SealedOutcomes::unseal_into`].
    pub fn mask_outcomes(mut self) -> (TabularDataset, Option<SealedOutcomes>) {
        let sealed = self.y.take().map(SealedOutcomes);
        (self, sealed)
    }
}

/// Outcomes detached from a masked candidate site. Holding this type is
/// the only way to rebuild an outcome-bearing dataset, which keeps
/// unmasking an explicit, auditable step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SealedOutcomes(Vec<f64>);

impl SealedOutcomes {
    pub fn unseal_into(self, masked: &TabularDataset) -> TabularDataset {
        assert_eq!(self.0.len(), masked.n(), "sealed outcome length mismatch");
        TabularDataset {
            x: masked.x.clone(),
            t: masked.t.clone(),
            y: Some(self.0),
            tau_true: masked.tau_true.clone(),
        }
    }
}

/// Column naming for CSV ingestion: covariates `x1..xd`, treatment `t`,
/// optional outcome `y` and optional true CATE `tau`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: Option<String>,
    pub tau: Option<String>,
}

impl CsvSchema {
    /// Infer the schema from a header row using the documented names.
    pub fn infer(headers: &[String]) -> Result<Self, DataError> {
        let covariates: Vec<String> =
            headers.iter().filter(|h| h.starts_with('x')).cloned().collect();
        if covariates.is_empty() {
            return Err(DataError::SchemaViolation("no covariate columns x1..xd found".into()));
        }
        if !headers.iter().any(|h| h == "t") {
            return Err(DataError::SchemaViolation("missing treatment column `t`".into()));
        }
        Ok(CsvSchema {
            covariates,
            treatment: "t".into(),
            outcome: headers.iter().find(|h| *h == "y").cloned(),
            tau: headers.iter().find(|h| *h == "tau").cloned(),
        })
    }
}

/// Load a dataset from a headered CSV file.
pub fn load_csv(path: &Path, schema: Option<&CsvSchema>) -> Result<TabularDataset, DataError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| DataError::ParseError(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::ParseError(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = CsvSchema::infer(&headers)?;
            &inferred
        }
    };
    let col_index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::SchemaViolation(format!("missing column `{name}`")))
    };
    let x_cols: Vec<usize> =
        schema.covariates.iter().map(|c| col_index(c)).collect::<Result<_, _>>()?;
    let t_col = col_index(&schema.treatment)?;
    let y_col = schema.outcome.as_ref().map(|c| col_index(c)).transpose()?;
    let tau_col = schema.tau.as_ref().map(|c| col_index(c)).transpose()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut y = y_col.map(|_| Vec::new());
    let mut tau = tau_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| DataError::ParseError(e.to_string()))?;
        let parse = |idx: usize| -> Result<f64, DataError> {
            record
                .get(idx)
                .ok_or_else(|| DataError::ParseError("short record".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| DataError::ParseError(e.to_string()))
        };
        rows.push(x_cols.iter().map(|&c| parse(c)).collect::<Result<_, _>>()?);
        let tv = parse(t_col)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(DataError::NonBinaryTreatment(tv));
        }
        t.push(tv as u8);
        if let (Some(c), Some(buf)) = (y_col, y.as_mut()) {
            buf.push(parse(c)?);
        }
        if let (Some(c), Some(buf)) = (tau_col, tau.as_mut()) {
            buf.push(parse(c)?);
        }
    }
    TabularDataset::new(Matrix::from_rows(&rows), t, y, tau)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid of a sparse polynomial in the covariates plus a treatment term.
/// `complemented` selection functions evaluate to 1 - S(x, t).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionFunction {
    pub intercept: f64,
    pub active: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub powers: Vec<u32>,
    pub treatment_coefficient: f64,
    pub complemented: bool,
}

impl SelectionFunction {
    pub fn probability(&self, x: &[f64], t: u8) -> f64 {
        let mut z = self.intercept + self.treatment_coefficient * t as f64;
        for ((&col, &coef), &pow) in
            self.active.iter().zip(&self.coefficients).zip(&self.powers)
        {
            z += coef * x[col].powi(pow as i32);
        }
        let s = sigmoid(z);
        let p = if self.complemented { 1.0 - s } else { s };
        // Saturated sigmoids round to exactly 0 or 1 in floats; the
        // selection probability contract is the open interval.
        p.clamp(1e-12, 1.0 - 1e-12)
    }

    pub fn complement(&self) -> SelectionFunction {
        let mut c = self.clone();
        c.complemented = !c.complemented;
        c
    }
}

/// The twin/complementary pair: the host's own selection function and its
/// pointwise complement.
pub fn twin_complement(host: &SelectionFunction) -> (SelectionFunction, SelectionFunction) {
    (host.clone(), host.complement())
}

/// Randomly generated selection function: a random subset of covariates,
/// random coefficients and random small integer powers feed the sigmoid,
/// plus a random treatment term so treatment allocation varies by site.
pub fn random_selection_fn(dim: usize, seed: u64) -> SelectionFunction {
    assert!(dim >= 1);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut active: Vec<usize> = (0..dim).filter(|_| rng.gen_bool(0.5)).collect();
    if active.is_empty() {
        active.push(rng.gen_range(0..dim));
    }
    let coefficients = active.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
    let powers = active.iter().map(|_| rng.gen_range(1..=3)).collect();
    // A strong treatment term makes treatment allocation genuinely
    // heterogeneous across sites; the per-arm minimum rejects the most
    // extreme draws.
    SelectionFunction {
        intercept: rng.gen_range(-0.5..0.5),
        active,
        coefficients,
        powers,
        treatment_coefficient: rng.gen_range(-2.5..2.5),
        complemented: false,
    }
}

/// Per-column covariate distribution for the synthetic DGP.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Beta { alpha: f64, beta: f64 },
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl CovariateDist {
    fn sample(&self, rng: &mut StdRng) -> f64 {
        match *self {
            CovariateDist::Normal { mean, sd } => mean + sd * standard_normal(rng),
            CovariateDist::Beta { alpha, beta } => sample_beta(alpha, beta, rng),
            CovariateDist::Bernoulli { p } => {
                if rng.gen_bool(p) {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateDist::Uniform { lo, hi } => rng.gen_range(lo..hi),
        }
    }
}

pub(crate) fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

fn sample_gamma(shape: f64, rng: &mut StdRng) -> f64 {
    // Marsaglia-Tsang; boost for shape < 1.
    if shape < 1.0 {
        let u: f64 = rng.gen_range(1e-12..1.0);
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = standard_normal(rng);
        let v = (1.0 + c * z).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen_range(1e-12..1.0);
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn sample_beta(alpha: f64, beta: f64, rng: &mut StdRng) -> f64 {
    let a = sample_gamma(alpha, rng);
    let b = sample_gamma(beta, rng);
    a / (a + b)
}

/// Linear form used for the outcome baseline and the treatment-interaction
/// block: `intercept + coefficients . x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + crate::linalg::dot(&self.coefficients, x)
    }
}

/// Randomised-controlled-trial style DGP: covariates are i.i.d. across
/// columns, treatment is Bernoulli(treat_prob) independent of covariates,
/// and the outcome is baseline(x) + t * effect(x) + noise. The evaluated
/// effect block is stored per row as the true CATE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub covariates: Vec<CovariateDist>,
    pub baseline: LinearModel,
    pub effect: LinearModel,
    pub noise_sd: f64,
    pub treat_prob: f64,
}

impl DgpConfig {
    pub fn dim(&self) -> usize {
        self.covariates.len()
    }
}

/// The three-covariate illustrative configuration: Beta(12,3), N(4,1) and
/// Beta(1,7) covariates, outcome 1 + x0 - x1 + x2 + t(5 + 2 x0 + 2 x1 - 4 x2),
/// unit noise.
pub fn illustrative_config() -> DgpConfig {
    DgpConfig {
        covariates: vec![
            CovariateDist::Beta { alpha: 12.0, beta: 3.0 },
            CovariateDist::Normal { mean: 4.0, sd: 1.0 },
            CovariateDist::Beta { alpha: 1.0, beta: 7.0 },
        ],
        baseline: LinearModel { intercept: 1.0, coefficients: vec![1.0, -1.0, 1.0] },
        effect: LinearModel { intercept: 5.0, coefficients: vec![2.0, 2.0, -4.0] },
        noise_sd: 1.0,
        treat_prob: 0.5,
    }
}

/// Synthetic surrogate with the shape of the infant-health benchmark:
/// 747 x 24 with six continuous and eighteen binary covariates, a dense
/// linear and sparse heterogeneous outcome model. Coefficients are fixed
/// by an internal seed so the surrogate is the same everywhere.
pub fn ihdp_surrogate_config() -> DgpConfig {
    let mut rng = StdRng::seed_from_u64(0x1dbd_5077);
    let mut covariates = Vec::with_capacity(24);
    for _ in 0..6 {
        covariates.push(CovariateDist::Normal { mean: 0.0, sd: 1.0 });
    }
    for _ in 0..18 {
        covariates.push(CovariateDist::Bernoulli { p: rng.gen_range(0.15..0.85) });
    }
    let baseline_coefficients: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Heterogeneity concentrated on the continuous block plus a few
    // binary flags, so the CATE varies strongly across the population.
    let mut effect_coefficients = vec![0.0; 24];
    for c in effect_coefficients.iter_mut().take(6) {
        *c = rng.gen_range(-5.0..5.0);
    }
    for j in [7usize, 11, 16] {
        effect_coefficients[j] = rng.gen_range(-5.0..5.0);
    }
    DgpConfig {
        covariates,
        baseline: LinearModel { intercept: 1.0, coefficients: baseline_coefficients },
        effect: LinearModel { intercept: 4.0, coefficients: effect_coefficients },
        noise_sd: 0.5,
        // Treated units are scarce, as in the infant-health benchmark
        // (139 of 747); sites then genuinely compete over causal
        // information rather than over sample size.
        treat_prob: 0.19,
    }
}

/// Sample size of the surrogate source population.
pub const IHDP_SURROGATE_ROWS: usize = 747;

/// The host selection function of the illustrative experiment:
/// sigmoid(1 + 2 x0 - x1 - 2 t). The host under-samples treated units, so
/// its complement supplies the missing treated arm; that is the geometry
/// in which the targeted information gain keeps preferring the
/// complementary site after the full-parameter gain has switched to the
/// twin.
pub fn illustrative_host_selection() -> SelectionFunction {
    SelectionFunction {
        intercept: 1.0,
        active: vec![0, 1],
        coefficients: vec![2.0, -1.0],
        powers: vec![1, 1],
        treatment_coefficient: -2.0,
        complemented: false,
    }
}

pub fn synth_rct(cfg: &DgpConfig, n: usize, seed: u64) -> TabularDataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let d = cfg.dim();
    let mut rows = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = cfg.covariates.iter().map(|c| c.sample(&mut rng)).collect();
        let ti = if rng.gen_bool(cfg.treat_prob) { 1u8 } else { 0u8 };
        let effect = cfg.effect.eval(&x);
        let mean = cfg.baseline.eval(&x) + ti as f64 * effect;
        y.push(mean + cfg.noise_sd * standard_normal(&mut rng));
        tau.push(effect);
        t.push(ti);
        rows.push(x);
    }
    let x = if n == 0 { Matrix::zeros(0, d) } else { Matrix::from_rows(&rows) };
    TabularDataset { x, t, y: Some(y), tau_true: Some(tau) }
}

/// Weighted sampling without replacement, inclusion weights proportional
/// to the selection probability; deterministic per seed.
pub fn subsample(
    data: &TabularDataset,
    s: &SelectionFunction,
    n_target: usize,
    seed: u64,
) -> Result<TabularDataset, DataError> {
    if n_target > data.n() {
        return Err(DataError::InsufficientRows { requested: n_target, available: data.n() });
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..data.n())
        .map(|i| s.probability(data.covariate_row(i), data.treatments()[i]).max(1e-12))
        .collect();
    let mut total: f64 = weights.iter().sum();
    let mut chosen = Vec::with_capacity(n_target);
    for _ in 0..n_target {
        let mut target = rng.gen_range(0.0..total);
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = Some(i);
                break;
            }
            target -= w;
        }
        // Floating point slack can walk past the end; take the last live row.
        let pick = pick
            .or_else(|| weights.iter().rposition(|&w| w > 0.0))
            .expect("no rows left with positive weight");
        chosen.push(pick);
        total -= weights[pick];
        weights[pick] = 0.0;
    }
    chosen.sort_unstable();
    Ok(data.subset(&chosen))
}

/// A candidate site: structurally masked data plus the sealed outcomes
/// reserved for the ground-truth harness.
#[derive(Debug, Clone)]
pub struct MaskedSite {
    pub data: TabularDataset,
    pub sealed: SealedOutcomes,
}

impl MaskedSite {
    pub fn unseal(&self) -> TabularDataset {
        self.sealed.clone().unseal_into(&self.data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteManifestEntry {
    pub site: usize,
    pub seed: u64,
    pub selection: SelectionFunction,
    pub size: usize,
    pub treated: usize,
    pub untreated: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteManifest {
    pub host: SiteManifestEntry,
    pub candidates: Vec<SiteManifestEntry>,
}

pub struct SiteCollection {
    pub host: TabularDataset,
    pub candidates: Vec<MaskedSite>,
    pub manifest: SiteManifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteParams {
    pub candidates: usize,
    pub host_size: usize,
    pub size_range: (usize, usize),
    pub min_per_arm: usize,
}

const MAX_SITE_TRIES: usize = 100;

fn draw_site(
    source: &TabularDataset,
    size: usize,
    min_per_arm: usize,
    seed: u64,
    what: &str,
) -> Result<(TabularDataset, SelectionFunction, u64), DataError> {
    // Rejection-resample with a fresh selection function each time, so a
    // draw whose allocation skew cannot satisfy the per-arm minimum does
    // not dead-end the loop.
    for attempt in 0..MAX_SITE_TRIES {
        let sub_seed = seed.wrapping_add(attempt as u64).wrapping_mul(0x100000001b3);
        let selection = random_selection_fn(source.dim(), sub_seed ^ 0x5e1ec7);
        let sub = subsample(source, &selection, size, sub_seed)?;
        if sub.treated_count() >= min_per_arm && sub.untreated_count() >= min_per_arm {
            return Ok((sub, selection, sub_seed));
        }
    }
    Err(DataError::InfeasibleConstraints {
        tries: MAX_SITE_TRIES,
        detail: format!("{what}: size {size} with min {min_per_arm} per arm"),
    })
}

/// Build the host and K candidate sites from a source population. Each
/// site gets its own random selection function; candidate sizes are
/// uniform in `size_range`; sites violating the per-arm minimum are
/// rejection-resampled; candidate outcomes are structurally masked.
pub fn make_sites(
    source: &TabularDataset,
    params: &SiteParams,
    seed: u64,
) -> Result<SiteCollection, DataError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let (host, host_sel, host_seed) =
        draw_site(source, params.host_size, params.min_per_arm, rng.gen(), "host")?;
    let host_entry = SiteManifestEntry {
        site: 0,
        seed: host_seed,
        selection: host_sel,
        size: host.n(),
        treated: host.treated_count(),
        untreated: host.untreated_count(),
    };
    let mut candidates = Vec::with_capacity(params.candidates);
    let mut entries = Vec::with_capacity(params.candidates);
    for k in 0..params.candidates {
        let size = rng.gen_range(params.size_range.0..=params.size_range.1);
        let (site, sel, site_seed) =
            draw_site(source, size, params.min_per_arm, rng.gen(), &format!("site {k}"))?;
        entries.push(SiteManifestEntry {
            site: k + 1,
            seed: site_seed,
            selection: sel,
            size: site.n(),
            treated: site.treated_count(),
            untreated: site.untreated_count(),
        });
        let (masked, sealed) = site.mask_outcomes();
        let sealed = sealed.ok_or(DataError::MissingOutcomes)?;
        candidates.push(MaskedSite { data: masked, sealed });
    }
    Ok(SiteCollection {
        host,
        candidates,
        manifest: SiteManifest { host: host_entry, candidates: entries },
    })
}
