//! Command-line surface for the merge-scoring toolkit.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

mod validate;

use clap::{Args, Parser, Subcommand};
use mergescore_core::config::{
    EstimatorKind, ExperimentConfig, ModelKind, PrivacyMode, SourceConfig,
};
use mergescore_core::ranking::{
    run_dp_compare, run_illustrative, run_mpc_bench, run_ranking, IllustrativeConfig,
    PrivacyBenchConfig, RankError, RankingReport,
};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "mergescore", about = "Rank candidate dataset merges by expected information gain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ranking experiment and score agreement with ground truth.
    Rank(RankArgs),
    /// Sweep the twin/complementary size ratio on the illustrative DGP.
    Illustrate(IllustrateArgs),
    /// Secure-vs-plaintext fidelity benchmark for the linear EIG statistic.
    MpcBench(BenchArgs),
    /// Differential-privacy baseline on the same site generation.
    DpCompare(BenchArgs),
    /// Run the fast property suite and report pass/fail per check.
    Validate,
}

#[derive(Args)]
struct RankArgs {
    /// TOML experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// polynomial | causal_gp
    #[arg(long)]
    model: Option<String>,
    /// closed_full | closed_cate | nmc | rb | nmc_cate
    #[arg(long)]
    estimator: Option<String>,
    /// none | mpc | dp
    #[arg(long)]
    privacy: Option<String>,
    /// Number of candidate sites.
    #[arg(long)]
    sites: Option<usize>,
    /// Write the machine-readable report here (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IllustrateArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    /// Comma-separated size ratios to sweep.
    #[arg(long)]
    ratios: Option<String>,
    /// Also compute sampler-based estimates per cell (slower).
    #[arg(long, default_value_t = false)]
    with_nmc: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn classify_rank_error(err: &RankError) -> u8 {
    match err {
        RankError::Stage { stage, .. } => {
            if stage.starts_with("config") {
                EXIT_CONFIG
            } else if stage.starts_with("source")
                || stage.starts_with("sites")
                || stage.starts_with("holdout")
                || stage.starts_with("bench-sites")
            {
                EXIT_DATA
            } else {
                EXIT_NUMERIC
            }
        }
        _ => EXIT_NUMERIC,
    }
}

fn write_report<T: serde::Serialize>(out: &Option<PathBuf>, report: &T) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => {}
    }
    Ok(())
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "polynomial" => Ok(ModelKind::Polynomial),
        "causal_gp" => Ok(ModelKind::CausalGp),
        other => Err(format!("unknown model `{other}`")),
    }
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    match s {
        "closed_full" => Ok(EstimatorKind::ClosedFull),
        "closed_cate" => Ok(EstimatorKind::ClosedCate),
        "nmc" => Ok(EstimatorKind::Nmc),
        "rb" => Ok(EstimatorKind::Rb),
        "nmc_cate" => Ok(EstimatorKind::NmcCate),
        other => Err(format!("unknown estimator `{other}`")),
    }
}

fn parse_privacy(s: &str) -> Result<PrivacyMode, String> {
    match s {
        "none" => Ok(PrivacyMode::None),
        "mpc" => Ok(PrivacyMode::Mpc),
        "dp" => Ok(PrivacyMode::Dp),
        other => Err(format!("unknown privacy mode `{other}`")),
    }
}

fn print_ranking_table(report: &RankingReport) {
    println!("site  eig_score      noised         pehe ({})", report.pehe_convention);
    for site in 0..report.eig_scores.len() {
        let noised = report
            .noised_scores
            .as_ref()
            .map(|v| format!("{:>12.6}", v[site]))
            .unwrap_or_else(|| "           -".into());
        println!(
            "{site:>4}  {:>12.6}  {noised}  {:>12.6}",
            report.eig_scores[site], report.ground_truth_pehe[site]
        );
    }
    println!("implied ranking:      {:?}", report.implied_ranking);
    println!("ground-truth ranking: {:?}", report.ground_truth_ranking);
    print!("spearman rho = {:.4}", report.rho);
    for (k, p) in &report.p_at_k {
        print!("   p@{k} = {p:.3}");
    }
    println!();
    for b in &report.baselines {
        print!("baseline {:<18} rho = {:>7.4}", b.name, b.rho);
        for (k, p) in &b.p_at_k {
            print!("   p@{k} = {p:.3}");
        }
        println!();
    }
    println!(
        "scoring {} ms, ground truth {} ms{}",
        report.scoring_ms,
        report.ground_truth_ms,
        report
            .mpc_transcript_bytes
            .map(|b| format!(", mpc transcript {b} bytes"))
            .unwrap_or_default()
    );
}

fn cmd_rank(args: &RankArgs) -> Result<u8, anyhow::Error> {
    let mut cfg = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return Ok(EXIT_CONFIG);
            }
        },
        None => ExperimentConfig::surrogate_default(args.seed.unwrap_or(1)),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &args.model {
        match parse_model(m) {
            Ok(v) => cfg.model = v,
            Err(e) => {
                eprintln!("config error: {e}");
                return Ok(EXIT_CONFIG);
            }
        }
    }
    if let Some(est) = &args.estimator {
        match parse_estimator(est) {
            Ok(v) => cfg.estimator = v,
            Err(e) => {
                eprintln!("config error: {e}");
                return Ok(EXIT_CONFIG);
            }
        }
    }
    if let Some(p) = &args.privacy {
        match parse_privacy(p) {
            Ok(v) => cfg.privacy = v,
            Err(e) => {
                eprintln!("config error: {e}");
                return Ok(EXIT_CONFIG);
            }
        }
    }
    if let Some(k) = args.sites {
        cfg.sites.candidates = k;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("config error: {e}");
        return Ok(EXIT_CONFIG);
    }
    if cfg.model == ModelKind::CausalGp {
        if let SourceConfig::IhdpSurrogate = cfg.source {
            // Full hyperparameter fitting on 400-point hosts is expensive;
            // keep the default usable and let configs override.
            cfg.gp.max_iters = cfg.gp.max_iters.min(200);
        }
    }
    match run_ranking(&cfg) {
        Ok(report) => {
            print_ranking_table(&report);
            write_report(&args.out, &report)?;
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(classify_rank_error(&e))
        }
    }
}

fn cmd_illustrate(args: &IllustrateArgs) -> Result<u8, anyhow::Error> {
    let mut cfg = IllustrativeConfig::default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    if let Some(ratios) = &args.ratios {
        let parsed: Result<Vec<f64>, _> = ratios.split(',').map(|r| r.trim().parse()).collect();
        match parsed {
            Ok(v) if !v.is_empty() => cfg.ratios = v,
            _ => {
                eprintln!("config error: cannot parse --ratios `{ratios}`");
                return Ok(EXIT_CONFIG);
            }
        }
    }
    cfg.with_nmc = args.with_nmc;
    match run_illustrative(&cfg) {
        Ok(report) => {
            println!(
                "ratio   d_eig_full (mean+-sd)   d_eig_c (mean+-sd)    d_pehe (mean+-sd)     regions 1/2/3"
            );
            for row in &report.rows {
                println!(
                    "{:>5.1}  {:>9.4} {:>8.4}   {:>9.4} {:>8.4}   {:>9.4} {:>8.4}   {:>3}/{:>3}/{:>3}",
                    row.ratio,
                    row.mean_d_eig_full,
                    row.sd_d_eig_full,
                    row.mean_d_eig_c,
                    row.sd_d_eig_c,
                    row.mean_d_pehe,
                    row.sd_d_pehe,
                    row.region_counts[1],
                    row.region_counts[2],
                    row.region_counts[3],
                );
            }
            println!(
                "region 2 band present in {:.0}% of seeds; region 1 at smallest ratio {:.0}%; region 3 at largest {:.0}%",
                100.0 * report.region2_fraction,
                100.0 * report.region1_at_min_fraction,
                100.0 * report.region3_at_max_fraction,
            );
            write_report(&args.out, &report)?;
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(classify_rank_error(&e))
        }
    }
}

fn bench_config(args: &BenchArgs) -> PrivacyBenchConfig {
    let mut cfg = PrivacyBenchConfig::default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    if let Some(sites) = args.sites {
        cfg.sites = sites;
    }
    if let Some(eps) = args.epsilon {
        cfg.epsilon = eps;
    }
    cfg
}

fn cmd_mpc_bench(args: &BenchArgs) -> Result<u8, anyhow::Error> {
    match run_mpc_bench(&bench_config(args)) {
        Ok(report) => {
            println!(
                "secure vs plaintext: mse = {:.3e}, mean rho (pre-noise) = {:.4}",
                report.mse, report.mean_rho_pre_noise
            );
            println!(
                "with final Laplace noising (scale {:.4}): median rho = {:.4}",
                report.reveal_noise_scale, report.median_rho_post_noise
            );
            println!(
                "mean transcript per site: {:.0} bytes",
                report.mean_transcript_bytes_per_site
            );
            write_report(&args.out, &report)?;
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(classify_rank_error(&e))
        }
    }
}

fn cmd_dp_compare(args: &BenchArgs) -> Result<u8, anyhow::Error> {
    match run_dp_compare(&bench_config(args)) {
        Ok(report) => {
            println!(
                "dp baseline at epsilon {}: sensitivity {:.3}, noise scale {:.3}",
                report.config.epsilon, report.sensitivity, report.noise_scale
            );
            println!(
                "median |rho| vs noise-free ranking = {:.4}, mse = {:.3e}",
                report.median_abs_rho, report.mse
            );
            write_report(&args.out, &report)?;
            Ok(0)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(classify_rank_error(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Rank(args) => cmd_rank(args),
        Command::Illustrate(args) => cmd_illustrate(args),
        Command::MpcBench(args) => cmd_mpc_bench(args),
        Command::DpCompare(args) => cmd_dp_compare(args),
        Command::Validate => validate::run().map(|ok| if ok { 0 } else { EXIT_NUMERIC }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
