//! The `validate` subcommand: a fast, self-contained property suite over
//! the library invariants, one pass/fail line per check.

use mergescore_core::bayes_linear::{
    eig_theta, eig_theta_c_exact, eig_theta_c_paper, posterior_update, ConjugatePrior, FeatureMap,
};
use mergescore_core::data::{
    illustrative_config, random_selection_fn, synth_rct, twin_complement, TabularDataset,
};
use mergescore_core::linalg::{self, gram, Matrix};
use mergescore_core::mpc::{
    add_shared, mul_shared, secure_log, secure_reciprocal, EngineConfig, LogParams, RecipParams,
    RingElement,
};
use mergescore_core::privacy::{
    exponential_select, laplace_release, sensitivity_linear_eig, Accounting, DpParams,
    SensitivityInputs,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, run: impl FnOnce() -> Result<(), String>) {
        match run() {
            Ok(()) => println!("PASS  {name}"),
            Err(msg) => {
                println!("FAIL  {name}: {msg}");
                self.failures += 1;
            }
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

pub fn run() -> anyhow::Result<bool> {
    let mut suite = Suite { failures: 0 };

    suite.check("share reconstruction is ring-exact", || {
        let engine = EngineConfig::default();
        let mut session = engine.session(1);
        let cfg = session.net.config();
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100_000 {
            let x = cfg.reduce(((rng.gen::<u64>() as u128) << 64) | rng.gen::<u64>() as u128);
            let shared = session.net.share(x);
            let back = shared
                .shares
                .iter()
                .fold(RingElement(0), |acc, &s| cfg.add(acc, s));
            if back != x {
                return Err(format!("{x:?} reconstructed as {back:?}"));
            }
        }
        Ok(())
    });

    suite.check("addition is local, multiplication is one round", || {
        let mut session = EngineConfig::default().session(3);
        let a = session.net.share_real(1.25).map_err(|e| e.to_string())?;
        let b = session.net.share_real(-2.5).map_err(|e| e.to_string())?;
        let rounds0 = session.net.round();
        let sum = add_shared(&a, &b).map_err(|e| e.to_string())?;
        ensure(session.net.round() == rounds0, "addition exchanged messages")?;
        let t = session.dealer.next_triple();
        let _ = mul_shared(&a, &b, &t, &mut session.net).map_err(|e| e.to_string())?;
        ensure(session.net.round() == rounds0 + 1, "multiplication used extra rounds")?;
        let v = session.net.reveal(&sum, None);
        ensure((v + 1.25).abs() < 1e-9, format!("sum decoded to {v}"))
    });

    suite.check("beaver triples satisfy the product identity", || {
        let engine = EngineConfig::default();
        let cfg = engine.fixed_point();
        let mut session = engine.session(4);
        for _ in 0..1000 {
            let t = session.dealer.next_triple();
            let rec = |v: &mergescore_core::mpc::SharedValue| {
                v.shares.iter().fold(RingElement(0), |acc, &s| cfg.add(acc, s))
            };
            let (a, b, c) = (rec(&t.a), rec(&t.b), rec(&t.c));
            if c != cfg.trunc(cfg.mul(a, b)) {
                return Err(format!("triple {} violates c = trunc(ab)", t.id));
            }
        }
        Ok(())
    });

    suite.check("secure reciprocal and log hit spot values", || {
        let mut session = EngineConfig::default().session(5);
        let x = session.net.share_real(4.0).map_err(|e| e.to_string())?;
        let r = secure_reciprocal(&x, RecipParams::default(), &mut session.dealer, &mut session.net)
            .map_err(|e| e.to_string())?;
        let rv = session.net.reveal(&r, None);
        ensure((rv - 0.25).abs() < 1e-3, format!("1/4 computed as {rv}"))?;
        let e = session.net.share_real(std::f64::consts::E).map_err(|e| e.to_string())?;
        let l = secure_log(&e, LogParams::default(), &mut session.dealer, &mut session.net)
            .map_err(|e| e.to_string())?;
        let lv = session.net.reveal(&l, None);
        ensure((lv - 1.0).abs() < 1e-2, format!("ln e computed as {lv}"))
    });

    suite.check("ldl reconstructs and log-det scales", || {
        let mut rng = StdRng::seed_from_u64(6);
        let b = Matrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let a = gram(&b).add(&Matrix::identity(5));
        let f = linalg::ldl_decompose(&a, linalg::default_pivot_tol(&a)).map_err(|e| e.to_string())?;
        let err = f.reconstruct().sub(&a).frobenius_norm();
        ensure(err < 1e-8 * a.frobenius_norm(), format!("reconstruction error {err}"))?;
        let lhs = linalg::log_det_psd(&a.scale(3.0)).map_err(|e| e.to_string())?;
        let rhs = 5.0 * 3f64.ln() + linalg::log_det_psd(&a).map_err(|e| e.to_string())?;
        ensure((lhs - rhs).abs() < 1e-8, "scaling law violated")
    });

    suite.check("selection complement identity", || {
        let s = random_selection_fn(4, 7);
        let (twin, comp) = twin_complement(&s);
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for t in [0u8, 1] {
                let total = twin.probability(&x, t) + comp.probability(&x, t);
                if (total - 1.0).abs() > 1e-9 {
                    return Err(format!("padding to {total}"));
                }
            }
        }
        Ok(())
    });

    suite.check("eig closed forms: sign, empty candidate, block reduction", || {
        let fm = FeatureMap::first_order(3);
        let host = synth_rct(&illustrative_config(), 60, 9);
        let post = posterior_update(&ConjugatePrior::unit(fm.dim()).posterior(), &fm, &host)
            .map_err(|e| e.to_string())?;
        let empty = TabularDataset::new(Matrix::zeros(0, 3), vec![], None, None)
            .map_err(|e| e.to_string())?;
        ensure(eig_theta(&post, &fm, &empty).map_err(|e| e.to_string())? == 0.0, "EIG(empty) != 0")?;
        let cand = synth_rct(&illustrative_config(), 30, 10).mask_outcomes().0;
        let full = eig_theta(&post, &fm, &cand).map_err(|e| e.to_string())?;
        let causal = eig_theta_c_paper(&post, &fm, &cand).map_err(|e| e.to_string())?;
        ensure(full >= 0.0 && causal >= 0.0, "negative information gain")?;
        // Block-diagonal instance: paper formula equals the exact marginal.
        let prior_post = ConjugatePrior::unit(fm.dim()).posterior();
        let untreated = TabularDataset::new(
            cand.covariates().clone(),
            vec![0; cand.n()],
            None,
            None,
        )
        .map_err(|e| e.to_string())?;
        let p = eig_theta_c_paper(&prior_post, &fm, &untreated).map_err(|e| e.to_string())?;
        let x = eig_theta_c_exact(&prior_post, &fm, &untreated).map_err(|e| e.to_string())?;
        ensure((p - x).abs() < 1e-9, format!("paper {p} vs exact {x}"))
    });

    suite.check("sensitivity bound dominates row swaps", || {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = rng.gen_range(1..=4usize);
            let m = rng.gen_range(0.5..2.0f64);
            let c = rng.gen_range(0.5..4.0f64);
            let bound = sensitivity_linear_eig(&SensitivityInputs { m_bound: m, d, c })
                .map_err(|e| e.to_string())?;
            let n = rng.gen_range(1..=5usize);
            let x = Matrix::from_fn(n, d, |_, _| rng.gen_range(-m..m));
            let e = Matrix::identity(d).scale(c);
            let f = |mat: &Matrix| linalg::log_det_psd(&e.add(&gram(mat))).unwrap();
            let base = f(&x);
            let row = rng.gen_range(0..n);
            let mut x2 = x.clone();
            for j in 0..d {
                x2[(row, j)] = rng.gen_range(-m..m);
            }
            let delta = (f(&x2) - base).abs();
            if delta > bound {
                return Err(format!("swap moved f by {delta} > {bound}"));
            }
        }
        Ok(())
    });

    suite.check("laplace release moments", || {
        let dp = DpParams { epsilon: 1.0, sensitivity: 0.5, accounting: Accounting::PerRelease };
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| laplace_release(0.0, &dp, 100 + i).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        let expect = 0.5 * 2f64.sqrt();
        ensure(
            mean.abs() < 0.03 && (sd - expect).abs() / expect < 0.05,
            format!("mean {mean}, sd {sd} vs {expect}"),
        )
    });

    suite.check("exponential mechanism frequencies", || {
        let dp = DpParams { epsilon: 1.0, sensitivity: 1.0, accounting: Accounting::PerRelease };
        let utilities = [2.0, 2.0, 2.0, 2.0];
        let mut counts = [0usize; 4];
        for s in 0..10_000 {
            counts[exponential_select(&utilities, &dp, s).unwrap()] += 1;
        }
        for &c in &counts {
            let f = c as f64 / 10_000.0;
            if (f - 0.25).abs() > 0.02 {
                return Err(format!("uniform case frequency {f}"));
            }
        }
        Ok(())
    });

    println!(
        "\n{} checks failed",
        if suite.failures == 0 { "no".to_string() } else { suite.failures.to_string() }
    );
    Ok(suite.failures == 0)
}
