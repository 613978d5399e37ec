mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use knockoff_esd::esd::{ci_tree_diagonal, esd_ci_tree, esd_knockoff_generic, lp_distance_zero};
use knockoff_esd::gaussian::{build_cov, CovModel};
use knockoff_esd::knockoff::{ci_exists, KnockoffSpec, Mechanism};
use knockoff_esd::lasso::{debias, fit_lasso_cd, LassoOptions};
use knockoff_esd::linalg;
use knockoff_esd::rng;
use knockoff_esd::sim::{parse_config_str, records_to_csv, run_experiment, ExperimentConfig, ExperimentOutput};
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn config(body: &str) -> Result<ExperimentConfig, String> {
    parse_config_str(body, ".").map_err(|e| e.to_string())
}

fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput, String> {
    run_experiment(cfg, workers()).map_err(|e| e.to_string())
}

const TREE: &str = r#"{
  "model": {"kind": "binary_tree", "p": 200, "rho": 0.5},
  "n": 200, "k": 20, "amplitude": 4.5, "sigma": 1.0, "q": 0.1,
  "mechanisms": ["equi", "asdp", "ci"], "offset": 1, "trials": 500, "seed": 1
}"#;

const CHAIN: &str = r#"{
  "model": {"kind": "markov_chain", "p": 200, "g_variance": 0.25},
  "n": 240, "k": 20, "amplitude": 4.5, "sigma": 0.7, "q": 0.1,
  "mechanisms": ["equi", "asdp", "ci"], "trials": 500, "seed": 2
}"#;

fn fdr_control() -> Outcome {
    let cfg = config(TREE)?;
    let out = run(&cfg)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &out.summary {
        let bound = cfg.q + 3.0 * s.fdp.se;
        pass &= s.fdp.mean <= bound;
        parts.push(format!(
            "{}: mean fdp {:.4} <= {:.4} (mean tpp {:.4})",
            s.mechanism, s.fdp.mean, bound, s.tpp.mean
        ));
    }
    pass &= out.summary.len() == 3;
    Ok((pass, format!("knockoff+, {} trials; {}", cfg.trials, parts.join("; "))))
}

fn power_ordering() -> Outcome {
    let cfg = config(CHAIN)?;
    let out = run(&cfg)?;
    let get = |m: &str| out.summary_for(m).ok_or_else(|| format!("no summary for {m}"));
    let (ci, equi, asdp) = (get("ci")?, get("equi")?, get("asdp")?);
    let pass = ci.tpp.median >= equi.tpp.median;
    let tie = if ci.tpp.median == equi.tpp.median { " (tie)" } else { "" };
    let detail = format!(
        "median tpp ci {:.4} >= equi {:.4}{tie}, asdp {:.4}; mean tpp ci {:.4}, equi {:.4}, asdp {:.4}; \
         q3 tpp ci {:.4}, equi {:.4}, asdp {:.4}; mean fdp ci {:.4}, equi {:.4}, asdp {:.4}",
        ci.tpp.median,
        equi.tpp.median,
        asdp.tpp.median,
        ci.tpp.mean,
        equi.tpp.mean,
        asdp.tpp.mean,
        ci.tpp.q3,
        equi.tpp.q3,
        asdp.tpp.q3,
        ci.fdp.mean,
        equi.fdp.mean,
        asdp.fdp.mean
    );
    Ok((pass, detail))
}

fn esd_golden_values() -> Outcome {
    let c = build_cov(&CovModel::BinaryTree { p: 1000, rho: 0.5 }).map_err(|e| e.to_string())?;
    let scale = 2000.0;
    let ci = esd_ci_tree(&c, scale).map_err(|e| e.to_string())?;
    let spec = |m| KnockoffSpec::for_mechanism(&c, m).map_err(|e| e.to_string());
    let equi = esd_knockoff_generic(&spec(Mechanism::Equi)?, scale).map_err(|e| e.to_string())?;
    let asdp = esd_knockoff_generic(&spec(Mechanism::Asdp)?, scale).map_err(|e| e.to_string())?;
    let pass = (ci.lp - 0.002).abs() <= 0.005 && (equi.lp - 0.501).abs() <= 0.05;
    Ok((
        pass,
        format!(
            "ci_tree lp {:.4}, equi lp {:.4}, asdp lp {:.4} (informational)",
            ci.lp, equi.lp, asdp.lp
        ),
    ))
}

fn eigenvalue_flip() -> Outcome {
    let mut r = rng::stream(101);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let p = r.random_range(1..=32);
        let edges = random_forest(p, 0.8, &mut r);
        let m = patterned_symmetric(p, &edges, &mut r);
        let a = spectrum(&m);
        let b = spectrum(&linalg::flip_off_diagonal(&m));
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst <= 1e-8, format!("1000 matrices, max spectrum gap {worst:.2e}")))
}

fn swap_permutation(p: usize, set: &[usize]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..2 * p).collect();
    for &j in set {
        perm.swap(j, j + p);
    }
    perm
}

fn ci_existence() -> Outcome {
    let mut r = rng::stream(102);
    let mut failures = Vec::new();
    for i in 0..2000 {
        let p = r.random_range(2..=24);
        let c = if i < 1000 {
            let edges = random_tree(p, &mut r);
            cov(tree_covariance(p, &edges, 0.05, 0.95, &mut r))
        } else {
            cov(diagonally_dominant_covariance(p, 0.4, &mut r).0)
        };
        let exists = ci_exists(&c).map_err(|e| e.to_string())?.exists;
        let spec = KnockoffSpec::for_mechanism(&c, Mechanism::Ci).map_err(|e| e.to_string())?;
        let ext = spec.sigma_ext();
        let psd = linalg::is_psd(ext);
        let set: Vec<usize> = (0..p).filter(|_| r.random::<bool>()).collect();
        let perm = swap_permutation(p, &set);
        let swapped = DMatrix::from_fn(2 * p, 2 * p, |a, b| ext[(perm[a], perm[b])]);
        let invariant = swapped == *ext;
        if !(exists && psd && invariant) {
            failures.push(i);
        }
    }
    Ok((
        failures.is_empty(),
        format!(
            "1000 trees + 1000 dominant precisions, {} failures {:?}",
            failures.len(),
            &failures[..failures.len().min(5)]
        ),
    ))
}

fn ci_diagonal_identity() -> Outcome {
    let mut r = rng::stream(103);
    let mut worst_oracle = 0.0_f64;
    let mut worst_closed = 0.0_f64;
    for _ in 0..200 {
        let p = r.random_range(2..=64);
        let edges = random_tree(p, &mut r);
        let c = cov(tree_covariance(p, &edges, 0.05, 0.9, &mut r));
        let spec = KnockoffSpec::for_mechanism(&c, Mechanism::Ci).map_err(|e| e.to_string())?;
        let dense = spec
            .sigma_ext()
            .clone()
            .try_inverse()
            .ok_or("singular extended covariance")?;
        let block = spec.extended_precision_diagonal().map_err(|e| e.to_string())?;
        let closed = ci_tree_diagonal(&c).map_err(|e| e.to_string())?;
        for j in 0..p {
            let scale = dense[(j, j)].abs().max(1.0);
            worst_oracle = worst_oracle.max((block[j] - dense[(j, j)]).abs() / scale);
            worst_closed = worst_closed.max((closed[j] - dense[(j, j)]).abs() / scale);
        }
    }
    Ok((
        worst_oracle <= 1e-8 && worst_closed <= 1e-8,
        format!("200 trees, relative gap: block formula {worst_oracle:.2e}, closed form {worst_closed:.2e}"),
    ))
}

fn orthonormal_design(n: usize, m: usize, r: &mut rng::Stream) -> DMatrix<f64> {
    normal_matrix(n, m, r).qr().q() * (n as f64).sqrt()
}

fn lasso_correctness() -> Outcome {
    let mut r = rng::stream(104);
    let opts = LassoOptions::default();
    let err = |e: knockoff_esd::Error| e.to_string();

    let mut soft = 0.0_f64;
    for _ in 0..20 {
        let (n, m) = (40, 10);
        let a = orthonormal_design(n, m, &mut r);
        let y = normal_vector(n, &mut r) * 3.0;
        let lambda = r.random_range(0.05..1.5);
        let fit = fit_lasso_cd(&a, &y, lambda, &opts).map_err(err)?;
        let z = a.tr_mul(&y) / n as f64;
        for j in 0..m {
            let expected = z[j].signum() * (z[j].abs() - lambda).max(0.0);
            soft = soft.max((fit.coef[j] - expected).abs());
        }
    }

    let mut ls = 0.0_f64;
    let mut debiased = 0.0_f64;
    for _ in 0..20 {
        let (n, m) = (50, 8);
        let a = normal_matrix(n, m, &mut r);
        let y = normal_vector(n, &mut r);
        let fit = fit_lasso_cd(&a, &y, 0.0, &opts).map_err(err)?;
        let expected = a.clone().svd(true, true).solve(&y, 1e-12)?;
        ls = ls.max((&fit.coef - &expected).amax());
        let precision = (a.tr_mul(&a) / n as f64).try_inverse().ok_or("singular Gram")?;
        let unbiased = debias(&fit, &a, &y, &precision).map_err(err)?;
        debiased = debiased.max((&unbiased - &fit.coef).amax());
    }

    let mut kkt = 0.0_f64;
    for _ in 0..100 {
        let n = r.random_range(10..60);
        let m = r.random_range(2..80);
        let a = normal_matrix(n, m, &mut r);
        let y = normal_vector(n, &mut r) * 2.0;
        let lambda_max = (a.tr_mul(&y) / n as f64).amax();
        let fit = fit_lasso_cd(&a, &y, lambda_max * r.random_range(0.02..1.0), &opts).map_err(err)?;
        kkt = kkt.max(fit.kkt_residual);
    }

    let pass = soft <= 1e-6 && ls <= 1e-6 && kkt <= 1e-6 && debiased <= 1e-6;
    Ok((
        pass,
        format!("soft-threshold {soft:.1e}, least squares {ls:.1e}, kkt {kkt:.1e}, debias {debiased:.1e}"),
    ))
}

fn lp_oracle_agreement() -> Outcome {
    let mut r = rng::stream(105);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let m = r.random_range(1..=12);
        let values: Vec<f64> = (0..m)
            .map(|_| match r.random_range(0..4) {
                0 => 0.0,
                1 => r.random_range(0..=m) as f64 / m as f64,
                2 => r.random_range(0.0..1.5),
                _ => r.random_range(0..4) as f64 * 0.25,
            })
            .collect();
        if lp_distance_zero(&values).map_err(|e| e.to_string())? != lp_oracle(&values) {
            mismatches += 1;
        }
    }
    let lp = |v: &[f64]| lp_distance_zero(v).map_err(|e| e.to_string());
    let examples = [
        lp(&[4.0 / 3.0; 5])? == 1.0,
        lp(&[0.0; 7])? == 0.0,
        lp(&[2.0, 0.0, 0.0, 0.0])? == 0.25,
    ];
    let pass = mismatches == 0 && examples.iter().all(|&e| e);
    Ok((
        pass,
        format!("10000 random inputs, {mismatches} mismatches; examples {examples:?}"),
    ))
}

fn determinism() -> Outcome {
    let mut cfg = config(TREE)?;
    cfg.trials = 16;
    let csv = |w| {
        run_experiment(&cfg, w)
            .and_then(|out| records_to_csv(&out.records))
            .map_err(|e| e.to_string())
    };
    let one = csv(1)?;
    let eight = csv(8)?;
    Ok((
        one == eight,
        format!(
            "{} trials, {} bytes, identical = {}",
            cfg.trials,
            one.len(),
            one == eight
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("esd_golden_values", esd_golden_values),
        ("eigenvalue_flip", eigenvalue_flip),
        ("ci_existence", ci_existence),
        ("ci_diagonal_identity", ci_diagonal_identity),
        ("lasso_correctness", lasso_correctness),
        ("lp_oracle_agreement", lp_oracle_agreement),
        ("determinism", determinism),
        ("fdr_control", fdr_control),
        ("power_ordering", power_ordering),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    println!("acceptance: {} workers", workers());
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(result)) => result,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
