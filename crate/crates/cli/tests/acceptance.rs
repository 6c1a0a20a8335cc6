//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p catgen-cli --test acceptance -- 1 2 9`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use catgen_core::crossfit::{pseudo_outcome_arm, pseudo_outcome_cate, riesz_representer, PseudoOutcomes, PseudoTarget, UnitNuisance};
use catgen_core::data::OutcomeKind;
use catgen_core::learners::LearnerSpec;
use catgen_core::simulation::{run_scenario, run_study, DgpSpec, Estimator, IntegratedMetrics, ScenarioReport, StudyConfig};
use catgen_core::smoother::{
    curve_at_bandwidth, estimate_cate_curve, kernel_eval, local_linear_fit, sandwich_variance, smoothing_bias_reference,
    BandwidthSpec, KernelSpec, SortedPairs,
};
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const REPLICATES: usize = 500;
const TRUTH_MC: usize = 10_000_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn lean_library() -> Vec<LearnerSpec> {
    vec![LearnerSpec::GlmMainEffects, LearnerSpec::GlmPairwiseInteractions, LearnerSpec::RidgePoly2 { lambda: 1.0 }]
}

fn study(replicates: usize, estimators: Vec<Estimator>) -> StudyConfig {
    let mut s = StudyConfig::new(replicates);
    s.nuisance.library = lean_library();
    s.estimators = estimators;
    s.truth_mc_size = TRUTH_MC;
    s
}

fn metrics(report: &ScenarioReport, e: Estimator) -> &IntegratedMetrics {
    report.metrics(e).expect("estimator was run")
}

/// Brute-force local linear fit and sandwich `(1,1)` element.
fn brute_force_local_linear(pairs: &[(f64, f64)], v: f64, h: f64) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let mut d = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for &(vi, xi) in pairs {
        let g = Vector2::new(1.0, vi - v);
        let w = kernel_eval((vi - v) / h) / h;
        d += g * g.transpose() * (w / n);
        b += g * (w * xi / n);
    }
    let d_inv = d.try_inverse().expect("nonsingular");
    let beta = d_inv * b;
    let mut outer = Matrix2::zeros();
    for &(vi, xi) in pairs {
        let g = Vector2::new(1.0, vi - v);
        let phi = d_inv * g * (kernel_eval((vi - v) / h) / h * (xi - g.dot(&beta)));
        outer += phi * phi.transpose() / n;
    }
    (beta[0], beta[1], outer[(0, 0)])
}

fn algebraic_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_scalar = 0.0f64;
    let mut worst_linear = 0.0f64;
    for _ in 0..200 {
        let p_s: f64 = rng.random_range(0.05..1.0);
        let p_a1: f64 = rng.random_range(0.05..0.95);
        let nu = UnitNuisance { p_s, p_a1, gamma1: rng.random_range(-3.0..3.0), gamma0: rng.random_range(-3.0..3.0) };
        let y: f64 = rng.random_range(-5.0..5.0);
        for s in [0u8, 1] {
            for a in [0u8, 1] {
                let received = if a == 1 { p_a1 } else { 1.0 - p_a1 };
                let alpha = f64::from(s) * (2.0 * f64::from(a) - 1.0) / (p_s * received);
                worst_scalar = worst_scalar.max((riesz_representer(s, a, p_s, p_a1).unwrap() - alpha).abs());
                let (obs_a, obs_y) = if s == 1 { (Some(a), Some(y)) } else { (None, None) };
                let gamma_a = if a == 1 { nu.gamma1 } else { nu.gamma0 };
                let cate = alpha * (y - gamma_a) + nu.gamma1 - nu.gamma0;
                worst_scalar = worst_scalar.max((pseudo_outcome_cate(s, obs_a, obs_y, &nu).unwrap() - cate).abs());
                for arm in [0u8, 1] {
                    let (g, p) = if arm == 1 { (nu.gamma1, p_a1) } else { (nu.gamma0, 1.0 - p_a1) };
                    let hit = f64::from(s) * if a == arm { 1.0 } else { 0.0 };
                    let expected = hit / (p_s * p) * (y - g) + g;
                    let got = pseudo_outcome_arm(s, obs_a, obs_y, &nu, arm).unwrap();
                    worst_scalar = worst_scalar.max((got - expected).abs());
                }
            }
        }
    }
    for _ in 0..200 {
        let m = rng.random_range(3..=10);
        let pairs: Vec<(f64, f64)> = (0..m).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0))).collect();
        let v = rng.random_range(-0.5..0.5);
        let h = rng.random_range(0.8..3.0);
        let Ok((theta, slope)) = local_linear_fit(&pairs, v, h) else { continue };
        let sigma_sq = sandwich_variance(&pairs, v, h, (theta, slope)).unwrap();
        let (bt, bs, bsig) = brute_force_local_linear(&pairs, v, h);
        worst_linear = worst_linear.max((theta - bt).abs()).max((slope - bs).abs()).max((sigma_sq - bsig).abs());
    }
    verdict(
        worst_scalar <= 1e-9 && worst_linear <= 1e-10,
        format!("max |diff| scalar {worst_scalar:.2e} (tol 1e-9), linear algebra {worst_linear:.2e} (tol 1e-10)"),
    )
}

fn line_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..2000).map(|_| rng.random_range(-2.0..2.0)).collect();
    let xi: Vec<f64> = v.iter().map(|x| 0.7 - 1.3 * x).collect();
    let pseudo = PseudoOutcomes::new(v, xi, PseudoTarget::Cate).unwrap();
    let grid: Vec<f64> = (0..41).map(|k| -1.8 + 3.6 * k as f64 / 40.0).collect();
    let mut worst = 0.0f64;
    let mut specs: Vec<BandwidthSpec> = [0.02, 0.1, 0.5, 2.0, 50.0].iter().map(|&h| BandwidthSpec::Fixed { h }).collect();
    specs.push(BandwidthSpec::default());
    for spec in &specs {
        let curve = estimate_cate_curve(&pseudo, &grid, spec, 5).unwrap();
        for (k, g) in grid.iter().enumerate() {
            let err = (curve.theta_hat[k] - (0.7 - 1.3 * g)).abs();
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
    }
    verdict(worst <= 1e-9, format!("max |theta_hat - line| {worst:.2e} over 41 points and {} bandwidths", specs.len()))
}

/// Mean and standard error.
fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn moment_checks() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in [OutcomeKind::Continuous, OutcomeKind::Binary] {
        let dgp = DgpSpec::default_for(kind, 20_000, 8_000).calibrate().unwrap();
        let cohort = dgp.generate_cohort(3).unwrap();
        let rows: Vec<[f64; 3]> = (0..cohort.n()).map(|i| cohort.row(i).try_into().unwrap()).collect();
        let truth_ate = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let draws = 2_000_000;
            (0..draws)
                .map(|_| {
                    let x: [f64; 3] = [rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)];
                    dgp.outcome_mean(&x, 1) - dgp.outcome_mean(&x, 0)
                })
                .sum::<f64>()
                / draws as f64
        };
        let true_nu = |x: &[f64; 3]| UnitNuisance {
            p_s: dgp.selection_probability(x),
            p_a1: 0.5,
            gamma1: dgp.outcome_mean(x, 1),
            gamma0: dgp.outcome_mean(x, 0),
        };
        let pseudo = |nu: &dyn Fn(&[f64; 3]) -> UnitNuisance| -> Vec<f64> {
            (0..cohort.n()).map(|i| pseudo_outcome_cate(cohort.s()[i], cohort.a()[i], cohort.y()[i], &nu(&rows[i])).unwrap()).collect()
        };
        let residual_moment: Vec<f64> = (0..cohort.n())
            .map(|i| {
                let nu = true_nu(&rows[i]);
                match (cohort.a()[i], cohort.y()[i]) {
                    (Some(a), Some(y)) => {
                        let g = if a == 1 { nu.gamma1 } else { nu.gamma0 };
                        riesz_representer(1, a, nu.p_s, nu.p_a1).unwrap() * (y - g)
                    }
                    _ => 0.0,
                }
            })
            .collect();
        let (m, se) = mean_se(&residual_moment);
        pass &= m.abs() <= 3.0 * se;
        lines.push(format!("{kind:?}: riesz moment {m:.4} (se {se:.4})"));

        let wrong_gamma = pseudo(&|x| UnitNuisance { gamma1: 0.3 + x[0], gamma0: -0.2 * x[1], ..true_nu(x) });
        let (m, se) = mean_se(&wrong_gamma);
        pass &= (m - truth_ate).abs() <= 3.0 * se;
        lines.push(format!("true propensities + wrong outcome model {m:.4} vs {truth_ate:.4} (se {se:.4})"));

        let rate = cohort.n_trial() as f64 / cohort.n() as f64;
        let wrong_propensity = pseudo(&|x| UnitNuisance { p_s: rate, p_a1: 0.3, ..true_nu(x) });
        let (m, se) = mean_se(&wrong_propensity);
        pass &= (m - truth_ate).abs() <= 3.0 * se;
        lines.push(format!("wrong propensities + true outcome model {m:.4} vs {truth_ate:.4} (se {se:.4})"));
    }
    verdict(pass, lines.join("; "))
}

struct BinaryStudy {
    reports: Vec<ScenarioReport>,
}

fn binary_study() -> BinaryStudy {
    let designs = [DgpSpec::binary(2500, 500), DgpSpec::binary(2500, 1000)];
    let s = study(REPLICATES, vec![Estimator::ProposedLocalLinear, Estimator::NaiveLinear, Estimator::TrialOnly]);
    let (report, _) = run_study(&designs, &s, 2024).unwrap();
    BinaryStudy { reports: report.scenarios }
}

fn directional_binary(b: &BinaryStudy) -> Verdict {
    let mut pass = true;
    let mut lines = Vec::new();
    for r in &b.reports {
        let p = metrics(r, Estimator::ProposedLocalLinear);
        let n = metrics(r, Estimator::NaiveLinear);
        let ok_bias = p.integrated_abs_bias <= 0.5 * n.integrated_abs_bias;
        let ok_cov = (91.0..=96.0).contains(&p.coverage_mean_curve);
        pass &= ok_bias && ok_cov;
        lines.push(format!(
            "n_s1={}: |bias| proposed {:.4} naive {:.4}, proposed coverage vs mean curve {:.1}, naive coverage vs truth {:.1}",
            r.n_s1_target, p.integrated_abs_bias, n.integrated_abs_bias, p.coverage_mean_curve, n.coverage_truth
        ));
    }
    let naive_cov: Vec<f64> = b.reports.iter().map(|r| metrics(r, Estimator::NaiveLinear).coverage_truth).collect();
    pass &= naive_cov[1] < naive_cov[0];
    verdict(pass, lines.join("; "))
}

fn trial_only_bias(b: &BinaryStudy) -> Verdict {
    let mut pass = true;
    let mut lines = Vec::new();
    for r in &b.reports {
        let p = metrics(r, Estimator::ProposedLocalLinear).integrated_abs_bias;
        let t = metrics(r, Estimator::TrialOnly).integrated_abs_bias;
        pass &= t >= 2.0 * p;
        lines.push(format!("n_s1={}: trial-only {t:.4} vs proposed {p:.4} (ratio {:.2})", r.n_s1_target, t / p));
    }
    verdict(pass, lines.join("; "))
}

fn oracle_ordering() -> Verdict {
    let s = study(REPLICATES, vec![Estimator::ProposedLocalLinear, Estimator::NaiveLinear, Estimator::OracleForm]);
    let outcome = run_scenario(&DgpSpec::continuous(2500, 1000), &s, 2025).unwrap();
    let r = &outcome.report;
    let o = metrics(r, Estimator::OracleForm).integrated_abs_bias;
    let p = metrics(r, Estimator::ProposedLocalLinear).integrated_abs_bias;
    let n = metrics(r, Estimator::NaiveLinear).integrated_abs_bias;
    verdict(o <= p && p <= n && n >= 3.0 * o, format!("|bias| oracle {o:.4} <= proposed {p:.4} <= naive {n:.4}; naive/oracle {:.1}", n / o))
}

fn smoothing_bias() -> Verdict {
    let (n, h) = (2000, 0.6);
    let grid: Vec<f64> = (0..15).map(|k| -1.3 + 2.6 * k as f64 / 14.0).collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut sums = vec![0.0; grid.len()];
    for r in 0..REPLICATES {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + r as u64);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xi: Vec<f64> = v.iter().map(|x| x * x + noise.sample(&mut rng)).collect();
        let curve = curve_at_bandwidth(&SortedPairs::new(&v, &xi).unwrap(), &grid, h).unwrap();
        for (k, g) in grid.iter().enumerate() {
            sums[k] += curve.theta_hat[k] - g * g;
        }
    }
    let reference = smoothing_bias_reference(2.0, h, KernelSpec::Epanechnikov);
    let worst = sums.iter().map(|s| ((s / REPLICATES as f64) - reference).abs() / reference).fold(0.0, f64::max);
    let mean_bias = sums.iter().sum::<f64>() / (REPLICATES * grid.len()) as f64;
    verdict(worst <= 0.25, format!("reference {reference:.4}, mean bias {mean_bias:.4}, worst relative error {:.1}% over {} interior points", 100.0 * worst, grid.len()))
}

fn rate_sanity() -> Verdict {
    let sizes = [500usize, 2000, 8000];
    let reps = 200;
    let mut rmse = Vec::new();
    for &n in &sizes {
        let h = 1.2 * (n as f64 / 500.0).powf(-0.2);
        let mut s = study(reps, vec![Estimator::ProposedLocalLinear]);
        s.bandwidth = BandwidthSpec::Fixed { h };
        let outcome = run_scenario(&DgpSpec::continuous(n, 2 * n / 5), &s, 2026).unwrap();
        let center = outcome.truth.grid.len() / 2;
        let truth = outcome.truth.theta[center];
        let sq: Vec<f64> = outcome
            .replicates
            .iter()
            .map(|r| (r.curve(Estimator::ProposedLocalLinear).unwrap().theta_hat[center] - truth).powi(2))
            .collect();
        rmse.push((sq.iter().sum::<f64>() / sq.len() as f64).sqrt());
    }
    let inversions: Vec<f64> = rmse.windows(2).filter(|w| w[1] >= w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    let pass = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.10);
    verdict(pass, format!("RMSE at v=0 for n = {sizes:?}: {:.4}, {:.4}, {:.4}", rmse[0], rmse[1], rmse[2]))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Verdict {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/example.json");
    let tmp = tempfile::TempDir::new().unwrap();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for command in ["estimate", "simulate", "diagnose", "bandwidth"] {
        let mut runs = Vec::new();
        for (k, workers) in [Some("1"), Some("1"), Some("2"), Some("4"), None].into_iter().enumerate() {
            let out = tmp.path().join(format!("{command}-{k}"));
            let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
            if let Some(w) = workers {
                args.extend(["--workers", w]);
            }
            let status = Command::new(env!("CARGO_BIN_EXE_catgen")).args(&args).output().unwrap().status;
            if !status.success() {
                mismatches.push(format!("{command} exited {status}"));
            }
            runs.push(snapshot(&out));
        }
        for run in &runs[1..] {
            compared += 1;
            if run != &runs[0] {
                mismatches.push(command.to_string());
            }
        }
        let manifest = tmp.path().join(format!("{command}-0/manifest.json"));
        let replay = Command::new(env!("CARGO_BIN_EXE_catgen")).args(["replay", "--manifest", manifest.to_str().unwrap()]).output().unwrap();
        if !replay.status.success() {
            mismatches.push(format!("{command} replay"));
        }
    }
    verdict(mismatches.is_empty(), format!("{compared} reruns compared byte for byte across workers 1, 2, 4 and default; mismatches: {mismatches:?}"))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut timed = |k: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if wants(k) {
            let started = Instant::now();
            let v = f();
            let secs = started.elapsed().as_secs_f64();
            println!("criterion {k} {name}: {} ({secs:.1} s) {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((k, name, v, secs));
        }
    };
    timed(1, "algebraic oracles", &mut algebraic_oracles);
    timed(2, "line exactness", &mut line_exactness);
    timed(3, "riesz and double-robust moments", &mut moment_checks);
    let mut binary = None;
    if wants(4) || wants(6) {
        let started = Instant::now();
        binary = Some(binary_study());
        println!("binary study: {REPLICATES} replicates x 2 scenarios in {:.1} s", started.elapsed().as_secs_f64());
    }
    timed(4, "binary comparison with naive linear", &mut || directional_binary(binary.as_ref().unwrap()));
    timed(5, "continuous ordering oracle <= proposed <= naive", &mut oracle_ordering);
    timed(6, "trial-only bias", &mut || trial_only_bias(binary.as_ref().unwrap()));
    timed(7, "smoothing bias reference", &mut smoothing_bias);
    timed(8, "rate sanity", &mut rate_sanity);
    timed(9, "cli determinism", &mut determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
