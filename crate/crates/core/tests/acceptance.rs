//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so the lines print in
//! order.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{Matrix5, SymmetricEigen, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use coopfuse::association::{jpda_weights, AssociationConfig};
use coopfuse::calibration::fit_components;
use coopfuse::error_models::{eval_error_model, rotated_covariance, ErrorModel, GaussianEstimate, ModelSet};
use coopfuse::evaluation::{read_log, replay, run_scenario_logged, run_suite, summarize, ErrorModelMode, RunReport};
use coopfuse::geometry::{min_eigenvalue, Mat2, Vec2};
use coopfuse::global_fusion::covariance_union;
use coopfuse::simulator::{calibration_samples, SampleDesign, ScenarioConfig, TABLE_II_SCENARIOS};
use coopfuse::tracking::{
    ctrv_jacobian, ctrv_motion, ctrv_predict, ekf_update, innovation, nees, KinematicState, ProcessNoiseConfig,
    TrackEstimate,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

// Criteria 1-4 share one suite run: 8 scenarios x 3 seeds x 2 minutes.
struct Suite {
    pairs: Vec<(RunReport, RunReport)>,
    seconds: f64,
}

fn run_table_ii() -> Suite {
    let configs: Vec<ScenarioConfig> = TABLE_II_SCENARIOS
        .iter()
        .flat_map(|name| (1..=3).map(move |seed| ScenarioConfig::table_ii(name, seed).unwrap()))
        .collect();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let start = Instant::now();
    let pairs = run_suite(&configs, threads).expect("suite runs");
    Suite {
        pairs,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn all_reports(suite: &Suite) -> Vec<RunReport> {
    suite.pairs.iter().flat_map(|(p, f)| [p.clone(), f.clone()]).collect()
}

fn criterion_1(suite: &Suite) -> Outcome {
    let rows = summarize(&all_reports(suite));
    let mut ratios = Vec::new();
    let mut ordered = true;
    let mut table = Vec::new();
    for row in rows.iter().filter(|r| r.mode == ErrorModelMode::Parameterized) {
        let ratio = row.ratio.unwrap();
        ordered &= ratio >= 1.0;
        ratios.push(ratio);
        table.push(format!("{} {:.3}", row.scenario, ratio));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let pass = ordered && mean >= 1.15 && suite.seconds < 600.0;
    outcome(
        pass,
        format!(
            "mean fixed/param ratio {mean:.3} (need >= 1.15), param <= fixed everywhere: {ordered}, {:.0} s; [{}]",
            suite.seconds,
            table.join(", ")
        ),
    )
}

fn criterion_2(suite: &Suite) -> Outcome {
    let rows = summarize(&all_reports(suite));
    let mut worst: f64 = 0.0;
    let mut table = Vec::new();
    for row in rows.iter().filter(|r| r.mode == ErrorModelMode::Parameterized) {
        let q = row.rmse / row.rmse_localization_alone;
        worst = worst.max(q);
        table.push(format!(
            "{} {:.4}/{:.4}",
            row.scenario, row.rmse, row.rmse_localization_alone
        ));
    }
    outcome(
        worst <= 1.02,
        format!(
            "worst param/localization ratio {worst:.3} (need <= 1.02); [{}]",
            table.join(", ")
        ),
    )
}

fn criterion_3(suite: &Suite) -> Outcome {
    let rows = summarize(&all_reports(suite));
    let param = |name: &str| {
        rows.iter()
            .find(|r| r.scenario == name && r.mode == ErrorModelMode::Parameterized)
            .unwrap()
            .rmse
    };
    let mut pass = true;
    let mut table = Vec::new();
    for base in ["sm/sp", "sm/de", "lg/sp", "lg/de"] {
        let (without, with) = (param(base), param(&format!("{base}/CIS")));
        pass &= with < without;
        table.push(format!("{base} {without:.4} -> {with:.4}"));
    }
    outcome(pass, format!("param RMSE without -> with CIS: [{}]", table.join(", ")))
}

fn criterion_4(suite: &Suite) -> Outcome {
    let mut hits = Vec::new();
    let mut table = Vec::new();
    for (p, f) in &suite.pairs {
        if !p.scenario.starts_with("lg/sp") {
            continue;
        }
        let loc = p.rmse_localization_alone;
        table.push(format!(
            "{}#{} param {:.4} fixed {:.4} loc {:.4}",
            p.scenario, p.seed, p.rmse_global, f.rmse_global, loc
        ));
        if f.rmse_global > f.rmse_localization_alone && p.rmse_global <= loc {
            hits.push(format!("{}#{}", p.scenario, p.seed));
        }
    }
    outcome(
        !hits.is_empty(),
        format!("runs with fixed > loc >= param: {:?}; [{}]", hits, table.join(", ")),
    )
}

/// Every injective partial map from tracks to gated observations, weighted
/// directly; independent of the clustered recursion in the library.
fn brute_force(tracks: &[TrackEstimate], obs: &[GaussianEstimate], cfg: &AssociationConfig) -> Vec<Vec<f64>> {
    let n_t = tracks.len();
    let n_o = obs.len();
    let lik = |i: usize, j: usize| -> Option<f64> {
        let (nu, s) = innovation(&tracks[i], &obs[j]);
        let inv = s.try_inverse()?;
        let d2 = (nu.transpose() * inv * nu)[(0, 0)];
        (d2 <= cfg.gate_threshold).then(|| (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI * s.determinant().sqrt()))
    };
    let gated_any: BTreeSet<usize> = (0..n_o).filter(|&j| (0..n_t).any(|i| lik(i, j).is_some())).collect();
    let mut total = 0.0;
    // weights[i][0] is the miss probability, weights[i][j + 1] observation j.
    let mut w = vec![vec![0.0; n_o + 1]; n_t];
    let mut choice = vec![0usize; n_t];
    loop {
        let picked: Vec<usize> = choice.iter().filter(|&&c| c > 0).map(|c| c - 1).collect();
        let distinct: BTreeSet<usize> = picked.iter().copied().collect();
        if distinct.len() == picked.len() {
            let mut p = Some(1.0);
            for (i, &c) in choice.iter().enumerate() {
                p = p.and_then(|p| {
                    if c == 0 {
                        Some(p * (1.0 - cfg.detection_probability))
                    } else {
                        lik(i, c - 1).map(|l| p * cfg.detection_probability * l)
                    }
                });
            }
            if let Some(mut p) = p {
                p *= cfg.clutter_density.powi((gated_any.len() - picked.len()) as i32);
                total += p;
                for (i, &c) in choice.iter().enumerate() {
                    w[i][c] += p;
                }
            }
        }
        let mut k = 0;
        while k < n_t {
            choice[k] += 1;
            if choice[k] <= n_o {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == n_t {
            break;
        }
    }
    for (i, row) in w.iter_mut().enumerate() {
        if (0..n_o).any(|j| lik(i, j).is_some()) {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            row.iter_mut().for_each(|x| *x = 0.0);
            row[0] = 1.0;
        }
    }
    w
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut contested = 0;
    for _ in 0..500 {
        let cfg = AssociationConfig {
            detection_probability: rng.random_range(0.5..0.99),
            clutter_density: rng.random_range(1e-3..1.0),
            ..Default::default()
        };
        let n_t = rng.random_range(0..=3);
        let n_o = rng.random_range(0..=3);
        let tracks: Vec<TrackEstimate> = (0..n_t)
            .map(|_| {
                let mut p = Matrix5::identity() * 0.1;
                p[(0, 0)] = rng.random_range(0.01..0.3);
                p[(1, 1)] = rng.random_range(0.01..0.3);
                TrackEstimate {
                    state: KinematicState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5, 0.0, 0.0),
                    covariance: p,
                }
            })
            .collect();
        let obs: Vec<GaussianEstimate> = (0..n_o)
            .map(|_| {
                let a: f64 = rng.random_range(0.005..0.2);
                let b: f64 = rng.random_range(0.005..0.2);
                let cov = rotated_covariance(a, b, rng.random_range(0.0..3.0)).unwrap();
                GaussianEstimate::new(Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), cov)
            })
            .collect();
        let got = jpda_weights(&tracks, &obs, &cfg).unwrap();
        if got.gated.iter().flatten().filter(|g| **g).count() >= 2 {
            contested += 1;
        }
        let want = brute_force(&tracks, &obs, &cfg);
        for i in 0..n_t {
            worst = worst.max((got.miss[i] - want[i][0]).abs());
            for j in 0..n_o {
                worst = worst.max((got.weights[i][j] - want[i][j + 1]).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 10.0,
        format!(
            "max |jpda - brute force| {worst:.2e} over 500 instances ({contested} with 2+ gated pairs) in {secs:.3} s"
        ),
    )
}

fn sample_gaussian(cov: &Matrix5<f64>, rng: &mut ChaCha8Rng) -> Vector5<f64> {
    let eig = SymmetricEigen::new(*cov);
    let z = Vector5::from_fn(|i, _| eig.eigenvalues[i].max(0.0).sqrt() * normal(rng));
    eig.eigenvectors * z
}

fn criterion_6() -> Outcome {
    // Consistency: truth follows the CTRV model with the filter's own
    // process noise, positions are measured with known noise. The speed
    // starts well clear of zero, where heading stops being observable and
    // no linearization is consistent.
    let runs = 50;
    let frames = 200;
    let noise = ProcessNoiseConfig::default();
    let q = noise.q_matrix();
    let r = Mat2::identity() * 0.05f64.powi(2);
    let p0 = Matrix5::from_diagonal(&Vector5::new(0.01, 0.01, 0.01, 0.01, 0.01));
    let mut sums = vec![0.0; frames];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..runs {
        let mut truth = KinematicState::new(0.0, 0.0, 2.0, 0.3, 0.2);
        let mut est = TrackEstimate {
            state: KinematicState::from_vector(&(truth.to_vector() + sample_gaussian(&p0, &mut rng))),
            covariance: p0,
        };
        for sum in sums.iter_mut() {
            truth = KinematicState::from_vector(
                &(ctrv_motion(&truth, noise.dt).to_vector() + sample_gaussian(&q, &mut rng)),
            );
            est = ctrv_predict(&est, &noise);
            let z = truth.position() + Vec2::new(0.05 * normal(&mut rng), 0.05 * normal(&mut rng));
            est = ekf_update(&est, &GaussianEstimate::new(z, r)).unwrap();
            *sum += nees(&est, &truth).unwrap();
        }
    }
    let dof = 5.0 * runs as f64;
    let chi = ChiSquared::new(dof).unwrap();
    let (lo, hi) = (
        chi.inverse_cdf(0.025) / runs as f64,
        chi.inverse_cdf(0.975) / runs as f64,
    );
    let inside = sums.iter().filter(|s| (lo..=hi).contains(&(**s / runs as f64))).count();
    let fraction = inside as f64 / frames as f64;
    let mean_nees = sums.iter().sum::<f64>() / (frames * runs) as f64;

    // Jacobian against central differences.
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..100 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let s = KinematicState::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.0..2.0),
            rng.random_range(-3.1..3.1),
            sign * rng.random_range(0.01..2.0),
        );
        let dt = rng.random_range(0.05..0.5);
        let j = ctrv_jacobian(&s, dt);
        for c in 0..5 {
            let mut plus = s.to_vector();
            let mut minus = s.to_vector();
            plus[c] += h;
            minus[c] -= h;
            let fp = ctrv_motion(&KinematicState::from_vector(&plus), dt).to_vector();
            let fm = ctrv_motion(&KinematicState::from_vector(&minus), dt).to_vector();
            for rr in 0..5 {
                let fd = (fp[rr] - fm[rr]) / (2.0 * h);
                worst = worst.max((fd - j[(rr, c)]).abs() / j[(rr, c)].abs().max(1.0));
            }
        }
    }
    outcome(
        fraction >= 0.9 && worst <= 1e-6,
        format!(
            "{:.1}% of frames with mean NEES in [{lo:.2}, {hi:.2}] (overall mean {mean_nees:.2}); \
             worst Jacobian relative error {worst:.1e}",
            100.0 * fraction
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    for (label, truth, degree) in [
        ("parameterized", ModelSet::table_iv_parameterized(), 1),
        ("fixed", ModelSet::table_iv_fixed(), 0),
    ] {
        let samples = calibration_samples(&truth, &SampleDesign::default(), 50_000, 7).unwrap();
        let fitted = fit_components(&samples, degree).unwrap();
        let want: serde_json::Value = serde_json::to_value(&truth).unwrap();
        for (component, model) in &fitted {
            let reference: ErrorModel = serde_json::from_value(want[component].clone()).unwrap();
            for (got, exp) in model.coefficients.iter().zip(&reference.coefficients) {
                let rel = (got - exp).abs() / exp.abs();
                if rel > worst {
                    worst = rel;
                    where_ = format!("{label} {component}: {got:.5} vs {exp:.5}");
                }
            }
        }
    }
    outcome(
        worst <= 0.03,
        format!("worst relative coefficient error {:.2}% ({where_})", 100.0 * worst),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut spectrum: f64 = 0.0;
    let mut union_min = f64::INFINITY;
    for _ in 0..1000 {
        let a: f64 = rng.random_range(1e-3..1.0);
        let b: f64 = rng.random_range(1e-3..1.0);
        let c = rotated_covariance(a, b, rng.random_range(-10.0..10.0)).unwrap();
        let mut got = [c.symmetric_eigenvalues()[0], c.symmetric_eigenvalues()[1]];
        got.sort_by(f64::total_cmp);
        let mut want = [a * a, b * b];
        want.sort_by(f64::total_cmp);
        spectrum = spectrum.max((got[0] - want[0]).abs()).max((got[1] - want[1]).abs());
        let d = rotated_covariance(
            rng.random_range(1e-3..1.0),
            rng.random_range(1e-3..1.0),
            rng.random_range(-3.0..3.0),
        )
        .unwrap();
        let u = covariance_union(&c, &d);
        union_min = union_min.min(min_eigenvalue(&u));
    }
    let p = ModelSet::table_iv_parameterized();
    let evals = [
        (eval_error_model(&p.camera_distal, 1.0).unwrap(), 0.0643),
        (eval_error_model(&p.camera_distal, 0.0).unwrap(), 0.0126),
        (
            eval_error_model(&p.localizer_lateral, 0.5).unwrap(),
            0.0241 + 0.0841 * 0.5,
        ),
        (
            eval_error_model(&ModelSet::table_iv_fixed().lidar_distal, 3.0).unwrap(),
            0.0848,
        ),
    ];
    let table = evals.iter().map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    outcome(
        spectrum <= 1e-9 && union_min >= 0.0 && table <= 1e-9,
        format!(
            "rotation spectrum error {spectrum:.1e}, min union eigenvalue {union_min:.2e}, \
             table evaluation error {table:.1e} (camera distal at 1 m = {:.4})",
            evals[0].0
        ),
    )
}

fn criterion_9() -> Outcome {
    let config = ScenarioConfig::table_ii("sm/de/CIS", 9).unwrap();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let a = run_scenario_logged(&config, ErrorModelMode::Parameterized, &mut first).unwrap();
    let b = run_scenario_logged(&config, ErrorModelMode::Parameterized, &mut second).unwrap();
    let ja = serde_json::to_string(&a).unwrap();
    let jb = serde_json::to_string(&b).unwrap();
    let replayed = replay(first.as_slice(), ErrorModelMode::Parameterized).unwrap();
    let jr = serde_json::to_string(&replayed).unwrap();
    let other = replay(first.as_slice(), ErrorModelMode::Fixed).unwrap();
    let same_truth = read_log(first.as_slice()).is_ok() && other.ticks == a.ticks;
    let pass = first == second && ja == jb && ja == jr && same_truth;
    outcome(
        pass,
        format!(
            "logs identical: {}, reports identical: {}, replay identical: {} ({} log bytes)",
            first == second,
            ja == jb,
            ja == jr,
            first.len()
        ),
    )
}

fn main() {
    // `cargo test` passes filter arguments; this target runs everything.
    let suite = run_table_ii();
    let results = [
        ("1 parameterized beats fixed", criterion_1(&suite)),
        ("2 localization floor", criterion_2(&suite)),
        ("3 CIS benefit", criterion_3(&suite)),
        ("4 fixed-model failure mode", criterion_4(&suite)),
        ("5 JPDA oracle equivalence", criterion_5()),
        ("6 EKF consistency", criterion_6()),
        ("7 calibration closure", criterion_7()),
        ("8 covariance algebra", criterion_8()),
        ("9 determinism", criterion_9()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
