//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts the same condition. Run with
//! `cargo test -p cvm-track-validation --test acceptance -- --nocapture --test-threads=1`.

use cvm_track::filter_central::{run_cwlsf, sequential_step, CentralFilterState};
use cvm_track::filter_distributed::{
    consensus_step, distributed_step, run_dwlsf, time_update_node, ConsensusConfig, NodeFilterState, PriorCase,
};
use cvm_track::linalg::{min_eigenvalue, Mat2, Mat3, Vec2, Vec3};
use cvm_track::model::{
    coefficient_matrix, jacobians_extent, jacobians_velocity, pseudo_measurement_cov, velocity_partials,
    wrap_angle, ExtentState,
};
use cvm_track::network::naive_nodes;
use cvm_track::scenarios::{build_s1, build_s2, build_s3, PriorMode, ScenarioConfig};
use cvm_track::sim::{central_metrics, distributed_metrics, run_central, run_distributed, simulate_inputs};
use nalgebra::SMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEED: u64 = 2024;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("{} criterion {id} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn c1_distributed_matches_centralized_with_many_iterations() {
    let cfg = build_s3();
    let network = cfg.network().unwrap();
    let noise = cfg.noise_model().unwrap();
    let dynamics = cfg.dynamics();
    let consensus = ConsensusConfig::new(0.325, 500, PriorCase::Converged);
    let mut worst: f64 = 0.0;
    for run in 0..10 {
        let inputs = simulate_inputs(&cfg, SEED, run).unwrap();
        let prior = inputs.priors.nodes[0];
        assert!(inputs.priors.nodes.iter().all(|p| p.kin == prior.kin && p.ext == prior.ext));
        let central = run_cwlsf(&CentralFilterState::new(prior.kin, prior.ext), &inputs.scans, &noise, &dynamics).unwrap();
        let dist = run_dwlsf(&network.topology, &inputs.priors.nodes, &inputs.scans, &consensus, &noise, &dynamics).unwrap();
        for (c, nodes) in central.iter().zip(&dist) {
            for nd in nodes {
                let kin = (nd.kin.mean - c.kin.mean).norm() / c.kin.mean.norm();
                let ext = (nd.ext.mean - c.ext.mean).norm() / c.ext.mean.norm();
                worst = worst.max(kin).max(ext);
            }
        }
    }
    report(1, "centralized-distributed equivalence", worst <= 1e-4, format!("max relative deviation {worst:.3e} (tol 1e-4)"));
}

#[test]
fn c2_consensus_reaches_mean_and_conserves_sums() {
    let topology = build_s3().network().unwrap().topology;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let init: Vec<SMatrix<f64, 4, 4>> =
        (0..topology.len()).map(|_| SMatrix::from_fn(|_, _| rng.random_range(-10.0..10.0))).collect();
    let sum0: SMatrix<f64, 4, 4> = init.iter().sum();
    let scale: SMatrix<f64, 4, 4> = init.iter().map(|m| m.abs()).sum();
    let mean = sum0 / topology.len() as f64;
    let mut values = init.clone();
    let mut drift: f64 = 0.0;
    for _ in 0..200 {
        values = consensus_step(&values, &topology, 0.325);
        let sum: SMatrix<f64, 4, 4> = values.iter().sum();
        drift = drift.max((sum - sum0).component_div(&scale).abs().max());
    }
    let err = values.iter().map(|v| (v - mean).abs().max()).fold(0.0, f64::max);
    report(
        2,
        "consensus correctness",
        err <= 1e-6 && drift <= 1e-12,
        format!("max deviation from mean {err:.3e} (tol 1e-6), sum drift {drift:.3e} (tol 1e-12)"),
    );
}

#[test]
fn c3_pseudo_measurement_moments() {
    let exact = pseudo_measurement_cov(&Mat2::identity()) == Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for c_y in [Mat2::identity(), Mat2::new(2.0, 0.6, 0.6, 0.5)] {
        let chol = c_y.cholesky().unwrap().l();
        let n = 1_000_000;
        let mut sum = Vec3::zeros();
        let mut outer = Mat3::zeros();
        for _ in 0..n {
            let r = chol * Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let y = Vec3::new(r[0] * r[0], r[1] * r[1], r[0] * r[1]);
            sum += y;
            outer += y * y.transpose();
        }
        let m = sum / n as f64;
        let cov = outer / n as f64 - m * m.transpose();
        let expected = pseudo_measurement_cov(&c_y);
        for i in 0..3 {
            for j in 0..3 {
                let scale = (expected[(i, i)] * expected[(j, j)]).sqrt();
                worst = worst.max((cov[(i, j)] - expected[(i, j)]).abs() / scale);
            }
        }
    }
    report(
        3,
        "moment fidelity",
        exact && worst <= 0.03,
        format!("identity case exact: {exact}, max Monte Carlo relative error {worst:.4} (tol 0.03)"),
    );
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

#[test]
fn c4_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let speed = rng.random_range(0.5..50.0);
        let v = Vec2::new(speed * heading.cos(), speed * heading.sin());
        let p = Vec3::new(rng.random_range(0.1..50.0), rng.random_range(0.1..50.0), rng.random_range(-3.0..3.0));
        let s_at = |v: &Vec2, p: &Vec3| coefficient_matrix(v, &ExtentState::from_vector(p)).unwrap();
        let ext = ExtentState::from_vector(&p);

        let je = jacobians_extent(&v, &ext).unwrap();
        let jv = jacobians_velocity(&v, &ext).unwrap();
        for m in 0..2 {
            let mut num_e = Vec::new();
            let mut ana_e = Vec::new();
            let mut num_v = Vec::new();
            let mut ana_v = Vec::new();
            for j in 0..2 {
                for q in 0..3 {
                    let h = 1e-6 * p[q].abs().max(1.0);
                    let mut hi = p;
                    let mut lo = p;
                    hi[q] += h;
                    lo[q] -= h;
                    num_e.push((s_at(&v, &hi)[(m, j)] - s_at(&v, &lo)[(m, j)]) / (2.0 * h));
                    ana_e.push(je.row(m)[(j, q)]);
                }
                for q in 0..2 {
                    let h = 1e-6 * v.norm();
                    let mut hi = v;
                    let mut lo = v;
                    hi[q] += h;
                    lo[q] -= h;
                    num_v.push((s_at(&hi, &p)[(m, j)] - s_at(&lo, &p)[(m, j)]) / (2.0 * h));
                    ana_v.push(jv.row(m)[(j, q)]);
                }
            }
            worst = worst.max(rel_err(&ana_e, &num_e)).max(rel_err(&ana_v, &num_v));
        }

        let vp = velocity_partials(&v).unwrap();
        let unit = |v: &Vec2| v / v.norm();
        let h = 1e-6 * v.norm();
        let dx = (unit(&(v + Vec2::new(h, 0.0))) - unit(&(v - Vec2::new(h, 0.0)))) / (2.0 * h);
        let dy = (unit(&(v + Vec2::new(0.0, h))) - unit(&(v - Vec2::new(0.0, h)))) / (2.0 * h);
        worst = worst.max(rel_err(&[vp.d1, vp.d3, vp.d3, vp.d2], &[dx[0], dx[1], dy[0], dy[1]]));
    }
    report(4, "Jacobian fidelity", worst <= 1e-5, format!("max relative error {worst:.3e} over 1000 points (tol 1e-5)"));
}

/// Per-run scan averages of GWD and kinematic ACEE for each `L`.
fn sweep(cfg: &ScenarioConfig, iters: &[usize], runs: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![(vec![], vec![]); iters.len()];
    for run in 0..runs {
        let inputs = simulate_inputs(cfg, SEED, run).unwrap();
        for (j, &l) in iters.iter().enumerate() {
            let post = run_distributed(cfg, &inputs, l).unwrap();
            let m = distributed_metrics(&post, &inputs.truth, cfg.shape).unwrap();
            out[j].0.push(m.gwd.iter().sum::<f64>() / m.gwd.len() as f64);
            out[j].1.push(m.acee_kin.iter().sum::<f64>() / m.acee_kin.len() as f64);
        }
    }
    out
}

/// Counts increases from one `L` to the next that exceed twice the
/// standard error of the paired per-run difference.
fn band_violations(per_l: &[&Vec<f64>]) -> usize {
    per_l
        .windows(2)
        .filter(|w| {
            let diffs: Vec<f64> = w[1].iter().zip(w[0].iter()).map(|(b, a)| b - a).collect();
            let (m, sd) = mean_std(&diffs);
            m > 2.0 * sd / (diffs.len() as f64).sqrt()
        })
        .count()
}

#[test]
fn c5_iteration_sweep_trend() {
    let cfg = build_s3();
    let iters = [1, 2, 5, 10, 20];
    let res = sweep(&cfg, &iters, 50);
    let gwd: Vec<&Vec<f64>> = res.iter().map(|r| &r.0).collect();
    let acee: Vec<&Vec<f64>> = res.iter().map(|r| &r.1).collect();
    let means = |v: &[&Vec<f64>]| v.iter().map(|x| format!("{:.4}", mean_std(x).0)).collect::<Vec<_>>().join(", ");
    let (vg, va) = (band_violations(&gwd), band_violations(&acee));
    report(
        5,
        "iteration-sweep trend",
        vg <= 1 && va <= 1,
        format!(
            "L = {iters:?}: GWD [{}] with {vg} band violations, ACEE [{}] with {va} band violations (max 1 each)",
            means(&gwd),
            means(&acee)
        ),
    );
}

#[test]
fn c6_unequal_priors_stay_bounded_and_agree() {
    let mut details = vec![];
    let mut pass = true;
    for (mode, rho) in [(PriorMode::UncorrelatedUnequal, 0.0), (PriorMode::CorrelatedUnequal, 0.5)] {
        let cfg = build_s3().with_prior_mode(mode, rho);
        let runs = 50;
        let (mut kin_ratio, mut ext_ratio, mut max_gwd) = (0.0f64, 0.0f64, 0.0f64);
        let mut failures = 0;
        for run in 0..runs {
            let inputs = simulate_inputs(&cfg, SEED, run).unwrap();
            let outcome = run_distributed(&cfg, &inputs, 10)
                .and_then(|post| distributed_metrics(&post, &inputs.truth, cfg.shape).map(|m| (post, m)));
            let Ok((post, m)) = outcome else {
                failures += 1;
                continue;
            };
            if m.gwd.iter().any(|g| !g.is_finite()) {
                failures += 1;
                continue;
            }
            max_gwd = max_gwd.max(m.gwd.iter().cloned().fold(0.0, f64::max));
            let last = post.last().unwrap();
            let n = last.len() as f64;
            let kin_mag = last.iter().map(|s| s.kin.mean).sum::<SMatrix<f64, 4, 1>>().norm() / n;
            let ext_mag = last.iter().map(|s| s.ext.mean).sum::<Vec3>().norm() / n;
            kin_ratio = kin_ratio.max(m.acee_kin.last().unwrap() / kin_mag);
            ext_ratio = ext_ratio.max(m.acee_ext.last().unwrap() / ext_mag);
        }
        let size = cfg.semi_lengths[0].max(cfg.semi_lengths[1]);
        let ok = failures == 0 && max_gwd < 2.0 * size && kin_ratio < 0.1 && ext_ratio < 0.1;
        pass &= ok;
        details.push(format!(
            "{mode:?}: {failures} diverged of {runs}, max GWD {max_gwd:.2} (bound {:.0}), worst final ACEE/|x| {kin_ratio:.2e}, ACEE/|p| {ext_ratio:.2e}",
            2.0 * size
        ));
    }
    report(6, "prior robustness", pass, details.join("; "));
}

#[test]
fn c7_sideslip_converges_on_s2() {
    let cfg = build_s2();
    let runs = 50;
    let k = cfg.scan_count;
    let (mut first, mut last) = (0.0, 0.0);
    for run in 0..runs {
        let inputs = simulate_inputs(&cfg, SEED, run).unwrap();
        let post = run_central(&cfg, &inputs).unwrap();
        // β and β + π describe the same axis-symmetric body.
        let err: Vec<f64> = post
            .iter()
            .zip(&inputs.truth)
            .map(|(p, t)| wrap_angle(2.0 * (p.ext.mean[2] - t.ext.sideslip)).abs() / 2.0)
            .collect();
        first += err[..20].iter().sum::<f64>() / 20.0 / runs as f64;
        last += err[k - 20..].iter().sum::<f64>() / 20.0 / runs as f64;
    }
    report(
        7,
        "drift tracking",
        last < 0.5 * first,
        format!("mean |β error| first 20 scans {first:.4} rad, last 20 scans {last:.4} rad (need last < half of first)"),
    );
}

#[test]
fn c8_central_nees_is_consistent_on_s1() {
    let cfg = build_s1();
    let runs = 50usize;
    let mut anees = vec![0.0; cfg.scan_count];
    for run in 0..runs {
        let inputs = simulate_inputs(&cfg, SEED, run as u64).unwrap();
        let post = run_central(&cfg, &inputs).unwrap();
        let m = central_metrics(&post, &inputs.truth, cfg.shape).unwrap();
        for (a, e) in anees.iter_mut().zip(&m.nees) {
            *a += e / runs as f64;
        }
    }
    let chi = ChiSquared::new(4.0 * runs as f64).unwrap();
    let (lo, hi) = (chi.inverse_cdf(0.025) / runs as f64, chi.inverse_cdf(0.975) / runs as f64);
    let inside = anees.iter().filter(|a| (lo..=hi).contains(*a)).count() as f64 / anees.len() as f64;
    let overall = anees.iter().sum::<f64>() / anees.len() as f64;
    report(
        8,
        "filter consistency",
        inside >= 0.9,
        format!(
            "{:.0}% of scans have average NEES in [{lo:.3}, {hi:.3}] (need 90%), overall average {overall:.3}",
            100.0 * inside
        ),
    );
}

#[test]
fn c9_naive_nodes_gain_information_through_consensus() {
    let cfg = build_s3();
    let network = cfg.network().unwrap();
    let topology = &network.topology;
    let noise = cfg.noise_model().unwrap();
    let dynamics = cfg.dynamics();
    let inputs = simulate_inputs(&cfg, SEED, 0).unwrap();
    let k = (1..cfg.scan_count)
        .find(|&k| !naive_nodes(&inputs.truth[k], &network).is_empty() && inputs.scans[k].sequential_len() > 0)
        .expect("segment with naive nodes");
    let naive = naive_nodes(&inputs.truth[k], &network);

    let common = time_update_node(&inputs.priors.nodes[0], &dynamics).unwrap();
    let truth_kin = inputs.truth[k].kin.to_vector();
    let truth_ext = inputs.truth[k].ext.to_vector();
    let predicted: Vec<NodeFilterState> = (0..network.len())
        .map(|id| {
            let mut st = NodeFilterState { id, ..common };
            st.kin.mean = truth_kin + (inputs.priors.nodes[0].kin.mean - inputs.truth[0].kin.to_vector());
            st.ext.mean = truth_ext + (inputs.priors.nodes[0].ext.mean - inputs.truth[0].ext.to_vector());
            st
        })
        .collect();

    let run_scan = |iterations: usize| {
        let config = ConsensusConfig { iterations, ..cfg.consensus };
        let mut states = predicted.clone();
        for slice in inputs.scans[k].slices() {
            states = distributed_step(&states, &slice, topology, &noise, &config, PriorCase::Converged).unwrap();
        }
        states
    };
    let gain = |states: &[NodeFilterState], s: usize| {
        let dk = states[s].kin.info - predicted[s].kin.info;
        let de = states[s].ext.info - predicted[s].ext.info;
        (min_eigenvalue(&dk).min(min_eigenvalue(&de)), dk.trace(), de.trace())
    };

    let l = topology.diameter();
    let after = run_scan(l);
    let mut pass = true;
    let mut details = vec![];
    for &s in &naive {
        let (min_eig, tk, te) = gain(&after, s);
        let scale = predicted[s].kin.info.norm().max(predicted[s].ext.info.norm());
        pass &= min_eig >= -1e-9 * scale && tk > 0.0 && te > 0.0;
        details.push(format!("node {s}: gain traces kin {tk:.3e} ext {te:.3e}, min eig {min_eig:.2e}"));
    }
    let idle = run_scan(0);
    let (_, tk0, te0) = gain(&idle, *naive.iter().next().unwrap());
    pass &= tk0.abs() < 1e-9 && te0.abs() < 1e-9;

    let central = {
        let st = CentralFilterState::new(predicted[0].kin, predicted[0].ext);
        inputs.scans[k].slices().iter().fold(st, |st, sl| sequential_step(&st, sl, &noise).unwrap())
    };
    details.push(format!(
        "scan {k}, L = {l} (diameter), without consensus gain {tk0:.1e}/{te0:.1e}, central kin info trace gain {:.3e}",
        (central.kin.info - predicted[0].kin.info).trace()
    ));
    report(9, "naive-node handling", pass, details.join("; "));
}
