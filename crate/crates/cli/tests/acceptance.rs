//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and a
//! summary. Failures only change the exit status when
//! `FLOWSENSE_ACCEPTANCE_STRICT=1`, so the workspace test run reports them
//! without stopping. Pass criterion numbers as arguments to run a subset
//! (`cargo test --test acceptance -- 3 7`).

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use flowsense::alignment::{estimate_delay, AlignmentConfig, DEFAULT_CANDIDATES};
use flowsense::collision::{self, CreditConfig};
use flowsense::eval::{
    self, action_separation, block_bootstrap_mean_ci, dip_test, export_distributions,
    novelty_sweep, principal_projection, train_and_evaluate, EvalConfig, FlowRegion,
};
use flowsense::forward_model::FeatureScaler;
use flowsense::igmm::{GaussianBlock, IgmmConfig, LearnOutcome, Mixture, MixtureComponent};
use flowsense::sensorimotor::{make_pairs, FeatureLayout, FlowGrid, FlowVector};
use flowsense::simulator::{simulate, PolicySpec, Scenario};
use flowsense::{ForwardModel, ForwardModelConfig, StreamLog};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

struct Truth {
    means: [[f64; 2]; 3],
    stds: [[f64; 2]; 3],
    weights: [f64; 3],
}

fn draw_truth(rng: &mut ChaCha8Rng) -> Truth {
    // Triangle of side >= 24 (at least 16 std) around a random centre, random rotation.
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let side: f64 = rng.random_range(24.0..30.0);
    let centre = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
    let mut means = [[0.0; 2]; 3];
    for (k, m) in means.iter_mut().enumerate() {
        let a = angle + k as f64 * std::f64::consts::TAU / 3.0;
        let r = side / 3f64.sqrt();
        *m = [centre[0] + r * a.cos(), centre[1] + r * a.sin()];
    }
    let mut stds = [[0.0; 2]; 3];
    for s in stds.iter_mut() {
        *s = [rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)];
    }
    let raw = [
        rng.random_range(0.2..0.5),
        rng.random_range(0.2..0.5),
        rng.random_range(0.2..0.5),
    ];
    let total: f64 = raw.iter().sum();
    Truth {
        means,
        stds,
        weights: raw.map(|w| w / total),
    }
}

fn sample_truth(t: &Truth, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let k = if u < t.weights[0] {
                0
            } else if u < t.weights[0] + t.weights[1] {
                1
            } else {
                2
            };
            let e0: f64 = StandardNormal.sample(rng);
            let e1: f64 = StandardNormal.sample(rng);
            [t.means[k][0] + t.stds[k][0] * e0, t.means[k][1] + t.stds[k][1] * e1]
        })
        .collect()
}

struct EmFit {
    means: Vec<[f64; 2]>,
    vars: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

/// Batch EM for a diagonal-covariance mixture, iterated to convergence.
fn batch_em(data: &[[f64; 2]], init: &Truth) -> EmFit {
    let k = 3;
    let mut means: Vec<[f64; 2]> = init.means.to_vec();
    let mut vars: Vec<[f64; 2]> = init.stds.iter().map(|s| [s[0] * s[0], s[1] * s[1]]).collect();
    let mut weights = init.weights.to_vec();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let mut resp = vec![[0.0; 3]; data.len()];
        let mut ll = 0.0;
        for (i, z) in data.iter().enumerate() {
            let mut lp = [0.0; 3];
            for j in 0..k {
                lp[j] = weights[j].ln()
                    - (2.0 * std::f64::consts::PI).ln()
                    - 0.5 * (vars[j][0].ln() + vars[j][1].ln())
                    - 0.5
                        * ((z[0] - means[j][0]).powi(2) / vars[j][0]
                            + (z[1] - means[j][1]).powi(2) / vars[j][1]);
            }
            let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = lp.iter().map(|v| (v - m).exp()).sum();
            ll += m + s.ln();
            for j in 0..k {
                resp[i][j] = (lp[j] - m).exp() / s;
            }
        }
        for j in 0..k {
            let nj: f64 = resp.iter().map(|r| r[j]).sum();
            let mut mu = [0.0; 2];
            for (r, z) in resp.iter().zip(data) {
                mu[0] += r[j] * z[0];
                mu[1] += r[j] * z[1];
            }
            mu = [mu[0] / nj, mu[1] / nj];
            let mut v = [0.0; 2];
            for (r, z) in resp.iter().zip(data) {
                v[0] += r[j] * (z[0] - mu[0]).powi(2);
                v[1] += r[j] * (z[1] - mu[1]).powi(2);
            }
            means[j] = mu;
            vars[j] = [v[0] / nj, v[1] / nj];
            weights[j] = nj / data.len() as f64;
        }
        if (ll - prev).abs() < 1e-10 * ll.abs() {
            break;
        }
        prev = ll;
    }
    EmFit {
        means,
        vars,
        weights,
    }
}

fn criterion_1() -> Outcome {
    let mut worst_mean = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut worst_time = 0.0f64;
    let mut counts = Vec::new();
    let trials = 10;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let truth = draw_truth(&mut rng);
        let data = sample_truth(&truth, 3000, &mut rng);
        let start = Instant::now();
        let cfg = IgmmConfig::new(vec![4.0], vec![4.0]).with_novelty_distance(5.0);
        let mut m = Mixture::new(cfg).expect("config");
        for z in &data {
            m.learn_one(&[z[0]], &[z[1]]).expect("learn");
        }
        worst_time = worst_time.max(start.elapsed().as_secs_f64());
        counts.push(m.len());
        if m.len() != 3 {
            continue;
        }
        let em = batch_em(&data, &truth);
        let total = m.total_mass();
        for j in 0..3 {
            // Nearest learned component to each oracle component.
            let (best, _) = m
                .components()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let d = (c.mu_x()[0] - em.means[j][0]).powi(2) + (c.mu_y()[0] - em.means[j][1]).powi(2);
                    (i, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            let c = m.component(best);
            let dm = ((c.mu_x()[0] - em.means[j][0]).abs() / em.vars[j][0].sqrt())
                .max((c.mu_y()[0] - em.means[j][1]).abs() / em.vars[j][1].sqrt());
            worst_mean = worst_mean.max(dm);
            let dw = (c.mass() / total - em.weights[j]).abs() / em.weights[j];
            worst_mass = worst_mass.max(dw);
        }
    }
    let all_three = counts.iter().all(|&c| c == 3);
    outcome(
        all_three && worst_mean < 0.1 && worst_mass < 0.05 && worst_time < 5.0,
        format!(
            "{trials} random mixtures: component counts {counts:?}, worst mean error {worst_mean:.2e} sigma (< 0.1), worst relative mass error {worst_mass:.2e} (< 0.05), slowest fit {worst_time:.3} s (< 5)"
        ),
    )
}

// ---------------------------------------------------------------- 2

const FLOOR: f64 = 1e-6;

/// The covariance recurrence written against dense matrices, for replay.
struct DenseBlock {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    mass: f64,
}

impl DenseBlock {
    fn fresh(z: &[f64], sigma: f64) -> Self {
        let d = z.len();
        Self {
            mean: DVector::from_column_slice(z),
            cov: DMatrix::identity(d, d) * sigma * sigma,
            mass: 1.0,
        }
    }

    /// Returns whether the eigenvalue floor had to be enforced.
    fn absorb(&mut self, z: &[f64], w: f64) -> bool {
        let z = DVector::from_column_slice(z);
        self.mass += w;
        let omega = w / self.mass;
        let old = self.mean.clone();
        self.mean = &old + (&z - &old) * omega;
        let delta = &self.mean - &old;
        let e = &z - &self.mean;
        self.cov = &self.cov - &delta * delta.transpose() + (&e * e.transpose() - &self.cov) * omega;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        let lmin = self.cov.clone().symmetric_eigen().eigenvalues.min();
        if lmin < FLOOR {
            let d = self.mean.len();
            self.cov += DMatrix::identity(d, d) * (FLOOR - lmin);
            return true;
        }
        false
    }
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_mean_vs_weighted = 0.0f64;
    let mut components = 0;
    let mut floored = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let centres: Vec<[f64; 4]> = (0..4)
            .map(|_| std::array::from_fn(|_| rng.random_range(-6.0..6.0)))
            .collect();
        let sigma = 1.0;
        let cfg = IgmmConfig::new(vec![sigma; 2], vec![sigma; 2]).with_update_skip(0.0);
        let mut m = Mixture::new(cfg).expect("config");
        let mut xs: Vec<DenseBlock> = Vec::new();
        let mut ys: Vec<DenseBlock> = Vec::new();
        let mut weighted: Vec<(Vec<f64>, f64)> = Vec::new();
        for _ in 0..2000 {
            let c = &centres[rng.random_range(0..centres.len())];
            let z: Vec<f64> = c
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + 0.8 * e
                })
                .collect();
            let (x, y) = (&z[..2], &z[2..]);
            match m.learn_one(x, y).expect("learn") {
                LearnOutcome::Created { .. } => {
                    xs.push(DenseBlock::fresh(x, sigma));
                    ys.push(DenseBlock::fresh(y, sigma));
                    weighted.push((z.clone(), 1.0));
                }
                LearnOutcome::Updated { applied, .. } => {
                    for (j, w) in applied {
                        floored += xs[j].absorb(x, w) as usize;
                        floored += ys[j].absorb(y, w) as usize;
                        let (sum, mass) = &mut weighted[j];
                        for (s, v) in sum.iter_mut().zip(&z) {
                            *s += w * v;
                        }
                        *mass += w;
                    }
                }
            }
        }
        components += m.len();
        for (j, c) in m.components().iter().enumerate() {
            for (block, dense) in [(c.input(), &xs[j]), (c.output(), &ys[j])] {
                let d = block.dim();
                for r in 0..d {
                    worst = worst.max((block.mean()[r] - dense.mean[r]).abs());
                    for k in 0..d {
                        worst = worst.max((block.cov()[r * d + k] - dense.cov[(r, k)]).abs());
                    }
                }
            }
            worst = worst.max((c.mass() - xs[j].mass).abs());
            // The mean is also the plain weighted average of absorbed samples
            // (creation sample weighted 1).
            let (sum, mass) = &weighted[j];
            for (i, mu) in c.mu_x().iter().chain(c.mu_y()).enumerate() {
                worst_mean_vs_weighted = worst_mean_vs_weighted.max((mu - sum[i] / mass).abs());
            }
        }
    }
    outcome(
        worst < 1e-8 && worst_mean_vs_weighted < 1e-8,
        format!(
            "{components} components over 5 streams ({floored} updates hit the eigenvalue floor): max |incremental - replay| {worst:.2e}, max |mean - weighted mean| {worst_mean_vs_weighted:.2e} (< 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let candidates: Vec<usize> = DEFAULT_CANDIDATES.collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for delay in [6usize, 0] {
        let mut sc = Scenario::wander(1);
        sc.actuation_delay = delay;
        let log = simulate(&sc).expect("simulate").log;
        let start = Instant::now();
        let r = estimate_delay(&log, &candidates, &AlignmentConfig::default()).expect("align");
        let secs = start.elapsed().as_secs_f64();
        pass &= r.best_delay == delay && secs < 60.0;
        parts.push(format!(
            "injected {delay} -> estimated {} in {secs:.1} s",
            r.best_delay
        ));
    }
    outcome(pass, format!("{} (exact, < 60 s each)", parts.join("; ")))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let log = simulate(&Scenario::wander(1)).expect("simulate").log;
    let region = FlowRegion {
        id: "bottom-centre-slow".into(),
        u: (-5.0, 5.0),
        v: (-5.0, 5.0),
        cell: Some((3, 2)),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for h in [10usize, 15] {
        let rows = export_distributions(&log, std::slice::from_ref(&region), &[h]).expect("export");
        match action_separation(&rows, 30) {
            Some(s) => {
                pass &= s.min_separation_ratio > 2.0;
                parts.push(format!("T={h}: min centroid sep / within std = {:.2} (> 2)", s.min_separation_ratio));
            }
            None => {
                pass = false;
                parts.push(format!("T={h}: fewer than two populated actions"));
            }
        }
    }
    for h in [1usize, 2] {
        let rows = export_distributions(&log, std::slice::from_ref(&region), &[h]).expect("export");
        let dip = dip_test(&principal_projection(&rows), 2000, 7).expect("dip");
        let sep = action_separation(&rows, 30).map_or(0.0, |s| s.max_separation_to_pooled);
        let unimodal = dip.p_value > 0.05 || sep < 0.5;
        pass &= unimodal;
        parts.push(format!(
            "T={h}: dip {:.4} p {:.3} (> 0.05) or sep/pooled std {sep:.2} (< 0.5)",
            dip.dip, dip.p_value
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 5 and 6

fn ablation_config() -> EvalConfig {
    let mut cfg = EvalConfig::default();
    cfg.model.horizon = 15;
    cfg.model.layout = FeatureLayout {
        use_action: true,
        use_proprio: false,
        use_cell_coords: true,
        action_scale: [1.0, 1.0],
    };
    cfg
}

fn criterion_5() -> Outcome {
    let log = simulate(&Scenario::wander(1)).expect("simulate").log;
    let cfg = ablation_config();
    let start = Instant::now();
    let grid = eval::default_novelty_grid();
    let points = novelty_sweep(&log, &cfg, &grid).expect("sweep");
    let secs = start.elapsed().as_secs_f64();
    let default_d = cfg.model.novelty_distance;
    let at_default = points
        .iter()
        .find(|p| p.novelty_distance == default_d)
        .expect("default distance is on the grid");
    let reduction = at_default.with_action.relative_reduction;
    let dominates = points
        .iter()
        .all(|p| p.with_action.relative_reduction > p.without_action.relative_reduction);
    let curve: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "d={} K={}/{} red={:.3}/{:.3}",
                p.novelty_distance,
                p.with_action.component_count,
                p.without_action.component_count,
                p.with_action.relative_reduction,
                p.without_action.relative_reduction
            )
        })
        .collect();
    outcome(
        reduction >= 0.40 && dominates && secs < 180.0,
        format!(
            "with-action reduction {reduction:.3} at d={default_d} (>= 0.40); with > without at every sweep point: {dominates}; sweep {secs:.0} s (< 180); [{}]",
            curve.join(", ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let log = simulate(&Scenario::wander(1)).expect("simulate").log;
    let out = train_and_evaluate(&log, &ablation_config()).expect("train");
    let ratios: Vec<f64> = out.records.iter().map(|r| r.loglik_model - r.loglik_naive).collect();
    let block = 15 * log.header().cell_count();
    let (lo, hi) = block_bootstrap_mean_ci(&ratios, block, 2000, 0.95, 11).expect("bootstrap");
    let mean = out.report.mean_loglik_ratio;
    outcome(
        mean > 0.0 && lo > 0.0,
        format!("mean log-likelihood ratio {mean:.4} nats, 95% block-bootstrap CI [{lo:.4}, {hi:.4}] (must exclude 0 from above)"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let train = simulate(&Scenario::approach(101, 20)).expect("simulate");
    let val = simulate(&Scenario::approach(102, 20)).expect("simulate");
    let mut test_sc = Scenario::approach(103, 20);
    if let PolicySpec::Approach(p) = &mut test_sc.policy {
        p.static_push_frames = 10;
    }
    let test = simulate(&test_sc).expect("simulate");
    let wander_val = simulate(&Scenario::wander(202)).expect("simulate");
    let wander_test = simulate(&Scenario::wander(203)).expect("simulate");

    let mcfg = collision::default_model_config();
    let pairs = make_pairs(&train.log, mcfg.horizon, &mcfg.layout);
    let mut fm = ForwardModel::fit(&mcfg, &pairs, train.log.header().shape()).expect("fit");
    let credit = CreditConfig::for_frame_rate(15.0);
    collision::replay(&mut fm, &train.log, &credit, true).expect("replay");

    let tv = collision::replay(&mut fm.clone(), &val.log, &credit, false).expect("replay");
    let tw = collision::replay(&mut fm.clone(), &wander_val.log, &credit, false).expect("replay");
    let (threshold, f1) = collision::calibrate_threshold(
        &[(&tv, val.static_bump_onsets.clone()), (&tw, Vec::new())],
        credit.window,
    )
    .expect("calibrate");

    let tt = collision::replay(&mut fm.clone(), &test.log, &credit, false)
        .expect("replay")
        .with_threshold(threshold);
    let stats = collision::detection_stats(&tt, credit.window, 15, &test.static_bump_onsets);
    let twt = collision::replay(&mut fm.clone(), &wander_test.log, &credit, false)
        .expect("replay")
        .with_threshold(threshold);
    let wstats = collision::detection_stats(&twt, credit.window, 15, &[]);
    let minutes = wander_test.log.duration_seconds() / 60.0;
    let rate = wstats.false_alarms as f64 / minutes;
    let frac = stats.anticipated as f64 / stats.bumps.max(1) as f64;
    let alarm: Vec<bool> = tt.points.iter().map(|p| p.alarm).collect();
    let static_silent = test
        .static_bump_onsets
        .iter()
        .filter(|&&b| collision::alarm_lead(&alarm, b, 15) == 0)
        .count();
    outcome(
        stats.bumps == 20 && frac >= 0.8 && rate <= 1.0,
        format!(
            "threshold {threshold:.2} (validation F1 {f1:.3}); anticipated >= 15 frames: {}/{} = {frac:.2} (>= 0.80); wander false alarms {} in {minutes:.1} min = {rate:.2}/min (<= 1); static contacts without a preceding alarm: {static_silent}/{}",
            stats.anticipated,
            stats.bumps,
            wstats.false_alarms,
            test.static_bump_onsets.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn constant_flow_log(frames: usize) -> StreamLog {
    let mut sc = Scenario::wander(5);
    sc.duration = frames as f64 / sc.frame_rate;
    let log = simulate(&sc).expect("simulate").log;
    let (header, mut fr) = log.into_parts();
    let (rows, cols) = header.shape();
    for (i, f) in fr.iter_mut().enumerate() {
        let _ = i;
        f.flow = FlowGrid::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|k| FlowVector::new(k as f64 - 3.0, 2.0 * k as f64))
                .collect(),
        )
        .expect("grid");
    }
    StreamLog::new(header, fr).expect("log")
}

fn criterion_8() -> Outcome {
    let mut checks = BTreeMap::new();

    // One component: every input predicts its output mean.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mu_y = [1.25, -0.5];
    let dx = FeatureLayout::default().input_dim();
    let mut m = Mixture::new(IgmmConfig::new(vec![1.0; dx], vec![1.0; 2])).expect("config");
    let mean_x: Vec<f64> = (0..dx).map(|i| 0.3 * i as f64 - 1.0).collect();
    let std_x: Vec<f64> = (0..dx).map(|i| 0.4 + 0.1 * i as f64).collect();
    m.push_component(
        MixtureComponent::new(
            GaussianBlock::isotropic(mean_x, &std_x).expect("block"),
            GaussianBlock::isotropic(mu_y.to_vec(), &[0.2, 0.2]).expect("block"),
            5.0,
            0,
        )
        .expect("component"),
    )
    .expect("push");
    let mut fm = ForwardModel::new(
        &ForwardModelConfig {
            horizon: 3,
            ..ForwardModelConfig::default()
        },
        FeatureScaler::identity(dx),
        (1, 1),
    )
    .expect("model");
    *fm.mixture_mut() = m;
    let single_ok = (0..1000).all(|_| {
        let x: Vec<f64> = (0..dx).map(|_| rng.random_range(-50.0..50.0)).collect();
        fm.predict_cell(&x).expect("predict").delta == mu_y
    });
    checks.insert("single component predicts mu_y", single_ok);

    // Zero deltas: the predicted grid is the input grid.
    let log = constant_flow_log(300);
    let cfg = ForwardModelConfig {
        horizon: 5,
        ..ForwardModelConfig::default()
    };
    let pairs = make_pairs(&log, cfg.horizon, &cfg.layout);
    let fm = ForwardModel::fit(&cfg, &pairs, log.header().shape()).expect("fit");
    let grid_ok = log
        .frames()
        .iter()
        .all(|f| fm.predict_grid(f).expect("predict").grid == f.flow);
    checks.insert("zero-delta training reproduces the input grid", grid_ok);

    // Naive AEPE on constant flow.
    let truth: Vec<[f64; 2]> = pairs.iter().map(|p| p.y).collect();
    let naive: Vec<[f64; 2]> = truth.iter().map(|t| eval::naive_predict(*t)).collect();
    let aepe = eval::aepe(&naive, &truth).expect("aepe");
    checks.insert("naive AEPE on constant flow is 0", aepe == 0.0);

    let pass = checks.values().all(|&v| v);
    outcome(
        pass,
        checks
            .iter()
            .map(|(k, v)| format!("{k}: {}", if *v { "ok" } else { "violated" }))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

// ---------------------------------------------------------------- 9

fn run_cli(out: &Path, args: &[&str]) -> PathBuf {
    let o = Command::new(env!("CARGO_BIN_EXE_flowsense"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn flowsense");
    assert!(
        o.status.success(),
        "flowsense {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    PathBuf::from(line)
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").to_path_buf();
                out.insert(rel, std::fs::read(&p).expect("read"));
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let a = tmp.path().join("runs");
    let s = |x: &Path| x.to_str().expect("utf-8 path").to_string();

    let wander = run_cli(&a, &["simulate", "--preset", "wander", "--seed", "3", "--duration", "30"]);
    let bumps = run_cli(&a, &["simulate", "--preset", "approach", "--seed", "4", "--episodes", "3"]);
    let log = s(&wander.join("log.txt"));
    let bump_log = s(&bumps.join("log.txt"));
    let model_dir = run_cli(&a, &["train", "--log", &log, "--horizon", "5"]);
    let model = s(&model_dir.join("model.txt"));
    let pred_dir = run_cli(&a, &["predict", "--log", &log, "--model", &model]);
    let preds = s(&pred_dir.join("predictions.txt"));

    let commands: Vec<(&str, Vec<String>)> = vec![
        ("simulate", vec!["simulate", "--preset", "wander", "--seed", "3", "--duration", "30"].into_iter().map(String::from).collect()),
        ("align", vec!["align".into(), "--log".into(), log.clone(), "--max-delay".into(), "8".into()]),
        ("train", vec!["train".into(), "--log".into(), log.clone(), "--horizon".into(), "5".into()]),
        ("predict", vec!["predict".into(), "--log".into(), log.clone(), "--model".into(), model.clone()]),
        ("eval", vec!["eval".into(), "--log".into(), log.clone(), "--model".into(), model.clone(), "--predictions".into(), preds.clone()]),
        ("eval --sweep", vec!["eval".into(), "--log".into(), log.clone(), "--horizon".into(), "5".into(), "--sweep".into(), "--grid".into(), "2,3".into()]),
        ("collide", vec!["collide".into(), "--log".into(), bump_log.clone(), "--calibrate".into(), bump_log.clone(), "--test".into(), log.clone()]),
        ("pipeline", vec!["pipeline", "--seed", "2", "--duration", "30", "--episodes", "3", "--max-delay", "8"].into_iter().map(String::from).collect()),
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let dir = run_cli(&a, &args);
        let first = tree(&dir);
        // Regenerate from nothing with the same configuration...
        std::fs::remove_dir_all(&dir).expect("remove run directory");
        let again = run_cli(&a, &args);
        let second = tree(&again);
        // ...and once more over the existing directory.
        let third = tree(&run_cli(&a, &args));
        files += first.len();
        if again != dir || first != second || second != third {
            mismatched.push(*name);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!(
            "{} commands, {files} output files compared across regenerated and repeated runs; mismatches: {mismatched:?}",
            commands.len()
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "IGMM matches batch EM", criterion_1),
        (2, "incremental update equals replay", criterion_2),
        (3, "delay recovery", criterion_3),
        (4, "multi-modality emerges with horizon", criterion_4),
        (5, "action ablation", criterion_5),
        (6, "likelihood ratio vs naive", criterion_6),
        (7, "collision anticipation", criterion_7),
        (8, "degenerate-prediction identities", criterion_8),
        (9, "CLI determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} [{name}]: {verdict} ({:.1} s) {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(n);
        }
    }
    println!("acceptance: {} of {ran} criteria passed; failed: {failed:?}", ran - failed.len());
    let strict = std::env::var("FLOWSENSE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
