use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use flowsense::alignment::{apply_delay, estimate_delay, AlignmentConfig};
use flowsense::collision::{self, CollisionTrace, CreditConfig, DetectionStats};
use flowsense::eval::{
    self, block_bootstrap_mean_ci, evaluate, novelty_sweep, report_from_records, sweep_to_table,
    temporal_split, EvalConfig, MetricReport, NaiveDensity,
};
use flowsense::forward_model::{dump_to_text, parse_dump, FeatureScaler};
use flowsense::sensorimotor::make_pairs;
use flowsense::simulator::{simulate as run_scenario, Scenario};
use flowsense::textio::fmt_f64;
use flowsense::{Execution, ForwardModel, ForwardModelConfig, StreamLog};

use crate::run::{Input, RunConfig, RunDir};
use crate::{
    AlignArgs, CollideArgs, EvalArgs, PipelineArgs, PredictArgs, Preset, SimulateArgs, TrainArgs,
};

/// Writes to stdout, ignoring a closed pipe (`flowsense ... | head`).
pub fn say(text: &str) {
    use std::io::Write as _;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

pub struct Ctx {
    pub out: PathBuf,
    pub exec: Execution,
}

fn load_log(input: &Input) -> Result<StreamLog> {
    StreamLog::parse(&input.text).with_context(|| format!("parsing {}", input.path.display()))
}

fn load_model(input: &Input) -> Result<ForwardModel> {
    ForwardModel::from_text(&input.text).with_context(|| format!("parsing {}", input.path.display()))
}

fn delayed(log: StreamLog, delay: usize) -> Result<StreamLog> {
    Ok(if delay == 0 { log } else { apply_delay(&log, delay)? })
}

/// Records every field of a model configuration, so the run directory name
/// changes whenever the model would.
fn describe_model(cfg: &mut RunConfig, m: &ForwardModelConfig) {
    cfg.set("horizon", m.horizon)
        .set("use_action", m.layout.use_action)
        .set("use_proprio", m.layout.use_proprio)
        .set("use_cell_coords", m.layout.use_cell_coords)
        .set("action_scale", format!("{},{}", fmt_f64(m.layout.action_scale[0]), fmt_f64(m.layout.action_scale[1])))
        .set("init_std_x", fmt_f64(m.init_std_x))
        .set("init_std_y", fmt_f64(m.init_std_y))
        .set("novelty_distance", fmt_f64(m.novelty_distance))
        .set("update_skip", fmt_f64(m.update_skip))
        .set("mass_fraction", fmt_f64(m.mass_fraction))
        .set("regularization_floor", fmt_f64(m.regularization_floor))
        .set("warmup_pairs", m.warmup_pairs);
}

fn describe_credit(cfg: &mut RunConfig, c: &CreditConfig) {
    cfg.set("window", c.window)
        .set("gamma", fmt_f64(c.gamma))
        .set("alarm_threshold", fmt_f64(c.alarm_threshold))
        .set("active_set_size", c.active_set_size)
        .set("per_cell_credit", c.per_cell_credit);
}

fn check_split(split: f64) -> Result<()> {
    if !(split > 0.0 && split < 1.0) {
        bail!("--split must lie strictly between 0 and 1 (got {split})");
    }
    Ok(())
}

pub fn build_scenario(a: &SimulateArgs, file: Option<&Input>) -> Result<Scenario> {
    let mut sc = match file {
        Some(f) => Scenario::parse(&f.text).with_context(|| format!("parsing {}", f.path.display()))?,
        None => {
            let seed = a.seed.unwrap_or(0);
            match a.preset {
                Preset::Wander => Scenario::wander(seed),
                Preset::Approach => Scenario::approach(seed, a.episodes.unwrap_or(20)),
                Preset::Rotate => Scenario::rotate(seed),
            }
        }
    };
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if let Some(d) = a.duration {
        sc.duration = d;
    }
    if let Some(d) = a.delay {
        sc.actuation_delay = d;
    }
    if let Some(n) = a.episodes {
        match &mut sc.policy {
            flowsense::simulator::PolicySpec::Approach(p) => p.episodes = n,
            _ => bail!("--episodes only applies to approach scenarios"),
        }
    }
    sc.validate()?;
    Ok(sc)
}

pub fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<PathBuf> {
    let file = a.scenario.as_deref().map(|p| Input::read("scenario", p)).transpose()?;
    let sc = build_scenario(a, file.as_ref())?;
    let text = sc.to_text();
    let mut cfg = RunConfig::new("simulate");
    cfg.set("scenario_sha256", crate::run::sha256_hex(text.as_bytes()));
    if let Some(f) = &file {
        cfg.input(f);
    }
    let mut run = RunDir::create(&ctx.out, cfg)?;
    let sim = run_scenario(&sc)?;
    run.write("scenario.txt", &text)?;
    run.write("log.txt", &sim.log.to_text())?;
    say(&format!(
        "{} frames, {} bumps ({} static), flow noise std {}\n",
        sim.log.len(),
        sim.bump_onsets.len(),
        sim.static_bump_onsets.len(),
        fmt_f64(sim.flow_noise_std)
    ));
    run.finish()
}

pub fn align(ctx: &Ctx, a: &AlignArgs) -> Result<PathBuf> {
    let input = Input::read("log", &a.log)?;
    let log = load_log(&input)?;
    let mut acfg = AlignmentConfig {
        execution: ctx.exec,
        ..AlignmentConfig::default()
    };
    if let Some(s) = a.split {
        check_split(s)?;
        acfg.train_fraction = s;
    }
    let mut cfg = RunConfig::new("align");
    cfg.input(&input).set("max_delay", a.max_delay).set("split", fmt_f64(acfg.train_fraction));
    describe_model(&mut cfg, &acfg.model);
    let mut run = RunDir::create(&ctx.out, cfg)?;
    let candidates: Vec<usize> = (0..=a.max_delay).collect();
    let result = estimate_delay(&log, &candidates, &acfg)?;
    let table = result.to_table();
    say(&table);
    say(&format!("best delay: {}\n", result.best_delay));
    run.write("alignment.txt", &table)?;
    run.write("delay.txt", &format!("{}\n", result.best_delay))?;
    run.finish()
}

/// One progress line of a training run.
pub struct Progress {
    pub samples: usize,
    pub components: usize,
    pub rolling_aepe: f64,
}

/// Streams `pairs` through a fresh model in order. Every `every` samples a
/// report records the component count and the mean end-point error of the
/// last `rolling` predictions, each made before its sample was learned
/// (with the prediction set refreshed at every report).
pub fn train_streaming(
    cfg: &ForwardModelConfig,
    pairs: &[flowsense::TrainingPair],
    shape: (usize, usize),
    every: usize,
    rolling: usize,
) -> Result<(ForwardModel, Vec<Progress>)> {
    if every == 0 || rolling == 0 {
        bail!("report interval and rolling window must be positive");
    }
    let warm = &pairs[..pairs.len().min(cfg.warmup_pairs)];
    let mut fm = ForwardModel::new(cfg, FeatureScaler::fit(warm)?, shape)?;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(rolling);
    let mut sum = 0.0;
    let mut set: Vec<usize> = Vec::new();
    let mut reports = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if !set.is_empty() {
            let pred = fm.predict_cell_in(&p.x, &set)?;
            let e = eval::end_point_error(&pred.delta, &p.y);
            if window.len() == rolling {
                sum -= window.pop_front().unwrap_or(0.0);
            }
            window.push_back(e);
            sum += e;
        }
        fm.learn_pair(p)?;
        if (i + 1) % every == 0 || i + 1 == pairs.len() {
            set = fm.prediction_set()?;
            reports.push(Progress {
                samples: i + 1,
                components: fm.mixture().len(),
                rolling_aepe: if window.is_empty() {
                    f64::NAN
                } else {
                    sum / window.len() as f64
                },
            });
        }
    }
    Ok((fm, reports))
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> Result<PathBuf> {
    check_split(a.split)?;
    let input = Input::read("log", &a.log)?;
    let log = delayed(load_log(&input)?, a.delay)?;
    let mcfg = a.model.apply(ForwardModelConfig::default());
    mcfg.validate()?;
    let mut cfg = RunConfig::new("train");
    cfg.input(&input)
        .set("delay", a.delay)
        .set("split", fmt_f64(a.split))
        .set("report_every", a.report_every)
        .set("rolling", a.rolling);
    describe_model(&mut cfg, &mcfg);
    let mut run = RunDir::create(&ctx.out, cfg)?;

    let pairs = make_pairs(&log, mcfg.horizon, &mcfg.layout);
    let (train, _) = temporal_split(&pairs, log.header().cell_count(), a.split)?;
    let (fm, reports) = train_streaming(&mcfg, train, log.header().shape(), a.report_every, a.rolling)?;
    let mut table = String::from("# samples components rolling_aepe\n");
    for r in &reports {
        let line = format!("{} {} {}", r.samples, r.components, fmt_f64(r.rolling_aepe));
        if a.verbose {
            say(&format!("{line}\n"));
        }
        let _ = writeln!(table, "{line}");
    }
    if let Some(last) = reports.last() {
        say(&format!(
            "trained on {} samples: {} components, rolling AEPE {}\n",
            last.samples,
            last.components,
            fmt_f64(last.rolling_aepe)
        ));
    }
    run.write("progress.txt", &table)?;
    run.write("model.txt", &fm.to_text())?;
    run.finish()
}

/// Model-side pieces shared by predict and eval on a saved model.
fn held_out(
    log: &StreamLog,
    fm: &ForwardModel,
    split: f64,
) -> Result<(NaiveDensity, Vec<flowsense::TrainingPair>)> {
    let pairs = make_pairs(log, fm.horizon(), fm.layout());
    let (train, test) = temporal_split(&pairs, log.header().cell_count(), split)?;
    Ok((NaiveDensity::fit(train)?, test.to_vec()))
}

pub fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<PathBuf> {
    check_split(a.split)?;
    let log_in = Input::read("log", &a.log)?;
    let model_in = Input::read("model", &a.model)?;
    let log = delayed(load_log(&log_in)?, a.delay)?;
    let fm = load_model(&model_in)?;
    let mut cfg = RunConfig::new("predict");
    cfg.input(&log_in)
        .input(&model_in)
        .set("delay", a.delay)
        .set("split", fmt_f64(a.split));
    let mut run = RunDir::create(&ctx.out, cfg)?;
    let (naive, test) = held_out(&log, &fm, a.split)?;
    let ecfg = EvalConfig {
        execution: ctx.exec,
        ..EvalConfig::default()
    };
    let (report, records) = evaluate(&fm, &naive, &test, &ecfg)?;
    say(&format!(
        "{} predictions, AEPE {} (naive {})\n",
        records.len(),
        fmt_f64(report.aepe_model),
        fmt_f64(report.aepe_naive)
    ));
    run.write("predictions.txt", &dump_to_text(&records))?;
    run.finish()
}

/// Report text with the bootstrap interval of the mean log-likelihood ratio.
fn report_text(report: &MetricReport, ci: Option<(f64, f64)>) -> String {
    let mut s = report.to_text();
    if let Some((lo, hi)) = ci {
        let _ = writeln!(s, "{:<24}{}", "loglik_ratio_ci_low", fmt_f64(lo));
        let _ = writeln!(s, "{:<24}{}", "loglik_ratio_ci_high", fmt_f64(hi));
    }
    s
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<PathBuf> {
    check_split(a.split)?;
    let log_in = Input::read("log", &a.log)?;
    let model_in = a.model.as_deref().map(|p| Input::read("model", p)).transpose()?;
    let pred_in = a.predictions.as_deref().map(|p| Input::read("predictions", p)).transpose()?;
    let log = delayed(load_log(&log_in)?, a.delay)?;
    let ecfg = EvalConfig {
        model: a.model_args.apply(ForwardModelConfig::default()),
        train_fraction: a.split,
        execution: ctx.exec,
        ..EvalConfig::default()
    };
    ecfg.validate()?;

    let mut cfg = RunConfig::new("eval");
    cfg.input(&log_in)
        .set("delay", a.delay)
        .set("split", fmt_f64(a.split))
        .set("bootstrap", a.bootstrap)
        .set("seed", a.seed);
    for i in model_in.iter().chain(&pred_in) {
        cfg.input(i);
    }
    if model_in.is_none() || a.sweep {
        describe_model(&mut cfg, &ecfg.model);
    }
    let grid = a.grid.clone().unwrap_or_else(eval::default_novelty_grid);
    if a.sweep {
        cfg.set(
            "grid",
            grid.iter().map(|g| fmt_f64(*g)).collect::<Vec<_>>().join(","),
        );
    }
    let mut run = RunDir::create(&ctx.out, cfg)?;

    let (report, records) = match (&model_in, &pred_in) {
        (Some(m), Some(p)) => {
            let fm = load_model(m)?;
            let records = parse_dump(&p.text)?;
            (report_from_records(&records, &fm, ecfg.aae_stabilizer)?, records)
        }
        (Some(m), None) => {
            let fm = load_model(m)?;
            let (naive, test) = held_out(&log, &fm, a.split)?;
            evaluate(&fm, &naive, &test, &ecfg)?
        }
        _ => {
            let out = eval::train_and_evaluate(&log, &ecfg)?;
            (out.report, out.records)
        }
    };
    let ci = if a.bootstrap > 0 {
        let ratios: Vec<f64> = records.iter().map(|r| r.loglik_model - r.loglik_naive).collect();
        // One-second blocks of whole frames keep within-frame correlation.
        let block = (log.header().frame_rate.round() as usize).max(1) * log.header().cell_count();
        Some(block_bootstrap_mean_ci(&ratios, block, a.bootstrap, 0.95, a.seed)?)
    } else {
        None
    };
    let text = report_text(&report, ci);
    say(&text);
    run.write("report.txt", &text)?;
    run.write("report.json", &report.to_json())?;
    if a.sweep {
        let points = novelty_sweep(&log, &ecfg, &grid)?;
        let table = sweep_to_table(&points);
        say(&table);
        run.write("sweep.txt", &table)?;
    }
    run.finish()
}

fn stats_text(label: &str, s: &DetectionStats, minutes: f64) -> String {
    format!(
        "{label} bumps={} detected={} anticipated={} false_alarms={} false_alarms_per_minute={} f1={}\n",
        s.bumps,
        s.detected,
        s.anticipated,
        s.false_alarms,
        fmt_f64(s.false_alarms as f64 / minutes.max(f64::MIN_POSITIVE)),
        fmt_f64(s.f1())
    )
}

pub fn collide(ctx: &Ctx, a: &CollideArgs) -> Result<PathBuf> {
    let log_in = Input::read("log", &a.log)?;
    let model_in = a.model.as_deref().map(|p| Input::read("model", p)).transpose()?;
    let cal_in: Vec<Input> = a.calibrate.iter().map(|p| Input::read("calibrate", p)).collect::<Result<_>>()?;
    let test_in: Vec<Input> = a.test.iter().map(|p| Input::read("test", p)).collect::<Result<_>>()?;
    let log = load_log(&log_in)?;
    let credit = a.credit.apply(CreditConfig::for_frame_rate(log.header().frame_rate));
    credit.validate()?;
    let mcfg = a.model_args.apply(collision::default_model_config());

    let mut cfg = RunConfig::new("collide");
    cfg.input(&log_in).set("lead", a.lead);
    for i in model_in.iter().chain(&cal_in).chain(&test_in) {
        cfg.input(i);
    }
    describe_credit(&mut cfg, &credit);
    if model_in.is_none() {
        describe_model(&mut cfg, &mcfg);
    }
    let mut run = RunDir::create(&ctx.out, cfg)?;

    let mut fm = match &model_in {
        Some(m) => load_model(m)?,
        None => {
            mcfg.validate()?;
            let pairs = make_pairs(&log, mcfg.horizon, &mcfg.layout);
            ForwardModel::fit(&mcfg, &pairs, log.header().shape())?
        }
    };
    let mut trace = collision::replay(&mut fm, &log, &credit, true)?;
    let mut threshold = credit.alarm_threshold;
    let mut summary = String::new();
    if !cal_in.is_empty() && a.credit.threshold.is_none() {
        let mut traces: Vec<(CollisionTrace, Vec<usize>)> = Vec::new();
        for i in &cal_in {
            let l = load_log(i)?;
            let t = collision::replay(&mut fm.clone(), &l, &credit, false)?;
            traces.push((t, collision::static_onsets(&l)?));
        }
        let refs: Vec<(&CollisionTrace, Vec<usize>)> = traces.iter().map(|(t, e)| (t, e.clone())).collect();
        let (th, f1) = collision::calibrate_threshold(&refs, credit.window)?;
        threshold = th;
        let _ = writeln!(summary, "calibrated_threshold={} calibration_f1={}", fmt_f64(th), fmt_f64(f1));
    }
    trace = trace.with_threshold(threshold);
    if threshold.is_finite() {
        let minutes = log.duration_seconds() / 60.0;
        let s = collision::detection_stats(&trace, credit.window, a.lead, &collision::static_onsets(&log)?);
        summary.push_str(&stats_text("replay", &s, minutes));
        for (k, i) in test_in.iter().enumerate() {
            let l = load_log(i)?;
            let t = collision::replay(&mut fm.clone(), &l, &credit, false)?.with_threshold(threshold);
            let s = collision::detection_stats(&t, credit.window, a.lead, &collision::static_onsets(&l)?);
            summary.push_str(&stats_text(&format!("test{k}"), &s, l.duration_seconds() / 60.0));
            run.write(&format!("trace-test{k}.txt"), &t.to_text())?;
        }
    }
    say(&summary);
    run.write("trace.txt", &trace.to_text())?;
    run.write("model.txt", &fm.to_text())?;
    run.write("summary.txt", &summary)?;
    run.finish()
}

pub fn pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<PathBuf> {
    check_split(a.split)?;
    let mut cfg = RunConfig::new("pipeline");
    cfg.set("seed", a.seed)
        .set("duration", fmt_f64(a.duration))
        .set("episodes", a.episodes)
        .set("max_delay", a.max_delay)
        .set("split", fmt_f64(a.split))
        .set("sweep", a.sweep);
    let eval_model = a.model.apply(ForwardModelConfig::default());
    describe_model(&mut cfg, &eval_model);
    let credit_base = a.credit.apply(CreditConfig::default());
    describe_credit(&mut cfg, &credit_base);
    let mut run = RunDir::create(&ctx.out, cfg)?;
    let stage_ctx = Ctx {
        out: run.path().join("stages"),
        exec: ctx.exec,
    };

    let sim = |preset: Preset, seed: u64, duration: Option<f64>, episodes: Option<usize>| {
        simulate(
            &stage_ctx,
            &SimulateArgs {
                scenario: None,
                preset,
                seed: Some(seed),
                duration,
                delay: None,
                episodes,
            },
        )
        .map(|d| d.join("log.txt"))
    };
    let wander = sim(Preset::Wander, a.seed, Some(a.duration), None)?;
    let wander_val = sim(Preset::Wander, a.seed + 1, Some(a.duration), None)?;
    let bumps_train = sim(Preset::Approach, a.seed + 2, None, Some(a.episodes))?;
    let bumps_val = sim(Preset::Approach, a.seed + 3, None, Some(a.episodes))?;
    let bumps_test = sim(Preset::Approach, a.seed + 4, None, Some(a.episodes))?;

    let align_dir = align(
        &stage_ctx,
        &AlignArgs {
            log: wander.clone(),
            max_delay: a.max_delay,
            split: None,
        },
    )?;
    let delay: usize = std::fs::read_to_string(align_dir.join("delay.txt"))?
        .trim()
        .parse()
        .context("reading the estimated delay")?;

    let train_dir = train(
        &stage_ctx,
        &TrainArgs {
            log: wander.clone(),
            delay,
            split: a.split,
            report_every: 100,
            rolling: 1000,
            verbose: false,
            model: a.model.clone(),
        },
    )?;
    let eval_dir = eval(
        &stage_ctx,
        &EvalArgs {
            log: wander.clone(),
            model: Some(train_dir.join("model.txt")),
            predictions: None,
            delay,
            split: a.split,
            sweep: false,
            grid: None,
            bootstrap: 1000,
            seed: a.seed,
            model_args: a.model.clone(),
        },
    )?;
    let sweep_dir = if a.sweep {
        Some(eval(
            &stage_ctx,
            &EvalArgs {
                log: wander.clone(),
                model: None,
                predictions: None,
                delay,
                split: a.split,
                sweep: true,
                grid: None,
                bootstrap: 0,
                seed: a.seed,
                model_args: a.model.clone(),
            },
        )?)
    } else {
        None
    };
    let collide_dir = collide(
        &stage_ctx,
        &CollideArgs {
            log: bumps_train,
            model: None,
            calibrate: vec![bumps_val, wander_val],
            test: vec![bumps_test, wander.clone()],
            lead: 15,
            credit: a.credit.clone(),
            model_args: Default::default(),
        },
    )?;

    let mut summary = String::new();
    let _ = writeln!(summary, "estimated_delay={delay}");
    summary.push_str(&std::fs::read_to_string(eval_dir.join("report.txt"))?);
    if let Some(d) = &sweep_dir {
        summary.push_str(&std::fs::read_to_string(d.join("sweep.txt"))?);
    }
    summary.push_str(&std::fs::read_to_string(collide_dir.join("summary.txt"))?);
    let stages = [
        ("align", &align_dir),
        ("train", &train_dir),
        ("eval", &eval_dir),
        ("collide", &collide_dir),
    ];
    for (name, dir) in stages {
        let rel = dir.strip_prefix(run.path()).unwrap_or(dir);
        let _ = writeln!(summary, "stage {name} {}", rel.display());
    }
    say(&summary);
    run.write("summary.txt", &summary)?;
    run.finish()
}
