//! Prediction metrics against the constant-flow baseline, the action
//! ablation, and raw conditional-distribution exports.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{ForwardModel, ForwardModelConfig, PredictionRecord};
use crate::par::Execution;
use crate::sensorimotor::{make_pairs, ActionKind, TrainingPair};
use crate::stream_log::StreamLog;
use crate::textio::fmt_f64;

pub const DEFAULT_AAE_STABILIZER: f64 = 1.0;

/// The constant-flow predictor: the future flow equals the current one.
pub fn naive_predict(_flow: [f64; 2]) -> [f64; 2] {
    [0.0, 0.0]
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::InsufficientData("no pairs to score".into()));
    }
    Ok(())
}

/// Average end-point error.
pub fn aepe(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let total: f64 = pred.iter().zip(truth).map(|(p, t)| end_point_error(p, t)).sum();
    Ok(total / pred.len() as f64)
}

pub fn end_point_error(p: &[f64; 2], t: &[f64; 2]) -> f64 {
    (p[0] - t[0]).hypot(p[1] - t[1])
}

/// Angle between `(u, v, s)` homogeneous vectors.
pub fn angular_error(p: &[f64; 2], t: &[f64; 2], stabilizer: f64) -> f64 {
    let a = [p[0], p[1], stabilizer];
    let b = [t[0], t[1], stabilizer];
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    cn.atan2(dot)
}

/// Average angular error with the given stabilizer.
pub fn aae(pred: &[[f64; 2]], truth: &[[f64; 2]], stabilizer: f64) -> Result<f64> {
    if !(stabilizer > 0.0) {
        return Err(Error::InvalidConfig("AAE stabilizer must be positive".into()));
    }
    check_lengths(pred.len(), truth.len())?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| angular_error(p, t, stabilizer))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Zero-mean isotropic Gaussian over the flow change; the density that goes
/// with the constant-flow point prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveDensity {
    /// Per-axis variance.
    pub variance: f64,
}

impl NaiveDensity {
    /// Maximum-likelihood fit: half the mean squared delta magnitude.
    pub fn fit(pairs: &[TrainingPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InsufficientData("cannot fit naive density on no pairs".into()));
        }
        let ms: f64 =
            pairs.iter().map(|p| p.y[0] * p.y[0] + p.y[1] * p.y[1]).sum::<f64>() / pairs.len() as f64;
        Self::new(ms / 2.0)
    }

    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InsufficientData(format!(
                "naive variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self { variance })
    }

    pub fn log_density(&self, y: &[f64; 2]) -> f64 {
        -(2.0 * PI * self.variance).ln() - (y[0] * y[0] + y[1] * y[1]) / (2.0 * self.variance)
    }
}

/// Per-pair `log p_model(y|x) - log p_naive(y)`.
pub fn loglik_ratios(
    fm: &ForwardModel,
    naive: &NaiveDensity,
    pairs: &[TrainingPair],
    exec: Execution,
) -> Result<Vec<f64>> {
    let set = fm.prediction_set()?;
    exec.try_map(pairs, |p| {
        Ok(fm.posterior_predictive_loglik_in(&p.x, &p.y, &set)? - naive.log_density(&p.y))
    })
}

pub fn loglik_ratio(fm: &ForwardModel, naive: &NaiveDensity, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs to score".into()));
    }
    let r = loglik_ratios(fm, naive, pairs, Execution::Parallel)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Percentile confidence interval for a mean from a moving-block bootstrap.
/// Blocks keep neighbouring (correlated) samples together.
pub fn block_bootstrap_mean_ci(
    values: &[f64],
    block: usize,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::InsufficientData("bootstrap needs values and resamples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig("confidence level must lie in (0, 1)".into()));
    }
    let n = values.len();
    let block = block.clamp(1, n);
    let starts = n - block + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut sum, mut count) = (0.0, 0usize);
        while count < n {
            let s = rng.random_range(0..starts);
            for v in &values[s..(s + block).min(s + n - count)] {
                sum += v;
                count += 1;
            }
        }
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * resamples as f64).floor() as usize).min(resamples - 1)];
    let tail = (1.0 - level) / 2.0;
    Ok((q(tail), q(1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aepe_model: f64,
    pub aepe_naive: f64,
    pub relative_reduction: f64,
    pub aae_model: f64,
    pub aae_naive: f64,
    pub mean_loglik_ratio: f64,
    pub n_pairs: usize,
    pub component_count: usize,
    pub mass_in_prediction_set: f64,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<24}{v}");
        };
        line("aepe_model", fmt_f64(self.aepe_model));
        line("aepe_naive", fmt_f64(self.aepe_naive));
        line("relative_reduction", fmt_f64(self.relative_reduction));
        line("aae_model", fmt_f64(self.aae_model));
        line("aae_naive", fmt_f64(self.aae_naive));
        line("mean_loglik_ratio", fmt_f64(self.mean_loglik_ratio));
        line("n_pairs", self.n_pairs.to_string());
        line("component_count", self.component_count.to_string());
        line("mass_in_prediction_set", fmt_f64(self.mass_in_prediction_set));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: ForwardModelConfig,
    /// Leading fraction of frames used for training.
    pub train_fraction: f64,
    pub aae_stabilizer: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: ForwardModelConfig::default(),
            train_fraction: 0.7,
            aae_stabilizer: DEFAULT_AAE_STABILIZER,
            execution: Execution::Parallel,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "train fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if !(self.aae_stabilizer > 0.0) {
            return Err(Error::InvalidConfig("AAE stabilizer must be positive".into()));
        }
        Ok(())
    }
}

/// Splits pairs at a frame boundary: the first `fraction` of target frames
/// train, the rest evaluate. Pairs must be in `make_pairs` order.
pub fn temporal_split(
    pairs: &[TrainingPair],
    cells: usize,
    fraction: f64,
) -> Result<(&[TrainingPair], &[TrainingPair])> {
    let cells = cells.max(1);
    let frames = pairs.len() / cells;
    let cut = ((frames as f64 * fraction).floor() as usize) * cells;
    if cut == 0 || cut >= pairs.len() {
        return Err(Error::InsufficientData(format!(
            "{} pairs cannot be split {fraction} / {}",
            pairs.len(),
            1.0 - fraction
        )));
    }
    Ok(pairs.split_at(cut))
}

/// Scores a trained model on `pairs`.
pub fn evaluate(
    fm: &ForwardModel,
    naive: &NaiveDensity,
    pairs: &[TrainingPair],
    cfg: &EvalConfig,
) -> Result<(MetricReport, Vec<PredictionRecord>)> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no evaluation pairs".into()));
    }
    let set = fm.prediction_set()?;
    let records = cfg.execution.try_map(pairs, |p| -> Result<PredictionRecord> {
        let c = fm.predict_cell_in(&p.x, &set)?;
        Ok(PredictionRecord {
            t: p.t,
            cell: p.cell,
            predicted: c.delta,
            truth: p.y,
            component: c.component,
            posterior: c.posterior,
            loglik_model: fm.posterior_predictive_loglik_in(&p.x, &p.y, &set)?,
            loglik_naive: naive.log_density(&p.y),
            x: p.x.clone(),
        })
    })?;
    let report = report_from_records(&records, fm, cfg.aae_stabilizer)?;
    Ok((report, records))
}

/// Builds a report from an existing prediction dump.
pub fn report_from_records(
    records: &[PredictionRecord],
    fm: &ForwardModel,
    stabilizer: f64,
) -> Result<MetricReport> {
    let pred: Vec<[f64; 2]> = records.iter().map(|r| r.predicted).collect();
    let truth: Vec<[f64; 2]> = records.iter().map(|r| r.truth).collect();
    let zeros: Vec<[f64; 2]> = records.iter().map(|r| naive_predict(r.truth)).collect();
    let aepe_model = aepe(&pred, &truth)?;
    let aepe_naive = aepe(&zeros, &truth)?;
    let relative_reduction = if aepe_naive > 0.0 {
        1.0 - aepe_model / aepe_naive
    } else {
        0.0
    };
    let mean_loglik_ratio = records
        .iter()
        .map(|r| r.loglik_model - r.loglik_naive)
        .sum::<f64>()
        / records.len() as f64;
    let set = fm.prediction_set()?;
    let mix = fm.mixture();
    let mass_in_prediction_set =
        set.iter().map(|&j| mix.component(j).mass()).sum::<f64>() / mix.total_mass();
    Ok(MetricReport {
        aepe_model,
        aepe_naive,
        relative_reduction,
        aae_model: aae(&pred, &truth, stabilizer)?,
        aae_naive: aae(&zeros, &truth, stabilizer)?,
        mean_loglik_ratio,
        n_pairs: records.len(),
        component_count: mix.len(),
        mass_in_prediction_set,
    })
}

/// Model, report and held-out predictions of one train/evaluate run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: ForwardModel,
    pub naive: NaiveDensity,
    pub report: MetricReport,
    pub records: Vec<PredictionRecord>,
}

/// Trains on the leading part of `log` and evaluates on the rest.
pub fn train_and_evaluate(log: &StreamLog, cfg: &EvalConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let pairs = make_pairs(log, cfg.model.horizon, &cfg.model.layout);
    let (train, test) = temporal_split(&pairs, log.header().cell_count(), cfg.train_fraction)?;
    let model = ForwardModel::fit(&cfg.model, train, log.header().shape())?;
    let naive = NaiveDensity::fit(train)?;
    let (report, records) = evaluate(&model, &naive, test, cfg)?;
    Ok(RunOutcome {
        model,
        naive,
        report,
        records,
    })
}

/// One arm of the action ablation at horizon `horizon`.
pub fn ablation_run(
    log: &StreamLog,
    horizon: usize,
    with_action: bool,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let mut c = cfg.clone();
    c.model.horizon = horizon;
    c.model.layout.use_action = with_action;
    Ok(train_and_evaluate(log, &c)?.report)
}

/// Novelty distances for the component-count sweep.
pub fn default_novelty_grid() -> Vec<f64> {
    (0..6).map(|i| 1.5 + 0.5 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub novelty_distance: f64,
    pub with_action: MetricReport,
    pub without_action: MetricReport,
}

/// Runs both ablation arms at every novelty distance.
pub fn novelty_sweep(log: &StreamLog, cfg: &EvalConfig, grid: &[f64]) -> Result<Vec<SweepPoint>> {
    let horizon = cfg.model.horizon;
    grid.iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.model.novelty_distance = d;
            Ok(SweepPoint {
                novelty_distance: d,
                with_action: ablation_run(log, horizon, true, &c)?,
                without_action: ablation_run(log, horizon, false, &c)?,
            })
        })
        .collect()
}

pub fn sweep_to_table(points: &[SweepPoint]) -> String {
    let mut s = String::from(
        "# novelty_distance components_action reduction_action loglik_ratio_action components_no_action reduction_no_action loglik_ratio_no_action\n",
    );
    for p in points {
        let (a, n) = (&p.with_action, &p.without_action);
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            fmt_f64(p.novelty_distance),
            a.component_count,
            fmt_f64(a.relative_reduction),
            fmt_f64(a.mean_loglik_ratio),
            n.component_count,
            fmt_f64(n.relative_reduction),
            fmt_f64(n.mean_loglik_ratio)
        );
    }
    s
}

/// A rectangle of current-flow space, optionally restricted to one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRegion {
    pub id: String,
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub cell: Option<(usize, usize)>,
}

impl FlowRegion {
    pub fn everywhere(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            u: (f64::NEG_INFINITY, f64::INFINITY),
            v: (f64::NEG_INFINITY, f64::INFINITY),
            cell: None,
        }
    }

    /// Half-open in both axes so adjacent rectangles partition the plane.
    pub fn contains(&self, cell: (usize, usize), u: f64, v: f64) -> bool {
        self.cell.is_none_or(|c| c == cell)
            && u >= self.u.0
            && u < self.u.1
            && v >= self.v.0
            && v < self.v.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub region: String,
    pub horizon: usize,
    pub action: ActionKind,
    pub du: f64,
    pub dv: f64,
}

/// Flow changes over each horizon for every (frame, cell) whose current flow
/// lies in a region, labelled with the action issued at the current frame.
pub fn export_distributions(
    log: &StreamLog,
    regions: &[FlowRegion],
    horizons: &[usize],
) -> Result<Vec<DistributionRow>> {
    if horizons.contains(&0) {
        return Err(Error::InvalidConfig("horizons must be >= 1".into()));
    }
    let frames = log.frames();
    let (rows, cols) = log.header().shape();
    let mut out = Vec::new();
    for region in regions {
        for &h in horizons {
            for t in 0..frames.len().saturating_sub(h) {
                let (src, dst) = (&frames[t], &frames[t + h]);
                for r in 0..rows {
                    for c in 0..cols {
                        let a = src.flow.get(r, c);
                        if !region.contains((r, c), a.u, a.v) {
                            continue;
                        }
                        let b = dst.flow.get(r, c);
                        out.push(DistributionRow {
                            region: region.id.clone(),
                            horizon: h,
                            action: src.action.kind,
                            du: b.u - a.u,
                            dv: b.v - a.v,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn distributions_to_tsv(rows: &[DistributionRow]) -> String {
    let mut s = String::from("region\thorizon\taction\tdu\tdv\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.region,
            r.horizon,
            r.action,
            fmt_f64(r.du),
            fmt_f64(r.dv)
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCluster {
    pub action: ActionKind,
    pub count: usize,
    pub centroid: [f64; 2],
    /// Per-axis RMS deviation from the centroid.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    pub clusters: Vec<ActionCluster>,
    /// Smallest centroid distance over action pairs, divided by the larger
    /// of the two within-action stds.
    pub min_separation_ratio: f64,
    /// Largest centroid distance over action pairs, divided by the std of
    /// the pooled sample.
    pub max_separation_to_pooled: f64,
    pub pooled_std: f64,
}

fn centroid_and_std(points: &[[f64; 2]]) -> ([f64; 2], f64) {
    let n = points.len() as f64;
    let c = [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let ss: f64 = points
        .iter()
        .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
        .sum();
    (c, (ss / (2.0 * n)).sqrt())
}

/// Per-action cluster statistics of exported rows. Actions with fewer than
/// `min_count` rows are ignored; `None` when fewer than two actions remain.
pub fn action_separation(rows: &[DistributionRow], min_count: usize) -> Option<SeparationStats> {
    let mut groups: BTreeMap<ActionKind, Vec<[f64; 2]>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.action).or_default().push([r.du, r.dv]);
    }
    let clusters: Vec<ActionCluster> = groups
        .into_iter()
        .filter(|(_, pts)| pts.len() >= min_count.max(1))
        .map(|(action, pts)| {
            let (centroid, std) = centroid_and_std(&pts);
            ActionCluster {
                action,
                count: pts.len(),
                centroid,
                std,
            }
        })
        .collect();
    if clusters.len() < 2 {
        return None;
    }
    let pooled: Vec<[f64; 2]> = rows
        .iter()
        .filter(|r| clusters.iter().any(|c| c.action == r.action))
        .map(|r| [r.du, r.dv])
        .collect();
    let (_, pooled_std) = centroid_and_std(&pooled);
    let mut min_ratio = f64::INFINITY;
    let mut max_dist = 0.0f64;
    for (i, a) in clusters.iter().enumerate() {
        for b in &clusters[i + 1..] {
            let d = end_point_error(&a.centroid, &b.centroid);
            min_ratio = min_ratio.min(d / a.std.max(b.std));
            max_dist = max_dist.max(d);
        }
    }
    Some(SeparationStats {
        clusters,
        min_separation_ratio: min_ratio,
        max_separation_to_pooled: max_dist / pooled_std,
        pooled_std,
    })
}

/// Hartigan's dip statistic of a sample (sorted internally). Ranges from
/// `1/(2n)` for an evenly spread sample up to 1/4.
pub fn dip_statistic(values: &[f64]) -> f64 {
    let mut x: Vec<f64> = values.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n < 2 || x[0] == x[n - 1] {
        return if n == 0 { 0.0 } else { 1.0 / (2.0 * n as f64) };
    }
    // 1-based indexing keeps the index arithmetic of the classic algorithm.
    let x: Vec<f64> = std::iter::once(f64::NAN).chain(x).collect();
    let xf = |i: usize| x[i];

    // Change-point links of the greatest convex minorant and the least
    // concave majorant of the empirical distribution.
    let mut mn = vec![0usize; n + 1];
    mn[1] = 1;
    for j in 2..=n {
        mn[j] = j - 1;
        loop {
            let a = mn[j];
            let b = mn[a];
            if a == 1 || (xf(j) - xf(a)) * ((a - b) as f64) < (xf(a) - xf(b)) * ((j - a) as f64) {
                break;
            }
            mn[j] = b;
        }
    }
    let mut mj = vec![0usize; n + 1];
    mj[n] = n;
    for k in (1..n).rev() {
        mj[k] = k + 1;
        loop {
            let a = mj[k];
            let b = mj[a];
            if a == n || (xf(k) - xf(a)) * (a as f64 - b as f64) < (xf(a) - xf(b)) * (k as f64 - a as f64)
            {
                break;
            }
            mj[k] = b;
        }
    }

    // Distances are kept in units of 1/(2n) until the end.
    let mut dip = 1.0f64;
    let (mut low, mut high) = (1usize, n);
    let mut gcm = vec![0usize; n + 2];
    let mut lcm = vec![0usize; n + 2];
    loop {
        gcm[1] = high;
        let mut i = 1;
        while gcm[i] > low {
            gcm[i + 1] = mn[gcm[i]];
            i += 1;
        }
        let l_gcm = i;
        let mut ig = l_gcm;
        let mut ix = ig - 1;

        lcm[1] = low;
        let mut i = 1;
        while lcm[i] < high {
            lcm[i + 1] = mj[lcm[i]];
            i += 1;
        }
        let l_lcm = i;
        let mut ih = l_lcm;
        let mut iv = 2;

        let mut d = 0.0f64;
        if l_gcm != 2 || l_lcm != 2 {
            loop {
                let gix = gcm[ix];
                let liv = lcm[iv];
                if gix > liv {
                    let g1 = gcm[ix + 1];
                    let dx = (liv as f64 - g1 as f64 + 1.0)
                        - (xf(liv) - xf(g1)) * (gix as f64 - g1 as f64) / (xf(gix) - xf(g1));
                    iv += 1;
                    if dx >= d {
                        d = dx;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    let l1 = lcm[iv - 1];
                    let dx = (xf(gix) - xf(l1)) * (liv as f64 - l1 as f64) / (xf(liv) - xf(l1))
                        - (gix as f64 - l1 as f64 - 1.0);
                    ix -= 1;
                    if dx >= d {
                        d = dx;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                ix = ix.max(1);
                iv = iv.min(l_lcm);
                if gcm[ix] == lcm[iv] {
                    break;
                }
            }
        } else {
            d = 1.0;
        }
        if d < dip {
            break;
        }

        let mut dip_l = 0.0f64;
        for j in ig..l_gcm {
            let (jb, je) = (gcm[j + 1], gcm[j]);
            let mut max_t = 1.0f64;
            if je - jb > 1 && xf(je) != xf(jb) {
                let c = (je - jb) as f64 / (xf(je) - xf(jb));
                for jj in jb..=je {
                    max_t = max_t.max((jj - jb + 1) as f64 - (xf(jj) - xf(jb)) * c);
                }
            }
            dip_l = dip_l.max(max_t);
        }
        let mut dip_u = 0.0f64;
        for j in ih..l_lcm {
            let (jb, je) = (lcm[j], lcm[j + 1]);
            let mut max_t = 1.0f64;
            if je - jb > 1 && xf(je) != xf(jb) {
                let c = (je - jb) as f64 / (xf(je) - xf(jb));
                for jj in jb..=je {
                    max_t = max_t.max((xf(jj) - xf(jb)) * c - (jj as f64 - jb as f64 - 1.0));
                }
            }
            dip_u = dip_u.max(max_t);
        }
        dip = dip.max(dip_l.max(dip_u));

        if low == gcm[ig] && high == lcm[ih] {
            break;
        }
        low = gcm[ig];
        high = lcm[ih];
    }
    dip / (2.0 * n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipTest {
    pub dip: f64,
    /// Monte Carlo p-value against uniform samples of the same size.
    pub p_value: f64,
}

/// Dip test of unimodality, calibrated by simulating the uniform null.
pub fn dip_test(values: &[f64], simulations: usize, seed: u64) -> Result<DipTest> {
    if values.len() < 4 {
        return Err(Error::InsufficientData("dip test needs at least 4 values".into()));
    }
    if simulations == 0 {
        return Err(Error::InvalidConfig("dip test needs simulations".into()));
    }
    let dip = dip_statistic(values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; values.len()];
    let mut exceed = 0usize;
    for _ in 0..simulations {
        for b in buf.iter_mut() {
            *b = rng.random::<f64>();
        }
        if dip_statistic(&buf) >= dip {
            exceed += 1;
        }
    }
    Ok(DipTest {
        dip,
        p_value: (exceed + 1) as f64 / (simulations + 1) as f64,
    })
}

/// Projects 2-D rows onto the principal axis of their pooled covariance.
pub fn principal_projection(rows: &[DistributionRow]) -> Vec<f64> {
    if rows.is_empty() {
        return Vec::new();
    }
    let n = rows.len() as f64;
    let mu = [
        rows.iter().map(|r| r.du).sum::<f64>() / n,
        rows.iter().map(|r| r.dv).sum::<f64>() / n,
    ];
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for r in rows {
        let (x, y) = (r.du - mu[0], r.dv - mu[1]);
        a += x * x;
        b += x * y;
        c += y * y;
    }
    // Leading eigenvector of [[a, b], [b, c]].
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    rows.iter().map(|r| r.du * co + r.dv * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn aepe_three_four_five() {
        assert_eq!(aepe(&[[3.0, 4.0]], &[[0.0, 0.0]]).unwrap(), 5.0);
        assert_eq!(aepe(&[[1.0, 2.0]], &[[1.0, 2.0]]).unwrap(), 0.0);
        assert!(aepe(&[[0.0, 0.0]], &[]).is_err());
        assert!(aepe(&[], &[]).is_err());
    }

    #[test]
    fn aae_hand_values() {
        assert_relative_eq!(
            aae(&[[1.0, 0.0]], &[[0.0, 1.0]], 1.0).unwrap(),
            PI / 3.0,
            epsilon = 1e-12
        );
        assert_eq!(aae(&[[2.0, -1.0]], &[[2.0, -1.0]], 1.0).unwrap(), 0.0);
        assert!(aae(&[[1.0, 0.0]], &[[0.0, 1.0]], 1e6).unwrap() < 2e-6);
        assert!(aae(&[[1.0, 0.0]], &[[0.0, 1.0]], 0.0).is_err());
    }

    #[test]
    fn naive_density_fit_and_value() {
        let pair = |y: [f64; 2]| TrainingPair {
            x: vec![0.0, 0.0],
            y,
            cell: (0, 0),
            target: 0,
            t: 0,
        };
        let n = NaiveDensity::fit(&[pair([3.0, 4.0]), pair([0.0, 0.0])]).unwrap();
        assert_relative_eq!(n.variance, 6.25, epsilon = 1e-15);
        let want = -(2.0 * PI * 6.25f64).ln() - 25.0 / 12.5;
        assert_relative_eq!(n.log_density(&[3.0, 4.0]), want, epsilon = 1e-14);
        assert!(NaiveDensity::fit(&[pair([0.0, 0.0])]).is_err());
    }

    #[test]
    fn bootstrap_brackets_mean_and_is_deterministic() {
        let v: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let (lo, hi) = block_bootstrap_mean_ci(&v, 10, 400, 0.95, 3).unwrap();
        assert!(lo < mean && mean < hi, "{lo} {mean} {hi}");
        assert_eq!((lo, hi), block_bootstrap_mean_ci(&v, 10, 400, 0.95, 3).unwrap());
        let c = vec![2.5; 50];
        assert_eq!(block_bootstrap_mean_ci(&c, 5, 50, 0.9, 0).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn region_edges_are_half_open() {
        let r = FlowRegion {
            id: "a".into(),
            u: (0.0, 1.0),
            v: (0.0, 1.0),
            cell: Some((1, 2)),
        };
        assert!(r.contains((1, 2), 0.0, 0.5));
        assert!(!r.contains((1, 2), 1.0, 0.5));
        assert!(!r.contains((0, 0), 0.5, 0.5));
        assert!(FlowRegion::everywhere("all").contains((3, 3), -1e9, 1e9));
    }

    #[test]
    fn separation_of_two_tight_clusters() {
        let mk = |action, du: f64| DistributionRow {
            region: "r".into(),
            horizon: 10,
            action,
            du,
            dv: 0.0,
        };
        let mut rows = Vec::new();
        for i in 0..20 {
            let e = if i % 2 == 0 { 0.1 } else { -0.1 };
            rows.push(mk(ActionKind::Forward, 5.0 + e));
            rows.push(mk(ActionKind::Backward, -5.0 + e));
        }
        rows.push(mk(ActionKind::Stop, 0.0));
        let s = action_separation(&rows, 5).unwrap();
        assert_eq!(s.clusters.len(), 2);
        assert_relative_eq!(s.clusters[0].std, 0.1 / 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s.min_separation_ratio, 10.0 / (0.1 / 2f64.sqrt()), epsilon = 1e-9);
        assert!(action_separation(&rows[..1], 1).is_none());
    }

    #[test]
    fn dip_of_even_sample_is_minimal() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        assert_relative_eq!(dip_statistic(&x), 1.0 / 100.0, epsilon = 1e-12);
        assert_relative_eq!(dip_statistic(&[3.0, 3.0, 3.0]), 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn dip_separates_one_and_two_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let one: Vec<f64> = (0..300).map(|_| rng.sample(normal)).collect();
        let two: Vec<f64> = (0..300)
            .map(|i| rng.sample(normal) + if i % 2 == 0 { -4.0 } else { 4.0 })
            .collect();
        let t1 = dip_test(&one, 200, 1).unwrap();
        let t2 = dip_test(&two, 200, 1).unwrap();
        assert!(t1.p_value > 0.05, "{t1:?}");
        assert!(t2.p_value < 0.01, "{t2:?}");
        assert!(t2.dip > 2.0 * t1.dip);
    }
}
