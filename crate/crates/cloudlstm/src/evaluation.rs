//! Forecast quality metrics (MAE, RMSE, PSNR, SSIM) and the copy-last-frame
//! skill baseline.
//!
//! All metrics run over value features only. The SSIM variant used here is
//! not the classical one: its denominator squares the prediction mean term,
//! so a perfect forecast does not score 1.0. Statistics (mean, population
//! variance, covariance) are taken over all channels, points, and value
//! features of one frame, then averaged across evaluation instances.

use crate::dconv::ModelError;
use crate::pointcloud::PointCloudFrame;

/// SSIM regularizers: `c1 = (k1 L)^2`, `c2 = (k2 L)^2` with k1 = 0.1,
/// k2 = 0.3 and dynamic range L = 2.
pub const SSIM_C1: f64 = 0.04;
pub const SSIM_C2: f64 = 0.36;

/// PSNR ceiling for (near-)exact matches, keeping aggregates finite.
pub const PSNR_CAP_DB: f64 = 300.0;

fn check_match(op: &'static str, pred: &PointCloudFrame, truth: &PointCloudFrame) -> Result<(), ModelError> {
    if pred.values().shape() != truth.values().shape() {
        return Err(ModelError::Invalid {
            op,
            msg: format!(
                "value shapes differ: {:?} vs {:?}",
                pred.values().shape(),
                truth.values().shape()
            ),
        });
    }
    Ok(())
}

/// Mean absolute error and root mean square error over one frame pair.
pub fn mae_rmse(pred: &PointCloudFrame, truth: &PointCloudFrame) -> Result<(f64, f64), ModelError> {
    check_match("mae_rmse", pred, truth)?;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let n = pred.values().numel() as f64;
    for (a, b) in pred.values().data().iter().zip(truth.values().data()) {
        let d = a - b;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// Peak signal-to-noise ratio in dB: `20 log10(v_max) - 10 log10(MSE)`,
/// capped at [`PSNR_CAP_DB`]. `v_max` is the maximum value recorded over the
/// whole test set.
pub fn psnr(pred: &PointCloudFrame, truth: &PointCloudFrame, v_max: f64) -> Result<f64, ModelError> {
    check_match("psnr", pred, truth)?;
    let mut sq = 0.0;
    let n = pred.values().numel() as f64;
    for (a, b) in pred.values().data().iter().zip(truth.values().data()) {
        let d = a - b;
        sq += d * d;
    }
    let mse = sq / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * v_max.log10() - 10.0 * mse.log10()).min(PSNR_CAP_DB))
}

/// Structural similarity index of one frame pair:
///
/// ```text
///         (2 mu_pred mu_truth + c1) (2 cov + c2)
/// SSIM = -----------------------------------------------
///        (mu_pred^2 mu_truth^2 + c1) (var_t var_p + c2)
/// ```
pub fn ssim(pred: &PointCloudFrame, truth: &PointCloudFrame) -> Result<f64, ModelError> {
    check_match("ssim", pred, truth)?;
    let p = pred.values().data();
    let t = truth.values().data();
    let n = p.len() as f64;
    let mu_p: f64 = p.iter().sum::<f64>() / n;
    let mu_t: f64 = t.iter().sum::<f64>() / n;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    let mut cov = 0.0;
    for (a, b) in p.iter().zip(t) {
        var_p += (a - mu_p) * (a - mu_p);
        var_t += (b - mu_t) * (b - mu_t);
        cov += (a - mu_p) * (b - mu_t);
    }
    var_p /= n;
    var_t /= n;
    cov /= n;
    let numerator = (2.0 * mu_p * mu_t + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let denominator = (mu_p * mu_p * mu_t * mu_t + SSIM_C1) * (var_t * var_p + SSIM_C2);
    Ok(numerator / denominator)
}

/// Trivial skill floor: every forecast frame repeats the last history frame.
pub fn copy_last_baseline(history: &[PointCloudFrame], horizon: usize) -> Vec<PointCloudFrame> {
    let last = history.last().expect("history must be non-empty");
    let dt = if history.len() >= 2 {
        last.timestamp() - history[history.len() - 2].timestamp()
    } else {
        1
    };
    (0..horizon)
        .map(|j| last.clone().with_timestamp(last.timestamp() + dt * (j as i64 + 1)))
        .collect()
}

/// Mean and (population) standard deviation across evaluation instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
        }
    }

    fn fmt(&self) -> String {
        format!("{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    /// 1-based forecast step; 0 marks the all-step aggregate.
    pub step: usize,
    pub mae: MetricSummary,
    pub rmse: MetricSummary,
    pub psnr: MetricSummary,
    pub ssim: MetricSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMetrics {
    pub channel: String,
    pub mae: f64,
    pub rmse: f64,
}

/// Per-step and aggregate metrics of one forecaster over a window set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub v_max: f64,
    pub per_step: Vec<StepMetrics>,
    pub aggregate: StepMetrics,
    pub per_channel: Vec<ChannelMetrics>,
}

/// Evaluate prediction/truth sequences. `v_max` spans every truth value in
/// the set; instances are (window, step) pairs.
pub fn evaluate_predictions(
    runs: &[(Vec<PointCloudFrame>, &[PointCloudFrame])],
    channel_names: &[String],
) -> Result<MetricReport, ModelError> {
    assert!(!runs.is_empty(), "nothing to evaluate");
    let horizon = runs[0].1.len();
    let v_max = runs
        .iter()
        .flat_map(|(_, truth)| truth.iter())
        .flat_map(|frame| frame.values().data().iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);

    let mut per_step_values: Vec<[Vec<f64>; 4]> = (0..horizon)
        .map(|_| [Vec::new(), Vec::new(), Vec::new(), Vec::new()])
        .collect();
    // per-channel absolute/squared error accumulators
    let channels = channel_names.len();
    let mut ch_abs = vec![0.0f64; channels];
    let mut ch_sq = vec![0.0f64; channels];
    let mut ch_count = vec![0usize; channels];

    for (pred, truth) in runs {
        assert_eq!(pred.len(), truth.len(), "horizon mismatch");
        for (j, (p, t)) in pred.iter().zip(truth.iter()).enumerate() {
            let (mae, rmse) = mae_rmse(p, t)?;
            let ps = psnr(p, t, v_max)?;
            let ss = ssim(p, t)?;
            per_step_values[j][0].push(mae);
            per_step_values[j][1].push(rmse);
            per_step_values[j][2].push(ps);
            per_step_values[j][3].push(ss);
            let (u, n, h) = (t.channels(), t.n_points(), t.value_dim());
            for c in 0..u {
                for s in 0..n {
                    for f in 0..h {
                        let d = p.values().at(&[c, s, f]) - t.values().at(&[c, s, f]);
                        ch_abs[c] += d.abs();
                        ch_sq[c] += d * d;
                        ch_count[c] += 1;
                    }
                }
            }
        }
    }

    let summarize = |step: usize, vals: &[Vec<f64>; 4]| StepMetrics {
        step,
        mae: MetricSummary::from_values(&vals[0]),
        rmse: MetricSummary::from_values(&vals[1]),
        psnr: MetricSummary::from_values(&vals[2]),
        ssim: MetricSummary::from_values(&vals[3]),
    };
    let per_step: Vec<StepMetrics> = per_step_values
        .iter()
        .enumerate()
        .map(|(j, vals)| summarize(j + 1, vals))
        .collect();
    let mut all = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for vals in &per_step_values {
        for q in 0..4 {
            all[q].extend_from_slice(&vals[q]);
        }
    }
    let aggregate = summarize(0, &all);
    let per_channel = (0..channels)
        .map(|c| ChannelMetrics {
            channel: channel_names[c].clone(),
            mae: ch_abs[c] / ch_count[c] as f64,
            rmse: (ch_sq[c] / ch_count[c] as f64).sqrt(),
        })
        .collect();
    Ok(MetricReport {
        v_max,
        per_step,
        aggregate,
        per_channel,
    })
}

/// Metric report CSV: model rows per step, the aggregate, per-channel MAE and
/// RMSE, and one copy-last baseline aggregate row.
pub fn render_csv(model: &MetricReport, baseline: Option<&MetricReport>) -> String {
    let mut out = String::from(
        "section,step,channel,mae_mean,mae_std,rmse_mean,rmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std\n",
    );
    let mut row = |section: &str, step: Option<usize>, channel: &str, m: &StepMetrics| {
        let step = step.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{section},{step},{channel},{},{},{},{},{},{},{},{}\n",
            m.mae.mean,
            m.mae.std,
            m.rmse.mean,
            m.rmse.std,
            m.psnr.mean,
            m.psnr.std,
            m.ssim.mean,
            m.ssim.std
        ));
    };
    for step in &model.per_step {
        row("model_step", Some(step.step), "", step);
    }
    row("model_aggregate", None, "", &model.aggregate);
    if let Some(base) = baseline {
        row("baseline_aggregate", None, "", &base.aggregate);
    }
    for ch in &model.per_channel {
        out.push_str(&format!(
            "model_channel,,{},{},,{},,,,,\n",
            ch.channel, ch.mae, ch.rmse
        ));
    }
    out
}

/// Aligned plain-text table of aggregate metrics, one row per model.
pub fn render_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut out = format!(
        "{:<28} {:>16} {:>16} {:>16} {:>16}\n",
        "Model", "MAE", "RMSE", "PSNR", "SSIM"
    );
    for (name, report) in rows {
        let a = &report.aggregate;
        out.push_str(&format!(
            "{:<28} {:>16} {:>16} {:>16} {:>16}\n",
            name,
            a.mae.fmt(),
            a.rmse.fmt(),
            a.psnr.fmt(),
            a.ssim.fmt()
        ));
    }
    out
}
