//! Delimited tables and small SVG plots built from a training run.

use std::fmt::Write as _;

use crate::game::{CaseHistogram, CaseLabel};
use crate::trainer::{EvalRecord, Method, StepMetrics, TrainingRun};
use crate::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::Config(format!(
            "wilson interval for {successes} of {n}"
        )));
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes as f64 == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    Ok((lo, hi))
}

/// Number of correct submissions in a histogram.
pub fn correct_count(h: &CaseHistogram) -> usize {
    h.counts[CaseLabel::C1.index()]
        + h.counts[CaseLabel::C3.index()]
        + h.counts[CaseLabel::C5A.index()]
        + h.c2_revised_correct
}

/// Pooled proportion and population std of per-step proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStat {
    pub pooled: f64,
    pub std: f64,
    pub steps: usize,
}

pub fn window_stat(hists: &[&CaseHistogram], case: CaseLabel) -> Result<WindowStat> {
    let total: usize = hists.iter().map(|h| h.total).sum();
    if hists.is_empty() || total == 0 {
        return Err(Error::EmptyBatch);
    }
    let pooled = hists.iter().map(|h| h.counts[case.index()]).sum::<usize>() as f64 / total as f64;
    let rates: Vec<f64> = hists.iter().map(|h| h.rate(case)).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rates.len() as f64;
    Ok(WindowStat {
        pooled,
        std: var.sqrt(),
        steps: hists.len(),
    })
}

/// Cases shown in the before/after chart.
pub const CHART_CASES: [CaseLabel; 3] = [CaseLabel::C1, CaseLabel::C4, CaseLabel::C6A];

/// `(case, first window, last window)` over the training-batch histograms.
pub fn case_windows(
    metrics: &[StepMetrics],
    window: usize,
) -> Result<Vec<(CaseLabel, WindowStat, WindowStat)>> {
    if metrics.is_empty() {
        return Err(Error::Config("no training metrics to report".into()));
    }
    let w = window.max(1).min(metrics.len());
    let first: Vec<&CaseHistogram> = metrics[..w].iter().map(|m| &m.batch).collect();
    let last: Vec<&CaseHistogram> = metrics[metrics.len() - w..]
        .iter()
        .map(|m| &m.batch)
        .collect();
    CHART_CASES
        .into_iter()
        .map(|c| Ok((c, window_stat(&first, c)?, window_stat(&last, c)?)))
        .collect()
}

fn histogram_header() -> String {
    let mut s = String::from("total");
    for c in CaseLabel::ALL {
        write!(s, ",count_{}", c.key()).unwrap();
    }
    for c in CaseLabel::ALL {
        write!(s, ",rate_{}", c.key()).unwrap();
    }
    s + ",c2_revised_correct,correct,accuracy,wilson_lo,wilson_hi,sac_rate"
}

fn histogram_row(h: &CaseHistogram) -> Result<String> {
    let mut s = h.total.to_string();
    for c in CaseLabel::ALL {
        write!(s, ",{}", h.counts[c.index()]).unwrap();
    }
    for c in CaseLabel::ALL {
        write!(s, ",{:.10}", h.rate(c)).unwrap();
    }
    let k = correct_count(h);
    let (lo, hi) = wilson_interval(k, h.total, Z95)?;
    write!(
        s,
        ",{},{},{:.10},{:.10},{:.10},{:.10}",
        h.c2_revised_correct, k, h.accuracy, lo, hi, h.sac_rate
    )
    .unwrap();
    Ok(s)
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> Result<String> {
    let mut s = String::from(
        "step,eta,samples,loss_v,loss_f,kl_v,kl_f,sac_rate,groups_verifier,groups_action,groups_proposal,groups_revision,",
    );
    s += &histogram_header();
    s.push('\n');
    for m in metrics {
        writeln!(
            s,
            "{},{:.10},{},{:.10},{:.10},{:.10},{:.10},{:.10},{},{},{},{},{}",
            m.step,
            m.eta,
            m.samples,
            m.loss_v,
            m.loss_f,
            m.kl_v,
            m.kl_f,
            m.sac_rate,
            m.groups_verifier,
            m.groups_action,
            m.groups_proposal,
            m.groups_revision,
            histogram_row(&m.batch)?
        )
        .unwrap();
    }
    Ok(s)
}

pub fn eval_csv(method: Method, evals: &[EvalRecord]) -> Result<String> {
    let mut s = format!("method,step,samples_seen,split,{}\n", histogram_header());
    for e in evals {
        writeln!(
            s,
            "{},{},{},{},{}",
            method.name(),
            e.step,
            e.samples_seen,
            e.split,
            histogram_row(&e.histogram)?
        )
        .unwrap();
    }
    Ok(s)
}

pub fn case_windows_csv(rows: &[(CaseLabel, WindowStat, WindowStat)]) -> String {
    let mut s = String::from("case,window,steps,pooled,std\n");
    for (c, a, b) in rows {
        for (name, w) in [("first", a), ("last", b)] {
            writeln!(
                s,
                "{},{},{},{:.10},{:.10}",
                c.key(),
                name,
                w.steps,
                w.pooled,
                w.std
            )
            .unwrap();
        }
    }
    s
}

/// One point per test evaluation: samples seen, accuracy, Wilson bounds.
pub fn accuracy_points(run: &TrainingRun) -> Result<Vec<(usize, f64, f64, f64)>> {
    run.test_evals()
        .map(|e| {
            let (lo, hi) = wilson_interval(correct_count(&e.histogram), e.histogram.total, Z95)?;
            Ok((e.samples_seen, e.histogram.accuracy, lo, hi))
        })
        .collect()
}

pub fn accuracy_csv(points: &[(usize, f64, f64, f64)]) -> String {
    let mut s = String::from("samples_seen,accuracy,wilson_lo,wilson_hi\n");
    for (n, a, lo, hi) in points {
        writeln!(s, "{n},{a:.10},{lo:.10},{hi:.10}").unwrap();
    }
    s
}

/// Table-1-style columns.
pub const SUMMARY_HEADER: &str =
    "method,seed,step,samples_seen,c1_plus_c3,c4,c6a,train_a,train_b,train_c,test_accuracy,test_wilson_lo,test_wilson_hi";

pub fn summary_row(
    method: &str,
    seed: u64,
    step: usize,
    samples: usize,
    test: &CaseHistogram,
    train_diag: &[f64],
) -> Result<String> {
    let (lo, hi) = wilson_interval(correct_count(test), test.total, Z95)?;
    let diag = |i: usize| {
        train_diag
            .get(i)
            .map(|a| format!("{a:.10}"))
            .unwrap_or_default()
    };
    Ok(format!(
        "{method},{seed},{step},{samples},{:.10},{:.10},{:.10},{},{},{},{:.10},{lo:.10},{hi:.10}",
        test.rate(CaseLabel::C1) + test.rate(CaseLabel::C3),
        test.rate(CaseLabel::C4),
        test.rate(CaseLabel::C6A),
        diag(0),
        diag(1),
        diag(2),
        test.accuracy,
    ))
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - PAD,
        W - PAD / 2.0,
        H - PAD,
        H - PAD
    )
}

fn y_of(v: f64) -> f64 {
    H - PAD - v.clamp(0.0, 1.0) * (H - 2.0 * PAD)
}

fn y_ticks(s: &mut String) {
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.2}</text>",
            PAD - 4.0,
            y_of(v) + 3.0
        )
        .unwrap();
    }
}

/// Grouped before/after bars with ±1 std whiskers.
pub fn case_bars_svg(rows: &[(CaseLabel, WindowStat, WindowStat)]) -> String {
    let mut s = svg_open("case proportions, first vs last window");
    y_ticks(&mut s);
    let slot = (W - 1.5 * PAD) / rows.len().max(1) as f64;
    let bar = slot / 3.0;
    for (i, (c, a, b)) in rows.iter().enumerate() {
        let x0 = PAD + i as f64 * slot + bar / 2.0;
        for (j, (w, fill)) in [(a, "#9e9e9e"), (b, "#1f77b4")].into_iter().enumerate() {
            let x = x0 + j as f64 * bar;
            let y = y_of(w.pooled);
            writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
                H - PAD - y
            )
            .unwrap();
            let cx = x + bar / 2.0;
            writeln!(
                s,
                "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                y_of(w.pooled - w.std),
                y_of(w.pooled + w.std)
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            x0 + bar,
            H - PAD + 16.0,
            c.key()
        )
        .unwrap();
    }
    s + "</svg>\n"
}

/// Accuracy against samples seen with a shaded Wilson band.
pub fn accuracy_svg(points: &[(usize, f64, f64, f64)]) -> String {
    let mut s = svg_open("test accuracy vs training samples");
    y_ticks(&mut s);
    let max_n = points.iter().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let x_of = |n: usize| PAD + n as f64 / max_n * (W - 1.5 * PAD);
    if !points.is_empty() {
        let upper = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.0), y_of(p.3)));
        let lower = points
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", x_of(p.0), y_of(p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        writeln!(
            s,
            "<polygon points=\"{}\" fill=\"#1f77b4\" fill-opacity=\"0.2\"/>",
            band.join(" ")
        )
        .unwrap();
        let line: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.0), y_of(p.1)))
            .collect();
        writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
            line.join(" ")
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
        W - PAD / 2.0,
        H - PAD + 16.0,
        max_n as usize
    )
    .unwrap();
    s + "</svg>\n"
}

/// Interpolated-time curves, one polyline per series of `(t, value)`.
pub fn lines_svg(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let mut s = svg_open(title);
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut t_max, mut lo, mut hi) = (1e-12f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(t, v) in all {
        t_max = t_max.max(t);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return s + "</svg>\n";
    }
    let span = (hi - lo).max(1e-12);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];
    for (i, (name, pts)) in series.iter().enumerate() {
        let line: Vec<String> = pts
            .iter()
            .map(|&(t, v)| {
                format!(
                    "{:.2},{:.2}",
                    PAD + t / t_max * (W - 1.5 * PAD),
                    y_of((v - lo) / span)
                )
            })
            .collect();
        let color = colors[i % colors.len()];
        writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"/>",
            line.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{color}\">{name}</text>",
            PAD + 6.0,
            PAD + 12.0 * i as f64
        )
        .unwrap();
    }
    s + "</svg>\n"
}
