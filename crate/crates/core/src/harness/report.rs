//! Result rows, timing summaries, and CSV emission.

use std::io::Write;

use crate::engine::TrialRecord;
use crate::error::Result;
use crate::harness::metrics::mean_std;

pub const RESULTS_HEADER: [&str; 10] = [
    "subject",
    "repeat",
    "mode",
    "accuracy",
    "balanced_accuracy",
    "auc",
    "mean_pre_ms",
    "worst_pre_ms",
    "mean_post_ms",
    "worst_post_ms",
];

/// Per-stage wall-clock statistics over a stream, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingSummary {
    pub n_trials: usize,
    pub mean_pre_ms: f64,
    pub worst_pre_ms: f64,
    pub mean_post_ms: f64,
    pub worst_post_ms: f64,
    pub mean_align_ms: f64,
    pub mean_inference_ms: f64,
    pub mean_ensemble_ms: f64,
    pub worst_align_ms: f64,
    pub worst_inference_ms: f64,
    pub worst_ensemble_ms: f64,
}

pub fn timing_report(records: &[TrialRecord]) -> TimingSummary {
    if records.is_empty() {
        return TimingSummary::default();
    }
    let n = records.len() as f64;
    let mut s = TimingSummary {
        n_trials: records.len(),
        ..TimingSummary::default()
    };
    for r in records {
        let t = &r.timing;
        s.mean_pre_ms += t.pre_ms() / n;
        s.mean_post_ms += t.post_ms() / n;
        s.mean_align_ms += t.align_ms / n;
        s.mean_inference_ms += t.inference_ms / n;
        s.mean_ensemble_ms += t.ensemble_ms / n;
        s.worst_pre_ms = s.worst_pre_ms.max(t.pre_ms());
        s.worst_post_ms = s.worst_post_ms.max(t.post_ms());
        s.worst_align_ms = s.worst_align_ms.max(t.align_ms);
        s.worst_inference_ms = s.worst_inference_ms.max(t.inference_ms);
        s.worst_ensemble_ms = s.worst_ensemble_ms.max(t.ensemble_ms);
    }
    s
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub subject: String,
    /// Repeat index, or `mean` / `std` on aggregate rows.
    pub repeat: String,
    pub mode: String,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub timing: Option<TimingSummary>,
}

impl ResultRow {
    /// A row whose metrics do not apply.
    pub fn not_applicable(subject: &str, repeat: &str, mode: &str) -> Self {
        Self {
            subject: subject.into(),
            repeat: repeat.into(),
            mode: mode.into(),
            accuracy: None,
            balanced_accuracy: None,
            auc: None,
            timing: None,
        }
    }

    fn fields(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let ms = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.3}"));
        let t = self.timing;
        vec![
            self.subject.clone(),
            self.repeat.clone(),
            self.mode.clone(),
            num(self.accuracy),
            num(self.balanced_accuracy),
            num(self.auc),
            ms(t.map(|t| t.mean_pre_ms)),
            ms(t.map(|t| t.worst_pre_ms)),
            ms(t.map(|t| t.mean_post_ms)),
            ms(t.map(|t| t.worst_post_ms)),
        ]
    }
}

/// Results table with aggregate rows appended per mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    /// Distinct modes in first-appearance order.
    pub fn modes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.mode) {
                out.push(r.mode.clone());
            }
        }
        out
    }

    /// Per-run rows of `mode` (aggregate rows excluded).
    pub fn runs<'a>(&'a self, mode: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.mode == mode && r.repeat != "mean" && r.repeat != "std")
    }

    /// Per-repeat averages over subjects, one value per repeat.
    pub fn repeat_means(&self, mode: &str, metric: fn(&ResultRow) -> Option<f64>) -> Vec<f64> {
        let mut repeats: Vec<String> = Vec::new();
        for r in self.runs(mode) {
            if !repeats.contains(&r.repeat) {
                repeats.push(r.repeat.clone());
            }
        }
        repeats
            .iter()
            .filter_map(|rep| {
                let vals: Vec<f64> = self
                    .runs(mode)
                    .filter(|r| &r.repeat == rep)
                    .filter_map(metric)
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Mean of `metric` over every run of `mode`.
    pub fn mean(&self, mode: &str, metric: fn(&ResultRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.runs(mode).filter_map(metric).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Appends, per subject and mode, the mean and std over repeats, then
    /// `all` rows holding the mean and std of the per-repeat subject averages.
    pub fn with_aggregates(mut self) -> Self {
        let mut extra = Vec::new();
        for mode in self.modes() {
            let mut subjects: Vec<String> = Vec::new();
            for r in self.runs(&mode) {
                if !subjects.contains(&r.subject) {
                    subjects.push(r.subject.clone());
                }
            }
            if subjects.is_empty() {
                extra.push(ResultRow::not_applicable("all", "mean", &mode));
                extra.push(ResultRow::not_applicable("all", "std", &mode));
                continue;
            }
            for s in &subjects {
                let runs: Vec<&ResultRow> = self.runs(&mode).filter(|r| &r.subject == s).collect();
                let [mean, std] = aggregate(s, &mode, &runs);
                extra.push(mean);
                extra.push(std);
            }
            let mut per_repeat = Vec::new();
            let metrics: [fn(&ResultRow) -> Option<f64>; 3] =
                [|r| r.accuracy, |r| r.balanced_accuracy, |r| r.auc];
            let series: Vec<Vec<f64>> = metrics.iter().map(|m| self.repeat_means(&mode, *m)).collect();
            let stats: Vec<Option<(f64, f64)>> = series
                .iter()
                .map(|v| (!v.is_empty()).then(|| mean_std(v)))
                .collect();
            for (label, pick) in [("mean", 0usize), ("std", 1usize)] {
                let get = |i: usize| stats[i].map(|(m, s)| if pick == 0 { m } else { s });
                per_repeat.push(ResultRow {
                    subject: "all".into(),
                    repeat: label.into(),
                    mode: mode.clone(),
                    accuracy: get(0),
                    balanced_accuracy: get(1),
                    auc: get(2),
                    timing: None,
                });
            }
            extra.extend(per_repeat);
        }
        self.rows.extend(extra);
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RESULTS_HEADER)?;
        for r in &self.rows {
            out.write_record(r.fields())?;
        }
        out.flush()?;
        Ok(())
    }
}

fn aggregate(subject: &str, mode: &str, runs: &[&ResultRow]) -> [ResultRow; 2] {
    let stat = |metric: fn(&ResultRow) -> Option<f64>| {
        let v: Vec<f64> = runs.iter().filter_map(|r| metric(r)).collect();
        (!v.is_empty()).then(|| mean_std(&v))
    };
    let acc = stat(|r| r.accuracy);
    let bal = stat(|r| r.balanced_accuracy);
    let auc = stat(|r| r.auc);
    let timings: Vec<TimingSummary> = runs.iter().filter_map(|r| r.timing).collect();
    let timing = (!timings.is_empty()).then(|| {
        let n = timings.len() as f64;
        TimingSummary {
            n_trials: timings.iter().map(|t| t.n_trials).sum(),
            mean_pre_ms: timings.iter().map(|t| t.mean_pre_ms).sum::<f64>() / n,
            worst_pre_ms: timings.iter().map(|t| t.worst_pre_ms).fold(0.0, f64::max),
            mean_post_ms: timings.iter().map(|t| t.mean_post_ms).sum::<f64>() / n,
            worst_post_ms: timings.iter().map(|t| t.worst_post_ms).fold(0.0, f64::max),
            ..TimingSummary::default()
        }
    });
    let row = |repeat: &str, pick: fn((f64, f64)) -> f64, timing| ResultRow {
        subject: subject.into(),
        repeat: repeat.into(),
        mode: mode.into(),
        accuracy: acc.map(pick),
        balanced_accuracy: bal.map(pick),
        auc: auc.map(pick),
        timing,
    };
    [row("mean", |(m, _)| m, timing), row("std", |(_, s)| s, None)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(subject: &str, repeat: usize, acc: f64) -> ResultRow {
        ResultRow {
            subject: subject.into(),
            repeat: repeat.to_string(),
            mode: "m".into(),
            accuracy: Some(acc),
            balanced_accuracy: Some(acc),
            auc: None,
            timing: None,
        }
    }

    #[test]
    fn aggregates_over_repeats_and_subjects() {
        let mut t = ResultTable::default();
        for (s, r, a) in [("a", 0, 0.6), ("b", 0, 0.8), ("a", 1, 0.7), ("b", 1, 0.9)] {
            t.push(run(s, r, a));
        }
        let t = t.with_aggregates();
        let find = |s: &str, r: &str| t.rows.iter().find(|x| x.subject == s && x.repeat == r).unwrap();
        assert!((find("a", "mean").accuracy.unwrap() - 0.65).abs() < 1e-12);
        assert!((find("all", "mean").accuracy.unwrap() - 0.75).abs() < 1e-12);
        // per-repeat means are 0.7 and 0.8
        assert!((find("all", "std").accuracy.unwrap() - 0.05f64.hypot(0.05)).abs() < 1e-12);
        assert_eq!(find("all", "mean").auc, None);
    }

    #[test]
    fn csv_has_header_and_blank_timing() {
        let mut t = ResultTable::default();
        t.push(run("s1", 0, 0.5));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "s1,0,m,0.500000,0.500000,NA,,,,");
    }
}
