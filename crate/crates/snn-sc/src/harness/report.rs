//! Turn a sweep CSV into per-variant series files and a human summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::experiment::{read_sweep_csv, SweepRow};
use crate::error::{Error, Result};

pub struct Report {
    pub series_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Sanity-check the sweep: non-empty, and every row ran the same number of
/// trials (mixed trial counts make the std columns incomparable).
pub fn validate_sweep(rows: &[SweepRow]) -> Result<()> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Format("sweep file has no data rows".into()))?;
    if rows.iter().any(|r| r.trials != first.trials) {
        return Err(Error::Format("inconsistent trial counts across sweep rows".into()));
    }
    if rows.iter().any(|r| r.trials == 0) {
        return Err(Error::Format("sweep rows with zero trials".into()));
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn generate_report(sweep_path: &Path, out_dir: &Path) -> Result<Report> {
    let rows = read_sweep_csv(sweep_path)?;
    validate_sweep(&rows)?;
    std::fs::create_dir_all(out_dir)?;

    // per-variant series, ordered by (channel, test_p)
    let mut by_variant: BTreeMap<String, Vec<&SweepRow>> = BTreeMap::new();
    for r in &rows {
        by_variant.entry(r.variant.clone()).or_default().push(r);
    }
    let mut series_files = Vec::new();
    for (variant, mut vr) in by_variant.iter_mut().map(|(k, v)| (k.clone(), v.clone())) {
        vr.sort_by(|a, b| {
            (a.channel.tag(), a.test_p)
                .partial_cmp(&(b.channel.tag(), b.test_p))
                .unwrap()
        });
        let mut text = String::from("channel,test_p,mean_acc,std_acc\n");
        for r in vr {
            text.push_str(&format!(
                "{},{:.4},{:.6},{:.6}\n",
                r.channel.tag(),
                r.test_p,
                r.mean_acc,
                r.std_acc
            ));
        }
        let path = out_dir.join(format!("series-{}.csv", sanitize(&variant)));
        std::fs::write(&path, text)?;
        series_files.push(path);
    }

    // summary: best variant per (channel, test_p)
    let mut by_point: BTreeMap<(String, String), Vec<&SweepRow>> = BTreeMap::new();
    for r in &rows {
        by_point
            .entry((r.channel.tag().to_string(), format!("{:.4}", r.test_p)))
            .or_default()
            .push(r);
    }
    let mut text = format!(
        "sweep summary ({} rows, {} variants, {} trials per point)\n\n",
        rows.len(),
        series_files.len(),
        rows[0].trials
    );
    for ((channel, test_p), mut pr) in by_point {
        pr.sort_by(|a, b| b.mean_acc.partial_cmp(&a.mean_acc).unwrap());
        let best = pr[0];
        text.push_str(&format!(
            "{channel} p={test_p}: best {} (acc {:.4} +/- {:.4}, {} bits/inference)\n",
            best.variant, best.mean_acc, best.std_acc, best.bits_per_inference
        ));
    }
    // headline comparison: does the spiking system dominate the CNN
    // baseline in the high-noise regime?
    if let Some(flag) = snn_beats_cnn_at_high_p(&rows, 0.2) {
        text.push_str(&format!(
            "\nsnn beats cnn at every p >= 0.2: {}\n",
            if flag { "yes" } else { "no" }
        ));
    }
    let summary_file = out_dir.join("summary.txt");
    std::fs::write(&summary_file, text)?;
    Ok(Report { series_files, summary_file, rows })
}

/// `Some(true)` if every snn-* row with test_p >= threshold is at least as
/// accurate as the cnn row at the same (channel, test_p); `None` when the
/// sweep lacks one of the two families.
pub fn snn_beats_cnn_at_high_p(rows: &[SweepRow], threshold: f64) -> Option<bool> {
    let snn: Vec<&SweepRow> = rows.iter().filter(|r| r.variant.starts_with("snn")).collect();
    let cnn: Vec<&SweepRow> = rows.iter().filter(|r| r.variant.starts_with("cnn")).collect();
    if snn.is_empty() || cnn.is_empty() {
        return None;
    }
    let mut compared = false;
    for s in &snn {
        if s.test_p < threshold {
            continue;
        }
        for c in cnn.iter().filter(|c| {
            c.channel == s.channel && (c.test_p - s.test_p).abs() < 1e-9
        }) {
            compared = true;
            if s.mean_acc < c.mean_acc {
                return Some(false);
            }
        }
    }
    compared.then_some(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;
    use crate::harness::experiment::write_sweep_csv;

    fn row(variant: &str, test_p: f64, mean: f64, trials: usize) -> SweepRow {
        SweepRow {
            variant: variant.into(),
            train_p: 0.1,
            channel: ChannelKind::Bsc,
            test_p,
            trials,
            mean_acc: mean,
            std_acc: 0.01,
            bits_per_inference: 64,
            compression_ratio: 512.0,
        }
    }

    #[test]
    fn report_writes_series_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = dir.path().join("sweep.csv");
        let rows = vec![
            row("snn-ihf", 0.0, 0.9, 3),
            row("snn-ihf", 0.25, 0.8, 3),
            row("cnn", 0.0, 0.85, 3),
            row("cnn", 0.25, 0.6, 3),
        ];
        write_sweep_csv(&sweep, &rows).unwrap();
        let out = dir.path().join("report");
        let report = generate_report(&sweep, &out).unwrap();
        assert_eq!(report.series_files.len(), 2);
        let summary = std::fs::read_to_string(&report.summary_file).unwrap();
        assert!(summary.contains("best snn-ihf"));
        assert!(summary.contains("snn beats cnn at every p >= 0.2"));
        let series = std::fs::read_to_string(out.join("series-cnn.csv")).unwrap();
        assert!(series.starts_with("channel,test_p,mean_acc,std_acc\n"));
        assert_eq!(series.lines().count(), 3);
    }

    #[test]
    fn mixed_trial_counts_are_rejected() {
        let rows = vec![row("a", 0.0, 0.9, 3), row("a", 0.1, 0.8, 5)];
        assert!(validate_sweep(&rows).is_err());
        assert!(validate_sweep(&[]).is_err());
        assert!(validate_sweep(&[row("a", 0.0, 0.9, 0)]).is_err());
    }
}
