//! Per-image metric rows, per-method aggregates, CSV and plain-text output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::dataprep::Image;
use crate::error::{Error, Result};
use crate::eval::metrics::{psnr_roi, ssim_roi, Psnr, RoiMask, SsimConfig};
use crate::util::write_atomic;

/// A named denoiser.
pub struct Method<'a> {
    pub name: String,
    pub run: Box<dyn Fn(&Image) -> Result<Image> + Sync + 'a>,
}

impl<'a> Method<'a> {
    pub fn new(name: impl Into<String>, run: impl Fn(&Image) -> Result<Image> + Sync + 'a) -> Self {
        Method {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

/// One evaluation pair: the noisy input and its clean reference.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub noisy: Image,
    pub clean: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Scored { psnr: Psnr, ssim: f64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub image_id: String,
    pub method: String,
    pub outcome: RowOutcome,
    pub time_s: f64,
}

impl ReportRow {
    pub fn psnr(&self) -> Option<Psnr> {
        match self.outcome {
            RowOutcome::Scored { psnr, .. } => Some(psnr),
            RowOutcome::Failed(_) => None,
        }
    }

    pub fn ssim(&self) -> Option<f64> {
        match self.outcome {
            RowOutcome::Scored { ssim, .. } => Some(ssim),
            RowOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    /// Mean over rows with a finite PSNR; `None` if there are none.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_time_s: f64,
    pub finite_rows: usize,
    pub identical_rows: usize,
    pub failed_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<MethodSummary>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ssim: SsimConfig,
    pub peak: f64,
    pub roi: Option<RoiMask>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ssim: SsimConfig::default(),
            peak: 1.0,
            roi: None,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Runs every method on every pair, sequentially so each timing is a
/// single-call wall time. A failing call is recorded on its row and the
/// remaining rows are still produced.
pub fn evaluate_report(
    pairs: &[EvalPair],
    methods: &[Method<'_>],
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Input("evaluation needs at least one image pair".into()));
    }
    if methods.is_empty() {
        return Err(Error::Input("evaluation needs at least one method".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len() * methods.len());
    for method in methods {
        for pair in pairs {
            let start = Instant::now();
            let result = (method.run)(&pair.noisy);
            let time_s = start.elapsed().as_secs_f64();
            let outcome = result
                .and_then(|out| {
                    let psnr = psnr_roi(&out, &pair.clean, options.peak, options.roi.as_ref())?;
                    let ssim = ssim_roi(&out, &pair.clean, &options.ssim, options.roi.as_ref())?;
                    Ok(RowOutcome::Scored { psnr, ssim })
                })
                .unwrap_or_else(|e| RowOutcome::Failed(e.to_string()));
            rows.push(ReportRow {
                image_id: pair.id.clone(),
                method: method.name.clone(),
                outcome,
                time_s,
            });
        }
    }
    let summaries = methods
        .iter()
        .map(|m| summarize(&m.name, rows.iter().filter(|r| r.method == m.name)))
        .collect();
    Ok(MetricsReport { rows, summaries })
}

fn summarize<'r>(method: &str, rows: impl Iterator<Item = &'r ReportRow> + Clone) -> MethodSummary {
    let finite = || rows.clone().filter_map(|r| r.psnr().and_then(Psnr::db));
    MethodSummary {
        method: method.to_string(),
        mean_psnr: mean(finite()),
        mean_ssim: mean(rows.clone().filter_map(ReportRow::ssim)),
        mean_time_s: mean(rows.clone().map(|r| r.time_s)).unwrap_or(0.0),
        finite_rows: finite().count(),
        identical_rows: rows
            .clone()
            .filter(|r| r.psnr() == Some(Psnr::Identical))
            .count(),
        failed_rows: rows.filter(|r| r.psnr().is_none()).count(),
    }
}

impl MetricsReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// `image_id,method,psnr_db,ssim,time_s`. Identical-image rows carry
    /// `inf` and failed rows leave both metrics empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,method,psnr_db,ssim,time_s\n");
        for r in &self.rows {
            let (p, s) = match &r.outcome {
                RowOutcome::Scored { psnr: Psnr::Db(p), ssim } => (format!("{p:.6}"), format!("{ssim:.6}")),
                RowOutcome::Scored { psnr: Psnr::Identical, ssim } => ("inf".into(), format!("{ssim:.6}")),
                RowOutcome::Failed(_) => (String::new(), String::new()),
            };
            writeln!(out, "{},{},{p},{s},{:.6}", r.image_id, r.method, r.time_s).unwrap();
        }
        out
    }

    /// Methods down the side, mean PSNR / SSIM / time across.
    pub fn to_table(&self) -> String {
        let width = self
            .summaries
            .iter()
            .map(|s| s.method.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        let mut out = format!(
            "{:<width$}  {:>10}  {:>8}  {:>10}  {:>5}\n",
            "Method", "PSNR (dB)", "SSIM", "Time (s)", "Rows"
        );
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
        for s in &self.summaries {
            writeln!(
                out,
                "{:<width$}  {:>10}  {:>8}  {:>10.4}  {:>5}",
                s.method,
                opt(s.mean_psnr, 2),
                opt(s.mean_ssim, 4),
                s.mean_time_s,
                s.finite_rows + s.identical_rows + s.failed_rows
            )
            .unwrap();
        }
        for r in &self.rows {
            if let RowOutcome::Failed(e) = &r.outcome {
                writeln!(out, "failed: {} / {}: {e}", r.image_id, r.method).unwrap();
            }
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.txt`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_atomic(&stem.with_extension("csv"), self.to_csv().as_bytes())?;
        write_atomic(&stem.with_extension("txt"), self.to_table().as_bytes())
    }
}

/// The candidate with the highest mean PSNR of `run(noisy, param)` against
/// the clean references. Ties keep the earliest candidate.
pub fn sweep_best<P: Copy + Sync>(
    pairs: &[EvalPair],
    candidates: &[P],
    peak: f64,
    run: impl Fn(&Image, P) -> Result<Image> + Sync,
) -> Result<(P, f64)> {
    let mut best: Option<(P, f64)> = None;
    for &p in candidates {
        let mut total = 0.0;
        for pair in pairs {
            let out = run(&pair.noisy, p)?;
            total += match crate::eval::metrics::psnr(&out, &pair.clean, peak)? {
                Psnr::Db(v) => v,
                Psnr::Identical => f64::INFINITY,
            };
        }
        let m = total / pairs.len() as f64;
        if best.map_or(true, |(_, b)| m > b) {
            best = Some((p, m));
        }
    }
    best.ok_or_else(|| Error::Input("parameter sweep needs at least one candidate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::psnr;

    fn pairs() -> Vec<EvalPair> {
        (0..3)
            .map(|i| {
                let clean = Image::from_fn(16, 16, |y, x| ((y * 16 + x + i) % 7) as f64 / 7.0);
                let noisy = clean.map(|v| (v + 0.05 * (i as f64 + 1.0)).min(1.0));
                EvalPair {
                    id: format!("img{i}"),
                    noisy,
                    clean,
                }
            })
            .collect()
    }

    #[test]
    fn identity_perfect_and_failing_methods() {
        let ps = pairs();
        let lookup = ps.clone();
        let methods = vec![
            Method::new("noisy", |img: &Image| Ok(img.clone())),
            Method::new("oracle", move |img: &Image| {
                Ok(lookup.iter().find(|p| &p.noisy == img).unwrap().clean.clone())
            }),
            Method::new("broken", |_: &Image| Err(Error::Input("nope".into()))),
        ];
        let report = evaluate_report(&ps, &methods, &EvalOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 9);

        let expected: Vec<f64> = ps
            .iter()
            .map(|p| psnr(&p.noisy, &p.clean, 1.0).unwrap().db().unwrap())
            .collect();
        for (row, e) in report.rows.iter().filter(|r| r.method == "noisy").zip(&expected) {
            assert_eq!(row.psnr().unwrap().db().unwrap(), *e);
        }
        let s = report.summary("noisy").unwrap();
        let recomputed = expected.iter().sum::<f64>() / expected.len() as f64;
        assert!((s.mean_psnr.unwrap() - recomputed).abs() < 1e-12);

        let o = report.summary("oracle").unwrap();
        assert_eq!((o.identical_rows, o.finite_rows, o.mean_psnr), (3, 0, None));
        assert_eq!(report.summary("broken").unwrap().failed_rows, 3);

        let csv = report.to_csv();
        assert!(csv.starts_with("image_id,method,psnr_db,ssim,time_s\n"));
        assert_eq!(csv.lines().count(), 10);
        assert!(report.to_table().contains("failed: img0 / broken"));
    }

    #[test]
    fn sweep_picks_best() {
        let ps = pairs();
        let (best, _) = sweep_best(&ps, &[0.3, 0.0, 0.1], 1.0, |img, s| Ok(img.map(|v| v + s))).unwrap();
        assert_eq!(best, 0.0);
    }
}
