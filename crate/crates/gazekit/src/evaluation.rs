//! Metrics and reports: angular error, coverage, uncertainty/error
//! correlation, cumulative error by uncertainty, and per-keypoint-count
//! breakdowns, plus model comparison tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetRecord, PredictionRecord, SkipReason};
use crate::features::build_feature_vector;
use crate::geom::estimate_gaze_geom;
use crate::network::ModelWeights;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("vector norm below 1e-12; angle undefined")]
    DegenerateVector,
}

/// Angle between two directions in degrees, in `[0, 180]`. The cosine is
/// clamped into `[-1, 1]` before `acos` so near-parallel vectors cannot
/// produce NaN from rounding.
pub fn angular_error(a: [f64; 2], b: [f64; 2]) -> Result<f64, EvalError> {
    let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Err(EvalError::DegenerateVector);
    }
    let cos = ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Pearson correlation; `None` when either variance is below 1e-18 or fewer
/// than two pairs are given.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "pearson_correlation requires equal lengths");
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx / nf < 1e-18 || syy / nf < 1e-18 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KBucket {
    pub count: usize,
    pub mean_error_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulativePoint {
    /// Uncertainty threshold (a distinct predicted sigma value).
    pub sigma: f64,
    /// Mean angular error over samples with sigma at or below the threshold.
    pub mean_error_deg: f64,
    /// Fraction of scored samples retained at this threshold.
    pub retained: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    /// Predicted direction angle `atan2(-g_y, g_x)`, degrees.
    pub alpha_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub error_deg: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct JoinStats {
    pub missing_labels: usize,
    pub missing_predictions: usize,
    pub example_missing_labels: Vec<String>,
    pub example_missing_predictions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Identifier of the evaluated predictor (arch tag, "geom", ...).
    pub model: String,
    /// Digest of the dataset file, when evaluated through the CLI.
    pub dataset_digest: String,
    pub n_total: usize,
    pub n_estimable: usize,
    pub coverage: f64,
    pub mean_error_deg: f64,
    pub per_k: BTreeMap<usize, KBucket>,
    /// Correlation between predicted uncertainty and angular error; absent
    /// when undefined (no uncertainties, fewer than two samples, or zero
    /// variance).
    pub pearson_rho: Option<f64>,
    /// True when the correlation is undefined because a variance vanished.
    pub rho_zero_variance: bool,
    pub cumulative: Vec<CumulativePoint>,
    pub scatter: Vec<ScatterRow>,
    pub skips: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinStats>,
}

/// What produces directions for evaluation.
pub enum Predictor<'a> {
    Net(&'a ModelWeights),
    Geom,
    /// A fixed direction for every sample (a floor any learned model must beat).
    Constant([f64; 2]),
}

impl Predictor<'_> {
    pub fn label(&self) -> String {
        match self {
            Predictor::Net(w) => w.arch_tag.clone(),
            Predictor::Geom => "geom".to_string(),
            Predictor::Constant(_) => "constant".to_string(),
        }
    }
}

struct ScoredRow {
    sigma: Option<f64>,
    error_deg: f64,
    alpha_deg: f64,
    k: usize,
}

/// Runs a predictor over labeled records and aggregates every metric.
pub fn evaluate(predictor: &Predictor, records: &[DatasetRecord]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut rows = Vec::new();
    let mut skips: BTreeMap<String, usize> = BTreeMap::new();
    let skip = |reason: SkipReason, skips: &mut BTreeMap<String, usize>| {
        *skips.entry(skip_name(reason)).or_insert(0) += 1;
    };

    for record in records {
        let label = match record.resolve_label() {
            Ok(Some(l)) => l,
            Ok(None) => {
                skip(SkipReason::MissingLabel, &mut skips);
                continue;
            }
            Err(e) => {
                skip(SkipReason::from_feature_error(&e), &mut skips);
                continue;
            }
        };
        let detections = match record.detections() {
            Ok(d) => d,
            Err(e) => {
                skip(SkipReason::from_feature_error(&e), &mut skips);
                continue;
            }
        };
        let k = detections.num_detected();
        let (g, sigma) = match predictor {
            Predictor::Net(weights) => {
                let features = match build_feature_vector(&detections) {
                    Ok(f) => f,
                    Err(e) => {
                        skip(SkipReason::from_feature_error(&e), &mut skips);
                        continue;
                    }
                };
                let p = weights.forward(&features).prediction;
                (p.g, Some(p.sigma))
            }
            Predictor::Geom => match estimate_gaze_geom(&detections) {
                Ok(e) => (e.gaze, None),
                Err(crate::geom::GeomError::MissingNose) => {
                    skip(SkipReason::MissingNose, &mut skips);
                    continue;
                }
                Err(crate::geom::GeomError::MissingEyes) => {
                    skip(SkipReason::MissingEyes, &mut skips);
                    continue;
                }
            },
            Predictor::Constant(v) => {
                if build_feature_vector(&detections).is_err() {
                    skip(SkipReason::TooFewKeypoints, &mut skips);
                    continue;
                }
                (*v, None)
            }
        };
        let error_deg = match angular_error(label.g, g) {
            Ok(e) => e,
            Err(_) => {
                skip(SkipReason::DegeneratePrediction, &mut skips);
                continue;
            }
        };
        rows.push(ScoredRow { sigma, error_deg, alpha_deg: (-g[1]).atan2(g[0]).to_degrees(), k });
    }
    Ok(aggregate(predictor.label(), records.len(), rows, skips, None))
}

/// Joins a prediction file against its dataset by `(camera, frame, person)`
/// and aggregates the same report. Unmatched keys on either side are counted
/// and listed, not fatal.
pub fn evaluate_predictions(
    predictions: &[PredictionRecord],
    records: &[DatasetRecord],
    model_label: &str,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut labels: BTreeMap<String, Option<crate::features::GazeLabel>> = BTreeMap::new();
    for r in records {
        labels.insert(r.key(), r.resolve_label().ok().flatten());
    }
    let mut join = JoinStats::default();
    let mut rows = Vec::new();
    let mut skips: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();

    for p in predictions {
        let key = p.key();
        seen.insert(key.clone());
        let Some(label) = labels.get(&key) else {
            join.missing_labels += 1;
            if join.example_missing_labels.len() < 8 {
                join.example_missing_labels.push(key);
            }
            continue;
        };
        if let Some(reason) = p.skip {
            *skips.entry(skip_name(reason)).or_insert(0) += 1;
            continue;
        }
        let Some(label) = label else {
            *skips.entry(skip_name(SkipReason::MissingLabel)).or_insert(0) += 1;
            continue;
        };
        let Some(g) = p.g.or(p.g_raw) else {
            *skips.entry(skip_name(SkipReason::DegeneratePrediction)).or_insert(0) += 1;
            continue;
        };
        let error_deg = match angular_error(label.g, g) {
            Ok(e) => e,
            Err(_) => {
                *skips.entry(skip_name(SkipReason::DegeneratePrediction)).or_insert(0) += 1;
                continue;
            }
        };
        rows.push(ScoredRow {
            sigma: p.sigma,
            error_deg,
            alpha_deg: (-g[1]).atan2(g[0]).to_degrees(),
            k: p.k,
        });
    }
    for key in labels.keys() {
        if !seen.contains(key) {
            join.missing_predictions += 1;
            if join.example_missing_predictions.len() < 8 {
                join.example_missing_predictions.push(key.clone());
            }
        }
    }
    Ok(aggregate(model_label.to_string(), predictions.len(), rows, skips, Some(join)))
}

fn skip_name(reason: SkipReason) -> String {
    serde_json::to_value(reason)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_else(|| format!("{reason:?}"))
}

fn aggregate(
    model: String,
    n_total: usize,
    rows: Vec<ScoredRow>,
    skips: BTreeMap<String, usize>,
    join: Option<JoinStats>,
) -> EvalReport {
    let n_estimable = rows.len();
    let mean_error_deg = if n_estimable > 0 {
        rows.iter().map(|r| r.error_deg).sum::<f64>() / n_estimable as f64
    } else {
        f64::NAN
    };

    let mut per_k: BTreeMap<usize, KBucket> = BTreeMap::new();
    for r in &rows {
        let b = per_k.entry(r.k).or_insert(KBucket { count: 0, mean_error_deg: 0.0 });
        b.count += 1;
        b.mean_error_deg += r.error_deg;
    }
    for b in per_k.values_mut() {
        b.mean_error_deg /= b.count as f64;
    }

    let with_sigma: Vec<(f64, f64)> =
        rows.iter().filter_map(|r| r.sigma.map(|s| (s, r.error_deg))).collect();
    let (pearson_rho, rho_zero_variance) = if with_sigma.len() >= 2 {
        let xs: Vec<f64> = with_sigma.iter().map(|(s, _)| *s).collect();
        let ys: Vec<f64> = with_sigma.iter().map(|(_, e)| *e).collect();
        match pearson_correlation(&xs, &ys) {
            Some(rho) => (Some(rho), false),
            None => (None, true),
        }
    } else {
        (None, false)
    };

    // Cumulative curve sampled at every distinct sigma, ascending.
    let mut cumulative = Vec::new();
    if !with_sigma.is_empty() {
        let mut sorted = with_sigma.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total = sorted.len() as f64;
        let mut running = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let sigma = sorted[i].0;
            while i < sorted.len() && sorted[i].0 == sigma {
                running += sorted[i].1;
                i += 1;
            }
            cumulative.push(CumulativePoint {
                sigma,
                mean_error_deg: running / i as f64,
                retained: i as f64 / total,
            });
        }
    }

    let scatter = rows
        .iter()
        .map(|r| ScatterRow { alpha_deg: r.alpha_deg, sigma: r.sigma, error_deg: r.error_deg, k: r.k })
        .collect();

    EvalReport {
        model,
        dataset_digest: String::new(),
        n_total,
        n_estimable,
        coverage: if n_total > 0 { n_estimable as f64 / n_total as f64 } else { 0.0 },
        mean_error_deg,
        per_k,
        pearson_rho,
        rho_zero_variance,
        cumulative,
        scatter,
        skips,
        join,
    }
}

/// Flat per-sample export of the scatter records (for external plotting).
pub fn scatter_csv(report: &EvalReport) -> String {
    let mut out = String::from("alpha_deg,sigma,error_deg,k\n");
    for r in &report.scatter {
        let sigma = r.sigma.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.alpha_deg, sigma, r.error_deg, r.k));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub model: String,
    pub n_total: usize,
    pub n_estimable: usize,
    pub coverage: f64,
    pub mean_error_deg: f64,
    pub pearson_rho: Option<f64>,
    pub dataset_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub n_reports: usize,
    pub mean_error_deg: f64,
    /// Sample standard deviation of the mean errors across reports.
    pub error_spread_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateRow>,
    /// Set when the input reports were computed on different datasets.
    pub dataset_mismatch: bool,
}

/// Builds a side-by-side table of evaluation reports, in input order, without
/// recomputing anything. With two or more reports an aggregate mean-and-spread
/// row is included (the multi-seed protocol).
pub fn compare_models(reports: &[EvalReport], labels: &[String]) -> Comparison {
    let rows: Vec<ComparisonRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| ComparisonRow {
            label: labels.get(i).cloned().unwrap_or_else(|| format!("report{i}")),
            model: r.model.clone(),
            n_total: r.n_total,
            n_estimable: r.n_estimable,
            coverage: r.coverage,
            mean_error_deg: r.mean_error_deg,
            pearson_rho: r.pearson_rho,
            dataset_digest: r.dataset_digest.clone(),
        })
        .collect();
    let digests: Vec<&String> =
        rows.iter().map(|r| &r.dataset_digest).filter(|d| !d.is_empty()).collect();
    let dataset_mismatch = digests.windows(2).any(|w| w[0] != w[1]);
    let aggregate = if rows.len() >= 2 {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.mean_error_deg).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r.mean_error_deg - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Some(AggregateRow {
            n_reports: rows.len(),
            mean_error_deg: mean,
            error_spread_deg: var.sqrt(),
        })
    } else {
        None
    };
    Comparison { rows, aggregate, dataset_mismatch }
}

pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:<24} {:>8} {:>10} {:>10} {:>12} {:>8}\n",
        "label", "model", "n", "estimable", "coverage", "mean err", "rho"
    ));
    for r in &c.rows {
        let rho = r.pearson_rho.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<16} {:<24} {:>8} {:>10} {:>9.1}% {:>11.2}\u{b0} {:>8}\n",
            r.label,
            r.model,
            r.n_total,
            r.n_estimable,
            100.0 * r.coverage,
            r.mean_error_deg,
            rho
        ));
    }
    if let Some(a) = &c.aggregate {
        out.push_str(&format!(
            "aggregate over {} reports: {:.2}\u{b0} \u{b1} {:.2}\u{b0}\n",
            a.n_reports, a.mean_error_deg, a.error_spread_deg
        ));
    }
    if c.dataset_mismatch {
        out.push_str("warning: reports were computed on different datasets\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabelAnnotation;

    #[test]
    fn angular_error_axes() {
        assert_eq!(angular_error([1.0, 0.0], [1.0, 0.0]).unwrap(), 0.0);
        assert!((angular_error([1.0, 0.0], [0.0, 1.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((angular_error([1.0, 0.0], [-1.0, 0.0]).unwrap() - 180.0).abs() < 1e-12);
        // Clamping keeps near-parallel vectors inside acos's domain.
        let e = angular_error([1.0, 0.0], [1.0, 1e-9]).unwrap();
        assert!(e < 1e-5, "{e}");
        assert!(matches!(
            angular_error([0.0, 0.0], [1.0, 0.0]),
            Err(EvalError::DegenerateVector)
        ));
    }

    #[test]
    fn angular_error_symmetry_and_scale() {
        let a = [0.3, -0.7];
        let b = [-0.9, 0.2];
        let e1 = angular_error(a, b).unwrap();
        let e2 = angular_error(b, a).unwrap();
        assert_eq!(e1, e2);
        let e3 = angular_error(a, [b[0] * 7.5, b[1] * 7.5]).unwrap();
        assert!((e1 - e3).abs() < 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson_correlation(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_correlation(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson_correlation(&xs, &[5.0; 4]), None);
        assert_eq!(pearson_correlation(&[1.0], &[1.0]), None);
    }

    fn report_from_rows(rows: Vec<ScoredRow>) -> EvalReport {
        let n = rows.len();
        aggregate("test".into(), n, rows, BTreeMap::new(), None)
    }

    #[test]
    fn hand_built_cumulative_and_rho() {
        let rows = vec![
            ScoredRow { sigma: Some(0.1), error_deg: 10.0, alpha_deg: 0.0, k: 5 },
            ScoredRow { sigma: Some(0.2), error_deg: 20.0, alpha_deg: 0.0, k: 4 },
            ScoredRow { sigma: Some(0.3), error_deg: 30.0, alpha_deg: 0.0, k: 2 },
        ];
        let r = report_from_rows(rows);
        assert!((r.pearson_rho.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.cumulative.len(), 3);
        let expect = [(0.1, 10.0, 1.0 / 3.0), (0.2, 15.0, 2.0 / 3.0), (0.3, 20.0, 1.0)];
        for (p, (s, e, f)) in r.cumulative.iter().zip(expect) {
            assert!((p.sigma - s).abs() < 1e-12);
            assert!((p.mean_error_deg - e).abs() < 1e-12);
            assert!((p.retained - f).abs() < 1e-12);
        }
        // Endpoint equals the overall mean.
        assert!((r.cumulative.last().unwrap().mean_error_deg - r.mean_error_deg).abs() < 1e-12);
        // Per-k buckets partition the samples.
        assert_eq!(r.per_k.values().map(|b| b.count).sum::<usize>(), r.n_estimable);
    }

    #[test]
    fn zero_variance_rho_is_flagged() {
        let rows = vec![
            ScoredRow { sigma: Some(0.5), error_deg: 0.0, alpha_deg: 0.0, k: 5 },
            ScoredRow { sigma: Some(0.5), error_deg: 0.0, alpha_deg: 0.0, k: 5 },
        ];
        let r = report_from_rows(rows);
        assert_eq!(r.pearson_rho, None);
        assert!(r.rho_zero_variance);
    }

    #[test]
    fn evaluate_joined_counts_mismatches() {
        let record = DatasetRecord {
            frame: "f0".into(),
            camera: "cam0".into(),
            person: "p0".into(),
            sequence: None,
            keypoints: [
                [100.0, 100.0, 0.9],
                [90.0, 88.0, 0.8],
                [110.0, 88.0, 0.8],
                [0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0],
            ],
            label: Some(LabelAnnotation::Gaze { vectors: vec![[0.0, 1.0]] }),
        };
        let hit = PredictionRecord {
            frame: "f0".into(),
            camera: "cam0".into(),
            person: "p0".into(),
            k: 3,
            g: Some([0.0, 1.0]),
            g_raw: None,
            sigma: Some(0.2),
            skip: None,
        };
        let orphan = PredictionRecord { frame: "f9".into(), ..hit.clone() };
        let report = evaluate_predictions(&[hit, orphan], &[record], "m").unwrap();
        assert_eq!(report.n_estimable, 1);
        assert_eq!(report.mean_error_deg, 0.0);
        let join = report.join.unwrap();
        assert_eq!(join.missing_labels, 1);
        assert_eq!(join.missing_predictions, 0);
        assert_eq!(join.example_missing_labels, vec!["cam0/f9/p0".to_string()]);
    }

    #[test]
    fn comparison_preserves_order_and_aggregates() {
        let mk = |err: f64| {
            let rows = vec![ScoredRow { sigma: None, error_deg: err, alpha_deg: 0.0, k: 4 }];
            report_from_rows(rows)
        };
        let reports = [mk(10.0), mk(20.0), mk(30.0)];
        let labels = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let c = compare_models(&reports, &labels);
        assert_eq!(c.rows[0].label, "a");
        assert_eq!(c.rows[2].mean_error_deg, 30.0);
        let agg = c.aggregate.unwrap();
        assert!((agg.mean_error_deg - 20.0).abs() < 1e-12);
        assert!((agg.error_spread_deg - 10.0).abs() < 1e-12);
        assert!(!c.dataset_mismatch);

        let mut mismatched = reports.to_vec();
        mismatched[0].dataset_digest = "aaa".into();
        mismatched[1].dataset_digest = "bbb".into();
        let c = compare_models(&mismatched, &labels);
        assert!(c.dataset_mismatch);
        let text = render_comparison(&c);
        assert!(text.contains("different datasets"));
    }

    #[test]
    fn scatter_csv_shape() {
        let rows = vec![
            ScoredRow { sigma: Some(0.1), error_deg: 10.0, alpha_deg: 45.0, k: 5 },
            ScoredRow { sigma: None, error_deg: 20.0, alpha_deg: -90.0, k: 2 },
        ];
        let csv = scatter_csv(&report_from_rows(rows));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "alpha_deg,sigma,error_deg,k");
        assert_eq!(lines[1], "45,0.1,10,5");
        assert_eq!(lines[2], "-90,,20,2");
    }
}
