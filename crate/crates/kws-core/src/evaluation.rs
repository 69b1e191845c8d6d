//! Test-set accuracy, confusion statistics, per-keyword ROC sweeps, and the
//! five-trial confidence interval.

use crate::audio::FeatureMatrix;
use crate::dataset::{LabelSpace, KEYWORDS, N_CLASSES};
use crate::error::{Error, Result};
use crate::models::{batch_to_tensor, Model};
use serde::Serialize;

/// Threshold grid step for ROC sweeps.
pub const ROC_GRID_STEP: f64 = 0.005;

/// Two-sided 97.5% Student t quantiles for 1..=9 degrees of freedom.
const T_QUANTILES: [f64; 9] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262,
];

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Run the model over the whole set in eval mode, `batch_size` examples at a
/// time, returning one 12-class probability row per example.
pub fn score_all(
    model: &mut Model,
    features: &[FeatureMatrix],
    batch_size: usize,
) -> Result<Vec<[f32; N_CLASSES]>> {
    assert!(batch_size > 0);
    let mut rows = Vec::with_capacity(features.len());
    for chunk in features.chunks(batch_size) {
        let refs: Vec<&FeatureMatrix> = chunk.iter().collect();
        let probs = model.forward_eval(&batch_to_tensor(&refs)?)?;
        for r in 0..chunk.len() {
            let mut row = [0.0f32; N_CLASSES];
            row.copy_from_slice(&probs.data[r * N_CLASSES..(r + 1) * N_CLASSES]);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Fraction of examples whose argmax (lowest-index tie-break) matches the
/// label.
pub fn accuracy(probs: &[[f32; N_CLASSES]], labels: &[usize]) -> Result<f64> {
    check_scores(probs, labels)?;
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(row, &l)| argmax_lowest(&row[..]) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn check_scores(probs: &[[f32; N_CLASSES]], labels: &[usize]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            detail: format!("{} score rows for {} labels", probs.len(), labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= N_CLASSES) {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            detail: format!("label {bad} out of range 0..{N_CLASSES}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassStats {
    pub label: String,
    pub support: u64,
    /// None when the class was never predicted / never present.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub accuracy: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassStats>,
    pub roc: RocSet,
}

pub fn evaluate(probs: &[[f32; N_CLASSES]], labels: &[usize]) -> Result<EvalReport> {
    check_scores(probs, labels)?;
    let mut confusion = vec![vec![0u64; N_CLASSES]; N_CLASSES];
    for (row, &l) in probs.iter().zip(labels) {
        confusion[l][argmax_lowest(&row[..])] += 1;
    }
    let trace: u64 = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    let per_class = (0..N_CLASSES)
        .map(|c| {
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            ClassStats {
                label: LabelSpace::label_name(c).to_string(),
                support,
                precision: (predicted > 0).then(|| confusion[c][c] as f64 / predicted as f64),
                recall: (support > 0).then(|| confusion[c][c] as f64 / support as f64),
            }
        })
        .collect();
    Ok(EvalReport {
        n_examples: labels.len(),
        accuracy: trace as f64 / labels.len() as f64,
        confusion,
        per_class,
        roc: roc_sweep(probs, labels)?,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Area under the FRR-vs-FAR curve over FAR in [0,1]; lower is better.
    pub auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RocSet {
    /// (keyword index, curve) for every keyword present in the labels.
    pub per_keyword: Vec<(usize, RocCurve)>,
    /// Keyword indices absent from the labels, excluded from the sweep.
    pub excluded: Vec<usize>,
    /// Vertical average: mean FRR across keywords at each FAR grid value.
    pub averaged: RocCurve,
}

fn threshold_grid() -> Vec<f64> {
    let n = (1.0 / ROC_GRID_STEP).round() as usize;
    // [0, 1] in ROC_GRID_STEP increments plus one closing threshold above 1
    // so every curve ends exactly at (FAR, FRR) = (0, 1)
    (0..=n + 1).map(|i| i as f64 * ROC_GRID_STEP).collect()
}

/// Area under the FRR-vs-FAR polyline by the trapezoid rule. Points may be
/// given in any order that is monotone in FAR after reversal; they are
/// sorted ascending by FAR here.
fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    for pair in pts.windows(2) {
        let ((f0, r0), (f1, r1)) = (pair[0], pair[1]);
        area += (f1 - f0) * (r0 + r1) / 2.0;
    }
    area
}

/// Sweep the sensitivity threshold over [0,1] for each keyword class.
///
/// FAR(t) is the fraction of non-keyword-k examples scoring at least t on
/// class k; FRR(t) the fraction of keyword-k examples scoring below t.
/// Unknown and silence examples count as negatives. The averaged curve is
/// the vertical mean of per-keyword FRR at each FAR grid value, by linear
/// interpolation along each curve.
pub fn roc_sweep(probs: &[[f32; N_CLASSES]], labels: &[usize]) -> Result<RocSet> {
    check_scores(probs, labels)?;
    let grid = threshold_grid();
    let mut per_keyword = Vec::new();
    let mut excluded = Vec::new();
    for k in 0..KEYWORDS.len() {
        let mut pos: Vec<f64> = Vec::new();
        let mut neg: Vec<f64> = Vec::new();
        for (row, &l) in probs.iter().zip(labels) {
            if l == k {
                pos.push(row[k] as f64);
            } else {
                neg.push(row[k] as f64);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            excluded.push(k);
            continue;
        }
        let points: Vec<RocPoint> = grid
            .iter()
            .map(|&t| RocPoint {
                threshold: t,
                far: neg.iter().filter(|&&s| s >= t).count() as f64 / neg.len() as f64,
                frr: pos.iter().filter(|&&s| s < t).count() as f64 / pos.len() as f64,
            })
            .collect();
        let auc = trapezoid_auc(&points.iter().map(|p| (p.far, p.frr)).collect::<Vec<_>>());
        per_keyword.push((k, RocCurve { points, auc }));
    }
    if per_keyword.is_empty() {
        return Err(Error::EmptyTestSet);
    }

    // vertical averaging: query each curve's FRR at common FAR grid values
    let far_grid: Vec<f64> = (0..=(1.0 / ROC_GRID_STEP).round() as usize)
        .map(|i| i as f64 * ROC_GRID_STEP)
        .collect();
    let monotone: Vec<Vec<(f64, f64)>> = per_keyword
        .iter()
        .map(|(_, c)| far_frr_polyline(&c.points))
        .collect();
    let averaged_points: Vec<RocPoint> = far_grid
        .iter()
        .map(|&g| {
            let mean: f64 =
                monotone.iter().map(|m| interp_frr(m, g)).sum::<f64>() / monotone.len() as f64;
            RocPoint {
                threshold: g,
                far: g,
                frr: mean,
            }
        })
        .collect();
    let averaged_auc = trapezoid_auc(
        &averaged_points
            .iter()
            .map(|p| (p.far, p.frr))
            .collect::<Vec<_>>(),
    );
    Ok(RocSet {
        per_keyword,
        excluded,
        averaged: RocCurve {
            points: averaged_points,
            auc: averaged_auc,
        },
    })
}

/// Collapse swept points into a FAR-ascending polyline, keeping the lowest
/// FRR achieved at each distinct FAR.
fn far_frr_polyline(points: &[RocPoint]) -> Vec<(f64, f64)> {
    // threshold order: FAR non-increasing, FRR non-decreasing — so the first
    // occurrence of each FAR carries its lowest FRR
    let mut poly: Vec<(f64, f64)> = Vec::new();
    for p in points {
        match poly.last() {
            Some(&(f, _)) if f == p.far => {}
            _ => poly.push((p.far, p.frr)),
        }
    }
    poly.reverse();
    poly
}

/// Linear interpolation of FRR at a FAR query along a FAR-ascending polyline.
fn interp_frr(poly: &[(f64, f64)], far: f64) -> f64 {
    match poly.iter().position(|&(f, _)| f >= far) {
        Some(0) => poly[0].1,
        Some(i) => {
            let (f0, r0) = poly[i - 1];
            let (f1, r1) = poly[i];
            if f1 == f0 {
                r1
            } else {
                r0 + (r1 - r0) * (far - f0) / (f1 - f0)
            }
        }
        None => poly.last().map(|&(_, r)| r).unwrap_or(1.0),
    }
}

/// Mean and 95% half-width over trial accuracies (Student t, n-1 d.o.f.).
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewTrials(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // beyond the table, the normal quantile is a close approximation
    let t = T_QUANTILES.get(n - 2).copied().unwrap_or(1.96);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}

/// CSV rows `threshold,keyword,far,frr` for every per-keyword curve.
pub fn write_roc_csv<W: std::io::Write>(mut w: W, roc: &RocSet) -> Result<()> {
    writeln!(w, "threshold,keyword,far,frr")?;
    for (k, curve) in &roc.per_keyword {
        for p in &curve.points {
            writeln!(w, "{},{},{},{}", p.threshold, KEYWORDS[*k], p.far, p.frr)?;
        }
    }
    Ok(())
}

/// CSV rows `far,frr` for the vertically averaged curve.
pub fn write_averaged_csv<W: std::io::Write>(mut w: W, roc: &RocSet) -> Result<()> {
    writeln!(w, "far,frr")?;
    for p in &roc.averaged.points {
        writeln!(w, "{},{}", p.far, p.frr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UNKNOWN_INDEX;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(label: usize, confidence: f32) -> [f32; N_CLASSES] {
        let rest = (1.0 - confidence) / (N_CLASSES - 1) as f32;
        let mut row = [rest; N_CLASSES];
        row[label] = confidence;
        row
    }

    #[test]
    fn accuracy_of_perfect_oracle_is_one() {
        let labels: Vec<usize> = (0..N_CLASSES).collect();
        let probs: Vec<[f32; N_CLASSES]> = labels.iter().map(|&l| one_hot(l, 0.9)).collect();
        assert_eq!(accuracy(&probs, &labels).unwrap(), 1.0);
    }

    #[test]
    fn uniform_rows_break_ties_to_class_zero() {
        let row = [1.0 / N_CLASSES as f32; N_CLASSES];
        assert_eq!(argmax_lowest(&row), 0);
        let labels = vec![0usize, 3, 0, 5];
        let probs = vec![row; 4];
        assert_eq!(accuracy(&probs, &labels).unwrap(), 0.5);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn report_accuracy_equals_trace_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        let probs: Vec<[f32; N_CLASSES]> = labels
            .iter()
            .map(|&l| {
                // correct ~60% of the time
                let shown = if rng.gen_bool(0.6) {
                    l
                } else {
                    rng.gen_range(0..N_CLASSES)
                };
                one_hot(shown, 0.8)
            })
            .collect();
        let report = evaluate(&probs, &labels).unwrap();
        let trace: u64 = (0..N_CLASSES).map(|c| report.confusion[c][c]).sum();
        assert_eq!(report.accuracy, trace as f64 / 200.0);
        let row_sums: Vec<u64> = report.confusion.iter().map(|r| r.iter().sum()).collect();
        for (c, stats) in report.per_class.iter().enumerate() {
            assert_eq!(stats.support, row_sums[c]);
        }
        assert_eq!(report.n_examples, 200);
    }

    #[test]
    fn roc_endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..300).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        let probs: Vec<[f32; N_CLASSES]> = labels
            .iter()
            .map(|_| {
                let mut row = [0.0f32; N_CLASSES];
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = rng.gen_range(0.01..1.0);
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
                row
            })
            .collect();
        let roc = roc_sweep(&probs, &labels).unwrap();
        for (k, curve) in &roc.per_keyword {
            let first = curve.points.first().unwrap();
            assert_eq!((first.far, first.frr), (1.0, 0.0), "keyword {k} at t=0");
            let last = curve.points.last().unwrap();
            assert!(last.threshold > 1.0);
            assert_eq!((last.far, last.frr), (0.0, 1.0), "keyword {k} past t=1");
        }
    }

    #[test]
    fn roc_is_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..400).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        let probs: Vec<[f32; N_CLASSES]> = labels
            .iter()
            .map(|&l| {
                one_hot(
                    if rng.gen_bool(0.5) {
                        l
                    } else {
                        rng.gen_range(0..N_CLASSES)
                    },
                    rng.gen_range(0.1..0.95),
                )
            })
            .collect();
        let roc = roc_sweep(&probs, &labels).unwrap();
        for (k, curve) in &roc.per_keyword {
            for pair in curve.points.windows(2) {
                assert!(pair[1].far <= pair[0].far, "keyword {k} FAR increased");
                assert!(pair[1].frr >= pair[0].frr, "keyword {k} FRR decreased");
            }
        }
    }

    #[test]
    fn random_scores_give_half_auc() {
        // two classes: keyword 0 vs unknown, scores independent of labels,
        // so the (FAR, 1-FRR) curve must hug the diagonal
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut labels = Vec::new();
        let mut probs = Vec::new();
        for _ in 0..1000 {
            labels.push(if rng.gen_bool(0.5) { 0 } else { UNKNOWN_INDEX });
            let s: f32 = rng.gen_range(0.0..1.0);
            let mut row = [0.0f32; N_CLASSES];
            row[0] = s;
            row[UNKNOWN_INDEX] = 1.0 - s;
            probs.push(row);
        }
        let roc = roc_sweep(&probs, &labels).unwrap();
        let curve = &roc.per_keyword[0].1;
        let roc_auc: f64 = 1.0
            - trapezoid_auc(
                &curve
                    .points
                    .iter()
                    .map(|p| (p.far, p.frr))
                    .collect::<Vec<_>>(),
            );
        assert!(
            (roc_auc - 0.5).abs() < 0.05,
            "diagonal AUC expected, got {roc_auc}"
        );
        assert_eq!(roc.excluded, (1..KEYWORDS.len()).collect::<Vec<_>>());
    }

    #[test]
    fn averaged_curve_stays_in_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<usize> = (0..500).map(|_| rng.gen_range(0..N_CLASSES)).collect();
        let probs: Vec<[f32; N_CLASSES]> = labels
            .iter()
            .map(|&l| {
                one_hot(
                    if rng.gen_bool(0.7) {
                        l
                    } else {
                        rng.gen_range(0..N_CLASSES)
                    },
                    rng.gen_range(0.2..0.9),
                )
            })
            .collect();
        let roc = roc_sweep(&probs, &labels).unwrap();
        let polys: Vec<Vec<(f64, f64)>> = roc
            .per_keyword
            .iter()
            .map(|(_, c)| far_frr_polyline(&c.points))
            .collect();
        for p in &roc.averaged.points {
            let vals: Vec<f64> = polys.iter().map(|m| interp_frr(m, p.far)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(
                p.frr >= lo - 1e-12 && p.frr <= hi + 1e-12,
                "averaged FRR {} outside [{lo}, {hi}] at FAR {}",
                p.frr,
                p.far
            );
        }
    }

    #[test]
    fn auc_is_stable_under_monotone_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut labels = Vec::new();
        let mut probs = Vec::new();
        for _ in 0..600 {
            let l = if rng.gen_bool(0.5) { 0 } else { UNKNOWN_INDEX };
            labels.push(l);
            // informative score
            let base: f32 = if l == 0 {
                rng.gen_range(0.3..1.0)
            } else {
                rng.gen_range(0.0..0.7)
            };
            let mut row = [0.0f32; N_CLASSES];
            row[0] = base;
            row[UNKNOWN_INDEX] = 1.0 - base;
            probs.push(row);
        }
        let auc0 = roc_sweep(&probs, &labels).unwrap().per_keyword[0].1.auc;
        // cube the keyword score: strictly monotone on [0,1]
        for row in probs.iter_mut() {
            row[0] = row[0].powi(3);
        }
        let auc1 = roc_sweep(&probs, &labels).unwrap().per_keyword[0].1.auc;
        assert!(
            (auc0 - auc1).abs() < 0.02,
            "rank-based AUC moved: {auc0} vs {auc1}"
        );
    }

    #[test]
    fn confidence_interval_matches_direct_arithmetic() {
        let (mean, half) = confidence_interval(&[90.0, 90.0, 90.0, 90.0, 95.0]).unwrap();
        assert!((mean - 91.0).abs() < 1e-12);
        // s = sqrt(5) = sqrt(5)/sqrt(5) cancellation gives exactly t
        assert!((half - 2.776).abs() < 1e-9, "got {half}");

        let (_, zero) = confidence_interval(&[3.0; 5]).unwrap();
        assert_eq!(zero, 0.0);

        let shifted: Vec<f64> = [90.0, 90.0, 90.0, 90.0, 95.0]
            .iter()
            .map(|v| v + 7.0)
            .collect();
        let (m2, h2) = confidence_interval(&shifted).unwrap();
        assert!((m2 - 98.0).abs() < 1e-12);
        assert!((h2 - half).abs() < 1e-12);

        assert!(matches!(
            confidence_interval(&[1.0]),
            Err(Error::TooFewTrials(1))
        ));
    }

    #[test]
    fn csv_writers_emit_expected_schema() {
        let labels = vec![0, UNKNOWN_INDEX, 0, UNKNOWN_INDEX];
        let probs: Vec<[f32; N_CLASSES]> = vec![
            one_hot(0, 0.9),
            one_hot(UNKNOWN_INDEX, 0.9),
            one_hot(0, 0.6),
            one_hot(0, 0.55),
        ];
        let roc = roc_sweep(&probs, &labels).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &roc).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("threshold,keyword,far,frr"));
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,yes,1,0"), "got {first}");

        let mut buf = Vec::new();
        write_averaged_csv(&mut buf, &roc).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("far,frr"));
        assert_eq!(text.lines().count(), 202);
    }
}
