//! Agreement between predicted verdicts and gold labels, plus rank
//! correlations against human scores and input size.
//!
//! For precision/recall the positive class is `not_OK`: the metric is an
//! error detector.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::types::{FineVerdict, GoldLabel, RoughVerdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{} result(s) have no gold label: {}", .0.len(), sample(.0))]
    MissingGold(Vec<String>),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

fn sample(ids: &[String]) -> String {
    let shown: Vec<&str> = ids.iter().take(5).map(String::as_str).collect();
    if ids.len() > shown.len() {
        format!("{}, ...", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// One scored line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// `None` for examples whose evaluation failed; those are excluded.
    pub fine: Option<FineVerdict>,
    pub confidence: Option<f64>,
    pub n_triples: usize,
}

/// 2×2 counts with `not_OK` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: RoughVerdict, gold: RoughVerdict) {
        match (predicted, gold) {
            (RoughVerdict::NotOk, RoughVerdict::NotOk) => self.tp += 1,
            (RoughVerdict::NotOk, RoughVerdict::Ok) => self.fp += 1,
            (RoughVerdict::Ok, RoughVerdict::NotOk) => self.fn_ += 1,
            (RoughVerdict::Ok, RoughVerdict::Ok) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: usize,
    pub n_excluded: usize,
    pub accuracy_rough: f64,
    /// Only when every scored gold label carries a fine verdict.
    pub accuracy_fine: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Rows are gold, columns predicted, both in [`FineVerdict::ALL`] order.
    pub fine_confusion: Option<[[usize; 4]; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn fine_index(v: FineVerdict) -> usize {
    FineVerdict::ALL
        .iter()
        .position(|&x| x == v)
        .expect("listed")
}

/// Scores predictions against gold labels matched by id. Errored
/// predictions are excluded and counted; a non-errored prediction without a
/// gold label is an error.
pub fn score(
    predictions: &[Prediction],
    gold: &HashMap<String, GoldLabel>,
) -> Result<ScoreReport, MetricsError> {
    let missing: Vec<String> = predictions
        .iter()
        .filter(|p| p.fine.is_some() && !gold.contains_key(&p.id))
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingGold(missing));
    }

    let mut confusion = Confusion::default();
    let mut fine_confusion = [[0usize; 4]; 4];
    let mut all_fine = true;
    let mut fine_correct = 0;
    let mut n_excluded = 0;
    for p in predictions {
        let Some(fine) = p.fine else {
            n_excluded += 1;
            continue;
        };
        let g = gold[&p.id];
        confusion.add(fine.rough(), g.rough_label());
        match g.fine_label() {
            Some(gf) => {
                fine_confusion[fine_index(gf)][fine_index(fine)] += 1;
                if gf == fine {
                    fine_correct += 1;
                }
            }
            None => all_fine = false,
        }
    }

    let n = confusion.total();
    let mut warnings = Vec::new();
    let precision = ratio(confusion.tp, confusion.tp + confusion.fp).unwrap_or_else(|| {
        warnings.push("no not_OK predictions; precision set to 0".to_string());
        0.0
    });
    let recall = ratio(confusion.tp, confusion.tp + confusion.fn_).unwrap_or_else(|| {
        warnings.push("no not_OK gold labels; recall set to 0".to_string());
        0.0
    });
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    for w in &warnings {
        warn!("{w}");
    }
    let with_fine = all_fine && n > 0;
    Ok(ScoreReport {
        n,
        n_excluded,
        accuracy_rough: ratio(confusion.tp + confusion.tn, n).unwrap_or(0.0),
        accuracy_fine: with_fine.then(|| fine_correct as f64 / n as f64),
        precision,
        recall,
        f1,
        confusion,
        fine_confusion: with_fine.then_some(fine_confusion),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with n − 2 degrees of freedom.
    pub p_approx: f64,
    pub n: usize,
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Correlation, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(MetricsError::TooFew(n));
    }
    for (name, v) in [("xs", xs), ("ys", ys)] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite(name));
        }
        if v.iter().all(|&x| x == v[0]) {
            return Err(MetricsError::Constant(name));
        }
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys));
    let df = (n - 2) as f64;
    let p_approx = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { rho, p_approx, n })
}

fn scored<'a>(
    predictions: &'a [Prediction],
    gold: &'a HashMap<String, GoldLabel>,
) -> impl Iterator<Item = (&'a Prediction, FineVerdict, GoldLabel)> {
    predictions
        .iter()
        .filter_map(move |p| Some((p, p.fine?, *gold.get(&p.id)?)))
}

/// Correlation between input size and a 0/1 indicator of rough disagreement
/// with gold.
pub fn error_size_correlation(
    predictions: &[Prediction],
    gold: &HashMap<String, GoldLabel>,
) -> Result<Correlation, MetricsError> {
    let (sizes, errors): (Vec<f64>, Vec<f64>) = scored(predictions, gold)
        .map(|(p, fine, g)| {
            let wrong = fine.rough() != g.rough_label();
            (p.n_triples as f64, if wrong { 1.0 } else { 0.0 })
        })
        .unzip();
    spearman(&sizes, &errors)
}

/// Correlation between example confidence and human scores, over
/// predictions that have both.
pub fn confidence_correlation(
    predictions: &[Prediction],
    human_scores: &HashMap<String, f64>,
) -> Result<Correlation, MetricsError> {
    let (conf, human): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .filter(|p| p.fine.is_some())
        .filter_map(|p| Some((p.confidence?, *human_scores.get(&p.id)?)))
        .unzip();
    spearman(&conf, &human)
}

/// Counts of each predicted fine verdict among scored predictions.
pub fn fine_counts(predictions: &[Prediction]) -> BTreeMap<FineVerdict, usize> {
    let mut counts = BTreeMap::new();
    for fine in predictions.iter().filter_map(|p| p.fine) {
        *counts.entry(fine).or_insert(0) += 1;
    }
    counts
}

/// One row of the plain-text results table.
pub struct TableRow<'a> {
    pub setup: &'a str,
    pub report: &'a ScoreReport,
    pub rho: Option<f64>,
}

/// Aligned table with columns `A` (or `Af Ar` when fine gold exists),
/// `R P F1 rho`, followed by an `excluded:` line per row that has exclusions.
pub fn format_table(rows: &[TableRow<'_>]) -> String {
    let with_fine = rows.iter().any(|r| r.report.accuracy_fine.is_some());
    let mut header: Vec<&str> = vec!["setup"];
    if with_fine {
        header.extend(["Af", "Ar"]);
    } else {
        header.push("A");
    }
    header.extend(["R", "P", "F1", "rho"]);
    let width = rows
        .iter()
        .map(|r| r.setup.len())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);

    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", header[0]);
    for h in &header[1..] {
        let _ = write!(out, " {h:>6}");
    }
    out.push('\n');
    for row in rows {
        let r = row.report;
        let mut cells = Vec::new();
        if with_fine {
            cells.push(fmt(r.accuracy_fine));
        }
        cells.extend([
            fmt(Some(r.accuracy_rough)),
            fmt(Some(r.recall)),
            fmt(Some(r.precision)),
            fmt(Some(r.f1)),
            fmt(row.rho),
        ]);
        let _ = write!(out, "{:<width$}", row.setup);
        for c in cells {
            let _ = write!(out, " {c:>6}");
        }
        out.push('\n');
    }
    for row in rows.iter().filter(|r| r.report.n_excluded > 0) {
        let _ = writeln!(out, "{}: excluded: {}", row.setup, row.report.n_excluded);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, fine: Option<FineVerdict>) -> Prediction {
        Prediction {
            id: id.to_string(),
            fine,
            confidence: Some(0.5),
            n_triples: 1,
        }
    }

    fn rough_gold(pairs: &[(&str, RoughVerdict)]) -> HashMap<String, GoldLabel> {
        pairs
            .iter()
            .map(|(id, r)| (id.to_string(), GoldLabel::rough(*r)))
            .collect()
    }

    /// Brute-force oracle: count each quadrant independently.
    fn oracle_prf(pred: &[bool], gold: &[bool]) -> (f64, f64, f64) {
        let count = |p: bool, g: bool| {
            pred.iter()
                .zip(gold)
                .filter(|&(&a, &b)| a == p && b == g)
                .count() as f64
        };
        let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        (p, r, f)
    }

    #[test]
    fn perfect_predictions() {
        let ids: Vec<String> = (0..10).map(|i| format!("e{i}")).collect();
        let preds: Vec<Prediction> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                pred(
                    id,
                    Some(if i % 3 == 0 {
                        FineVerdict::Omission
                    } else {
                        FineVerdict::Ok
                    }),
                )
            })
            .collect();
        let gold: HashMap<String, GoldLabel> = preds
            .iter()
            .map(|p| (p.id.clone(), GoldLabel::fine(p.fine.unwrap())))
            .collect();
        let r = score(&preds, &gold).unwrap();
        assert_eq!(r.accuracy_rough, 1.0);
        assert_eq!(r.accuracy_fine, Some(1.0));
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn degenerate_all_ok_predictor() {
        let mut preds = Vec::new();
        let mut gold = Vec::new();
        for i in 0..10 {
            let id = format!("e{i}");
            preds.push(pred(&id, Some(FineVerdict::Ok)));
            gold.push((
                id,
                if i < 4 {
                    RoughVerdict::NotOk
                } else {
                    RoughVerdict::Ok
                },
            ));
        }
        let gold: HashMap<_, _> = gold
            .into_iter()
            .map(|(i, r)| (i, GoldLabel::rough(r)))
            .collect();
        let r = score(&preds, &gold).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert!((r.accuracy_rough - 0.6).abs() < 1e-12);
        assert_eq!(r.accuracy_fine, None);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn twenty_item_fixture_matches_oracle() {
        // 5 TP, 3 FP, 2 FN, 10 TN
        let mut pred_pos = vec![true; 5];
        let mut gold_pos = vec![true; 5];
        pred_pos.extend([true; 3]);
        gold_pos.extend([false; 3]);
        pred_pos.extend([false; 2]);
        gold_pos.extend([true; 2]);
        pred_pos.extend([false; 10]);
        gold_pos.extend([false; 10]);

        let preds: Vec<Prediction> = pred_pos
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                pred(
                    &format!("e{i}"),
                    Some(if p {
                        FineVerdict::Hallucination
                    } else {
                        FineVerdict::Ok
                    }),
                )
            })
            .collect();
        let gold: HashMap<String, GoldLabel> = gold_pos
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let r = if g {
                    RoughVerdict::NotOk
                } else {
                    RoughVerdict::Ok
                };
                (format!("e{i}"), GoldLabel::rough(r))
            })
            .collect();
        let r = score(&preds, &gold).unwrap();
        let (p, rec, f) = oracle_prf(&pred_pos, &gold_pos);
        assert!((r.precision - p).abs() < 1e-9);
        assert!((r.recall - rec).abs() < 1e-9);
        assert!((r.f1 - f).abs() < 1e-9);
        assert!((r.precision - 0.625).abs() < 1e-12);
        assert_eq!(
            r.confusion,
            Confusion {
                tp: 5,
                fp: 3,
                fn_: 2,
                tn: 10
            }
        );
        assert!((r.accuracy_rough - 15.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn exclusions_and_missing_gold() {
        let gold = rough_gold(&[("a", RoughVerdict::Ok), ("b", RoughVerdict::NotOk)]);
        let preds = vec![
            pred("a", Some(FineVerdict::Ok)),
            pred("b", None),
            pred("z", None),
        ];
        let r = score(&preds, &gold).unwrap();
        assert_eq!(r.n, 1);
        assert_eq!(r.n_excluded, 2);

        let preds = vec![
            pred("a", Some(FineVerdict::Ok)),
            pred("q", Some(FineVerdict::Ok)),
        ];
        let err = score(&preds, &gold).unwrap_err();
        assert_eq!(err, MetricsError::MissingGold(vec!["q".to_string()]));
    }

    #[test]
    fn fine_confusion_layout() {
        let gold: HashMap<String, GoldLabel> =
            [("a", FineVerdict::Omission), ("b", FineVerdict::Ok)]
                .iter()
                .map(|(id, f)| (id.to_string(), GoldLabel::fine(*f)))
                .collect();
        let preds = vec![
            pred("a", Some(FineVerdict::OmissionAndHallucination)),
            pred("b", Some(FineVerdict::Ok)),
        ];
        let r = score(&preds, &gold).unwrap();
        assert_eq!(r.accuracy_fine, Some(0.5));
        assert_eq!(r.accuracy_rough, 1.0);
        let m = r.fine_confusion.unwrap();
        assert_eq!(m[1][3], 1);
        assert_eq!(m[0][0], 1);
    }

    #[test]
    fn spearman_examples() {
        let rho = |x: &[f64], y: &[f64]| spearman(x, y).unwrap().rho;
        assert!((rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // ranks x: 1.5 1.5 3 4, y: 2 3 1 4; by hand 1.5 / sqrt(4.5 * 5)
        let r = rho(&[1.0, 1.0, 2.0, 3.0], &[2.0, 3.0, 1.0, 4.0]);
        assert!((r - 1.5 / 22.5f64.sqrt()).abs() < 1e-12, "{r}");
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(MetricsError::TooFew(2))
        );
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch(3, 2))
        );
        assert_eq!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricsError::Constant("xs"))
        );
        assert!(spearman(&[1.0, f64::NAN, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn p_value_is_sane() {
        let c = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((c.rho - 0.8).abs() < 1e-12);
        // t = 0.8 * sqrt(3 / 0.36) = 2.3094; two-sided p with 3 df ≈ 0.1041
        assert!((c.p_approx - 0.1041).abs() < 1e-3, "{}", c.p_approx);
    }

    #[test]
    fn error_size_correlation_sign_and_na() {
        let mut preds = Vec::new();
        let mut gold = HashMap::new();
        for i in 0..8 {
            let id = format!("e{i}");
            let size = i + 1;
            // wrong only on the largest inputs
            let wrong = size > 5;
            preds.push(Prediction {
                id: id.clone(),
                fine: Some(FineVerdict::Ok),
                confidence: Some(0.9),
                n_triples: size,
            });
            let g = if wrong {
                RoughVerdict::NotOk
            } else {
                RoughVerdict::Ok
            };
            gold.insert(id, GoldLabel::rough(g));
        }
        assert!(error_size_correlation(&preds, &gold).unwrap().rho > 0.0);

        for g in gold.values_mut() {
            *g = GoldLabel::rough(RoughVerdict::Ok);
        }
        assert_eq!(
            error_size_correlation(&preds, &gold),
            Err(MetricsError::Constant("ys"))
        );
    }

    #[test]
    fn table_layout() {
        let gold = rough_gold(&[("a", RoughVerdict::Ok), ("b", RoughVerdict::NotOk)]);
        let preds = vec![
            pred("a", Some(FineVerdict::Ok)),
            pred("b", Some(FineVerdict::Omission)),
            pred("c", None),
            pred("d", None),
        ];
        let report = score(&preds, &gold).unwrap();
        let table = format_table(&[TableRow {
            setup: "Default",
            report: &report,
            rho: None,
        }]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(
            lines[0].split_whitespace().collect::<Vec<_>>(),
            ["setup", "A", "R", "P", "F1", "rho"]
        );
        assert_eq!(
            lines[1].split_whitespace().collect::<Vec<_>>(),
            ["Default", "1.000", "1.000", "1.000", "1.000", "n/a"]
        );
        assert_eq!(lines[2], "Default: excluded: 2");
    }
}
