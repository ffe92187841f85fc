//! Biometric and calibration metrics over spoof-probability scores.
//!
//! Spoof is the positive class. At threshold `t` a sample is called spoof
//! when `score >= t`, so FAR is the fraction of live samples at or above
//! `t` and FRR the fraction of spoof samples below it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{ClassLabel, DomainId};
use crate::losses::softmax2;
use crate::model::Head;
use crate::rng::{tag, Rng};

pub const DEFAULT_BINS: usize = 10;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
/// Fraction of an evaluation set held out to fit the temperature.
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: u64,
    pub domain: DomainId,
    pub label: ClassLabel,
    /// Spoof probability.
    pub score: f64,
}

fn class_counts(samples: &[ScoredSample]) -> (usize, usize) {
    let spoof = samples
        .iter()
        .filter(|s| s.label == ClassLabel::Spoof)
        .count();
    (samples.len() - spoof, spoof)
}

fn require_both_classes(samples: &[ScoredSample], what: &str) -> Result<(usize, usize)> {
    let (live, spoof) = class_counts(samples);
    if live == 0 || spoof == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{what} needs both classes, got {live} live and {spoof} spoof"
        )));
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Numerical(format!(
            "sample {} has non-finite score {}",
            s.sample_id, s.score
        )));
    }
    Ok((live, spoof))
}

/// Sorted by score, then sample id.
fn sorted(samples: &[ScoredSample]) -> Vec<ScoredSample> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.sample_id.cmp(&b.sample_id))
    });
    v
}

/// Area under the ROC curve by the trapezoid rule over distinct thresholds.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    let (live, spoof) = require_both_classes(samples, "AUC")?;
    let v = sorted(samples);
    // Sweep from the highest score down; each tie block is one ROC step.
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = v.len();
    while i > 0 {
        let s = v[i - 1].score;
        let (tp0, fp0) = (tp, fp);
        while i > 0 && v[i - 1].score == s {
            match v[i - 1].label {
                ClassLabel::Spoof => tp += 1,
                ClassLabel::Live => fp += 1,
            }
            i -= 1;
        }
        // Trapezoid in counts; normalized once at the end.
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (live as f64 * spoof as f64))
}

/// `(FAR, FRR)` at threshold `t`.
pub fn error_rates(samples: &[ScoredSample], threshold: f64) -> Result<(f64, f64)> {
    let (live, spoof) = require_both_classes(samples, "error rates")?;
    let far = samples
        .iter()
        .filter(|s| s.label == ClassLabel::Live && s.score >= threshold)
        .count();
    let frr = samples
        .iter()
        .filter(|s| s.label == ClassLabel::Spoof && s.score < threshold)
        .count();
    Ok((far as f64 / live as f64, frr as f64 / spoof as f64))
}

/// Threshold minimizing `|FAR − FRR|`.
///
/// Between consecutive distinct scores the rates are constant, so the
/// candidates are the intervals `(−∞, s1], (s1, s2], …, (sm, ∞)`. Among the
/// optimal intervals the middle one is chosen and its midpoint returned; the
/// lower-unbounded interval returns `s1` and the upper-unbounded one the
/// midpoint of `(sm, 1]`.
pub fn eer_threshold(samples: &[ScoredSample]) -> Result<f64> {
    let (live, spoof) = require_both_classes(samples, "EER")?;
    let v = sorted(samples);
    let mut distinct: Vec<f64> = v.iter().map(|s| s.score).collect();
    distinct.dedup();

    // Rates for t in (s_{j-1}, s_j] equal the rates at t = s_j.
    let mut gaps = Vec::with_capacity(distinct.len() + 1);
    let (mut live_below, mut spoof_below) = (0usize, 0usize);
    let mut k = 0;
    for &s in &distinct {
        let far = (live - live_below) as f64 / live as f64;
        let frr = spoof_below as f64 / spoof as f64;
        gaps.push((far - frr).abs());
        while k < v.len() && v[k].score == s {
            match v[k].label {
                ClassLabel::Live => live_below += 1,
                ClassLabel::Spoof => spoof_below += 1,
            }
            k += 1;
        }
    }
    gaps.push(1.0); // above every score: FAR 0, FRR 1

    let best = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let optimal: Vec<usize> = (0..gaps.len()).filter(|&j| gaps[j] == best).collect();
    let j = optimal[(optimal.len() - 1) / 2];
    let m = distinct.len();
    Ok(if j == 0 {
        distinct[0]
    } else if j == m {
        let top = distinct[m - 1];
        if top < 1.0 {
            top + (1.0 - top) / 2.0
        } else {
            top + f64::EPSILON * top.abs().max(1.0)
        }
    } else {
        distinct[j - 1] + (distinct[j] - distinct[j - 1]) / 2.0
    })
}

/// Half total error rate `(FAR + FRR) / 2` at `threshold`.
pub fn hter(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    let (far, frr) = error_rates(samples, threshold)?;
    Ok((far + frr) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub accuracy: f64,
    /// Zero for empty bins.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
    pub total: usize,
}

impl CalibrationBins {
    /// Delimited table `bin_low,bin_high,count,acc,conf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count,acc,conf\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.low, b.high, b.count, b.accuracy, b.confidence
            ));
        }
        out
    }
}

/// Compensated summation, so that bin means of repeated values come out exact.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Expected calibration error over `bins` equal-width confidence bins.
///
/// Confidence is the predicted-class probability `max(s, 1 − s)`; the
/// prediction is spoof when `s >= 0.5`.
pub fn ece(samples: &[ScoredSample], bins: usize) -> Result<(f64, CalibrationBins)> {
    if bins == 0 {
        return Err(Error::Parameter("bin count must be >= 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("ECE of an empty set".into()));
    }
    let mut members: Vec<Vec<(f64, bool)>> = vec![Vec::new(); bins];
    for s in samples {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::Numerical(format!(
                "sample {} has score {} outside [0, 1]",
                s.sample_id, s.score
            )));
        }
        let predicted = if s.score >= 0.5 {
            ClassLabel::Spoof
        } else {
            ClassLabel::Live
        };
        let conf = s.score.max(1.0 - s.score);
        let b = ((conf * bins as f64).floor() as usize).min(bins - 1);
        members[b].push((conf, predicted == s.label));
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    let mut out = Vec::with_capacity(bins);
    for (m, bucket) in members.iter().enumerate() {
        let count = bucket.len();
        let (accuracy, confidence) = if count == 0 {
            (0.0, 0.0)
        } else {
            let c = count as f64;
            let correct = bucket.iter().filter(|(_, ok)| *ok).count() as f64;
            (
                correct / c,
                neumaier_sum(bucket.iter().map(|(p, _)| *p)) / c,
            )
        };
        if count > 0 {
            total += (count as f64 / n) * (accuracy - confidence).abs();
        }
        out.push(CalibrationBin {
            low: m as f64 / bins as f64,
            high: (m + 1) as f64 / bins as f64,
            count,
            accuracy,
            confidence,
        });
    }
    Ok((
        total,
        CalibrationBins {
            bins: out,
            total: samples.len(),
        },
    ))
}

/// Mean cross-entropy of `softmax(logits / t)`.
pub fn temperature_nll(logits: &[[f64; 2]], labels: &[ClassLabel], t: f64) -> f64 {
    let mut total = 0.0;
    for (l, y) in logits.iter().zip(labels) {
        let a = [l[0] / t, l[1] / t];
        let m = a[0].max(a[1]);
        let lse = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
        total += lse - a[y.index()];
    }
    total / logits.len() as f64
}

/// Temperature minimizing the validation NLL over [`TEMPERATURE_RANGE`].
///
/// Golden-section search in `ln T`; falls back to `T = 1` if that scores better.
pub fn temperature_scale(logits: &[[f64; 2]], labels: &[ClassLabel]) -> Result<f64> {
    Error::check_dim(logits.len(), labels.len())?;
    let spoof = labels.iter().filter(|&&y| y == ClassLabel::Spoof).count();
    if spoof == 0 || spoof == labels.len() {
        return Err(Error::UndefinedMetric(
            "temperature fit needs both classes in the validation split".into(),
        ));
    }
    if !logits.iter().flatten().all(|x| x.is_finite()) {
        return Err(Error::Numerical("non-finite validation logits".into()));
    }
    let f = |u: f64| temperature_nll(logits, labels, u.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let t = ((a + b) / 2.0).exp();
    Ok(
        if temperature_nll(logits, labels, 1.0) < temperature_nll(logits, labels, t) {
            1.0
        } else {
            t
        },
    )
}

/// Spoof probability of `softmax(logits / t)`.
pub fn apply_temperature(logits: &[[f64; 2]], t: f64) -> Vec<f64> {
    logits
        .iter()
        .map(|l| softmax2(&[l[0] / t, l[1] / t])[1])
        .collect()
}

/// Seeded class-stratified split into `(validation, test)` index lists.
///
/// Each class contributes `round(fraction · n_class)` samples to validation,
/// clamped so that both sides keep at least one sample of the class when it
/// has two or more.
pub fn split_indices(
    labels: &[ClassLabel],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut rng = Rng::stream(seed, tag::SPLIT, 0);
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in ClassLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let mut take = (fraction * n as f64).round() as usize;
        if n >= 2 {
            take = take.clamp(1, n - 1);
        }
        val.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    val.sort_unstable();
    test.sort_unstable();
    Ok((val, test))
}

/// EER threshold of every domain that has both classes.
pub fn per_domain_thresholds(samples: &[ScoredSample]) -> Result<BTreeMap<DomainId, f64>> {
    let mut by_domain: BTreeMap<DomainId, Vec<ScoredSample>> = BTreeMap::new();
    for s in samples {
        by_domain.entry(s.domain).or_default().push(*s);
    }
    let mut out = BTreeMap::new();
    for (d, v) in by_domain {
        let (live, spoof) = class_counts(&v);
        if live == 0 || spoof == 0 {
            log::warn!("domain {d} lacks a class ({live} live, {spoof} spoof); excluded from threshold spread");
            continue;
        }
        out.insert(d, eer_threshold(&v)?);
    }
    Ok(out)
}

/// Population standard deviation of the per-domain EER thresholds.
pub fn bias_alignment_stat(samples: &[ScoredSample]) -> Result<f64> {
    let t = per_domain_thresholds(samples)?;
    if t.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "threshold spread needs at least 2 domains with both classes, got {}",
            t.len()
        )));
    }
    Ok(popstd(t.values().copied()))
}

fn popstd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainThreshold {
    pub domain: DomainId,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub head: Head,
    pub samples: usize,
    pub auc: f64,
    pub eer_threshold: f64,
    pub hter: f64,
    pub ece: f64,
    pub bins: usize,
    pub domain_thresholds: Vec<DomainThreshold>,
    /// Spread of per-domain thresholds; absent with fewer than two usable domains.
    pub bias_alignment: Option<f64>,
    /// Temperature applied to the logits before scoring, if any.
    pub temperature: Option<f64>,
}

impl EvalReport {
    pub fn compute(
        samples: &[ScoredSample],
        bins: usize,
        head: Head,
    ) -> Result<(Self, CalibrationBins)> {
        let auc = roc_auc(samples)?;
        let eer = eer_threshold(samples)?;
        let h = hter(samples, eer)?;
        let (e, table) = ece(samples, bins)?;
        let thresholds = per_domain_thresholds(samples)?;
        let bias = (thresholds.len() >= 2).then(|| popstd(thresholds.values().copied()));
        Ok((
            EvalReport {
                head,
                samples: samples.len(),
                auc,
                eer_threshold: eer,
                hter: h,
                ece: e,
                bins,
                domain_thresholds: thresholds
                    .into_iter()
                    .map(|(domain, threshold)| DomainThreshold { domain, threshold })
                    .collect(),
                bias_alignment: bias,
                temperature: None,
            },
            table,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: u64, label: ClassLabel, score: f64) -> ScoredSample {
        ScoredSample {
            sample_id: id,
            domain: DomainId(0),
            label,
            score,
        }
    }

    fn set(live: &[f64], spoof: &[f64]) -> Vec<ScoredSample> {
        let mut v = Vec::new();
        for (i, &x) in live.iter().enumerate() {
            v.push(s(i as u64, ClassLabel::Live, x));
        }
        for (i, &x) in spoof.iter().enumerate() {
            v.push(s((live.len() + i) as u64, ClassLabel::Spoof, x));
        }
        v
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&set(&[0.1], &[0.9])).unwrap(), 1.0);
        assert_eq!(roc_auc(&set(&[0.5, 0.5], &[0.5, 0.5, 0.5])).unwrap(), 0.5);
        assert_eq!(roc_auc(&set(&[0.6, 0.2], &[0.8, 0.4])).unwrap(), 0.75);
        assert!(matches!(
            roc_auc(&set(&[0.1], &[])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn eer_examples() {
        let t = eer_threshold(&set(&[0.1, 0.2], &[0.7, 0.9])).unwrap();
        assert!((t - 0.45).abs() < 1e-15);
        assert_eq!(hter(&set(&[0.1, 0.2], &[0.7, 0.9]), t).unwrap(), 0.0);

        let t = eer_threshold(&set(&[0.3, 0.3], &[0.3])).unwrap();
        assert_eq!(t, 0.3);

        let v = set(&[0.1, 0.3, 0.5, 0.7], &[0.3, 0.5, 0.7, 0.9]);
        let t = eer_threshold(&v).unwrap();
        let (far, frr) = error_rates(&v, t).unwrap();
        assert!((far - frr).abs() <= 0.25);
    }

    #[test]
    fn hter_examples() {
        // 10 live, 10 spoof; one live above 0.5, three spoof below.
        let mut live = vec![0.1; 9];
        live.push(0.9);
        let mut spoof = vec![0.9; 7];
        spoof.extend([0.2, 0.2, 0.2]);
        let v = set(&live, &spoof);
        assert_eq!(error_rates(&v, 0.5).unwrap(), (0.1, 0.3));
        assert!((hter(&v, 0.5).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn ece_examples() {
        let v: Vec<_> = (0..10).map(|i| s(i, ClassLabel::Spoof, 0.8)).collect();
        let (e, bins) = ece(&v, 1).unwrap();
        assert!((e - 0.2).abs() < 1e-15);
        assert_eq!(bins.bins[0].count, 10);

        let v: Vec<_> = (0..4).map(|i| s(i, ClassLabel::Live, 1.0)).collect();
        assert_eq!(ece(&v, 10).unwrap().0, 1.0);

        // Confidence 0.75 with 3 of 4 correct.
        let mut v: Vec<_> = (0..3).map(|i| s(i, ClassLabel::Spoof, 0.75)).collect();
        v.push(s(3, ClassLabel::Live, 0.75));
        assert_eq!(ece(&v, 10).unwrap().0, 0.0);
    }

    #[test]
    fn bins_csv_header() {
        let v = vec![s(0, ClassLabel::Live, 0.2)];
        let (_, bins) = ece(&v, 2).unwrap();
        let csv = bins.to_csv();
        assert!(csv.starts_with("bin_low,bin_high,count,acc,conf\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn temperature_identity_and_errors() {
        let l = [[0.3, -0.2], [1.0, 2.0]];
        let scores = apply_temperature(&l, 1.0);
        assert_eq!(scores[0], softmax2(&l[0])[1]);
        assert!(matches!(
            temperature_scale(&l, &[ClassLabel::Live, ClassLabel::Live]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn bias_alignment_examples() {
        let mut v = Vec::new();
        for (d, (lo, hi)) in [(0u32, (0.3, 0.5)), (1, (0.5, 0.7))] {
            v.push(ScoredSample {
                sample_id: v.len() as u64,
                domain: DomainId(d),
                label: ClassLabel::Live,
                score: lo,
            });
            v.push(ScoredSample {
                sample_id: v.len() as u64,
                domain: DomainId(d),
                label: ClassLabel::Spoof,
                score: hi,
            });
        }
        let t = per_domain_thresholds(&v).unwrap();
        assert!((t[&DomainId(0)] - 0.4).abs() < 1e-15);
        assert!((t[&DomainId(1)] - 0.6).abs() < 1e-15);
        assert!((bias_alignment_stat(&v).unwrap() - 0.1).abs() < 1e-15);

        let single: Vec<_> = v
            .iter()
            .filter(|s| s.domain == DomainId(0))
            .copied()
            .collect();
        assert!(matches!(
            bias_alignment_stat(&single),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<ClassLabel> = (0..50)
            .map(|i| {
                if i % 5 == 0 {
                    ClassLabel::Spoof
                } else {
                    ClassLabel::Live
                }
            })
            .collect();
        let (val, test) = split_indices(&labels, 0.2, 3).unwrap();
        assert_eq!(val.len() + test.len(), 50);
        assert_eq!(val.len(), 10);
        assert_eq!(
            val.iter()
                .filter(|&&i| labels[i] == ClassLabel::Spoof)
                .count(),
            2
        );
        assert_eq!(split_indices(&labels, 0.2, 3).unwrap(), (val, test));
    }
}
