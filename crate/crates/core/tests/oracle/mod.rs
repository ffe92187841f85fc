//! Direct reference implementations used as independent oracles.
//!
//! Each one is the plainest possible loop over the defining formula and
//! shares no code with the library.

#![allow(dead_code)]

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(a: &[f64]) -> Vec<f64> {
    let n = dot(a, a).sqrt();
    a.iter().map(|x| x / n).collect()
}

/// Supervised contrastive loss summed over anchors with at least one positive.
pub fn contrastive(features: &[Vec<f64>], keys: &[u64], tau: f64, normalize: bool) -> f64 {
    let f: Vec<Vec<f64>> = if normalize {
        features.iter().map(|v| unit(v)).collect()
    } else {
        features.to_vec()
    };
    let n = f.len();
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && keys[p] == keys[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(&f[i], &f[a]) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((dot(&f[i], &f[p]) / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total
}

/// Domain-keyed contrastive loss on specific features.
pub fn fod(specifics: &[Vec<f64>], domains: &[u32], tau: f64, normalize: bool) -> f64 {
    let keys: Vec<u64> = domains.iter().map(|&d| d as u64).collect();
    contrastive(specifics, &keys, tau, normalize)
}

/// Paired-view InfoNCE where rows `2k` and `2k + 1` are views of one item.
pub fn ii_sim(views: &[Vec<f64>], tau: f64) -> f64 {
    let n = views.len();
    let mut total = 0.0;
    for i in 0..n {
        let partner = i ^ 1;
        let zi = unit(&views[i]);
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(&zi, &unit(&views[a])) / tau).exp();
            }
        }
        let num = (dot(&zi, &unit(&views[partner])) / tau).exp();
        total -= (num / denom).ln();
    }
    total
}

/// `P(spoof score > live score) + P(tie) / 2` over all pairs.
pub fn pairwise_auc(live: &[f64], spoof: &[f64]) -> f64 {
    let mut wins = 0.0;
    for s in spoof {
        for l in live {
            if s > l {
                wins += 1.0;
            } else if s == l {
                wins += 0.5;
            }
        }
    }
    wins / (live.len() * spoof.len()) as f64
}

/// `(FAR, FRR)` with spoof as the positive class and acceptance at `score >= t`.
pub fn rates(live: &[f64], spoof: &[f64], t: f64) -> (f64, f64) {
    let far = live.iter().filter(|&&s| s >= t).count() as f64 / live.len() as f64;
    let frr = spoof.iter().filter(|&&s| s < t).count() as f64 / spoof.len() as f64;
    (far, frr)
}

/// Smallest `|FAR - FRR|` over every distinct way of splitting the scores.
pub fn best_gap(live: &[f64], spoof: &[f64]) -> f64 {
    let mut cands: Vec<f64> = live.iter().chain(spoof).copied().collect();
    cands.push(f64::INFINITY);
    cands
        .iter()
        .map(|&t| {
            let (far, frr) = rates(live, spoof, t);
            (far - frr).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn popstd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Expected calibration error with equal-width confidence bins.
pub fn ece(scores: &[f64], spoof: &[bool], bins: usize) -> f64 {
    let mut acc = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (s, &y) in scores.iter().zip(spoof) {
        let c = s.max(1.0 - s);
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        acc[b] += if (*s >= 0.5) == y { 1.0 } else { 0.0 };
    }
    let n = scores.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (acc[b] - conf[b]).abs() / n)
        .sum()
}

/// Logits whose softmax matches the probability the labels were drawn from,
/// then multiplied by `inflation`. Returns `(logits, spoof labels)`.
pub fn inflated_logits(n: usize, inflation: f64, seed: u64) -> (Vec<[f64; 2]>, Vec<bool>) {
    let mut rng = bias_align::rng::Rng::new(seed);
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let margin = rng.uniform_in(-3.0, 3.0);
        let p_spoof = 1.0 / (1.0 + (-margin).exp());
        labels.push(rng.uniform() < p_spoof);
        logits.push([0.0, inflation * margin]);
    }
    (logits, labels)
}
