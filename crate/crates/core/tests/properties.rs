use std::collections::BTreeMap;

use bias_align::fod::{decompose, fod_loss, invariant_basis, TextAnchors};
use bias_align::groups::{partition, ClassLabel, DomainId, GroupKey, Sample};
use bias_align::gsrm::{gs_estimator, gsrm_aggregate, normalize, GroupLossTable, GsParams};
use bias_align::linalg::{dot, gram_schmidt, norm, project, Pca};
use bias_align::losses::ii_sim_loss;
use bias_align::metrics::{ece, roc_auc, ScoredSample};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

mod oracle;

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d)
}

fn key(domain: u32, spoof: bool) -> GroupKey {
    GroupKey {
        domain: DomainId(domain),
        label: if spoof {
            ClassLabel::Spoof
        } else {
            ClassLabel::Live
        },
    }
}

fn table(losses: &[f64]) -> GroupLossTable {
    let entries = losses
        .iter()
        .enumerate()
        .map(|(i, &l)| (key(i as u32 / 2, i % 2 == 1), l))
        .collect();
    GroupLossTable::from_entries(entries).unwrap()
}

fn scored(scores: &[f64], labels: &[bool]) -> Vec<ScoredSample> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &spoof))| ScoredSample {
            sample_id: i as u64,
            domain: DomainId(0),
            label: if spoof {
                ClassLabel::Spoof
            } else {
                ClassLabel::Live
            },
            score,
        })
        .collect()
}

fn both_classes(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (
        prop::collection::vec(0.0f64..1.0, n),
        prop::collection::vec(any::<bool>(), n),
    )
        .prop_filter("needs both classes", |(_, l)| {
            l.contains(&true) && l.contains(&false)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_residual_is_orthogonal((v, u) in (1usize..32).prop_flat_map(|d| (vec_of(d), vec_of(d)))) {
        prop_assume!(norm(&u) > 1e-3);
        let p = project(&v, &u).unwrap();
        let r: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
        prop_assert!(dot(&r, &u).abs() <= 1e-9 * norm(&v) * norm(&u));
    }

    #[test]
    fn gram_schmidt_is_orthonormal(
        vs in (1usize..=64).prop_flat_map(|d| prop::collection::vec(vec_of(d), 1..=8))
    ) {
        let basis = gram_schmidt(&vs, 1e-8).unwrap();
        basis.validate().unwrap();
        prop_assert!(basis.len() <= vs.len().min(vs[0].len()));
        // Every input lies in the span of the output.
        for v in &vs {
            let p = basis.project(v).unwrap();
            for (a, b) in v.iter().zip(&p) {
                prop_assert!((a - b).abs() <= 1e-7 * (1.0 + norm(v)));
            }
        }
    }

    #[test]
    fn decomposition_round_trips((live, spoof, w) in (3usize..32).prop_flat_map(|d| (vec_of(d), vec_of(d), vec_of(d)))) {
        let Ok(anchors) = TextAnchors::new(live, spoof) else { return Ok(()) };
        let Ok(basis) = invariant_basis(&anchors) else { return Ok(()) };
        let parts = decompose(&w, &basis).unwrap();
        let wn = norm(&w);
        for i in 0..w.len() {
            prop_assert!((parts.invariant[i] + parts.specific[i] - w[i]).abs() <= 1e-10 * wn.max(1e-300));
        }
        prop_assert!(dot(&parts.invariant, &parts.specific).abs() <= 1e-9 * wn * wn);
        let again = basis.project(&parts.invariant).unwrap();
        for (a, b) in again.iter().zip(&parts.invariant) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + wn));
        }
    }

    #[test]
    fn anchor_functionals_ignore_specific_part(
        (live, spoof, w, a, b) in (3usize..16).prop_flat_map(|d| (vec_of(d), vec_of(d), vec_of(d), -5.0f64..5.0, -5.0f64..5.0))
    ) {
        let Ok(anchors) = TextAnchors::new(live, spoof) else { return Ok(()) };
        let Ok(basis) = invariant_basis(&anchors) else { return Ok(()) };
        let f_s = decompose(&w, &basis).unwrap().specific;
        let functional: Vec<f64> = anchors.get(0).iter().zip(anchors.get(1)).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(dot(&functional, &f_s).abs() <= 1e-9 * (1.0 + norm(&w)) * (1.0 + norm(&functional)));
    }

    #[test]
    fn gs_estimator_is_monotone(x1 in -50.0f64..50.0, x2 in -50.0f64..50.0, alpha in 0.05f64..5.0) {
        prop_assume!(x1 < x2);
        let p = GsParams::new(alpha, 1.5).unwrap();
        // Strictness is lost only once both values saturate in floating point.
        prop_assert!(gs_estimator(x1, &p) <= gs_estimator(x2, &p));
        if (x2 - x1) / alpha > 1e-6 && x2 / alpha < 30.0 && x1 / alpha > -30.0 {
            prop_assert!(gs_estimator(x1, &p) < gs_estimator(x2, &p));
        }
    }

    #[test]
    fn normalized_losses_have_unit_moments(losses in prop::collection::vec(0.0f64..20.0, 1..12)) {
        let t = table(&losses);
        let z: Vec<f64> = normalize(&t).into_values().collect();
        if t.popstd() > 1e-12 {
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!((var - 1.0).abs() <= 1e-8);
        } else {
            prop_assert!(z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hardest_group_gets_largest_weight(losses in prop::collection::vec(0.0f64..20.0, 2..12)) {
        let t = table(&losses);
        let (_, weights) = gsrm_aggregate(&t, &GsParams::for_group_count(losses.len()).unwrap());
        let (hardest, _) = t.entries().iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let top = weights.values().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(weights[hardest], top);
    }

    #[test]
    fn zero_beta_is_plain_mean(losses in prop::collection::vec(0.0f64..20.0, 1..12)) {
        let t = table(&losses);
        let (total, _) = gsrm_aggregate(&t, &GsParams::new(1.0, 0.0).unwrap());
        let mut sum = 0.0;
        for v in t.entries().values() {
            sum += v;
        }
        prop_assert_eq!(total, sum / losses.len() as f64);
    }

    #[test]
    fn aggregate_ignores_insertion_order(losses in prop::collection::vec(0.0f64..20.0, 2..12), seed in any::<u64>()) {
        let keys: Vec<GroupKey> = (0..losses.len()).map(|i| key(i as u32 / 2, i % 2 == 1)).collect();
        let mut order: Vec<usize> = (0..losses.len()).collect();
        bias_align::rng::Rng::new(seed).shuffle(&mut order);
        let mut shuffled = BTreeMap::new();
        for &i in &order {
            shuffled.insert(keys[i], losses[i]);
        }
        let p = GsParams::for_group_count(losses.len()).unwrap();
        let a = gsrm_aggregate(&table(&losses), &p);
        let b = gsrm_aggregate(&GroupLossTable::from_entries(shuffled).unwrap(), &p);
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1, b.1);
    }

    #[test]
    fn partition_is_a_bijection(domains in prop::collection::vec((0u32..4, any::<bool>()), 0..40)) {
        let batch: Vec<Sample> = domains
            .iter()
            .enumerate()
            .map(|(i, &(d, spoof))| Sample {
                sample_id: i as u64,
                domain: DomainId(d),
                label: if spoof { ClassLabel::Spoof } else { ClassLabel::Live },
                embedding: vec![i as f64],
            })
            .collect();
        let parts = partition(&batch);
        let mut ids: Vec<u64> = parts.values().flatten().map(|s| s.sample_id).collect();
        prop_assert_eq!(ids.len(), batch.len());
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), batch.len());
        for (k, members) in &parts {
            prop_assert!(members.iter().all(|s| GroupKey::of(s) == *k));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_matches_pairwise_oracle((scores, labels) in (2usize..=200).prop_flat_map(both_classes)) {
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = scores.iter().map(|s| (s * 20.0).round() / 20.0).collect();
        let live: Vec<f64> = scores.iter().zip(&labels).filter(|p| !*p.1).map(|p| *p.0).collect();
        let spoof: Vec<f64> = scores.iter().zip(&labels).filter(|p| *p.1).map(|p| *p.0).collect();
        let auc = roc_auc(&scored(&scores, &labels)).unwrap();
        prop_assert!((auc - oracle::pairwise_auc(&live, &spoof)).abs() <= 1e-9);
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in (2usize..=100).prop_flat_map(both_classes)) {
        let a = roc_auc(&scored(&scores, &labels)).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let b = roc_auc(&scored(&squashed, &labels)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn single_bin_ece_is_accuracy_gap((scores, labels) in (1usize..=100).prop_flat_map(|n| (
        prop::collection::vec(0.0f64..1.0, n),
        prop::collection::vec(any::<bool>(), n),
    ))) {
        let samples = scored(&scores, &labels);
        let (e, _) = ece(&samples, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((e - oracle::ece(&scores, &labels, 1)).abs() <= 1e-12);
        let (e10, _) = ece(&samples, 10).unwrap();
        prop_assert!((e10 - oracle::ece(&scores, &labels, 10)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_ignore_sample_order((scores, labels) in (2usize..=60).prop_flat_map(both_classes), seed in any::<u64>()) {
        let samples = scored(&scores, &labels);
        let mut shuffled = samples.clone();
        bias_align::rng::Rng::new(seed).shuffle(&mut shuffled);
        prop_assert_eq!(roc_auc(&samples).unwrap(), roc_auc(&shuffled).unwrap());
        prop_assert_eq!(ece(&samples, 10).unwrap().0, ece(&shuffled, 10).unwrap().0);
        prop_assert_eq!(
            bias_align::metrics::eer_threshold(&samples).unwrap(),
            bias_align::metrics::eer_threshold(&shuffled).unwrap()
        );
    }

    #[test]
    fn contrastive_losses_are_nonnegative(
        (feats, domains) in (2usize..8).prop_flat_map(|n| (prop::collection::vec(vec_of(4), n), prop::collection::vec(0u32..2, n)))
    ) {
        prop_assume!(feats.iter().all(|f| norm(f) > 1e-3));
        let mut counts = [0; 2];
        domains.iter().for_each(|&d| counts[d as usize] += 1);
        prop_assume!(counts.iter().all(|&c| c != 1));
        let specifics: Vec<(Vec<f64>, DomainId)> = feats.iter().cloned().zip(domains.iter().map(|&d| DomainId(d))).collect();
        prop_assert!(fod_loss(&specifics, 0.1).unwrap() >= 0.0);
        let mut views = feats.clone();
        views.extend(feats.iter().map(|f| f.iter().map(|x| x + 0.01).collect::<Vec<_>>()));
        if views.len() >= 4 {
            prop_assert!(ii_sim_loss(&views, 0.1).unwrap() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pca_matches_dense_eigensolver(
        rows in (2usize..=8).prop_flat_map(|d| prop::collection::vec(vec_of(d), (d + 2)..40))
    ) {
        let d = rows[0].len();
        let pca = Pca::fit(&rows, d).unwrap();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(d, d, |i, j| {
            rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0)
        });
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (k, &idx) in order.iter().enumerate() {
            prop_assert!((pca.eigenvalues[k] - eig.eigenvalues[idx]).abs() <= 1e-8 * scale);
            // Vectors are only determined when the eigenvalue is isolated.
            let gap = order
                .iter()
                .filter(|&&o| o != idx)
                .map(|&o| (eig.eigenvalues[o] - eig.eigenvalues[idx]).abs())
                .fold(f64::INFINITY, f64::min);
            if gap > 1e-3 * scale {
                let reference: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
                let ours = &pca.components.vectors()[k];
                let align = dot(ours, &reference).abs();
                prop_assert!((align - 1.0).abs() <= 1e-8 * (1.0 + scale / gap));
            }
        }
    }

    #[test]
    fn pca_reconstruction_beats_random_bases(
        rows in prop::collection::vec(vec_of(6), 8..30),
        others in prop::collection::vec(prop::collection::vec(vec_of(6), 2), 5),
    ) {
        let pca = Pca::fit(&rows, 2).unwrap();
        let err = |basis: &bias_align::linalg::OrthoBasis| -> f64 {
            rows.iter()
                .map(|r| {
                    let c: Vec<f64> = r.iter().zip(&pca.mean).map(|(a, m)| a - m).collect();
                    let p = basis.project(&c).unwrap();
                    c.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .sum()
        };
        let best = err(&pca.components);
        for o in &others {
            let basis = gram_schmidt(o, 1e-6).unwrap();
            if basis.len() == 2 {
                prop_assert!(best <= err(&basis) * (1.0 + 1e-9) + 1e-9);
            }
        }
    }
}
