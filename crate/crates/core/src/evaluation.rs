//! Ground-truth vulnerability labels and the metrics that score predictors
//! against them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{average_ranks, pearson};
use crate::types::{ScoreVector, VulnerableSet};

/// One operating point: decision `score ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub tpr: f64,
    pub fpr: f64,
}

/// Exact-count ROC curve.
///
/// The first point has threshold `+∞` (nothing flagged), then one point per
/// distinct score in descending order, so the last point flags everything.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_members: usize,
    pub n_non_members: usize,
}

impl RocCurve {
    /// Highest finite threshold on the curve.
    pub fn max_score(&self) -> f64 {
        self.points.get(1).map_or(f64::INFINITY, |p| p.threshold)
    }
}

/// Sweeps every distinct score; tied scores enter together.
pub fn roc_curve(scores: &ScoreVector, membership: &[bool]) -> Result<RocCurve> {
    if scores.len() != membership.len() {
        return Err(Error::Shape(format!("{} scores but {} membership labels", scores.len(), membership.len())));
    }
    let n_pos = membership.iter().filter(|&&m| m).count();
    let n_neg = membership.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateRoc(format!("{n_pos} members and {n_neg} non-members")));
    }
    let values = scores.oriented();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, true_positives: 0, false_positives: 0, tpr: 0.0, fpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = values[order[k]];
        while k < order.len() && values[order[k]] == threshold {
            if membership[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold,
            true_positives: tp,
            false_positives: fp,
            tpr: tp as f64 / n_pos as f64,
            fpr: fp as f64 / n_neg as f64,
        });
    }
    Ok(RocCurve { points, n_members: n_pos, n_non_members: n_neg })
}

/// Threshold chosen for a target FPR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub alpha: f64,
    /// Finite threshold; when nothing may be flagged it sits just above the
    /// largest score.
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub tpr: f64,
    pub fpr: f64,
    /// Set when `alpha < 1/|D⁻|` and even the top score admits a false
    /// positive; the max-score threshold is returned anyway.
    pub below_resolution: bool,
}

/// Smallest threshold admitting at most `⌊α·|D⁻|⌋` false positives.
pub fn threshold_at_fpr(roc: &RocCurve, alpha: f64) -> Result<ThresholdChoice> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if roc.points.len() < 2 {
        return Err(Error::DegenerateRoc("curve has no finite threshold".into()));
    }
    // A tiny relative nudge keeps α·|D⁻| = 10.000000000000002 from losing a count.
    let allowed = (alpha * roc.n_non_members as f64 * (1.0 + 1e-12)).floor() as usize;
    let idx = roc.points.iter().rposition(|p| p.false_positives <= allowed).expect("first point has no positives");

    let choice = |p: &RocPoint, threshold: f64, below_resolution: bool| ThresholdChoice {
        alpha,
        threshold,
        true_positives: p.true_positives,
        false_positives: p.false_positives,
        tpr: p.tpr,
        fpr: p.fpr,
        below_resolution,
    };
    if idx > 0 {
        let p = &roc.points[idx];
        return Ok(choice(p, p.threshold, false));
    }
    let top = &roc.points[1];
    if alpha * (roc.n_non_members as f64) < 1.0 {
        return Ok(choice(top, top.threshold, true));
    }
    Ok(choice(&roc.points[0], top.threshold.next_up(), false))
}

pub fn tpr_at_fpr(roc: &RocCurve, alpha: f64) -> Result<f64> {
    Ok(threshold_at_fpr(roc, alpha)?.tpr)
}

/// Trapezoidal area under the curve.
pub fn auc(roc: &RocCurve) -> f64 {
    roc.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Members whose attack score reaches the threshold.
pub fn vulnerable_set(member_scores: &ScoreVector, threshold: f64, alpha: f64, attack_name: &str) -> VulnerableSet {
    let oriented = member_scores.oriented();
    let members = member_scores
        .sample_ids
        .iter()
        .zip(oriented)
        .filter(|(_, s)| *s >= threshold)
        .map(|(id, _)| id.clone())
        .collect();
    VulnerableSet { attack_name: attack_name.to_string(), alpha, threshold: Some(threshold), members }
}

/// Calibrates on the full member/non-member split, then labels the members.
pub fn label_vulnerable(scores: &ScoreVector, membership: &[bool], alpha: f64) -> Result<(VulnerableSet, ThresholdChoice)> {
    let roc = roc_curve(scores, membership)?;
    let choice = threshold_at_fpr(&roc, alpha)?;
    let keep: std::collections::HashSet<&str> = scores
        .sample_ids
        .iter()
        .zip(membership)
        .filter(|(_, &m)| m)
        .map(|(id, _)| id.as_str())
        .collect();
    let members = scores.restrict_to(&keep);
    Ok((vulnerable_set(&members, choice.threshold, alpha, &scores.predictor_name), choice))
}

fn same_alpha(sets: &[VulnerableSet]) -> Result<f64> {
    let first = sets.first().ok_or(Error::EmptySample)?.alpha;
    if let Some(s) = sets.iter().find(|s| s.alpha != first) {
        return Err(Error::domain(format!("mixed alpha levels {first} and {}", s.alpha)));
    }
    Ok(first)
}

/// Points flagged by any of the attacks.
pub fn union_vulnerable(sets: &[VulnerableSet]) -> Result<VulnerableSet> {
    let alpha = same_alpha(sets)?;
    let members = sets.iter().flat_map(|s| s.members.iter().cloned()).collect();
    Ok(VulnerableSet { attack_name: "union".into(), alpha, threshold: None, members })
}

/// Points flagged in at least `⌈p·N⌉` of the `N` sets (and in at least one).
///
/// A single set is returned unchanged at any `p`.
pub fn agreement_vulnerable(per_seed_sets: &[VulnerableSet], p: f64) -> Result<VulnerableSet> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("agreement fraction must lie in [0, 1], got {p}")));
    }
    let alpha = same_alpha(per_seed_sets)?;
    if let [single] = per_seed_sets {
        return Ok(single.clone());
    }
    let n = per_seed_sets.len();
    let required = agreement_count(p, n);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for set in per_seed_sets {
        for id in &set.members {
            *counts.entry(id.as_str()).or_default() += 1;
        }
    }
    let members = counts.into_iter().filter(|&(_, c)| c >= required).map(|(id, _)| id.to_string()).collect();
    Ok(VulnerableSet { attack_name: format!("agreement_{}", pct(p)), alpha, threshold: None, members })
}

/// `max(1, ⌈p·N⌉)`, robust to `0.7·10 = 7.000000000000001`.
pub fn agreement_count(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(1.0)) as usize
}

fn pct(p: f64) -> String {
    format!("{}", (p * 100.0).round())
}

/// `k = round(k_fraction · n)`, validated to lie in `[1, n]`.
pub fn k_count(k_fraction: f64, n: usize) -> Result<usize> {
    if !(k_fraction > 0.0) || !k_fraction.is_finite() {
        return Err(Error::domain(format!("k fraction must be positive, got {k_fraction}")));
    }
    let k = (k_fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::domain(format!("k = {k_fraction} of {n} rounds to zero samples")));
    }
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds the {n} scored samples")));
    }
    Ok(k)
}

/// Ids of the `k` riskiest samples; ties broken by ascending id.
pub fn top_k(scores: &ScoreVector, k: usize) -> Vec<&str> {
    let oriented = scores.oriented();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| oriented[b].total_cmp(&oriented[a]).then_with(|| scores.sample_ids[a].cmp(&scores.sample_ids[b])));
    order.into_iter().take(k).map(|i| scores.sample_ids[i].as_str()).collect()
}

/// `|top_k ∩ V|` for `k = round(k_fraction·n)`; returns `(hits, k)`.
pub fn hits_at_k(scores: &ScoreVector, v: &VulnerableSet, k_fraction: f64) -> Result<(usize, usize)> {
    let k = k_count(k_fraction, scores.len())?;
    let hits = top_k(scores, k).into_iter().filter(|id| v.contains(id)).count();
    Ok((hits, k))
}

pub fn precision_at_k(scores: &ScoreVector, v: &VulnerableSet, k_fraction: f64) -> Result<f64> {
    let (hits, k) = hits_at_k(scores, v, k_fraction)?;
    Ok(hits as f64 / k as f64)
}

pub fn recall_at_k(scores: &ScoreVector, v: &VulnerableSet, k_fraction: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::NoVulnerablePoints(v.alpha));
    }
    let (hits, _) = hits_at_k(scores, v, k_fraction)?;
    Ok(hits as f64 / v.len() as f64)
}

/// Best recall any ranking can reach: `min(1, k / |V|)`.
pub fn max_recall_at_k(n_members: usize, n_vulnerable: usize, k_fraction: f64) -> Result<f64> {
    if n_vulnerable == 0 {
        return Err(Error::NoVulnerablePoints(f64::NAN));
    }
    let k = (k_fraction * n_members as f64).round();
    Ok((k / n_vulnerable as f64).min(1.0))
}

/// Tie-aware Spearman correlation between two score vectors over the same ids.
pub fn spearman(a: &ScoreVector, b: &ScoreVector) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::domain("spearman needs at least two samples"));
    }
    let b = b.aligned_to(&a.sample_ids)?;
    let ra = average_ranks(&a.oriented())?;
    let rb = average_ranks(&b.oriented())?;
    pearson(&ra, &rb).ok_or(Error::ConstantRanking)
}

/// Precision/recall of one predictor at one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k_fraction: f64,
    pub k: usize,
    pub hits: usize,
    pub precision: f64,
    pub recall: Option<f64>,
    pub max_recall: Option<f64>,
}

/// Evaluation of one predictor against one vulnerable set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub label_source: String,
    pub alpha: f64,
    pub n_members: usize,
    pub n_vulnerable: usize,
    pub per_k: Vec<KMetrics>,
    pub spearman: Option<f64>,
    pub excluded: usize,
}

/// Scores a predictor against `v`. The predictor is restricted to `scored`
/// (the members the label source could score) before ranking; members outside
/// it are counted as excluded.
pub fn evaluate_predictor(
    predictor: &ScoreVector,
    v: &VulnerableSet,
    k_fractions: &[f64],
    label_scores: Option<&ScoreVector>,
) -> Result<EvalReport> {
    let (predictor, excluded) = match label_scores {
        Some(labels) => {
            let keep: std::collections::HashSet<&str> = labels.sample_ids.iter().map(String::as_str).collect();
            let restricted = predictor.restrict_to(&keep);
            let dropped = predictor.len() - restricted.len();
            (restricted, dropped)
        }
        None => (predictor.clone(), 0),
    };
    let n = predictor.len();
    let mut per_k = Vec::with_capacity(k_fractions.len());
    for &kf in k_fractions {
        let (hits, k) = hits_at_k(&predictor, v, kf)?;
        let (recall, max_recall) = if v.is_empty() {
            (None, None)
        } else {
            (Some(hits as f64 / v.len() as f64), Some(max_recall_at_k(n, v.len(), kf)?))
        };
        per_k.push(KMetrics { k_fraction: kf, k, hits, precision: hits as f64 / k as f64, recall, max_recall });
    }
    let spearman = match label_scores {
        Some(labels) => {
            let labels = labels.aligned_to(&predictor.sample_ids)?;
            spearman(&predictor, &labels).ok()
        }
        None => None,
    };
    Ok(EvalReport {
        predictor: predictor.predictor_name.clone(),
        label_source: v.attack_name.clone(),
        alpha: v.alpha,
        n_members: n,
        n_vulnerable: v.len(),
        per_k,
        spearman,
        excluded,
    })
}

/// Members shared between two sets, by id.
pub fn overlap(a: &VulnerableSet, b: &VulnerableSet) -> BTreeSet<String> {
    a.members.intersection(&b.members).cloned().collect()
}

/// Index of ids for quick membership lookups.
pub fn id_index(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    fn sv(scores: Vec<f64>) -> ScoreVector {
        ScoreVector::new("p", ids(scores.len()), scores, true).unwrap()
    }

    fn vset(members: &[&str]) -> VulnerableSet {
        VulnerableSet {
            attack_name: "a".into(),
            alpha: 0.01,
            threshold: None,
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// O(n²) recount: at each distinct score, count labels with score ≥ τ.
    fn roc_oracle(scores: &[f64], membership: &[bool]) -> Vec<(f64, usize, usize)> {
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
        distinct.dedup();
        distinct
            .into_iter()
            .map(|t| {
                let tp = (0..scores.len()).filter(|&i| membership[i] && scores[i] >= t).count();
                let fp = (0..scores.len()).filter(|&i| !membership[i] && scores[i] >= t).count();
                (t, tp, fp)
            })
            .collect()
    }

    #[test]
    fn roc_separated_and_constant() {
        let s = sv(vec![0.9, 0.8, 0.7, 0.1, 0.2]);
        let m = [true, true, true, false, false];
        let roc = roc_curve(&s, &m).unwrap();
        assert_eq!(auc(&roc), 1.0);
        assert_eq!(roc.points.first().unwrap().tpr, 0.0);
        assert_eq!((roc.points.last().unwrap().tpr, roc.points.last().unwrap().fpr), (1.0, 1.0));

        let flat = roc_curve(&sv(vec![0.3; 6]), &[true, false, true, false, true, false]).unwrap();
        assert_eq!(flat.points.len(), 2);
        assert_eq!(auc(&flat), 0.5);
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(matches!(roc_curve(&sv(vec![1.0, 2.0]), &[true, true]), Err(Error::DegenerateRoc(_))));
    }

    #[test]
    fn roc_matches_recount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = rng.gen_range(2..500);
            // coarse grid to force ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..40) as f64) / 4.0).collect();
            let mut membership: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            membership[0] = true;
            membership[1] = false;
            let roc = roc_curve(&sv(scores.clone()), &membership).unwrap();
            let oracle = roc_oracle(&scores, &membership);
            assert_eq!(roc.points.len(), oracle.len() + 1);
            for (p, &(t, tp, fp)) in roc.points[1..].iter().zip(&oracle) {
                assert_eq!((p.threshold, p.true_positives, p.false_positives), (t, tp, fp));
            }
        }
    }

    #[test]
    fn threshold_admits_floor_alpha_false_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1000;
        let mut scores: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
        let membership: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
        for s in scores.iter_mut().take(n) {
            *s += 0.3;
        }
        let roc = roc_curve(&sv(scores.clone()), &membership).unwrap();
        let c = threshold_at_fpr(&roc, 1e-2).unwrap();
        let fp = (n..2 * n).filter(|&i| scores[i] >= c.threshold).count();
        assert_eq!(fp, c.false_positives);
        assert!(fp <= 10);
        // the next lower distinct score would admit too many
        let lower = scores.iter().copied().filter(|&s| s < c.threshold).fold(f64::NEG_INFINITY, f64::max);
        let fp_lower = (n..2 * n).filter(|&i| scores[i] >= lower).count();
        assert!(fp_lower > 10);
        assert!(!c.below_resolution);
    }

    #[test]
    fn threshold_rejects_bad_alpha() {
        let roc = roc_curve(&sv(vec![1.0, 0.0]), &[true, false]).unwrap();
        assert!(matches!(threshold_at_fpr(&roc, 1.0), Err(Error::Domain(_))));
        assert!(matches!(threshold_at_fpr(&roc, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn threshold_in_separated_case_is_smallest_member_score() {
        let s = sv(vec![0.9, 0.8, 0.7, 0.1, 0.2]);
        let roc = roc_curve(&s, &[true, true, true, false, false]).unwrap();
        for alpha in [1e-3, 0.2, 0.6] {
            let c = threshold_at_fpr(&roc, alpha).unwrap();
            if alpha < 0.5 {
                assert_eq!(c.threshold, 0.7);
                assert_eq!(tpr_at_fpr(&roc, alpha).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn threshold_below_resolution_flags() {
        // top score is a non-member and alpha < 1/|D-|
        let s = sv(vec![0.5, 0.4, 0.9, 0.1]);
        let roc = roc_curve(&s, &[true, true, false, false]).unwrap();
        let c = threshold_at_fpr(&roc, 0.1).unwrap();
        assert!(c.below_resolution);
        assert_eq!(c.threshold, 0.9);
        // alpha above resolution but top tie group over budget: nothing flagged
        let s = sv(vec![0.9, 0.9, 0.9, 0.1, 0.2, 0.3]);
        let roc = roc_curve(&s, &[true, false, false, true, false, false]).unwrap();
        let c = threshold_at_fpr(&roc, 0.3).unwrap();
        assert!(!c.below_resolution);
        assert_eq!(c.true_positives, 0);
        assert!(c.threshold > 0.9);
    }

    #[test]
    fn auc_hand_computed_step() {
        // order: m, n, m, n -> points (0,0) (.5,0) (.5,.5) (1,.5) (1,1)
        let s = sv(vec![4.0, 3.0, 2.0, 1.0]);
        let roc = roc_curve(&s, &[true, false, true, false]).unwrap();
        assert!((auc(&roc) - 0.75).abs() < 1e-15);
        // tie group of one member and one non-member contributes a triangle
        let s = sv(vec![3.0, 2.0, 2.0, 1.0]);
        let roc = roc_curve(&s, &[true, true, false, false]).unwrap();
        // (0,0)->(0,.5)->(.5,1)->(1,1): 0 + .5*(.5+1)/2 + .5*1 = 0.875
        assert!((auc(&roc) - 0.875).abs() < 1e-15);
    }

    #[test]
    fn vulnerable_set_cases() {
        let s = sv(vec![0.5, 0.7, 0.9]);
        assert!(vulnerable_set(&s, 1.0, 0.01, "lira").is_empty());
        assert_eq!(vulnerable_set(&s, f64::NEG_INFINITY, 0.01, "lira").len(), 3);
        let v = vulnerable_set(&s, 0.7, 0.01, "lira");
        assert_eq!(v.members.iter().cloned().collect::<Vec<_>>(), vec!["s001", "s002"]);
    }

    #[test]
    fn vulnerable_count_equals_tpr_times_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scores: Vec<f64> = (0..400).map(|i| rng.gen::<f64>() + if i < 200 { 0.2 } else { 0.0 }).collect();
        let membership: Vec<bool> = (0..400).map(|i| i < 200).collect();
        let all = sv(scores);
        let (v, choice) = label_vulnerable(&all, &membership, 0.05).unwrap();
        assert_eq!(v.len(), choice.true_positives);
        assert_eq!(v.len() as f64, choice.tpr * 200.0);
        // re-applying the threshold reproduces the set
        let recount: BTreeSet<String> = (0..200).filter(|&i| all.scores[i] >= v.threshold.unwrap()).map(|i| all.sample_ids[i].clone()).collect();
        assert_eq!(recount, v.members);
    }

    #[test]
    fn union_cases() {
        let a = vset(&["a", "b", "c"]);
        let b = vset(&["d", "e", "f", "g"]);
        assert_eq!(union_vulnerable(&[a.clone(), b]).unwrap().len(), 7);
        assert_eq!(union_vulnerable(&[a.clone(), a.clone()]).unwrap().members, a.members);
        let other = VulnerableSet { alpha: 0.001, ..a.clone() };
        assert!(union_vulnerable(&[a, other]).is_err());
    }

    #[test]
    fn union_share_outside_one_attack() {
        // 93 of 100 union points are also flagged by "lira"
        let lira_ids: Vec<String> = (0..93).map(|i| format!("x{i:03}")).collect();
        let other_ids: Vec<String> = (50..100).map(|i| format!("x{i:03}")).collect();
        let mk = |name: &str, ids: &[String]| VulnerableSet {
            attack_name: name.into(),
            alpha: 1e-3,
            threshold: None,
            members: ids.iter().cloned().collect(),
        };
        let lira = mk("lira", &lira_ids);
        let u = union_vulnerable(&[lira.clone(), mk("rmia", &other_ids)]).unwrap();
        let outside = u.members.difference(&lira.members).count();
        assert!((outside as f64 / u.len() as f64 - 0.07).abs() < 1e-12);
    }

    #[test]
    fn agreement_cases() {
        let single = vset(&["a", "b"]);
        assert_eq!(agreement_vulnerable(&[single.clone()], 1.0).unwrap(), single);
        let got = agreement_vulnerable(&[vset(&["a", "b"]), vset(&["b", "c"])], 1.0).unwrap();
        assert_eq!(got.members.into_iter().collect::<Vec<_>>(), vec!["b"]);
        assert!(agreement_vulnerable(&[], 0.5).is_err());
        assert_eq!(agreement_count(0.7, 10), 7);
        assert_eq!(agreement_count(0.0, 10), 1);
    }

    #[test]
    fn agreement_low_p_is_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let universe: Vec<String> = ids(30);
        let sets: Vec<VulnerableSet> = (0..10)
            .map(|_| {
                let m: Vec<&str> = universe.iter().filter(|_| rng.gen_bool(0.2)).map(String::as_str).collect();
                vset(&m)
            })
            .collect();
        let got = agreement_vulnerable(&sets, 0.1).unwrap();
        let oracle: BTreeSet<String> =
            universe.iter().filter(|id| sets.iter().filter(|s| s.contains(id)).count() >= 1).cloned().collect();
        assert_eq!(got.members, oracle);
    }

    #[test]
    fn precision_and_recall_examples() {
        let s = sv(vec![5.0, 4.0, 3.0, 2.0, 1.0]);
        let v = vset(&["s000", "s002"]);
        assert_eq!(precision_at_k(&s, &v, 0.4).unwrap(), 0.5);
        let all = vset(&["s000", "s001", "s002", "s003", "s004"]);
        assert_eq!(precision_at_k(&s, &all, 0.6).unwrap(), 1.0);
        assert_eq!(recall_at_k(&s, &vset(&["s000"]), 0.4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&s, &vset(&["s004"]), 0.4).unwrap(), 0.0);
        assert!(matches!(recall_at_k(&s, &vset(&[]), 0.4), Err(Error::NoVulnerablePoints(_))));
        assert!(precision_at_k(&s, &v, 1.5).is_err());
        assert!(precision_at_k(&s, &v, 0.01).is_err());
    }

    #[test]
    fn precision_breaks_ties_by_id() {
        let s = ScoreVector::new("p", vec!["b".into(), "a".into(), "c".into()], vec![1.0, 1.0, 1.0], true).unwrap();
        assert_eq!(top_k(&s, 2), vec!["a", "b"]);
        let flipped = ScoreVector { higher_is_riskier: false, ..sv(vec![3.0, 1.0, 2.0]) };
        assert_eq!(top_k(&flipped, 1), vec!["s001"]);
    }

    #[test]
    fn precision_matches_set_intersection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.gen_range(5..200);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64).collect();
            let s = sv(scores.clone());
            let members: Vec<String> = ids(n).into_iter().filter(|_| rng.gen_bool(0.3)).collect();
            let v = VulnerableSet { attack_name: "a".into(), alpha: 0.1, threshold: None, members: members.into_iter().collect() };
            let kf = rng.gen_range(0.05..1.0);
            let k = ((kf * n as f64).round() as usize).max(1);
            let kf = k as f64 / n as f64;
            // exhaustive: pick top-k via repeated max extraction
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut chosen = Vec::new();
            for _ in 0..k {
                let best = *remaining
                    .iter()
                    .max_by(|&&a, &&b| scores[a].partial_cmp(&scores[b]).unwrap().then(b.cmp(&a)))
                    .unwrap();
                remaining.retain(|&i| i != best);
                chosen.push(best);
            }
            let hits = chosen.iter().filter(|&&i| v.contains(&format!("s{i:03}"))).count();
            assert_eq!(precision_at_k(&s, &v, kf).unwrap(), hits as f64 / k as f64);
            if !v.is_empty() {
                let r = recall_at_k(&s, &v, kf).unwrap();
                assert!((r * v.len() as f64 - hits as f64).abs() < 1e-9);
                assert!(r <= max_recall_at_k(n, v.len(), kf).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn max_recall_values() {
        assert!((max_recall_at_k(25000, 2435, 0.01).unwrap() - 250.0 / 2435.0).abs() < 1e-15);
        assert_eq!(max_recall_at_k(100, 3, 0.05).unwrap(), 1.0);
        assert_eq!((max_recall_at_k(25000, 2435, 0.03).unwrap() * 100.0).round() / 100.0, 0.31);
    }

    #[test]
    fn spearman_examples() {
        let a = sv(vec![1.0, 2.0, 3.0, 4.0]);
        assert!((spearman(&a, &sv(vec![10.0, 20.0, 30.0, 40.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &sv(vec![4.0, 3.0, 2.0, 1.0])).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&a, &sv(vec![1.0; 4])), Err(Error::ConstantRanking));
    }

    /// Pearson on tie-averaged ranks, written out directly.
    fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let less = v.iter().filter(|y| *y < x).count() as f64;
                    let equal = v.iter().filter(|y| *y == x).count() as f64;
                    less + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spearman_matches_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..300 {
            let n = rng.gen_range(3..80);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let oracle = spearman_oracle(&a, &b);
            if !oracle.is_finite() {
                continue;
            }
            assert!((spearman(&sv(a), &sv(b)).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn permuted_labels_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 2000;
        let scores: Vec<f64> = (0..n).map(|i| rng.gen::<f64>() + if i < n / 2 { 1.0 } else { 0.0 }).collect();
        let mut labels: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
        for _ in 0..10 {
            labels.shuffle(&mut rng);
            let a = auc(&roc_curve(&sv(scores.clone()), &labels).unwrap());
            assert!((a - 0.5).abs() < 3.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn evaluate_predictor_restricts_to_scored_members() {
        let predictor = sv(vec![5.0, 4.0, 3.0, 2.0]);
        let labels = ScoreVector::new("lira", vec!["s000".into(), "s001".into(), "s003".into()], vec![1.0, 0.0, 2.0], true).unwrap();
        let v = vset(&["s000", "s003"]);
        let report = evaluate_predictor(&predictor, &v, &[0.34, 1.0], Some(&labels)).unwrap();
        assert_eq!(report.excluded, 1);
        assert_eq!(report.n_members, 3);
        assert_eq!(report.per_k[0].k, 1);
        assert_eq!(report.per_k[0].precision, 1.0);
        assert_eq!(report.per_k[1].recall, Some(1.0));
        for m in &report.per_k {
            assert!(m.recall.unwrap() <= m.max_recall.unwrap());
            assert_eq!((m.precision * m.k as f64).round() as usize, m.hits);
        }
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_monotone_transform(
            raw in prop::collection::vec(-5.0f64..5.0, 10..60),
            labels_seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(labels_seed);
            let n = raw.len();
            let mut membership: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            membership[0] = true;
            membership[1] = false;
            let a = sv(raw.clone());
            let b = sv(raw.iter().map(|x| x.exp() * 3.0 + 1.0).collect());
            let (roc_a, roc_b) = (roc_curve(&a, &membership).unwrap(), roc_curve(&b, &membership).unwrap());
            prop_assert!((auc(&roc_a) - auc(&roc_b)).abs() < 1e-12);
            let (va, _) = label_vulnerable(&a, &membership, 0.2).unwrap();
            let (vb, _) = label_vulnerable(&b, &membership, 0.2).unwrap();
            prop_assert_eq!(&va.members, &vb.members);
            let other = sv((0..n).map(|_| rng.gen::<f64>()).collect());
            prop_assert_eq!(precision_at_k(&a, &vb, 0.3).unwrap(), precision_at_k(&b, &vb, 0.3).unwrap());
            if let (Ok(x), Ok(y)) = (spearman(&a, &other), spearman(&b, &other)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn agreement_is_antitone(seed in 0u64..500, p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let universe = ids(12);
            let sets: Vec<VulnerableSet> = (0..rng.gen_range(2..7))
                .map(|_| {
                    let m: Vec<&str> = universe.iter().filter(|_| rng.gen_bool(0.4)).map(String::as_str).collect();
                    vset(&m)
                })
                .collect();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = agreement_vulnerable(&sets, lo).unwrap();
            let b = agreement_vulnerable(&sets, hi).unwrap();
            prop_assert!(b.members.is_subset(&a.members));
        }
    }
}
