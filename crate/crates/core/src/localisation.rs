//! Localisation metrics: how much of a saliency map's "hot" mass or ranking
//! falls inside a ground-truth segmentation mask.
//!
//! All five metrics are rank or ratio statistics over the positive part of
//! the map, so they are invariant to scaling the map by any c > 0. Ties in
//! pixel values always resolve to the lower linear index (row-major), the
//! same rule the rest of the crate uses.

use serde::{Deserialize, Serialize};

use crate::attribution::{Aggregation, SaliencyMap};
use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::order::{argmax_f32, argsort_desc_f32};

/// Default pixel budget for top-k intersection, clipped per sample to the
/// image's pixel count.
pub const DEFAULT_TOP_K: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocMetric {
    PointingGame,
    AttributionLocalisation,
    TopKIntersection,
    RelevanceRankAccuracy,
    Auc,
}

impl LocMetric {
    pub const ALL: [LocMetric; 5] = [
        LocMetric::PointingGame,
        LocMetric::AttributionLocalisation,
        LocMetric::TopKIntersection,
        LocMetric::RelevanceRankAccuracy,
        LocMetric::Auc,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            LocMetric::PointingGame => "pointing-game",
            LocMetric::AttributionLocalisation => "attribution-localisation",
            LocMetric::TopKIntersection => "top-k-intersection",
            LocMetric::RelevanceRankAccuracy => "relevance-rank-accuracy",
            LocMetric::Auc => "auc",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            LocMetric::PointingGame => "Pointing Game",
            LocMetric::AttributionLocalisation => "Attribution Localisation",
            LocMetric::TopKIntersection => "Top-K Intersection",
            LocMetric::RelevanceRankAccuracy => "Relevance Rank Accuracy",
            LocMetric::Auc => "AUC",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalisationConfig {
    /// Requested k for top-k intersection (clipped per sample).
    pub k: usize,
}

impl Default for LocalisationConfig {
    fn default() -> Self {
        LocalisationConfig { k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalisationResult {
    pub metric: LocMetric,
    /// One score in [0, 1] per non-skipped sample.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub samples: usize,
    /// Samples excluded because the metric was undefined for them
    /// (e.g. empty mask, zero positive mass).
    pub skipped: usize,
    pub k: usize,
    pub aggregation: Aggregation,
}

fn check_lens(map: &[f32], mask: &[bool]) -> Result<()> {
    if map.len() != mask.len() {
        return Err(Error::shape_mismatch("localisation", &[map.len()], &[mask.len()]));
    }
    Ok(())
}

fn mask_area(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// 1 iff the map's argmax pixel (ties -> lowest linear index) is in the mask.
pub fn pointing_game(map: &[f32], mask: &[bool]) -> Result<f64> {
    check_lens(map, mask)?;
    if mask_area(mask) == 0 {
        return Err(Error::Degenerate("pointing game on an empty mask".into()));
    }
    Ok(if mask[argmax_f32(map)] { 1.0 } else { 0.0 })
}

/// Fraction of the map's positive mass inside the mask.
pub fn attribution_localisation(map: &[f32], mask: &[bool]) -> Result<f64> {
    check_lens(map, mask)?;
    if mask_area(mask) == 0 {
        return Err(Error::Degenerate(
            "attribution localisation on an empty mask".into(),
        ));
    }
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (&v, &m) in map.iter().zip(mask) {
        let p = v.max(0.0) as f64;
        total += p;
        if m {
            inside += p;
        }
    }
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "degenerate map: zero total positive mass".into(),
        ));
    }
    Ok(inside / total)
}

/// |top-k pixels ∩ mask| / k, ranking by value descending, ties -> lower
/// linear index.
pub fn top_k_intersection(map: &[f32], mask: &[bool], k: usize) -> Result<f64> {
    check_lens(map, mask)?;
    if k == 0 || k > map.len() {
        return Err(Error::invalid_argument(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            map.len()
        )));
    }
    let order = argsort_desc_f32(map);
    let hits = order[..k].iter().filter(|&&i| mask[i]).count();
    Ok(hits as f64 / k as f64)
}

/// top_k_intersection with k = |mask|.
pub fn relevance_rank_accuracy(map: &[f32], mask: &[bool]) -> Result<f64> {
    check_lens(map, mask)?;
    let area = mask_area(mask);
    if area == 0 {
        return Err(Error::Degenerate(
            "relevance rank accuracy on an empty mask".into(),
        ));
    }
    top_k_intersection(map, mask, area)
}

/// ROC-AUC with map values as scores and mask membership as the positive
/// label; ties handled by average rank (Mann-Whitney U).
pub fn localisation_auc(map: &[f32], mask: &[bool]) -> Result<f64> {
    check_lens(map, mask)?;
    let pos = mask_area(mask);
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!(
            "AUC needs both classes; mask covers {pos} of {} pixels",
            mask.len()
        )));
    }
    let n = map.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| map[a].total_cmp(&map[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && map[idx[j + 1]] == map[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &t in &idx[i..=j] {
            if mask[t] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

fn score_one(metric: LocMetric, map: &[f32], mask: &[bool], k: usize) -> Result<f64> {
    match metric {
        LocMetric::PointingGame => pointing_game(map, mask),
        LocMetric::AttributionLocalisation => attribution_localisation(map, mask),
        LocMetric::TopKIntersection => top_k_intersection(map, mask, k.min(map.len())),
        LocMetric::RelevanceRankAccuracy => relevance_rank_accuracy(map, mask),
        LocMetric::Auc => localisation_auc(map, mask),
    }
}

fn kahan_mean(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum / xs.len() as f64
}

/// All five metrics over aligned map/mask lists. Samples where a metric is
/// undefined are excluded from that metric and counted in `skipped`; a metric
/// with no valid sample at all fails the whole evaluation.
pub fn evaluate_localisation(
    maps: &[SaliencyMap],
    masks: &[SegMask],
    cfg: &LocalisationConfig,
) -> Result<Vec<LocalisationResult>> {
    if maps.len() != masks.len() {
        return Err(Error::shape_mismatch(
            "localisation lists",
            &[maps.len()],
            &[masks.len()],
        ));
    }
    if maps.is_empty() {
        return Err(Error::invalid_argument("no samples to evaluate"));
    }
    if cfg.k == 0 {
        return Err(Error::invalid_argument("top-k budget must be at least 1"));
    }
    let aggregation = maps[0].aggregation;
    let mut per_metric: Vec<(Vec<f64>, usize)> = vec![(Vec::new(), 0); LocMetric::ALL.len()];
    for (map, mask) in maps.iter().zip(masks) {
        if (map.width, map.height) != (mask.width, mask.height) {
            return Err(Error::shape_mismatch(
                "map vs mask",
                &[map.height, map.width],
                &[mask.height, mask.width],
            ));
        }
        let union = mask.union();
        for (slot, metric) in per_metric.iter_mut().zip(LocMetric::ALL) {
            match score_one(metric, &map.values, &union, cfg.k) {
                Ok(score) => slot.0.push(score),
                Err(_) => slot.1 += 1,
            }
        }
    }
    let mut out = Vec::with_capacity(LocMetric::ALL.len());
    for ((scores, skipped), metric) in per_metric.into_iter().zip(LocMetric::ALL) {
        if scores.is_empty() {
            return Err(Error::Degenerate(format!(
                "{}: all {} samples were skipped",
                metric.id(),
                masks.len()
            )));
        }
        let mean = kahan_mean(&scores);
        out.push(LocalisationResult {
            metric,
            samples: scores.len(),
            scores,
            mean,
            skipped,
            k: cfg.k,
            aggregation,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use crate::mask::Part;
    use crate::rng::{RngStream, StreamId};

    fn mask_of(len: usize, on: &[usize]) -> Vec<bool> {
        let mut m = vec![false; len];
        for &i in on {
            m[i] = true;
        }
        m
    }

    #[test]
    fn pointing_game_examples() {
        // map [[0,1],[0,0]], mask {(0,1)} -> linear index 1
        assert_eq!(pointing_game(&[0.0, 1.0, 0.0, 0.0], &mask_of(4, &[1])).unwrap(), 1.0);
        assert_eq!(pointing_game(&[2.0, 1.0, 0.0, 0.0], &mask_of(4, &[1])).unwrap(), 0.0);
        // uniform map: tie rule picks linear index 0
        assert_eq!(pointing_game(&[1.0; 4], &mask_of(4, &[0])).unwrap(), 1.0);
        assert_eq!(pointing_game(&[1.0; 4], &mask_of(4, &[2])).unwrap(), 0.0);
        assert!(pointing_game(&[1.0; 4], &[false; 4]).is_err());
    }

    #[test]
    fn attribution_localisation_examples() {
        let half = mask_of(4, &[0, 1]);
        assert_eq!(attribution_localisation(&[1.0; 4], &half).unwrap(), 0.5);
        // [[3,-1],[1,0]], mask {(0,0)}: 3 / (3 + 1) with negatives dropped
        assert_eq!(
            attribution_localisation(&[3.0, -1.0, 1.0, 0.0], &mask_of(4, &[0])).unwrap(),
            0.75
        );
        assert!(attribution_localisation(&[0.0; 4], &half).is_err());
        assert!(attribution_localisation(&[-1.0; 4], &half).is_err());
        assert!(attribution_localisation(&[1.0; 4], &[false; 4]).is_err());
    }

    #[test]
    fn top_k_examples() {
        let map = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(top_k_intersection(&map, &mask_of(4, &[0, 1]), 2).unwrap(), 1.0);
        assert_eq!(top_k_intersection(&map, &mask_of(4, &[2, 3]), 2).unwrap(), 0.0);
        // uniform: ties select indices 0, 1
        assert_eq!(top_k_intersection(&[1.0; 4], &mask_of(4, &[0, 3]), 2).unwrap(), 0.5);
        assert!(top_k_intersection(&map, &mask_of(4, &[0]), 0).is_err());
        assert!(top_k_intersection(&map, &mask_of(4, &[0]), 5).is_err());
    }

    #[test]
    fn rank_accuracy_examples() {
        let mask = mask_of(6, &[1, 4]);
        let indicator: Vec<f32> = mask.iter().map(|&b| b as u8 as f32).collect();
        assert_eq!(relevance_rank_accuracy(&indicator, &mask).unwrap(), 1.0);
        let inverted: Vec<f32> = mask.iter().map(|&b| !b as u8 as f32).collect();
        assert_eq!(relevance_rank_accuracy(&inverted, &mask).unwrap(), 0.0);
        assert!(relevance_rank_accuracy(&indicator, &[false; 6]).is_err());
    }

    #[test]
    fn rank_accuracy_matches_sort_oracle_and_topk() {
        let mut rng = RngStream::new(3, StreamId::Probe);
        for _ in 0..50 {
            let map: Vec<f32> = (0..16).map(|_| rng.uniform_f32(-1.0, 1.0)).collect();
            let mask: Vec<bool> = (0..16).map(|_| rng.bernoulli(0.4)).collect();
            let area = mask.iter().filter(|&&b| b).count();
            if area == 0 {
                continue;
            }
            let got = relevance_rank_accuracy(&map, &mask).unwrap();
            // oracle: full sort, count mask membership in the first |mask| slots
            let mut order: Vec<usize> = (0..16).collect();
            order.sort_by(|&a, &b| map[b].total_cmp(&map[a]).then(a.cmp(&b)));
            let hits = order[..area].iter().filter(|&&i| mask[i]).count();
            assert_eq!(got, hits as f64 / area as f64);
            assert_eq!(got, top_k_intersection(&map, &mask, area).unwrap());
        }
    }

    fn auc_pairwise_oracle(scores: &[f32], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0u64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs as f64
    }

    #[test]
    fn auc_examples() {
        let mask = mask_of(5, &[0, 2]);
        let indicator: Vec<f32> = mask.iter().map(|&b| b as u8 as f32).collect();
        assert_eq!(localisation_auc(&indicator, &mask).unwrap(), 1.0);
        let inverted: Vec<f32> = indicator.iter().map(|v| 1.0 - v).collect();
        assert_eq!(localisation_auc(&inverted, &mask).unwrap(), 0.0);
        // hand value via (wins + 0.5 * ties) / (pos * neg)
        let auc = localisation_auc(&[3.0, 3.0, 1.0, 0.0], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.625);
        assert!(localisation_auc(&[1.0; 4], &[false; 4]).is_err());
        assert!(localisation_auc(&[1.0; 4], &[true; 4]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = RngStream::new(17, StreamId::Probe);
        for round in 0..60 {
            let n = rng.range_inclusive(4, 64);
            // quantized values force plenty of ties
            let map: Vec<f32> = (0..n).map(|_| rng.range_inclusive(0, 5) as f32).collect();
            let mask: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            let pos = mask.iter().filter(|&&b| b).count();
            if pos == 0 || pos == n {
                continue;
            }
            let got = localisation_auc(&map, &mask).unwrap();
            let want = auc_pairwise_oracle(&map, &mask);
            assert!((got - want).abs() <= 1e-9, "round {round}: {got} vs {want}");
        }
    }

    #[test]
    fn all_metrics_scale_invariant() {
        let mut rng = RngStream::new(29, StreamId::Probe);
        let map: Vec<f32> = (0..25).map(|_| rng.uniform_f32(-1.0, 1.0)).collect();
        let mask: Vec<bool> = (0..25).map(|i| i % 3 == 0).collect();
        for c in [0.5f32, 3.0] {
            let scaled: Vec<f32> = map.iter().map(|v| v * c).collect();
            assert_eq!(
                pointing_game(&map, &mask).unwrap(),
                pointing_game(&scaled, &mask).unwrap()
            );
            assert!(
                (attribution_localisation(&map, &mask).unwrap()
                    - attribution_localisation(&scaled, &mask).unwrap())
                .abs()
                    < 1e-12
            );
            assert_eq!(
                top_k_intersection(&map, &mask, 7).unwrap(),
                top_k_intersection(&scaled, &mask, 7).unwrap()
            );
            assert_eq!(
                relevance_rank_accuracy(&map, &mask).unwrap(),
                relevance_rank_accuracy(&scaled, &mask).unwrap()
            );
            assert_eq!(
                localisation_auc(&map, &mask).unwrap(),
                localisation_auc(&scaled, &mask).unwrap()
            );
        }
    }

    #[test]
    fn pointing_hit_implies_top1_hit() {
        let mut rng = RngStream::new(31, StreamId::Probe);
        for _ in 0..30 {
            let map: Vec<f32> = (0..12).map(|_| rng.range_inclusive(0, 3) as f32).collect();
            let mask: Vec<bool> = (0..12).map(|_| rng.bernoulli(0.3)).collect();
            if mask.iter().all(|&b| !b) {
                continue;
            }
            if pointing_game(&map, &mask).unwrap() == 1.0 {
                assert_eq!(top_k_intersection(&map, &mask, 1).unwrap(), 1.0);
            }
        }
    }

    fn map_from(values: Vec<f32>, w: usize, h: usize) -> SaliencyMap {
        SaliencyMap {
            width: w,
            height: h,
            values,
            method: Method::Gradient,
            label: 0,
            aggregation: Aggregation::Positive,
        }
    }

    fn seg_with_head(w: usize, h: usize, on: &[(usize, usize)]) -> SegMask {
        let mut m = SegMask::background(w, h);
        for &(x, y) in on {
            m.set(x, y, Part::Head);
        }
        m
    }

    #[test]
    fn evaluate_means_and_skips() {
        // sample 1 scores pointing 1, sample 2 scores 0 -> mean 0.5
        let maps = vec![
            map_from(vec![0.0, 1.0, 0.0, 0.0], 2, 2),
            map_from(vec![2.0, 1.0, 0.0, 0.0], 2, 2),
        ];
        let masks = vec![
            seg_with_head(2, 2, &[(1, 0)]),
            seg_with_head(2, 2, &[(1, 0)]),
        ];
        let res = evaluate_localisation(&maps, &masks, &LocalisationConfig::default()).unwrap();
        let pg = res.iter().find(|r| r.metric == LocMetric::PointingGame).unwrap();
        assert_eq!(pg.scores, vec![1.0, 0.0]);
        assert_eq!(pg.mean, 0.5);
        assert_eq!((pg.samples, pg.skipped), (2, 0));
        // k is clipped to the 4-pixel image: top-4 of anything covers the mask
        let tk = res.iter().find(|r| r.metric == LocMetric::TopKIntersection).unwrap();
        assert_eq!(tk.mean, 0.25);
        assert_eq!(tk.k, DEFAULT_TOP_K);
    }

    #[test]
    fn evaluate_skips_degenerate_samples() {
        let maps = vec![
            map_from(vec![0.0, 1.0, 0.0, 0.0], 2, 2),
            map_from(vec![1.0, 0.0, 0.0, 0.0], 2, 2),
        ];
        // second mask empty: every metric but top-k skips it
        let masks = vec![
            seg_with_head(2, 2, &[(1, 0)]),
            SegMask::background(2, 2),
        ];
        let res = evaluate_localisation(&maps, &masks, &LocalisationConfig { k: 2 }).unwrap();
        for r in &res {
            if r.metric == LocMetric::TopKIntersection {
                assert_eq!((r.samples, r.skipped), (2, 0));
            } else {
                assert_eq!((r.samples, r.skipped), (1, 1), "{}", r.metric.id());
            }
        }
    }

    #[test]
    fn evaluate_rejects_all_skipped_and_misalignment() {
        let maps = vec![map_from(vec![1.0; 4], 2, 2)];
        let empty = vec![SegMask::background(2, 2)];
        assert!(evaluate_localisation(&maps, &empty, &LocalisationConfig::default()).is_err());

        let wrong = vec![SegMask::background(3, 2)];
        assert!(evaluate_localisation(&maps, &wrong, &LocalisationConfig::default()).is_err());

        assert!(evaluate_localisation(&maps, &[], &LocalisationConfig::default()).is_err());
        assert!(evaluate_localisation(&[], &[], &LocalisationConfig::default()).is_err());
    }

    #[test]
    fn single_sample_mean_is_its_score() {
        let maps = vec![map_from(vec![0.3, 0.1, 0.4, 0.2], 2, 2)];
        let masks = vec![seg_with_head(2, 2, &[(0, 1)])];
        let res = evaluate_localisation(&maps, &masks, &LocalisationConfig { k: 1 }).unwrap();
        for r in &res {
            assert_eq!(r.scores.len(), 1);
            assert_eq!(r.mean, r.scores[0]);
            assert!((0.0..=1.0).contains(&r.mean));
        }
    }
}
