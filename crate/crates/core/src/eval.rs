//! Detection and grouping metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Keypoint, RectangleSymbol, RegionBox, SymbolClass};
use crate::taxonomy::{KeypointType, NUM_TYPES};

pub const DEFAULT_TAU_P: f64 = 2.0;
pub const DEFAULT_TAU_O: f64 = 0.5;

/// One-to-one assignment of predictions to ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// `(prediction index, ground-truth index, distance)`
    pub pairs: Vec<(usize, usize, f64)>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchResult {
    fn from_pairs(pairs: Vec<(usize, usize, f64)>, n_pred: usize, n_gt: usize) -> Self {
        let tp = pairs.len();
        MatchResult {
            pairs,
            tp,
            fp: n_pred - tp,
            fn_: n_gt - tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Zero wherever a denominator vanishes.
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn precision_recall_f1(m: &MatchResult) -> Prf {
    prf_from_counts(m.tp, m.fp, m.fn_)
}

fn coord_key(k: &Keypoint) -> (f64, f64) {
    (k.y, k.x)
}

/// Greedy matching by ascending distance within each class; a pair counts
/// only when its distance is strictly below `tau_p`. Equal distances are
/// ordered by coordinates, so the result does not depend on input order.
pub fn match_keypoints(pred: &[Keypoint], gt: &[Keypoint], tau_p: f64) -> MatchResult {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.kind == g.kind {
                let d = p.distance(g);
                if d < tau_p {
                    cands.push((d, i, j));
                }
            }
        }
    }
    cands.sort_by(|a, b| {
        let (pa, pb) = (coord_key(&pred[a.1]), coord_key(&pred[b.1]));
        let (ga, gb) = (coord_key(&gt[a.2]), coord_key(&gt[b.2]));
        a.0.total_cmp(&b.0)
            .then(pa.0.total_cmp(&pb.0))
            .then(pa.1.total_cmp(&pb.1))
            .then(ga.0.total_cmp(&gb.0))
            .then(ga.1.total_cmp(&gb.1))
            .then(pred[a.1].score.total_cmp(&pred[b.1].score).reverse())
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in cands {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, d));
        }
    }
    MatchResult::from_pairs(pairs, pred.len(), gt.len())
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy by descending IoU among same-class pairs with IoU at least `tau_o`.
/// The reported distance of each pair is `1 - IoU`.
pub fn match_boxes(pred: &[RegionBox], gt: &[RegionBox], tau_o: f64) -> MatchResult {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.class == g.class {
                let v = iou(&p.bbox, &g.bbox);
                if v >= tau_o && v > 0.0 {
                    cands.push((v, i, j));
                }
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pu = vec![false; pred.len()];
    let mut gu = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (v, i, j) in cands {
        if !pu[i] && !gu[j] {
            pu[i] = true;
            gu[j] = true;
            pairs.push((i, j, 1.0 - v));
        }
    }
    MatchResult::from_pairs(pairs, pred.len(), gt.len())
}

/// Distance from `p` to its nearest same-class ground truth, falling back to
/// the nearest of any class.
fn nearest_gt_distance(p: &Keypoint, gt: &[Keypoint]) -> f64 {
    let nearest = |same: bool| {
        gt.iter()
            .filter(|g| !same || g.kind == p.kind)
            .map(|g| p.distance(g))
            .fold(f64::INFINITY, f64::min)
    };
    let d = nearest(true);
    if d.is_finite() {
        d
    } else {
        nearest(false)
    }
}

/// Mean over every detection of its distance to the nearest ground truth.
pub fn apek(pred: &[Keypoint], gt: &[Keypoint]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Undefined("APEK undefined for zero detections".into()));
    }
    if gt.is_empty() {
        return Err(Error::Undefined("APEK undefined without ground truth".into()));
    }
    let sum: f64 = pred.iter().map(|p| nearest_gt_distance(p, gt)).sum();
    Ok(sum / pred.len() as f64)
}

/// Symbols match when they share a class and vertex count and every vertex
/// lies strictly within `tau_p` of its counterpart (both in walk order).
/// Greedy by ascending mean vertex distance.
pub fn match_symbols(
    pred: &[RectangleSymbol],
    pred_points: &[Keypoint],
    gt: &[RectangleSymbol],
    gt_points: &[Keypoint],
    tau_p: f64,
) -> MatchResult {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.class != g.class || p.keypoint_indices.len() != g.keypoint_indices.len() {
                continue;
            }
            let dists: Vec<f64> = p
                .vertices(pred_points)
                .zip(g.vertices(gt_points))
                .map(|(a, b)| a.distance(b))
                .collect();
            if dists.iter().all(|&d| d < tau_p) {
                cands.push((dists.iter().sum::<f64>() / dists.len().max(1) as f64, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pu = vec![false; pred.len()];
    let mut gu = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in cands {
        if !pu[i] && !gu[j] {
            pu[i] = true;
            gu[j] = true;
            pairs.push((i, j, d));
        }
    }
    MatchResult::from_pairs(pairs, pred.len(), gt.len())
}

pub fn symbol_f1(
    pred: &[RectangleSymbol],
    pred_points: &[Keypoint],
    gt: &[RectangleSymbol],
    gt_points: &[Keypoint],
    tau_p: f64,
) -> Prf {
    precision_recall_f1(&match_symbols(pred, pred_points, gt, gt_points, tau_p))
}

/// Counts and error sums for one class, additive across images.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassTally {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Sum of per-detection nearest-ground-truth distances.
    pub error_sum: f64,
    pub detections: usize,
}

impl ClassTally {
    pub fn prf(&self) -> Prf {
        prf_from_counts(self.tp, self.fp, self.fn_)
    }

    /// `None` without detections.
    pub fn apek(&self) -> Option<f64> {
        (self.detections > 0).then(|| self.error_sum / self.detections as f64)
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }

    fn add(&mut self, o: &ClassTally) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.error_sum += o.error_sum;
        self.detections += o.detections;
    }
}

/// Keypoint metrics accumulated per class over any number of images.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointReport {
    pub per_class: [ClassTally; NUM_TYPES],
    pub symbols: ClassTally,
    pub regions: ClassTally,
}

impl Default for KeypointReport {
    fn default() -> Self {
        KeypointReport {
            per_class: [ClassTally::default(); NUM_TYPES],
            symbols: ClassTally::default(),
            regions: ClassTally::default(),
        }
    }
}

impl KeypointReport {
    /// Adds one image's keypoints.
    pub fn add_image(&mut self, pred: &[Keypoint], gt: &[Keypoint], tau_p: f64) {
        let m = match_keypoints(pred, gt, tau_p);
        let mut matched = vec![false; pred.len()];
        for &(i, _, _) in &m.pairs {
            matched[i] = true;
            self.per_class[pred[i].kind.channel()].tp += 1;
        }
        for (i, p) in pred.iter().enumerate() {
            let t = &mut self.per_class[p.kind.channel()];
            if !matched[i] {
                t.fp += 1;
            }
            if !gt.is_empty() {
                t.error_sum += nearest_gt_distance(p, gt);
                t.detections += 1;
            }
        }
        let mut gt_matched = vec![false; gt.len()];
        for &(_, j, _) in &m.pairs {
            gt_matched[j] = true;
        }
        for (j, g) in gt.iter().enumerate() {
            if !gt_matched[j] {
                self.per_class[g.kind.channel()].fn_ += 1;
            }
        }
    }

    /// Adds one image's symbols (counts only).
    pub fn add_symbols(
        &mut self,
        pred: &[RectangleSymbol],
        pred_points: &[Keypoint],
        gt: &[RectangleSymbol],
        gt_points: &[Keypoint],
        tau_p: f64,
    ) {
        let m = match_symbols(pred, pred_points, gt, gt_points, tau_p);
        self.symbols.add(&ClassTally {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            ..ClassTally::default()
        });
    }

    /// Adds one image's region boxes (counts only).
    pub fn add_regions(&mut self, pred: &[RegionBox], gt: &[RegionBox], tau_o: f64) {
        let m = match_boxes(pred, gt, tau_o);
        self.regions.add(&ClassTally {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            ..ClassTally::default()
        });
    }

    pub fn merge(&mut self, other: &KeypointReport) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(b);
        }
        self.symbols.add(&other.symbols);
        self.regions.add(&other.regions);
    }

    pub fn overall(&self) -> ClassTally {
        let mut t = ClassTally::default();
        for c in &self.per_class {
            t.add(c);
        }
        t
    }

    /// `class,precision,recall,f1,apek,support`: one row per keypoint type,
    /// then `all` and, when any were scored, `symbols` and `regions`. APEK is blank
    /// for rows without detections.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,apek,support\n");
        let mut row = |name: &str, t: &ClassTally| {
            let p = t.prf();
            let apek = t.apek().map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{name},{:.6},{:.6},{:.6},{apek},{}", p.precision, p.recall, p.f1, t.support());
        };
        for k in KeypointType::ALL {
            row(k.name(), &self.per_class[k.channel()]);
        }
        row("all", &self.overall());
        if self.symbols.tp + self.symbols.fp + self.symbols.fn_ > 0 {
            row("symbols", &self.symbols);
        }
        if self.regions.tp + self.regions.fp + self.regions.fn_ > 0 {
            row("regions", &self.regions);
        }
        s
    }
}

/// Symbol counts per class, for diagnostics.
pub fn symbol_class_counts(symbols: &[RectangleSymbol]) -> BTreeMap<SymbolClass, usize> {
    let mut m = BTreeMap::new();
    for s in symbols {
        *m.entry(s.class).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use KeypointType::*;

    fn kp(x: f64, y: f64, k: KeypointType) -> Keypoint {
        Keypoint::new(x, y, k)
    }

    #[test]
    fn exact_predictions() {
        let gt = vec![kp(1.0, 1.0, CornerNw), kp(5.0, 1.0, CornerNe)];
        let m = match_keypoints(&gt, &gt, 2.0);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
        assert_eq!(precision_recall_f1(&m), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn threshold_is_strict() {
        let m = match_keypoints(&[kp(2.5, 0.0, CornerNw)], &[kp(0.0, 0.0, CornerNw)], 2.0);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
        let m = match_keypoints(&[kp(2.0, 0.0, CornerNw)], &[kp(0.0, 0.0, CornerNw)], 2.0);
        assert_eq!(m.tp, 0);
    }

    #[test]
    fn one_to_one() {
        let m = match_keypoints(&[kp(0.5, 0.0, CornerNw), kp(-0.5, 0.2, CornerNw)], &[kp(0.0, 0.0, CornerNw)], 2.0);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
    }

    #[test]
    fn class_must_agree() {
        let m = match_keypoints(&[kp(0.0, 0.0, CornerNe)], &[kp(0.0, 0.0, CornerNw)], 2.0);
        assert_eq!(m.tp, 0);
    }

    #[test]
    fn prf_conventions() {
        assert_eq!(prf_from_counts(1, 0, 0), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(prf_from_counts(0, 3, 2), Prf::default());
        assert_eq!(prf_from_counts(0, 0, 0), Prf::default());
    }

    #[test]
    fn published_row_arithmetic() {
        let f = f1_score(1.00, 0.92);
        assert_eq!(format!("{f:.2}"), "0.96");
        assert!((f - 0.958_333).abs() < 1e-6);
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(2.0, 2.0, 3.0, 3.0)), 0.0);
        let b = BBox::new(0.5, 0.0, 1.5, 1.0);
        // overlap 0.5, union 1.5
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn box_matching() {
        let r = |x0, class: &str| RegionBox {
            bbox: BBox::new(x0, 0.0, x0 + 10.0, 10.0),
            class: class.into(),
        };
        let m = match_boxes(&[r(0.0, "main"), r(4.0, "main"), r(0.0, "legend")], &[r(1.0, "main")], DEFAULT_TAU_O);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 2, 0));
        assert_eq!(m.pairs[0].0, 0);
    }

    #[test]
    fn apek_cases() {
        let gt = vec![kp(10.0, 10.0, CornerNw), kp(50.0, 10.0, CornerNe)];
        assert_eq!(apek(&gt, &gt).unwrap(), 0.0);
        assert_eq!(apek(&[kp(13.0, 14.0, CornerNw)], &gt).unwrap(), 5.0);
        let e = apek(&[], &gt).unwrap_err();
        assert!(e.to_string().contains("APEK undefined for zero detections"));
        // no same-class ground truth: nearest of any class
        assert_eq!(apek(&[kp(50.0, 13.0, TeeN)], &gt).unwrap(), 3.0);
        assert!(apek(&gt, &[]).is_err());
    }

    fn square(x: f64) -> (Vec<Keypoint>, RectangleSymbol) {
        (
            vec![kp(x, 0.0, CornerNw), kp(x + 10.0, 0.0, CornerNe), kp(x + 10.0, 10.0, CornerSe), kp(x, 10.0, CornerSw)],
            RectangleSymbol {
                class: SymbolClass::Block,
                keypoint_indices: vec![0, 1, 2, 3],
            },
        )
    }

    #[test]
    fn symbol_matching() {
        let (pts, s) = square(0.0);
        assert_eq!(symbol_f1(&[s.clone()], &pts, &[s.clone()], &pts, 2.0).f1, 1.0);

        let (mut pts2, s2) = square(30.0);
        let mut all = pts.clone();
        all.extend(pts2.iter().copied());
        let s2_shift = RectangleSymbol {
            class: SymbolClass::Block,
            keypoint_indices: vec![4, 5, 6, 7],
        };
        let prf = symbol_f1(&[s.clone()], &pts, &[s.clone(), s2_shift], &all, 2.0);
        assert_eq!(prf.recall, 0.5);

        pts2[2].x += 3.0;
        assert_eq!(symbol_f1(&[s2.clone()], &pts2, &[s2.clone()], &square(30.0).0, 2.0).f1, 0.0);
        pts2[2].x -= 1.5;
        assert_eq!(symbol_f1(&[s2.clone()], &pts2, &[s2], &square(30.0).0, 2.0).f1, 1.0);
    }

    /// Exhaustive oracle: among all one-to-one matchings of admissible pairs,
    /// the greedy result has the lexicographically smallest sorted list of
    /// distances.
    fn oracle_best(pred: &[Keypoint], gt: &[Keypoint], tau: f64) -> Vec<f64> {
        fn rec(i: usize, pred: &[Keypoint], gt: &[Keypoint], tau: f64, used: &mut Vec<bool>, cur: &mut Vec<f64>, best: &mut Option<Vec<f64>>) {
            if i == pred.len() {
                let mut s = cur.clone();
                s.sort_by(f64::total_cmp);
                let better = match best {
                    None => true,
                    Some(b) => {
                        let ord = s.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
                        match ord {
                            Some(o) => o.is_lt(),
                            None => s.len() > b.len(),
                        }
                    }
                };
                if better {
                    *best = Some(s);
                }
                return;
            }
            rec(i + 1, pred, gt, tau, used, cur, best);
            for j in 0..gt.len() {
                let d = pred[i].distance(&gt[j]);
                if !used[j] && pred[i].kind == gt[j].kind && d < tau {
                    used[j] = true;
                    cur.push(d);
                    rec(i + 1, pred, gt, tau, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = None;
        rec(0, pred, gt, tau, &mut vec![false; gt.len()], &mut Vec::new(), &mut best);
        best.unwrap()
    }

    fn small_points(max: usize) -> impl Strategy<Value = Vec<Keypoint>> {
        proptest::collection::vec((0.0f64..6.0, 0.0f64..6.0, 7u8..=8), 0..=max)
            .prop_map(|v| v.into_iter().map(|(x, y, k)| kp(x, y, KeypointType::from_id(k).unwrap())).collect())
    }

    proptest! {
        #[test]
        fn greedy_matches_exhaustive_oracle(pred in small_points(6), gt in small_points(6)) {
            let m = match_keypoints(&pred, &gt, 2.0);
            let mut got: Vec<f64> = m.pairs.iter().map(|p| p.2).collect();
            got.sort_by(f64::total_cmp);
            let best = oracle_best(&pred, &gt, 2.0);
            prop_assert_eq!(got.len(), best.len());
            for (a, b) in got.iter().zip(&best) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(m.tp + m.fp, pred.len());
            prop_assert_eq!(m.tp + m.fn_, gt.len());
        }

        #[test]
        fn shuffling_keeps_counts(pred in small_points(8), gt in small_points(8), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = match_keypoints(&pred, &gt, 2.0);
            let (mut p2, mut g2) = (pred.clone(), gt.clone());
            p2.shuffle(&mut rng);
            g2.shuffle(&mut rng);
            let m2 = match_keypoints(&p2, &g2, 2.0);
            prop_assert_eq!((m.tp, m.fp, m.fn_), (m2.tp, m2.fp, m2.fn_));
            if !p2.is_empty() && !g2.is_empty() {
                prop_assert!((apek(&pred, &gt).unwrap() - apek(&p2, &g2).unwrap()).abs() < 1e-9);
            }
        }

        #[test]
        fn f1_symmetric_and_bounded(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let a = prf_from_counts(tp, fp, fn_);
            let b = prf_from_counts(tp, fn_, fp);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.f1));
        }

        #[test]
        fn iou_symmetric(a in (0.0f64..5.0, 0.0f64..5.0, 0.1f64..5.0, 0.1f64..5.0),
                         b in (0.0f64..5.0, 0.0f64..5.0, 0.1f64..5.0, 0.1f64..5.0)) {
            let ba = BBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3);
            let bb = BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
            prop_assert!((iou(&ba, &bb) - iou(&bb, &ba)).abs() < 1e-12);
            prop_assert!((iou(&ba, &ba) - 1.0).abs() < 1e-12);
            let v = iou(&ba, &bb);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn iou_matches_raster_oracle(a in (0u32..6, 0u32..6, 1u32..6, 1u32..6), b in (0u32..6, 0u32..6, 1u32..6, 1u32..6)) {
            // count unit cells on an integer grid
            let cells = |r: (u32, u32, u32, u32)| {
                let mut v = Vec::new();
                for y in r.1..r.1 + r.3 { for x in r.0..r.0 + r.2 { v.push((x, y)); } }
                v
            };
            let (ca, cb) = (cells(a), cells(b));
            let inter = ca.iter().filter(|c| cb.contains(c)).count() as f64;
            let union = (ca.len() + cb.len()) as f64 - inter;
            let f = |r: (u32, u32, u32, u32)| BBox::new(r.0 as f64, r.1 as f64, (r.0 + r.2) as f64, (r.1 + r.3) as f64);
            prop_assert!((iou(&f(a), &f(b)) - inter / union).abs() < 1e-12);
        }
    }

    #[test]
    fn report_csv_shape() {
        let gt = vec![kp(1.0, 1.0, CornerNw), kp(5.0, 1.0, CornerNe)];
        let mut r = KeypointReport::default();
        r.add_image(&[kp(1.5, 1.0, CornerNw)], &gt, 2.0);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + NUM_TYPES + 1);
        assert!(lines[7].starts_with("corner-nw,1.000000,1.000000,1.000000,0.500000,1"), "{}", lines[7]);
        assert!(lines.last().unwrap().starts_with("all,1.000000,0.500000,"));
    }
}
