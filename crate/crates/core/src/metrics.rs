//! Ground-truth heatmaps and evaluation metrics.

use std::fmt;

use crate::decoders::HEATMAP_SIZE;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Width of the ground-truth Gaussian, in heatmap cells.
pub const GT_SIGMA: f64 = 3.0;

/// Heatmap cell `(row, col)` containing a normalized point.
pub fn point_cell(p: [f64; 2], size: usize) -> (usize, usize) {
    let idx = |v: f64| ((v * size as f64).floor().max(0.0) as usize).min(size - 1);
    (idx(p[1]), idx(p[0]))
}

/// Unnormalized Gaussians (σ = 3 cells, peak 1) at each point's cell,
/// combined by cellwise maximum.
pub fn build_gt_heatmap(points: &[[f64; 2]]) -> Result<Tensor<f32>> {
    if points.is_empty() {
        return Err(Error::Contract("ground-truth heatmap needs at least one point".into()));
    }
    let n = HEATMAP_SIZE;
    let mut map = Tensor::<f32>::zeros([n, n]);
    let inv = 1.0 / (2.0 * GT_SIGMA * GT_SIGMA);
    for &p in points {
        let (pr, pc) = point_cell(p, n);
        for r in 0..n {
            for c in 0..n {
                let d2 = (r as f64 - pr as f64).powi(2) + (c as f64 - pc as f64).powi(2);
                let v = (-d2 * inv).exp() as f32;
                let cell = &mut map.data_mut()[r * n + c];
                *cell = cell.max(v);
            }
        }
    }
    Ok(map)
}

/// `(‖pred − mean(points)‖, min_i ‖pred − points_i‖)`.
pub fn metric_distances(pred: [f64; 2], points: &[[f64; 2]]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::Contract("distance metrics need at least one annotator point".into()));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / k;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / k;
    let avg = (pred[0] - mx).hypot(pred[1] - my);
    let min = points
        .iter()
        .map(|p| (pred[0] - p[0]).hypot(pred[1] - p[1]))
        .fold(f64::INFINITY, f64::min);
    Ok((avg, min))
}

/// ROC AUC as the probability that a positive outscores a negative, ties
/// counting one half: `(2·greater + ties) / (2·P·N)`. `None` when either
/// class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut neg_below, mut greater, mut ties) = (0u64, 0u64, 0u64);
    let (mut pos, mut neg) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        greater += p * neg_below;
        ties += p * q;
        neg_below += q;
        pos += p;
        neg += q;
        i = j;
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    Some((2 * greater + ties) as f64 / (2 * pos * neg) as f64)
}

/// AUC of heatmap scores against a binary grid marking each annotator's cell.
pub fn metric_auc<T: Scalar>(heatmap: &Tensor<T>, points: &[[f64; 2]]) -> Result<Option<f64>> {
    if points.is_empty() {
        return Err(Error::Contract("AUC needs at least one annotator point".into()));
    }
    let &[h, w] = heatmap.shape() else {
        return Err(Error::dim("metric_auc", format!("heatmap must be 2-D, got {:?}", heatmap.shape())));
    };
    if h != w {
        return Err(Error::dim("metric_auc", format!("heatmap must be square, got {h}×{w}")));
    }
    let mut labels = vec![false; h * w];
    for &p in points {
        let (r, c) = point_cell(p, h);
        labels[r * w + c] = true;
    }
    Ok(roc_auc(&heatmap.to_f64_vec(), &labels))
}

/// Average precision: area under the interpolated precision-recall curve,
/// sweeping thresholds from the highest score down (tied scores enter together).
pub fn metric_ap(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::Contract("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut curve = Vec::new(); // (recall, precision) at each distinct threshold
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = probs[order[i]];
        while i < order.len() && probs[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        curve.push((tp as f64 / total_pos as f64, tp as f64 / seen as f64));
    }
    let mut envelope = 0.0f64;
    for pt in curve.iter_mut().rev() {
        envelope = envelope.max(pt.1);
        pt.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in curve {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Ok(ap)
}

/// Aggregate evaluation numbers; printed as `metric<TAB>value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Mean over in-frame instances.
    pub avg_dist: f64,
    pub min_dist: f64,
    /// Heatmap variant only.
    pub auc: Option<f64>,
    /// `None` when the split has no in-frame instance to rank.
    pub ap: Option<f64>,
    pub n_instances: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "avg_dist\t{:.6}", self.avg_dist)?;
        writeln!(f, "min_dist\t{:.6}", self.min_dist)?;
        if let Some(auc) = self.auc {
            writeln!(f, "auc\t{auc:.6}")?;
        }
        if let Some(ap) = self.ap {
            writeln!(f, "ap\t{ap:.6}")?;
        }
        writeln!(f, "n_instances\t{}", self.n_instances)
    }
}

impl MetricReport {
    /// `(name, value)` pairs in print order.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![("avg_dist", self.avg_dist), ("min_dist", self.min_dist)];
        if let Some(a) = self.auc {
            rows.push(("auc", a));
        }
        if let Some(a) = self.ap {
            rows.push(("ap", a));
        }
        rows.push(("n_instances", self.n_instances as f64));
        rows
    }
}

/// Accumulates per-instance results in a fixed order.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    dist_sum: f64,
    min_sum: f64,
    n_dist: usize,
    auc_sum: f64,
    n_auc: usize,
    probs: Vec<f64>,
    labels: Vec<bool>,
    heatmap_mode: bool,
}

impl MetricAccumulator {
    pub fn new(heatmap_mode: bool) -> Self {
        MetricAccumulator {
            heatmap_mode,
            ..Default::default()
        }
    }

    /// One instance; distances and AUC apply only when `inout` is set.
    pub fn add<T: Scalar>(
        &mut self,
        pred: [f64; 2],
        heatmap: Option<&Tensor<T>>,
        inout_prob: f64,
        inout: bool,
        points: &[[f64; 2]],
    ) -> Result<()> {
        self.probs.push(inout_prob);
        self.labels.push(inout);
        if !inout {
            return Ok(());
        }
        let (avg, min) = metric_distances(pred, points)?;
        self.dist_sum += avg;
        self.min_sum += min;
        self.n_dist += 1;
        if let Some(h) = heatmap {
            if let Some(a) = metric_auc(h, points)? {
                self.auc_sum += a;
                self.n_auc += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        MetricReport {
            avg_dist: mean(self.dist_sum, self.n_dist),
            min_dist: mean(self.min_sum, self.n_dist),
            auc: self.heatmap_mode.then(|| mean(self.auc_sum, self.n_auc)),
            ap: metric_ap(&self.probs, &self.labels).ok(),
            n_instances: self.probs.len(),
        }
    }
}
