//! Evaluation metrics on hand-made predictions.

use gazetx::metrics::{build_gt_heatmap, metric_ap, metric_auc, metric_distances, MetricAccumulator};

fn main() -> gazetx::Result<()> {
    let annotators = [[0.40, 0.55], [0.45, 0.60], [0.70, 0.20]];
    let (avg, min) = metric_distances([0.45, 0.5], &annotators)?;
    println!("avg_dist {avg:.4}  min_dist {min:.4}");

    let perfect = build_gt_heatmap(&annotators)?;
    println!("auc of the gt heatmap itself: {:.4}", metric_auc(&perfect, &annotators)?.unwrap());
    let flat = gazetx::Tensor::<f32>::full([64, 64], 0.3);
    println!("auc of a flat heatmap: {:.4}", metric_auc(&flat, &annotators)?.unwrap());

    let probs = [0.9, 0.8, 0.35, 0.6, 0.1];
    let labels = [true, true, false, true, false];
    println!("ap {:.4}", metric_ap(&probs, &labels)?);

    let mut acc = MetricAccumulator::new(true);
    acc.add([0.45, 0.5], Some(&perfect), 0.9, true, &annotators)?;
    acc.add([0.0, 0.0], None::<&gazetx::Tensor<f32>>, 0.2, false, &[])?;
    print!("{}", acc.report());
    Ok(())
}
