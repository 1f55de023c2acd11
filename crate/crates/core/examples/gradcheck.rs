//! Finite-difference check of the whole micro model, both variants.
//!
//! cargo run --release --example gradcheck

use gazetx::gradcheck::{model_grad_check, CHECK_LOSS_FLOOR, ENTRIES_PER_TENSOR};
use gazetx::tensor::GradCheck;
use gazetx::Variant;

fn main() -> gazetx::Result<()> {
    let check = GradCheck {
        max_entries: Some(ENTRIES_PER_TENSOR),
        loss_floor: CHECK_LOSS_FLOOR,
        ..GradCheck::default()
    };
    for v in [Variant::Point, Variant::Heatmap] {
        let t = std::time::Instant::now();
        let r = model_grad_check(v, &check)?;
        println!("# {v} ({:.1}s)\n{r}", t.elapsed().as_secs_f64());
    }
    Ok(())
}
