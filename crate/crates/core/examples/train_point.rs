//! Trains the multi-person point model on the toy world and prints the
//! validation curve next to the always-predict-center baseline.
//!
//! cargo run --release --example train_point -- [steps] [train_scenes] [key=value ...] [save=path]

use gazetx::config::TrainConfig;
use gazetx::data::toy::center_baseline;
use gazetx::data::{Dataset, ToyParams};
use gazetx::train::Trainer;

fn main() -> gazetx::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (nums, overrides): (Vec<&String>, Vec<&String>) = args.iter().partition(|a| !a.contains('='));
    let num = |i: usize, d: u64| nums.get(i).map_or(d, |a| a.parse().expect("numeric argument"));
    let steps = num(0, 3000);
    let n_train = num(1, 4000) as usize;
    let params = ToyParams::default();
    let train = Dataset::generate(&params, 1, n_train)?;
    let val = Dataset::generate(&params, 2, 200)?;
    println!("center baseline avg_dist {:.4}", center_baseline(&params, 2, 200)?);

    let mut text = format!("variant = point\ntotal_steps = {steps}\neval_every = {}\n", (steps / 6).max(1));
    let save = overrides.iter().find_map(|o| o.strip_prefix("save="));
    for o in overrides.iter().filter(|o| !o.starts_with("save=")) {
        text.push_str(o);
        text.push('\n');
    }
    let cfg = TrainConfig::parse(&text)?;
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(cfg, &train, &val)?.on_row(|r| {
        if r.split == "val" || r.step % 100 == 0 {
            println!("{r}\t{:.0}s", start.elapsed().as_secs_f64());
        }
    });
    trainer.run()?;
    println!("{}", trainer.evaluate()?);
    if let Some(path) = save {
        trainer.state.save(std::path::Path::new(path))?;
    }
    Ok(())
}
