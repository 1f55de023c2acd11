//! Generates a few toy scenes, writes them as a dataset, and checks each
//! target against the pixel ray-march oracle.
//!
//! cargo run --release --example toy_world -- [out_dir]

use gazetx::data::toy::{center_baseline, ray_march, scene_seed, GazeTarget};
use gazetx::data::{gen_toy_scene, Dataset, ToyParams};

fn main() -> gazetx::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy_world_demo".into());
    let p = ToyParams::default();
    let (mut agree, mut total) = (0, 0);
    for i in 0..50 {
        let sc = gen_toy_scene(&p, scene_seed(0, i), 32, "scene")?;
        for q in &sc.layout.persons {
            total += 1;
            let m = ray_march(&sc.image, q.center, q.theta);
            let close = match (q.target.point(), m.point()) {
                (Some(a), Some(b)) => (a[0] - b[0]).hypot(a[1] - b[1]) <= 1.0,
                (None, None) => true,
                _ => false,
            };
            agree += usize::from(close && matches!(q.target, GazeTarget::OffScreen) == matches!(m, GazeTarget::OffScreen));
        }
    }
    println!("oracle agrees on {agree}/{total} people");
    println!("center baseline avg_dist {:.4}", center_baseline(&p, 0, 2000)?);
    let ds = Dataset::generate(&p, 0, 8)?;
    ds.save(&out)?;
    println!("wrote {} scenes ({} records) to {out}", ds.scenes.len(), ds.n_records());
    for r in &ds.scenes[0].records {
        println!("{}", r.to_line());
    }
    Ok(())
}
