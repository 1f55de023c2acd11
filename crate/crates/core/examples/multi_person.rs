//! One forward pass predicts every person in a scene; reordering the people
//! reorders the predictions and nothing else.

use gazetx::data::{gen_toy_scene, ToyParams};
use gazetx::model::{GazeModel, SceneInput};
use gazetx::{ModelConfig, Variant};

fn main() -> gazetx::Result<()> {
    let cfg = ModelConfig::desk(Variant::Point);
    let model = GazeModel::<f32>::new(cfg.clone(), 3)?;
    let sc = gen_toy_scene(&ToyParams::default(), 9, cfg.crop_size, "scene")?;
    let scene = SceneInput {
        image: sc.image.clone(),
        persons: sc.persons.clone(),
    };
    let a = model.predict(&scene)?;
    let mut reversed = scene.clone();
    reversed.persons.reverse();
    let b = model.predict(&reversed)?;
    for (i, o) in a.iter().enumerate() {
        let r = &b[a.len() - 1 - i];
        println!(
            "person {i}: point ({:.4}, {:.4}) inout {:.4} | reversed order: ({:.4}, {:.4}) {:.4}",
            o.point[0], o.point[1], o.inout_prob, r.point[0], r.point[1], r.inout_prob
        );
    }
    // more people than slots: the scene is split into passes
    let chunked = model.predict_with(&scene, 3)?;
    println!("{} people in passes of 3 -> {} predictions", scene.persons.len(), chunked.len());
    Ok(())
}
