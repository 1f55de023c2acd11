//! Image and person tokens for one toy scene: counts, shapes and the
//! additive structure of a person token.

use gazetx::data::{gen_toy_scene, ToyParams};
use gazetx::model::GazeModel;
use gazetx::nn::Ctx;
use gazetx::tokens::posenc_2d;
use gazetx::{ModelConfig, Variant};

fn main() -> gazetx::Result<()> {
    let cfg = ModelConfig::desk(Variant::Point);
    let scene = gen_toy_scene(&ToyParams::default(), 5, cfg.crop_size, "scene")?;
    let model = GazeModel::<f32>::new(cfg.clone(), 0)?;
    let input = gazetx::model::SceneInput {
        image: scene.image,
        persons: scene.persons,
    };
    let mut cx = Ctx::new(&model.params, false);
    let f = model.forward(&mut cx, &input, cfg.n_persons)?;
    println!(
        "grid {0}x{0}: {1} image tokens + {2} person tokens + 1 global = {3}",
        cfg.grid(),
        cfg.n_image_tokens(),
        cfg.n_persons,
        f.input.len()
    );
    println!("sequence shape {:?}", cx.tape.shape(f.input.x));
    let pe = posenc_2d::<f64>(cfg.grid(), cfg.grid(), cfg.dim)?;
    println!("posenc at (0,0), first 4 channels: {:?}", &pe.data()[..4]);
    let gv = cx.tape.value(f.person.gaze_vec);
    for i in 0..cfg.n_persons {
        let v = &gv.data()[2 * i..2 * i + 2];
        println!("person {i}: untrained gaze vector ({:+.3}, {:+.3}), pad = {}", v[0], v[1], !f.person.mask[i]);
    }
    Ok(())
}
