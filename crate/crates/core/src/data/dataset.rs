use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::data::annotations::{format_annotations, load_annotations, AnnotationRecord};
use crate::data::raster::{crop_head, load_png, rgb_to_tensor, save_png, tensor_to_rgb};
use crate::data::toy::{gen_toy_scene, scene_seed, ToyParams};
use crate::error::{Error, Result};
use crate::model::SceneInput;
use crate::objective::{PersonTarget, Sample};
use crate::person::PersonInput;

/// Annotation file name inside a dataset directory.
pub const ANNOTATION_FILE: &str = "annotations.tsv";

/// One image and the records of every person in it, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub image_ref: String,
    pub image: RgbImage,
    pub records: Vec<AnnotationRecord>,
}

/// A forward pass worth of people: `persons` indexes into a scene's records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub scene: usize,
    pub persons: std::ops::Range<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    /// Header comment lines, e.g. the generator manifest.
    pub comments: Vec<String>,
    pub scenes: Vec<SceneData>,
}

impl Dataset {
    /// `n_scenes` toy scenes; scene `i` uses seed `scene_seed(seed, i)`, so the
    /// result does not depend on how many threads generate it.
    pub fn generate(params: &ToyParams, seed: u64, n_scenes: usize) -> Result<Self> {
        params.validate()?;
        let scenes = (0..n_scenes)
            .into_par_iter()
            .map(|i| {
                let image_ref = format!("images/scene_{i:06}.png");
                let sc = gen_toy_scene(params, scene_seed(seed, i as u64), 16, &image_ref)?;
                Ok(SceneData {
                    image: tensor_to_rgb(&sc.image)?,
                    image_ref,
                    records: sc.records,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            comments: vec![format!("seed={seed} params={}", params.to_manifest())],
            scenes,
        })
    }

    /// Reads `dir/annotations.tsv` and the images it references (relative to
    /// `dir`). Consecutive records with the same image form one scene.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let file = load_annotations(dir.join(ANNOTATION_FILE))?;
        let mut scenes: Vec<SceneData> = Vec::new();
        for r in file.records {
            match scenes.last_mut() {
                Some(s) if s.image_ref == r.image_ref => s.records.push(r),
                _ => scenes.push(SceneData {
                    image: RgbImage::new(0, 0),
                    image_ref: r.image_ref.clone(),
                    records: vec![r],
                }),
            }
        }
        scenes
            .par_iter_mut()
            .try_for_each(|s| -> Result<()> {
                s.image = load_png(&dir.join(&s.image_ref))?;
                Ok(())
            })?;
        Ok(Dataset {
            comments: file.comments,
            scenes,
        })
    }

    /// Writes the annotation file and every image under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let records: Vec<AnnotationRecord> = self.scenes.iter().flat_map(|s| s.records.iter().cloned()).collect();
        let text = format_annotations(&self.comments, &records)?;
        for s in &self.scenes {
            let path = dir.join(&s.image_ref);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_png(&s.image, &path)?;
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ANNOTATION_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn n_records(&self) -> usize {
        self.scenes.iter().map(|s| s.records.len()).sum()
    }

    /// Splits every scene's people into consecutive groups of at most `slots`.
    pub fn sample_refs(&self, slots: usize) -> Vec<SampleRef> {
        let slots = slots.max(1);
        let mut out = Vec::new();
        for (i, s) in self.scenes.iter().enumerate() {
            let n = s.records.len();
            for start in (0..n).step_by(slots) {
                out.push(SampleRef {
                    scene: i,
                    persons: start..(start + slots).min(n),
                });
            }
        }
        out
    }

    /// Builds model input and targets for `r`; head crops come from the
    /// stored image at its native resolution.
    pub fn sample(&self, r: &SampleRef, cfg: &ModelConfig) -> Result<Sample> {
        let scene = &self.scenes[r.scene];
        let native = rgb_to_tensor(&scene.image);
        let image = if native.shape() == [cfg.image_size, cfg.image_size, 3] {
            native.clone()
        } else {
            crop_head(&native, [0.0, 0.0, 1.0, 1.0], cfg.image_size)?
        };
        let records = &scene.records[r.persons.clone()];
        let persons = records
            .iter()
            .map(|rec| PersonInput::new(crop_head(&native, rec.bbox, cfg.crop_size)?, rec.bbox))
            .collect::<Result<Vec<_>>>()?;
        let targets = records
            .iter()
            .map(|rec| PersonTarget {
                inout: rec.inout,
                points: rec.points.clone(),
            })
            .collect();
        Ok(Sample {
            scene: SceneInput { image, persons },
            targets,
        })
    }
}
