//! The optimization loop: batched per-sample tapes, clipping, AdamW,
//! periodic validation, checkpoints and a metric history.

pub mod checkpoint;
pub mod optim;

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{TrainConfig, Variant};
use crate::data::toy::scene_seed;
use crate::data::{Dataset, SampleRef};
use crate::error::{Error, Result};
use crate::losses::LossCounts;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::GazeModel;
use crate::nn::{Ctx, ParamStore};
use crate::objective::{loss_mask, sample_loss, Sample};

pub use checkpoint::TrainState;
pub use optim::{adamw_step, clip_grad_norm, AdamW, LrSchedule, OptimizerState};

/// File names inside the output directory.
pub const HISTORY_FILE: &str = "history.tsv";
pub const BEST_CHECKPOINT: &str = "best.shrn";
pub const FINAL_CHECKPOINT: &str = "final.shrn";

/// One `step  split  metric  value` line.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

impl fmt::Display for HistoryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // shortest representation that parses back to the same f64
        write!(f, "{}\t{}\t{}\t{}", self.step, self.split, self.metric, self.value)
    }
}

/// Person slots per pass for a model: the heatmap variant always takes one.
pub fn pass_slots(model: &GazeModel<f32>, requested: usize) -> usize {
    match model.cfg.variant {
        Variant::Heatmap => 1,
        Variant::Point => requested.max(1),
    }
}

/// Metrics of `model` on `ds` with `slots` people per forward pass. The
/// first `limit` passes are used when `limit > 0`. Results are accumulated in
/// dataset order, so the report does not depend on the thread count.
pub fn evaluate(model: &GazeModel<f32>, ds: &Dataset, slots: usize, limit: usize) -> Result<MetricReport> {
    let slots = pass_slots(model, slots);
    let mut refs = ds.sample_refs(slots);
    if limit > 0 {
        refs.truncate(limit);
    }
    let outs = refs
        .par_iter()
        .map(|r| {
            let s = ds.sample(r, &model.cfg)?;
            let pred = model.predict_with(&s.scene, slots)?;
            Ok((s.targets, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = MetricAccumulator::new(model.cfg.variant == Variant::Heatmap);
    for (targets, preds) in outs {
        for (t, p) in targets.iter().zip(preds) {
            acc.add(p.point, p.heatmap.as_ref(), p.inout_prob, t.inout, &t.points)?;
        }
    }
    Ok(acc.report())
}

type RowHook<'a> = Box<dyn FnMut(&HistoryRow) + 'a>;
type StepHook<'a> = Box<dyn FnMut(u64, &mut ParamStore<f32>) + 'a>;

pub struct Trainer<'a> {
    pub state: TrainState,
    train: &'a Dataset,
    val: &'a Dataset,
    refs: Vec<SampleRef>,
    epoch_order: Option<(u64, Vec<usize>)>,
    out_dir: Option<PathBuf>,
    history: Vec<HistoryRow>,
    history_file: Option<File>,
    on_row: Option<RowHook<'a>>,
    post_step: Option<StepHook<'a>>,
}

impl<'a> Trainer<'a> {
    /// A fresh run; weights are initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig, train: &'a Dataset, val: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let model = GazeModel::new(cfg.model.clone(), cfg.seed)?;
        let optim = OptimizerState::new(&model.params);
        Self::resume(
            TrainState {
                config: cfg,
                model,
                optim: Some(optim),
                step: 0,
                best: None,
            },
            train,
            val,
        )
    }

    /// Continues from a saved state.
    pub fn resume(mut state: TrainState, train: &'a Dataset, val: &'a Dataset) -> Result<Self> {
        state.config.validate()?;
        let optim = state.optim.get_or_insert_with(|| OptimizerState::new(&state.model.params));
        optim.check_matches(&state.model.params)?;
        let refs = train.sample_refs(pass_slots(&state.model, state.config.model.n_persons));
        if refs.is_empty() {
            return Err(Error::Config("training split has no annotated people".into()));
        }
        Ok(Trainer {
            state,
            train,
            val,
            refs,
            epoch_order: None,
            out_dir: None,
            history: Vec::new(),
            history_file: None,
            on_row: None,
            post_step: None,
        })
    }

    /// Writes checkpoints and `history.tsv` under `dir`; a resumed run
    /// appends to an existing history.
    pub fn output_dir(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(HISTORY_FILE);
        let mut opts = OpenOptions::new();
        opts.create(true);
        if self.state.step == 0 {
            opts.write(true).truncate(true);
        } else {
            opts.append(true);
        }
        self.history_file = Some(opts.open(&path).map_err(|e| Error::io(&path, e))?);
        self.out_dir = Some(dir);
        Ok(self)
    }

    /// Called with every history row as it is produced.
    pub fn on_row(mut self, f: impl FnMut(&HistoryRow) + 'a) -> Self {
        self.on_row = Some(Box::new(f));
        self
    }

    /// Called after every optimizer update with the new step count, e.g.
    /// to maintain a weight average.
    pub fn post_step(mut self, f: impl FnMut(u64, &mut ParamStore<f32>) + 'a) -> Self {
        self.post_step = Some(Box::new(f));
        self
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    fn record(&mut self, split: &'static str, metric: &'static str, value: f64) -> Result<()> {
        let row = HistoryRow {
            step: self.state.step,
            split,
            metric,
            value,
        };
        if let Some(f) = &mut self.history_file {
            writeln!(f, "{row}").map_err(|e| Error::io(HISTORY_FILE, e))?;
        }
        if let Some(h) = &mut self.on_row {
            h(&row);
        }
        self.history.push(row);
        Ok(())
    }

    /// Index into `refs` of the `g`-th sample drawn: each epoch is a fresh
    /// permutation seeded from the run seed and the epoch number.
    fn draw(&mut self, g: u64) -> usize {
        let n = self.refs.len() as u64;
        let epoch = g / n;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.refs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(self.state.config.seed, epoch)));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().unwrap().1[(g % n) as usize]
    }

    /// One optimizer update; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.state.step;
        let cfg = self.state.config.clone();
        let batch: Vec<SampleRef> = (0..cfg.batch_size as u64)
            .map(|b| {
                let i = self.draw(step * cfg.batch_size as u64 + b);
                self.refs[i].clone()
            })
            .collect();
        let model = &self.state.model;
        let slots = pass_slots(model, cfg.model.n_persons);
        let samples: Vec<Sample> = batch
            .par_iter()
            .map(|r| self.train.sample(r, &model.cfg))
            .collect::<Result<_>>()?;
        let mut counts = LossCounts::default();
        for s in &samples {
            counts += loss_mask(s, slots)?.counts();
        }
        let weights = cfg.loss_weights();
        let per_sample = samples
            .par_iter()
            .map(|s| {
                let mut cx = Ctx::new(&model.params, true);
                let l = sample_loss(model, &mut cx, s, slots, &weights, Some(counts))?;
                let value = cx.tape.value(l).item() as f64;
                cx.tape.backward(l)?;
                Ok((value, cx.param_grads()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut grads: Option<Vec<Vec<f32>>> = None;
        for (v, g) in per_sample {
            loss += v;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => acc
                    .iter_mut()
                    .flatten()
                    .zip(g.iter().flatten())
                    .for_each(|(a, b)| *a += b),
            }
        }
        let mut grads = grads.expect("batch_size is positive");
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                msg: format!("non-finite loss or gradient (loss = {loss})"),
            });
        }
        clip_grad_norm(&mut grads, cfg.clip_norm);
        let lr = LrSchedule::from_config(&cfg).lr(step);
        let optim = self.state.optim.as_mut().expect("set in resume");
        adamw_step(&mut self.state.model.params, &grads, optim, lr, &AdamW::from_config(&cfg))?;
        self.state.step += 1;
        if let Some(h) = &mut self.post_step {
            h(self.state.step, &mut self.state.model.params);
        }
        Ok(loss)
    }

    /// Validation metrics at the current weights.
    pub fn evaluate(&self) -> Result<MetricReport> {
        let c = &self.state.config;
        evaluate(&self.state.model, self.val, c.model.n_persons, c.eval_samples)
    }

    fn validate_and_record(&mut self) -> Result<()> {
        if self.val.scenes.is_empty() {
            return Ok(());
        }
        let report = self.evaluate()?;
        for (name, v) in report.rows() {
            self.record("val", name, v)?;
        }
        if self.state.best.map_or(true, |b| report.avg_dist < b) {
            self.state.best = Some(report.avg_dist);
            self.save(BEST_CHECKPOINT)?;
        }
        Ok(())
    }

    fn save(&self, name: &str) -> Result<()> {
        match &self.out_dir {
            Some(d) => self.state.save(&d.join(name)),
            None => Ok(()),
        }
    }

    /// Trains until `steps` updates have been taken in total (capped at the
    /// configured budget), validating and checkpointing on cadence.
    pub fn run_until(&mut self, steps: u64) -> Result<()> {
        let c = self.state.config.clone();
        let target = steps.min(c.total_steps);
        while self.state.step < target {
            let loss = self.step()?;
            self.record("train", "loss", loss)?;
            let s = self.state.step;
            if (c.eval_every > 0 && s % c.eval_every == 0) || s == c.total_steps {
                self.validate_and_record()?;
            }
            if c.checkpoint_every > 0 && s % c.checkpoint_every == 0 {
                self.save(&format!("step_{s:06}.shrn"))?;
            }
        }
        if self.state.step == c.total_steps {
            self.save(FINAL_CHECKPOINT)?;
        }
        if let Some(f) = &mut self.history_file {
            f.flush().map_err(|e| Error::io(HISTORY_FILE, e))?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.state.config.total_steps)
    }
}
