//! Command-line surface. Each subcommand is a plain function writing its
//! report to a `Write`, so the binary stays a thin wrapper.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{TrainConfig, Variant};
use crate::data::raster::{crop_head, load_png, rgb_to_tensor};
use crate::data::{Dataset, ToyParams};
use crate::error::{Error, Result};
use crate::gradcheck::{model_grad_check, CHECK_LOSS_FLOOR, ENTRIES_PER_TENSOR};
use crate::model::SceneInput;
use crate::person::PersonInput;
use crate::tensor::{GradCheck, GradFault};
use crate::train::{evaluate, TrainState, Trainer};

/// Environment variable read when `--threads` is not given.
pub const THREADS_ENV: &str = "SHARINGAN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gazetx", version, about = "Gaze following with person gaze tokens")]
pub struct Cli {
    /// Worker threads; 1 makes every command fully deterministic.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy-world dataset.
    GenData(GenDataArgs),
    /// Train from a `key = value` config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict gaze for head boxes in one image.
    Infer(InferArgs),
    /// Finite-difference check of the full model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_scenes: usize,
    #[arg(long, default_value_t = 4)]
    pub n_persons: usize,
    #[arg(long, default_value_t = 4)]
    pub n_objects: usize,
    #[arg(long, default_value_t = 112)]
    pub image_size: usize,
    /// Gaze points per in-frame record.
    #[arg(long, default_value_t = 1)]
    pub annotators: usize,
    /// Normalized std of annotator jitter.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.7)]
    pub p_object: f64,
    #[arg(long, default_value_t = 0.2)]
    pub p_offscreen: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint (its stored config must match).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Person tokens per forward pass: `4`, `1,2,4` or `1..6`. One report per value.
    #[arg(long)]
    pub np: Option<String>,
    /// Evaluate at most this many passes (0 = all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Normalized head box `x_min,y_min,x_max,y_max`; repeat per person.
    #[arg(long = "boxes", num_args = 0..)]
    pub boxes: Vec<String>,
    /// File with one box per line, same format.
    #[arg(long)]
    pub boxes_file: Option<PathBuf>,
    /// Write each person's 64×64 heatmap here as text (heatmap variant).
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "micro")]
    pub scale: String,
    /// Entries checked per parameter tensor (0 = all).
    #[arg(long, default_value_t = ENTRIES_PER_TENSOR)]
    pub entries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupts one backward rule; the check must then fail.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Thread count from the flag, else the environment, else rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a thread count, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command line. Returns `Ok(false)` when the command ran but
/// its verdict is negative (a failing gradient check).
pub fn run(cli: Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<bool> {
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenData(a) => gen_data(&a, out).map(|_| true),
        Command::Train(a) => train(&a, out).map(|_| true),
        Command::Eval(a) => eval(&a, out, err).map(|_| true),
        Command::Infer(a) => infer(&a, out).map(|_| true),
        Command::Gradcheck(a) => gradcheck(&a, out),
    })
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

pub fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut p = ToyParams::for_image(a.image_size);
    p.n_persons = a.n_persons;
    p.n_objects = a.n_objects;
    p.annotators = a.annotators;
    p.jitter = a.jitter;
    p.p_object = a.p_object;
    p.p_offscreen = a.p_offscreen;
    let ds = Dataset::generate(&p, a.seed, a.n_scenes)?;
    ds.save(&a.out)?;
    writeln!(
        out,
        "wrote {} scenes, {} records to {}",
        ds.scenes.len(),
        ds.n_records(),
        a.out.display()
    )
    .map_err(io_err)
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainConfig::parse(&text)
}

fn load_split(path: &str, what: &str) -> Result<Dataset> {
    if path.is_empty() {
        return Ok(Dataset::default());
    }
    Dataset::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("{what} split {}: {source}", path.display())),
        e => e,
    })
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = read_config(&a.config)?;
    if cfg.train_data.is_empty() {
        return Err(Error::Config("train_data is not set".into()));
    }
    writeln!(out, "# resolved config").map_err(io_err)?;
    for line in cfg.to_text().lines() {
        writeln!(out, "# {line}").map_err(io_err)?;
    }
    let train = load_split(&cfg.train_data, "training")?;
    let val = load_split(&cfg.val_data, "validation")?;
    let trainer = match &a.resume {
        Some(p) => {
            let state = TrainState::load(p)?;
            if state.config != cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was written with a different config",
                    p.display()
                )));
            }
            Trainer::resume(state, &train, &val)?
        }
        None => Trainer::new(cfg.clone(), &train, &val)?,
    };
    let eval_every = cfg.eval_every.max(1);
    let mut log_err = None;
    let mut trainer = trainer.output_dir(&cfg.checkpoint_dir)?.on_row(|r| {
        if r.split != "train" || r.step % eval_every == 0 || r.step % 100 == 0 {
            if let Err(e) = writeln!(out, "{r}") {
                log_err.get_or_insert(e);
            }
        }
    });
    trainer.run()?;
    let best = trainer.state.best;
    drop(trainer);
    if let Some(e) = log_err {
        return Err(io_err(e));
    }
    if let Some(b) = best {
        writeln!(out, "best_avg_dist\t{b:.6}").map_err(io_err)?;
    }
    Ok(())
}

/// `4`, `1,3,4` or `1..6` (inclusive).
pub fn parse_np_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("--np expects `k`, `a,b,c` or `a..b`, got `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a == 0 || b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            let k: usize = part.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            out.push(k);
        }
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let state = TrainState::load(&a.checkpoint)?;
    let model = state.model;
    let ds = Dataset::load(&a.data)?;
    let capacity = model.cfg.n_persons;
    let nps = match &a.np {
        Some(s) => parse_np_list(s)?,
        None => vec![capacity],
    };
    for np in nps {
        if model.cfg.variant == Variant::Heatmap && np != 1 {
            writeln!(err, "warning: heatmap model takes one person per pass; evaluating --np {np} one person at a time")
                .map_err(io_err)?;
        } else if np > capacity {
            writeln!(
                err,
                "warning: --np {np} exceeds the {capacity} person tokens the checkpoint was trained with"
            )
            .map_err(io_err)?;
        }
        let report = evaluate(&model, &ds, np, a.limit)?;
        writeln!(out, "# np={np}").map_err(io_err)?;
        write!(out, "{report}").map_err(io_err)?;
    }
    Ok(())
}

/// Parses `x_min,y_min,x_max,y_max`; errors name `arg`.
pub fn parse_box(s: &str, arg: &str) -> Result<[f32; 4]> {
    let bad = |m: String| Error::Config(format!("{arg}: {m}"));
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|_| bad(format!("`{p}` is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    let b: [f32; 4] = v
        .try_into()
        .map_err(|_| bad(format!("expected x_min,y_min,x_max,y_max, got `{s}`")))?;
    crate::person::validate_bbox(&b).map_err(|_| bad(format!("invalid box `{s}`")))?;
    if b[2] <= b[0] || b[3] <= b[1] {
        return Err(bad(format!("box `{s}` has zero area")));
    }
    Ok(b)
}

pub fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let state = TrainState::load(&a.checkpoint)?;
    let model = state.model;
    let mut boxes = Vec::new();
    for (i, s) in a.boxes.iter().enumerate() {
        boxes.push(parse_box(s, &format!("--boxes #{}", i + 1))?);
    }
    if let Some(p) = &a.boxes_file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        for (i, l) in text.lines().enumerate() {
            if !l.trim().is_empty() {
                boxes.push(parse_box(l, &format!("{} line {}", p.display(), i + 1))?);
            }
        }
    }
    let native = rgb_to_tensor(&load_png(&a.image)?);
    let s = model.cfg.image_size;
    let image = crop_head(&native, [0.0, 0.0, 1.0, 1.0], s)?;
    let persons = boxes
        .iter()
        .map(|b| PersonInput::new(crop_head(&native, *b, model.cfg.crop_size)?, *b))
        .collect::<Result<Vec<_>>>()?;
    let preds = model.predict(&SceneInput { image, persons })?;
    for p in &preds {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            p.person_index, p.point[0], p.point[1], p.inout_prob, p.gaze_vector[0], p.gaze_vector[1]
        )
        .map_err(io_err)?;
    }
    if let Some(path) = &a.heatmap_out {
        let mut text = String::new();
        for p in &preds {
            let Some(h) = &p.heatmap else {
                return Err(Error::Config("--heatmap-out needs a heatmap checkpoint".into()));
            };
            text.push_str(&format!("# person {}\n", p.person_index));
            for row in h.data().chunks(h.shape()[1]) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                text.push_str(&cells.join(" "));
                text.push('\n');
            }
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Checks both variants; prints one line per parameter group.
pub fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    if a.scale != "micro" {
        return Err(Error::Config(format!("--scale {} is not supported; use micro", a.scale)));
    }
    let check = GradCheck {
        max_entries: (a.entries > 0).then_some(a.entries),
        loss_floor: CHECK_LOSS_FLOOR,
        seed: a.seed,
        fault: a.inject_fault.then_some(GradFault::MatmulDropTranspose),
        ..GradCheck::default()
    };
    let mut ok = true;
    for v in [Variant::Point, Variant::Heatmap] {
        let r = model_grad_check(v, &check)?;
        writeln!(out, "# variant {v}, tol {:e}", r.tol).map_err(io_err)?;
        writeln!(out, "{r}").map_err(io_err)?;
        ok &= r.passed();
    }
    writeln!(out, "gradcheck\t{}", if ok { "pass" } else { "FAIL" }).map_err(io_err)?;
    Ok(ok)
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    match run(cli, &mut out, &mut err) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            2
        }
    }
}
