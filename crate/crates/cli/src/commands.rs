//! Subcommand implementations. Each writes its human-readable report to
//! `out` and returns a typed error carrying the exit code class.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcis_core::eval::{evaluate, iou_sweep};
use pcis_core::gradcheck::{run_gradcheck, GradcheckOptions};
use pcis_core::optim::train;
use pcis_core::pipeline::{ablation_table, infer_all, run_ablation, ExperimentConfig};
use pcis_core::synth::generate_split;
use pcis_core::Scene;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, CliResult};
use crate::predictions::{format_ply, prediction_ids, read_predictions, write_inference};
use crate::scene_file::{read_scenes, write_scene, SCENE_EXTENSION};
use crate::settings::{Settings, MODEL_KEYS};

#[derive(Debug, Parser)]
#[command(name = "pcis", version, about = "Proposal-free point cloud instance segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/test split.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a per-epoch loss table.
    Train(TrainArgs),
    /// Predict semantics, embeddings and instances for scene files.
    Infer(InferArgs),
    /// Score prediction files against ground-truth scenes.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and score the loss × GCN-depth grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra key=value assignments, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = Settings::new();
        if let Some(p) = &self.config {
            s.apply_file(p)?;
        }
        s.apply_overrides(&self.set)?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum SceneFormat {
    #[default]
    Bin,
    Csv,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; scenes go to its `train/` and `test/` subdirectories.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SceneFormat::Bin)]
    pub format: SceneFormat,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene files or directories of scene files.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Loss table path; defaults to the checkpoint path with `.losses.tsv`.
    #[arg(long)]
    pub loss_table: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<id>.ply` colored by predicted instance.
    #[arg(long)]
    pub ply: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Clustering overrides as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Scene files or directories.
    pub scenes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of prediction files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth scene files or directories.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.25")]
    pub thresholds: Vec<f64>,
    /// Append the 0.50:0.05:0.95 sweep to the thresholds.
    #[arg(long)]
    pub sweep: bool,
    /// Class count; defaults to the largest count declared by the scenes.
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Machine-readable table; defaults to `eval.tsv` inside the prediction directory.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub points: usize,
    #[arg(long, default_value_t = 3)]
    pub instances: usize,
    /// Test hook: scale one group's analytic gradient by 1.1.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory holding `train/` and `test/` scene subdirectories.
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the ablation table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for one checkpoint per configuration.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn report(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("writing output: {e}")))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Infer(a) => cmd_infer(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut s = a.cfg.settings()?;
    if let Some(seed) = a.seed {
        s.synth.seed = seed;
    }
    let (train, test) = generate_split(&s.synth)?;
    let ext = match a.format {
        SceneFormat::Bin => SCENE_EXTENSION,
        SceneFormat::Csv => "csv",
    };
    for (sub, scenes) in [("train", &train), ("test", &test)] {
        let dir = a.out.join(sub);
        create_dir(&dir)?;
        for scene in scenes {
            write_scene(&dir.join(format!("{}.{ext}", scene.id)), scene)?;
        }
    }
    report(
        out,
        &format!("wrote {} train and {} test scenes to {}\n", train.len(), test.len(), a.out.display()),
    )
}

fn check_classes(scenes: &[Scene], settings: &Settings) -> CliResult<()> {
    for s in scenes {
        if s.num_classes != settings.model.num_classes {
            return Err(CliError::data(format!(
                "scene {} declares {} classes but the model has {}\nmodel configuration:\n{}",
                s.id,
                s.num_classes,
                settings.model.num_classes,
                settings.echo(MODEL_KEYS)
            )));
        }
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut s = a.cfg.settings()?;
    if let Some(e) = a.epochs {
        s.train.epochs = e;
    }
    if let Some(seed) = a.seed {
        s.train.seed = seed;
    }
    s.validate()?;
    let scenes = read_scenes(&a.data, Some(s.model.num_classes))?;
    if scenes.is_empty() {
        return Err(CliError::data("no scene files found in the training data"));
    }
    check_classes(&scenes, &s)?;
    let outcome = train(&scenes, &s.model, &s.loss, &s.train, |e| {
        eprintln!("epoch {}\ttotal {:.6}", e.epoch, e.total);
    })?;
    let ckpt = Checkpoint {
        settings: s.clone(),
        seed: s.train.seed,
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
    };
    ckpt.write(&a.checkpoint)?;
    let table_path = a.loss_table.clone().unwrap_or_else(|| a.checkpoint.with_extension("losses.tsv"));
    let table = outcome.report.loss_table();
    std::fs::write(&table_path, &table).map_err(|e| CliError::io(&table_path, e))?;
    report(
        out,
        &format!(
            "trained {} epochs on {} scenes in {:.1}s\ncheckpoint {}\nloss table {}\n",
            s.train.epochs,
            scenes.len(),
            outcome.report.wall_seconds,
            a.checkpoint.display(),
            table_path.display()
        ),
    )
}

pub fn cmd_infer(a: &InferArgs, out: &mut dyn Write) -> CliResult<()> {
    let ckpt = Checkpoint::read(&a.checkpoint)?;
    let mut s = ckpt.settings.clone();
    s.apply_overrides(&a.set)?;
    if let Some(t) = a.threads {
        s.threads = t;
    }
    s.validate()?;
    let scenes = read_scenes(&a.scenes, Some(s.model.num_classes))?;
    if scenes.is_empty() {
        return report(out, "no scenes given\n");
    }
    check_classes(&scenes, &s)?;
    let inferences = infer_all(&scenes, &ckpt.params, &s.model, &s.cluster, s.threads)?;
    create_dir(&a.out)?;
    for (scene, inf) in scenes.iter().zip(&inferences) {
        write_inference(&a.out, &scene.id, inf)?;
        if a.ply {
            let p = a.out.join(format!("{}.ply", scene.id));
            std::fs::write(&p, format_ply(scene, &inf.clusters.assignments)).map_err(|e| CliError::io(&p, e))?;
        }
    }
    let instances: usize = inferences.iter().map(|i| i.instances.len()).sum();
    report(
        out,
        &format!("inferred {} scenes, {instances} instances, into {}\n", scenes.len(), a.out.display()),
    )
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut thresholds = a.thresholds.clone();
    if a.sweep {
        thresholds.extend(iou_sweep().into_iter().filter(|t| !a.thresholds.contains(t)));
    }
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::usage("thresholds must lie in [0, 1]"));
    }
    let scenes = read_scenes(&a.gt, a.num_classes)?;
    let gt_ids: BTreeSet<String> = scenes.iter().map(|s| s.id.clone()).collect();
    if gt_ids.len() != scenes.len() {
        return Err(CliError::data("duplicate scene ids in the ground truth"));
    }
    let pred_ids: BTreeSet<String> = prediction_ids(&a.pred)?.into_iter().collect();
    if gt_ids != pred_ids {
        let missing: Vec<&String> = gt_ids.difference(&pred_ids).collect();
        let extra: Vec<&String> = pred_ids.difference(&gt_ids).collect();
        return Err(CliError::data(format!(
            "scene ids differ\nmissing predictions: {missing:?}\npredictions without ground truth: {extra:?}"
        )));
    }
    let num_classes = a.num_classes.unwrap_or_else(|| scenes.iter().map(|s| s.num_classes).max().unwrap_or(0));
    let mut preds = Vec::with_capacity(scenes.len());
    let mut semantic = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let (sem, inst) = read_predictions(&a.pred, &scene.id)?;
        if sem.len() != scene.len() {
            return Err(CliError::data(format!(
                "scene {}: {} semantic predictions for {} points",
                scene.id,
                sem.len(),
                scene.len()
            )));
        }
        if let Some(bad) = inst.iter().flat_map(|p| &p.point_indices).find(|&&i| i >= scene.len()) {
            return Err(CliError::data(format!("scene {}: instance point index {bad} out of range", scene.id)));
        }
        semantic.push(sem);
        preds.push(inst);
    }
    let result = evaluate(&preds, &semantic, &scenes, num_classes, &thresholds)?;

    let mut text = String::from("class");
    for t in &thresholds {
        text.push_str(&format!("\tAP@{t}"));
    }
    text.push_str("\tIoU\n");
    for c in 0..num_classes {
        text.push_str(&c.to_string());
        for ti in 0..thresholds.len() {
            text.push_str(&format!("\t{}", fmt_metric(result.per_class_ap[ti][c])));
        }
        text.push_str(&format!("\t{}\n", fmt_metric(result.semantic.per_class[c])));
    }
    text.push_str("mean");
    for m in &result.map {
        text.push_str(&format!("\t{m:.4}"));
    }
    text.push_str(&format!("\t{:.4}\n", result.semantic.miou));
    for (t, m) in thresholds.iter().zip(&result.map) {
        text.push_str(&format!("mAP@{t} = {m:.6}\n"));
    }
    text.push_str(&format!("mIoU = {:.6}\n", result.semantic.miou));

    let table_path = a.table.clone().unwrap_or_else(|| a.pred.join("eval.tsv"));
    std::fs::write(&table_path, result.to_table()).map_err(|e| CliError::io(&table_path, e))?;
    report(out, &text)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let s = a.cfg.settings()?;
    s.validate()?;
    let opts = GradcheckOptions { corrupt_group: a.corrupt.clone(), ..GradcheckOptions::default() };
    let start = Instant::now();
    let r = run_gradcheck(a.seed, a.points, a.instances, &s.model, &s.loss, &opts)?;
    report(out, &r.render())?;
    report(
        out,
        &format!("redrawn probes: {}\nelapsed: {:.2}s\n", r.redrawn, start.elapsed().as_secs_f64()),
    )?;
    if r.passed() {
        report(out, "gradcheck passed\n")
    } else {
        Err(CliError::numerical(format!(
            "gradcheck failed for groups: {}",
            r.failures().join(", ")
        )))
    }
}

pub fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut s = a.cfg.settings()?;
    if let Some(e) = a.epochs {
        s.train.epochs = e;
    }
    if let Some(seed) = a.seed {
        s.train.seed = seed;
    }
    if let Some(t) = a.threads {
        s.threads = t;
    }
    s.validate()?;
    let num_classes = Some(s.model.num_classes);
    let train_set = read_scenes(&[a.data.join("train")], num_classes)?;
    let test_set = read_scenes(&[a.data.join("test")], num_classes)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(CliError::data(format!("{}: train/ and test/ must both hold scenes", a.data.display())));
    }
    check_classes(&train_set, &s)?;
    check_classes(&test_set, &s)?;
    let exp = ExperimentConfig {
        model: s.model.clone(),
        loss: s.loss,
        train: s.train.clone(),
        cluster: s.cluster,
        threads: s.threads,
    };
    if let Some(dir) = &a.checkpoints {
        create_dir(dir)?;
    }
    let mut saved = Ok(());
    let rows = run_ablation(&train_set, &test_set, &exp, |row| {
        eprintln!("{}\tAP@0.5 {:.4}", row.name(), row.ap50);
        if let (Some(dir), Ok(())) = (&a.checkpoints, &saved) {
            let mut cs = s.clone();
            cs.model.gcn_layers = row.gcn_layers;
            cs.loss.structure_weighting = row.loss;
            let ck = Checkpoint { settings: cs, seed: s.train.seed, params: row.params.clone(), optimizer: None };
            saved = ck.write(&dir.join(format!("{}.ckpt", row.name())));
        }
    })?;
    saved?;
    let table = ablation_table(&rows);
    if let Some(p) = &a.out {
        std::fs::write(p, &table).map_err(|e| CliError::io(p, e))?;
    }
    report(out, &table)
}
