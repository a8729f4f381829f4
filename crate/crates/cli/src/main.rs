//! `stackgrasp` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stackgrasp::dataset::{hflip, load_scene, rot90, serialize_scene};
use stackgrasp::evaluation::{evaluate, EvalThresholds, MetricsReport, SceneEval};
use stackgrasp::execution::{fit_affine, CalibrationPair, ExecutionError};
use stackgrasp::perception::{perceive, PerceptionConfig};
use stackgrasp::plan::{plan, Plan};
use stackgrasp::predictions::load_predictions;
use stackgrasp::relation::{symmetrize, Target};
use stackgrasp::sim::{run_simulation, SimulationConfig};

/// Residual above which a calibration is reported as suspect, mm.
const RESIDUAL_WARN_MM: f64 = 5.0;

#[derive(Parser)]
#[command(name = "stackgrasp", version, about = "Grasp evaluation, planning and simulation for object stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a directory of predictions against a directory of annotations.
    Eval(EvalArgs),
    /// Plan grasps toward a target from one predictions file.
    Plan(PlanArgs),
    /// Run simulated grasp-until-target trials.
    Simulate(SimulateArgs),
    /// Fit the pixel-to-robot map from correspondence pairs.
    Calibrate(CalibrateArgs),
    /// Flip or rotate an annotated scene.
    Augment(AugmentArgs),
}

#[derive(Args)]
struct Output {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a human-readable table.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct Thresholds {
    /// Box IoU a detection must exceed.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Grasp Jaccard index a grasp must exceed.
    #[arg(long, default_value_t = 0.25)]
    jaccard: f64,
    /// Largest grasp angle difference, degrees (exclusive).
    #[arg(long, default_value_t = 30.0)]
    angle: f64,
    /// Candidates considered when picking an object's grasp.
    #[arg(long, default_value_t = 3)]
    topn: usize,
}

impl Thresholds {
    fn eval(&self) -> EvalThresholds {
        EvalThresholds {
            iou: self.iou,
            jaccard: self.jaccard,
            angle: self.angle,
        }
    }

    fn perception(&self) -> PerceptionConfig {
        PerceptionConfig {
            top_n: self.topn,
            ..PerceptionConfig::default()
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of annotated scenes, one `<id>.json` each.
    #[arg(long)]
    gt: PathBuf,
    /// Directory of predictions named like the annotations.
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    thresholds: Thresholds,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PlanArgs {
    /// Predictions file (an annotated scene is also accepted).
    #[arg(long)]
    scene: PathBuf,
    /// Category name, or `id:<n>` for one instance.
    #[arg(long)]
    target: String,
    /// The target is present but hidden: clear visible objects instead of failing.
    #[arg(long)]
    assume_hidden: bool,
    #[arg(long, default_value_t = 3)]
    topn: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation configuration; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the covered fraction at which an object counts as hidden.
    #[arg(long)]
    visibility: Option<f64>,
    /// Overrides the number of grasp candidates considered.
    #[arg(long)]
    topn: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CalibrateArgs {
    /// JSON list of `{"pixel": [u, v, depth], "robot": [x, y, z]}`.
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct AugmentArgs {
    /// Annotated scene.
    #[arg(long)]
    scene: PathBuf,
    /// Mirror left to right.
    #[arg(long)]
    hflip: bool,
    /// Quarter turns to apply after any flip.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    rot90: i32,
    /// Output scene file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn emit<T: Serialize>(value: &T, output: &Output, table: impl FnOnce() -> String) -> Result<(), Failure> {
    let mut json = serde_json::to_string_pretty(value).map_err(data)?;
    json.push('\n');
    match &output.out {
        Some(path) => fs::write(path, &json).map_err(|e| data(format!("{}: {e}", path.display())))?,
        None if !output.pretty => print!("{json}"),
        None => {}
    }
    if output.pretty {
        print!("{}", table());
    }
    Ok(())
}

fn scene_ids(dir: &Path) -> Result<Vec<String>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(data)?.path();
        if path.extension().is_some_and(|x| x == "json") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn metrics_table(r: &MetricsReport) -> String {
    let mut out = format!("scenes           {}\n", r.scenes);
    out += &format!("mAP with grasp   {:.4}\n", r.map_with_grasp);
    out += &format!("obj recall       {:.4}\n", r.obj_recall);
    out += &format!("obj precision    {:.4}\n", r.obj_precision);
    out += &format!("image accuracy   {:.4}\n", r.image_accuracy);
    for (n, rc) in &r.image_accuracy_by_count {
        out += &format!("  {n} objects       {:.4} ({}/{})\n", rc.rate, rc.correct, rc.total);
    }
    for (cls, ap) in &r.per_class_ap {
        out += &format!("  AP {cls:<14} {ap:.4}\n");
    }
    out
}

/// Writes the report; returns how many scenes had to be skipped.
fn cmd_eval(args: &EvalArgs) -> Result<usize, Failure> {
    let gt_ids = scene_ids(&args.gt)?;
    let pred_ids = scene_ids(&args.pred)?;
    let perception = args.thresholds.perception();
    let mut problems = 0;
    let mut scenes = Vec::new();
    for id in &gt_ids {
        let gt_path = args.gt.join(format!("{id}.json"));
        let pred_path = args.pred.join(format!("{id}.json"));
        if pred_ids.binary_search(id).is_err() {
            eprintln!("skipped {id}: no predictions at {}", pred_path.display());
            problems += 1;
            continue;
        }
        let gt = match load_scene(&gt_path) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("skipped {id}: {}: {e}", gt_path.display());
                problems += 1;
                continue;
            }
        };
        let per = match load_predictions(&pred_path)
            .map_err(|e| e.to_string())
            .and_then(|p| perceive(&p, &perception).map_err(|e| e.to_string()))
        {
            Ok(p) => p,
            Err(e) => {
                eprintln!("skipped {id}: {}: {e}", pred_path.display());
                problems += 1;
                continue;
            }
        };
        scenes.push(SceneEval {
            id: id.clone(),
            gt,
            labels: symmetrize(&per.relations),
            objects: per.objects,
        });
    }
    for id in pred_ids.iter().filter(|id| gt_ids.binary_search(id).is_err()) {
        eprintln!("skipped {id}: no annotation in {}", args.gt.display());
        problems += 1;
    }
    let report = evaluate(&scenes, &args.thresholds.eval());
    emit(&report, &args.output, || metrics_table(&report))?;
    Ok(problems)
}

fn plan_table(p: &Plan) -> String {
    let mut out = String::new();
    for s in &p.steps {
        let grasp = s
            .grasp
            .map(|g| format!("({:.1}, {:.1}, {:.1}, {:.1}, {:.1})", g.x(), g.y(), g.w(), g.h(), g.theta()))
            .unwrap_or_else(|| "none".into());
        let tag = if s.action.is_final_target { "  target" } else { "" };
        out += &format!("{:>3}  id {:<4} {:<16} grasp {grasp}{tag}\n", s.step + 1, s.action.object, s.category);
    }
    if !p.reaches_target {
        out += "target not reached\n";
    }
    out
}

fn cmd_plan(args: &PlanArgs) -> Result<(), Failure> {
    let target: Target = args
        .target
        .parse()
        .map_err(|e| data(format!("bad target {:?}: {e}", args.target)))?;
    let preds = load_predictions(&args.scene).map_err(|e| data(format!("{}: {e}", args.scene.display())))?;
    let cfg = PerceptionConfig {
        top_n: args.topn,
        ..PerceptionConfig::default()
    };
    let p = plan(&preds, &target, &cfg, args.assume_hidden).map_err(|e| {
        let hint = if args.assume_hidden { "" } else { " (use --assume-hidden if it is covered)" };
        data(format!("{e}{hint}"))
    })?;
    emit(&p, &args.output, || plan_table(&p))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SimulationConfig>(&text).map_err(|e| data(format!("{}: {e}", path.display())))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.visibility {
        cfg.visibility_threshold = v;
    }
    if let Some(n) = args.topn {
        cfg.perception.top_n = n;
    }
    let report = run_simulation(&cfg).map_err(data)?;
    emit(&report, &args.output, || report.render())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.pairs).map_err(|e| data(format!("{}: {e}", args.pairs.display())))?;
    let pairs: Vec<CalibrationPair> =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", args.pairs.display())))?;
    let cal = fit_affine(&pairs).map_err(|e| match e {
        ExecutionError::RankDeficient | ExecutionError::SingularMap(_) => Failure::Numerical(e.to_string()),
        other => data(other),
    })?;
    if cal.residual_rms > RESIDUAL_WARN_MM {
        eprintln!(
            "warning: residual RMS {:.3} mm exceeds {RESIDUAL_WARN_MM} mm; check the correspondences",
            cal.residual_rms
        );
    }
    emit(&cal, &args.output, || {
        let mut out = String::new();
        for (row, off) in cal.map.linear.iter().zip(cal.map.offset) {
            out += &format!("[{:>12.6} {:>12.6} {:>12.6}] + {:>12.6}\n", row[0], row[1], row[2], off);
        }
        out += &format!("residual RMS {:.6} mm over {} pairs\n", cal.residual_rms, cal.num_pairs);
        out
    })
}

fn cmd_augment(args: &AugmentArgs) -> Result<(), Failure> {
    let mut rec = load_scene(&args.scene).map_err(|e| data(format!("{}: {e}", args.scene.display())))?;
    if args.hflip {
        rec = hflip(&rec);
    }
    if args.rot90 != 0 {
        rec = rot90(&rec, args.rot90);
    }
    let text = serialize_scene(&rec);
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Eval(a) => cmd_eval(a).and_then(|problems| {
            if problems == 0 {
                Ok(())
            } else {
                Err(Failure::Data(format!("{problems} scene(s) skipped")))
            }
        }),
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Augment(a) => cmd_augment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Data(m) | Failure::Numerical(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
