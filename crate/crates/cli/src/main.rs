//! Command-line entry point: corpus generation, training, evaluation,
//! entropy analysis and gradient checking.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure
//! (NaN, divergence, gradient check failure).

mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use config::{base_model_config, echo_config, env_seed, load_config_file, NodeCtxFlag, Profile};
use ilac_core::autodiff::{finite_diff_check, FloatWidth, Real};
use ilac_core::data::{generate_corpus, read_corpus, write_corpus, GenSpec};
use ilac_core::entropy::{entropy_report, format_table};
use ilac_core::error::Error as CoreError;
use ilac_core::eval::{evaluate_freq, evaluate_model, freq_baseline, EvalMode, EvalReport};
use ilac_core::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use ilac_core::train::{
    sample_relations_seeded, scene_loss, scene_loss_and_grads, train, TrainConfig,
};
use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ilac",
    about = "Scene-graph generation with an image-level attentional context",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (train/val/test JSONL files).
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint or the frequency baseline on a corpus.
    Eval(EvalArgs),
    /// Entropy study (marginal/conditional, objects and predicates).
    Entropy(EntropyArgs),
    /// Verify model gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    contexts: Option<usize>,
    #[arg(long)]
    obj_classes: Option<usize>,
    #[arg(long)]
    pred_classes: Option<usize>,
    /// Context strength γ in [0, 1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Detector noise τ (> 0); larger is a weaker detector.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    feat_dim: Option<usize>,
    #[arg(long)]
    objects_min: Option<usize>,
    #[arg(long)]
    objects_max: Option<usize>,
    #[arg(long)]
    relations_min: Option<usize>,
    #[arg(long)]
    relations_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write features/soft labels inline instead of re-synthesizing on load.
    #[arg(long)]
    with_features: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus for checkpoint selection.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Refinement iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Ablation switch; `no-context` skips the image-level context.
    #[arg(long)]
    ablation: Option<String>,
    /// Which context the node update reads.
    #[arg(long, value_enum)]
    node_ctx: Option<NodeCtxFlag>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    predicates_per_image: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "f64")]
    width: String,
    #[arg(long)]
    workers: Option<usize>,
    /// Clip gradients at this global norm.
    #[arg(long)]
    clip: Option<f64>,
    /// Start from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Corpus to evaluate on (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `freq` evaluates the frequency baseline instead of a checkpoint.
    #[arg(long)]
    baseline: Option<String>,
    /// Training corpus for the frequency statistics.
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    /// predcls, sgcls or both.
    #[arg(long, default_value = "both")]
    mode: String,
    /// Comma-separated recall cutoffs.
    #[arg(long, default_value = "50,100")]
    k: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EntropyArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Central-difference step. The default keeps f64 rounding noise well
    /// under tol even for near-zero gradient components.
    #[arg(long, default_value_t = 2e-4)]
    h: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Entropy(args) => cmd_entropy(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<CoreError>()
                .map(|c| c.is_numerical())
                .unwrap_or(false);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let file = load_config_file(args.config.as_deref())?;
    let base = file.gen.unwrap_or(GenSpec {
        n_contexts: 5,
        n_obj_classes: 30,
        n_pred_classes: 10,
        scenes: 1000,
        objects_per_scene: (3, 6),
        relations_per_scene: (2, 4),
        context_strength: 1.0,
        detector_noise: 0.45,
        feat_dim: 32,
        seed: 0,
    });
    let spec = GenSpec {
        n_contexts: args.contexts.unwrap_or(base.n_contexts),
        n_obj_classes: args.obj_classes.unwrap_or(base.n_obj_classes),
        n_pred_classes: args.pred_classes.unwrap_or(base.n_pred_classes),
        scenes: args.scenes.unwrap_or(base.scenes),
        objects_per_scene: (
            args.objects_min.unwrap_or(base.objects_per_scene.0),
            args.objects_max.unwrap_or(base.objects_per_scene.1),
        ),
        relations_per_scene: (
            args.relations_min.unwrap_or(base.relations_per_scene.0),
            args.relations_max.unwrap_or(base.relations_per_scene.1),
        ),
        context_strength: args.gamma.unwrap_or(base.context_strength),
        detector_noise: args.tau.unwrap_or(base.detector_noise),
        feat_dim: args.feat_dim.unwrap_or(base.feat_dim),
        seed: env_seed()?.or(args.seed).unwrap_or(base.seed),
    };
    echo_config("gen", &spec);

    let (train_c, val_c, test_c) = generate_corpus(&spec).map_err(anyhow::Error::from)?;
    std::fs::create_dir_all(&args.out)?;
    for (name, corpus) in [
        ("train.jsonl", &train_c),
        ("val.jsonl", &val_c),
        ("test.jsonl", &test_c),
    ] {
        let path = args.out.join(name);
        write_corpus(&path, corpus, args.with_features).map_err(anyhow::Error::from)?;
        println!("wrote {} ({} scenes)", path.display(), corpus.scenes.len());
    }
    Ok(())
}

fn parse_width(s: &str) -> Result<FloatWidth> {
    match s {
        "f32" => Ok(FloatWidth::F32),
        "f64" => Ok(FloatWidth::F64),
        other => bail!("unknown float width {other:?} (expected f32 or f64)"),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = load_config_file(args.config.as_deref())?;
    let corpus = read_corpus(&args.corpus)
        .with_context(|| format!("loading training corpus {}", args.corpus.display()))?;
    let val = match &args.val {
        Some(p) => Some(
            read_corpus(p).with_context(|| format!("loading validation corpus {}", p.display()))?,
        ),
        None => None,
    };

    let mut model_cfg = file
        .model
        .unwrap_or_else(|| base_model_config(args.profile));
    // The corpus dictates the input interface.
    model_cfg.feat_dim = corpus.header.spec.feat_dim;
    model_cfg.n_obj_classes = corpus.header.spec.n_obj_classes;
    model_cfg.n_pred_classes = corpus.header.spec.n_pred_classes;
    if let Some(iters) = args.iters {
        model_cfg.n_iters = iters;
    }
    if let Some(node_ctx) = args.node_ctx {
        model_cfg.node_ctx = node_ctx.into();
    }
    match args.ablation.as_deref() {
        None => {}
        Some("no-context") => model_cfg.no_context = true,
        Some(other) => bail!("unknown ablation {other:?} (expected no-context)"),
    }

    let base_train = file.train.unwrap_or_default();
    let train_cfg = TrainConfig {
        learning_rate: args.lr.unwrap_or(base_train.learning_rate),
        batch_size: args.batch_size.unwrap_or(base_train.batch_size),
        epochs: args.epochs.unwrap_or(base_train.epochs),
        predicates_per_image: args
            .predicates_per_image
            .unwrap_or(base_train.predicates_per_image),
        seed: env_seed()?.or(args.seed).unwrap_or(base_train.seed),
        grad_clip: args.clip.or(base_train.grad_clip),
        workers: args.workers.unwrap_or(base_train.workers),
        ..base_train
    };
    let width = parse_width(&args.width)?;
    echo_config("model", &model_cfg);
    echo_config("train", &train_cfg);

    std::fs::create_dir_all(&args.out)?;
    match width {
        FloatWidth::F64 => run_train::<f64>(&args, &corpus, val.as_ref(), &model_cfg, &train_cfg),
        FloatWidth::F32 => run_train::<f32>(&args, &corpus, val.as_ref(), &model_cfg, &train_cfg),
    }
}

fn run_train<F: Real>(
    args: &TrainArgs,
    corpus: &ilac_core::data::Corpus,
    val: Option<&ilac_core::data::Corpus>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<()> {
    let initial = match &args.resume {
        Some(path) => {
            let (ckpt_cfg, params) = load_checkpoint::<F>(path)?;
            if &ckpt_cfg != model_cfg {
                bail!(
                    "checkpoint config {} does not match the requested run config",
                    path.display()
                );
            }
            Some(params)
        }
        None => None,
    };

    let outcome = train::<F>(corpus, val, model_cfg, train_cfg, initial)?;

    let metrics_path = args.out.join("metrics.jsonl");
    let mut lines = String::new();
    for m in &outcome.metrics {
        lines.push_str(&serde_json::to_string(m)?);
        lines.push('\n');
    }
    std::fs::write(&metrics_path, lines)?;

    let ckpt_path = args.out.join("checkpoint.ilac");
    save_checkpoint(&ckpt_path, model_cfg, &outcome.params)?;
    println!(
        "trained {} epochs ({} optimizer steps); checkpoint {} (best epoch: {})",
        outcome.metrics.len(),
        outcome.optimizer_steps,
        ckpt_path.display(),
        outcome
            .best_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "final".into()),
    );
    println!("metrics log: {}", metrics_path.display());
    Ok(())
}

fn parse_ks(s: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad K list {s:?}"))?;
    if ks.is_empty() || ks.iter().any(|&k| k < 1) {
        bail!("K values must be positive");
    }
    Ok(ks)
}

fn parse_modes(s: &str) -> Result<Vec<EvalMode>> {
    match s {
        "predcls" => Ok(vec![EvalMode::Predcls]),
        "sgcls" => Ok(vec![EvalMode::Sgcls]),
        "both" => Ok(vec![EvalMode::Predcls, EvalMode::Sgcls]),
        other => bail!("unknown mode {other:?} (expected predcls, sgcls or both)"),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let scenes = corpus.encode_all()?;
    let ks = parse_ks(&args.k)?;
    let modes = parse_modes(&args.mode)?;
    let workers = args.workers.unwrap_or(1);

    let reports: Vec<EvalReport> = match (&args.baseline, &args.checkpoint) {
        (Some(b), _) if b == "freq" => {
            let train_path = args
                .train_corpus
                .as_ref()
                .ok_or_else(|| anyhow!("--baseline freq requires --train-corpus"))?;
            let train_c = read_corpus(train_path)?;
            let baseline = freq_baseline(&train_c)?;
            modes
                .iter()
                .map(|&mode| evaluate_freq(&scenes, &baseline, mode, &ks))
                .collect::<std::result::Result<_, _>>()?
        }
        (Some(other), _) => bail!("unknown baseline {other:?} (expected freq)"),
        (None, Some(ckpt)) => {
            let (cfg, params) = load_checkpoint::<f64>(ckpt)?;
            if cfg.feat_dim != corpus.header.spec.feat_dim
                || cfg.n_obj_classes != corpus.header.spec.n_obj_classes
                || cfg.n_pred_classes != corpus.header.spec.n_pred_classes
            {
                return Err(CoreError::Checkpoint(format!(
                    "checkpoint interface (feat {}, obj {}, pred {}) does not match corpus (feat {}, obj {}, pred {})",
                    cfg.feat_dim,
                    cfg.n_obj_classes,
                    cfg.n_pred_classes,
                    corpus.header.spec.feat_dim,
                    corpus.header.spec.n_obj_classes,
                    corpus.header.spec.n_pred_classes
                ))
                .into());
            }
            echo_config("model", &cfg);
            modes
                .iter()
                .map(|&mode| evaluate_model(&scenes, &params, &cfg, mode, &ks, workers))
                .collect::<std::result::Result<_, _>>()?
        }
        (None, None) => bail!("eval needs --checkpoint or --baseline freq"),
    };

    println!("{:<8} {:>7} {:>7} {:>8}", "mode", "R@50", "R@100", "objacc");
    for r in &reports {
        println!("{}", r.table_row());
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join("eval_report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&reports)?)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn cmd_entropy(args: EntropyArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let (objects, predicates) = entropy_report(&corpus)?;
    print!("{}", format_table(&objects, &predicates));
    println!(
        "gap objects: {:+.3} nats, predicates: {:+.3} nats",
        objects.h_marginal - objects.h_conditional,
        predicates.h_marginal - predicates.h_conditional
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join("entropy_report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&(objects, predicates))?)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let seed = env_seed()?.or(args.seed).unwrap_or(7);
    let model_cfg = ModelConfig {
        d_c: 8,
        d_v: 8,
        d_e: 8,
        d_phi: 4,
        feat_dim: 6,
        n_obj_classes: 5,
        n_pred_classes: 4,
        ..ModelConfig::default()
    };
    let gen = GenSpec {
        n_contexts: 2,
        n_obj_classes: 5,
        n_pred_classes: 4,
        scenes: 3,
        objects_per_scene: (3, 3),
        relations_per_scene: (2, 2),
        context_strength: 1.0,
        detector_noise: 0.5,
        feat_dim: 6,
        seed,
    };
    echo_config("model", &model_cfg);
    echo_config("gradcheck-scene", &gen);

    let (corpus, _, _) = generate_corpus(&gen)?;
    let scene = corpus.encode_scene(&corpus.scenes[0])?;
    let sampled = sample_relations_seeded(&scene, 6, seed);

    let mut params = ModelParams::<f64>::init(&model_cfg, seed);
    let (_, grads) = scene_loss_and_grads(&params, &model_cfg, &scene, &sampled)?;
    let mut analytic = HashMap::new();
    let mut idx = 0;
    params.visit(&mut |name, _| {
        analytic.insert(name.to_string(), grads[idx].clone());
        idx += 1;
    });

    let report = finite_diff_check(
        &mut params,
        &analytic,
        |p| scene_loss(p, &model_cfg, &scene, &sampled),
        args.h,
        args.tol,
    )?;
    println!("{report}");
    if report.pass() {
        Ok(())
    } else {
        Err(CoreError::GradCheckFailed(report.failures()).into())
    }
}

#[cfg(test)]
mod smoke {
    use super::*;

    #[test]
    fn k_and_mode_parsers() {
        assert_eq!(parse_ks("50,100").unwrap(), vec![50, 100]);
        assert!(parse_ks("0").is_err());
        assert_eq!(parse_modes("both").unwrap().len(), 2);
        assert!(parse_modes("nope").is_err());
    }

    #[test]
    fn width_parser() {
        assert_eq!(parse_width("f64").unwrap(), FloatWidth::F64);
        assert!(parse_width("f16").is_err());
    }
}
