//! Command-line front end.
//!
//! Exit codes: 0 success, 1 task failure, 2 usage or configuration error,
//! 3 proposal backend error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use kpdistill::config::Config;
use kpdistill::geometry::{Rot6D, Vector3};
use kpdistill::keypoint::{skill_file, DistillError, DistilledSkill};
use kpdistill::policy::{checkpoint, train, Pose};
use kpdistill::proposal::{
    FileMaskStore, LabelMapSegmenter, MaskGenerator, ProposalBackend, ProposalError, RemoteBackend, ReplayBackend,
    Scenario, ScriptedBackend, Transcript,
};
use kpdistill::runtime::eval::eval_synthetic;
use kpdistill::runtime::io::{format_trajectory_csv, read_pgm, read_rgbd, SkillBundle};
use kpdistill::runtime::synthetic::{generate_synthetic_task, SyntheticParams};
use kpdistill::runtime::{
    distill_bundle, featurize, infer, load_scene_features, mask_weights, training_pairs, InferInputs, RuntimeError,
    SceneWorld,
};

#[derive(Parser)]
#[command(name = "kpdistill", version, about = "Keypoint distillation and keypoint-conditioned trajectory diffusion")]
struct Cli {
    /// TOML configuration with dotted keys; missing keys keep defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Scripted,
    Remote,
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Distill task keypoints from a skill dataset directory.
    Distill {
        #[arg(long)]
        skill: PathBuf,
        #[arg(long, value_enum)]
        backend: BackendKind,
        /// Scenario for the scripted backend [default: <skill>/scenario.toml].
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Recorded transcript for the replay backend.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Where to write the transcript of this session.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Directory of precomputed masks (masks.txt) [default: part labels
        /// in <skill>/labels/frame_0000.pgm].
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill again from a recorded transcript.
    Replay {
        #[arg(long)]
        skill: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the trajectory model on the demonstrations of a skill dataset.
    Train {
        /// Distilled skill file.
        #[arg(long)]
        skill: PathBuf,
        /// Skill dataset directory holding the demonstrations.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect keypoints in a scene, sample trajectories and plan the approach.
    Infer {
        /// Directory with obs.ppm, obs.kdep, obs.cam and optionally obs.kfea.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        skill: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        world: PathBuf,
        /// Start position `x,y,z` [default: runtime.home].
        #[arg(long, value_parser = parse_point)]
        start: Option<Vector3<f64>>,
        /// Coarse region mask (PGM, non-zero inside) for discounted detection.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, distill, train and infer on synthetic tasks.
    EvalSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        n_tasks: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write one synthetic task as a skill dataset directory.
    GenerateSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        demos: usize,
        #[arg(long, default_value_t = 3)]
        held_out: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_point(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

fn proposal_code(e: &ProposalError) -> u8 {
    match e {
        ProposalError::Backend(_) | ProposalError::Parse(_) | ProposalError::Transcript(_) => 3,
        _ => 2,
    }
}

impl From<ProposalError> for Failure {
    fn from(e: ProposalError) -> Self {
        Self {
            code: proposal_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        let code = match &e {
            RuntimeError::AllKeypointsNull | RuntimeError::Exhausted(_) => 1,
            RuntimeError::Distill(DistillError::ExhaustedRounds(_)) => 1,
            RuntimeError::Distill(DistillError::Backend(p)) | RuntimeError::Proposal(p) => proposal_code(p),
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p).map_err(Failure::usage),
        None => Ok(Config::default()),
    }
}

fn load_skill(path: &Path) -> Result<DistilledSkill, Failure> {
    skill_file::load(path).map_err(Failure::usage)
}

fn segmenter(skill_dir: &Path, masks: Option<&Path>) -> Result<Box<dyn MaskGenerator>, Failure> {
    if let Some(dir) = masks {
        return Ok(Box::new(FileMaskStore::open(dir).map_err(Failure::usage)?));
    }
    let labels = skill_dir.join("labels").join("frame_0000.pgm");
    let (w, h, values) = read_pgm(&labels).map_err(|e| {
        Failure::usage(format!("{e}; pass --masks with a precomputed mask directory instead"))
    })?;
    Ok(Box::new(LabelMapSegmenter::new(w, h, values).map_err(Failure::usage)?))
}

fn run_distill(
    config: &Config,
    skill_dir: &Path,
    backend: &mut dyn ProposalBackend,
    masks: Option<&Path>,
    record: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let bundle = SkillBundle::read(skill_dir)?;
    let segmenter = segmenter(skill_dir, masks)?;
    let (seed_scene, demo_scenes) = load_scene_features(&bundle, Some(skill_dir), &config.features)?;
    let mut transcript = Transcript::new();
    let result = distill_bundle(
        &bundle,
        &seed_scene,
        &demo_scenes,
        backend,
        segmenter.as_ref(),
        &config.distill,
        &mut transcript,
    );
    if let Some(path) = record {
        transcript.write(path).map_err(Failure::usage)?;
    }
    let skill = result?;
    skill_file::save(&skill, out).map_err(Failure::usage)?;
    info!(
        "{} keypoints accepted in round {} ({:.0}% consistent)",
        skill.keypoints.len(),
        skill.provenance.rounds,
        100.0 * skill.provenance.passing_fraction
    );
    println!("wrote {} ({} keypoints)", out.display(), skill.keypoints.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Distill {
            skill,
            backend,
            scenario,
            transcript,
            record,
            masks,
            out,
        } => {
            let mut backend: Box<dyn ProposalBackend> = match backend {
                BackendKind::Scripted => {
                    let path = scenario.unwrap_or_else(|| skill.join("scenario.toml"));
                    Box::new(ScriptedBackend::new(Scenario::read(&path).map_err(Failure::usage)?))
                }
                BackendKind::Remote => Box::new(RemoteBackend::new(config.backend.clone())?),
                BackendKind::Replay => {
                    let path = transcript.ok_or_else(|| Failure::usage("--backend replay needs --transcript"))?;
                    Box::new(ReplayBackend::new(&Transcript::read(&path)?))
                }
            };
            run_distill(&config, &skill, backend.as_mut(), masks.as_deref(), record.as_deref(), &out)
        }
        Command::Replay {
            skill,
            transcript,
            masks,
            out,
        } => {
            let recorded = Transcript::read(&transcript)?;
            let mut backend = ReplayBackend::new(&recorded);
            run_distill(&config, &skill, &mut backend, masks.as_deref(), None, &out)
        }
        Command::Train { skill, demos, out } => {
            let skill = load_skill(&skill)?;
            let bundle = SkillBundle::read(&demos)?;
            let (_, demo_scenes) = load_scene_features(&bundle, Some(&demos), &config.features)?;
            let pairs = training_pairs(
                &bundle,
                &demo_scenes,
                &skill,
                &config.distill.detection,
                config.runtime.phase_threshold,
                config.policy.horizon,
            )?;
            info!("{} training pairs from {} demonstrations", pairs.len(), bundle.demos.len());
            let (model, report) = train(&pairs, &config.policy).map_err(|e| Failure::from(RuntimeError::from(e)))?;
            checkpoint::save(&model, &out).map_err(Failure::usage)?;
            println!(
                "wrote {} (loss {:.4} -> {:.4})",
                out.display(),
                report.initial_loss,
                report.final_loss
            );
            Ok(())
        }
        Command::Infer {
            scene,
            skill,
            model,
            world,
            start,
            mask,
            out,
        } => {
            let skill = load_skill(&skill)?;
            let model = checkpoint::load(&model).map_err(Failure::usage)?;
            let world_text = fs::read_to_string(&world).map_err(|e| Failure::usage(format!("{}: {e}", world.display())))?;
            let world = SceneWorld::parse(&world_text).map_err(|e| Failure::usage(format!("{}: {e}", world.display())))?;
            let image = read_rgbd(&scene.join("obs"))?;
            let sidecar = scene.join("obs.kfea");
            let featured = featurize(&image, sidecar.exists().then_some(sidecar.as_path()), &config.features)?;
            let weights = match &mask {
                Some(path) => {
                    let (w, h, values) = read_pgm(path)?;
                    if (w, h) != (image.width, image.height) {
                        return Err(Failure::usage(format!("{} does not match the scene size", path.display())));
                    }
                    let inside: Vec<bool> = values.iter().map(|v| *v != 0).collect();
                    Some(mask_weights(&featured, w, &inside, config.infer.mask_discount)?)
                }
                None => None,
            };
            let start = start.unwrap_or_else(|| Vector3::from(config.runtime.home));
            let inputs = InferInputs {
                scene: &featured,
                skill: &skill,
                model: &model,
                world: &world,
                start: Pose::new(start, Rot6D::IDENTITY, 1.0),
                mask_weights: weights.as_deref(),
            };
            let plan = infer(&inputs, &config.infer)?;
            let mut poses = plan.approach_path.clone();
            poses.extend(plan.execution.poses.iter().skip(1).copied());
            let times: Vec<f64> = (0..poses.len()).map(|i| i as f64 * 0.05).collect();
            fs::write(&out, format_trajectory_csv(&times, &poses))
                .map_err(|e| Failure::usage(format!("{}: {e}", out.display())))?;
            let diagnostics = serde_json::json!({
                "chosen_sample": plan.chosen,
                "approach_poses": plan.approach_path.len(),
                "execution_poses": plan.execution.poses.len(),
                "verdicts": plan.verdicts,
                "detected_keypoints": plan.condition.entries.len() - plan.condition.filled_count(),
                "imputed_keypoints": plan.condition.filled_count(),
            });
            let diag_path = out.with_extension("json");
            fs::write(&diag_path, serde_json::to_string_pretty(&diagnostics).expect("json"))
                .map_err(|e| Failure::usage(format!("{}: {e}", diag_path.display())))?;
            println!("wrote {} (sample {} of {})", out.display(), plan.chosen, plan.samples.len());
            Ok(())
        }
        Command::EvalSynthetic { seed, n_tasks, report } => {
            let mut eval = config.eval.clone();
            eval.seed = seed;
            eval.n_tasks = n_tasks;
            let result = eval_synthetic(&eval);
            let text = result.to_text();
            fs::write(&report, &text).map_err(|e| Failure::usage(format!("{}: {e}", report.display())))?;
            print!("{text}");
            Ok(())
        }
        Command::GenerateSynthetic {
            seed,
            demos,
            held_out,
            out,
        } => {
            let params = SyntheticParams {
                demos,
                held_out,
                ..SyntheticParams::default()
            };
            if demos == 0 {
                return Err(Failure::usage("at least one demonstration is required"));
            }
            let task = generate_synthetic_task(seed, &params, &config.distill);
            task.write(&out)?;
            println!("wrote synthetic task {seed} to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
