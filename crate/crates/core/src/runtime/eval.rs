//! Synthetic end-to-end evaluation: generate, distill with the scripted
//! backend, train, then infer on held-out object poses and camera views.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::infer::{infer, InferConfig, InferInputs};
use super::phases::DEFAULT_PHASE_THRESHOLD;
use super::io::SkillBundle;
use super::pipeline::{detect_keypoints, distill_bundle, featurize, training_pairs, FeatureConfig};
use super::synthetic::{generate_synthetic_task, workspace_scale, SyntheticParams, SyntheticTask};
use super::RuntimeError;
use crate::geometry::Rot6D;
use crate::keypoint::{DistillConfig, DistilledSkill};
use crate::policy::{train, Pose, TrainConfig};
use crate::features::FeaturedScene;
use crate::proposal::{Scenario, ScriptedBackend, Transcript};

/// Keypoints detected within this distance of where their reference point
/// moved count as correct.
pub const DETECTION_TOLERANCE: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub demos: usize,
    pub held_out: usize,
    pub phase_threshold: f64,
    pub features: FeatureConfig,
    pub distill: DistillConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_tasks: 20,
            demos: 10,
            held_out: 3,
            phase_threshold: DEFAULT_PHASE_THRESHOLD,
            features: FeatureConfig::default(),
            distill: DistillConfig::default(),
            // Sized so twenty tasks fit in a few minutes on one core.
            train: TrainConfig {
                steps: 800,
                batch_size: 16,
                learning_rate: 4e-3,
                hidden: 32,
                ..TrainConfig::default()
            },
            infer: InferConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub detected: usize,
    pub correct: usize,
    pub keypoints: usize,
    pub plan_found: bool,
    /// Distance between the predicted and true final execution positions;
    /// `None` when no trajectory could be sampled.
    pub endpoint_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: usize,
    pub seed: u64,
    pub rounds: Option<u32>,
    pub keypoints: usize,
    pub training_pairs: usize,
    pub final_loss: Option<f64>,
    pub scenes: Vec<SceneOutcome>,
    pub error: Option<String>,
    pub seconds: f64,
}

impl TaskOutcome {
    pub fn detection_rate(&self) -> f64 {
        let total: usize = self.scenes.iter().map(|s| s.keypoints).sum();
        if total == 0 {
            0.0
        } else {
            self.scenes.iter().map(|s| s.correct).sum::<usize>() as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskOutcome>,
    pub workspace_scale: f64,
    pub seconds: f64,
}

impl EvalReport {
    fn scenes(&self) -> impl Iterator<Item = &SceneOutcome> {
        self.tasks.iter().flat_map(|t| &t.scenes)
    }

    /// Correct detections over all held-out keypoint lookups. Tasks whose
    /// pipeline failed count every lookup as missed.
    pub fn detection_rate(&self) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for s in self.scenes() {
            hit += s.correct;
            total += s.keypoints;
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// Mean endpoint error; a scene without a prediction counts as one
    /// workspace scale.
    pub fn mean_endpoint_error(&self) -> f64 {
        let errs: Vec<f64> = self
            .scenes()
            .map(|s| s.endpoint_error.unwrap_or(self.workspace_scale))
            .collect();
        if errs.is_empty() {
            f64::INFINITY
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        }
    }

    pub fn feasibility_rate(&self) -> f64 {
        let n = self.scenes().count();
        if n == 0 {
            0.0
        } else {
            self.scenes().filter(|s| s.plan_found).count() as f64 / n as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "task seed rounds keypoints pairs detection_rate endpoint_error_m plans seconds").unwrap();
        for t in &self.tasks {
            let errs: Vec<f64> = t.scenes.iter().filter_map(|s| s.endpoint_error).collect();
            let mean = if errs.is_empty() {
                f64::NAN
            } else {
                errs.iter().sum::<f64>() / errs.len() as f64
            };
            writeln!(
                s,
                "{} {} {} {} {} {:.3} {:.4} {}/{} {:.1}{}",
                t.task,
                t.seed,
                t.rounds.map_or("-".into(), |r| r.to_string()),
                t.keypoints,
                t.training_pairs,
                t.detection_rate(),
                mean,
                t.scenes.iter().filter(|s| s.plan_found).count(),
                t.scenes.len(),
                t.seconds,
                t.error.as_ref().map_or(String::new(), |e| format!(" error: {e}")),
            )
            .unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "tasks: {}", self.tasks.len()).unwrap();
        writeln!(s, "detection_rate: {:.4}", self.detection_rate()).unwrap();
        writeln!(
            s,
            "mean_endpoint_error_m: {:.4} ({:.2}% of workspace scale {:.2} m)",
            self.mean_endpoint_error(),
            100.0 * self.mean_endpoint_error() / self.workspace_scale,
            self.workspace_scale
        )
        .unwrap();
        writeln!(s, "feasibility_rate: {:.4}", self.feasibility_rate()).unwrap();
        writeln!(s, "seconds: {:.1}", self.seconds).unwrap();
        s
    }
}

/// Master seed and task index mixed into an independent task seed.
pub fn task_seed(seed: u64, task: usize) -> u64 {
    let mut z = seed.wrapping_add((task as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The bundle of `task` with its seeding frame and demonstrations featurized.
pub fn task_scenes(
    task: &SyntheticTask,
    features: &FeatureConfig,
) -> Result<(SkillBundle, FeaturedScene, Vec<FeaturedScene>), RuntimeError> {
    let bundle = task.bundle();
    let seed_scene = featurize(&bundle.video[0], None, features)?;
    let demo_scenes = bundle
        .demos
        .iter()
        .map(|d| featurize(&d.observation, None, features))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((bundle, seed_scene, demo_scenes))
}

/// Distills with a scripted backend playing `scenario`.
pub fn distill_scripted(
    task: &SyntheticTask,
    scenes: &(SkillBundle, FeaturedScene, Vec<FeaturedScene>),
    scenario: &Scenario,
    config: &DistillConfig,
) -> Result<(DistilledSkill, Transcript), RuntimeError> {
    let mut backend = ScriptedBackend::new(scenario.clone());
    let mut transcript = Transcript::new();
    let skill = distill_bundle(
        &scenes.0,
        &scenes.1,
        &scenes.2,
        &mut backend,
        &task.segmenter(),
        config,
        &mut transcript,
    )?;
    Ok((skill, transcript))
}

fn run_task(index: usize, seed: u64, config: &EvalConfig) -> TaskOutcome {
    let started = Instant::now();
    let mut outcome = TaskOutcome {
        task: index,
        seed,
        rounds: None,
        keypoints: 0,
        training_pairs: 0,
        final_loss: None,
        scenes: Vec::new(),
        error: None,
        seconds: 0.0,
    };
    let params = SyntheticParams {
        demos: config.demos,
        held_out: config.held_out,
        ..SyntheticParams::default()
    };
    let task = generate_synthetic_task(seed, &params, &config.distill);
    if let Err(e) = evaluate(&task, config, &mut outcome) {
        warn!("task {index}: {e}");
        outcome.error = Some(e.to_string());
        // Held-out scenes the pipeline never reached count as failures.
        let missing = config.held_out.saturating_sub(outcome.scenes.len());
        let keypoints = outcome.keypoints.max(1);
        outcome.scenes.extend((0..missing).map(|_| SceneOutcome {
            detected: 0,
            correct: 0,
            keypoints,
            plan_found: false,
            endpoint_error: None,
        }));
    }
    outcome.seconds = started.elapsed().as_secs_f64();
    outcome
}

fn evaluate(task: &SyntheticTask, config: &EvalConfig, out: &mut TaskOutcome) -> Result<(), RuntimeError> {
    let scenes = task_scenes(task, &config.features)?;
    let (skill, _) = distill_scripted(task, &scenes, &task.consistent, &config.distill)?;
    let (bundle, _, demo_scenes) = &scenes;
    out.rounds = Some(skill.provenance.rounds);
    out.keypoints = skill.keypoints.len();

    let pairs = training_pairs(
        bundle,
        demo_scenes,
        &skill,
        &config.distill.detection,
        config.phase_threshold,
        config.train.horizon,
    )?;
    out.training_pairs = pairs.len();
    let (model, report) = train(&pairs, &config.train)?;
    out.final_loss = Some(report.final_loss);

    let seeding = &task.video[0];
    for scene in &task.held_out {
        let featured = featurize(&scene.image, None, &config.features)?;
        let observations = detect_keypoints(&featured, &skill, None, &config.infer.detection)?;
        let mut result = SceneOutcome {
            detected: 0,
            correct: 0,
            keypoints: skill.keypoints.len(),
            plan_found: false,
            endpoint_error: None,
        };
        for (k, (_, obs)) in skill.keypoints.iter().zip(&observations) {
            if let Some(o) = obs {
                result.detected += 1;
                let expected = scene.transfer(seeding, &k.ref_position);
                if (o.position - expected).norm() <= DETECTION_TOLERANCE {
                    result.correct += 1;
                }
            }
        }
        let truth = scene.execution().last().expect("non-empty execution").position;
        let start = Pose::new(scene.trajectory[0].position, Rot6D::IDENTITY, 1.0);
        let inputs = InferInputs {
            scene: &featured,
            skill: &skill,
            model: &model,
            world: &scene.world,
            start,
            mask_weights: None,
        };
        match infer(&inputs, &config.infer) {
            Ok(plan) => {
                result.plan_found = true;
                let end = plan.execution.poses.last().expect("horizon ≥ 2").position;
                result.endpoint_error = Some((end - truth).norm());
            }
            Err(RuntimeError::Exhausted(verdicts)) => {
                warn!("task {}: no reachable sample ({verdicts:?})", out.task);
                let (_, samples) =
                    super::infer::predict_world(&featured, &skill, &model, None, &config.infer)?;
                let end = samples[0].poses.last().expect("horizon ≥ 2").position;
                result.endpoint_error = Some((end - truth).norm());
            }
            Err(RuntimeError::AllKeypointsNull) => {}
            Err(e) => return Err(e),
        }
        out.scenes.push(result);
    }
    Ok(())
}

/// Runs `config.n_tasks` independent tasks. Task seeds derive from the
/// master seed and task index only.
pub fn eval_synthetic(config: &EvalConfig) -> EvalReport {
    let started = Instant::now();
    let tasks = (0..config.n_tasks)
        .map(|i| {
            let t = run_task(i, task_seed(config.seed, i), config);
            info!(
                "task {i}: detection {:.3}, plans {}/{}, {:.1}s",
                t.detection_rate(),
                t.scenes.iter().filter(|s| s.plan_found).count(),
                t.scenes.len(),
                t.seconds
            );
            t
        })
        .collect();
    EvalReport {
        tasks,
        workspace_scale: workspace_scale(),
        seconds: started.elapsed().as_secs_f64(),
    }
}
