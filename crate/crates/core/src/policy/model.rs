use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::condition::ConditionSet;
use super::network::{Denoiser, NetConfig};
use super::schedule::NoiseSchedule;
use super::trajectory::{Frame, TrajectorySample, POSE_DIM};
use super::PolicyError;
use crate::keypoint::KeypointId;

const SCALE_FLOOR: f64 = 1e-6;
/// Bound on the predicted clean sample during ancestral sampling, in
/// normalized units.
const X0_CLIP: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Diffusion step count T.
    pub diffusion_steps: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            diffusion_steps: super::schedule::DEFAULT_STEPS,
            hidden: 64,
            horizon: super::trajectory::DEFAULT_HORIZON,
            seed: 0,
        }
    }
}

/// Per-dimension offsets and scales of trajectories and conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub traj_mean: Vec<f64>,
    pub traj_scale: Vec<f64>,
    pub cond_mean: Vec<f64>,
    pub cond_scale: Vec<f64>,
}

impl NormalizationStats {
    /// Trajectory stats are taken per pose dimension over every pose of every
    /// trajectory. Condition offsets are per dimension; condition scales are
    /// pooled over each channel group (positions, visual, geometric) so that
    /// within-group relative magnitudes survive.
    pub fn fit(trajectories: &[Vec<f64>], conditions: &[Vec<f64>], group_sizes: (usize, usize, usize)) -> Self {
        let mut traj_mean = vec![0.0; POSE_DIM];
        let mut count = 0usize;
        for t in trajectories {
            for pose in t.chunks_exact(POSE_DIM) {
                for (m, v) in traj_mean.iter_mut().zip(pose) {
                    *m += v;
                }
                count += 1;
            }
        }
        traj_mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut traj_var = vec![0.0; POSE_DIM];
        for t in trajectories {
            for pose in t.chunks_exact(POSE_DIM) {
                for ((v, x), m) in traj_var.iter_mut().zip(pose).zip(&traj_mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let traj_scale = traj_var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(SCALE_FLOOR))
            .collect();

        let dim = conditions.first().map_or(0, |c| c.len());
        let n = conditions.len() as f64;
        let mut cond_mean = vec![0.0; dim];
        for c in conditions {
            for (m, v) in cond_mean.iter_mut().zip(c) {
                *m += v / n;
            }
        }
        let (gp, gv, gg) = group_sizes;
        let stride = gp + gv + gg;
        let group_of = |i: usize| {
            let r = i % stride.max(1);
            if r < gp {
                0
            } else if r < gp + gv {
                1
            } else {
                2
            }
        };
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for c in conditions {
            for (i, (v, m)) in c.iter().zip(&cond_mean).enumerate() {
                let g = group_of(i);
                sums[g] += (v - m) * (v - m);
                counts[g] += 1;
            }
        }
        let group_scale: Vec<f64> = (0..3)
            .map(|g| {
                if counts[g] == 0 {
                    1.0
                } else {
                    (sums[g] / counts[g] as f64).sqrt().max(SCALE_FLOOR)
                }
            })
            .collect();
        let cond_scale = (0..dim).map(|i| group_scale[group_of(i)]).collect();
        Self {
            traj_mean,
            traj_scale,
            cond_mean,
            cond_scale,
        }
    }

    pub fn normalize_traj(&self, flat: &[f64]) -> Vec<f64> {
        flat.iter()
            .enumerate()
            .map(|(i, v)| (v - self.traj_mean[i % POSE_DIM]) / self.traj_scale[i % POSE_DIM])
            .collect()
    }

    pub fn denormalize_traj(&self, flat: &[f64]) -> Vec<f64> {
        flat.iter()
            .enumerate()
            .map(|(i, v)| v * self.traj_scale[i % POSE_DIM] + self.traj_mean[i % POSE_DIM])
            .collect()
    }

    pub fn normalize_cond(&self, c: &[f64]) -> Vec<f64> {
        c.iter()
            .zip(self.cond_mean.iter().zip(&self.cond_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// One training example: the conditioning observed in a demonstration scene
/// and the object-relative execution trajectory, already resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub condition: ConditionSet,
    pub trajectory: TrajectorySample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Mean loss over the first 10% of steps.
    pub initial_loss: f64,
    /// Mean loss over the last 10% of steps.
    pub final_loss: f64,
}

/// Trained denoiser with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub net: NetConfig,
    pub diffusion_steps: usize,
    pub keypoint_ids: Vec<KeypointId>,
    pub visual_dim: usize,
    pub geometric_dim: usize,
    pub stats: NormalizationStats,
    pub params: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn check_dataset(dataset: &[TrainingPair], horizon: usize) -> Result<(Vec<KeypointId>, usize, usize), PolicyError> {
    let first = dataset.first().ok_or(PolicyError::EmptyDataset)?;
    let ids = first.condition.ids();
    let (dv, dg) = (first.condition.visual_dim(), first.condition.geometric_dim());
    if ids.is_empty() {
        return Err(PolicyError::NoKeypoints);
    }
    for pair in dataset {
        if pair.condition.ids() != ids || pair.condition.visual_dim() != dv || pair.condition.geometric_dim() != dg {
            return Err(PolicyError::DimensionMismatch {
                expected: ids.len() * (3 + dv + dg),
                actual: pair.condition.flatten().len(),
            });
        }
        if pair.trajectory.len() != horizon {
            return Err(PolicyError::InvalidTrajectory(format!(
                "trajectory has {} poses, model horizon is {horizon}",
                pair.trajectory.len()
            )));
        }
        if !matches!(pair.trajectory.frame, Frame::ObjectRelative { .. }) {
            return Err(PolicyError::FrameMismatch("training trajectories must be object-relative"));
        }
    }
    Ok((ids, dv, dg))
}

/// Fits the denoiser to predict the injected noise (mean squared error)
/// with Adam. Weights are rounded to f32 at the end so the returned model is
/// identical to one reloaded from a checkpoint.
pub fn train(dataset: &[TrainingPair], config: &TrainConfig) -> Result<(PolicyModel, TrainReport), PolicyError> {
    if config.steps == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(PolicyError::InvalidConfig("steps, batch size and learning rate must be positive".into()));
    }
    let (ids, dv, dg) = check_dataset(dataset, config.horizon)?;
    let schedule = NoiseSchedule::cosine(config.diffusion_steps)?;
    let trajs: Vec<Vec<f64>> = dataset.iter().map(|p| p.trajectory.to_flat()).collect();
    let conds: Vec<Vec<f64>> = dataset.iter().map(|p| p.condition.flatten()).collect();
    let stats = NormalizationStats::fit(&trajs, &conds, (3, dv, dg));
    for (d, s) in stats.traj_scale.iter().enumerate() {
        if *s <= SCALE_FLOOR {
            warn!("trajectory dimension {d} has no variance; using scale floor");
        }
    }
    let x0s: Vec<Vec<f64>> = trajs.iter().map(|t| stats.normalize_traj(t)).collect();
    let cs: Vec<Vec<f64>> = conds.iter().map(|c| stats.normalize_cond(c)).collect();

    let net_cfg = NetConfig::new(config.horizon, config.hidden, conds[0].len());
    let net = Denoiser::new(net_cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = net.init(&mut rng);
    let mut adam = Adam::new(params.len());

    let per = config.horizon * POSE_DIM;
    let b = config.batch_size;
    let mut losses = Vec::with_capacity(config.steps);
    let mut x = vec![0.0; b * per];
    let mut eps = vec![0.0; b * per];
    let mut cond = vec![0.0; b * cs[0].len()];
    let mut steps = vec![0usize; b];
    for step in 0..config.steps {
        for j in 0..b {
            let i = rng.gen_range(0..dataset.len());
            let t = rng.gen_range(0..schedule.steps());
            steps[j] = t;
            let a = schedule.alpha_bars[t].sqrt();
            let s = (1.0 - schedule.alpha_bars[t]).sqrt();
            for k in 0..per {
                let e: f64 = rng.sample(StandardNormal);
                eps[j * per + k] = e;
                x[j * per + k] = a * x0s[i][k] + s * e;
            }
            cond[j * cs[0].len()..(j + 1) * cs[0].len()].copy_from_slice(&cs[i]);
        }
        let (loss, grad) = net.loss_and_grad(&params, &x, &steps, &cond, &eps)?;
        // Cosine decay to a tenth of the base rate.
        let progress = step as f64 / config.steps as f64;
        let lr = config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam.step(&mut params, &grad, lr);
        losses.push(loss);
        if step % 200 == 0 {
            debug!("train step {step}: loss {loss:.5}");
        }
    }
    params.iter_mut().for_each(|p| *p = *p as f32 as f64);

    let window = (config.steps / 10).max(1);
    let initial_loss = losses[..window].iter().sum::<f64>() / window as f64;
    let final_loss = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    if final_loss >= initial_loss {
        warn!("training did not reduce the loss ({initial_loss:.4} -> {final_loss:.4})");
    }
    Ok((
        PolicyModel {
            net: net_cfg,
            diffusion_steps: config.diffusion_steps,
            keypoint_ids: ids,
            visual_dim: dv,
            geometric_dim: dg,
            stats,
            params,
        },
        TrainReport {
            losses,
            initial_loss,
            final_loss,
        },
    ))
}

impl PolicyModel {
    pub fn denoiser(&self) -> Result<Denoiser, PolicyError> {
        Denoiser::new(self.net.clone())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, PolicyError> {
        NoiseSchedule::cosine(self.diffusion_steps)
    }

    pub fn cond_dim(&self) -> usize {
        self.keypoint_ids.len() * (3 + self.visual_dim + self.geometric_dim)
    }

    fn check_condition(&self, condition: &ConditionSet) -> Result<(), PolicyError> {
        if condition.ids() != self.keypoint_ids
            || condition.visual_dim() != self.visual_dim
            || condition.geometric_dim() != self.geometric_dim
        {
            return Err(PolicyError::DimensionMismatch {
                expected: self.cond_dim(),
                actual: condition.flatten().len(),
            });
        }
        Ok(())
    }

    /// Ancestral DDPM sampling of `count` object-relative trajectories. The
    /// result depends only on the condition and `seed`.
    pub fn sample(&self, condition: &ConditionSet, count: usize, seed: u64) -> Result<Vec<TrajectorySample>, PolicyError> {
        self.check_condition(condition)?;
        let net = self.denoiser()?;
        let schedule = self.schedule()?;
        let per = self.net.horizon * POSE_DIM;
        let c = self.stats.normalize_cond(&condition.flatten());
        let cond: Vec<f64> = (0..count).flat_map(|_| c.iter().copied()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..count * per).map(|_| rng.sample(StandardNormal)).collect();
        for t in (0..schedule.steps()).rev() {
            let eps = net.predict(&self.params, &x, &vec![t; count], &cond)?;
            let ab = schedule.alpha_bars[t];
            let ab_prev = if t > 0 { schedule.alpha_bars[t - 1] } else { 1.0 };
            let beta = schedule.betas[t];
            let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let coef_xt = schedule.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let sigma = schedule.posterior_variance(t).sqrt();
            for (xi, e) in x.iter_mut().zip(&eps) {
                let x0 = ((*xi - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-X0_CLIP, X0_CLIP);
                let mut next = coef_x0 * x0 + coef_xt * *xi;
                if t > 0 {
                    let z: f64 = rng.sample(StandardNormal);
                    next += sigma * z;
                }
                *xi = next;
            }
        }
        Ok(x.chunks_exact(per)
            .map(|chunk| {
                TrajectorySample::from_flat(
                    &self.stats.denormalize_traj(chunk),
                    Frame::ObjectRelative {
                        centroid: condition.centroid,
                    },
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trip() {
        let trajs = vec![
            (0..20).map(|i| i as f64 * 0.37 - 2.0).collect::<Vec<_>>(),
            (0..20).map(|i| (i as f64).sin()).collect::<Vec<_>>(),
        ];
        let conds = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 2.0, 5.0, 9.0]];
        let stats = NormalizationStats::fit(&trajs, &conds, (3, 1, 0));
        for t in &trajs {
            let back = stats.denormalize_traj(&stats.normalize_traj(t));
            assert!(back.iter().zip(t).all(|(a, b)| (a - b).abs() < 1e-9));
        }
        assert!(stats.traj_scale.iter().all(|s| *s > 0.0));
        // Positions share one pooled scale.
        assert_eq!(stats.cond_scale[0], stats.cond_scale[2]);
    }

    #[test]
    fn constant_dimension_uses_floor() {
        let trajs = vec![vec![1.0; 20]];
        let stats = NormalizationStats::fit(&trajs, &[vec![0.0; 3]], (3, 0, 0));
        assert!(stats.traj_scale.iter().all(|s| *s == SCALE_FLOOR));
        assert!(stats.normalize_traj(&trajs[0]).iter().all(|v| *v == 0.0));
    }
}
