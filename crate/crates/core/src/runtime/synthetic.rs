//! Procedural tabletop tasks with known ground truth.
//!
//! A task is a box-shaped body with a bar handle on its front face, standing
//! on a table next to a clutter block. Scenes are ray-cast into small RGBD
//! frames with a per-pixel part label. The demonstrated motion grasps the
//! handle and pulls it out and up along a quarter arc; in the object frame
//! it is the same for every scene.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{encode_pgm, format_trajectory_csv, quantize_pose, write_rgbd, Demonstration, SkillBundle};
use super::planner::{Aabb, SceneWorld};
use super::RuntimeError;
use crate::geometry::{CameraIntrinsics, RgbdImage, RigidTransform, Rot6D};
use crate::keypoint::DistillConfig;
use crate::policy::Pose;
use crate::proposal::{
    nms_masks, query_points_for_cells, GridLayout, LabelMapSegmenter, MaskGenerator, Scenario, ScenarioEntry,
};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_TABLE: u8 = 1;
pub const LABEL_BODY: u8 = 2;
pub const LABEL_HANDLE: u8 = 3;
pub const LABEL_CLUTTER: u8 = 4;
pub const LABEL_GRIPPER: u8 = 5;

pub const DESCRIPTION: &str = "grasp the handle on the front of the box and pull it outward and up";

const TABLE_HALF: f64 = 0.5;
const TABLE_THICKNESS: f64 = 0.05;
const WORKSPACE_TOP: f64 = 0.8;
const HOME: [f64; 3] = [0.0, 0.0, 0.55];
const HANDLE_THICKNESS: f64 = 0.03;
const HANDLE_PROTRUSION: f64 = 0.03;
const GRASP_STANDOFF: f64 = 0.01;
const PREGRASP_DISTANCE: f64 = 0.12;
const ARC_RADIUS: f64 = 0.15;
const APPROACH_STEPS: usize = 10;
const INSERT_STEPS: usize = 6;
const ARC_STEPS: usize = 16;
const DT: f64 = 0.05;
/// Tries at finding a seeding view where both scripted parts are reachable
/// through the grid queries.
const VIEW_ATTEMPTS: usize = 64;

/// Workspace box shared by every synthetic scene.
pub fn workspace_bounds() -> Aabb {
    Aabb::new(
        Vector3::new(-TABLE_HALF, -TABLE_HALF, -TABLE_THICKNESS),
        Vector3::new(TABLE_HALF, TABLE_HALF, WORKSPACE_TOP),
    )
}

/// Largest side of the workspace box, the unit of endpoint error.
pub fn workspace_scale() -> f64 {
    let b = workspace_bounds();
    (b.max - b.min).max()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub width: usize,
    pub height: usize,
    pub horizontal_fov_deg: f64,
    pub demos: usize,
    pub held_out: usize,
    pub video_frames: usize,
    /// Planar object offset range, ± meters.
    pub max_translation: f64,
    /// Object yaw range, ± radians.
    pub max_yaw: f64,
    /// Camera azimuth range around the object's front, ± radians.
    pub max_azimuth: f64,
    pub elevation_deg: (f64, f64),
    pub distance: (f64, f64),
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            width: 96,
            height: 72,
            horizontal_fov_deg: 50.0,
            demos: 10,
            held_out: 3,
            video_frames: 3,
            max_translation: 0.1,
            max_yaw: 0.5,
            max_azimuth: 0.5,
            elevation_deg: (30.0, 50.0),
            distance: (0.55, 0.7),
        }
    }
}

/// Object dimensions, fixed per task. The object frame has its origin at
/// the bottom center of the body, +x out of the front face and +z up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectShape {
    pub body_half: Vector3<f64>,
    pub handle_half_length: f64,
    pub handle_height: f64,
}

impl ObjectShape {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let body_half = Vector3::new(
            rng.gen_range(0.04..0.06),
            rng.gen_range(0.08..0.12),
            rng.gen_range(0.07..0.11),
        );
        Self {
            body_half,
            handle_half_length: rng.gen_range(0.05..0.07),
            handle_height: 1.2 * body_half.z,
        }
    }

    pub fn height(&self) -> f64 {
        2.0 * self.body_half.z
    }

    fn front(&self) -> f64 {
        self.body_half.x + HANDLE_PROTRUSION
    }

    /// Points on the handle's front face, object frame.
    pub fn handle_keypoints(&self) -> Vec<Vector3<f64>> {
        [-0.8, -0.4, 0.0, 0.4, 0.8]
            .iter()
            .map(|f| Vector3::new(self.front(), f * self.handle_half_length, self.handle_height))
            .collect()
    }

    pub fn grasp_point(&self) -> Vector3<f64> {
        Vector3::new(self.front() + GRASP_STANDOFF, 0.0, self.handle_height)
    }
}

/// Tool orientation in the object frame: tool z points into the handle,
/// tool x points up.
fn tool_rotation() -> Matrix3<f64> {
    let x = Vector3::z();
    let z = -Vector3::x();
    Matrix3::from_columns(&[x, z.cross(&x), z])
}

/// Pre-grasp, insertion and the pulling arc, object frame.
pub fn canonical_execution(shape: &ObjectShape) -> Vec<Pose> {
    let g = shape.grasp_point();
    let d = Vector3::x();
    let up = Vector3::z();
    let rot = Rot6D::from_matrix(&tool_rotation());
    let pre = g + PREGRASP_DISTANCE * d;
    let mut out = Vec::new();
    for i in 0..=INSERT_STEPS {
        let f = i as f64 / INSERT_STEPS as f64;
        out.push(Pose::new(pre.lerp(&g, f), rot, 1.0));
    }
    out.last_mut().unwrap().gripper = 0.0;
    for i in 1..=ARC_STEPS {
        let s = std::f64::consts::FRAC_PI_2 * i as f64 / ARC_STEPS as f64;
        out.push(Pose::new(g + ARC_RADIUS * (s.sin() * d + (1.0 - s.cos()) * up), rot, 0.0));
    }
    out
}

pub fn transform_pose(t: &RigidTransform, p: &Pose) -> Pose {
    let m = p.rotation.to_matrix().expect("valid rotation");
    Pose::new(t.apply(&p.position), Rot6D::from_matrix(&(t.rotation() * m)), p.gripper)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Paint {
    Table,
    Body { half: Vector3<f64> },
    Handle { half_length: f64 },
    Solid([u8; 3]),
}

/// Oriented box: `pose` maps box-local coordinates (centered) to world.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Solid {
    pose: RigidTransform,
    half: Vector3<f64>,
    label: u8,
    paint: Paint,
}

impl Solid {
    /// Ray parameter of the first entry, if any.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let inv = self.pose.inverse();
        let o = inv.apply(origin);
        let d = inv.apply_vector(dir);
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[i] - o[i]) / d[i];
            let b = (self.half[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 1e-9).then_some(t0)
    }

    fn color(&self, world: &Vector3<f64>) -> [u8; 3] {
        let local = self.pose.inverse().apply(world);
        let unit = |v: f64, h: f64| ((v / h + 1.0) * 0.5).clamp(0.0, 1.0);
        let byte = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        match self.paint {
            Paint::Table => [150, 150, 150],
            Paint::Body { half } => {
                let a = unit(local.y, half.y);
                let b = unit(local.z, half.z);
                [30, byte(110.0 + 90.0 * b), byte(150.0 + 80.0 * a)]
            }
            Paint::Handle { half_length } => {
                let s = unit(local.y, half_length);
                [230, byte(40.0 + 150.0 * s), 40]
            }
            Paint::Solid(c) => c,
        }
    }

    /// World-aligned bounding box.
    fn aabb(&self) -> Aabb {
        let r = self.pose.rotation();
        let extent = Vector3::from_fn(|i, _| (0..3).map(|j| r[(i, j)].abs() * self.half[j]).sum::<f64>());
        let c = self.pose.translation();
        Aabb::new(c - extent, c + extent)
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

/// Hue ranges the clutter block is painted from; the seeding video uses one
/// family and every other scene the other, so clutter never looks alike
/// across the two.
const CLUTTER_HUES: [(f64, f64); 2] = [(100.0, 150.0), (260.0, 320.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: RgbdImage,
    /// Row-major part labels.
    pub labels: Vec<u8>,
    pub object_pose: RigidTransform,
    pub world: SceneWorld,
    /// Exact world trajectory: approach from home, then the execution.
    pub timestamps: Vec<f64>,
    pub trajectory: Vec<Pose>,
    /// Index of the first execution pose in `trajectory`.
    pub execution_start: usize,
}

impl SyntheticScene {
    pub fn execution(&self) -> &[Pose] {
        &self.trajectory[self.execution_start..]
    }

    /// Maps a point seen in `other` to where the same object point is here.
    pub fn transfer(&self, other: &SyntheticScene, p: &Vector3<f64>) -> Vector3<f64> {
        self.object_pose.apply(&other.object_pose.inverse().apply(p))
    }

    pub fn demonstration(&self) -> Demonstration {
        Demonstration {
            observation: self.image.clone(),
            timestamps: self.timestamps.iter().map(|t| *t as f32 as f64).collect(),
            poses: self.trajectory.iter().map(quantize_pose).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub shape: ObjectShape,
    pub video: Vec<SyntheticScene>,
    pub demos: Vec<SyntheticScene>,
    pub held_out: Vec<SyntheticScene>,
    /// Handle cells in round 1.
    pub consistent: Scenario,
    /// Clutter cells in round 1, handle cells in round 2.
    pub adversarial: Scenario,
    /// Clutter cells in every round.
    pub all_bad: Scenario,
}

impl SyntheticTask {
    pub fn bundle(&self) -> SkillBundle {
        SkillBundle {
            description: DESCRIPTION.to_string(),
            video: self.video.iter().map(|s| s.image.clone()).collect(),
            demos: self.demos.iter().map(|s| s.demonstration()).collect(),
        }
    }

    /// Segmenter over the first video frame's part labels.
    pub fn segmenter(&self) -> LabelMapSegmenter {
        let s = &self.video[0];
        LabelMapSegmenter::new(s.image.width, s.image.height, s.labels.clone()).expect("label raster matches image")
    }

    /// Writes the skill bundle, the seeding-frame label raster, the three
    /// scenarios and the held-out scenes with their worlds and ground truth.
    pub fn write(&self, dir: &Path) -> Result<(), RuntimeError> {
        let io = |e: std::io::Error| RuntimeError::Io(format!("{}: {e}", dir.display()));
        self.bundle().write(dir)?;
        fs::create_dir_all(dir.join("labels")).map_err(io)?;
        let s0 = &self.video[0];
        fs::write(
            dir.join("labels").join("frame_0000.pgm"),
            encode_pgm(s0.image.width, s0.image.height, &s0.labels),
        )
        .map_err(io)?;
        for (name, scenario) in [
            ("scenario.toml", &self.consistent),
            ("scenario_adversarial.toml", &self.adversarial),
            ("scenario_all_bad.toml", &self.all_bad),
        ] {
            scenario.write(&dir.join(name))?;
        }
        for (i, scene) in self.held_out.iter().enumerate() {
            let d = dir.join("heldout").join(format!("scene_{i:02}"));
            fs::create_dir_all(&d).map_err(io)?;
            write_rgbd(&d.join("obs"), &scene.image)?;
            fs::write(d.join("world.txt"), scene.world.to_text()).map_err(io)?;
            let demo = scene.demonstration();
            fs::write(d.join("gt_traj.csv"), format_trajectory_csv(&demo.timestamps, &demo.poses)).map_err(io)?;
        }
        Ok(())
    }
}

struct Camera {
    intrinsics: CameraIntrinsics,
    extrinsic: RigidTransform,
}

fn intrinsics(params: &SyntheticParams) -> CameraIntrinsics {
    let f = (params.width as f64 / 2.0) / (params.horizontal_fov_deg.to_radians() / 2.0).tan();
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (params.width as f64 - 1.0) / 2.0,
        cy: (params.height as f64 - 1.0) / 2.0,
    }
}

fn render(solids: &[Solid], cam: &Camera, params: &SyntheticParams) -> (RgbdImage, Vec<u8>) {
    let (w, h) = (params.width, params.height);
    let k = cam.intrinsics;
    let origin = *cam.extrinsic.translation();
    let mut color = vec![[0u8; 3]; w * h];
    let mut depth = vec![0.0f32; w * h];
    let mut labels = vec![LABEL_BACKGROUND; w * h];
    for v in 0..h {
        for u in 0..w {
            // Unnormalized so that the ray parameter equals optical depth.
            let local = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let dir = cam.extrinsic.apply_vector(&local);
            let best = solids
                .iter()
                .filter_map(|s| s.hit(&origin, &dir).map(|t| (t, s)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((t, s)) = best {
                let i = v * w + u;
                depth[i] = t as f32;
                color[i] = s.color(&(origin + t * dir));
                labels[i] = s.label;
            }
        }
    }
    let image = RgbdImage::new(w, h, color, depth, k, cam.extrinsic).expect("raster sizes match");
    (image, labels)
}

struct Layout {
    object_pose: RigidTransform,
    clutter: Solid,
    camera: Camera,
}

fn sample_layout(shape: &ObjectShape, clutter_family: usize, params: &SyntheticParams, rng: &mut ChaCha8Rng) -> Layout {
    let t = params.max_translation;
    let yaw = rng.gen_range(-params.max_yaw..=params.max_yaw);
    let object_pose = RigidTransform::from_yaw(yaw, Vector3::new(rng.gen_range(-t..=t), rng.gen_range(-t..=t), 0.0));

    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let half = Vector3::new(
        rng.gen_range(0.03..0.045),
        rng.gen_range(0.03..0.045),
        rng.gen_range(0.03..0.05),
    );
    let offset = Vector3::new(
        rng.gen_range(-0.05..0.02),
        side * (shape.body_half.y + rng.gen_range(0.08..0.12)),
        half.z,
    );
    let (h0, h1) = CLUTTER_HUES[clutter_family];
    let paint = Paint::Solid(hsv(rng.gen_range(h0..h1), rng.gen_range(0.6..0.9), rng.gen_range(0.7..0.95)));
    let clutter_pose = RigidTransform::from_yaw(
        yaw + rng.gen_range(-0.4..0.4),
        object_pose.apply(&offset),
    );
    let clutter = Solid {
        pose: clutter_pose,
        half,
        label: LABEL_CLUTTER,
        paint,
    };

    let azimuth = yaw + rng.gen_range(-params.max_azimuth..=params.max_azimuth);
    let elevation = rng.gen_range(params.elevation_deg.0..=params.elevation_deg.1).to_radians();
    let distance = rng.gen_range(params.distance.0..=params.distance.1);
    let target = object_pose.apply(&Vector3::new(0.0, 0.0, shape.body_half.z));
    let eye = target
        + distance
            * Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
    let extrinsic = RigidTransform::look_at(eye, target, Vector3::z()).expect("camera above the table");
    Layout {
        object_pose,
        clutter,
        camera: Camera {
            intrinsics: intrinsics(params),
            extrinsic,
        },
    }
}

fn object_solids(shape: &ObjectShape, pose: &RigidTransform) -> [Solid; 2] {
    let body_center = RigidTransform::from_translation(Vector3::new(0.0, 0.0, shape.body_half.z));
    let handle_center = RigidTransform::from_translation(Vector3::new(
        shape.body_half.x + HANDLE_PROTRUSION / 2.0,
        0.0,
        shape.handle_height,
    ));
    [
        Solid {
            pose: pose.compose(&body_center),
            half: shape.body_half,
            label: LABEL_BODY,
            paint: Paint::Body { half: shape.body_half },
        },
        Solid {
            pose: pose.compose(&handle_center),
            half: Vector3::new(HANDLE_PROTRUSION / 2.0, shape.handle_half_length, HANDLE_THICKNESS / 2.0),
            label: LABEL_HANDLE,
            paint: Paint::Handle {
                half_length: shape.handle_half_length,
            },
        },
    ]
}

fn table() -> Solid {
    Solid {
        pose: RigidTransform::from_translation(Vector3::new(0.0, 0.0, -TABLE_THICKNESS / 2.0)),
        half: Vector3::new(TABLE_HALF, TABLE_HALF, TABLE_THICKNESS / 2.0),
        label: LABEL_TABLE,
        paint: Paint::Table,
    }
}

/// World trajectory for an object at `pose`: a straight approach from the
/// home position followed by the canonical execution.
fn world_trajectory(shape: &ObjectShape, pose: &RigidTransform) -> (Vec<Pose>, usize) {
    let execution: Vec<Pose> = canonical_execution(shape).iter().map(|p| transform_pose(pose, p)).collect();
    let first = execution[0];
    let home = Vector3::from(HOME);
    let mut out: Vec<Pose> = (0..APPROACH_STEPS)
        .map(|i| {
            let f = i as f64 / APPROACH_STEPS as f64;
            Pose::new(home.lerp(&first.position, f), first.rotation, 1.0)
        })
        .collect();
    let start = out.len();
    out.extend(execution);
    (out, start)
}

fn build_scene(
    shape: &ObjectShape,
    layout: &Layout,
    params: &SyntheticParams,
    gripper_at: Option<&Vector3<f64>>,
) -> SyntheticScene {
    let [body, handle] = object_solids(shape, &layout.object_pose);
    let mut solids = vec![table(), body, handle, layout.clutter];
    if let Some(p) = gripper_at {
        solids.push(Solid {
            pose: RigidTransform::from_translation(*p),
            half: Vector3::repeat(0.02),
            label: LABEL_GRIPPER,
            paint: Paint::Solid([250, 250, 250]),
        });
    }
    let (image, labels) = render(&solids, &layout.camera, params);
    let world = SceneWorld::new(
        workspace_bounds(),
        vec![table().aabb(), body.aabb(), layout.clutter.aabb()],
    )
    .expect("synthetic obstacles lie inside the workspace");
    let (trajectory, execution_start) = world_trajectory(shape, &layout.object_pose);
    let timestamps = (0..trajectory.len()).map(|i| i as f64 * DT).collect();
    SyntheticScene {
        image,
        labels,
        object_pose: layout.object_pose,
        world,
        timestamps,
        trajectory,
        execution_start,
    }
}

/// Scripted answer for `round` that selects the component of `label`: the
/// cells containing that label, and the index of its mask after the same
/// query, segmentation and suppression steps distillation performs.
pub fn scripted_entry(
    scene: &SyntheticScene,
    label: u8,
    round: u32,
    config: &DistillConfig,
) -> Option<ScenarioEntry> {
    let (w, h) = (scene.image.width, scene.image.height);
    let layout = GridLayout::new(config.grid, w, h).ok()?;
    let cells: Vec<String> = layout
        .cells
        .iter()
        .filter(|(_, r)| (r.y0..r.y1).any(|y| (r.x0..r.x1).any(|x| scene.labels[y * w + x] == label)))
        .map(|(name, _)| name.clone())
        .collect();
    if cells.is_empty() {
        return None;
    }
    let queries = query_points_for_cells(&cells, &layout, config.query_density).ok()?;
    let segmenter = LabelMapSegmenter::new(w, h, scene.labels.clone()).ok()?;
    let masks = nms_masks(&segmenter.generate(&scene.image, &queries).ok()?, config.nms_iou, config.nms_confidence);
    // Largest component of the label wins when it is split by occlusion.
    let index = masks
        .iter()
        .enumerate()
        .filter(|(_, m)| scene.labels[m.query.1 as usize * w + m.query.0 as usize] == label)
        .max_by_key(|(i, m)| (m.area(), std::cmp::Reverse(*i)))
        .map(|(i, _)| i)?;
    let (object, part) = if label == LABEL_HANDLE {
        ("box", "handle")
    } else {
        ("block", "top")
    };
    Some(ScenarioEntry {
        round,
        object: object.into(),
        part: part.into(),
        cells,
        mask_index: index as i64,
        fail: None,
    })
}

fn scenarios(scene: &SyntheticScene, config: &DistillConfig) -> Option<(Scenario, Scenario, Scenario)> {
    let handle = |round| scripted_entry(scene, LABEL_HANDLE, round, config);
    let clutter = |round| scripted_entry(scene, LABEL_CLUTTER, round, config);
    let consistent = Scenario {
        entries: vec![handle(1)?],
    };
    let adversarial = Scenario {
        entries: vec![clutter(1)?, handle(2)?],
    };
    let all_bad = Scenario {
        entries: (1..=config.max_rounds).map(clutter).collect::<Option<Vec<_>>>()?,
    };
    Some((consistent, adversarial, all_bad))
}

/// Builds a task from `seed`. Scripted scenarios are derived for the grid
/// and segmentation settings of `distill`.
pub fn generate_synthetic_task(seed: u64, params: &SyntheticParams, distill: &DistillConfig) -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ObjectShape::sample(&mut rng);
    let video_family = rng.gen_range(0..2);
    let other_family = 1 - video_family;

    let mut video = Vec::new();
    let mut chosen = None;
    for _ in 0..VIEW_ATTEMPTS {
        let layout = sample_layout(&shape, video_family, params, &mut rng);
        let frames: Vec<SyntheticScene> = (0..params.video_frames.max(1))
            .map(|f| {
                let (traj, _) = world_trajectory(&shape, &layout.object_pose);
                let at = if params.video_frames > 1 {
                    f * (traj.len() - 1) / (params.video_frames - 1)
                } else {
                    0
                };
                build_scene(&shape, &layout, params, Some(&traj[at].position))
            })
            .collect();
        if let Some(s) = scenarios(&frames[0], distill) {
            chosen = Some(s);
            video = frames;
            break;
        }
    }
    let (consistent, adversarial, all_bad) = chosen.unwrap_or_else(|| {
        panic!("seed {seed}: no seeding view exposes both the handle and the clutter to the grid queries")
    });

    let scenes = |n: usize, rng: &mut ChaCha8Rng| -> Vec<SyntheticScene> {
        (0..n)
            .map(|_| {
                let layout = sample_layout(&shape, other_family, params, rng);
                build_scene(&shape, &layout, params, None)
            })
            .collect()
    };
    let demos = scenes(params.demos, &mut rng);
    let held_out = scenes(params.held_out, &mut rng);
    SyntheticTask {
        seed,
        shape,
        video,
        demos,
        held_out,
        consistent,
        adversarial,
        all_bad,
    }
}
