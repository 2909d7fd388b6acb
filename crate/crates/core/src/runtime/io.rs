//! Skill dataset files: rasters, cameras, trajectories and the directory
//! layout that ties them together.
//!
//! ```text
//! description.txt
//! video/frame_0000.{ppm,kdep,cam}
//! demos/demo_00/{obs.ppm,obs.kdep,obs.cam,traj.csv}
//! features/frame_0000.kfea, features/demo_00.kfea   (optional)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use nalgebra::Vector3;

use super::RuntimeError;
use crate::geometry::{CameraIntrinsics, RgbdImage, RigidTransform, Rot6D};
use crate::policy::Pose;

const KDEP_MAGIC: &[u8; 4] = b"KDEP";
pub const CSV_HEADER: &str = "t,x,y,z,r1,r2,r3,r4,r5,r6,grip";

fn io_err(path: &Path, e: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::Io(format!("{}: {e}", path.display()))
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::Format(format!("{}: {msg}", path.display()))
}

pub fn encode_kdep(width: usize, height: usize, depth: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + depth.len() * 4);
    out.extend_from_slice(KDEP_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for d in depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn decode_kdep(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), String> {
    if bytes.len() < 16 || &bytes[..4] != KDEP_MAGIC {
        return Err("not a KDEP depth raster".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let body = &bytes[16..];
    if Some(body.len()) != w.checked_mul(h).and_then(|n| n.checked_mul(4)) {
        return Err(format!("expected {w}x{h} depth values, found {} bytes", body.len()));
    }
    let depth = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((w, h, depth))
}

pub fn encode_ppm(width: usize, height: usize, color: &[[u8; 3]]) -> Vec<u8> {
    let flat: Vec<u8> = color.iter().flatten().copied().collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&flat, width as u32, height as u32, ExtendedColorType::Rgb8)
        .expect("in-memory PPM encoding");
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<[u8; 3]>), String> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
        .map_err(|e| e.to_string())?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.pixels().map(|p| p.0).collect()))
}

pub fn encode_pgm(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(values, width as u32, height as u32, ExtendedColorType::L8)
        .expect("in-memory PGM encoding");
    out
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), RuntimeError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)
        .map_err(|e| format_err(path, e))?
        .to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

/// `fx`, `fy`, `cx`, `cy` and a 12-value row-major 3×4 `extrinsic`
/// (camera-to-world), one `key = value` per line.
pub fn format_camera(k: &CameraIntrinsics, extrinsic: &RigidTransform) -> String {
    let mut s = String::new();
    writeln!(s, "fx = {}", k.fx).unwrap();
    writeln!(s, "fy = {}", k.fy).unwrap();
    writeln!(s, "cx = {}", k.cx).unwrap();
    writeln!(s, "cy = {}", k.cy).unwrap();
    let e: Vec<String> = extrinsic.to_row_major_3x4().iter().map(|v| v.to_string()).collect();
    writeln!(s, "extrinsic = {}", e.join(" ")).unwrap();
    s
}

pub fn parse_camera(text: &str) -> Result<(CameraIntrinsics, RigidTransform), String> {
    let (mut fx, mut fy, mut cx, mut cy, mut ext) = (None, None, None, None, None);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("expected key = value, got {line:?}"))?;
        let scalar = || value.trim().parse::<f64>().map_err(|e| format!("{}: {e}", key.trim()));
        match key.trim() {
            "fx" => fx = Some(scalar()?),
            "fy" => fy = Some(scalar()?),
            "cx" => cx = Some(scalar()?),
            "cy" => cy = Some(scalar()?),
            "extrinsic" => {
                let vals: Vec<f64> = value
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|e| format!("extrinsic: {e}")))
                    .collect::<Result<_, _>>()?;
                let arr: [f64; 12] = vals
                    .try_into()
                    .map_err(|v: Vec<f64>| format!("extrinsic needs 12 values, got {}", v.len()))?;
                ext = Some(RigidTransform::from_row_major_3x4(&arr).map_err(|e| e.to_string())?);
            }
            other => return Err(format!("unknown camera key {other:?}")),
        }
    }
    let missing = |k: &str| format!("camera file lacks {k}");
    Ok((
        CameraIntrinsics {
            fx: fx.ok_or_else(|| missing("fx"))?,
            fy: fy.ok_or_else(|| missing("fy"))?,
            cx: cx.ok_or_else(|| missing("cx"))?,
            cy: cy.ok_or_else(|| missing("cy"))?,
        },
        ext.ok_or_else(|| missing("extrinsic"))?,
    ))
}

/// Writes `<stem>.ppm`, `<stem>.kdep` and `<stem>.cam`.
pub fn write_rgbd(stem: &Path, image: &RgbdImage) -> Result<(), RuntimeError> {
    let with = |ext: &str| stem.with_extension(ext);
    fs::write(with("ppm"), encode_ppm(image.width, image.height, &image.color)).map_err(|e| io_err(&with("ppm"), e))?;
    fs::write(with("kdep"), encode_kdep(image.width, image.height, &image.depth))
        .map_err(|e| io_err(&with("kdep"), e))?;
    fs::write(with("cam"), format_camera(&image.intrinsics, &image.extrinsic)).map_err(|e| io_err(&with("cam"), e))
}

pub fn read_rgbd(stem: &Path) -> Result<RgbdImage, RuntimeError> {
    let with = |ext: &str| stem.with_extension(ext);
    let ppm = with("ppm");
    let (w, h, color) = decode_ppm(&fs::read(&ppm).map_err(|e| io_err(&ppm, e))?).map_err(|e| format_err(&ppm, e))?;
    let kdep = with("kdep");
    let (dw, dh, depth) =
        decode_kdep(&fs::read(&kdep).map_err(|e| io_err(&kdep, e))?).map_err(|e| format_err(&kdep, e))?;
    if (dw, dh) != (w, h) {
        return Err(format_err(&kdep, format!("depth is {dw}x{dh}, color is {w}x{h}")));
    }
    let cam = with("cam");
    let (k, ext) = parse_camera(&fs::read_to_string(&cam).map_err(|e| io_err(&cam, e))?).map_err(|e| format_err(&cam, e))?;
    RgbdImage::new(w, h, color, depth, k, ext).map_err(|e| format_err(stem, e))
}

/// Pose row values are stored as 32-bit floats printed with 9 significant
/// digits, which round-trips every f32 exactly.
fn fmt_f32(v: f64) -> String {
    format!("{:.8e}", v as f32)
}

pub fn format_trajectory_csv(timestamps: &[f64], poses: &[Pose]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (t, p) in timestamps.iter().zip(poses) {
        let mut row = vec![fmt_f32(*t)];
        row.extend(p.to_array().iter().map(|v| fmt_f32(*v)));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<f64>, Vec<Pose>), String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty trajectory file")?;
    if header.trim() != CSV_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut ts = Vec::new();
    let mut poses = Vec::new();
    for (n, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f32>().map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("row {}: {e}", n + 1))?;
        if vals.len() != 11 {
            return Err(format!("row {} has {} columns", n + 1, vals.len()));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(format!("row {} has a non-finite value", n + 1));
        }
        ts.push(vals[0]);
        poses.push(Pose::from_array(&vals[1..]));
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err("timestamps must increase strictly".into());
    }
    Ok((ts, poses))
}

/// Rounds every pose component to f32 so the pose survives a CSV round trip
/// unchanged.
pub fn quantize_pose(p: &Pose) -> Pose {
    let q = |v: f64| v as f32 as f64;
    Pose {
        position: Vector3::new(q(p.position.x), q(p.position.y), q(p.position.z)),
        rotation: Rot6D(p.rotation.0.map(q)),
        gripper: q(p.gripper),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub observation: RgbdImage,
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillBundle {
    pub description: String,
    pub video: Vec<RgbdImage>,
    pub demos: Vec<Demonstration>,
}

pub fn video_stem(dir: &Path, i: usize) -> PathBuf {
    dir.join("video").join(format!("frame_{i:04}"))
}

pub fn demo_dir(dir: &Path, i: usize) -> PathBuf {
    dir.join("demos").join(format!("demo_{i:02}"))
}

/// Optional precomputed visual features for video frame `i`.
pub fn video_feature_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("features").join(format!("frame_{i:04}.kfea"))
}

pub fn demo_feature_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("features").join(format!("demo_{i:02}.kfea"))
}

impl SkillBundle {
    pub fn write(&self, dir: &Path) -> Result<(), RuntimeError> {
        fs::create_dir_all(dir.join("video")).map_err(|e| io_err(dir, e))?;
        fs::write(dir.join("description.txt"), format!("{}\n", self.description))
            .map_err(|e| io_err(&dir.join("description.txt"), e))?;
        for (i, frame) in self.video.iter().enumerate() {
            write_rgbd(&video_stem(dir, i), frame)?;
        }
        for (i, demo) in self.demos.iter().enumerate() {
            let d = demo_dir(dir, i);
            fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
            write_rgbd(&d.join("obs"), &demo.observation)?;
            fs::write(d.join("traj.csv"), format_trajectory_csv(&demo.timestamps, &demo.poses))
                .map_err(|e| io_err(&d.join("traj.csv"), e))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, RuntimeError> {
        let desc_path = dir.join("description.txt");
        let description = fs::read_to_string(&desc_path)
            .map_err(|e| io_err(&desc_path, e))?
            .trim_end_matches(['\n', '\r'])
            .to_string();
        let mut video = Vec::new();
        while video_stem(dir, video.len()).with_extension("ppm").exists() {
            video.push(read_rgbd(&video_stem(dir, video.len()))?);
        }
        let mut demos = Vec::new();
        while demo_dir(dir, demos.len()).is_dir() {
            let d = demo_dir(dir, demos.len());
            let observation = read_rgbd(&d.join("obs"))?;
            let csv = d.join("traj.csv");
            let (timestamps, poses) =
                parse_trajectory_csv(&fs::read_to_string(&csv).map_err(|e| io_err(&csv, e))?).map_err(|e| format_err(&csv, e))?;
            if poses.len() < 2 {
                return Err(format_err(&csv, "a demonstration needs at least 2 poses"));
            }
            demos.push(Demonstration {
                observation,
                timestamps,
                poses,
            });
        }
        if video.is_empty() {
            return Err(RuntimeError::Format(format!("{}: no video frames", dir.display())));
        }
        if demos.is_empty() {
            return Err(RuntimeError::Format(format!("{}: no demonstrations", dir.display())));
        }
        Ok(Self {
            description,
            video,
            demos,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kdep_round_trip_and_errors() {
        let depth = vec![0.5f32, -1.0, f32::NAN, 2.25, 0.0, 1e-3];
        let (w, h, back) = decode_kdep(&encode_kdep(3, 2, &depth)).unwrap();
        assert_eq!((w, h), (3, 2));
        assert!(back.iter().zip(&depth).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(decode_kdep(b"KDEP").is_err());
        assert!(decode_kdep(&encode_kdep(3, 3, &depth)).is_err());
    }

    #[test]
    fn camera_text_round_trip() {
        let k = CameraIntrinsics {
            fx: 103.12345678901234,
            fy: 99.5,
            cx: 47.5,
            cy: 35.0,
        };
        let ext = RigidTransform::look_at(Vector3::new(0.6, 0.1, 0.4), Vector3::new(0.0, 0.0, 0.05), Vector3::z())
        .unwrap();
        let (k2, e2) = parse_camera(&format_camera(&k, &ext)).unwrap();
        assert_eq!(k2, k);
        assert_eq!(e2, ext);
        assert!(parse_camera("fx = 1\n").is_err());
    }

    #[test]
    fn csv_round_trip_is_bitwise_for_f32_values() {
        let poses: Vec<Pose> = (0..5)
            .map(|i| {
                quantize_pose(&Pose::new(
                    Vector3::new(0.1 * i as f64, -1.0 / 3.0, 1e-7),
                    Rot6D::IDENTITY,
                    1.0 / (i as f64 + 1.0),
                ))
            })
            .collect();
        let ts: Vec<f64> = (0..5).map(|i| (i as f64 * 0.05) as f32 as f64).collect();
        let text = format_trajectory_csv(&ts, &poses);
        assert!(text.starts_with(CSV_HEADER));
        let (ts2, poses2) = parse_trajectory_csv(&text).unwrap();
        assert_eq!(ts2, ts);
        assert_eq!(poses2, poses);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        assert!(parse_trajectory_csv("a,b\n").is_err());
        assert!(parse_trajectory_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
        let row = "0,0,0,0,1,0,0,0,1,0,1";
        assert!(parse_trajectory_csv(&format!("{CSV_HEADER}\n{row}\n{row}\n")).is_err());
    }

    #[test]
    fn ppm_and_pgm_round_trip() {
        let color: Vec<[u8; 3]> = (0..12).map(|i| [i as u8, 255 - i as u8, 7]).collect();
        assert_eq!(decode_ppm(&encode_ppm(4, 3, &color)).unwrap(), (4, 3, color));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.pgm");
        fs::write(&p, encode_pgm(2, 2, &[0, 1, 2, 255])).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (2, 2, vec![0, 1, 2, 255]));
    }
}
