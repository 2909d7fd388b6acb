//! Binary model checkpoint.
//!
//! Little-endian layout:
//! `"KDIF"`, u32 version, u32 horizon, u32 pose_dim, u32 keypoints,
//! u32 visual_dim, u32 geometric_dim, u32 diffusion_steps, u32 hidden,
//! u32 kernel, u32 blocks, u32 time_dim, u32 pos_channels, keypoint ids
//! (u32 each), normalization stats (f64: traj mean, traj scale, cond mean,
//! cond scale), manifest (u32 count, then per tensor: u32 name length, name
//! bytes, u32 rank, u32 dims…, u64 offset), u64 weight count, f32 weights.

use std::fs;
use std::path::Path;

use super::model::{NormalizationStats, PolicyModel};
use super::network::{Denoiser, NetConfig, TensorSpec};
use super::trajectory::POSE_DIM;
use super::PolicyError;
use crate::keypoint::KeypointId;

const MAGIC: &[u8; 4] = b"KDIF";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| PolicyError::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, PolicyError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, PolicyError> {
        Ok(self.u32()? as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, PolicyError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| PolicyError::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn encode(model: &PolicyModel) -> Result<Vec<u8>, PolicyError> {
    let net = model.denoiser()?;
    if model.params.len() != net.param_count() {
        return Err(PolicyError::ShapeMismatch {
            expected: net.param_count(),
            actual: model.params.len(),
        });
    }
    let c = &model.net;
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION);
    for v in [
        c.horizon,
        POSE_DIM,
        model.keypoint_ids.len(),
        model.visual_dim,
        model.geometric_dim,
        model.diffusion_steps,
        c.hidden,
        c.kernel,
        c.blocks,
        c.time_dim,
        c.pos_channels,
    ] {
        w.usize(v);
    }
    for id in &model.keypoint_ids {
        w.u32(id.0);
    }
    w.f64s(&model.stats.traj_mean);
    w.f64s(&model.stats.traj_scale);
    w.f64s(&model.stats.cond_mean);
    w.f64s(&model.stats.cond_scale);
    w.usize(net.manifest().len());
    for t in net.manifest() {
        w.usize(t.name.len());
        w.0.extend_from_slice(t.name.as_bytes());
        w.usize(t.shape.len());
        for d in &t.shape {
            w.usize(*d);
        }
        w.u64(t.offset as u64);
    }
    w.u64(model.params.len() as u64);
    for p in &model.params {
        w.0.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<PolicyModel, PolicyError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PolicyError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PolicyError::Checkpoint(format!("unsupported version {version}")));
    }
    let horizon = r.usize()?;
    let pose_dim = r.usize()?;
    if pose_dim != POSE_DIM {
        return Err(PolicyError::Checkpoint(format!("pose dimension {pose_dim}, expected {POSE_DIM}")));
    }
    let n_kp = r.usize()?;
    let visual_dim = r.usize()?;
    let geometric_dim = r.usize()?;
    let diffusion_steps = r.usize()?;
    let net = NetConfig {
        horizon,
        hidden: r.usize()?,
        kernel: r.usize()?,
        blocks: r.usize()?,
        time_dim: r.usize()?,
        pos_channels: r.usize()?,
        cond_dim: n_kp * (3 + visual_dim + geometric_dim),
    };
    if n_kp == 0 || n_kp > 1 << 16 || net.cond_dim > 1 << 24 {
        return Err(PolicyError::Checkpoint("implausible keypoint count or feature size".into()));
    }
    let keypoint_ids = (0..n_kp).map(|_| r.u32().map(KeypointId)).collect::<Result<Vec<_>, _>>()?;
    let stats = NormalizationStats {
        traj_mean: r.f64s(POSE_DIM)?,
        traj_scale: r.f64s(POSE_DIM)?,
        cond_mean: r.f64s(net.cond_dim)?,
        cond_scale: r.f64s(net.cond_dim)?,
    };
    let expected = Denoiser::new(net.clone()).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let count = r.usize()?;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.usize()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| PolicyError::Checkpoint("tensor name".into()))?;
        let rank = r.usize()?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        let offset = r.u64()? as usize;
        manifest.push(TensorSpec { name, shape, offset });
    }
    if manifest != expected.manifest() {
        return Err(PolicyError::Checkpoint("tensor manifest does not match the network shape".into()));
    }
    let n = r.u64()? as usize;
    if n != expected.param_count() {
        return Err(PolicyError::Checkpoint(format!(
            "{n} weights, network needs {}",
            expected.param_count()
        )));
    }
    let raw = r.take(n * 4)?;
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if r.pos != bytes.len() {
        return Err(PolicyError::Checkpoint("trailing bytes".into()));
    }
    Ok(PolicyModel {
        net,
        diffusion_steps,
        keypoint_ids,
        visual_dim,
        geometric_dim,
        stats,
        params,
    })
}

pub fn save(model: &PolicyModel, path: &Path) -> Result<(), PolicyError> {
    fs::write(path, encode(model)?).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<PolicyModel, PolicyError> {
    let bytes = fs::read(path).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn model() -> PolicyModel {
        let net = NetConfig::new(6, 4, 2 * (3 + 2 + 1));
        let d = Denoiser::new(net.clone()).unwrap();
        let params = d
            .init(&mut ChaCha8Rng::seed_from_u64(2))
            .into_iter()
            .map(|p| p as f32 as f64)
            .collect();
        PolicyModel {
            net,
            diffusion_steps: 10,
            keypoint_ids: vec![KeypointId(1), KeypointId(4)],
            visual_dim: 2,
            geometric_dim: 1,
            stats: NormalizationStats {
                traj_mean: (0..10).map(|i| i as f64 * 0.1).collect(),
                traj_scale: vec![1e-6; 10],
                cond_mean: vec![0.5; 12],
                cond_scale: vec![2.0; 12],
            },
            params,
        }
    }

    #[test]
    fn round_trip() {
        let m = model();
        assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&model()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(decode(&longer).is_err());
    }
}
