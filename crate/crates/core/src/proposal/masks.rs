use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use super::font::draw_text;
use super::ProposalError;
use crate::geometry::RgbdImage;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub mask: Vec<bool>,
    pub confidence: f64,
    pub query: (u32, u32),
}

impl MaskCandidate {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u < self.width && v < self.height && self.mask[v * self.width + u]
    }
}

pub fn mask_iou(a: &MaskCandidate, b: &MaskCandidate) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.mask.iter().zip(&b.mask) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Drops candidates below `confidence_floor`, then keeps masks greedily by
/// descending confidence (insertion order on ties), suppressing any mask whose
/// IoU with an already kept mask exceeds `iou_threshold`.
pub fn nms_masks(candidates: &[MaskCandidate], iou_threshold: f64, confidence_floor: f64) -> Vec<MaskCandidate> {
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].confidence >= confidence_floor)
        .collect();
    order.sort_by(|&a, &b| candidates[b].confidence.total_cmp(&candidates[a].confidence));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| mask_iou(&candidates[k], &candidates[i]) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| candidates[i].clone()).collect()
}

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Tints each mask and writes its index at the mask centroid.
pub fn overlay_masks(color: &[[u8; 3]], width: usize, height: usize, masks: &[MaskCandidate]) -> Vec<[u8; 3]> {
    let mut out = color.to_vec();
    for (k, m) in masks.iter().enumerate() {
        let tint = PALETTE[k % PALETTE.len()];
        for (px, inside) in out.iter_mut().zip(&m.mask) {
            if *inside {
                for c in 0..3 {
                    px[c] = ((px[c] as u16 + tint[c] as u16) / 2) as u8;
                }
            }
        }
    }
    for (k, m) in masks.iter().enumerate() {
        let (mut sx, mut sy, mut n) = (0usize, 0usize, 0usize);
        for v in 0..height {
            for u in 0..width {
                if m.mask[v * width + u] {
                    sx += u;
                    sy += v;
                    n += 1;
                }
            }
        }
        if n > 0 {
            draw_text(&mut out, width, height, sx / n, sy / n, &k.to_string(), [255, 255, 255]);
        }
    }
    out
}

/// Point-prompted segmentation.
pub trait MaskGenerator: Send + Sync {
    fn generate(&self, image: &RgbdImage, queries: &[(u32, u32)]) -> Result<Vec<MaskCandidate>, ProposalError>;
}

/// Ground-truth segmenter over a per-pixel part-label raster: each query
/// yields the 4-connected component of its label, confidence 1.
#[derive(Debug, Clone)]
pub struct LabelMapSegmenter {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelMapSegmenter {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, ProposalError> {
        if labels.len() != width * height {
            return Err(ProposalError::InvalidConfig(format!(
                "label raster has {} entries for a {width}x{height} image",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn component(&self, u: usize, v: usize) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        let target = self.labels[v * self.width + u];
        let mut queue = VecDeque::from([(u, v)]);
        mask[v * self.width + u] = true;
        while let Some((x, y)) = queue.pop_front() {
            let mut visit = |nx: usize, ny: usize| {
                let i = ny * self.width + nx;
                if !mask[i] && self.labels[i] == target {
                    mask[i] = true;
                    queue.push_back((nx, ny));
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < self.width {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < self.height {
                visit(x, y + 1);
            }
        }
        mask
    }
}

impl MaskGenerator for LabelMapSegmenter {
    fn generate(&self, image: &RgbdImage, queries: &[(u32, u32)]) -> Result<Vec<MaskCandidate>, ProposalError> {
        if image.width != self.width || image.height != self.height {
            return Err(ProposalError::InvalidConfig("label raster size differs from image".into()));
        }
        queries
            .iter()
            .map(|&(u, v)| {
                let (u_, v_) = (u as usize, v as usize);
                if u_ >= self.width || v_ >= self.height {
                    return Err(ProposalError::QueryOutOfBounds(u, v));
                }
                Ok(MaskCandidate {
                    width: self.width,
                    height: self.height,
                    mask: self.component(u_, v_),
                    confidence: 1.0,
                    query: (u, v),
                })
            })
            .collect()
    }
}

/// Precomputed masks keyed by query pixel.
///
/// The directory holds `masks.txt` with one `u v confidence file` line per
/// entry, where `file` is a PGM raster (non-zero = inside).
#[derive(Debug, Clone)]
pub struct FileMaskStore {
    dir: PathBuf,
    entries: Vec<((u32, u32), f64, String)>,
}

impl FileMaskStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ProposalError> {
        let dir = dir.as_ref().to_path_buf();
        let index = dir.join("masks.txt");
        let text = fs::read_to_string(&index).map_err(|_| ProposalError::MissingMaskFile(index.display().to_string()))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || ProposalError::InvalidConfig(format!("masks.txt line {}: {line}", n + 1));
            if parts.len() != 4 {
                return Err(bad());
            }
            let u = parts[0].parse().map_err(|_| bad())?;
            let v = parts[1].parse().map_err(|_| bad())?;
            let conf = parts[2].parse().map_err(|_| bad())?;
            entries.push(((u, v), conf, parts[3].to_string()));
        }
        Ok(Self { dir, entries })
    }
}

impl MaskGenerator for FileMaskStore {
    fn generate(&self, image: &RgbdImage, queries: &[(u32, u32)]) -> Result<Vec<MaskCandidate>, ProposalError> {
        let mut out = Vec::new();
        for &q in queries {
            let (_, conf, file) = self
                .entries
                .iter()
                .find(|(p, _, _)| *p == q)
                .ok_or_else(|| ProposalError::MissingMaskFile(format!("no mask for query pixel ({}, {})", q.0, q.1)))?;
            let path = self.dir.join(file);
            let raster = image::open(&path)
                .map_err(|e| ProposalError::MissingMaskFile(format!("{}: {e}", path.display())))?
                .to_luma8();
            if raster.width() as usize != image.width || raster.height() as usize != image.height {
                return Err(ProposalError::InvalidConfig(format!("{} has the wrong size", path.display())));
            }
            out.push(MaskCandidate {
                width: image.width,
                height: image.height,
                mask: raster.pixels().map(|p| p.0[0] != 0).collect(),
                confidence: *conf,
                query: q,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize, conf: f64) -> MaskCandidate {
        let mut mask = vec![false; w * h];
        for y in y0..y1 {
            for x in x0..x1 {
                mask[y * w + x] = true;
            }
        }
        MaskCandidate {
            width: w,
            height: h,
            mask,
            confidence: conf,
            query: (x0 as u32, y0 as u32),
        }
    }

    #[test]
    fn identical_masks_keep_most_confident() {
        let a = rect_mask(10, 10, 0, 0, 5, 5, 0.8);
        let b = rect_mask(10, 10, 0, 0, 5, 5, 0.9);
        let kept = nms_masks(&[a, b], 0.9, 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
    }

    #[test]
    fn disjoint_masks_survive() {
        let a = rect_mask(10, 10, 0, 0, 3, 3, 0.8);
        let b = rect_mask(10, 10, 5, 5, 8, 8, 0.75);
        assert_eq!(nms_masks(&[a, b], 0.9, 0.7).len(), 2);
        let low = rect_mask(10, 10, 5, 5, 8, 8, 0.5);
        assert_eq!(nms_masks(&[low], 0.9, 0.7).len(), 0);
    }

    /// Reference NMS: repeatedly take the most confident remaining mask and
    /// delete everything overlapping it.
    fn reference_nms(c: &[MaskCandidate], thr: f64, floor: f64) -> Vec<MaskCandidate> {
        let mut remaining: Vec<(usize, &MaskCandidate)> =
            c.iter().enumerate().filter(|(_, m)| m.confidence >= floor).collect();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for k in 1..remaining.len() {
                let (bi, bm) = remaining[best];
                let (ki, km) = remaining[k];
                if km.confidence > bm.confidence || (km.confidence == bm.confidence && ki < bi) {
                    best = k;
                }
            }
            let (_, top) = remaining.remove(best);
            out.push(top.clone());
            remaining.retain(|(_, m)| mask_iou(top, m) <= thr);
        }
        out
    }

    #[test]
    fn matches_reference_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let masks: Vec<MaskCandidate> = (0..20)
                .map(|_| {
                    let x0 = rng.gen_range(0..12);
                    let y0 = rng.gen_range(0..12);
                    let x1 = x0 + rng.gen_range(1..8);
                    let y1 = y0 + rng.gen_range(1..8);
                    let conf = (rng.gen_range(0..10) as f64) / 10.0;
                    rect_mask(20, 20, x0, y0, x1, y1, conf)
                })
                .collect();
            for thr in [0.1, 0.5, 0.9] {
                let got = nms_masks(&masks, thr, 0.3);
                assert_eq!(got, reference_nms(&masks, thr, 0.3));
                for (i, a) in got.iter().enumerate() {
                    assert!(a.confidence >= 0.3);
                    for b in &got[i + 1..] {
                        assert!(mask_iou(a, b) <= thr);
                    }
                }
            }
        }
    }

    #[test]
    fn label_components() {
        #[rustfmt::skip]
        let labels = vec![
            1, 1, 2, 2,
            1, 3, 3, 2,
            1, 1, 1, 1,
        ];
        let seg = LabelMapSegmenter::new(4, 3, labels).unwrap();
        let m = seg.component(2, 0);
        assert_eq!(m.iter().filter(|b| **b).count(), 3);
        let bg = seg.component(0, 0);
        assert_eq!(bg.iter().filter(|b| **b).count(), 7);
    }
}
