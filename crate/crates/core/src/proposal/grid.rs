use serde::{Deserialize, Serialize};

use super::font::draw_text;
use super::ProposalError;

const MIN_CELL_PIXELS: usize = 4;

/// Labeled grid overlaid on an image: rows are letters, columns numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rows: 8, cols: 8 }
    }
}

impl GridSpec {
    pub fn label(row: usize, col: usize) -> String {
        format!("{}{}", (b'A' + row as u8) as char, col + 1)
    }

    /// `(row, col)` for a label such as `"B12"`.
    pub fn parse_label(&self, label: &str) -> Option<(usize, usize)> {
        let label = label.trim();
        let mut chars = label.chars();
        let letter = chars.next()?.to_ascii_uppercase();
        if !letter.is_ascii_uppercase() {
            return None;
        }
        let row = (letter as u8 - b'A') as usize;
        let col: usize = chars.as_str().parse().ok()?;
        if row < self.rows && col >= 1 && col <= self.cols {
            Some((row, col - 1))
        } else {
            None
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub spec: GridSpec,
    pub width: usize,
    pub height: usize,
    /// Row-major cells with their labels.
    pub cells: Vec<(String, CellRect)>,
}

impl GridLayout {
    /// Cells of `floor(W/cols) × floor(H/rows)`; the last row and column
    /// absorb the remainder pixels.
    pub fn new(spec: GridSpec, width: usize, height: usize) -> Result<Self, ProposalError> {
        if spec.rows == 0 || spec.cols == 0 || spec.rows > 26 || spec.cols > 99 {
            return Err(ProposalError::SpecTooFine(format!(
                "{}x{} grid outside the A1..Z99 label range",
                spec.rows, spec.cols
            )));
        }
        let cw = width / spec.cols;
        let ch = height / spec.rows;
        if cw < MIN_CELL_PIXELS || ch < MIN_CELL_PIXELS {
            return Err(ProposalError::SpecTooFine(format!(
                "{}x{} grid on {width}x{height} image gives {cw}x{ch} cells",
                spec.rows, spec.cols
            )));
        }
        let mut cells = Vec::with_capacity(spec.rows * spec.cols);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let rect = CellRect {
                    x0: c * cw,
                    y0: r * ch,
                    x1: if c + 1 == spec.cols { width } else { (c + 1) * cw },
                    y1: if r + 1 == spec.rows { height } else { (r + 1) * ch },
                };
                cells.push((GridSpec::label(r, c), rect));
            }
        }
        Ok(Self {
            spec,
            width,
            height,
            cells,
        })
    }

    pub fn rect(&self, label: &str) -> Option<CellRect> {
        let (r, c) = self.spec.parse_label(label)?;
        Some(self.cells[r * self.spec.cols + c].1)
    }

    /// Label of the cell containing pixel `(x, y)`.
    pub fn label_at(&self, x: usize, y: usize) -> Option<&str> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let cw = self.width / self.spec.cols;
        let ch = self.height / self.spec.rows;
        let c = (x / cw).min(self.spec.cols - 1);
        let r = (y / ch).min(self.spec.rows - 1);
        Some(&self.cells[r * self.spec.cols + c].0)
    }
}

/// Draws grid lines and cell labels over a copy of `color`.
pub fn overlay_grid(
    color: &[[u8; 3]],
    width: usize,
    height: usize,
    spec: GridSpec,
) -> Result<(Vec<[u8; 3]>, GridLayout), ProposalError> {
    let layout = GridLayout::new(spec, width, height)?;
    let mut out = color.to_vec();
    const LINE: [u8; 3] = [255, 255, 0];
    for (_, rect) in &layout.cells {
        for x in rect.x0..rect.x1 {
            out[rect.y0 * width + x] = LINE;
        }
        for y in rect.y0..rect.y1 {
            out[y * width + rect.x0] = LINE;
        }
    }
    for (label, rect) in &layout.cells {
        draw_text(&mut out, width, height, rect.x0 + 1, rect.y0 + 1, label, [255, 255, 255]);
    }
    Ok((out, layout))
}

/// `density²` query pixels per cell on a lattice offset half a spacing from
/// the cell edges.
pub fn query_points_for_cells(
    cells: &[String],
    layout: &GridLayout,
    density: usize,
) -> Result<Vec<(u32, u32)>, ProposalError> {
    if density == 0 {
        return Err(ProposalError::InvalidConfig("query density must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(cells.len() * density * density);
    for label in cells {
        let rect = layout
            .rect(label)
            .ok_or_else(|| ProposalError::UnknownLabel(label.clone()))?;
        let sx = rect.width() as f64 / density as f64;
        let sy = rect.height() as f64 / density as f64;
        for j in 0..density {
            for i in 0..density {
                let x = rect.x0 as f64 + sx * (i as f64 + 0.5);
                let y = rect.y0 as f64 + sy * (j as f64 + 0.5);
                let p = (x.floor() as u32, y.floor() as u32);
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    Ok(out)
}
