//! 3×5 bitmap glyphs for labeling overlays.

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;

/// Each glyph is five rows of three bits, most significant bit leftmost.
fn glyph(c: char) -> Option<[u8; GLYPH_H]> {
    let g = match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [7, 4, 4, 4, 7],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [7, 4, 5, 5, 7],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 7],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        _ => return None,
    };
    Some(g)
}

/// Draws `text` with its top-left corner at `(x, y)`, clipped to the raster.
pub fn draw_text(raster: &mut [[u8; 3]], width: usize, height: usize, x: usize, y: usize, text: &str, color: [u8; 3]) {
    let mut cursor = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (dy, bits) in rows.iter().enumerate() {
                for dx in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - dx)) != 0 {
                        let (px, py) = (cursor + dx, y + dy);
                        if px < width && py < height {
                            raster[py * width + px] = color;
                        }
                    }
                }
            }
        }
        cursor += GLYPH_W + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_and_clips() {
        let mut r = vec![[0u8; 3]; 8 * 6];
        draw_text(&mut r, 8, 6, 0, 0, "A1", [255, 255, 255]);
        // Top row of 'A' is the middle pixel only.
        assert_eq!(r[1], [255, 255, 255]);
        assert_eq!(r[0], [0, 0, 0]);
        let lit = r.iter().filter(|p| p[0] == 255).count();
        assert!(lit > 10);
        draw_text(&mut r, 8, 6, 7, 5, "Z", [1, 1, 1]);
    }
}
