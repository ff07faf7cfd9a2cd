//! PGM and PPM images of grids. The top image row is the largest `y`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sogm::{Sogm, DYNAMIC, MOVABLE, PERMANENT};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, side: usize) -> Vec<u8> {
    let mut h = String::new();
    write!(h, "{magic}\n{side} {side}\n255\n").unwrap();
    h.into_bytes()
}

/// 8-bit grayscale of one layer and channel, 0..1 mapped linearly to 0..255.
pub fn render_pgm(grid: &Sogm, layer: usize, channel: usize) -> Result<Vec<u8>> {
    if layer >= grid.n_t || channel >= grid.channels {
        return Err(Error::invalid(format!(
            "layer {layer} / channel {channel} out of range ({} x {})",
            grid.n_t, grid.channels
        )));
    }
    let side = grid.side();
    let plane = grid.plane(layer, channel);
    let mut out = header("P5", side);
    for row in (0..side).rev() {
        out.extend(plane[row * side..(row + 1) * side].iter().map(|&v| to_byte(v as f64)));
    }
    Ok(out)
}

/// Color of layer `k` of `n`: red for the present, through green, to blue
/// at the horizon.
pub fn layer_color(k: usize, n: usize) -> [f64; 3] {
    let u = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
    [1.0 - u, 1.0 - (2.0 * u - 1.0).abs(), u]
}

/// RGB pixels of the merged-time view, row-major from the top row.
pub fn merged_pixels(grid: &Sogm) -> Vec<[f64; 3]> {
    let side = grid.side();
    let mut px = vec![[1.0; 3]; side * side];
    let statics = [(PERMANENT, [0.2, 0.2, 0.2]), (MOVABLE, [0.55, 0.45, 0.3])];
    for (i, p) in px.iter_mut().enumerate() {
        let (row, col) = (side - 1 - i / side, i % side);
        let src = row * side + col;
        for &(c, color) in statics.iter().filter(|(c, _)| *c < grid.channels) {
            let a = grid.plane(0, c)[src] as f64;
            blend(p, color, a);
        }
        if grid.channels > DYNAMIC {
            // earlier layers drawn last so they stay visible
            for k in (0..grid.n_t).rev() {
                let a = grid.plane(k, DYNAMIC)[src] as f64;
                blend(p, layer_color(k, grid.n_t), a);
            }
        }
    }
    px
}

fn blend(p: &mut [f64; 3], color: [f64; 3], a: f64) {
    let a = a.clamp(0.0, 1.0);
    for (v, c) in p.iter_mut().zip(color) {
        *v = *v * (1.0 - a) + c * a;
    }
}

pub fn encode_ppm(side: usize, pixels: &[[f64; 3]]) -> Vec<u8> {
    let mut out = header("P6", side);
    out.extend(pixels.iter().flat_map(|p| p.map(to_byte)));
    out
}

/// Merged-time view: static channels in gray and brown, dynamic occupancy
/// colored by layer index.
pub fn render_ppm(grid: &Sogm) -> Vec<u8> {
    encode_ppm(grid.side(), &merged_pixels(grid))
}

/// Mark world points on a top-row-first pixel buffer.
pub fn draw_points(grid: &Sogm, pixels: &mut [[f64; 3]], points: &[Vec2], color: [f64; 3]) {
    let side = grid.side();
    for &p in points {
        if let Some((row, col)) = grid.geometry.cell_of(p) {
            pixels[(side - 1 - row) * side + col] = color;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sogm::GridGeometry;

    fn grid(n_t: usize) -> Sogm {
        Sogm::zeros(n_t, 3, GridGeometry::centered(Vec2::ZERO, 4, 0.5), 0.1, 0.0)
    }

    #[test]
    fn zero_layer_is_black() {
        let img = render_pgm(&grid(2), 1, DYNAMIC).unwrap();
        let head = b"P5\n4 4\n255\n";
        assert_eq!(&img[..head.len()], head);
        assert_eq!(img.len(), head.len() + 16);
        assert!(img[head.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn rows_flip_and_values_scale() {
        let mut g = grid(1);
        g.plane_mut(0, PERMANENT)[0] = 1.0; // row 0, col 0: bottom left
        g.plane_mut(0, PERMANENT)[3] = 0.5;
        let img = render_pgm(&g, 0, PERMANENT).unwrap();
        let body = &img[img.len() - 16..];
        assert_eq!(body[12], 255);
        assert_eq!(body[15], 128);
        assert!(render_pgm(&g, 1, 0).is_err());
    }

    #[test]
    fn merged_view_colors_by_layer() {
        let mut g = grid(3);
        g.plane_mut(0, DYNAMIC)[0] = 1.0;
        g.plane_mut(2, DYNAMIC)[5] = 1.0;
        let px = merged_pixels(&g);
        assert_eq!(px[12], [1.0, 0.0, 0.0]);
        assert_eq!(px[2 * 4 + 1], [0.0, 0.0, 1.0]);
        assert_eq!(px[0], [1.0; 3]);
        let img = render_ppm(&g);
        assert_eq!(img.len(), b"P6\n4 4\n255\n".len() + 48);
    }
}
