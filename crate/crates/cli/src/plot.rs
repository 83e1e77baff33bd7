//! Minimal line plots rendered straight to pixels: axes, one polyline per
//! series, min/max tick labels, axis titles and a legend.

use ssrgan::Tensor;

const WIDTH: usize = 560;
const HEIGHT: usize = 360;
const LEFT: usize = 80;
const RIGHT: usize = 24;
const TOP: usize = 36;
const BOTTOM: usize = 56;
const SCALE: usize = 2;
const PALETTE: [[f32; 3]; 6] = [
    [0.12, 0.40, 0.75],
    [0.85, 0.33, 0.10],
    [0.20, 0.60, 0.20],
    [0.60, 0.25, 0.65],
    [0.55, 0.45, 0.10],
    [0.10, 0.60, 0.65],
];
const BLACK: [f32; 3] = [0.0; 3];
const GRAY: [f32; 3] = [0.85; 3];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// 3x5 glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
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
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
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
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '_' => [0, 0, 0, 0, 7],
        ':' => [0, 2, 0, 2, 0],
        '/' => [1, 1, 2, 4, 4],
        _ => [0; 5],
    }
}

struct Canvas {
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![[1.0; 3]; WIDTH * HEIGHT],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [f32; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < WIDTH && (y as usize) < HEIGHT {
            self.px[y as usize * WIDTH + x as usize] = c;
        }
    }

    fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: [f32; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    /// Bresenham, two pixels thick.
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [f32; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.rect(x, y, 2, 2, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, text: &str, c: [f32; 3]) {
        let k = SCALE as i64;
        for (i, ch) in text.chars().enumerate() {
            let x0 = x + i as i64 * 4 * k;
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.rect(x0 + col * k, y + row as i64 * k, k, k, c);
                    }
                }
            }
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let mut data = vec![0.0; 3 * WIDTH * HEIGHT];
        for (i, p) in self.px.iter().enumerate() {
            for (ch, v) in p.iter().enumerate() {
                data[ch * WIDTH * HEIGHT + i] = *v;
            }
        }
        Tensor::from_vec(&[3, HEIGHT, WIDTH], data).expect("canvas shape")
    }
}

fn text_width(text: &str) -> i64 {
    (text.chars().count() * 4 * SCALE) as i64
}

fn tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else if v.abs() >= 0.01 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Renders `series` as a `(3, H, W)` image in `[0, 1]`. The y axis starts
/// at zero for non-negative data. Non-finite points are skipped.
pub fn line_plot(series: &[Series], x_label: &str, y_label: &str) -> Tensor<f32> {
    let mut cv = Canvas::new();
    let finite = |s: &Series| -> Vec<(f64, f64)> {
        s.points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect()
    };
    let all: Vec<(f64, f64)> = series.iter().flat_map(finite).collect();
    let (mut x0, mut x1) = range(all.iter().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let (y0, mut y1) = range(all.iter().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let mut y0 = y0.min(0.0);
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    // Headroom for the legend rows.
    y1 += (0.05 + 0.07 * series.len().min(PALETTE.len()) as f64) * (y1 - y0);
    if y0 < 0.0 {
        y0 -= 0.05 * (y1 - y0);
    }

    let (px0, px1) = (LEFT as i64, (WIDTH - RIGHT) as i64);
    let (py0, py1) = ((HEIGHT - BOTTOM) as i64, TOP as i64);
    let to_px = |(x, y): (f64, f64)| -> (i64, i64) {
        let fx = (x - x0) / (x1 - x0);
        let fy = (y - y0) / (y1 - y0);
        (
            px0 + (fx * (px1 - px0) as f64).round() as i64,
            py0 + (fy * (py1 - py0) as f64).round() as i64,
        )
    };

    cv.line((px0, py1), (px1, py1), GRAY);
    cv.line((px1, py1), (px1, py0), GRAY);
    cv.line((px0, py0), (px1, py0), BLACK);
    cv.line((px0, py0), (px0, py1), BLACK);
    let glyph_h = (5 * SCALE) as i64;
    for (v, label_x) in [(x0, px0), (x1, px1)] {
        let t = tick(v);
        cv.rect(label_x, py0, 2, 6, BLACK);
        cv.text(label_x - text_width(&t) / 2, py0 + 10, &t, BLACK);
    }
    for (v, label_y) in [(y0, py0), (y1, py1)] {
        let t = tick(v);
        cv.rect(px0 - 6, label_y, 6, 2, BLACK);
        cv.text(px0 - 10 - text_width(&t), label_y - glyph_h / 2, &t, BLACK);
    }
    let mid = (px0 + px1) / 2;
    cv.text(mid - text_width(x_label) / 2, py0 + 12 + 2 * glyph_h, x_label, BLACK);
    cv.text(8, 10, y_label, BLACK);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> = finite(s).into_iter().map(to_px).collect();
        for w in pts.windows(2) {
            cv.line(w[0], w[1], color);
        }
        for &(x, y) in &pts {
            cv.rect(x - 2, y - 2, 6, 6, color);
        }
        let ly = py1 + 6 + i as i64 * (glyph_h + 6);
        let lx = px1 - 8 - text_width(&s.label) - 16;
        cv.rect(lx, ly + 2, 10, 6, color);
        cv.text(lx + 16, ly, &s.label, color);
    }
    cv.into_tensor()
}
