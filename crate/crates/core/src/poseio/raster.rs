use super::{KeypointFrame, LimbTopology, SkipReason, IMAGE_SIDE, NECK};

pub const CANVAS_SIDE: usize = 480;
/// Canvas pixel the neck is translated onto, along both axes.
pub const CANVAS_CENTER: usize = CANVAS_SIDE / 2;

/// Neck-relative coordinates are snapped to this grid so that translating a
/// whole frame cannot change any pixel through rounding.
const COORD_GRID: f64 = 256.0;

/// 480x480 grayscale canvas, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterCanvas {
    pixels: Vec<f64>,
}

impl RasterCanvas {
    pub fn blank() -> Self {
        Self::filled(0.0)
    }

    pub fn filled(value: f64) -> Self {
        Self {
            pixels: vec![value; CANVAS_SIDE * CANVAS_SIDE],
        }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * CANVAS_SIDE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * CANVAS_SIDE + col] = value;
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0.0).count()
    }

    /// Sets every pixel within `half_width` of the segment `a`-`b` (measured
    /// perpendicular to it, flat ends) to 1. Coordinates are canvas pixels,
    /// pixel `(col, row)` centred on the integer point.
    fn draw_segment(&mut self, a: (f64, f64), b: (f64, f64), half_width: f64) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let lo = |u: f64, v: f64| (u.min(v) - half_width).ceil().max(0.0);
        let hi = |u: f64, v: f64| (u.max(v) + half_width).floor().min((CANVAS_SIDE - 1) as f64);
        let (c0, c1) = (lo(a.0, b.0), hi(a.0, b.0));
        let (r0, r1) = (lo(a.1, b.1), hi(a.1, b.1));
        if c0 > c1 || r0 > r1 {
            return;
        }
        let r2 = half_width * half_width;
        for row in r0 as usize..=r1 as usize {
            for col in c0 as usize..=c1 as usize {
                let (vx, vy) = (col as f64 - a.0, row as f64 - a.1);
                let on = if len2 == 0.0 {
                    vx * vx + vy * vy <= r2
                } else {
                    let along = vx * dx + vy * dy;
                    let cross = vx * dy - vy * dx;
                    along >= 0.0 && along <= len2 && cross * cross <= r2 * len2
                };
                if on {
                    self.pixels[row * CANVAS_SIDE + col] = 1.0;
                }
            }
        }
    }
}

/// Draws every limb whose endpoints are both detected, translated so the neck
/// lands on canvas pixel `(240, 240)`. Anything outside the canvas is dropped.
pub fn rasterize_neck_centered(
    frame: &KeypointFrame,
    topology: &LimbTopology,
    stroke_width: f64,
    fallback_neck: Option<(f64, f64)>,
) -> Result<RasterCanvas, SkipReason> {
    let neck = frame.neck().or(fallback_neck).ok_or(SkipReason::MissingNeck)?;
    let to_canvas = |x: f64, y: f64| {
        let rx = ((x - neck.0) * COORD_GRID).round() / COORD_GRID;
        let ry = ((y - neck.1) * COORD_GRID).round() / COORD_GRID;
        (rx + CANVAS_CENTER as f64, ry + CANVAS_CENTER as f64)
    };
    let mut canvas = RasterCanvas::blank();
    let half = stroke_width / 2.0;
    for &(i, j) in topology.edges() {
        let (a, b) = (frame.keypoints[i], frame.keypoints[j]);
        if !(a.detected() && b.detected()) {
            continue;
        }
        canvas.draw_segment(to_canvas(a.x, a.y), to_canvas(b.x, b.y), half);
    }
    debug_assert!(frame.keypoints.len() > NECK);
    Ok(canvas)
}

/// Square grayscale image of side `side`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub side: usize,
    pub pixels: Vec<f64>,
}

/// Per-output-sample taps of a 1-D bilinear resampling.
fn bilinear_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    // Widening the triangle when downscaling keeps every source pixel in play;
    // at scale <= 1 this is the plain two-neighbour blend.
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let first = (center - support).ceil().max(0.0) as usize;
            let last = ((center + support).floor() as isize).min(src as isize - 1).max(0) as usize;
            let mut taps: Vec<(usize, f64)> = (first..=last)
                .map(|j| (j, (1.0 - (j as f64 - center).abs() / support).max(0.0)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            if taps.is_empty() {
                // centre beyond the last pixel centre: clamp onto the edge pixel
                let j = center.round().clamp(0.0, (src - 1) as f64) as usize;
                taps.push((j, 1.0));
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Weighted blend written as offsets from the first tap, so equal inputs come
/// out exactly equal, clamped to the range of the inputs.
fn blend(taps: &[(usize, f64)], value: impl Fn(usize) -> f64) -> f64 {
    let base = value(taps[0].0);
    let (mut lo, mut hi, mut acc) = (base, base, 0.0);
    for &(j, w) in &taps[1..] {
        let v = value(j);
        lo = lo.min(v);
        hi = hi.max(v);
        acc += w * (v - base);
    }
    (base + acc).clamp(lo, hi)
}

/// Separable bilinear resampling of a row-major `src_w x src_h` image with
/// half-pixel-centre alignment: output sample `i` sits at source coordinate
/// `(i + 0.5) * src / dst - 0.5`. When shrinking, the triangle kernel is
/// stretched by the scale factor so thin features are averaged rather than
/// skipped. Every output is a convex combination of inputs.
pub fn resize_bilinear(src: &[f64], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f64> {
    assert_eq!(src.len(), src_w * src_h, "source buffer does not match its extents");
    let xt = bilinear_taps(src_w, dst_w);
    let yt = bilinear_taps(src_h, dst_h);
    let mut rows = vec![0.0; src_h * dst_w];
    for r in 0..src_h {
        let line = &src[r * src_w..(r + 1) * src_w];
        for (c, taps) in xt.iter().enumerate() {
            rows[r * dst_w + c] = blend(taps, |j| line[j]);
        }
    }
    let mut out = vec![0.0; dst_h * dst_w];
    for (r, taps) in yt.iter().enumerate() {
        for c in 0..dst_w {
            out[r * dst_w + c] = blend(taps, |j| rows[j * dst_w + c]);
        }
    }
    out
}

/// Downscales a canvas to a 28x28 grayscale image.
pub fn resize_canvas(canvas: &RasterCanvas) -> GrayImage {
    GrayImage {
        side: IMAGE_SIDE,
        pixels: resize_bilinear(canvas.pixels(), CANVAS_SIDE, CANVAS_SIDE, IMAGE_SIDE, IMAGE_SIDE),
    }
}

/// `1` where the value reaches `threshold`, else `0`.
pub fn binarize(image: &GrayImage, threshold: f64) -> Vec<u8> {
    image.pixels.iter().map(|&v| u8::from(v >= threshold)).collect()
}
