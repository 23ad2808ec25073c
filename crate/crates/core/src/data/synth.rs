//! Synthetic shapes: textured backgrounds with one to three coloured shapes
//! of distinct classes (disk, square, triangle, ring).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pnm::{GrayImage, RgbImage};

pub const CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; CLASSES + 1] = ["background", "disk", "square", "triangle", "ring"];
/// Minimum visible fraction of every placed shape.
pub const MIN_VISIBLE: f64 = 0.1;

/// Hue in degrees per foreground class.
const HUES: [f64; CLASSES] = [0.0, 120.0, 230.0, 50.0];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Disk { r: f64 },
    Square { half: f64, angle: f64 },
    Triangle { r: f64, angle: f64 },
    Ring { outer: f64, inner: f64 },
}

impl Shape {
    fn random<R: Rng>(class: u8, rng: &mut R) -> Self {
        let size = rng.gen_range(9.0..17.0);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        match class {
            1 => Shape::Disk { r: size },
            2 => Shape::Square {
                half: size * 0.85,
                angle,
            },
            3 => Shape::Triangle { r: size * 1.2, angle },
            _ => Shape::Ring {
                outer: size,
                inner: size * rng.gen_range(0.45..0.6),
            },
        }
    }

    /// Whether the offset `(dx, dy)` from the centre lies inside.
    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Disk { r } => dx * dx + dy * dy <= r * r,
            Shape::Ring { outer, inner } => {
                let d2 = dx * dx + dy * dy;
                d2 <= outer * outer && d2 >= inner * inner
            }
            Shape::Square { half, angle } => {
                let (s, c) = angle.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= half && v.abs() <= half
            }
            Shape::Triangle { r, angle } => (0..3).all(|k| {
                // Inside all three edge half-planes; the inradius is r/2.
                let a = angle + k as f64 * std::f64::consts::TAU / 3.0;
                dx * a.cos() + dy * a.sin() <= r / 2.0
            }),
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Low-saturation striped texture with pixel noise.
fn background<R: Rng>(size: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let base = hsv_to_rgb(rng.gen_range(0.0..360.0), rng.gen_range(0.0..0.25), rng.gen_range(0.3..0.6));
    let freq = rng.gen_range(0.1..0.4);
    let dir = rng.gen_range(0.0..std::f64::consts::PI);
    let amp = rng.gen_range(0.03..0.12);
    let (s, c) = dir.sin_cos();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let wave = amp * ((x as f64 * c + y as f64 * s) * freq).sin();
            let noise = rng.gen_range(-0.04..0.04);
            out.push(base.map(|v| v + wave + noise));
        }
    }
    out
}

/// One sample: image, class-index mask and the sorted present classes.
pub fn generate<R: Rng>(size: usize, rng: &mut R) -> (RgbImage, GrayImage, Vec<u8>) {
    loop {
        if let Some(sample) = try_generate(size, rng) {
            return sample;
        }
    }
}

fn try_generate<R: Rng>(size: usize, rng: &mut R) -> Option<(RgbImage, GrayImage, Vec<u8>)> {
    let count = rng.gen_range(1..=3);
    let mut classes: Vec<u8> = (1..=CLASSES as u8).collect();
    classes.shuffle(rng);
    classes.truncate(count);

    let mut pixels = background(size, rng);
    let mut mask = GrayImage::new(size, size);
    let mut owner = vec![usize::MAX; size * size];
    let mut areas = Vec::with_capacity(count);
    for (k, &class) in classes.iter().enumerate() {
        let shape = Shape::random(class, rng);
        let margin = size as f64 * 0.15;
        let cx = rng.gen_range(margin..size as f64 - margin);
        let cy = rng.gen_range(margin..size as f64 - margin);
        let hue = HUES[class as usize - 1] + rng.gen_range(-12.0..12.0);
        let color = hsv_to_rgb(hue, rng.gen_range(0.55..0.9), rng.gen_range(0.65..0.95));
        let mut area = 0usize;
        for y in 0..size {
            for x in 0..size {
                if shape.contains(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy) {
                    let i = y * size + x;
                    let noise = rng.gen_range(-0.03..0.03);
                    pixels[i] = color.map(|v| v + noise);
                    mask.data[i] = class;
                    owner[i] = k;
                    area += 1;
                }
            }
        }
        areas.push(area);
    }
    for (k, &area) in areas.iter().enumerate() {
        let visible = owner.iter().filter(|&&o| o == k).count();
        if area == 0 || (visible as f64) < MIN_VISIBLE * area as f64 {
            return None;
        }
    }

    let mut image = RgbImage::new(size, size);
    for (i, p) in pixels.iter().enumerate() {
        image.data[i * 3..i * 3 + 3].copy_from_slice(&p.map(to_u8));
    }
    let labels = present_classes(&mask);
    Some((image, mask, labels))
}

/// Sorted foreground classes occurring in `mask` (ignore excluded).
pub fn present_classes(mask: &GrayImage) -> Vec<u8> {
    let mut seen = [false; 256];
    for &v in &mask.data {
        seen[v as usize] = true;
    }
    (1..255u8).filter(|&c| seen[c as usize]).collect()
}

/// Per-sample generator: the sample index selects an independent stream.
pub fn sample_rng(seed: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index);
    rng
}
