//! Synthetic bright scenes and their gamma-darkened counterparts.

use std::path::Path;

use hsv_retinex::color::{hsv_to_rgb_pixel, rgb_to_hsv_pixel};
use hsv_retinex::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_SIZE: usize = 64;
pub const FIXTURE_COUNT: usize = 16;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// One bright scene: a shaded background with a few soft-edged shapes and
/// some texture. Values stay in roughly [0.45, 0.95].
pub fn bright_scene(size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let n = size as f64;
    let bg_hue: f64 = rng.random();
    let bg_sat: f64 = rng.random_range(0.15..0.6);
    let (gx, gy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let freq = rng.random_range(0.15..0.6);
    let tex_amp = rng.random_range(0.0..0.08);
    let shapes: Vec<(f64, f64, f64, f64, f64, f64, bool)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                rng.random_range(0.1..0.9) * n,
                rng.random_range(0.1..0.9) * n,
                rng.random_range(0.08..0.3) * n,
                rng.random(),
                rng.random_range(0.3..0.9),
                rng.random_range(0.5..0.95),
                rng.random_bool(0.5),
            )
        })
        .collect();
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let ramp = 0.5 + 0.5 * (gx * (fx / n - 0.5) + gy * (fy / n - 0.5));
        let mut h = bg_hue;
        let mut s = bg_sat;
        let mut v = 0.55 + 0.3 * ramp;
        for &(cx, cy, r, sh, ss, sv, square) in &shapes {
            let d = if square {
                (fx - cx).abs().max((fy - cy).abs())
            } else {
                ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt()
            };
            let w = 1.0 - smoothstep((d - r) / 2.0 + 0.5);
            h = if w > 0.5 { sh } else { h };
            s += (ss - s) * w;
            v += (sv - v) * w;
        }
        v += tex_amp * (freq * fx).sin() * (freq * 1.3 * fy).cos();
        hsv_to_rgb_pixel([h, s.clamp(0.0, 1.0), v.clamp(0.45, 0.95)])
    })
}

/// Keeps hue and saturation, raises value to `gamma`, and rounds to 8 bits.
pub fn darken(img: &RgbImage, gamma: f64) -> RgbImage {
    let out = RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let [h, s, v] = rgb_to_hsv_pixel(img.pixel(x, y));
        hsv_to_rgb_pixel([h, s, v.powf(gamma)])
    });
    RgbImage::from_bytes(&out.to_bytes())
}

pub struct Fixture {
    pub bright: Vec<RgbImage>,
    pub dark: Vec<RgbImage>,
    pub gammas: Vec<f64>,
}

pub fn fixture(count: usize, size: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bright = Vec::with_capacity(count);
    let mut dark = Vec::with_capacity(count);
    let mut gammas = Vec::with_capacity(count);
    for _ in 0..count {
        let b = RgbImage::from_bytes(&bright_scene(size, &mut rng).to_bytes());
        let g = rng.random_range(2.5..4.0);
        dark.push(darken(&b, g));
        bright.push(b);
        gammas.push(g);
    }
    Fixture { bright, dark, gammas }
}

/// Writes `dark/NN.png` and `bright/NN.png` under `root`.
pub fn write_fixture(f: &Fixture, root: &Path) {
    for (sub, imgs) in [("dark", &f.dark), ("bright", &f.bright)] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            img.save(dir.join(format!("{i:02}.png"))).unwrap();
        }
    }
}
