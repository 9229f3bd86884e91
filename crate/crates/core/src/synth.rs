//! Procedural face scenes: bright skin-toned ellipses with dark eyes, a nose
//! spot and a mouth bar, placed on smooth colored noise with random clutter.
//! All randomness flows from a caller-provided RNG so output is a pure
//! function of the seed.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{BBox, Landmarks};
use crate::imageio::Image;

/// Landmark anchors as fractions of the face box: left eye, right eye, nose,
/// left and right mouth corner.
pub const LANDMARK_ANCHORS: [(f32, f32); 5] = [(0.3, 0.38), (0.7, 0.38), (0.5, 0.58), (0.33, 0.78), (0.67, 0.78)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFace {
    /// Square truth box.
    pub bbox: BBox,
    pub landmarks: Landmarks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub image: Image,
    pub faces: Vec<SynthFace>,
}

/// Scene generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub faces: RangeInclusive<usize>,
    pub face_size: RangeInclusive<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 128,
            faces: 1..=3,
            face_size: 24..=56,
        }
    }
}

fn smooth_noise(width: usize, height: usize, cell: usize, lo: f32, hi: f32, rng: &mut impl Rng) -> Vec<f32> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(lo..hi)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = y as f32 / cell as f32;
        let (gy, ty) = (fy as usize, fy.fract());
        for x in 0..width {
            let fx = x as f32 / cell as f32;
            let (gx, tx) = (fx as usize, fx.fract());
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(gx, gy) + (g(gx + 1, gy) - g(gx, gy)) * tx;
            let bottom = g(gx, gy + 1) + (g(gx + 1, gy + 1) - g(gx, gy + 1)) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

fn put(img: &mut Image, x: i64, y: i64, rgb: [f32; 3]) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for (c, v) in rgb.into_iter().enumerate() {
        img.set(x as usize, y as usize, c, v.round().clamp(0.0, 255.0) as u8);
    }
}

fn fill_disc(img: &mut Image, cx: f32, cy: f32, rx: f32, ry: f32, mut color: impl FnMut(f32) -> [f32; 3]) {
    let (x0, x1) = ((cx - rx).floor() as i64, (cx + rx).ceil() as i64);
    let (y0, y1) = ((cy - ry).floor() as i64, (cy + ry).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f32 + 0.5 - cx) / rx;
            let dy = (y as f32 + 0.5 - cy) / ry;
            let r2 = dx * dx + dy * dy;
            if r2 <= 1.0 {
                put(img, x, y, color(r2));
            }
        }
    }
}

/// Smooth colored noise with a few random rectangles and discs.
pub fn texture(width: usize, height: usize, rng: &mut impl Rng) -> Image {
    let cell = rng.gen_range(8..=24);
    let base: Vec<Vec<f32>> = (0..3).map(|_| smooth_noise(width, height, cell, 15.0, 175.0, rng)).collect();
    let mut img = Image::filled(width, height, 3, 0);
    for y in 0..height {
        for x in 0..width {
            let noise = rng.gen_range(-8.0..8.0);
            let i = y * width + x;
            put(&mut img, x as i64, y as i64, [base[0][i] + noise, base[1][i] + noise, base[2][i] + noise]);
        }
    }
    for _ in 0..rng.gen_range(0..=4) {
        let color = [rng.gen_range(0.0..220.0), rng.gen_range(0.0..220.0), rng.gen_range(0.0..220.0)];
        let w = rng.gen_range(3..=width.max(4) / 2) as f32;
        let h = rng.gen_range(3..=height.max(4) / 2) as f32;
        let cx = rng.gen_range(0.0..width as f32);
        let cy = rng.gen_range(0.0..height as f32);
        if rng.gen_bool(0.5) {
            fill_disc(&mut img, cx, cy, w / 2.0, h / 2.0, |_| color);
        } else {
            for y in (cy - h / 2.0) as i64..(cy + h / 2.0) as i64 {
                for x in (cx - w / 2.0) as i64..(cx + w / 2.0) as i64 {
                    put(&mut img, x, y, color);
                }
            }
        }
    }
    img
}

/// Paints a face whose square truth box has its top-left corner at `(x, y)`.
pub fn draw_face(img: &mut Image, x: f32, y: f32, size: f32, rng: &mut impl Rng) -> SynthFace {
    let tone = rng.gen_range(175.0..235.0f32);
    let skin = [tone, tone * rng.gen_range(0.78..0.9), tone * rng.gen_range(0.62..0.75)];
    let (cx, cy) = (x + size / 2.0, y + size / 2.0);
    fill_disc(img, cx, cy, 0.42 * size, 0.5 * size, |r2| skin.map(|v| v * (1.0 - 0.15 * r2)));

    let mut landmarks = [(0.0, 0.0); 5];
    for (lm, &(ax, ay)) in landmarks.iter_mut().zip(&LANDMARK_ANCHORS) {
        *lm = (
            x + (ax + rng.gen_range(-0.02..0.02)) * size,
            y + (ay + rng.gen_range(-0.02..0.02)) * size,
        );
    }
    let dark = rng.gen_range(10.0..50.0f32);
    for &(ex, ey) in &landmarks[..2] {
        fill_disc(img, ex, ey, 0.075 * size, 0.06 * size, |_| [dark; 3]);
    }
    let (nx, ny) = landmarks[2];
    fill_disc(img, nx, ny, 0.05 * size, 0.05 * size, |_| skin.map(|v| v * 0.6));
    let ((mx1, my1), (mx2, my2)) = (landmarks[3], landmarks[4]);
    let half = (0.04 * size).max(0.6);
    let steps = ((mx2 - mx1).abs() * 2.0).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f32 / steps as f32;
        let (px, py) = (mx1 + (mx2 - mx1) * t, my1 + (my2 - my1) * t);
        for yy in (py - half).round() as i64..(py + half).round().max((py - half).round() + 1.0) as i64 {
            put(img, px.floor() as i64, yy, [dark + 20.0, dark, dark]);
        }
    }
    SynthFace {
        bbox: BBox::square(x, y, size).expect("positive face size"),
        landmarks,
    }
}

/// A scene with non-overlapping faces fully inside the image. Fewer faces than
/// requested are placed when the image runs out of room.
pub fn render_scene(cfg: &SceneConfig, rng: &mut impl Rng) -> SynthScene {
    let mut image = texture(cfg.width, cfg.height, rng);
    let wanted = rng.gen_range(cfg.faces.clone());
    let mut boxes: Vec<(f32, f32, f32)> = Vec::new();
    for _ in 0..wanted {
        for _ in 0..50 {
            let max_side = cfg.width.min(cfg.height);
            let size = rng.gen_range(cfg.face_size.clone()).min(max_side) as f32;
            let x = rng.gen_range(0..=cfg.width - size as usize) as f32;
            let y = rng.gen_range(0..=cfg.height - size as usize) as f32;
            let clear = boxes
                .iter()
                .all(|&(bx, by, bs)| x + size <= bx || bx + bs <= x || y + size <= by || by + bs <= y);
            if clear {
                boxes.push((x, y, size));
                break;
            }
        }
    }
    let faces = boxes.iter().map(|&(x, y, s)| draw_face(&mut image, x, y, s, rng)).collect();
    SynthScene { image, faces }
}

/// `n` default scenes, each seeded from `(seed, index)`.
pub fn scenes(n: usize, seed: u64, cfg: &SceneConfig) -> Vec<SynthScene> {
    (0..n).map(|i| render_scene(cfg, &mut scene_rng(seed, i))).collect()
}

pub fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Manifest line: `image_path x1 y1 x2 y2 [x1 y1 x2 y2 ...]`.
pub fn manifest_line(image_path: &str, faces: &[SynthFace]) -> String {
    let mut line = image_path.to_string();
    for f in faces {
        let b = f.bbox;
        let _ = write!(line, " {} {} {} {}", b.x1, b.y1, b.x2, b.y2);
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        let a = scenes(3, 9, &cfg);
        let b = scenes(3, 9, &cfg);
        assert_eq!(a, b);
        assert_ne!(a[0].image, scenes(1, 10, &cfg)[0].image);
    }

    #[test]
    fn faces_fit_and_do_not_overlap() {
        let cfg = SceneConfig::default();
        for s in scenes(40, 1, &cfg) {
            assert!(!s.faces.is_empty() && s.faces.len() <= 3);
            for (i, f) in s.faces.iter().enumerate() {
                assert!(f.bbox.inside(128.0, 128.0));
                assert!((24.0..=56.0).contains(&f.bbox.width()));
                for g in &s.faces[i + 1..] {
                    assert_eq!(f.bbox.intersection(&g.bbox), 0.0);
                }
                for &(x, y) in &f.landmarks {
                    assert!(x > f.bbox.x1 && x < f.bbox.x2 && y > f.bbox.y1 && y < f.bbox.y2);
                }
            }
        }
    }

    #[test]
    fn face_is_brighter_than_its_eyes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut img = Image::filled(64, 64, 3, 60);
        let f = draw_face(&mut img, 8.0, 8.0, 48.0, &mut rng);
        let (ex, ey) = f.landmarks[0];
        let cheek = img.get(32, 8 + 24, 0);
        assert!(img.get(ex as usize, ey as usize, 0) < 60);
        assert!(cheek > 150);
        assert_eq!(img.get(0, 0, 0), 60);
    }

    #[test]
    fn manifest_format() {
        let f = SynthFace {
            bbox: BBox::new(1.0, 2.0, 25.0, 26.0).unwrap(),
            landmarks: [(0.0, 0.0); 5],
        };
        assert_eq!(manifest_line("a.ppm", &[f.clone(), f]), "a.ppm 1 2 25 26 1 2 25 26");
        assert_eq!(manifest_line("b.ppm", &[]), "b.ppm");
    }
}
