//! Synthetic scenes: a class-0 background with rectangles and ellipses.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{quantize, LabeledSample, Mask, Palette, RgbImage};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    /// Half-width of the uniform per-channel noise, in `[0, 1]` intensity units.
    pub noise: f64,
    pub palette: Palette,
    /// Attempts (each with the next seed) to get every class into the set.
    pub retries: u32,
    /// Shape sides are drawn from `[min_side, max_side)` as fractions of the image side.
    pub min_side: f64,
    pub max_side: f64,
}

impl SynthOptions {
    pub fn for_classes(classes: usize) -> Self {
        SynthOptions {
            noise: 0.05,
            palette: Palette::for_classes(classes),
            retries: 10,
            min_side: 0.125,
            max_side: 0.5,
        }
    }
}

enum Shape {
    Rect { x0: usize, y0: usize, x1: usize, y1: usize },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn random<R: Rng>(rng: &mut R, size: usize, opts: &SynthOptions) -> Self {
        let min = ((size as f64 * opts.min_side) as usize).clamp(1, size);
        let max = ((size as f64 * opts.max_side) as usize).clamp(min + 1, size + 1);
        let w = rng.gen_range(min..max);
        let h = rng.gen_range(min..max);
        let x0 = rng.gen_range(0..=size - w);
        let y0 = rng.gen_range(0..=size - h);
        if rng.gen_bool(0.5) {
            Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
        } else {
            Shape::Ellipse {
                cx: x0 as f64 + w as f64 / 2.0,
                cy: y0 as f64 + h as f64 / 2.0,
                rx: w as f64 / 2.0,
                ry: h as f64 / 2.0,
            }
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&x) && (y0..y1).contains(&y),
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

fn scene<R: Rng>(rng: &mut R, size: usize, classes: usize, opts: &SynthOptions, stem: &str) -> LabeledSample {
    let mut mask = Mask::new(size, size);
    let shapes = rng.gen_range(3..=6);
    for _ in 0..shapes {
        let shape = Shape::random(rng, size, opts);
        let class = rng.gen_range(1..classes) as u8;
        for y in 0..size {
            for x in 0..size {
                if shape.contains(x, y) {
                    mask.data[y * size + x] = class;
                }
            }
        }
    }
    let mut image = RgbImage::new(size, size);
    for (p, &class) in mask.data.iter().enumerate() {
        let base = opts.palette.color(class as usize).expect("palette covers every class");
        for (c, &v) in base.iter().enumerate() {
            let noise = if opts.noise > 0.0 { rng.gen_range(-opts.noise..=opts.noise) } else { 0.0 };
            image.data[3 * p + c] = quantize(v as f64 / 255.0 + noise);
        }
    }
    LabeledSample { image, mask, stem: stem.into() }
}

fn generate_once(count: usize, size: usize, classes: usize, seed: u64, opts: &SynthOptions) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| scene(&mut rng, size, classes, opts, &format!("synth_{i:05}"))).collect()
}

fn covers_all(samples: &[LabeledSample], classes: usize) -> bool {
    let mut seen = alloc::vec![false; classes];
    for s in samples {
        for c in s.mask.classes() {
            seen[c] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// `count` square scenes of side `size` with `classes ≥ 2`. If some class is
/// missing from the whole set, the set is regenerated from `seed + 1`, and so on.
pub fn synth_generate(count: usize, size: usize, classes: usize, seed: u64) -> Vec<LabeledSample> {
    synth_generate_with(count, size, classes, seed, &SynthOptions::for_classes(classes))
}

pub fn synth_generate_with(
    count: usize,
    size: usize,
    classes: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Vec<LabeledSample> {
    assert!(classes >= 2, "need at least two classes");
    assert!(opts.palette.len() >= classes, "palette has fewer colors than classes");
    let mut samples = generate_once(count, size, classes, seed, opts);
    let mut attempt = 0;
    while !covers_all(&samples, classes) && attempt < opts.retries {
        attempt += 1;
        samples = generate_once(count, size, classes, seed.wrapping_add(attempt as u64), opts);
    }
    samples
}
