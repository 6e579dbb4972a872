#![allow(dead_code)]

use std::path::Path;

use chromaflow::color::{lab_to_rgb, LabImage, Plane, RgbImage};
use chromaflow::io::save_rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Moving sinusoid texture with luminance-driven colors.
#[derive(Clone, Debug)]
pub struct Scene {
    pub waves: Vec<(f64, f64, f64, f64)>,
    pub base: f64,
    pub velocity: (f64, f64),
    pub hue: f64,
}

impl Scene {
    pub fn random(seed: u64, hue: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..6)
            .map(|_| {
                (
                    rng.gen_range(0.03..0.2),
                    rng.gen_range(0.03..0.2),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(3.0..7.0),
                )
            })
            .collect();
        Self {
            waves,
            base: 50.0,
            velocity: (0.0, 0.0),
            hue,
        }
    }

    pub fn moving(mut self, vx: f64, vy: f64) -> Self {
        self.velocity = (vx, vy);
        self
    }

    /// Same wave amplitudes as `other`, so both scenes have a similar luminance histogram.
    pub fn amplitudes_of(mut self, other: &Scene) -> Self {
        for (w, o) in self.waves.iter_mut().zip(&other.waves) {
            w.3 = o.3;
        }
        self
    }

    pub fn luma(&self, x: f64, y: f64, t: f64) -> f64 {
        let (u, v) = (x - self.velocity.0 * t, y - self.velocity.1 * t);
        let s: f64 = self
            .waves
            .iter()
            .map(|(fx, fy, ph, amp)| amp * (fx * u + fy * v + ph).sin())
            .sum();
        (self.base + s).clamp(5.0, 95.0)
    }

    pub fn lab(&self, w: usize, h: usize, t: f64) -> LabImage<f64> {
        let l = Plane::from_fn(w, h, |x, y| self.luma(x as f64, y as f64, t)).unwrap();
        let a = l.map(|v| 45.0 * ((v - 50.0) / 24.0 + self.hue).sin());
        let b = l.map(|v| 45.0 * ((v - 50.0) / 32.0 + self.hue).cos());
        LabImage::from_planes(l, a, b).unwrap()
    }

    pub fn rgb(&self, w: usize, h: usize, t: f64) -> RgbImage {
        lab_to_rgb(&self.lab(w, h, t))
    }
}

pub fn gray_of(img: &RgbImage) -> RgbImage {
    let lab = chromaflow::color::rgb_to_lab::<f64>(img);
    lab_to_rgb(&LabImage::gray(lab.l().clone()).unwrap())
}

pub fn frame_name(n: usize) -> String {
    format!("frame_{:06}.png", n + 1)
}

pub fn write_frames(dir: &Path, frames: &[RgbImage]) {
    std::fs::create_dir_all(dir).unwrap();
    for (n, f) in frames.iter().enumerate() {
        save_rgb(&dir.join(frame_name(n)), f).unwrap();
    }
}

/// Ground-truth A-B-A sequence: A for 20 frames, B for 20, then A replayed
/// backwards so the last frame repeats frame 0.
pub fn aba_sequence(w: usize, h: usize) -> Vec<RgbImage> {
    let a = Scene::random(11, 0.0).moving(0.7, 0.4);
    let b = Scene::random(23, 2.2).amplitudes_of(&a).moving(-0.5, 0.6);
    (0..60)
        .map(|n| match n {
            0..=19 => a.rgb(w, h, n as f64),
            20..=39 => b.rgb(w, h, (n - 20) as f64),
            _ => a.rgb(w, h, (59 - n) as f64),
        })
        .collect()
}

/// Corpus image: a colorful scene at a given size.
pub fn corpus_image(seed: u64, w: usize, h: usize) -> RgbImage {
    Scene::random(seed, (seed as f64) * 0.37).rgb(w, h, 0.0)
}

/// Broadband luminance texture: oriented sinusoids in all directions.
pub fn texture(seed: u64) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(3.0..7.0),
            )
        })
        .collect();
    move |x, y| {
        50.0 + waves
            .iter()
            .map(|(fx, fy, ph, amp)| amp * (fx * x + fy * y + ph).sin())
            .sum::<f64>()
    }
}
