//! Synthetic two-contrast phantoms for smoke runs and ordering checks.
//!
//! Domain T1 is a piecewise-constant head phantom. Domain T2 is a fixed
//! nonlinear intensity inversion of the T1 phantom followed by Gaussian
//! smoothing, so the T1→T2 mapping is known, nonlinear and non-local.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Domain, Grid, ImageSlice, PairedDataset, Split};
use crate::error::Result;
use crate::models::ArchConfig;
use crate::scalar::Scalar;

/// Smoothing applied after the remap, in pixels.
pub const TOY_SIGMA: f64 = 2.0;

/// Narrow networks sized for CPU runs on 64×64 phantoms. Layer counts are
/// those of the full-size models; the discriminators downsample twice so the
/// score grid stays 16×16.
pub fn toy_arch() -> ArchConfig {
    ArchConfig {
        base_width: 4,
        simple_width: 64,
        disc_base_width: 8,
        disc_downsamplings: 2,
        unit_residual_blocks: 4,
    }
}

/// Intensity map from T1 to (unsmoothed) T2: background stays 0, tissue
/// contrast is inverted.
pub fn toy_remap(v: f64) -> f64 {
    if v < 0.05 {
        0.0
    } else {
        1.1 * (1.0 - v).max(0.0).powf(1.5) + 0.1
    }
}

/// `n_pairs` phantom pairs of `size×size`, subjects `toy-0000`, ....
pub fn toy_dataset<T: Scalar>(n_pairs: usize, size: usize, seed: u64) -> Result<PairedDataset<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let a = phantom(size, &mut rng);
        let b = gaussian_blur(&a.iter().map(|&v| toy_remap(v)).collect::<Vec<_>>(), size, size, TOY_SIGMA);
        let id = format!("toy-{i:04}");
        let grid = |v: Vec<f64>| Grid::new(size, size, v.into_iter().map(T::lit).collect());
        pairs.push((
            ImageSlice::new(grid(a)?, Domain::T1, id.clone(), 0)?,
            ImageSlice::new(grid(b)?, Domain::T2, id, 0)?,
        ));
    }
    PairedDataset::new(pairs, Split::Train)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    fn scaled(&self, k: f64) -> Ellipse {
        Ellipse {
            rx: self.rx * k,
            ry: self.ry * k,
            ..*self
        }
    }
}

fn phantom<R: Rng>(size: usize, rng: &mut R) -> Vec<f64> {
    let s = size as f64;
    let head = Ellipse {
        cx: s / 2.0 + rng.gen_range(-0.04..0.04) * s,
        cy: s / 2.0 + rng.gen_range(-0.04..0.04) * s,
        rx: s * rng.gen_range(0.33..0.42),
        ry: s * rng.gen_range(0.38..0.46),
    };
    let cortex = head.scaled(rng.gen_range(0.82..0.9));
    let ventricles = Ellipse {
        cx: head.cx + rng.gen_range(-0.03..0.03) * s,
        cy: head.cy + rng.gen_range(-0.05..0.05) * s,
        rx: s * rng.gen_range(0.04..0.09),
        ry: s * rng.gen_range(0.08..0.15),
    };
    let blobs: Vec<(Ellipse, f64)> = (0..rng.gen_range(2..5))
        .map(|_| {
            let r = head.rx.min(head.ry) * 0.6;
            let (ang, rad) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.2..1.0) * r);
            (
                Ellipse {
                    cx: head.cx + rad * ang.cos(),
                    cy: head.cy + rad * ang.sin(),
                    rx: s * rng.gen_range(0.03..0.08),
                    ry: s * rng.gen_range(0.03..0.08),
                },
                rng.gen_range(0.3..0.9),
            )
        })
        .collect();
    let (skin, gray, white, csf) = (
        rng.gen_range(0.55..0.65),
        rng.gen_range(0.4..0.5),
        rng.gen_range(0.7..0.8),
        rng.gen_range(0.12..0.2),
    );

    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let v = if !head.contains(fx, fy) {
                0.0
            } else if ventricles.contains(fx, fy) {
                csf
            } else if let Some((_, b)) = blobs.iter().find(|(e, _)| e.contains(fx, fy)) {
                *b
            } else if cortex.scaled(0.85).contains(fx, fy) {
                white
            } else if cortex.contains(fx, fy) {
                gray
            } else {
                skin
            };
            out[y * size + x] = v;
        }
    }
    out
}

/// Separable Gaussian blur with zero padding, kernel radius `ceil(3σ)`.
pub fn gaussian_blur(img: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / norm).collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut dst = vec![0.0; src.len()];
        for y in 0..height as isize {
            for x in 0..width as isize {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let o = j as isize - r;
                    let (sx, sy) = if horizontal { (x + o, y) } else { (x, y + o) };
                    if sx >= 0 && sy >= 0 && (sx as usize) < width && (sy as usize) < height {
                        acc += kv * src[sy as usize * width + sx as usize];
                    }
                }
                dst[y as usize * width + x as usize] = acc;
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}
