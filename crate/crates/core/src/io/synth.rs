//! Synthetic low-rank background plus moving-rectangle video.
//!
//! The background of frame `t` is `Σ_j a_j(t) · M_j` for `k` smooth spatial
//! maps `M_j` (products of low-frequency cosines) and slowly oscillating
//! coefficients, so without blobs and noise every frame lies exactly in a
//! rank-`k` subspace. Bright rectangles move on straight lines and wrap
//! around so that they always stay fully inside the frame.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::detection::{BoundingBox, BoxesByFrame};
use crate::error::{invalid, Result};
use crate::model::Frame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Rank of the background.
    pub rank: usize,
    pub blobs: usize,
    /// Inclusive range of blob side lengths in pixels.
    pub blob_size: (usize, usize),
    /// Range of blob speeds in pixels per frame.
    pub speed: (f64, f64),
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub blob_intensity: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 500,
            rank: 2,
            blobs: 3,
            blob_size: (5, 8),
            speed: (1.0, 2.0),
            noise: 0.01,
            blob_intensity: 0.95,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("frame dimensions must be positive"));
        }
        if self.rank == 0 {
            return Err(invalid("background rank must be at least 1"));
        }
        let (lo, hi) = self.blob_size;
        if lo == 0 || lo > hi {
            return Err(invalid("blob size range must be nonempty and positive"));
        }
        if self.blobs > 0 && (hi > self.height || hi > self.width) {
            return Err(invalid(format!(
                "blobs up to {hi} pixels do not fit a {}x{} frame",
                self.height, self.width
            )));
        }
        let (smin, smax) = self.speed;
        if !(smin >= 0.0 && smin <= smax && smax.is_finite()) {
            return Err(invalid("speed range must satisfy 0 <= min <= max"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("noise level must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Blob {
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    w: usize,
    h: usize,
}

impl Blob {
    fn at(&self, t: usize, height: usize, width: usize) -> BoundingBox {
        let span_x = (width - self.w + 1) as f64;
        let span_y = (height - self.h + 1) as f64;
        let x = (self.x0 + self.vx * t as f64).rem_euclid(span_x).floor() as usize;
        let y = (self.y0 + self.vy * t as f64).rem_euclid(span_y).floor() as usize;
        BoundingBox { x: x.min(width - self.w), y: y.min(height - self.h), w: self.w, h: self.h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Oscillator {
    offset: f64,
    amplitude: f64,
    period: f64,
    phase: f64,
}

impl Oscillator {
    fn at(&self, t: usize) -> f64 {
        self.offset + self.amplitude * (std::f64::consts::TAU * t as f64 / self.period + self.phase).sin()
    }
}

/// Lazily generated synthetic sequence.
#[derive(Debug, Clone)]
pub struct SynthStream {
    spec: SynthSpec,
    /// `p × k` spatial maps.
    maps: DMatrix<f64>,
    coefficients: Vec<Oscillator>,
    blobs: Vec<Blob>,
    noise_rng: ChaCha8Rng,
    next: usize,
}

fn cosine_map(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut map = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let v: f64 = terms
                .iter()
                .map(|&(c, fy, py, fx, px)| {
                    let u = std::f64::consts::PI * y as f64 / height as f64;
                    let w = std::f64::consts::PI * x as f64 / width as f64;
                    c * (fy * u + py).cos() * (fx * w + px).cos()
                })
                .sum();
            map.push(v);
        }
    }
    let peak = map.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        map.iter_mut().for_each(|v| *v /= peak);
    }
    map
}

impl SynthStream {
    pub fn new(spec: SynthSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (h, w) = (spec.height, spec.width);
        let p = h * w;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Map 0 carries the mean level, the rest are zero-centred modulations.
        let mut maps = DMatrix::zeros(p, spec.rank);
        let base = cosine_map(&mut rng, h, w);
        for (i, v) in base.iter().enumerate() {
            maps[(i, 0)] = 1.0 + 0.2 * v;
        }
        for j in 1..spec.rank {
            let m = cosine_map(&mut rng, h, w);
            maps.column_mut(j).copy_from_slice(&m);
        }
        let modulation = 0.1 / (spec.rank.max(2) - 1) as f64;
        let mut coefficients = vec![Oscillator {
            offset: 0.28,
            amplitude: 0.04,
            period: rng.random_range(150.0..300.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }];
        for _ in 1..spec.rank {
            coefficients.push(Oscillator {
                offset: 0.0,
                amplitude: modulation,
                period: rng.random_range(100.0..300.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            });
        }

        let mut blobs = Vec::with_capacity(spec.blobs);
        for _ in 0..spec.blobs {
            let bw = rng.random_range(spec.blob_size.0..=spec.blob_size.1);
            let bh = rng.random_range(spec.blob_size.0..=spec.blob_size.1);
            let speed = if spec.speed.1 > spec.speed.0 {
                rng.random_range(spec.speed.0..spec.speed.1)
            } else {
                spec.speed.0
            };
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            blobs.push(Blob {
                x0: rng.random_range(0.0..(w - bw + 1) as f64),
                y0: rng.random_range(0.0..(h - bh + 1) as f64),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                w: bw,
                h: bh,
            });
        }
        Ok(Self { spec, maps, coefficients, blobs, noise_rng: rng, next: 0 })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    /// Noise-free, blob-free background of frame `t`.
    pub fn background(&self, t: usize) -> Vec<f64> {
        let coeffs = nalgebra::DVector::from_iterator(self.spec.rank, self.coefficients.iter().map(|c| c.at(t)));
        (&self.maps * coeffs).as_slice().to_vec()
    }

    pub fn boxes(&self, t: usize) -> Vec<BoundingBox> {
        let mut boxes: Vec<BoundingBox> =
            self.blobs.iter().map(|b| b.at(t, self.spec.height, self.spec.width)).collect();
        boxes.sort_by_key(|b| (b.y, b.x));
        boxes
    }

    /// Groundtruth boxes for every frame of the sequence.
    pub fn groundtruth(&self) -> BoxesByFrame {
        (0..self.spec.frames).map(|t| (t, self.boxes(t))).collect()
    }
}

impl Iterator for SynthStream {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next >= self.spec.frames {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let (h, w) = (self.spec.height, self.spec.width);
        let mut pixels = self.background(t);
        for b in self.boxes(t) {
            for y in b.y..b.y + b.h {
                for x in b.x..b.x + b.w {
                    pixels[y * w + x] = self.spec.blob_intensity;
                }
            }
        }
        if self.spec.noise > 0.0 {
            let normal = Normal::new(0.0, self.spec.noise).expect("noise level validated");
            for v in pixels.iter_mut() {
                *v += normal.sample(&mut self.noise_rng);
            }
        }
        pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Some(Frame::new(pixels, h, w, t).expect("dimensions are consistent"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.frames - self.next;
        (left, Some(left))
    }
}

/// The frame stream together with its groundtruth boxes.
pub fn synth_sequence(spec: SynthSpec, seed: u64) -> Result<(SynthStream, BoxesByFrame)> {
    let stream = SynthStream::new(spec, seed)?;
    let gt = stream.groundtruth();
    Ok((stream, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_free_noise_free_frames_are_low_rank() {
        let spec = SynthSpec { height: 16, width: 20, frames: 40, rank: 2, blobs: 0, noise: 0.0, ..Default::default() };
        let (stream, gt) = synth_sequence(spec, 1).unwrap();
        assert!(gt.values().all(Vec::is_empty));
        let frames: Vec<Frame> = stream.collect();
        assert_eq!(frames.len(), 40);
        let stacked = DMatrix::from_fn(320, 40, |i, t| frames[t].pixels[i]);
        let sv = stacked.singular_values();
        let mut sorted: Vec<f64> = sv.iter().cloned().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert!(sorted[1] > 1e-3);
        assert!(sorted[2] <= 1e-10, "{sorted:?}");
    }

    #[test]
    fn static_blob_keeps_its_box() {
        let spec = SynthSpec { blobs: 1, speed: (0.0, 0.0), frames: 30, ..Default::default() };
        let (_, gt) = synth_sequence(spec, 2).unwrap();
        let first = gt[&0].clone();
        assert!(gt.values().all(|b| *b == first));
    }

    #[test]
    fn default_benchmark_is_sparse_and_boxes_cover_blobs() {
        let spec = SynthSpec::default();
        let (stream, gt) = synth_sequence(spec, 3).unwrap();
        let p = spec.height * spec.width;
        for (t, frame) in stream.enumerate().take(200) {
            let boxes = &gt[&t];
            let mut covered = vec![false; p];
            for b in boxes {
                assert!(b.fits(spec.height, spec.width));
                assert!(b.area() >= 1);
                for y in b.y..b.y + b.h {
                    for x in b.x..b.x + b.w {
                        covered[y * spec.width + x] = true;
                    }
                }
            }
            let fraction = covered.iter().filter(|&&c| c).count() as f64 / p as f64;
            assert!(fraction <= 0.05, "frame {t}: {fraction}");
            // blob pixels carry the blob intensity up to noise
            for (i, &c) in covered.iter().enumerate() {
                if c {
                    assert!((frame.pixels[i] - spec.blob_intensity).abs() < 0.1);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let spec = SynthSpec { frames: 5, ..Default::default() };
        let a: Vec<Frame> = SynthStream::new(spec, 9).unwrap().collect();
        let b: Vec<Frame> = SynthStream::new(spec, 9).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<Frame> = SynthStream::new(spec, 10).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn oversized_blob_rejected() {
        let spec = SynthSpec { height: 6, width: 6, blob_size: (5, 8), ..Default::default() };
        assert!(SynthStream::new(spec, 0).is_err());
    }

    #[test]
    fn intensities_stay_in_unit_range() {
        let spec = SynthSpec { frames: 20, ..Default::default() };
        for f in SynthStream::new(spec, 4).unwrap() {
            assert!(f.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
