use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::SequenceSpec;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

const GRID: usize = 5;

/// Frames and per-frame ground truth of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    /// `[3, height, width]` images with values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub gt: Vec<BBox>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Blocky colour texture sampled by normalised coordinates.
#[derive(Debug, Clone)]
struct Texture {
    cells: Vec<[f64; 3]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let cells = (0..GRID * GRID)
            .map(|_| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)])
            .collect();
        Self { cells }
    }

    /// Same palette, cells shuffled: looks alike at coarse scale only.
    fn shuffled(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut cells = self.cells.clone();
        for i in (1..cells.len()).rev() {
            cells.swap(i, rng.gen_range(0..=i));
        }
        Self { cells }
    }

    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let gx = ((u * GRID as f64) as usize).min(GRID - 1);
        let gy = ((v * GRID as f64) as usize).min(GRID - 1);
        self.cells[gy * GRID + gx]
    }
}

struct Background {
    // per channel: (amplitude, fx, fy, phase) gratings
    gratings: Vec<[(f64, f64, f64, f64); 3]>,
}

impl Background {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let gratings = (0..3)
            .map(|_| {
                let mut g = [(0.0, 0.0, 0.0, 0.0); 3];
                for e in &mut g {
                    *e = (
                        rng.gen_range(0.05..0.12),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    );
                }
                g
            })
            .collect();
        Self { gratings }
    }

    fn render(&self, w: usize, h: usize) -> Tensor {
        let mut t = Tensor::zeros(&[3, h, w]);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                    let mut val = 0.5;
                    for &(a, fx, fy, ph) in &self.gratings[c] {
                        val += a * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin();
                    }
                    t.set3(c, y, x, val);
                }
            }
        }
        t
    }
}

/// Bounded AR(1) random walk that reflects off the image border.
struct Walker {
    pos: [f64; 2],
    vel: [f64; 2],
}

impl Walker {
    fn step(&mut self, sigma: f64, lo: [f64; 2], hi: [f64; 2], rng: &mut ChaCha8Rng) {
        for d in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            self.vel[d] = 0.7 * self.vel[d] + sigma * z;
            self.pos[d] += self.vel[d];
            if self.pos[d] < lo[d] {
                self.pos[d] = (2.0 * lo[d] - self.pos[d]).min(hi[d]);
                self.vel[d] = -self.vel[d];
            } else if self.pos[d] > hi[d] {
                self.pos[d] = (2.0 * hi[d] - self.pos[d]).max(lo[d]);
                self.vel[d] = -self.vel[d];
            }
        }
    }
}

fn paint(frame: &mut Tensor, b: &BBox, tex: &Texture, gain: f64, hide_frac: f64) {
    let (_, h, w) = frame.chw().expect("frames are CHW");
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = (b.right().ceil().max(0.0) as usize).min(w);
    let y1 = (b.bottom().ceil().max(0.0) as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if px < b.x || px >= b.right() || py < b.y || py >= b.bottom() {
                continue;
            }
            let u = (px - b.x) / b.w;
            if u < hide_frac {
                continue;
            }
            let col = tex.at(u, (py - b.y) / b.h);
            for (c, v) in col.iter().enumerate() {
                frame.set3(c, y, x, v * gain);
            }
        }
    }
}

fn paint_flat(frame: &mut Tensor, b: &BBox, col: [f64; 3]) {
    let (_, h, w) = frame.chw().expect("frames are CHW");
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if px >= b.x && px < b.right() && py >= b.y && py < b.bottom() {
                for (c, v) in col.iter().enumerate() {
                    frame.set3(c, y, x, *v);
                }
            }
        }
    }
}

/// Renders `spec` deterministically from `seed`.
///
/// The target texture depends only on `spec.texture_seed`; motion, background,
/// distractors and noise depend on `seed`.
pub fn generate_sequence(spec: &SequenceSpec, seed: u64) -> Result<Sequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tex_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let target_tex = Texture::random(&mut tex_rng);
    let background = Background::random(&mut rng).render(spec.width, spec.height);
    let (iw, ih) = (spec.width as f64, spec.height as f64);
    let m = &spec.motion;

    let start = spec.start.unwrap_or([
        iw / 2.0 + rng.gen_range(-0.1..0.1) * iw,
        ih / 2.0 + rng.gen_range(-0.1..0.1) * ih,
    ]);
    let mut target = Walker { pos: start, vel: [0.0, 0.0] };
    let mut distractors: Vec<(Walker, Texture)> = (0..spec.distractors)
        .map(|_| {
            let pos = [
                rng.gen_range(spec.target_w..iw - spec.target_w),
                rng.gen_range(spec.target_h..ih - spec.target_h),
            ];
            (Walker { pos, vel: [0.0, 0.0] }, target_tex.shuffled(&mut rng))
        })
        .collect();
    let occluder = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];

    let mut frames = Vec::with_capacity(spec.length);
    let mut gt = Vec::with_capacity(spec.length);
    for t in 1..=spec.length {
        let grow = (1.0 + m.scale_drift).powi(t as i32 - 1);
        let (tw, th) = (spec.target_w * grow, spec.target_h * grow);
        let lo = [tw / 2.0, th / 2.0];
        let hi = [iw - tw / 2.0, ih - th / 2.0];
        if t > 1 {
            match m.jumps.iter().find(|j| j.frame == t) {
                Some(j) => {
                    target.pos[0] += j.dx;
                    target.pos[1] += j.dy;
                }
                None => target.step(m.walk_sigma, lo, hi, &mut rng),
            }
            for (d, _) in &mut distractors {
                d.step(m.walk_sigma.max(1.0), [spec.target_w / 2.0; 2], [iw - spec.target_w / 2.0, ih - spec.target_h / 2.0], &mut rng);
            }
        }
        let b = BBox::from_center(target.pos[0], target.pos[1], tw, th);
        if b.right() <= 0.0 || b.bottom() <= 0.0 || b.x >= iw || b.y >= ih {
            return Err(Error::Spec(format!("target leaves the image at frame {t}: {b}")));
        }

        let mut frame = background.clone();
        for (d, tex) in &distractors {
            let db = BBox::from_center(d.pos[0], d.pos[1], spec.target_w, spec.target_h);
            paint(&mut frame, &db, tex, 1.0, 0.0);
        }
        let gain = (1.0 + m.illumination_ramp * (t - 1) as f64).max(0.05);
        paint(&mut frame, &b, &target_tex, gain, 0.0);
        if spec.occluded(t) {
            let cov = m.occlusion.map(|o| o.coverage).unwrap_or(0.0);
            let ob = BBox::new(b.x - 1.0, b.y - 1.0, cov * b.w + 1.0, b.h + 2.0);
            if cov > 0.0 {
                paint_flat(&mut frame, &ob, occluder);
            }
        }
        if spec.noise > 0.0 {
            for v in frame.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += spec.noise * z;
            }
        }
        for v in frame.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(frame);
        gt.push(b);
    }
    Ok(Sequence {
        name: format!("seq{seed}"),
        frames,
        gt,
    })
}
