use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::generate::Sequence;
use crate::error::{Error, Result};
use crate::geometry::{read_ground_truth, write_ground_truth, BBox};
use crate::tensor::Tensor;

pub const GT_FILE: &str = "groundtruth.txt";

/// Quantises a `[3, h, w]` tensor in `[0, 1]` to 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.chw()?;
    if c != 3 {
        return Err(Error::Config(format!("expected 3 channels, got {c}")));
    }
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(t.get3(0, y, x)), q(t.get3(1, y, x)), q(t.get3(2, y, x))])
    }))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set3(c, y as usize, x as usize, p[c] as f64 / 255.0);
        }
    }
    t
}

pub fn frame_file(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("{frame:04}.png"))
}

/// Writes numbered PNG frames and the ground-truth file into `dir`.
pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in seq.frames.iter().enumerate() {
        tensor_to_rgb(f)?.save(frame_file(dir, i + 1))?;
    }
    write_ground_truth(BufWriter::new(fs::File::create(dir.join(GT_FILE))?), &seq.gt)
}

/// Reads a sequence written by [`write_sequence`]; frames are numbered from 1.
pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let gt_path = dir.join(GT_FILE);
    let gt: Vec<BBox> = read_ground_truth(BufReader::new(
        fs::File::open(&gt_path).map_err(|e| Error::Parse(format!("{}: {e}", gt_path.display())))?,
    ))?;
    let mut frames = Vec::with_capacity(gt.len());
    for i in 1..=gt.len() {
        let img = image::open(frame_file(dir, i))?.to_rgb8();
        frames.push(rgb_to_tensor(&img));
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence { name, frames, gt })
}
