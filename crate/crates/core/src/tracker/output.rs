use std::io::Write;

use image::{Rgb, RgbImage};

use super::run::FrameOutput;
use crate::error::Result;
use crate::geometry::BBox;
use crate::synth::tensor_to_rgb;
use crate::tensor::Tensor;

pub const TRACK_HEADER: &str = "frame,x,y,w,h,score,buffer_size,updated_short,updated_long";

pub const PRED_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const GT_COLOR: Rgb<u8> = Rgb([255, 105, 180]);

/// Per-frame CSV, one row per tracked frame. Floats use Rust's shortest
/// round-trip formatting so reruns compare byte for byte.
pub fn write_track_csv<W: Write>(mut out: W, frames: &[FrameOutput]) -> Result<()> {
    writeln!(out, "{TRACK_HEADER}")?;
    for f in frames {
        let b = f.bbox;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            f.frame,
            b.x,
            b.y,
            b.w,
            b.h,
            f.score,
            f.buffer_size,
            f.updated_short as u8,
            f.updated_long as u8
        )?;
    }
    Ok(())
}

/// Predicted boxes from a track CSV, in row order.
pub fn read_track_boxes<R: std::io::BufRead>(reader: R) -> Result<Vec<BBox>> {
    use crate::error::Error;
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != TRACK_HEADER {
        return Err(Error::Parse(format!("track CSV must start with {TRACK_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .take(5)
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("track CSV row {}: {e}", i + 2)))?;
        if v.len() != 5 {
            return Err(Error::Parse(format!("track CSV row {} is short", i + 2)));
        }
        out.push(BBox::new(v[1], v[2], v[3], v[4]));
    }
    Ok(out)
}

fn draw_rect(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = b.right().round() as i64 - 1;
    let y1 = b.bottom().round() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// Frame with the prediction in green and, if given, the ground truth in pink.
pub fn overlay(frame: &Tensor, pred: &BBox, gt: Option<&BBox>) -> Result<RgbImage> {
    let mut img = tensor_to_rgb(frame)?;
    if let Some(g) = gt {
        draw_rect(&mut img, g, GT_COLOR);
    }
    draw_rect(&mut img, pred, PRED_COLOR);
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxState;

    fn out(frame: usize, b: BBox) -> FrameOutput {
        FrameOutput {
            frame,
            state: BoxState::from_box(&b),
            bbox: b,
            score: 1.25,
            buffer_size: 2,
            updated_short: true,
            updated_long: false,
            lost: false,
            men_center: None,
            score_map: None,
            candidates: Vec::new(),
        }
    }

    #[test]
    fn csv_round_trips_boxes() {
        let boxes = [BBox::new(1.5, 2.0, 10.0, 12.25), BBox::new(0.1 + 0.2, 3.0, 4.0, 5.0)];
        let frames: Vec<_> = boxes.iter().enumerate().map(|(i, b)| out(i + 2, *b)).collect();
        let mut buf = Vec::new();
        write_track_csv(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(TRACK_HEADER));
        assert!(text.contains("2,1.5,2,10,12.25,1.25,2,1,0"));
        assert_eq!(read_track_boxes(&buf[..]).unwrap(), boxes);
        assert!(read_track_boxes(&b"frame,x\n"[..]).is_err());
    }

    #[test]
    fn overlay_colors_box_edges() {
        let frame = Tensor::zeros(&[3, 20, 20]);
        let img = overlay(&frame, &BBox::new(2.0, 2.0, 5.0, 5.0), Some(&BBox::new(10.0, 10.0, 4.0, 4.0))).unwrap();
        assert_eq!(*img.get_pixel(2, 2), PRED_COLOR);
        assert_eq!(*img.get_pixel(6, 4), PRED_COLOR);
        assert_eq!(*img.get_pixel(4, 4), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(13, 13), GT_COLOR);
    }
}
