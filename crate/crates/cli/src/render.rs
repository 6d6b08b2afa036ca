//! Binary portable graymap of a series matrix: one pixel per (day, sample),
//! dark for high values, mid-gray for missing days.

use tslr_core::{DayRows, SeriesMatrix};

pub const MISSING_GRAY: u8 = 128;

pub fn gray(v: f64) -> u8 {
    (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8
}

/// `P5` image `row_len` wide and `num_rows` tall, maxval 255.
pub fn pgm(y: &SeriesMatrix) -> Vec<u8> {
    let (w, h) = (y.row_len(), y.num_rows());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + w * h, MISSING_GRAY);
    for (k, &day) in y.observed().iter().enumerate() {
        let start = header + (day - 1) * w;
        for (px, &v) in out[start..start + w].iter_mut().zip(y.row(k)) {
            *px = gray(v);
        }
    }
    out
}
