//! Grayscale PNG rendering of log-spectrograms.

use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tf::LogSpectrogram;

/// 8-bit pixels, one per bin and frame, row-major from the top row.
///
/// The highest bin is the top row and bin 0 the bottom row. Values are
/// clamped to `[0, 1]` and mapped linearly onto `0..=255`.
pub fn spectrogram_pixels(s: &LogSpectrogram) -> Vec<u8> {
    let mut px = Vec::with_capacity(s.bins * s.frames);
    for row in 0..s.bins {
        let f = s.bins - 1 - row;
        px.extend((0..s.frames).map(|t| (s.get(f, t).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    px
}

pub fn write_spectrogram_png(s: &LogSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), s.frames as u32, s.bins as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&spectrogram_pixels(s))?;
    writer.finish()?;
    Ok(())
}
