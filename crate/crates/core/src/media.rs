//! PNG and WAV persistence.
//!
//! Images are stored as 16-bit RGB, audio as mono 32-bit float. [`quantize_image`]
//! and [`quantize_audio`] apply the same rounding in memory so measurements
//! taken before saving match what a reload sees.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::raster::Image;

fn media_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Media {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn quantize_image(img: &Image) -> Result<Image> {
    img.map(|_, _, _, p| (p * 65535.0).round() / 65535.0)
}

pub fn quantize_audio(clip: &AudioClip) -> Result<AudioClip> {
    let samples = clip.effective_samples().iter().map(|&s| s as f32 as f64).collect();
    AudioClip::new(samples, clip.sample_rate())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = (img.height(), img.width());
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| {
            (img.get(y as usize, x as usize, c) * 65535.0).round() as u16
        }))
    });
    buf.save(path).map_err(|e| media_err(path, e))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| media_err(path, e))?;
    let rgb = dynimg.into_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Image::new(h, w, pixels).map_err(|e| media_err(path, e))
}

/// Writes the gain-applied samples; a reload has gain 1.
pub fn save_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| media_err(path, e))?;
    for s in clip.effective_samples() {
        writer.write_sample(s as f32).map_err(|e| media_err(path, e))?;
    }
    writer.finalize().map_err(|e| media_err(path, e))
}

/// Reads mono or multi-channel WAV (channels averaged), int or float.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| media_err(path, e))?;
    let spec = reader.spec();
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| media_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| media_err(path, e))?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let mono = raw
        .chunks(ch)
        .map(|f| (f.iter().sum::<f64>() / ch as f64).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(mono, spec.sample_rate).map_err(|e| media_err(path, e))
}
