//! Multichannel RIFF/WAV reading and writing (PCM16 and IEEE float32, interleaved).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stft::MultichannelPcm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a WAV file. Integer samples are scaled to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelPcm> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = (1_i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
    };
    let frames = interleaved.len() / channels.max(1);
    let samples = Array2::from_shape_fn((channels, frames), |(c, i)| interleaved[i * channels + c]);
    MultichannelPcm::new(samples, spec.sample_rate)
}

/// Writes a WAV file. PCM16 output is clipped to full scale.
pub fn write_wav(path: impl AsRef<Path>, pcm: &MultichannelPcm, encoding: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: pcm.num_channels() as u16,
        sample_rate: pcm.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    let samples = pcm.samples();
    for i in 0..pcm.len() {
        for c in 0..pcm.num_channels() {
            let v = samples[[c, i]];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavEncoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
