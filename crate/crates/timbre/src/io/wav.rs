use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use timbre_core::AudioBuffer;

use crate::error::{Error, Result};

/// Read PCM (8/16/24/32-bit) or float32 WAV; channels are averaged.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
        (fmt, bits) => return Err(Error::format(path, format!("unsupported sample format {fmt:?}/{bits}"))),
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate as f64).map_err(|e| Error::format(path, e.to_string()))
}

/// Mono 16-bit PCM; samples are clipped to [-1, 1].
pub fn write_wav_pcm16(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate.round() as u32,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Mono float32, unclipped.
pub fn write_wav_f32(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        w.write_sample(s as f32).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
