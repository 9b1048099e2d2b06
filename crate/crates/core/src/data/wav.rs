//! RIFF/WAVE reader and writer for 16-bit PCM mono audio at 16 kHz.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::features::{AudioSignal, SAMPLE_RATE};

const SPEC: WavSpec = WavSpec {
    channels: 1,
    sample_rate: SAMPLE_RATE,
    bits_per_sample: 16,
    sample_format: SampleFormat::Int,
};

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn format_err(field: &'static str, found: impl ToString, expected: impl ToString) -> Error {
    Error::WavFormat {
        field,
        found: found.to_string(),
        expected: expected.to_string(),
    }
}

/// Decodes WAV bytes; `path` is only used in error messages.
pub fn decode_wav(bytes: &[u8], path: &Path) -> Result<AudioSignal> {
    if bytes.len() < 12 {
        return Err(corrupt(path, "file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(format_err("container", String::from_utf8_lossy(&bytes[0..4]), "RIFF"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(format_err("form type", String::from_utf8_lossy(&bytes[8..12]), "WAVE"));
    }
    let reader = WavReader::new(Cursor::new(bytes)).map_err(|e| match e {
        hound::Error::Unsupported => format_err("audio format", "unsupported", "1 (PCM)"),
        e => corrupt(path, e),
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(format_err("audio format", "float", "1 (PCM)"));
    }
    if spec.channels != SPEC.channels {
        return Err(format_err("channels", spec.channels, SPEC.channels));
    }
    if spec.sample_rate != SPEC.sample_rate {
        return Err(format_err("sample rate", spec.sample_rate, SPEC.sample_rate));
    }
    if spec.bits_per_sample != SPEC.bits_per_sample {
        return Err(format_err("bits per sample", spec.bits_per_sample, SPEC.bits_per_sample));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| corrupt(path, e))?;
    AudioSignal::new(samples, SAMPLE_RATE)
}

pub fn load_wav(path: &Path) -> Result<AudioSignal> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, path)
}

/// Nearest 16-bit code of a sample, saturating outside `[-1, 1)`.
pub fn quantize_sample(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(samples: &[f64]) -> Vec<u8> {
    let mut out = Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    {
        let mut w = WavWriter::new(&mut out, SPEC).expect("in-memory writer");
        let mut w16 = w.get_i16_writer(samples.len() as u32);
        for &s in samples {
            w16.write_sample(quantize_sample(s));
        }
        w16.flush().expect("in-memory writer");
        w.finalize().expect("in-memory writer");
    }
    out.into_inner()
}

pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    std::fs::write(path, encode_wav(samples)).map_err(|e| Error::io(path, e))
}
