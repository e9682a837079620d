//! Minimal mono WAV I/O (16-bit PCM only) and the waveform type the
//! backbones consume. Fixture audio is small enough that a hand-rolled
//! reader keeps the dependency surface flat.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a RIFF/WAVE file")]
    NotWav { path: String },
    #[error("{path}: unsupported WAV ({reason}); only mono 16-bit PCM is handled")]
    Unsupported { path: String, reason: String },
    #[error("waveform is empty")]
    Empty,
}

/// Mono audio samples in `[-1, 1]` plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn io_err(path: &Path, source: std::io::Error) -> AudioError {
    AudioError::Io { path: path.display().to_string(), source }
}

/// Reads a mono 16-bit PCM WAV file.
pub fn read_wav_mono(path: &Path) -> Result<Waveform, AudioError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let p = || path.display().to_string();

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWav { path: p() });
    }

    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(AudioError::Unsupported { path: p(), reason: "short fmt chunk".into() });
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || bits != 16 {
                    return Err(AudioError::Unsupported {
                        path: p(),
                        reason: format!("format tag {format}, {bits}-bit"),
                    });
                }
                if channels != 1 {
                    return Err(AudioError::Unsupported {
                        path: p(),
                        reason: format!("{channels} channels"),
                    });
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos += 8 + size + (size & 1);
    }

    let sample_rate = sample_rate.ok_or_else(|| AudioError::Unsupported {
        path: p(),
        reason: "missing fmt chunk".into(),
    })?;
    let data = data.ok_or_else(|| AudioError::Unsupported {
        path: p(),
        reason: "missing data chunk".into(),
    })?;

    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform { samples, sample_rate_hz: sample_rate })
}

/// Writes a mono 16-bit PCM WAV file. Samples are clamped to `[-1, 1]`.
pub fn write_wav_mono(path: &Path, wave: &Waveform) -> Result<(), AudioError> {
    let n = wave.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = std::env::temp_dir().join("stutterkit-audio-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tone.wav");
        let samples: Vec<f64> = (0..1600)
            .map(|i| (i as f64 * 0.05).sin() * 0.5)
            .collect();
        let wave = Waveform { samples, sample_rate_hz: 16_000 };
        write_wav_mono(&path, &wave).unwrap();
        let back = read_wav_mono(&path).unwrap();
        assert_eq!(back.sample_rate_hz, 16_000);
        assert_eq!(back.samples.len(), wave.samples.len());
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn rejects_non_wav() {
        let dir = std::env::temp_dir().join("stutterkit-audio-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("not.wav");
        std::fs::write(&path, b"hello world, definitely not audio").unwrap();
        assert!(matches!(read_wav_mono(&path), Err(AudioError::NotWav { .. })));
    }
}
