use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use super::Signal;
use crate::error::{Error, Result};

const EXPECTED_RATE: u32 = 16_000;

/// Reads a mono PCM WAV file. 16-bit integer samples are divided by 32768;
/// 32-bit float samples are taken as they are and must lie in `[-1, 1]`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.to_owned(),
            message: "unsupported WAV format".into(),
        },
        other => Error::Wav {
            path: path.to_owned(),
            message: other.to_string(),
        },
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels {
            path: path.to_owned(),
            channels: spec.channels,
        });
    }
    if spec.sample_rate != EXPECTED_RATE {
        warn!(
            "{}: sample rate {} Hz differs from the expected {} Hz",
            path.display(),
            spec.sample_rate,
            EXPECTED_RATE
        );
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_owned(),
                message: format!("{bits}-bit {format:?} samples; expected 16-bit int or 32-bit float"),
            })
        }
    };
    Signal::new(samples, spec.sample_rate).map_err(|e| Error::Wav {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Writes a mono 32-bit float WAV file.
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_owned(),
            message: other.to_string(),
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &signal.samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_int16(path: &Path, channels: u16, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn reads_int16_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_int16(&path, 1, &[0, 32767, -32768]);
        let sig = load_wav(&path).unwrap();
        assert_eq!(sig.sample_rate, 16_000);
        assert_eq!(sig.samples, vec![0.0, 32767.0 / 32768.0, -1.0]);
        assert!((sig.samples[1] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn empty_data_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        write_int16(&path, 1, &[]);
        assert!(load_wav(&path).unwrap().is_empty());
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        write_int16(&path, 2, &[1, 2, 3, 4]);
        assert!(matches!(
            load_wav(&path),
            Err(Error::UnsupportedChannels { channels: 2, .. })
        ));
    }

    #[test]
    fn unsupported_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::UnsupportedEncoding { .. })));
    }

    #[test]
    fn malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.wav");
        std::fs::write(&path, b"RIFF\x04\x00\x00\x00JUNKjunkjunk").unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Wav { .. })));
        assert!(matches!(load_wav(dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let sig = Signal::new(vec![0.5, -0.25, 0.125], 8_000).unwrap();
        write_wav(&path, &sig).unwrap();
        assert_eq!(load_wav(&path).unwrap(), sig);
    }
}
