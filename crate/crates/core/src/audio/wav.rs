//! WAV ingest and export. Input is 16-bit PCM (float WAV is also accepted),
//! downmixed to mono and resampled to the pipeline rate.

use std::path::Path;

use rubato::{FftFixedInOut, Resampler};

use super::{AudioClip, AudioError, SAMPLE_RATE};

/// Reads a WAV file as a mono 32 kHz clip.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
    };
    let mono: Vec<f32> = interleaved.chunks(channels).map(|c| c.iter().sum::<f32>() / channels as f32).collect();
    if mono.iter().any(|v| !v.is_finite()) {
        return Err(AudioError::NonFinite);
    }
    let mono = if spec.sample_rate == SAMPLE_RATE { mono } else { resample(&mono, spec.sample_rate, SAMPLE_RATE)? };
    AudioClip::at_pipeline_rate(mono)
}

/// Writes a clip as 16-bit mono PCM.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in clip.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Band-limited resampling; output length is `round(len * to / from)`.
pub fn resample(x: &[f32], from: u32, to: u32) -> Result<Vec<f32>, AudioError> {
    let err = |e: &dyn std::fmt::Display| AudioError::Resample(e.to_string());
    if from == 0 {
        return Err(AudioError::Resample("input sample rate is 0".into()));
    }
    let target = (x.len() as f64 * to as f64 / from as f64).round() as usize;
    let mut rs = FftFixedInOut::<f64>::new(from as usize, to as usize, 1024, 1).map_err(|e| err(&e))?;
    let delay = rs.output_delay();
    let mut out = Vec::with_capacity(target + delay + 2 * rs.output_frames_max());
    let mut pos = 0;
    while out.len() < target + delay {
        let need = rs.input_frames_next();
        let chunk: Vec<f64> = (pos..pos + need).map(|i| x.get(i).copied().unwrap_or(0.0) as f64).collect();
        pos += need;
        let res = rs.process(&[chunk], None).map_err(|e| err(&e))?;
        out.extend(res[0].iter().map(|&v| v as f32));
    }
    Ok(out[delay..delay + target].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..3200).map(|i| 0.5 * (i as f32 * 0.01).sin()).collect();
        let clip = AudioClip::at_pipeline_rate(samples.clone()).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.samples().iter().zip(&samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn stereo_44k1_is_downmixed_and_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec { channels: 2, sample_rate: 44_100, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..44_100 {
            let v = (0.4 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44_100.0).sin() * 32767.0) as i16;
            w.write_sample(v).unwrap();
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.sample_rate(), SAMPLE_RATE);
        assert_eq!(clip.len(), 32_000);
        // amplitude preserved away from the edges
        let peak = clip.samples()[8000..24000].iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.4).abs() < 0.01, "peak {peak}");
    }

    #[test]
    fn resample_identity_length() {
        let x = vec![0.1f32; 1000];
        assert_eq!(resample(&x, 16_000, 32_000).unwrap().len(), 2000);
    }
}
