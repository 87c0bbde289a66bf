//! Forecast quality metrics.
//!
//! Forecasts and ground truth are `[T, J, 3]` tensors in millimetres.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath::{round, sqrt};
use crate::tensor::Tensor;

/// Horizons usually reported for 25 fps recordings, in milliseconds.
pub const STANDARD_HORIZONS_MS: [f64; 6] = [80.0, 160.0, 320.0, 400.0, 1000.0, 2000.0];

fn forecast_dims(t: &Tensor) -> Result<(usize, usize)> {
    let shape = t.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [T, J, 3], got {shape:?}")));
    }
    if shape[0] == 0 || shape[1] == 0 {
        return Err(Error::InvalidArgument("empty forecast".into()));
    }
    Ok((shape[0], shape[1]))
}

fn matched_dims(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize)> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "forecast shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    forecast_dims(pred)
}

/// Mean Euclidean joint error over every frame and joint, in millimetres.
pub fn mpjpe(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let (t, j) = matched_dims(pred, truth)?;
    let mut total = 0.0;
    for i in 0..t * j {
        let mut sq = 0.0;
        for k in 0..3 {
            let d = pred.data()[3 * i + k] - truth.data()[3 * i + k];
            sq += d * d;
        }
        total += sqrt(sq);
    }
    Ok(total / (t * j) as f64)
}

/// Mean joint error of one frame (0-based), in millimetres.
pub fn mpjpe_frame(pred: &Tensor, truth: &Tensor, frame: usize) -> Result<f64> {
    let (t, j) = matched_dims(pred, truth)?;
    if frame >= t {
        return Err(Error::InvalidArgument(format!("frame {frame} out of range 0..{t}")));
    }
    let mut total = 0.0;
    for joint in 0..j {
        let base = (frame * j + joint) * 3;
        let mut sq = 0.0;
        for k in 0..3 {
            let d = pred.data()[base + k] - truth.data()[base + k];
            sq += d * d;
        }
        total += sqrt(sq);
    }
    Ok(total / j as f64)
}

/// One row of a per-horizon error table.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEntry {
    pub ms: f64,
    /// 1-based frame index that the horizon rounds to.
    pub frame: usize,
    /// Single-frame mean joint error at that frame, in millimetres.
    pub value_mm: f64,
}

/// Per-horizon single-frame errors. Each horizon is rounded to the nearest
/// frame; horizons that land outside the forecast are an error.
pub fn horizon_table(
    pred: &Tensor,
    truth: &Tensor,
    fps: f64,
    horizons_ms: &[f64],
) -> Result<Vec<HorizonEntry>> {
    let (t, _) = matched_dims(pred, truth)?;
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
    }
    let mut out = Vec::with_capacity(horizons_ms.len());
    for &ms in horizons_ms {
        if !(ms > 0.0) || !ms.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {ms} ms")));
        }
        let frame = round(ms * fps / 1000.0) as usize;
        if frame < 1 || frame > t {
            return Err(Error::InvalidArgument(format!(
                "horizon {ms} ms rounds to frame {frame}, outside 1..={t}"
            )));
        }
        out.push(HorizonEntry { ms, frame, value_mm: mpjpe_frame(pred, truth, frame - 1)? });
    }
    Ok(out)
}

/// Average pairwise distance across a set of forecasts: for every unordered
/// pair of samples, the per-frame Euclidean distance between the flattened
/// pose vectors, averaged over frames and pairs. Zero iff all samples agree.
pub fn apd(samples: &[Tensor]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: samples.len() });
    }
    let (t, j) = forecast_dims(&samples[0])?;
    for s in &samples[1..] {
        if s.shape() != samples[0].shape() {
            return Err(Error::ShapeMismatch(format!(
                "sample shapes differ: {:?} vs {:?}",
                s.shape(),
                samples[0].shape()
            )));
        }
    }
    let s = samples.len();
    let mut total = 0.0;
    for a in 0..s {
        for b in a + 1..s {
            let mut per_window = 0.0;
            for frame in 0..t {
                let mut sq = 0.0;
                let base = frame * j * 3;
                for k in 0..j * 3 {
                    let d = samples[a].data()[base + k] - samples[b].data()[base + k];
                    sq += d * d;
                }
                per_window += sqrt(sq);
            }
            total += per_window / t as f64;
        }
    }
    Ok(2.0 * total / (s * (s - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn mpjpe_of_identical_forecasts_is_zero() {
        let mut rng = RngStream::new(1, 0);
        let a = Tensor::uniform(&[5, 4, 3], -10.0, 10.0, &mut rng);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mpjpe_of_a_single_345_offset_is_five() {
        let truth = Tensor::zeros(&[1, 1, 3]);
        let pred = Tensor::from_vec(&[1, 1, 3], vec![3.0, 0.0, 4.0]).unwrap();
        assert!((mpjpe(&pred, &truth).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn mpjpe_matches_longhand_average() {
        let mut rng = RngStream::new(2, 0);
        let pred = Tensor::uniform(&[3, 5, 3], -4.0, 4.0, &mut rng);
        let truth = Tensor::uniform(&[3, 5, 3], -4.0, 4.0, &mut rng);
        let got = mpjpe(&pred, &truth).unwrap();
        let mut want = 0.0;
        for i in 0..15 {
            let dx = pred.data()[3 * i] - truth.data()[3 * i];
            let dy = pred.data()[3 * i + 1] - truth.data()[3 * i + 1];
            let dz = pred.data()[3 * i + 2] - truth.data()[3 * i + 2];
            want += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        want /= 15.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn mpjpe_is_translation_invariant() {
        let mut rng = RngStream::new(3, 0);
        let pred = Tensor::uniform(&[4, 2, 3], -4.0, 4.0, &mut rng);
        let truth = Tensor::uniform(&[4, 2, 3], -4.0, 4.0, &mut rng);
        let shift = |t: &Tensor| t.map(|v| v + 123.0);
        let a = mpjpe(&pred, &truth).unwrap();
        let b = mpjpe(&shift(&pred), &shift(&truth)).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn frame_errors_average_to_the_full_metric() {
        let mut rng = RngStream::new(4, 0);
        let pred = Tensor::uniform(&[6, 3, 3], -4.0, 4.0, &mut rng);
        let truth = Tensor::uniform(&[6, 3, 3], -4.0, 4.0, &mut rng);
        let full = mpjpe(&pred, &truth).unwrap();
        let mut acc = 0.0;
        for f in 0..6 {
            acc += mpjpe_frame(&pred, &truth, f).unwrap();
        }
        assert!((acc / 6.0 - full).abs() < 1e-12);
    }

    #[test]
    fn standard_horizons_map_to_expected_frames_at_25_fps() {
        let pred = Tensor::zeros(&[50, 1, 3]);
        let truth = Tensor::zeros(&[50, 1, 3]);
        let table = horizon_table(&pred, &truth, 25.0, &STANDARD_HORIZONS_MS).unwrap();
        let frames: Vec<usize> = table.iter().map(|e| e.frame).collect();
        assert_eq!(frames, vec![2, 4, 8, 10, 25, 50]);
    }

    #[test]
    fn horizon_beyond_the_forecast_is_rejected() {
        let pred = Tensor::zeros(&[10, 1, 3]);
        let truth = Tensor::zeros(&[10, 1, 3]);
        assert!(horizon_table(&pred, &truth, 25.0, &[1000.0]).is_err());
        assert!(horizon_table(&pred, &truth, 25.0, &[400.0]).is_ok());
    }

    #[test]
    fn horizon_rows_match_single_frame_errors() {
        let mut rng = RngStream::new(5, 0);
        let pred = Tensor::uniform(&[25, 2, 3], -4.0, 4.0, &mut rng);
        let truth = Tensor::uniform(&[25, 2, 3], -4.0, 4.0, &mut rng);
        let table = horizon_table(&pred, &truth, 25.0, &[80.0, 400.0]).unwrap();
        assert_eq!(table[0].frame, 2);
        let direct = mpjpe_frame(&pred, &truth, 1).unwrap();
        assert!((table[0].value_mm - direct).abs() < 1e-15);
        assert_eq!(table[1].frame, 10);
    }

    #[test]
    fn apd_of_identical_samples_is_zero() {
        let a = Tensor::filled(&[3, 2, 3], 7.0);
        let samples = vec![a.clone(), a.clone(), a];
        assert_eq!(apd(&samples).unwrap(), 0.0);
    }

    #[test]
    fn apd_of_two_samples_matches_the_definition() {
        let a = Tensor::zeros(&[2, 1, 3]);
        let mut b = Tensor::zeros(&[2, 1, 3]);
        // Frame 0 offset (3, 4, 0) -> 5; frame 1 offset (0, 0, 2) -> 2.
        b.data_mut()[0] = 3.0;
        b.data_mut()[1] = 4.0;
        b.data_mut()[5] = 2.0;
        let got = apd(&[a, b]).unwrap();
        assert!((got - 3.5).abs() < 1e-15);
    }

    #[test]
    fn apd_matches_a_longhand_triple_loop() {
        let mut rng = RngStream::new(6, 0);
        let samples: Vec<Tensor> =
            (0..4).map(|_| Tensor::uniform(&[3, 2, 3], -2.0, 2.0, &mut rng)).collect();
        let got = apd(&samples).unwrap();
        let (s, t, width) = (4usize, 3usize, 6usize);
        let mut want = 0.0;
        for a in 0..s {
            for b in 0..s {
                if a == b {
                    continue;
                }
                let mut mean_t = 0.0;
                for frame in 0..t {
                    let mut sq = 0.0;
                    for k in 0..width {
                        let d = samples[a].data()[frame * width + k]
                            - samples[b].data()[frame * width + k];
                        sq += d * d;
                    }
                    mean_t += sq.sqrt();
                }
                want += mean_t / t as f64;
            }
        }
        want /= (s * (s - 1)) as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn apd_needs_two_samples() {
        let a = Tensor::zeros(&[1, 1, 3]);
        assert!(matches!(apd(&[a]), Err(Error::TooFewSamples { needed: 2, got: 1 })));
    }
}
