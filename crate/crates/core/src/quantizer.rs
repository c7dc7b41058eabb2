//! Single-bit delta modulation of representation frames.
//!
//! Each feature keeps a running reconstruction `r`. A frame value `x` emits
//! bit 1 when `x - r >= 0` (ties go up) and moves `r` up by one step,
//! otherwise bit 0 and one step down. All arithmetic is `f32` so encoder and
//! decoder reconstructions agree bit for bit.

use crate::encoder::RepresentationSequence;
use crate::error::{config_err, input_err, CodecError, Result};

/// Smallest step calibration will return.
pub const STEP_FLOOR: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerSpec {
    pub step_short: f32,
    pub step_long: f32,
    pub init_value: f32,
}

impl QuantizerSpec {
    pub fn new(step_short: f32, step_long: f32) -> Result<Self> {
        let spec = QuantizerSpec { step_short, step_long, init_value: 0.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_step(self.step_short)?;
        check_step(self.step_long)?;
        if !self.init_value.is_finite() {
            return Err(config_err("init value must be finite"));
        }
        Ok(())
    }
}

fn check_step(step: f32) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(config_err(format!("quantizer step must be positive and finite, got {step}")))
    }
}

/// Running per-feature reconstruction shared by the encoder and decoder side.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaTracker {
    step: f32,
    recon: Vec<f32>,
}

impl DeltaTracker {
    pub fn new(dim: usize, step: f32, init: f32) -> Result<Self> {
        check_step(step)?;
        Ok(DeltaTracker { step, recon: vec![init; dim] })
    }

    pub fn dim(&self) -> usize {
        self.recon.len()
    }

    /// Quantize one frame; appends its bits and returns the reconstruction.
    pub fn encode_frame(&mut self, frame: &[f32], bits: &mut Vec<bool>) -> &[f32] {
        debug_assert_eq!(frame.len(), self.recon.len());
        for (r, &x) in self.recon.iter_mut().zip(frame) {
            let up = x - *r >= 0.0;
            bits.push(up);
            *r = if up { *r + self.step } else { *r - self.step };
        }
        &self.recon
    }

    pub fn decode_frame(&mut self, bits: &[bool]) -> &[f32] {
        debug_assert_eq!(bits.len(), self.recon.len());
        for (r, &up) in self.recon.iter_mut().zip(bits) {
            *r = if up { *r + self.step } else { *r - self.step };
        }
        &self.recon
    }
}

/// Bits (frame-major, one per feature) and the tracked reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaCoded {
    pub bits: Vec<bool>,
    pub recon: Vec<f32>,
}

/// Encode frame-major `[frames, dim]` values.
pub fn delta_encode(frames: &[f32], dim: usize, step: f32, init: f32) -> Result<DeltaCoded> {
    check_step(step)?;
    if dim == 0 || !frames.len().is_multiple_of(dim) {
        return Err(input_err(format!("{} values do not form {dim}-dim frames", frames.len())));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(input_err("non-finite feature value"));
    }
    let mut tr = DeltaTracker::new(dim, step, init)?;
    let mut bits = Vec::with_capacity(frames.len());
    let mut recon = Vec::with_capacity(frames.len());
    for f in frames.chunks(dim) {
        recon.extend_from_slice(tr.encode_frame(f, &mut bits));
    }
    Ok(DeltaCoded { bits, recon })
}

pub fn delta_decode(bits: &[bool], dim: usize, step: f32, init: f32) -> Result<Vec<f32>> {
    check_step(step)?;
    if dim == 0 || !bits.len().is_multiple_of(dim) {
        return Err(CodecError::Stream {
            offset: bits.len() / 8,
            reason: format!("{} bits do not form {dim}-bit frames", bits.len()),
        });
    }
    let mut tr = DeltaTracker::new(dim, step, init)?;
    let mut out = Vec::with_capacity(bits.len());
    for f in bits.chunks(dim) {
        out.extend_from_slice(tr.decode_frame(f));
    }
    Ok(out)
}

/// Quantize a whole sequence from `init`, returning bits and reconstruction.
pub fn quantize_sequence(seq: &RepresentationSequence, step: f32, init: f32) -> Result<(Vec<bool>, RepresentationSequence)> {
    let coded = delta_encode(&seq.data, seq.dim, step, init)?;
    let recon = RepresentationSequence { data: coded.recon, ..seq.clone() };
    Ok((coded.bits, recon))
}

/// Median of `|x_t - x_{t-1}|` over every feature and consecutive frame
/// pair of every sequence; the mean of the two middle values for even
/// counts. `None` when there are no pairs.
pub fn median_abs_diff(seqs: &[RepresentationSequence]) -> Option<f32> {
    let mut diffs: Vec<f32> = Vec::new();
    for s in seqs {
        for t in 1..s.len() {
            let (prev, cur) = (s.frame(t - 1), s.frame(t));
            diffs.extend(cur.iter().zip(prev).map(|(a, b)| (a - b).abs()));
        }
    }
    if diffs.is_empty() {
        return None;
    }
    let n = diffs.len();
    let (_, hi, _) = diffs.select_nth_unstable_by(n / 2, f32::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        return Some(hi);
    }
    let lo = diffs[..n / 2].iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Some((lo + hi) / 2.0)
}

/// Step per level = median absolute frame difference times `multiplier`,
/// floored at [`STEP_FLOOR`].
pub fn calibrate_steps(
    short: &[RepresentationSequence],
    long: &[RepresentationSequence],
    multiplier: f32,
) -> Result<QuantizerSpec> {
    let pick = |seqs: &[RepresentationSequence], name: &str| -> Result<f32> {
        let m = median_abs_diff(seqs)
            .ok_or_else(|| input_err(format!("no consecutive {name} frames to calibrate on")))?;
        Ok((m * multiplier).max(STEP_FLOOR))
    };
    QuantizerSpec::new(pick(short, "short-term")?, pick(long, "long-term")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Level;
    use proptest::prelude::*;

    fn seq(data: Vec<f32>, dim: usize) -> RepresentationSequence {
        RepresentationSequence { level: Level::ShortTerm, dim, hop: 160, start_sample: 159, data }
    }

    #[test]
    fn hand_traced_example() {
        let c = delta_encode(&[0.6, 0.2, 1.1], 1, 0.5, 0.0).unwrap();
        assert_eq!(c.bits, vec![true, false, true]);
        assert_eq!(c.recon, vec![0.5, 0.0, 0.5]);
        assert_eq!(delta_decode(&[true, false, true], 1, 0.5, 0.0).unwrap(), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn constant_input_oscillates() {
        let c = delta_encode(&[0.0; 4], 1, 0.5, 0.0).unwrap();
        assert_eq!(c.bits, vec![true, false, true, false]);
        assert_eq!(c.recon, vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(delta_encode(&[1.0], 1, 0.0, 0.0), Err(CodecError::Config(_))));
        assert!(matches!(delta_encode(&[1.0], 1, -1.0, 0.0), Err(CodecError::Config(_))));
        assert!(matches!(delta_decode(&[true; 3], 2, 0.5, 0.0), Err(CodecError::Stream { .. })));
        assert!(delta_decode(&[], 4, 0.5, 0.0).unwrap().is_empty());
    }

    #[test]
    fn calibration_examples() {
        let constant = seq(vec![0.3; 40], 4);
        let spec = calibrate_steps(std::slice::from_ref(&constant), std::slice::from_ref(&constant), 1.0).unwrap();
        assert_eq!(spec.step_short, STEP_FLOOR);
        let zigzag: Vec<f32> = (0..50).map(|t| if t % 2 == 0 { 0.0 } else { 0.2 }).collect();
        let z = seq(zigzag, 1);
        let spec = calibrate_steps(std::slice::from_ref(&z), std::slice::from_ref(&z), 1.0).unwrap();
        assert_eq!(spec.step_long, 0.2);
        let spec = calibrate_steps(std::slice::from_ref(&z), std::slice::from_ref(&z), 2.0).unwrap();
        assert_eq!(spec.step_short, 0.4);
        assert!(calibrate_steps(&[], std::slice::from_ref(&z), 1.0).is_err());
        assert!(calibrate_steps(&[seq(vec![1.0], 1)], std::slice::from_ref(&z), 1.0).is_err());
    }

    fn sorted_median(mut v: Vec<f32>) -> f32 {
        v.sort_by(f32::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }

    proptest! {
        #[test]
        fn decode_equals_encoder_recon(xs in prop::collection::vec(-5.0f32..5.0, 0..200), step in 0.001f32..2.0, init in -1.0f32..1.0) {
            let c = delta_encode(&xs, 1, step, init).unwrap();
            prop_assert_eq!(delta_decode(&c.bits, 1, step, init).unwrap(), c.recon);
        }

        // Dyadic values and steps make every update exact, so the bound holds
        // with no rounding slack.
        #[test]
        fn tracking_bound_exact_grid(steps_q in prop::collection::vec(-8i32..=8, 1..300), step_q in 1i32..64, init_q in -8i32..=8) {
            let step = step_q as f32 / 64.0;
            let init = 0.0f32;
            let mut x = vec![init + (init_q as f32 / 8.0) * step];
            for s in &steps_q[1..] {
                let prev = *x.last().unwrap();
                x.push(prev + (*s as f32 / 8.0) * step);
            }
            let c = delta_encode(&x, 1, step, init).unwrap();
            for (xv, rv) in x.iter().zip(&c.recon) {
                prop_assert!((xv - rv).abs() <= step, "x {xv} r {rv} step {step}");
            }
        }

        #[test]
        fn median_matches_sort(vals in prop::collection::vec(-3.0f32..3.0, 2..120)) {
            let s = seq(vals.clone(), 1);
            let diffs: Vec<f32> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            prop_assert_eq!(median_abs_diff(&[s]).unwrap(), sorted_median(diffs));
        }
    }
}
