//! Packed wire format.
//!
//! ```text
//! header (24 bytes, little-endian):
//!   0  magic "CCB1"
//!   4  sample_rate       u32
//!   8  rep_dim           u32
//!   12 step_short        f32
//!   16 step_long         f32
//!   20 layout_version    u32
//! payload: superframes of 9 * rep_dim bits (576 for rep_dim 64):
//!   rep_dim long-term bits, then 8 short-term frames of rep_dim bits,
//!   most significant bit first within each byte.
//! ```
//!
//! A trailing partial superframe is never written. Bits are delta-modulation
//! decisions; a set bit means "step up", and ties at encode time step up.

use crate::config::CodecConfig;
use crate::error::{CodecError, Result};
use crate::quantizer::QuantizerSpec;

pub const MAGIC: [u8; 4] = *b"CCB1";
pub const HEADER_LEN: usize = 24;
pub const LAYOUT_VERSION: u32 = 1;
/// Largest `rep_dim` a reader accepts.
pub const MAX_REP_DIM: u32 = 4096;
/// Short-term frames per superframe.
pub const SHORT_PER_SUPERFRAME: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub rep_dim: u32,
    pub step_short: f32,
    pub step_long: f32,
    pub layout_version: u32,
}

impl StreamHeader {
    pub fn superframe_bits(&self) -> usize {
        (SHORT_PER_SUPERFRAME + 1) * self.rep_dim as usize
    }

    pub fn superframe_bytes(&self) -> usize {
        self.superframe_bits() / 8
    }

    pub fn quantizer(&self) -> QuantizerSpec {
        QuantizerSpec { step_short: self.step_short, step_long: self.step_long, init_value: 0.0 }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&self.rep_dim.to_le_bytes());
        out.extend_from_slice(&self.step_short.to_le_bytes());
        out.extend_from_slice(&self.step_long.to_le_bytes());
        out.extend_from_slice(&self.layout_version.to_le_bytes());
    }
}

/// Unpacked bit sequences, each frame-major with `rep_dim` bits per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBits {
    pub header: StreamHeader,
    pub bits_short: Vec<bool>,
    pub bits_long: Vec<bool>,
}

impl StreamBits {
    pub fn superframes(&self) -> usize {
        self.bits_long.len() / self.header.rep_dim as usize
    }
}

/// Payload bits per second: `rep_dim * (short rate + long rate) * bits`.
pub fn payload_bitrate(cfg: &CodecConfig) -> f64 {
    let sr = cfg.sample_rate as f64;
    let rate_s = sr / cfg.lower_hop() as f64;
    let rate_l = sr / cfg.upper_hop() as f64;
    cfg.rep_dim as f64 * (rate_s + rate_l) * cfg.quant_bits_per_feature as f64
}

fn framing(msg: String) -> CodecError {
    CodecError::Framing(msg)
}

/// Pack complete superframes. `bits_long` must hold `M` frames and
/// `bits_short` between `8M` and `8M + 7` frames; the extra short frames
/// (a partial superframe) are dropped.
pub fn pack_stream(bits_short: &[bool], bits_long: &[bool], spec: &QuantizerSpec, cfg: &CodecConfig) -> Result<Vec<u8>> {
    spec.validate()?;
    let dim = cfg.rep_dim;
    if dim == 0 || !dim.is_multiple_of(8) {
        return Err(framing(format!("rep_dim {dim} is not a positive multiple of 8")));
    }
    if !bits_short.len().is_multiple_of(dim) || !bits_long.len().is_multiple_of(dim) {
        return Err(framing(format!(
            "bit counts {}/{} are not whole {dim}-bit frames",
            bits_short.len(),
            bits_long.len()
        )));
    }
    let (n_s, n_l) = (bits_short.len() / dim, bits_long.len() / dim);
    if n_s / SHORT_PER_SUPERFRAME != n_l {
        return Err(framing(format!("{n_s} short-term frames cannot pair with {n_l} long-term frames")));
    }
    let header = StreamHeader {
        sample_rate: cfg.sample_rate,
        rep_dim: dim as u32,
        step_short: spec.step_short,
        step_long: spec.step_long,
        layout_version: LAYOUT_VERSION,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + n_l * header.superframe_bytes());
    header.write(&mut out);
    let mut acc = 0u8;
    let mut nbits = 0;
    let mut push = |b: bool, out: &mut Vec<u8>| {
        acc = (acc << 1) | b as u8;
        nbits += 1;
        if nbits == 8 {
            out.push(acc);
            acc = 0;
            nbits = 0;
        }
    };
    let sf_short = SHORT_PER_SUPERFRAME * dim;
    for m in 0..n_l {
        for &b in &bits_long[m * dim..(m + 1) * dim] {
            push(b, &mut out);
        }
        for &b in &bits_short[m * sf_short..(m + 1) * sf_short] {
            push(b, &mut out);
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub fn parse_header(bytes: &[u8]) -> Result<StreamHeader> {
    let err = |offset: usize, reason: String| CodecError::Stream { offset, reason };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let got = &bytes[..bytes.len().min(4)];
        return Err(err(0, format!("bad magic {:?}, expected \"CCB1\"", String::from_utf8_lossy(got))));
    }
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len())));
    }
    let header = StreamHeader {
        sample_rate: read_u32(bytes, 4),
        rep_dim: read_u32(bytes, 8),
        step_short: f32::from_bits(read_u32(bytes, 12)),
        step_long: f32::from_bits(read_u32(bytes, 16)),
        layout_version: read_u32(bytes, 20),
    };
    if header.layout_version != LAYOUT_VERSION {
        return Err(err(20, format!("unknown layout version {}", header.layout_version)));
    }
    if header.sample_rate == 0 {
        return Err(err(4, "sample rate is zero".into()));
    }
    if header.rep_dim == 0 || !header.rep_dim.is_multiple_of(8) || header.rep_dim > MAX_REP_DIM {
        return Err(err(8, format!("unsupported rep_dim {}", header.rep_dim)));
    }
    for (at, step) in [(12, header.step_short), (16, header.step_long)] {
        if !(step.is_finite() && step > 0.0) {
            return Err(err(at, format!("invalid quantizer step {step}")));
        }
    }
    Ok(header)
}

/// Exact inverse of [`pack_stream`]. Never reads past the buffer; any
/// malformed input yields a stream error naming the byte offset.
pub fn unpack_stream(bytes: &[u8]) -> Result<StreamBits> {
    let header = parse_header(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let sf_bytes = header.superframe_bytes();
    let full = payload.len() / sf_bytes;
    let rem = payload.len() % sf_bytes;
    if rem != 0 {
        return Err(CodecError::Stream {
            offset: HEADER_LEN + full * sf_bytes,
            reason: format!("truncated superframe: {rem} of {sf_bytes} bytes"),
        });
    }
    let dim = header.rep_dim as usize;
    let mut bits_long = Vec::with_capacity(full * dim);
    let mut bits_short = Vec::with_capacity(full * dim * SHORT_PER_SUPERFRAME);
    for sf in payload.chunks_exact(sf_bytes) {
        let mut bits = sf.iter().flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1 == 1));
        bits_long.extend(bits.by_ref().take(dim));
        bits_short.extend(bits);
    }
    Ok(StreamBits { header, bits_short, bits_long })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> QuantizerSpec {
        QuantizerSpec::new(0.25, 0.5).unwrap()
    }

    #[test]
    fn bitrate() {
        let mut cfg = CodecConfig::default();
        assert_eq!(payload_bitrate(&cfg), 7200.0);
        cfg.rep_dim = 128;
        assert_eq!(payload_bitrate(&cfg), 14400.0);
        cfg.rep_dim = 1;
        assert_eq!(payload_bitrate(&cfg), 112.5);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = pack_stream(&[], &[], &spec(), &CodecConfig::default()).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = unpack_stream(&bytes).unwrap();
        assert!(back.bits_short.is_empty() && back.bits_long.is_empty());
        assert_eq!(back.header.step_long, 0.5);
    }

    #[test]
    fn msb_first_layout() {
        let cfg = CodecConfig::default();
        let mut long = vec![false; 64];
        long[0] = true;
        long[9] = true;
        let mut short = vec![false; 8 * 64];
        short[7] = true;
        let bytes = pack_stream(&short, &long, &spec(), &cfg).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 72);
        assert_eq!(bytes[HEADER_LEN], 0x80);
        assert_eq!(bytes[HEADER_LEN + 1], 0x40);
        assert_eq!(bytes[HEADER_LEN + 8], 0x01);
        assert_eq!(&bytes[..4], b"CCB1");
        assert_eq!(read_u32(&bytes, 4), 16000);
        assert_eq!(read_u32(&bytes, 8), 64);
    }

    #[test]
    fn partial_superframe_dropped_and_mismatch_rejected() {
        let cfg = CodecConfig::default();
        let bytes = pack_stream(&vec![true; 13 * 64], &[false; 64], &spec(), &cfg).unwrap();
        let back = unpack_stream(&bytes).unwrap();
        assert_eq!(back.bits_short.len(), 8 * 64);
        assert!(matches!(
            pack_stream(&vec![true; 7 * 64], &[false; 64], &spec(), &cfg),
            Err(CodecError::Framing(_))
        ));
        assert!(matches!(pack_stream(&[true; 5], &[], &spec(), &cfg), Err(CodecError::Framing(_))));
    }

    #[test]
    fn malformed_streams() {
        let cfg = CodecConfig::default();
        let good = pack_stream(&vec![true; 16 * 64], &[false; 2 * 64], &spec(), &cfg).unwrap();
        match unpack_stream(&good[..good.len() - 5]) {
            Err(CodecError::Stream { offset, reason }) => {
                assert_eq!(offset, HEADER_LEN + 72);
                assert!(reason.contains("67 of 72"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        let mut riff = good.clone();
        riff[..4].copy_from_slice(b"RIFF");
        assert!(matches!(unpack_stream(&riff), Err(CodecError::Stream { offset: 0, .. })));
        let mut ver = good.clone();
        ver[20] = 9;
        assert!(matches!(unpack_stream(&ver), Err(CodecError::Stream { offset: 20, .. })));
        assert!(matches!(unpack_stream(&good[..10]), Err(CodecError::Stream { offset: 10, .. })));
    }

    proptest! {
        #[test]
        fn round_trip(sf in 0usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cfg = CodecConfig::default();
            let short: Vec<bool> = (0..sf * 8 * 64).map(|_| rng.gen()).collect();
            let long: Vec<bool> = (0..sf * 64).map(|_| rng.gen()).collect();
            let bytes = pack_stream(&short, &long, &spec(), &cfg).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + 72 * sf);
            let back = unpack_stream(&bytes).unwrap();
            prop_assert_eq!(back.bits_short, short);
            prop_assert_eq!(back.bits_long, long);
        }

        #[test]
        fn fuzz_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..400), keep_header in any::<bool>()) {
            let mut b = bytes;
            if keep_header && b.len() >= HEADER_LEN {
                let good = pack_stream(&[], &[], &spec(), &CodecConfig::default()).unwrap();
                b[..HEADER_LEN].copy_from_slice(&good);
            }
            if let Ok(parsed) = unpack_stream(&b) {
                let dim = parsed.header.rep_dim as usize;
                prop_assert_eq!(parsed.bits_long.len() * 8, parsed.bits_short.len());
                prop_assert_eq!(HEADER_LEN + parsed.superframes() * 9 * dim / 8, b.len());
            }
        }
    }
}
