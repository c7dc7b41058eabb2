//! Model, loss and training configuration with a plain `section.key = value`
//! text format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{config_err, Result};

trait KvValue: Sized {
    fn parse_kv(s: &str) -> std::result::Result<Self, String>;
    fn format_kv(&self) -> String;
}

macro_rules! scalar_kv {
    ($($t:ty),*) => {$(
        impl KvValue for $t {
            fn parse_kv(s: &str) -> std::result::Result<Self, String> {
                s.trim().parse::<$t>().map_err(|e| format!("cannot parse {s:?}: {e}"))
            }
            fn format_kv(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_kv!(usize, u32, u64, f32, f64);

impl KvValue for String {
    fn parse_kv(s: &str) -> std::result::Result<Self, String> {
        Ok(s.trim().to_string())
    }
    fn format_kv(&self) -> String {
        self.clone()
    }
}

impl KvValue for Vec<usize> {
    fn parse_kv(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().trim_start_matches('[').trim_end_matches(']');
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(usize::parse_kv).collect()
    }
    fn format_kv(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! kv_struct {
    (
        $(#[$meta:meta])*
        pub struct $name:ident {
            $( $(#[$fmeta:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $( $(#[$fmeta])* pub $field: $ty ),*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $( $field: $default ),* }
            }
        }

        impl $name {
            fn set_kv(&mut self, key: &str, value: &str) -> Result<bool> {
                match key {
                    $( stringify!($field) => {
                        self.$field = <$ty as KvValue>::parse_kv(value)
                            .map_err(|e| config_err(format!("{}: {e}", stringify!($field))))?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            fn write_kv(&self, section: &str, out: &mut String) {
                $( let _ = writeln!(out, "{section}.{} = {}", stringify!($field), self.$field.format_kv()); )*
            }
        }
    };
}

kv_struct! {
    /// Encoder and quantizer hyper-parameters.
    pub struct CodecConfig {
        sample_rate: u32 = 16000,
        lower_filter_sizes: Vec<usize> = vec![10, 8, 4, 4, 4],
        lower_strides: Vec<usize> = vec![5, 4, 2, 2, 2],
        upper_filter_sizes: Vec<usize> = vec![4, 4, 4],
        upper_strides: Vec<usize> = vec![2, 2, 2],
        conv_hidden: usize = 512,
        rep_dim: usize = 64,
        quant_bits_per_feature: usize = 1,
        nce_horizon_lower: usize = 12,
        nce_horizon_upper: usize = 4,
        negatives_per_positive: usize = 7,
        /// Scale applied to the calibrated median step.
        step_multiplier: f32 = 1.0,
    }
}

kv_struct! {
    /// Generator hyper-parameters.
    pub struct DecoderConfig {
        top_filter_sizes: Vec<usize> = vec![4, 4, 4],
        top_upsample: Vec<usize> = vec![2, 2, 2],
        top_initial_channels: usize = 256,
        lower_filter_sizes: Vec<usize> = vec![10, 8, 8, 4],
        lower_upsample: Vec<usize> = vec![5, 4, 4, 2],
        lower_initial_channels: usize = 128,
        mrf_kernels: Vec<usize> = vec![3, 7, 11],
        mrf_blocks_per_kernel: usize = 3,
        mrf_dilations: Vec<usize> = vec![1, 3, 5],
        /// Short-term frames the lower stage sees per output block (current
        /// plus look-ahead); this is the algorithmic delay in frames.
        lookahead_short_frames: usize = 2,
        pre_kernel: usize = 7,
        post_kernel: usize = 7,
        lrelu_slope: f32 = 0.1,
        /// Standard deviation multiplier for generator weight init.
        init_gain: f32 = 1.0,
    }
}

kv_struct! {
    /// Multi-scale and multi-period discriminator shapes.
    pub struct DiscriminatorConfig {
        msd_scales: usize = 3,
        msd_channels: Vec<usize> = vec![16, 64, 256, 1024],
        msd_kernels: Vec<usize> = vec![15, 41, 41, 41],
        msd_strides: Vec<usize> = vec![1, 4, 4, 4],
        msd_groups: Vec<usize> = vec![1, 4, 16, 64],
        mpd_periods: Vec<usize> = vec![2, 3, 5, 7, 11],
        mpd_channels: Vec<usize> = vec![32, 128, 512, 1024, 1024],
        mpd_kernel: usize = 5,
        mpd_strides: Vec<usize> = vec![3, 3, 3, 3, 1],
        post_kernel: usize = 3,
        lrelu_slope: f32 = 0.1,
    }
}

kv_struct! {
    /// Log-mel analysis used by the reconstruction loss.
    pub struct MelSpec {
        sample_rate: u32 = 16000,
        fft_size: usize = 1024,
        hop: usize = 160,
        window: usize = 1024,
        mel_bands: usize = 80,
        fmin: f64 = 0.0,
        fmax: f64 = 8000.0,
        log_floor: f64 = 1e-5,
    }
}

kv_struct! {
    /// Generator objective weights.
    pub struct LossWeights {
        adv: f32 = 1.0,
        cc_short: f32 = 10.0,
        cc_long: f32 = 10.0,
        mel: f32 = 50.0,
        fm: f32 = 2.0,
    }
}

kv_struct! {
    pub struct TrainConfig {
        corpus_path: String = String::new(),
        /// Decoder-training segment length in samples.
        segment_length: usize = 15360,
        batch_size: usize = 8,
        generator_lr: f32 = 2e-4,
        discriminator_lr: f32 = 2e-4,
        adam_beta1: f32 = 0.8,
        adam_beta2: f32 = 0.99,
        total_steps: u64 = 2000,
        checkpoint_interval: u64 = 500,
        log_interval: u64 = 100,
        seed: u64 = 0,
        pretrain_steps: u64 = 5000,
        pretrain_batch_size: usize = 8,
        pretrain_segment_length: usize = 20480,
        pretrain_lr: f32 = 2e-4,
    }
}

impl CodecConfig {
    /// Samples per short-term frame.
    pub fn lower_hop(&self) -> usize {
        self.lower_strides.iter().product()
    }

    /// Short-term frames per long-term frame.
    pub fn upper_ratio(&self) -> usize {
        self.upper_strides.iter().product()
    }

    /// Samples per long-term frame.
    pub fn upper_hop(&self) -> usize {
        self.lower_hop() * self.upper_ratio()
    }

    pub fn validate(&self) -> Result<()> {
        check_layers("lower", &self.lower_filter_sizes, &self.lower_strides)?;
        check_layers("upper", &self.upper_filter_sizes, &self.upper_strides)?;
        if self.sample_rate == 0 {
            return Err(config_err("sample_rate must be positive"));
        }
        if self.lower_hop() != 160 {
            return Err(config_err(format!("lower strides multiply to {}, expected 160", self.lower_hop())));
        }
        if self.upper_ratio() != 8 {
            return Err(config_err(format!("upper strides multiply to {}, expected 8", self.upper_ratio())));
        }
        if self.rep_dim == 0 || !self.rep_dim.is_multiple_of(8) {
            return Err(config_err("rep_dim must be a positive multiple of 8"));
        }
        if self.conv_hidden == 0 {
            return Err(config_err("conv_hidden must be positive"));
        }
        if self.quant_bits_per_feature != 1 {
            return Err(config_err("only single-bit quantization is supported"));
        }
        if self.nce_horizon_lower == 0 || self.nce_horizon_upper == 0 || self.negatives_per_positive == 0 {
            return Err(config_err("NCE horizons and negatives must be positive"));
        }
        if !(self.step_multiplier.is_finite() && self.step_multiplier > 0.0) {
            return Err(config_err("step_multiplier must be positive"));
        }
        Ok(())
    }
}

fn check_layers(name: &str, filters: &[usize], strides: &[usize]) -> Result<()> {
    if filters.is_empty() || filters.len() != strides.len() {
        return Err(config_err(format!("{name}: filter and stride lists must be non-empty and equally long")));
    }
    for (i, (&k, &s)) in filters.iter().zip(strides).enumerate() {
        if s == 0 || k < s {
            return Err(config_err(format!("{name} layer {i}: need filter >= stride > 0, got {k}/{s}")));
        }
    }
    Ok(())
}

fn check_halving(name: &str, initial: usize, layers: usize) -> Result<()> {
    if initial == 0 || !initial.is_multiple_of(1 << layers) {
        return Err(config_err(format!("{name}: {initial} channels cannot be halved {layers} times")));
    }
    Ok(())
}

impl DecoderConfig {
    pub fn top_channels(&self) -> Vec<usize> {
        (0..=self.top_upsample.len()).map(|i| self.top_initial_channels >> i).collect()
    }

    pub fn lower_channels(&self) -> Vec<usize> {
        (0..=self.lower_upsample.len()).map(|i| self.lower_initial_channels >> i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_layers("top", &self.top_filter_sizes, &self.top_upsample)?;
        check_layers("lower", &self.lower_filter_sizes, &self.lower_upsample)?;
        check_halving("top", self.top_initial_channels, self.top_upsample.len())?;
        check_halving("lower", self.lower_initial_channels, self.lower_upsample.len())?;
        if self.mrf_kernels.is_empty() || self.mrf_dilations.is_empty() || self.mrf_blocks_per_kernel == 0 {
            return Err(config_err("MRF needs kernels, dilations and at least one block"));
        }
        if self.mrf_kernels.iter().chain(&self.mrf_dilations).any(|&v| v == 0) {
            return Err(config_err("MRF kernels and dilations must be positive"));
        }
        if !(1..=8).contains(&self.lookahead_short_frames) {
            return Err(config_err("lookahead_short_frames must be in 1..=8"));
        }
        if self.pre_kernel == 0 || self.post_kernel == 0 {
            return Err(config_err("pre/post kernels must be positive"));
        }
        Ok(())
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.msd_channels.len();
        if n == 0 || self.msd_kernels.len() != n || self.msd_strides.len() != n || self.msd_groups.len() != n {
            return Err(config_err("msd channel/kernel/stride/group lists must match"));
        }
        let mut c_in = 1;
        for i in 0..n {
            let (c, g) = (self.msd_channels[i], self.msd_groups[i]);
            if g == 0 || c % g != 0 || c_in % g != 0 || self.msd_strides[i] == 0 || self.msd_kernels[i] == 0 {
                return Err(config_err(format!("msd layer {i}: invalid channels/groups/stride")));
            }
            c_in = c;
        }
        if self.mpd_channels.is_empty() || self.mpd_strides.len() != self.mpd_channels.len() {
            return Err(config_err("mpd channel/stride lists must match"));
        }
        if self.mpd_periods.contains(&0) || self.mpd_strides.contains(&0) || self.mpd_kernel == 0 {
            return Err(config_err("mpd periods, strides and kernel must be positive"));
        }
        if self.msd_scales == 0 || self.post_kernel == 0 {
            return Err(config_err("msd_scales and post_kernel must be positive"));
        }
        Ok(())
    }
}

impl MelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0 && self.hop <= self.window && self.window <= self.fft_size) {
            return Err(config_err("mel: need 0 < hop <= window <= fft_size"));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 || self.fmin < 0.0 || self.fmin >= self.fmax {
            return Err(config_err("mel: need 0 <= fmin < fmax <= sample_rate / 2"));
        }
        if self.mel_bands == 0 || !(self.log_floor > 0.0) {
            return Err(config_err("mel: bands and log floor must be positive"));
        }
        Ok(())
    }
}

impl LossWeights {
    /// `adv + cc_s + cc_l + mel + fm`, each scaled by its weight and summed
    /// left to right.
    pub fn total(&self, adv: f32, cc_s: f32, cc_l: f32, mel: f32, fm: f32) -> f32 {
        let mut s = 0.0f32;
        for (w, v) in self.pairs(adv, cc_s, cc_l, mel, fm) {
            s += w * v;
        }
        s
    }

    pub(crate) fn pairs(&self, adv: f32, cc_s: f32, cc_l: f32, mel: f32, fm: f32) -> [(f32, f32); 5] {
        [(self.adv, adv), (self.cc_short, cc_s), (self.cc_long, cc_l), (self.mel, mel), (self.fm, fm)]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.cc_short, self.cc_long, self.mel, self.fm];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(config_err("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn validate(&self, codec: &CodecConfig) -> Result<()> {
        let sf = codec.upper_hop();
        if self.segment_length == 0 || !self.segment_length.is_multiple_of(sf) {
            return Err(config_err(format!("segment_length must be a positive multiple of {sf}")));
        }
        if self.pretrain_segment_length == 0 || !self.pretrain_segment_length.is_multiple_of(sf) {
            return Err(config_err(format!("pretrain_segment_length must be a positive multiple of {sf}")));
        }
        if self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return Err(config_err("batch sizes must be positive"));
        }
        let rates = [self.generator_lr, self.discriminator_lr, self.pretrain_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(config_err("learning rates must be positive"));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err("adam betas must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Everything needed to build, train and run the codec.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    pub decoder: DecoderConfig,
    pub disc: DiscriminatorConfig,
    pub mel: MelSpec,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Reduced widths for single-core desk runs. Strides, frame rates, the
    /// bitstream layout and the loss weights are unchanged.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.codec.conv_hidden = 64;
        cfg.decoder.top_initial_channels = 64;
        cfg.decoder.lower_initial_channels = 64;
        cfg.disc.msd_channels = vec![8, 16, 32, 64];
        cfg.disc.msd_groups = vec![1, 2, 4, 8];
        cfg.disc.mpd_channels = vec![8, 16, 32, 64, 64];
        cfg.train.segment_length = 7680;
        cfg.train.batch_size = 4;
        cfg.train.pretrain_batch_size = 8;
        cfg.train.pretrain_segment_length = 20480;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.decoder.validate()?;
        self.disc.validate()?;
        self.mel.validate()?;
        self.loss.validate()?;
        self.train.validate(&self.codec)?;
        let top: usize = self.decoder.top_upsample.iter().product();
        let lower: usize = self.decoder.lower_upsample.iter().product();
        if top != self.codec.upper_ratio() || lower != self.codec.lower_hop() {
            return Err(config_err(format!(
                "decoder upsampling {top}x{lower} does not match encoder frame rates {}x{}",
                self.codec.upper_ratio(),
                self.codec.lower_hop()
            )));
        }
        if self.mel.sample_rate != self.codec.sample_rate {
            return Err(config_err("mel and codec sample rates differ"));
        }
        Ok(())
    }

    /// Parse `section.key = value` lines on top of the defaults. `#` starts a
    /// comment; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(Self::default(), text)
    }

    pub fn parse_onto(mut cfg: Self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| config_err(format!("key {key:?} needs a section prefix")))?;
        let known = match section {
            "codec" => self.codec.set_kv(field, value)?,
            "decoder" => self.decoder.set_kv(field, value)?,
            "disc" => self.disc.set_kv(field, value)?,
            "mel" => self.mel.set_kv(field, value)?,
            "loss" => self.loss.set_kv(field, value)?,
            "train" => self.train.set_kv(field, value)?,
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(config_err(format!("unknown key {key:?}")))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = self.architecture_text();
        self.loss.write_kv("loss", &mut out);
        self.train.write_kv("train", &mut out);
        out
    }

    /// The subset that determines weight shapes and signal processing.
    pub fn architecture_text(&self) -> String {
        let mut out = String::new();
        self.codec.write_kv("codec", &mut out);
        self.decoder.write_kv("decoder", &mut out);
        self.disc.write_kv("disc", &mut out);
        self.mel.write_kv("mel", &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        let c = CodecConfig::default();
        assert_eq!((c.lower_hop(), c.upper_ratio(), c.upper_hop()), (160, 8, 1280));
        assert_eq!(DecoderConfig::default().top_channels(), vec![256, 128, 64, 32]);
        assert_eq!(DecoderConfig::default().lower_channels(), vec![128, 64, 32, 16, 8]);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::desk();
        cfg.train.seed = 42;
        cfg.train.corpus_path = "/data/x".into();
        let back = ModelConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_errors() {
        assert!(ModelConfig::parse("codec.nope = 1").is_err());
        assert!(ModelConfig::parse("conv_hidden = 1").is_err());
        assert!(ModelConfig::parse("codec.lower_strides = 5,4,2,2,3").is_err());
        assert!(ModelConfig::parse("codec.lower_filter_sizes = 4,8,4,4,4").is_err());
        assert!(ModelConfig::parse("train.segment_length = 16000").is_err());
        let cfg = ModelConfig::parse("# comment\ncodec.conv_hidden = 32  # trailing\n").unwrap();
        assert_eq!(cfg.codec.conv_hidden, 32);
    }

    #[test]
    fn loss_total_on_unit_components() {
        assert_eq!(LossWeights::default().total(1.0, 1.0, 1.0, 1.0, 1.0), 73.0);
    }
}
