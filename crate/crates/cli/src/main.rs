use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cogcodec::audio::{read_wav_at, write_wav};
use cogcodec::checkpoint::Checkpoint;
use cogcodec::codec::{dump_features, measure, CodecModel};
use cogcodec::corpus::{generate_corpus, load_corpus};
use cogcodec::trainer::{calibrate, evaluate_nce, train_decoder, DecoderTrainer, EncoderTrainer, RunPaths};
use cogcodec::ModelConfig;

#[derive(Parser)]
#[command(name = "cogcodec", version, about = "Low-rate neural speech codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-width model.
    Full,
    /// Narrow model for single-core machines.
    Desk,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `section.key = value` lines, applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    /// Single override, e.g. `--set train.total_steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match self.preset {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
        };
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg = ModelConfig::parse_onto(cfg, &text).with_context(|| format!("config {}", p.display()))?;
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write an untrained, calibrated model checkpoint.
    Init {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress a WAV file to a bitstream.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a WAV file from a bitstream.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print objective measurements of a model.
    Measure {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference WAV for distortion measures.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Seconds of audio to time for the real-time factor.
        #[arg(long, default_value_t = 10.0)]
        timing_seconds: f64,
    },
    /// Write raw and quantized features of a WAV file as CSV.
    DumpFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining of the encoder.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of WAV files; defaults to `train.corpus_path`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Run directory for checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Continue from an encoder checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the decoder against a pretrained encoder.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Encoder checkpoint from `pretrain`.
        #[arg(long, required_unless_present = "resume")]
        encoder: Option<PathBuf>,
        /// Continue from a decoder-training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize a speech-like corpus of WAV files.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        files: usize,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the A/B listening-test backend.
    AbtestServe {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Where sessions and vote logs are stored.
        #[arg(long)]
        data: PathBuf,
        /// Root directory of stimulus audio.
        #[arg(long)]
        audio: PathBuf,
    },
}

fn corpus_dir(arg: &Option<PathBuf>, cfg: &ModelConfig) -> Result<PathBuf> {
    match arg {
        Some(p) => Ok(p.clone()),
        None if !cfg.train.corpus_path.is_empty() => Ok(cfg.train.corpus_path.clone().into()),
        None => bail!("no corpus given; pass --corpus or set train.corpus_path"),
    }
}

fn pretrain(cfg: ModelConfig, corpus: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let data = load_corpus(corpus, cfg.codec.sample_rate)?;
    let segments = data.segments(cfg.train.pretrain_segment_length, cfg.train.seed);
    if segments.is_empty() {
        bail!("corpus {} has no file longer than one pretraining segment", corpus.display());
    }
    let mut tr = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            ck.check_compatible(&cfg)?;
            let mut tr = EncoderTrainer::from_checkpoint(&ck)?;
            tr.cfg.train = cfg.train.clone();
            tr
        }
        None => EncoderTrainer::new(&cfg)?,
    };
    std::fs::create_dir_all(out)?;
    let paths = RunPaths { dir: out.to_path_buf() };
    let t = cfg.train.clone();
    let (mut acc_s, mut acc_l, mut loss, mut n) = (0.0, 0.0, 0.0, 0usize);
    while tr.step < t.pretrain_steps {
        let m = tr.step(&segments)?;
        loss += m.loss;
        acc_s += m.accuracy_short.unwrap_or(0.0);
        acc_l += m.accuracy_long.unwrap_or(0.0);
        n += 1;
        if t.log_interval > 0 && m.step % t.log_interval == 0 {
            let k = n as f64;
            log::info!("pretrain {} loss {:.4} acc short {:.3} long {:.3}", m.step, loss / k, acc_s / k, acc_l / k);
            (acc_s, acc_l, loss, n) = (0.0, 0.0, 0.0, 0);
        }
        if t.checkpoint_interval > 0 && m.step % t.checkpoint_interval == 0 {
            tr.to_checkpoint().save(&paths.checkpoint(m.step))?;
            tr.to_checkpoint().save(&paths.latest())?;
        }
    }
    tr.to_checkpoint().save(&paths.latest())?;
    let (s, l) = evaluate_nce(&tr.encoder, &segments, 10, t.pretrain_batch_size, t.seed)?;
    println!("contrastive accuracy: short {s:.3} long {l:.3}");
    println!("encoder checkpoint: {}", paths.latest().display());
    Ok(())
}

fn train(cfg: ModelConfig, corpus: &Path, out: &Path, encoder: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let data = load_corpus(corpus, cfg.codec.sample_rate)?;
    let segments = data.segments(cfg.train.segment_length, cfg.train.seed);
    if segments.is_empty() {
        bail!("corpus {} has no file longer than one training segment", corpus.display());
    }
    let mut tr = if let Some(p) = resume {
        let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
        ck.check_compatible(&cfg)?;
        let mut tr = DecoderTrainer::from_checkpoint(&ck)?;
        tr.cfg.train = cfg.train.clone();
        tr
    } else {
        let p = encoder.context("--encoder is required without --resume")?;
        let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
        ck.check_compatible(&cfg)?;
        let enc = EncoderTrainer::from_checkpoint(&ck)?.encoder;
        let calib = data.segments(cfg.train.pretrain_segment_length, cfg.train.seed ^ 1);
        let q = calibrate(&enc, &calib, cfg.codec.step_multiplier, 64)?;
        log::info!("quantizer steps: short {} long {}", q.step_short, q.step_long);
        DecoderTrainer::new(&cfg, enc, q)?
    };
    let paths = RunPaths { dir: out.to_path_buf() };
    let history = train_decoder(&mut tr, &segments, &paths)?;
    if let Some(m) = history.last() {
        println!("step {} mel {:.4} total {:.4}", m.step, m.mel, m.total);
    }
    println!("model checkpoint: {}", paths.latest().display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { cfg, out } => {
            let cfg = cfg.resolve()?;
            let model = CodecModel::init(&cfg, cfg.train.seed)?;
            model.to_checkpoint().save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Encode { checkpoint, input, out } => {
            let model = CodecModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let x = read_wav_at(&input, model.sample_rate()).with_context(|| format!("reading {}", input.display()))?;
            let bytes = model.encode(&x)?;
            std::fs::write(&out, &bytes)?;
            println!("{} samples -> {} bytes", x.len(), bytes.len());
        }
        Command::Decode { checkpoint, input, out } => {
            let model = CodecModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let y = model.decode(&bytes)?;
            write_wav(&out, &y, model.sample_rate())?;
            println!("{} bytes -> {} samples", bytes.len(), y.len());
        }
        Command::Measure { checkpoint, reference, timing_seconds } => {
            let model = CodecModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let r = reference.map(|p| read_wav_at(&p, model.sample_rate()).with_context(|| format!("reading {}", p.display()))).transpose()?;
            print!("{}", measure(&model, r.as_deref(), timing_seconds)?.to_text());
        }
        Command::DumpFeatures { checkpoint, input, out } => {
            let model = CodecModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let x = read_wav_at(&input, model.sample_rate()).with_context(|| format!("reading {}", input.display()))?;
            std::fs::write(&out, dump_features(&model, &x)?)?;
        }
        Command::Pretrain { cfg, corpus, out, resume } => {
            let cfg = cfg.resolve()?;
            let dir = corpus_dir(&corpus, &cfg)?;
            pretrain(cfg, &dir, &out, resume.as_deref())?;
        }
        Command::Train { cfg, corpus, out, encoder, resume } => {
            let cfg = cfg.resolve()?;
            let dir = corpus_dir(&corpus, &cfg)?;
            train(cfg, &dir, &out, encoder.as_deref(), resume.as_deref())?;
        }
        Command::GenCorpus { out, files, seconds, sample_rate, seed } => {
            let written = generate_corpus(&out, files, seconds, sample_rate, seed)?;
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Command::AbtestServe { addr, data, audio } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cogcodec_abtest::http::serve(addr, &data, &audio))?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
