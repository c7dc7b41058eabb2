//! Acceptance gate. Each test checks one criterion and prints a single
//! `ACCEPTANCE PASS|FAIL <name>: <detail>` line straight to stdout, so the
//! line shows up even when libtest captures output.

use std::io::Write;
use std::time::Instant;

use cogcodec::bitstream::{pack_stream, parse_header, payload_bitrate, unpack_stream, HEADER_LEN};
use cogcodec::codec::{CodecModel, StreamDecoder, StreamEncoder};
use cogcodec::config::{CodecConfig, LossWeights, MelSpec};
use cogcodec::corpus::{generate_corpus, load_corpus, synth_speech, Gender};
use cogcodec::decoder::{frames_before_first_output, impulse_delay_samples, Decoder};
use cogcodec::discriminators::{mpd_index, mpd_reshape, Discriminators, Mpd, Msd};
use cogcodec::encoder::Encoder;
use cogcodec::losses::{cc_distances, feature_matching, features, lsgan_d_loss, lsgan_g_loss, scores, total_generator_loss};
use cogcodec::mel::MelAnalyzer;
use cogcodec::nn::{self, Init};
use cogcodec::quantizer::{delta_decode, delta_encode, QuantizerSpec};
use cogcodec::tensor::Tensor;
use cogcodec::trainer::{evaluate_nce, DecoderTrainer, EncoderTrainer};
use cogcodec::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(name: &str, ok: bool, detail: &str) {
    let line = format!("\nACCEPTANCE {} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "{name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn rate_law() {
    let cfg = ModelConfig::default();
    let bps = payload_bitrate(&cfg.codec);
    let model = CodecModel::init(&cfg, 1).unwrap();
    let x = synth_speech(&mut rng(2), Gender::Female, 10 * 16000, 16000);
    let t0 = Instant::now();
    let bytes = model.encode(&x).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let bits = (bytes.len() - HEADER_LEN) * 8;
    let ok = bps == 7200.0 && bits == 72_000 && secs < 10.0;
    verdict("rate law", ok, &format!("{bps} bps, 10 s -> {bits} payload bits in {secs:.2} s (limit 10 s)"));
}

#[test]
fn delay_law() {
    let cfg = ModelConfig::default();
    let dec = Decoder::new(&cfg.decoder, cfg.codec.rep_dim, &mut rng(3)).unwrap();
    let frames = frames_before_first_output(&dec).unwrap();
    let samples = impulse_delay_samples(&dec, &mut rng(4)).unwrap();
    let ms = samples as f64 * 1000.0 / cfg.codec.sample_rate as f64;
    let ok = frames == 2 && samples == 320 && ms == 20.0;
    verdict("delay law", ok, &format!("first output after {frames} short frames, impulse delay {samples} samples = {ms} ms"));
}

#[test]
fn causality_suite() {
    let cfg = ModelConfig::default();
    let enc = Encoder::new(&cfg.codec, &mut rng(5)).unwrap();
    let (hop_s, hop_l) = (cfg.codec.lower_hop(), cfg.codec.upper_hop());
    let mut r = rng(6);
    let mut failures = Vec::new();
    let mut checked = (0usize, 0usize);
    for case in 0..100 {
        let len = r.gen_range(hop_l..4 * hop_l);
        let x: Vec<f32> = (0..len).map(|_| r.gen_range(-0.8..0.8)).collect();
        let p = r.gen_range(0..len);
        let mut y = x.clone();
        for v in &mut y[p..] {
            *v = r.gen_range(-0.8..0.8);
        }
        let (xs, xl) = enc.encode_all(&x, 16000).unwrap();
        let (ys, yl) = enc.encode_all(&y, 16000).unwrap();
        // Frame t at hop h depends on samples up to (t + 1) * h - 1.
        let ps = (0..xs.len()).filter(|&t| (t + 1) * hop_s - 1 < p).count();
        let pl = (0..xl.len()).filter(|&t| (t + 1) * hop_l - 1 < p).count();
        checked.0 += ps;
        checked.1 += pl;
        let same = |a: &[f32], b: &[f32]| a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits());
        if !same(&xs.data[..ps * xs.dim], &ys.data[..ps * ys.dim]) || !same(&xl.data[..pl * xl.dim], &yl.data[..pl * yl.dim]) {
            failures.push(case);
        }
    }
    verdict(
        "causality suite",
        failures.is_empty(),
        &format!("100 perturbations, {} short and {} long past frames compared bit-exact, failing cases {failures:?}", checked.0, checked.1),
    );
}

#[test]
fn delta_modulation_oracle() {
    let mut r = rng(7);
    let mut problems = Vec::new();
    for case in 0..1000 {
        let dim = 8 * r.gen_range(1..5);
        let frames = r.gen_range(1..60);
        let step = 2f32.powi(-r.gen_range(0..8));
        let init = step * r.gen_range(-4..=4) as f32;
        let mut x = vec![0.0f32; frames * dim];
        for d in 0..dim {
            let mut v = init + r.gen_range(-step..=step);
            for t in 0..frames {
                if t > 0 {
                    v += r.gen_range(-step..=step);
                }
                x[t * dim + d] = v;
            }
        }
        let coded = delta_encode(&x, dim, step, init).unwrap();
        let decoded = delta_decode(&coded.bits, dim, step, init).unwrap();
        if decoded.iter().zip(&coded.recon).any(|(a, b)| a.to_bits() != b.to_bits()) {
            problems.push(format!("case {case}: decoder mismatch"));
        }
        let worst = x.iter().zip(&coded.recon).map(|(a, b)| (*a as f64 - *b as f64).abs()).fold(0.0, f64::max);
        if worst > step as f64 {
            problems.push(format!("case {case}: tracking error {worst} > step {step}"));
        }

        // Pack/unpack of random complete superframes.
        let codec = CodecConfig { rep_dim: dim, ..Default::default() };
        let m = r.gen_range(0..5);
        let bl: Vec<bool> = (0..m * dim).map(|_| r.gen()).collect();
        let bs: Vec<bool> = (0..8 * m * dim).map(|_| r.gen()).collect();
        let spec = QuantizerSpec::new(step, 2.0 * step).unwrap();
        let packed = pack_stream(&bs, &bl, &spec, &codec).unwrap();
        match unpack_stream(&packed) {
            Ok(back) if back.bits_short == bs && back.bits_long == bl && back.header.step_short == step => {}
            _ => problems.push(format!("case {case}: pack round trip")),
        }

        // Fuzz: random bytes, and the valid stream with flipped bytes or cut short.
        let fuzz: Vec<u8> = (0..r.gen_range(0..200)).map(|_| r.gen()).collect();
        let mut mutated = packed.clone();
        if !mutated.is_empty() {
            let i = r.gen_range(0..mutated.len());
            mutated[i] ^= r.gen_range(1..=255u8);
        }
        let cut = &packed[..r.gen_range(0..=packed.len())];
        for bytes in [&fuzz[..], &mutated[..], cut] {
            if std::panic::catch_unwind(|| {
                let _ = parse_header(bytes);
                let _ = unpack_stream(bytes);
            })
            .is_err()
            {
                problems.push(format!("case {case}: panic on fuzzed stream"));
            }
        }
    }
    verdict("delta-modulation oracle", problems.is_empty(), &format!("1000 sequences, problems {problems:?}"));
}

#[test]
fn architecture_scale() {
    let cfg = ModelConfig::default();
    let enc: Encoder = Encoder::new(&cfg.codec, &mut rng(8)).unwrap();
    let dec: Decoder = Decoder::new(&cfg.decoder, cfg.codec.rep_dim, &mut rng(9)).unwrap();
    let (e, d) = (enc.parameter_count(), dec.parameter_count());
    let ok = (8_300_000..=11_300_000).contains(&e) && (5_350_000..=7_250_000).contains(&d);
    verdict(
        "architecture scale",
        ok,
        &format!("encoder {e} in [8.3M, 11.3M], decoder {d} in [5.35M, 7.25M]"),
    );
}

/// Largest relative gap between analytic and central-difference gradients
/// over the probed coordinates.
fn fd_gap(x0: &[f64], coords: &[usize], analytic: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut p = x0.to_vec();
        p[i] += h;
        let mut m = x0.to_vec();
        m[i] -= h;
        let num = (f(&p) - f(&m)) / (2.0 * h);
        let gap = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(gap);
    }
    worst
}

fn random_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

#[test]
fn loss_suite() {
    let mut r = rng(10);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, pass: bool, note: String| {
        ok &= pass;
        notes.push(format!("{name} {note}"));
    };

    // Optima and zeros.
    let ones = vec![Tensor::<f64>::new(vec![1.0; 6], &[1, 1, 6]), Tensor::new(vec![1.0; 3], &[1, 1, 3])];
    let zeros = vec![Tensor::<f64>::new(vec![0.0; 6], &[1, 1, 6]), Tensor::new(vec![0.0; 3], &[1, 1, 3])];
    let d_opt = lsgan_d_loss(&ones, &zeros).unwrap().item();
    let g_opt = lsgan_g_loss(&ones).item();
    check("lsgan optima", d_opt == 0.0 && g_opt == 0.0, format!("d {d_opt} g {g_opt}"));

    let mel_spec = MelSpec { fft_size: 128, window: 128, hop: 32, mel_bands: 10, ..Default::default() };
    let mel = MelAnalyzer::<f64>::new(&mel_spec).unwrap();
    let codec = CodecConfig { conv_hidden: 8, rep_dim: 8, ..Default::default() };
    let enc = Encoder::<f64>::new(&codec, &mut rng(11)).unwrap();
    let desk = ModelConfig::desk();
    let disc = Discriminators::<f64>::new(&desk.disc, &mut rng(12)).unwrap();

    let len_cc = 2600;
    let x = Tensor::new(random_vec(&mut r, len_cc, 0.5), &[1, 1, len_cc]);
    let mel_zero = mel.distance(&x, &x).unwrap().item();
    let (cs0, cl0) = cc_distances(&enc, &x, &x).unwrap();
    let dx = disc.forward(&x).unwrap();
    let fm_zero = feature_matching(&features(&dx), &features(&dx)).unwrap().item();
    let zero_ok = mel_zero == 0.0 && cs0.item() == 0.0 && cl0.item() == 0.0 && fm_zero == 0.0;
    check("identical inputs", zero_ok, format!("mel {mel_zero} cc {} {} fm {fm_zero}", cs0.item(), cl0.item()));

    let unit = Tensor::<f32>::scalar(1.0);
    let total = total_generator_loss(&unit, &unit, &unit, &unit, &unit, &LossWeights::default()).item();
    check("weighted total", total == 73.0, format!("{total}"));

    // Gradients at f64 against central differences.
    let coords = |r: &mut ChaCha8Rng, n: usize| -> Vec<usize> { (0..16).map(|_| r.gen_range(0..n)).collect() };

    let len_mel = 300;
    let target = Tensor::new(random_vec(&mut r, len_mel, 0.5), &[1, 1, len_mel]);
    let x0 = random_vec(&mut r, len_mel, 0.5);
    let leaf = Tensor::leaf(x0.clone(), &[1, 1, len_mel], true);
    let g = mel.distance(&target, &leaf).unwrap().backward();
    let f = |v: &[f64]| mel.distance(&target, &Tensor::new(v.to_vec(), &[1, 1, len_mel])).unwrap().item();
    let gap = fd_gap(&x0, &(0..len_mel).collect::<Vec<_>>(), g.get(&leaf).unwrap(), &f);
    check("mel grad", gap < 1e-3, format!("{gap:.2e}"));

    let x0 = random_vec(&mut r, len_cc, 0.5);
    for (level, name) in [(0, "cc short grad"), (1, "cc long grad")] {
        let leaf = Tensor::leaf(x0.clone(), &[1, 1, len_cc], true);
        let (s, l) = cc_distances(&enc, &x, &leaf).unwrap();
        let g = if level == 0 { s } else { l }.backward();
        let f = |v: &[f64]| {
            let (s, l) = cc_distances(&enc, &x, &Tensor::new(v.to_vec(), &[1, 1, len_cc])).unwrap();
            if level == 0 { s } else { l }.item()
        };
        let gap = fd_gap(&x0, &coords(&mut r, len_cc), g.get(&leaf).unwrap(), &f);
        check(name, gap < 1e-3, format!("{gap:.2e}"));
    }

    let len_d = 512;
    let real = Tensor::new(random_vec(&mut r, len_d, 0.5), &[1, 1, len_d]);
    let real_feats = features(&disc.forward(&real).unwrap());
    let x0 = random_vec(&mut r, len_d, 0.5);
    let leaf = Tensor::leaf(x0.clone(), &[1, 1, len_d], true);
    let g = feature_matching(&real_feats, &features(&disc.forward(&leaf).unwrap())).unwrap().backward();
    let f = |v: &[f64]| {
        let fake = disc.forward(&Tensor::new(v.to_vec(), &[1, 1, len_d])).unwrap();
        feature_matching(&real_feats, &features(&fake)).unwrap().item()
    };
    let gap = fd_gap(&x0, &coords(&mut r, len_d), g.get(&leaf).unwrap(), &f);
    check("fm grad", gap < 1e-3, format!("{gap:.2e}"));

    let g = lsgan_g_loss(&scores(&disc.forward(&leaf).unwrap())).backward();
    let f = |v: &[f64]| lsgan_g_loss(&scores(&disc.forward(&Tensor::new(v.to_vec(), &[1, 1, len_d])).unwrap())).item();
    let gap = fd_gap(&x0, &coords(&mut r, len_d), g.get(&leaf).unwrap(), &f);
    check("lsgan g grad", gap < 1e-3, format!("{gap:.2e}"));

    let real_scores = scores(&disc.forward(&real).unwrap());
    let g = lsgan_d_loss(&real_scores, &scores(&disc.forward(&leaf).unwrap())).unwrap().backward();
    let f = |v: &[f64]| {
        let fake = scores(&disc.forward(&Tensor::new(v.to_vec(), &[1, 1, len_d])).unwrap());
        lsgan_d_loss(&real_scores, &fake).unwrap().item()
    };
    let gap = fd_gap(&x0, &coords(&mut r, len_d), g.get(&leaf).unwrap(), &f);
    check("lsgan d grad", gap < 1e-3, format!("{gap:.2e}"));

    verdict("loss unit suite", ok, &notes.join(", "));
}

#[test]
fn mpd_bijection_and_msd_pooling() {
    let desk = ModelConfig::desk();
    let msd = Msd::<f64>::new(&desk.disc, Init::FanIn(1.0), &mut rng(13));
    let mut r = rng(14);
    let mut problems = Vec::new();
    for case in 0..100 {
        let len: usize = r.gen_range(256..1200);
        let p = [2, 3, 5, 7, 11][r.gen_range(0..5)];
        // Distinct values make any misplaced sample visible.
        let x: Vec<f32> = (0..len).map(|i| i as f32 + r.gen_range(0.0..0.5)).collect();
        let rows = mpd_reshape(&x, p);
        let cols = len.div_ceil(p);
        let mut seen = vec![0usize; len];
        let mut bad_cell = false;
        for (row, vals) in rows.iter().enumerate() {
            for (c, v) in vals.iter().enumerate() {
                let j = c * p + row;
                let src = if j < len { j } else { 2 * (len - 1) - j };
                bad_cell |= *v != x[src];
                if j < len {
                    seen[j] += 1;
                }
            }
        }
        if rows.len() != p || rows.iter().any(|r| r.len() != cols) || bad_cell || seen.iter().any(|&n| n != 1) {
            problems.push(format!("case {case}: reshape len {len} p {p}"));
        }
        let (idx, _) = mpd_index(len, p);
        let folded = Mpd::<f32>::fold(&Tensor::new(x.clone(), &[1, 1, len]), p);
        if folded.shape() != [p, 1, cols] || folded.data() != rows.concat().as_slice() || idx.len() != p * cols {
            problems.push(format!("case {case}: fold layout"));
        }

        // Each scale sees means over 2^k consecutive samples.
        let xd: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let inputs = msd.block_inputs(&Tensor::new(xd.clone(), &[1, 1, len]));
        for (k, got) in inputs.iter().enumerate() {
            let w = 1usize << k;
            let oracle: Vec<f64> = (0..len / w).map(|t| xd[t * w..(t + 1) * w].iter().sum::<f64>() / w as f64).collect();
            let close = got.data().len() == oracle.len() && got.data().iter().zip(&oracle).all(|(a, b)| (a - b).abs() <= 1e-12);
            if !close {
                problems.push(format!("case {case}: msd scale {k}"));
            }
        }
    }
    verdict("mpd bijection and msd pooling", problems.is_empty(), &format!("100 inputs, problems {problems:?}"));
}

#[test]
fn streaming_equivalence() {
    let cfg = ModelConfig::desk();
    let model = CodecModel::init(&cfg, 15).unwrap();
    let mut r = rng(16);
    let mut failures = Vec::new();
    for case in 0..20 {
        let len = r.gen_range(2 * 16000..3 * 16000);
        let x = synth_speech(&mut r, if case % 2 == 0 { Gender::Male } else { Gender::Female }, len, 16000);
        let bytes = model.encode(&x).unwrap();
        let y = model.decode(&bytes).unwrap();

        let mut enc = StreamEncoder::new(&model).unwrap();
        let mut streamed = Vec::new();
        let mut pos = 0;
        while pos < x.len() {
            let n = r.gen_range(1..4000).min(x.len() - pos);
            streamed.extend(enc.push(&x[pos..pos + n]).unwrap());
            pos += n;
        }
        streamed.extend(enc.finish().unwrap());

        let mut dec = StreamDecoder::new(&model);
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < streamed.len() {
            let n = r.gen_range(1..300).min(streamed.len() - pos);
            out.extend(dec.push(&streamed[pos..pos + n]).unwrap());
            pos += n;
        }
        out.extend(dec.finish().unwrap());
        let same = streamed == bytes && out.len() == y.len() && out.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            failures.push(case);
        }
    }
    verdict("streaming equivalence", failures.is_empty(), &format!("20 random chunkings, failing cases {failures:?}"));
}

#[test]
fn toy_training_regression() {
    let cfg = ModelConfig::desk();
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(dir.path(), 60, 10.0, 16000, 7).unwrap();
    let corpus = load_corpus(dir.path(), 16000).unwrap();
    let minutes = corpus.total_samples() as f64 / 16000.0 / 60.0;
    let pre = corpus.segments(cfg.train.pretrain_segment_length, 1);
    let segs = corpus.segments(cfg.train.segment_length, 2);

    let mut finite = true;
    let mut et = EncoderTrainer::new(&cfg).unwrap();
    for _ in 0..5000 {
        let m = et.step(&pre).unwrap();
        finite &= m.loss.is_finite();
    }
    let (acc_s, acc_l) = evaluate_nce(&et.encoder, &pre, 20, 8, 99).unwrap();
    let chance = 1.0 / (cfg.codec.negatives_per_positive + 1) as f64;

    let q = cogcodec::trainer::calibrate(&et.encoder, &pre, cfg.codec.step_multiplier, 64).unwrap();
    let before = nn::snapshot(&et.encoder);
    let mut dt = DecoderTrainer::new(&cfg, et.encoder, q).unwrap();
    let mut mel = Vec::new();
    for _ in 0..2000 {
        let m = dt.step(&segs).unwrap();
        finite &= [m.d_loss, m.g_adv, m.cc_s, m.cc_l, m.mel, m.fm, m.total].iter().all(|v| v.is_finite());
        mel.push(m.mel as f64);
    }
    let frozen = nn::snapshot(&dt.encoder) == before;
    let ma = |end: usize| mel[end - 100..end].iter().sum::<f64>() / 100.0;
    let (m100, m2000) = (ma(100), ma(2000));
    let drop = 1.0 - m2000 / m100;

    let ok = (minutes - 10.0).abs() < 1e-9 && acc_s > 2.0 * chance && acc_l > 2.0 * chance && drop >= 0.30 && finite && frozen;
    verdict(
        "toy training regression",
        ok,
        &format!(
            "{minutes} min corpus, accuracy short {acc_s:.3} long {acc_l:.3} (need > {:.3}), mel MA {m100:.4} -> {m2000:.4} ({:.1}% drop, need >= 30%), finite {finite}, encoder unchanged {frozen}",
            2.0 * chance,
            100.0 * drop
        ),
    );
}
