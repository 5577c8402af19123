//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Criteria 8 and 9 train the desk-profile network twice, which dominates
//! the runtime. Their artifacts are kept under the cargo target tmp dir.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sdemg::baselines::{detect_r_peaks, hp_denoise, subtract_template, ts_denoise, TsConfig};
use sdemg::diffusion::{loss_and_grad, q_sample, sample_from, training_loss, EpsModel, SamplerConfig, SigmaMode, TrainingBatch};
use sdemg::harness::*;
use sdemg::ingest::{biphasic_template, decode_212, gen_surrogate, read_wfdb, SurrogateSpec};
use sdemg::metrics::{arv_vector, mf_vector, rmse, snr_improvement};
use sdemg::nn::{ScoreNetConfig, ScoreNetParams};
use sdemg::preprocess::{condition_ecg, condition_semg, mix_at_snr, normalize_maxabs, MODEL_FS};
use sdemg::schedules::{cosine_schedule, NoiseSchedule};
use sdemg::Waveform;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

// 1 -------------------------------------------------------------------------

fn schedule_invariants(s: &NoiseSchedule, clip: f64) -> Result<(), String> {
    let t_max = s.steps();
    if s.betas().len() != t_max || s.alpha_bars().len() != t_max || s.gammas().len() != t_max + 1 {
        return Err(format!("T={t_max}: table lengths"));
    }
    if s.gammas()[0] != 1.0 || s.alpha_bar(0).unwrap() != 1.0 {
        return Err(format!("T={t_max}: gamma_0 / alpha_bar_0 not 1"));
    }
    let mut prod = 1.0;
    let mut prev = 1.0;
    for t in 1..=t_max {
        let (b, a, ab) = (s.beta(t).unwrap(), s.alpha(t).unwrap(), s.alpha_bar(t).unwrap());
        if !(b > 0.0 && b <= clip) {
            return Err(format!("T={t_max} t={t}: beta {b} outside (0, {clip}]"));
        }
        if (a - (1.0 - b)).abs() > 1e-15 {
            return Err(format!("T={t_max} t={t}: alpha != 1 - beta"));
        }
        prod *= a;
        if (ab - prod).abs() > 1e-12 * prod.max(1e-300) {
            return Err(format!("T={t_max} t={t}: alpha_bar is not the running product"));
        }
        if !(ab > 0.0 && ab < prev) {
            return Err(format!("T={t_max} t={t}: alpha_bar not strictly decreasing in (0, 1]"));
        }
        if (s.gamma(t).unwrap() - ab.sqrt()).abs() > 1e-15 {
            return Err(format!("T={t_max} t={t}: gamma != sqrt(alpha_bar)"));
        }
        prev = ab;
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    for t in [1, 25, 50, 200] {
        let s = cosine_schedule(t, 0.008, 0.999).unwrap();
        if let Err(e) = schedule_invariants(&s, 0.999) {
            return outcome(false, e);
        }
    }
    let f = |t: f64| (((t / 1000.0 + 0.008) / 1.008) * FRAC_PI_2).cos().powi(2);
    let want = f(500.0) / f(0.0);
    let got = cosine_schedule(1000, 0.008, 0.999).unwrap().alpha_bar(500).unwrap();
    let err = (got - want).abs();
    outcome(err <= 1e-12, format!("alpha_bar(500 of 1000) error {err:.2e}"))
}

// 2 -------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let n = 100_000;
    let x0_val = 0.7;
    let x0 = vec![x0_val; n];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for ab in [0.9, 0.5, 0.1] {
        let eps = gaussian(&mut rng, n);
        let x = q_sample(&x0, ab, &eps).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target_var = 1.0 - ab;
        let se_mean = (target_var / n as f64).sqrt();
        let se_var = target_var * (2.0 / (n - 1) as f64).sqrt();
        let z_mean = (mean - ab.sqrt() * x0_val).abs() / se_mean;
        let z_var = (var - target_var).abs() / se_var;
        worst = worst.max(z_mean).max(z_var);
    }
    outcome(worst <= 3.0, format!("largest deviation {worst:.2} standard errors"))
}

// 3 -------------------------------------------------------------------------

struct ExactEps {
    x0: Vec<f64>,
}

impl EpsModel for ExactEps {
    type Cond = ();
    fn condition(&self, _: &[f64]) -> sdemg::Result<()> {
        Ok(())
    }
    fn predict(&self, x_t: &[f64], _: &(), s: f64) -> sdemg::Result<Vec<f64>> {
        let d = (1.0 - s * s).sqrt();
        Ok(x_t.iter().zip(&self.x0).map(|(x, x0)| (x - s * x0) / d).collect())
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = gaussian(&mut rng, 1000);
    let model = ExactEps { x0: x0.clone() };
    let mut worst = 0.0f64;
    for t in [1, 5, 25] {
        let schedule = cosine_schedule(t, 0.008, 0.999).unwrap();
        let eps = gaussian(&mut rng, x0.len());
        let x_t = q_sample(&x0, schedule.alpha_bar(t).unwrap(), &eps).unwrap();
        let cfg = SamplerConfig {
            schedule,
            sigma_mode: SigmaMode::Zero,
            seed: 0,
            x0_clip: None,
        };
        let out = sample_from(&model, &x0, x_t, &cfg, &mut rng).unwrap();
        let num: f64 = out.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = x0.iter().map(|v| v * v).sum();
        worst = worst.max((num / den).sqrt());
    }
    outcome(worst <= 1e-4, format!("largest relative error {worst:.2e}"))
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let cfg = ScoreNetConfig {
        segment_len: 256,
        base_channels: 8,
        n_blocks: 1,
        kernel_sizes: vec![3, 5, 9],
        embed_dim: 16,
    };
    let mut params = ScoreNetParams::<f64>::init(&cfg, 4).unwrap();
    // move the zero-initialized bridge weights off zero so every path is live
    params.perturb(5, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0: Vec<Vec<f64>> = (0..2).map(|_| gaussian(&mut rng, 256)).collect();
    let xt: Vec<Vec<f64>> = (0..2).map(|_| gaussian(&mut rng, 256)).collect();
    let sched = cosine_schedule(10, 0.008, 0.999).unwrap();
    let batch = TrainingBatch::draw(x0, xt, &sched, &mut rng).unwrap();
    let (_, grads) = loss_and_grad(&params, &batch).unwrap();
    let n_params = params.param_count();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let count = 60;
    for _ in 0..count {
        let i = rng.gen_range(0..n_params);
        let orig = params.values()[i];
        params.values_mut()[i] = orig + h;
        let up = training_loss(&params, &batch).unwrap();
        params.values_mut()[i] = orig - h;
        let down = training_loss(&params, &batch).unwrap();
        params.values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    outcome(worst <= 1e-3, format!("{count} parameters, largest relative error {worst:.2e}"))
}

// 5 -------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(100..2000);
        let clean = Waveform::new(gaussian(&mut rng, n), 1000, "c").unwrap();
        let amp: f64 = rng.gen_range(0.01..10.0);
        let ecg = Waveform::new(gaussian(&mut rng, n).into_iter().map(|v| amp * v).collect(), 1000, "e").unwrap();
        let snr = rng.gen_range(-15.0..=0.0);
        let pair = mix_at_snr(&clean, &ecg, snr).unwrap();
        let pc: f64 = clean.samples().iter().map(|v| v * v).sum();
        let pn: f64 = pair.noisy.samples().iter().zip(clean.samples()).map(|(y, c)| (y - c).powi(2)).sum();
        worst = worst.max((10.0 * (pc / pn).log10() - snr).abs());
    }
    outcome(worst <= 1e-6, format!("largest deviation {worst:.2e} dB over 1000 cases"))
}

// 6 -------------------------------------------------------------------------

fn sine(freq: f64, n: usize, fs: u32) -> Waveform {
    let s = (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs as f64).sin()).collect();
    Waveform::new(s, fs, "sine").unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let clean = gaussian(&mut rng, 5000);
    let noisy: Vec<f64> = clean.iter().map(|c| c + rng.gen_range(-1.0..1.0)).collect();
    let identity = snr_improvement(&clean, &noisy, &noisy).unwrap();

    let s = sine(10.0, 5000, 1000);
    let rms_err = (rmse(&vec![0.0; 5000], s.samples()).unwrap() - 0.5f64.sqrt()).abs();

    let tone = sine(100.0, 5000, 1000);
    let bin = 1000.0 / 500.0;
    let mf = mf_vector(&tone, 0.5).unwrap();
    let mf_err = mf.values.iter().fold(0.0f64, |m, v| m.max((v - 100.0).abs()));

    let arv = arv_vector(&s, 0.5).unwrap();
    let arv_err = arv.iter().fold(0.0f64, |m, v| m.max((v - 2.0 / PI).abs()));

    let pass = identity == 0.0 && rms_err <= 1e-9 && mf_err <= bin && arv_err <= 1e-3;
    outcome(
        pass,
        format!("identity {identity} dB, RMS error {rms_err:.1e}, MF error {mf_err:.2e} Hz (bin {bin} Hz), ARV error {arv_err:.1e}"),
    )
}

// 7 -------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let n_pairs = 100;
    let pairs: Vec<_> = (0..n_pairs)
        .map(|i| {
            let raw = gen_surrogate(&SurrogateSpec::semg(5.0, 2000, 7000 + i)).unwrap();
            let clean = normalize_maxabs(&condition_semg(&raw, MODEL_FS).unwrap()).unwrap().0;
            let rate = 55.0 + (i % 9) as f64 * 5.0;
            let ecg_raw = gen_surrogate(&SurrogateSpec::ecg(5.0, 128, 9000 + i, rate)).unwrap();
            let ecg = condition_ecg(&ecg_raw, MODEL_FS).unwrap();
            let len = clean.len().min(ecg.len());
            let clean = clean.with_samples(clean.samples()[..len].to_vec()).unwrap();
            let ecg = ecg.with_samples(ecg.samples()[..len].to_vec()).unwrap();
            mix_at_snr(&clean, &ecg, -10.0).unwrap()
        })
        .collect();
    let (mut hp_sum, mut ts_sum, mut fallbacks) = (0.0, 0.0, 0);
    for p in &pairs {
        let c = p.clean.samples();
        let hp = hp_denoise(&p.noisy).unwrap();
        hp_sum += snr_improvement(c, p.noisy.samples(), hp.samples()).unwrap();
        let ts = ts_denoise(&p.noisy, &TsConfig::default()).unwrap();
        fallbacks += ts.fallback as usize;
        ts_sum += snr_improvement(c, p.noisy.samples(), ts.denoised.samples()).unwrap();
    }
    let (hp_mean, ts_mean) = (hp_sum / n_pairs as f64, ts_sum / n_pairs as f64);

    // exact periodic template train, every pulse inside the record
    let width = 80;
    let tpl = biphasic_template(width);
    let mut x = vec![0.0; 10_000];
    let mut p = 400;
    while p + width <= x.len() {
        x[p..p + width].iter_mut().zip(&tpl).for_each(|(a, b)| *a += b);
        p += 800;
    }
    let train = Waveform::new(x.clone(), 1000, "train").unwrap();
    let cfg = TsConfig::default();
    let residual_frac = match detect_r_peaks(&train, &cfg) {
        Ok(peaks) => {
            let half = (cfg.template_halfwidth_s * 1000.0).round() as usize;
            let r = subtract_template(&x, &peaks, half).unwrap();
            r.iter().map(|v| v * v).sum::<f64>() / x.iter().map(|v| v * v).sum::<f64>()
        }
        Err(_) => 1.0,
    };
    outcome(
        hp_mean > 0.0 && ts_mean > 0.0 && residual_frac <= 0.01,
        format!(
            "mean SNR_imp hp {hp_mean:.2} dB, ts {ts_mean:.2} dB ({fallbacks} fallbacks); template-train residual {:.3}%",
            100.0 * residual_frac
        ),
    )
}

// 8 and 9 -------------------------------------------------------------------

struct DeskRun {
    cfg: ExperimentConfig,
    train: TrainSummary,
    eval: EvalSummary,
}

fn desk_config(work: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
    cfg.paths.work_dir = Some(work.to_path_buf());
    cfg
}

fn denoise_and_evaluate(cfg: &ExperimentConfig, out: &Path) -> sdemg::Result<EvalSummary> {
    let input = cfg.test_dir().join(NOISY_FILE);
    let mut files = Vec::new();
    for m in [Method::Sdemg, Method::Hp, Method::Ts] {
        let path = out.join(format!("{m}.seg"));
        cmd_denoise(cfg, m, &input, &path, cfg.seed)?;
        files.push((m, path));
    }
    cmd_evaluate(&cfg.test_dir(), &files, &out.join("eval"))
}

fn desk_run(root: &Path) -> sdemg::Result<DeskRun> {
    let cfg = desk_config(&root.join("run"));
    cmd_synth(&cfg, &cfg.corpus_dir())?;
    cmd_prepare(&cfg)?;
    let train = cmd_train(&cfg)?;
    let eval = denoise_and_evaluate(&cfg, &cfg.denoised_dir())?;
    Ok(DeskRun { cfg, train, eval })
}

fn criterion_8(run: &sdemg::Result<DeskRun>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline error: {e}")),
    };
    let sd = run.eval.overall(Method::Sdemg).unwrap();
    let id = run.eval.overall(Method::Identity).unwrap();
    let pairs = PairedSplit::load(&run.cfg.train_dir()).map(|s| s.len()).unwrap_or(0);
    let minutes = run.train.seconds / 60.0;
    let val_ratio = run.train.best_val_loss / run.train.initial().val_loss;
    let pass = pairs == 200 && sd.snr_imp_db >= 3.0 && sd.rmse < id.rmse && minutes <= 30.0;
    outcome(
        pass,
        format!(
            "{pairs} training pairs; sdemg SNR_imp {:.2} dB over {} test pairs, RMSE {:.4e} vs identity {:.4e}; training {minutes:.1} min; best/initial val loss {val_ratio:.3}",
            sd.snr_imp_db, sd.n, sd.rmse, id.rmse
        ),
    )
}

fn criterion_9(root: &Path, run: &sdemg::Result<DeskRun>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("desk run unavailable: {e}")),
    };
    // denoise + evaluate again from the same checkpoint and seed
    let second = root.join("repeat");
    let eval2 = match denoise_and_evaluate(&run.cfg, &second) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("repeat denoise failed: {e}")),
    };
    let same_reports = [
        (&run.eval.rows_path, &eval2.rows_path),
        (&run.eval.aggregate_path, &eval2.aggregate_path),
        (&run.eval.report_path, &eval2.report_path),
    ]
    .iter()
    .all(|(a, b)| std::fs::read(a).ok() == std::fs::read(b).ok());

    // train again on the same prepared data into a separate checkpoint
    let mut cfg = run.cfg.clone();
    cfg.paths.checkpoint = Some(root.join("retrain/model.sdck"));
    cfg.paths.report = Some(root.join("retrain/train_log.csv"));
    let retrain = match cmd_train(&cfg) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("repeat training failed: {e}")),
    };
    let d_train = (retrain.last().train_loss - run.train.last().train_loss).abs();
    let d_val = (retrain.last().val_loss - run.train.last().val_loss).abs();
    outcome(
        same_reports && d_train <= 1e-4 && d_val <= 1e-4,
        format!("report files identical: {same_reports}; final loss differences train {d_train:.1e}, val {d_val:.1e}"),
    )
}

// 10 ------------------------------------------------------------------------

fn criterion_10(root: &Path) -> Outcome {
    // pairs (s1, s2): b0 = s1 low byte, b1 = s1 high nibble | s2 high nibble << 4, b2 = s2 low byte
    let bytes = [
        0x01, 0xF0, 0xFF, // 1, -1
        0xFF, 0x87, 0x00, // 2047, -2048
        0xD4, 0x0E, 0x64, // -300, 100
        0x00, 0x00, 0x00, // 0, 0
        0x23, 0x01, // 291, odd tail
    ];
    let want: Vec<i16> = vec![1, -1, 2047, -2048, -300, 100, 0, 0, 291];
    let decoded = decode_212(&bytes, want.len());
    let direct = decoded.as_ref().map(|d| d == &want).unwrap_or(false);

    // the same bytes as a two-channel record on disk
    let dir = root.join("wfdb");
    let _ = std::fs::create_dir_all(&dir);
    let header = "rec 2 360 4\nrec.dat 212 200 12 0 0 0 0 ch1\nrec.dat 212 100(5)/mV 12 0 0 0 0 ch2\n";
    let record = std::fs::write(dir.join("rec.hea"), header)
        .and_then(|_| std::fs::write(dir.join("rec.dat"), &bytes[..12]))
        .map_err(|e| e.to_string())
        .and_then(|_| read_wfdb(dir.join("rec.hea")).map_err(|e| e.to_string()));
    let physical = match record {
        Ok(r) => {
            let ch1: Vec<f64> = [1.0, 2047.0, -300.0, 0.0].iter().map(|v| v / 200.0).collect();
            let ch2: Vec<f64> = [-1.0, -2048.0, 100.0, 0.0].iter().map(|v| (v - 5.0) / 100.0).collect();
            r.channels.len() == 2 && r.channels[0].samples() == ch1.as_slice() && r.channels[1].samples() == ch2.as_slice()
        }
        Err(_) => false,
    };
    outcome(
        direct && physical,
        format!("byte decode exact: {direct}; record physical units exact: {physical}"),
    )
}

// ---------------------------------------------------------------------------

fn scratch_root() -> PathBuf {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).expect("scratch directory");
    root
}

fn main() {
    let root = scratch_root();
    let mut stdout = std::io::stdout();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, limit_s: Option<f64>, started: Instant, o: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        let in_time = limit_s.map_or(true, |l| secs < l);
        let pass = o.pass && in_time;
        failures += (!pass) as usize;
        let limit = limit_s.map_or(String::new(), |l| format!(", limit {l} s"));
        let _ = writeln!(
            stdout,
            "criterion {n:>2} {}: {name}: {} ({secs:.1} s{limit})",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
        let _ = stdout.flush();
    };

    let t = Instant::now();
    report(1, "schedule suite", Some(1.0), t, criterion_1());
    let t = Instant::now();
    report(2, "forward marginal", Some(10.0), t, criterion_2());
    let t = Instant::now();
    report(3, "oracle inversion", Some(5.0), t, criterion_3());
    let t = Instant::now();
    report(4, "gradient check", Some(60.0), t, criterion_4());
    let t = Instant::now();
    report(5, "mixing precision", Some(5.0), t, criterion_5());
    let t = Instant::now();
    report(6, "metric oracles", Some(5.0), t, criterion_6());
    let t = Instant::now();
    report(7, "baseline sanity", Some(60.0), t, criterion_7());
    let t = Instant::now();
    let run = desk_run(&root);
    report(8, "desk end-to-end", None, t, criterion_8(&run));
    let t = Instant::now();
    report(9, "determinism", None, t, criterion_9(&root, &run));
    let t = Instant::now();
    report(10, "WFDB 212 decode", None, t, criterion_10(&root));

    if failures > 0 {
        let _ = writeln!(std::io::stdout(), "{failures} criteria failed");
        std::process::exit(1);
    }
}
