use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use qbye_core::audio::{load_wav, AudioClip, FbankExtractor};
use qbye_core::data::{build_eval_set, synth_dataset, DatasetManifest, Split, SynthConfig};
use qbye_core::detect::{enroll as enroll_profile, write_events_tsv, EnrollmentProfile, Matcher, StreamDetector};
use qbye_core::encoder::{param_breakdown, EmbeddingModel, EncoderConfig};
use qbye_core::eval::{
    ablation_report, frr_at, roc, roc_svg, score_eval_set, write_roc_tsv, AblationVariant, EvalError, QbyeEvalSet,
};
use qbye_core::train::{fit, EpochRecord, LabeledSet, QbyeValidator, TrainError, TrainInputs, TrainState};
use qbye_core::util::derive_seed;

use crate::config::RunConfig;
use crate::exit::{eval_code, train_code, usage, Failure, OrExit, CONFIG, DATA, NO_EVENTS, OK};
use crate::{AblateArgs, DetectArgs, EnrollArgs, EvalArgs, FeaturesArgs, ParamcountArgs, SynthArgs, TrainArgs};

fn train_failure(e: TrainError) -> Failure {
    Failure {
        code: train_code(&e),
        error: e.into(),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    Failure {
        code: eval_code(&e),
        error: e.into(),
    }
}

fn manifest_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    flag.clone()
        .or_else(|| cfg.paths.manifest.clone())
        .ok_or_else(|| usage("no manifest given: pass --manifest or set paths.manifest"))
}

fn babble(cfg: &RunConfig, why: &str) -> Result<AudioClip, Failure> {
    let path = cfg
        .paths
        .babble
        .as_ref()
        .ok_or_else(|| usage(format!("{why} needs babble noise: set paths.babble")))?;
    load_wav(path)
        .with_context(|| format!("cannot load babble {}", path.display()))
        .or_exit(DATA)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .or_exit(DATA)
}

fn load_model(path: &Path) -> Result<EmbeddingModel, Failure> {
    EmbeddingModel::load(path)
        .with_context(|| format!("cannot load model {}", path.display()))
        .or_exit(DATA)
}

pub fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<u8, Failure> {
    let mut enc = cfg.encoder.clone();
    let mut tc = cfg.train.clone();
    if let Some(v) = &a.variant {
        let v: AblationVariant = v.parse().map_err(usage)?;
        (enc, tc.loss) = v.apply(&enc, &tc.loss);
    }
    let manifest = DatasetManifest::load(&manifest_path(&a.manifest, cfg)?).or_exit(DATA)?;
    let vocab = manifest.vocab(tc.vocab_size);
    let mut state = TrainState::new(&cfg.features, &enc, &tc, vocab.clone()).map_err(train_failure)?;
    let inputs = TrainInputs {
        train: LabeledSet::from_manifest(&manifest, Split::Train, &vocab).map_err(train_failure)?,
        dev: LabeledSet::from_manifest(&manifest, Split::Dev, &vocab).map_err(train_failure)?,
        babble: if tc.augment { Some(babble(cfg, "augmentation")?) } else { None },
    };
    let val_set =
        build_eval_set(&manifest, Split::InternalVal, derive_seed(cfg.seed, "internal-val"), None).or_exit(DATA)?;
    let mut validator =
        QbyeValidator::new(val_set, cfg.detector.clone(), tc.val_fa_target, cfg.workers).map_err(train_failure)?;

    create_dir(&a.out)?;
    let resolved = RunConfig {
        encoder: enc,
        train: tc,
        ..cfg.clone()
    };
    fs::write(a.out.join("config.toml"), resolved.to_toml()).or_exit(DATA)?;
    let ckpt = a.out.join("best.ckpt");
    let mut log = BufWriter::new(File::create(a.out.join("train.log")).or_exit(DATA)?);
    writeln!(log, "{}", EpochRecord::LOG_HEADER).or_exit(DATA)?;
    let summary = fit(&mut state, &inputs, &mut validator, |r, ck| {
        writeln!(log, "{}", r.log_line())?;
        log.flush()?;
        if let Some(ck) = ck {
            ck.save(&ckpt)?;
        }
        eprintln!("{}{}", r.log_line(), if r.saved { "\tsaved" } else { "" });
        Ok(())
    })
    .map_err(train_failure)?;
    if summary.best.is_none() {
        return Err(Failure {
            code: DATA,
            error: anyhow!("no checkpoint was saved"),
        });
    }
    println!("{}", ckpt.display());
    Ok(OK)
}

pub fn enroll(_cfg: &RunConfig, a: &EnrollArgs) -> Result<u8, Failure> {
    if a.wavs.len() != 3 {
        return Err(usage(format!("enroll needs exactly 3 WAVs, got {}", a.wavs.len())));
    }
    let model = load_model(&a.model)?;
    let clips = a
        .wavs
        .iter()
        .map(|p| load_wav(p).with_context(|| format!("cannot load {}", p.display())))
        .collect::<Result<Vec<_>, _>>()
        .or_exit(DATA)?;
    let profile = enroll_profile(a.keyword.clone(), &clips, &model).or_exit(DATA)?;
    profile.save(&a.out).or_exit(DATA)?;
    println!("{}", a.out.display());
    Ok(OK)
}

pub fn detect(cfg: &RunConfig, a: &DetectArgs) -> Result<u8, Failure> {
    let mut det = cfg.detector.clone();
    if let Some(t) = a.threshold {
        det.threshold = t;
    }
    det.validate().or_exit(CONFIG)?;
    let model = load_model(&a.model)?;
    let profile = EnrollmentProfile::load(&a.profile)
        .with_context(|| format!("cannot load profile {}", a.profile.display()))
        .or_exit(DATA)?;
    let audio = load_wav(&a.wav)
        .with_context(|| format!("cannot load {}", a.wav.display()))
        .or_exit(DATA)?;
    if audio.len() < det.window_samples() {
        return Err(Failure {
            code: DATA,
            error: anyhow!(
                "{} has {} samples, shorter than one {}-sample window",
                a.wav.display(),
                audio.len(),
                det.window_samples()
            ),
        });
    }
    let matcher = Matcher::new(&model, &profile).or_exit(DATA)?;
    let mut detector = StreamDetector::new(matcher, profile.keyword_id(), &det).or_exit(CONFIG)?;
    let mut out = std::io::stdout().lock();
    let mut events = 0usize;
    for chunk in audio.samples().chunks(det.hop_samples()) {
        let found = detector.push(chunk).or_exit(DATA)?;
        if !found.is_empty() {
            write_events_tsv(&mut out, &found).or_exit(DATA)?;
            out.flush().or_exit(DATA)?;
            events += found.len();
        }
    }
    Ok(if events > 0 { OK } else { NO_EVENTS })
}

fn eval_set(cfg: &RunConfig, manifest: &Option<PathBuf>) -> Result<QbyeEvalSet, Failure> {
    let split: Split = cfg.eval.split.parse().map_err(usage)?;
    let manifest = DatasetManifest::load(&manifest_path(manifest, cfg)?).or_exit(DATA)?;
    let noise = match cfg.eval.test_snr_db {
        Some(snr) => Some((babble(cfg, "eval.test_snr_db")?, snr)),
        None => None,
    };
    build_eval_set(&manifest, split, derive_seed(cfg.seed, "eval"), noise.as_ref().map(|(b, s)| (b, *s))).or_exit(DATA)
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<u8, Failure> {
    let model = load_model(&a.model)?;
    let set = eval_set(cfg, &a.manifest)?;
    let run = score_eval_set(&model, &set, &cfg.detector, cfg.workers).map_err(eval_failure)?;
    let curve = roc(&run).map_err(eval_failure)?;
    create_dir(&a.out)?;
    let mut f = BufWriter::new(File::create(a.out.join("roc.tsv")).or_exit(DATA)?);
    write_roc_tsv(&mut f, &curve).or_exit(DATA)?;
    f.flush().or_exit(DATA)?;
    if a.svg {
        let title = format!("ROC ({} h negatives)", run.negative_hours);
        fs::write(a.out.join("roc.svg"), roc_svg(&curve, &title)).or_exit(DATA)?;
    }
    let op = frr_at(&curve, cfg.eval.fa_target);
    println!("fa_target\tfrr\tthreshold\tfa_per_hour\tqualified\tpositives\tnegative_hours");
    println!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{:.4}",
        cfg.eval.fa_target,
        op.frr,
        op.threshold,
        op.fa_per_hour,
        op.qualified,
        run.positives.len(),
        run.negative_hours
    );
    Ok(OK)
}

pub fn ablate(cfg: &RunConfig, a: &AblateArgs) -> Result<u8, Failure> {
    if a.variants.len() < 2 {
        return Err(usage(format!("ablate needs at least 2 --variant NAME=CKPT, got {}", a.variants.len())));
    }
    let mut models = Vec::new();
    for v in &a.variants {
        let (name, path) = v
            .split_once('=')
            .ok_or_else(|| usage(format!("variant `{v}` is not NAME=CKPT")))?;
        models.push((name.to_string(), load_model(Path::new(path))?));
    }
    let set = eval_set(cfg, &a.manifest)?;
    let named: Vec<(String, &EmbeddingModel)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let table =
        ablation_report(&named, &set, &cfg.detector, cfg.eval.fa_target, cfg.workers).map_err(eval_failure)?;
    create_dir(&a.out)?;
    let mut text = Vec::new();
    table.write_tsv(&mut text).or_exit(DATA)?;
    fs::write(a.out.join("ablation.tsv"), &text).or_exit(DATA)?;
    std::io::stdout().write_all(&text).or_exit(DATA)?;
    Ok(OK)
}

pub fn paramcount(cfg: &RunConfig, a: &ParamcountArgs) -> Result<u8, Failure> {
    let enc = match a.profile.as_deref() {
        None => cfg.encoder.clone(),
        Some("small") => EncoderConfig::small(),
        Some("large") => EncoderConfig::large(),
        Some(other) => return Err(usage(format!("unknown profile `{other}` (expected small or large)"))),
    };
    enc.validate().or_exit(CONFIG)?;
    let parts = param_breakdown(&enc);
    for (name, n) in &parts {
        println!("{name}\t{n}");
    }
    println!("total\t{}", parts.iter().map(|(_, n)| n).sum::<usize>());
    Ok(OK)
}

pub fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<u8, Failure> {
    let scfg = SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        speakers: a.speakers,
        seed: derive_seed(cfg.seed, "synth"),
        negative_streams: a.negatives,
        val_negative_streams: a.val_negatives,
        negative_stream_s: a.stream_seconds,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(&scfg, &a.out).map_err(|e| {
        let code = if matches!(e, qbye_core::data::DataError::Invalid(_)) { CONFIG } else { DATA };
        Failure { code, error: e.into() }
    })?;
    eprintln!("{} entries", manifest.entries.len());
    println!("{}", a.out.join("manifest.tsv").display());
    Ok(OK)
}

pub fn features(cfg: &RunConfig, a: &FeaturesArgs) -> Result<u8, Failure> {
    let ex = FbankExtractor::new(&cfg.features).or_exit(CONFIG)?;
    let clip = load_wav(&a.wav)
        .with_context(|| format!("cannot load {}", a.wav.display()))
        .or_exit(DATA)?;
    let feats = ex.compute(clip.samples()).or_exit(DATA)?;
    eprintln!("{} frames x {} dims", feats.t(), feats.f());
    match &a.out {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p).or_exit(DATA)?);
            feats.write_dump(&mut f).or_exit(DATA)?;
            f.flush().or_exit(DATA)?;
        }
        None => {
            let mut out = BufWriter::new(std::io::stdout().lock());
            for t in 0..feats.t() {
                let row: Vec<String> = feats.frames().row(t).iter().map(|v| format!("{v:.6}")).collect();
                writeln!(out, "{}", row.join("\t")).or_exit(DATA)?;
            }
            out.flush().or_exit(DATA)?;
        }
    }
    Ok(OK)
}
