use std::path::{Path, PathBuf};

use xmodal_core::midi::corpus::{AUDIO_FILE, HEADER_FILE, MANIFEST_FILE};
use xmodal_core::midi::{generate_corpus, Corpus};
use xmodal_core::retrieval::{scoreboard, PoolConfig};
use xmodal_core::train::{load_run_checkpoint, train_on, CheckpointMeta, BEST_CKPT, HISTORY_FILE, LAST_CKPT};
use xmodal_core::validation::{run_test, BatteryConfig, Dashboard, Evaluator, TestId, ValidationReport};
use xmodal_core::Scalar;

use crate::config::ExperimentConfig;
use crate::manifest::ManifestBuilder;
use crate::{create_dir, write_json, Failure, Precision};

pub const CORPUS_DIR: &str = "corpus";
pub const CKPT_DIR: &str = "ckpt";
pub const REPORTS_DIR: &str = "reports";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const DASHBOARD_FILE: &str = "dashboard.json";
pub const EXPORT_FILE: &str = "embeddings.tsv";

fn sha256_json(value: &impl serde::Serialize) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

fn read_corpus(root: &Path) -> Result<Corpus, Failure> {
    let dir = root.join(CORPUS_DIR);
    if !dir.join(HEADER_FILE).exists() {
        return Err(Failure::io(&dir, "no corpus found (run gen-data first)"));
    }
    Ok(Corpus::read(&dir)?)
}

pub fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let exp = ExperimentConfig::load_or_default(config)?;
    let cc = exp.corpus_config();
    cc.validate()?;
    let seed = seed.or(exp.corpus_seed).unwrap_or(0);
    let m = ManifestBuilder::start("gen-data", config, sha256_json(&(&cc, seed)), seed);
    let corpus = generate_corpus(&cc, seed)?;
    let dir = out.join(CORPUS_DIR);
    corpus.write(&dir)?;
    let sidecar = format!("{AUDIO_FILE}.json");
    let outputs: Vec<PathBuf> = [HEADER_FILE, MANIFEST_FILE, AUDIO_FILE, sidecar.as_str()].iter().map(|f| dir.join(f)).collect();
    m.finish(&dir, &outputs)?;
    println!("generated {} items ({} pieces, seed {seed}) in {}", corpus.items.len(), cc.n_pieces, dir.display());
    Ok(())
}

pub fn train(
    config: Option<&Path>,
    arm: Option<&str>,
    seed: Option<u64>,
    out: &Path,
    precision: Precision,
) -> Result<(), Failure> {
    let exp = ExperimentConfig::load_or_default(config)?;
    let corpus = read_corpus(out)?;
    let mut tc = exp.train_config(arm)?;
    match &exp.corpus {
        None => tc.corpus = corpus.config.clone(),
        Some(c) if *c != corpus.config => {
            return Err(Failure::config(format!("config corpus differs from the corpus in {}", out.join(CORPUS_DIR).display())))
        }
        Some(_) => {}
    }
    match exp.corpus_seed {
        None => tc.corpus_seed = corpus.seed,
        Some(s) if s != corpus.seed => {
            return Err(Failure::config(format!("config corpus_seed {s} but the stored corpus has seed {}", corpus.seed)))
        }
        Some(_) => {}
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    tc.validate()?;

    let run = out.join(CKPT_DIR).join(format!("{}-s{}", tc.arm.arm, tc.seed));
    create_dir(&run)?;
    let m = ManifestBuilder::start("train", config, tc.hash(), tc.seed);
    let cfg_path = run.join(TRAIN_CONFIG_FILE);
    write_json(&cfg_path, &tc)?;
    let (best_epoch, best_s) = match precision {
        Precision::F32 => summary(train_on::<f32>(&tc, &corpus, Some(&run))?),
        Precision::F64 => summary(train_on::<f64>(&tc, &corpus, Some(&run))?),
    };
    let outputs: Vec<PathBuf> = [BEST_CKPT, LAST_CKPT, HISTORY_FILE, TRAIN_CONFIG_FILE].iter().map(|f| run.join(f)).collect();
    m.finish(&run, &outputs)?;
    match best_s {
        Some(s) => println!("arm {} seed {}: best S {:.1}% at epoch {best_epoch}", tc.arm.arm, tc.seed, 100.0 * s),
        None => println!("arm {} seed {}: trained {} epochs (no validation)", tc.arm.arm, tc.seed, tc.epochs),
    }
    println!("checkpoints in {}", run.display());
    Ok(())
}

fn summary<T>(o: xmodal_core::train::TrainOutcome<T>) -> (usize, Option<f64>) {
    (o.best_epoch, o.best_s)
}

/// `<root>` of a checkpoint stored as `<root>/ckpt/<run>/<file>`.
fn infer_root(checkpoint: &Path) -> Result<PathBuf, Failure> {
    let ckpt = checkpoint.parent().and_then(Path::parent);
    match ckpt {
        Some(c) if c.file_name().is_some_and(|n| n == CKPT_DIR) => Ok(c.parent().unwrap_or(Path::new(".")).to_path_buf()),
        _ => Err(Failure::config(format!(
            "cannot infer the run root from {}; pass --out",
            checkpoint.display()
        ))),
    }
}

fn run_name(checkpoint: &Path) -> String {
    checkpoint
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn pool_config(meta: &CheckpointMeta, path: Option<&Path>, seed: Option<u64>) -> Result<PoolConfig, Failure> {
    let mut pool = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("pool config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("pool config {}: {e}", p.display())))?
        }
        None => meta.train.pool,
    };
    if let Some(s) = seed {
        pool.seed = s;
    }
    pool.validate()?;
    Ok(pool)
}

struct Loaded<T> {
    meta: CheckpointMeta,
    model: xmodal_core::model::Model<T>,
    root: PathBuf,
    corpus: Corpus,
    reports: PathBuf,
}

fn load<T: Scalar>(checkpoint: &Path, out: Option<&Path>) -> Result<Loaded<T>, Failure> {
    if !checkpoint.is_file() {
        return Err(Failure::io(checkpoint, "checkpoint not found"));
    }
    let (meta, model) = load_run_checkpoint::<T>(checkpoint).map_err(|e| match e {
        xmodal_core::Error::NonFinite(_) => Failure::from(e),
        e => Failure { code: crate::EXIT_IO, message: format!("{}: {e}", checkpoint.display()) },
    })?;
    let root = match out {
        Some(o) => o.to_path_buf(),
        None => infer_root(checkpoint)?,
    };
    let corpus = read_corpus(&root)?;
    let reports = root.join(REPORTS_DIR).join(run_name(checkpoint));
    create_dir(&reports)?;
    Ok(Loaded { meta, model, root, corpus, reports })
}

pub fn eval(
    checkpoint: &Path,
    pool_path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    precision: Precision,
) -> Result<(), Failure> {
    match precision {
        Precision::F32 => eval_t::<f32>(checkpoint, pool_path, seed, out),
        Precision::F64 => eval_t::<f64>(checkpoint, pool_path, seed, out),
    }
}

fn eval_t<T: Scalar>(checkpoint: &Path, pool_path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let l = load::<T>(checkpoint, out)?;
    let pool = pool_config(&l.meta, pool_path, seed)?;
    let m = ManifestBuilder::start(&format!("eval-pool{}", pool.seed), pool_path, l.meta.train.hash(), pool.seed);
    let ev = Evaluator::new(&l.meta.train, &l.model, &l.corpus, pool)?;
    let e = ev.embed(&ev.clean_samples()?, false)?;
    let report = scoreboard(&l.meta.train.arm.arm, &l.meta.train.hash(), l.meta.train.seed, &ev.pool, &e.audio, &e.midi)?;
    let path = l.reports.join(format!("eval-pool{}.json", pool.seed));
    write_json(&path, &report)?;
    m.finish(&l.reports, &[path])?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(xmodal_core::Error::from)?);
    Ok(())
}

pub fn validate(
    checkpoint: &Path,
    tests: &[String],
    pool_path: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
    precision: Precision,
) -> Result<(), Failure> {
    let mut ids = tests.iter().map(|t| t.parse::<TestId>()).collect::<Result<Vec<_>, _>>()?;
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Failure::config("no tests requested".into()));
    }
    match precision {
        Precision::F32 => validate_t::<f32>(checkpoint, &ids, pool_path, seed, out),
        Precision::F64 => validate_t::<f64>(checkpoint, &ids, pool_path, seed, out),
    }
}

fn validate_t<T: Scalar>(
    checkpoint: &Path,
    ids: &[TestId],
    pool_path: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let l = load::<T>(checkpoint, out)?;
    let pool = pool_config(&l.meta, pool_path, None)?;
    let m = ManifestBuilder::start("validate", pool_path, l.meta.train.hash(), seed);
    let ev = Evaluator::new(&l.meta.train, &l.model, &l.corpus, pool)?;
    let bc = BatteryConfig { seed, export: Some(l.reports.join(EXPORT_FILE)), ..BatteryConfig::default() };
    let mut outputs = Vec::new();
    for &id in ids {
        let r = run_test(&ev, &l.corpus, id, &bc)?;
        let path = l.reports.join(format!("{}.json", r.test));
        write_json(&path, &r)?;
        outputs.push(path);
        if id == TestId::T10 {
            outputs.push(l.reports.join(EXPORT_FILE));
        }
        match r.metrics.get("reason") {
            Some(reason) => println!("{}: not-applicable ({})", r.test, reason.as_str().unwrap_or_default()),
            None => println!("{}: ok", r.test),
        }
    }
    let dash = write_dashboard(&l.root.join(REPORTS_DIR))?;
    outputs.push(dash);
    m.finish(&l.reports, &outputs)?;
    Ok(())
}

/// Rebuild `<reports>/dashboard.json` from every validation report below it.
fn write_dashboard(reports: &Path) -> Result<PathBuf, Failure> {
    let mut all = Vec::new();
    let runs = std::fs::read_dir(reports).map_err(|e| Failure::io(reports, e))?;
    let mut dirs: Vec<PathBuf> = runs.filter_map(|d| d.ok().map(|d| d.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Failure::io(&dir, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                name.starts_with('t') && name.ends_with(".json") && !name.contains("manifest")
            })
            .collect();
        files.sort();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| Failure::io(&f, e))?;
            if let Ok(r) = serde_json::from_str::<ValidationReport>(&text) {
                all.push(r);
            }
        }
    }
    let path = reports.join(DASHBOARD_FILE);
    write_json(&path, &Dashboard::from_reports(&all))?;
    Ok(path)
}
