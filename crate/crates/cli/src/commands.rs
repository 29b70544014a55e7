use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use xdoge::corpus::{
    dedup_cross_source, dedup_report, generate_synthetic, ingest_manifest, split, tokenize,
    write_corpus, Corpus, DedupReport, Manifest, SplitSpec, SyntheticConfig,
};
use xdoge::optimizer::{Trainer, TrainerState, XdogeConfig};
use xdoge::rescale::{
    plan, plan_report, Draw, LanguageInventory, LanguageSampler, PlanCaps, RescalePlan,
};
use xdoge::weights::{
    aggregate_languages, average_sets, divergence_report, smooth, DivergenceReport,
    LanguageWeightSet, Trajectory,
};
use xdoge::{Error, Result, WeightVector};

use crate::config::RunConfigFile;

pub const TRAJECTORY_FILE: &str = "trajectory.tsv";
pub const CHECKPOINT_FILE: &str = "state.ckpt";
pub const DOMAIN_WEIGHTS_FILE: &str = "weights_domain.tsv";
pub const LANGUAGE_WEIGHTS_FILE: &str = "weights_language.tsv";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Byte counts per language, the unit of the byte tokenizer.
fn byte_inventory(corpus: &Corpus) -> Result<LanguageInventory> {
    let mut available: BTreeMap<String, u64> = BTreeMap::new();
    for s in corpus.sources() {
        let bytes: u64 = s.documents().iter().map(|d| d.text.len() as u64).sum();
        *available.entry(s.language().to_string()).or_default() += bytes;
    }
    LanguageInventory::new(available.into_iter().filter(|(_, n)| *n > 0).collect())
}

/// Writes the cleaned corpus, `dedup_report.tsv` and a byte-level
/// `inventory.tsv` into `out_dir`.
pub fn cmd_dedup(manifest: &Path, out_dir: &Path, cross_source: bool) -> Result<DedupReport> {
    let corpus = ingest_manifest(&Manifest::from_path(manifest)?)?;
    let (cleaned, report) = if cross_source {
        dedup_cross_source(&corpus)
    } else {
        dedup_report(&corpus)
    };
    create_dir(out_dir)?;
    write_corpus(&cleaned, out_dir)?;
    write_file(&out_dir.join("dedup_report.tsv"), &report.to_string())?;
    if let Ok(inv) = byte_inventory(&cleaned) {
        inv.write(out_dir.join("inventory.tsv"))?;
    }
    Ok(report)
}

/// Generates a synthetic corpus into `out_dir` with its manifest and a
/// token-level `inventory.tsv`.
pub fn cmd_synth(config: &Path, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let corpus = generate_synthetic(&SyntheticConfig::from_path(config)?, seed)?;
    create_dir(out_dir)?;
    write_corpus(&corpus, out_dir)?;
    LanguageInventory::from_corpus(&corpus)?.write(out_dir.join("inventory.tsv"))?;
    Ok(out_dir.join("manifest.toml"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Thresholded,
    Unthresholded,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Thresholded => "thresholded",
            Mode::Unthresholded => "unthresholded",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OptimizeOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out_dir: Option<PathBuf>,
    pub steps: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Stop (and checkpoint) once this many steps are done.
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub out_dir: PathBuf,
    pub steps_done: u64,
    /// Set when the run reached its configured step count.
    pub weights: Option<LanguageWeightSet>,
}

/// Ingests, optionally dedups, tokenizes and splits the corpus; returns the
/// training part.
pub fn training_corpus(cfg: &RunConfigFile) -> Result<Corpus> {
    let mut corpus = ingest_manifest(&Manifest::from_path(&cfg.manifest)?)?;
    if cfg.dedup {
        corpus = dedup_report(&corpus).0;
    }
    let corpus = tokenize(&corpus, cfg.tokenizer.build()?.as_ref())?;
    if cfg.valid_fraction == 0.0 && cfg.test_fraction == 0.0 {
        return Ok(corpus);
    }
    let spec = SplitSpec::new(cfg.valid_fraction, cfg.test_fraction, cfg.split_seed)?;
    Ok(split(&corpus, &spec)?.0)
}

pub fn effective_config(opts: &OptimizeOptions) -> Result<RunConfigFile> {
    let mut cfg = RunConfigFile::from_path(&opts.config)?;
    if let Some(s) = opts.seed {
        cfg.xdoge.seed = s;
    }
    if let Some(m) = opts.mode {
        cfg.xdoge.thresholded = m == Mode::Thresholded;
    }
    if let Some(n) = opts.steps {
        cfg.xdoge.steps = n;
    }
    if cfg.xdoge.vocab_size.is_none() {
        cfg.xdoge.vocab_size = Some(cfg.tokenizer.build()?.vocab_size());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_trajectory(
    path: &Path,
    trainer: &Trainer<'_>,
    resume: bool,
) -> Result<(Trajectory, BufWriter<File>)> {
    let mut traj = Trajectory::new(trainer.fingerprint());
    if resume {
        let prior = Trajectory::read(path)?;
        if prior.config_fingerprint() != trainer.fingerprint() {
            return Err(Error::Config(format!(
                "{} was written under a different configuration",
                path.display()
            )));
        }
        for r in prior.records() {
            if r.step <= trainer.state().step {
                traj.push(r.clone())?;
            }
        }
        write_file(path, &traj.to_tsv())?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        return Ok((traj, BufWriter::new(file)));
    }
    traj.push(trainer.initial_record()?)?;
    write_file(path, &traj.to_tsv())?;
    let file = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    Ok((traj, BufWriter::new(file)))
}

/// Trains the proxy, appending one trajectory row per step. A run that
/// aborts keeps the rows written so far.
pub fn cmd_optimize(opts: &OptimizeOptions) -> Result<OptimizeOutcome> {
    let cfg = effective_config(opts)?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    create_dir(&out_dir)?;
    let corpus = training_corpus(&cfg)?;
    let xcfg: XdogeConfig = cfg.xdoge.clone();
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let mut trainer = if opts.resume {
        let (state, fp) = TrainerState::load(&ckpt_path)?;
        Trainer::resume(xcfg.clone(), &corpus, state, &fp)?
    } else {
        Trainer::new(xcfg.clone(), &corpus, None)?
    };
    write_file(&out_dir.join("effective_config.toml"), &cfg.to_toml())?;

    let traj_path = out_dir.join(TRAJECTORY_FILE);
    let (mut traj, mut writer) = open_trajectory(&traj_path, &trainer, opts.resume)?;
    let stop = opts.stop_at.unwrap_or(u64::MAX);
    while !trainer.is_done() && trainer.state().step < stop {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                writer.flush().map_err(io_err(&traj_path))?;
                return Err(e);
            }
        };
        writeln!(writer, "{}", traj.format_record(&record))
            .and_then(|_| writer.flush())
            .map_err(io_err(&traj_path))?;
        traj.push(record)?;
        if cfg.checkpoint_every > 0 && trainer.state().step % cfg.checkpoint_every == 0 {
            trainer.state().save(&ckpt_path, trainer.fingerprint())?;
        }
    }
    trainer.state().save(&ckpt_path, trainer.fingerprint())?;
    let steps_done = trainer.state().step;
    if !trainer.is_done() {
        return Ok(OptimizeOutcome {
            out_dir,
            steps_done,
            weights: None,
        });
    }

    let smoothed = smooth(&traj, cfg.smoothing_window)?;
    smoothed.write(out_dir.join(DOMAIN_WEIGHTS_FILE))?;
    let mut languages = aggregate_languages(&smoothed)?;
    languages.provenance = vec![format!(
        "optimize config={} seed={} mode={} steps={} window={}",
        trainer.fingerprint(),
        xcfg.seed,
        if xcfg.thresholded {
            Mode::Thresholded
        } else {
            Mode::Unthresholded
        }
        .name(),
        xcfg.steps,
        cfg.smoothing_window
    )];
    languages.write(out_dir.join(LANGUAGE_WEIGHTS_FILE))?;
    Ok(OptimizeOutcome {
        out_dir,
        steps_done,
        weights: Some(languages),
    })
}

pub fn cmd_average(files: &[PathBuf], out: &Path) -> Result<LanguageWeightSet> {
    if files.is_empty() {
        return Err(Error::Input(
            "average needs at least one weight file".into(),
        ));
    }
    let sets = files
        .iter()
        .map(LanguageWeightSet::read)
        .collect::<Result<Vec<_>>>()?;
    let mut avg = average_sets(&sets)?;
    let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    avg.provenance
        .push(format!("average of {}", names.join(", ")));
    avg.write(out)?;
    Ok(avg)
}

/// Writes `plan.txt` and `plan.tsv` into `out_dir`.
pub fn cmd_plan(
    weights: &Path,
    inventory: &Path,
    budget: u64,
    caps: PlanCaps,
    out_dir: &Path,
) -> Result<RescalePlan> {
    let p = plan(
        &LanguageWeightSet::read(weights)?,
        &LanguageInventory::read(inventory)?,
        budget,
        caps,
    )?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("plan.txt"), &plan_report(&p))?;
    p.write(out_dir.join("plan.tsv"))?;
    Ok(p)
}

/// Writes `count` language-level draws to `out` as delimited rows.
pub fn cmd_sample(
    weights: &Path,
    manifest: &Path,
    count: u64,
    seed: u64,
    out: &Path,
) -> Result<Vec<Draw>> {
    let corpus = ingest_manifest(&Manifest::from_path(manifest)?)?;
    let sampler = LanguageSampler::new(&LanguageWeightSet::read(weights)?, &corpus, seed)?;
    let draws: Vec<Draw> = sampler.take(count as usize).collect();
    let mut text = format!("{}\n", Draw::HEADER);
    for d in &draws {
        text.push_str(&d.to_tsv_line());
        text.push('\n');
    }
    write_file(out, &text)?;
    Ok(draws)
}

/// Smoothed weights from either a trajectory or a domain weight file.
pub fn load_weights(path: &Path, window: usize) -> Result<WeightVector> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.lines().any(|l| l.starts_with("step\t")) {
        smooth(
            &Trajectory::from_tsv(&text, &path.display().to_string())?,
            window,
        )
    } else {
        WeightVector::from_text(&text, &path.display().to_string())
    }
}

/// File stem, or the parent directory for generic `trajectory.tsv` names;
/// repeated names get a numeric suffix.
pub fn run_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    paths
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let base = if stem == "trajectory" || stem == "weights_domain" {
                p.parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or(stem)
            } else {
                stem
            };
            let mut name = base.clone();
            let mut i = 2;
            while !seen.insert(name.clone()) {
                name = format!("{base}_{i}");
                i += 1;
            }
            name
        })
        .collect()
}

/// Writes `divergence.txt`, `divergence.tsv` and one `alpha_<run>.csv` per
/// trajectory into `out_dir`.
pub fn cmd_report(
    trajectories: &[PathBuf],
    reference: &Path,
    window: usize,
    out_dir: &Path,
) -> Result<DivergenceReport> {
    if trajectories.is_empty() {
        return Err(Error::Input("report needs at least one trajectory".into()));
    }
    let reference_weights = load_weights(reference, window)?;
    let reference_name = run_names(&[reference.to_path_buf()]).remove(0);
    let names = run_names(trajectories);
    create_dir(out_dir)?;
    let mut runs = Vec::new();
    for (path, name) in trajectories.iter().zip(&names) {
        let traj = Trajectory::read(path)?;
        write_file(
            &out_dir.join(format!("alpha_{name}.csv")),
            &traj.alpha_csv(),
        )?;
        runs.push((name.clone(), smooth(&traj, window)?));
    }
    let report = divergence_report(&runs, &reference_name, &reference_weights)?;
    write_file(&out_dir.join("divergence.txt"), &report.to_string())?;
    write_file(&out_dir.join("divergence.tsv"), &report.to_tsv())?;
    Ok(report)
}
