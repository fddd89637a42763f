//! The `ptsp` command line.
//!
//! Every subcommand flag can also come from a TOML config file given with `--config`:
//! top-level keys set global flags, a `[subcommand]` table sets that subcommand's flags
//! (`snake_case` or `kebab-case` keys). Command-line flags override the file. The fully
//! resolved configuration is echoed to stderr in the same format before the run starts.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 internal error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attention::{grad_check, AttentionBlock, AttentionMode, GradCheckReport};
use crate::error::{Error, Result};
use crate::image::{load_pgm, load_raw, save_pgm, GrayImage};
use crate::metrics::{evaluate, extractor_by_name};
use crate::parallel::with_workers;
use crate::patchset::{export_patches, pgm_stems, read_manifest, write_manifest, DatasetManifest, DirSource, EdgePolicy, ManifestRecord, TripletSource};
use crate::purify::{purify, PurifyConfig, PurifyMode};
use crate::similarity::DiscretizationScheme;
use crate::synthesize::{synthesize_batch, SynthConfig};
use crate::toytrain::{curve_csv, manifest_samples, synthetic_triplets, train_toy, ToyDims, ToyObjective, TrainConfig, GRADCHECK_EPS};

#[derive(Debug, Parser, Serialize)]
#[command(name = "ptsp", version, about = "Patch triplet curation and guided-attention toolkit", args_override_self = true)]
pub struct Cli {
    /// TOML file with default flag values.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[command(subcommand)]
    #[serde(skip)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade clean images into synthetic LDCT images.
    Synth(SynthArgs),
    /// Select LDCT/NDCT/NCCT patch triplets and write a manifest.
    Purify(PurifyArgs),
    /// Write the patches referenced by a manifest as PGM files.
    Extract(ExtractArgs),
    /// Summarize a manifest.
    Stats(StatsArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Train the toy guided denoiser.
    Traintoy(TraintoyArgs),
    /// Distribution distances between two image directories.
    Metrics(MetricsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Purify(_) => "purify",
            Command::Extract(_) => "extract",
            Command::Stats(_) => "stats",
            Command::Gradcheck(_) => "gradcheck",
            Command::Traintoy(_) => "traintoy",
            Command::Metrics(_) => "metrics",
        }
    }

    fn resolved(&self) -> toml::Value {
        let v = match self {
            Command::Synth(a) => toml::Value::try_from(a),
            Command::Purify(a) => toml::Value::try_from(a),
            Command::Extract(a) => toml::Value::try_from(a),
            Command::Stats(a) => toml::Value::try_from(a),
            Command::Gradcheck(a) => toml::Value::try_from(a),
            Command::Traintoy(a) => toml::Value::try_from(a),
            Command::Metrics(a) => toml::Value::try_from(a),
        };
        v.expect("argument structs serialize to TOML")
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Directory of clean PGM images (or raw planes with --raw-width/--raw-height).
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub shift_min: usize,
    #[arg(long, default_value_t = 5)]
    pub shift_max: usize,
    #[arg(long, default_value_t = 25.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8.0)]
    pub smooth_sigma: f64,
    #[arg(long, default_value_t = 40.0)]
    pub noise_sigma: f64,
    /// Read `*.raw` 8-bit planes of this width instead of PGM files.
    #[arg(long, requires = "raw_height")]
    pub raw_width: Option<usize>,
    #[arg(long, requires = "raw_width")]
    pub raw_height: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Ptsp,
    Psp,
    Rmse,
}

impl From<ModeArg> for PurifyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ptsp => PurifyMode::Ptsp,
            ModeArg::Psp => PurifyMode::Psp,
            ModeArg::Rmse => PurifyMode::Rmse,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PurifyArgs {
    #[arg(long)]
    pub ldct: PathBuf,
    #[arg(long)]
    pub ndct: PathBuf,
    #[arg(long)]
    pub ncct: PathBuf,
    /// Manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    pub threshold: f64,
    /// Separation points, comma separated.
    #[arg(long, default_value = "0,64,128,256")]
    pub points: String,
    /// Level weights, comma separated.
    #[arg(long, default_value = "1,0.7,0")]
    pub weights: String,
    #[arg(long, default_value_t = 8)]
    pub radius: usize,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Ptsp)]
    pub mode: ModeArg,
    /// Add a row/column of patches flush with the bottom/right border.
    #[arg(long)]
    pub flush_edges: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ldct: PathBuf,
    #[arg(long)]
    pub ndct: PathBuf,
    #[arg(long)]
    pub ncct: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also write the summary as CSV (section,label,count).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradTarget {
    /// One cross-attention window block.
    Ca,
    /// One self-attention window block.
    Sa,
    /// The full toy denoiser on a small synthetic batch (window --m, channels --c, hidden width --d).
    Toy,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Window size.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Input channels.
    #[arg(long, default_value_t = 3)]
    pub c: usize,
    /// Projection dimension.
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Number of random instances (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    pub instances: u64,
    #[arg(long, value_enum, default_value_t = GradTarget::Ca)]
    pub target: GradTarget,
}

#[derive(Debug, Args, Serialize)]
pub struct TraintoyArgs {
    /// Train on tiles of this manifest's triplets instead of synthetic data.
    #[arg(long, requires_all = ["ldct", "ndct", "ncct"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub ldct: Option<PathBuf>,
    #[arg(long)]
    pub ndct: Option<PathBuf>,
    #[arg(long)]
    pub ncct: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// LR halving steps, comma separated (default: 50% and 75% of --steps).
    #[arg(long)]
    pub milestones: Option<String>,
    /// Number of synthetic triplets when no manifest is given.
    #[arg(long, default_value_t = 512)]
    pub samples: usize,
    /// Side of the training tiles.
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV to write.
    #[arg(long)]
    pub curve: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "pool8")]
    pub extractor: String,
    /// CSV report to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the diagonal-excluded MMD² estimator.
    #[arg(long)]
    pub unbiased: bool,
}

/// Parses `argv` (including the program name), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(&argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    eprint!("{}", resolved_config(&cli));
    match with_workers(cli.workers, || run(&cli)).and_then(|r| r) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn clap_exit(e: clap::Error) -> i32 {
    use clap::error::ErrorKind;
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
        _ => 1,
    }
}

fn parse_with_config(argv: &[OsString]) -> std::result::Result<Cli, i32> {
    let first = Cli::try_parse_from(argv).map_err(clap_exit)?;
    let Some(path) = &first.config else {
        return Ok(first);
    };
    let injected = config_args(path, first.command.name()).map_err(|e| {
        eprintln!("error: {e}");
        1
    })?;
    // config flags go right before the user's own, so the user's win
    let sub = first.command.name();
    let pos = argv.iter().position(|a| a == sub).expect("subcommand present in argv");
    let mut merged: Vec<OsString> = vec![argv[0].clone()];
    merged.extend(injected.global.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[1..=pos]);
    merged.extend(injected.local.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[pos + 1..]);
    Cli::try_parse_from(&merged).map_err(clap_exit)
}

#[derive(Debug)]
struct Injected {
    global: Vec<String>,
    local: Vec<String>,
}

fn long_flags(cmd: &clap::Command) -> BTreeMap<String, bool> {
    cmd.get_arguments()
        .filter(|a| !a.is_global_set())
        .filter_map(|a| {
            let takes_value = a.get_action().takes_values();
            a.get_long().map(|l| (l.to_string(), takes_value))
        })
        .collect()
}

fn value_text(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => format!("{f:?}"),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items.iter().map(|x| value_text(key, x)).collect::<Result<Vec<_>>>()?.join(","),
        _ => return Err(Error::Config(format!("unsupported value for key '{key}'"))),
    })
}

fn flags_for(table: &toml::Table, known: &BTreeMap<String, bool>, section: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = key.replace('_', "-");
        let Some(&takes_value) = known.get(&flag) else {
            return Err(Error::Config(format!("unknown key '{key}' in {section}")));
        };
        if takes_value {
            out.push(format!("--{flag}"));
            out.push(value_text(key, value)?);
        } else {
            match value {
                toml::Value::Boolean(true) => out.push(format!("--{flag}")),
                toml::Value::Boolean(false) => {}
                _ => return Err(Error::Config(format!("key '{key}' in {section} must be true or false"))),
            }
        }
    }
    Ok(out)
}

fn config_args(path: &Path, sub: &str) -> Result<Injected> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let cmd = Cli::command();
    let subcommands: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(t) => {
                if !subcommands.contains(key) {
                    return Err(Error::Config(format!("unknown section [{key}]")));
                }
                if key == sub {
                    let known = long_flags(cmd.find_subcommand(sub).expect("known subcommand"));
                    local = flags_for(t, &known, &format!("[{key}]"))?;
                }
            }
            other => match key.as_str() {
                "seed" | "workers" => {
                    global.push(format!("--{key}"));
                    global.push(value_text(key, other)?);
                }
                _ => return Err(Error::Config(format!("unknown top-level key '{key}'"))),
            },
        }
    }
    Ok(Injected { global, local })
}

/// The run's configuration in config-file form.
pub fn resolved_config(cli: &Cli) -> String {
    let mut root = toml::Table::new();
    root.insert("seed".into(), toml::Value::Integer(cli.seed as i64));
    root.insert("workers".into(), toml::Value::Integer(cli.workers as i64));
    root.insert(cli.command.name().into(), cli.command.resolved());
    format!("# resolved configuration\n{}\n", toml::to_string(&root).expect("serializable table"))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(a, cli.seed),
        Command::Purify(a) => run_purify(a),
        Command::Extract(a) => run_extract(a),
        Command::Stats(a) => run_stats(a),
        Command::Gradcheck(a) => run_gradcheck(a, cli.seed),
        Command::Traintoy(a) => run_traintoy(a, cli.seed),
        Command::Metrics(a) => run_metrics(a),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    create_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn raw_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "raw"))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(String::from))
        .collect();
    stems.sort();
    Ok(stems)
}

fn run_synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        shift_min: a.shift_min,
        shift_max: a.shift_max,
        alpha: a.alpha,
        smooth_sigma: a.smooth_sigma,
        noise_sigma: a.noise_sigma,
        seed,
    };
    cfg.validate()?;
    let (stems, images): (Vec<String>, Vec<GrayImage>) = match (a.raw_width, a.raw_height) {
        (Some(w), Some(h)) => {
            let stems = raw_stems(&a.input)?;
            let imgs = stems
                .iter()
                .map(|s| load_raw(a.input.join(format!("{s}.raw")), w, h))
                .collect::<Result<_>>()?;
            (stems, imgs)
        }
        _ => {
            let stems = pgm_stems(&a.input)?;
            let imgs = stems
                .iter()
                .map(|s| load_pgm(a.input.join(format!("{s}.pgm"))))
                .collect::<Result<_>>()?;
            (stems, imgs)
        }
    };
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("no input images in {}", a.input.display())));
    }
    let results = synthesize_batch(&images, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut csv = String::from("image,dy,dx\n");
    for (stem, (img, shift)) in stems.iter().zip(&results) {
        save_pgm(img, a.out.join(format!("{stem}.pgm")))?;
        writeln!(csv, "{stem},{},{}", shift.dy, shift.dx).unwrap();
    }
    write_file(&a.out.join("shifts.csv"), csv)?;
    println!("synthesized {} images into {}", results.len(), a.out.display());
    Ok(())
}

fn run_purify(a: &PurifyArgs) -> Result<()> {
    let cfg = PurifyConfig {
        scheme: DiscretizationScheme::parse(&a.points, &a.weights)?,
        threshold: a.threshold,
        patch: a.patch,
        stride: a.stride,
        radius: a.radius,
        mode: a.mode.into(),
        edges: if a.flush_edges { EdgePolicy::Flush } else { EdgePolicy::Drop },
    };
    cfg.validate()?;
    let source = DirSource {
        ldct: a.ldct.clone(),
        ndct: a.ndct.clone(),
        ncct: a.ncct.clone(),
    };
    let stems = pgm_stems(&a.ldct)?;
    let mut manifest = DatasetManifest::new(cfg.scheme.fingerprint());
    println!("image,enumerated,accepted,accept_rate");
    for stem in &stems {
        let triple = source.load(stem)?;
        let outcome = purify(&triple, &cfg)?;
        println!("{stem},{},{},{:.6}", outcome.enumerated, outcome.triplets.len(), outcome.accept_rate());
        manifest.extend(outcome.triplets.iter().map(|t| ManifestRecord::from_triplet(stem, t, cfg.mode)));
    }
    create_parent(&a.out)?;
    write_manifest(&manifest, &a.out)
}

fn run_extract(a: &ExtractArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let source = DirSource {
        ldct: a.ldct.clone(),
        ndct: a.ndct.clone(),
        ncct: a.ncct.clone(),
    };
    let written = export_patches(&manifest, &source, &a.out)?;
    println!("wrote {} patches for {} triplets into {}", written.len(), manifest.len(), a.out.display());
    Ok(())
}

/// Acceptance counts, 20-bin similarity histograms and the NCCT offset distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestStats {
    pub records: usize,
    pub images: usize,
    pub by_mode: BTreeMap<String, usize>,
    pub sim_ln: [usize; 20],
    pub sim_lg: [usize; 20],
    /// Records without an NCCT score (pair-only mode).
    pub sim_lg_missing: usize,
    pub offsets: BTreeMap<(i32, i32), usize>,
}

fn bin(v: f64) -> usize {
    ((v * 20.0).floor().max(0.0) as usize).min(19)
}

impl ManifestStats {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        let mut s = ManifestStats {
            records: m.len(),
            images: 0,
            by_mode: BTreeMap::new(),
            sim_ln: [0; 20],
            sim_lg: [0; 20],
            sim_lg_missing: 0,
            offsets: BTreeMap::new(),
        };
        let mut last: Option<&str> = None;
        for r in m.records() {
            if last != Some(r.image_id.as_str()) {
                s.images += 1;
                last = Some(&r.image_id);
            }
            *s.by_mode.entry(r.mode.to_string()).or_default() += 1;
            s.sim_ln[bin(r.sim_ln)] += 1;
            match r.sim_lg {
                Some(v) => s.sim_lg[bin(v)] += 1,
                None => s.sim_lg_missing += 1,
            }
            *s.offsets.entry((r.ncct_dy, r.ncct_dx)).or_default() += 1;
        }
        s
    }

    /// `(section, label, count)` rows; histogram rows only for non-empty bins.
    pub fn rows(&self) -> Vec<(String, String, usize)> {
        let mut rows = vec![
            ("count".to_string(), "records".to_string(), self.records),
            ("count".to_string(), "images".to_string(), self.images),
        ];
        for (mode, n) in &self.by_mode {
            rows.push(("mode".into(), mode.clone(), *n));
        }
        for (name, hist) in [("sim_ln", &self.sim_ln), ("sim_lg", &self.sim_lg)] {
            for (i, &n) in hist.iter().enumerate().filter(|(_, n)| **n > 0) {
                rows.push((name.into(), format!("[{:.2},{:.2}{}", i as f64 / 20.0, (i + 1) as f64 / 20.0, if i == 19 { "]" } else { ")" }), n));
            }
        }
        if self.sim_lg_missing > 0 {
            rows.push(("sim_lg".into(), "none".into(), self.sim_lg_missing));
        }
        for ((dy, dx), n) in &self.offsets {
            rows.push(("ncct_offset".into(), format!("{dy} {dx}"), *n));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,label,count\n");
        for (sec, label, n) in self.rows() {
            writeln!(s, "{sec},\"{label}\",{n}").unwrap();
        }
        s
    }
}

fn run_stats(a: &StatsArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let stats = ManifestStats::from_manifest(&m);
    println!("scheme {}", m.scheme());
    for (sec, label, n) in stats.rows() {
        println!("{sec:<12} {label:<14} {n}");
    }
    if let Some(path) = &a.csv {
        write_file(path, stats.to_csv())?;
    }
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs, seed: u64) -> Result<()> {
    if a.m == 0 || a.c == 0 || a.d == 0 || a.instances == 0 {
        return Err(Error::Config("--m, --c, --d and --instances must be positive".into()));
    }
    let mut worst: Option<GradCheckReport> = None;
    let mut failed = 0;
    for i in 0..a.instances {
        let s = seed.wrapping_add(i);
        let report = match a.target {
            GradTarget::Ca | GradTarget::Sa => {
                let mode = if a.target == GradTarget::Ca { AttentionMode::CrossAttention } else { AttentionMode::SelfAttention };
                grad_check(&mut AttentionBlock::random(a.m, a.c, a.d, mode, s), a.h, a.tol)
            }
            GradTarget::Toy => {
                let dims = ToyDims {
                    patch: 2 * a.m,
                    window: a.m,
                    channels: a.c,
                    hidden: a.d,
                };
                let model = crate::toytrain::ToyDenoiser::new(dims, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(s))?;
                let samples = synthetic_triplets(4, 2 * a.m.max(3), s)?
                    .into_iter()
                    .map(|t| crop_sample(t, 2 * a.m.max(3), 2 * a.m))
                    .collect();
                grad_check(&mut ToyObjective::new(model, samples, GRADCHECK_EPS), a.h, a.tol)
            }
        };
        print!("instance {i} (seed {s}): {report}");
        if !report.passed() {
            failed += 1;
        }
        if worst.as_ref().is_none_or(|w| report.max_rel_err > w.max_rel_err) {
            worst = Some(report);
        }
    }
    let worst = worst.expect("at least one instance");
    println!("max_rel_err {:.3e} at {} over {} instance(s)", worst.max_rel_err, worst.worst_param, a.instances);
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} instance(s) exceed tolerance {:.1e}", a.tol)));
    }
    Ok(())
}

fn crop_sample(t: crate::toytrain::TrainSample, from: usize, to: usize) -> crate::toytrain::TrainSample {
    let pick = |v: &[f64]| (0..to * to).map(|i| v[(i / to) * from + i % to]).collect();
    crate::toytrain::TrainSample {
        ldct: pick(&t.ldct),
        ndct: pick(&t.ndct),
        ncct: pick(&t.ncct),
    }
}

fn parse_milestones(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("invalid milestone '{t}'"))))
        .collect()
}

fn run_traintoy(a: &TraintoyArgs, seed: u64) -> Result<()> {
    let cfg = TrainConfig {
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch: a.batch,
        milestones: a.milestones.as_deref().map(parse_milestones).transpose()?,
        steps: a.steps,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let dims = ToyDims {
        patch: a.patch,
        ..ToyDims::default()
    };
    dims.validate()?;
    let samples = match (&a.manifest, &a.ldct, &a.ndct, &a.ncct) {
        (Some(m), Some(l), Some(n), Some(g)) => {
            let manifest = read_manifest(m)?;
            let source = DirSource {
                ldct: l.clone(),
                ndct: n.clone(),
                ncct: g.clone(),
            };
            manifest_samples(&manifest, &source, a.patch)?
        }
        _ => synthetic_triplets(a.samples, a.patch, seed)?,
    };
    let out = train_toy(&samples, dims, &cfg)?;
    create_parent(&a.out)?;
    out.model.save(&a.out)?;
    write_file(&a.curve, curve_csv(&out.curve))?;
    println!(
        "trained on {} samples for {} steps: loss {:.6} -> {:.6}",
        samples.len(),
        a.steps,
        out.initial_loss,
        out.final_loss
    );
    Ok(())
}

fn run_metrics(a: &MetricsArgs) -> Result<()> {
    let extractor = extractor_by_name(&a.extractor)?;
    let report = evaluate(&a.a, &a.b, &extractor, a.unbiased)?;
    write_file(&a.out, report.to_csv())?;
    println!("{report}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::purify::PurifyMode;

    fn record(id: &str, top: usize, sim_ln: f64, sim_lg: Option<f64>, off: (i32, i32)) -> ManifestRecord {
        ManifestRecord {
            image_id: id.into(),
            top,
            left: 0,
            p: 64,
            ncct_dy: off.0,
            ncct_dx: off.1,
            sim_ln,
            sim_lg,
            mode: PurifyMode::Ptsp,
            ndct_dy: None,
            ndct_dx: None,
            rmse: None,
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn empty_manifest_stats() {
        let s = ManifestStats::from_manifest(&DatasetManifest::new("x"));
        assert_eq!(s.records, 0);
        assert!(s.rows().iter().all(|r| r.0 == "count"));
    }

    #[test]
    fn histogram_totals_match_records() {
        let m = DatasetManifest::with_records(
            "x",
            vec![
                record("a", 0, 1.0, Some(1.0), (0, 0)),
                record("a", 32, 0.86, Some(0.9), (1, -1)),
                record("b", 0, 0.951, None, (0, 0)),
            ],
        );
        let s = ManifestStats::from_manifest(&m);
        assert_eq!(s.images, 2);
        assert_eq!(s.sim_ln.iter().sum::<usize>(), 3);
        assert_eq!(s.sim_lg.iter().sum::<usize>() + s.sim_lg_missing, 3);
        assert_eq!(s.sim_ln[19], 2);
        assert_eq!(s.sim_ln[17], 1);
        assert_eq!(s.offsets[&(0, 0)], 2);
        assert!(s.to_csv().contains("sim_ln,\"[0.95,1.00]\",2"));
    }

    #[test]
    fn config_keys_become_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 9\n[purify]\nthreshold = 0.8\nflush_edges = true\npoints = [0, 128, 256]\n[synth]\nalpha = 3.0\n").unwrap();
        let inj = config_args(&path, "purify").unwrap();
        assert_eq!(inj.global, ["--seed", "9"]);
        assert_eq!(inj.local, ["--flush-edges", "--points", "0,128,256", "--threshold", "0.8"]);

        fs::write(&path, "[purify]\nbogus = 1\n").unwrap();
        assert!(config_args(&path, "purify").unwrap_err().to_string().contains("bogus"));
        fs::write(&path, "[nosuch]\nx = 1\n").unwrap();
        assert!(config_args(&path, "purify").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 9\n[gradcheck]\ntol = 0.5\nm = 3\n").unwrap();
        let p = path.to_str().unwrap();
        let argv: Vec<OsString> = ["ptsp", "--config", p, "gradcheck", "--tol", "0.25"].iter().map(OsString::from).collect();
        let cli = parse_with_config(&argv).unwrap();
        assert_eq!(cli.seed, 9);
        let Command::Gradcheck(g) = &cli.command else { panic!() };
        assert_eq!((g.tol, g.m), (0.25, 3));
        let text = resolved_config(&cli);
        assert!(text.contains("seed = 9") && text.contains("[gradcheck]") && text.contains("tol = 0.25"));
    }
}
