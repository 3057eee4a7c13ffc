//! Command-line front end: `generate`, `run`, `theory`, `report`, `importance`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_cohort, save_cohort, write_atomic, Cohort};
use crate::error::{Error, Result};
use crate::experiments::{Approach, Experiment, ExperimentConfig, ExperimentReport, Summary};
use crate::learners::{Family, FeatureWeights, Penalty};
use crate::stacking::{fit_ensemble, stack_features, subject_importances, BankCache, Standardizer, StackEncoding};
use crate::synthetic::{generate_cohort, Preset, SyntheticSpec};
use crate::theory::{classify_regime, ensemble_error, monte_carlo_ensemble_error, MonteCarloConfig, Regime};

/// Environment variable overriding the base-bank cache directory.
pub const CACHE_ENV: &str = "STACKDECODE_CACHE";

#[derive(Debug, Parser)]
#[command(name = "stackdecode", version, about = "Across-subject stacked ensemble decoding")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort directory.
    Generate(GenerateArgs),
    /// Run a training-size or subject-count sweep and write report files.
    Run(RunArgs),
    /// Tabulate predicted and simulated ensemble errors over ensemble sizes.
    Theory(TheoryArgs),
    /// Print accuracy and gain tables from a report.
    Report(ReportArgs),
    /// Dump feature weights or per-subject importances as CSV.
    Importance(ImportanceArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset-shaped preset: neuromod, aomic, forrest, bold5000, rsvp-ibc.
    #[arg(long, conflicts_with = "spec")]
    pub preset: Option<String>,
    /// TOML file with synthetic spec fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    #[default]
    Size,
    Subject,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run file (see `RunFile`); every field is optional.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Cohort directory or manifest; overrides the run file.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Synthetic preset used when no cohort path is given.
    #[arg(long, conflicts_with = "cohort")]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub sweep: Option<SweepKind>,
    #[arg(long, value_delimiter = ',')]
    pub approaches: Option<Vec<Approach>>,
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<Family>>,
    #[arg(long)]
    pub n_cv: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub subset_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
    #[arg(long)]
    pub base_penalty: Option<Penalty>,
    #[arg(long)]
    pub encoding: Option<StackEncoding>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base-bank cache directory; defaults to `<out>/bank_cache`.
    #[arg(long, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 200)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub var_y: f64,
    /// Ensemble sizes; a geometric grid from 1 to n_samples when omitted.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Monte-Carlo trials per grid point; 0 skips the simulation.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
    /// Tables to print: accuracy, gain.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["accuracy".to_string(), "gain".to_string()])]
    pub query: Vec<String>,
    #[arg(long)]
    pub family: Option<Family>,
    /// Also write the printed rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImportanceKind {
    /// Weights or importances of a conventional model over input features.
    Features,
    /// Meta-model importance of each source subject.
    Subjects,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum, default_value = "subjects")]
    pub kind: ImportanceKind,
    #[arg(long, default_value = "forest")]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Where a run gets its cohort.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSource {
    pub path: Option<PathBuf>,
    pub preset: Option<String>,
    pub synthetic: Option<SyntheticSpec>,
}

/// TOML layout of `run --config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub sweep: SweepKind,
    pub cohort: CohortSource,
    pub experiment: ExperimentConfig,
}

/// Process exit status for an error: 2 for configuration problems, 3 for data problems.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Unknown { .. } => 2,
        Error::Io { .. }
        | Error::Manifest { .. }
        | Error::DimensionMismatch { .. }
        | Error::UnknownLabel { .. }
        | Error::NonFinite { .. }
        | Error::Subject { .. }
        | Error::ClassTooSmall { .. }
        | Error::SingleClass
        | Error::ShapeMismatch { .. }
        | Error::Decode(_) => 3,
        _ => 1,
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command inside a pool of the requested size.
pub fn execute(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        builder = builder.num_threads(n as usize);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Theory(a) => cmd_theory(&a),
        Command::Report(a) => cmd_report(&a, &mut std::io::stdout()),
        Command::Importance(a) => cmd_importance(&a),
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut spec = match (&a.preset, &a.spec) {
        (Some(p), _) => p.parse::<Preset>()?.spec(),
        (None, Some(path)) => read_toml::<SyntheticSpec>(path)?,
        (None, None) => SyntheticSpec::standard_benchmark(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let cohort = generate_cohort(&spec)?;
    save_cohort(&cohort, &a.out)?;
    println!(
        "wrote {} subjects x {} samples x {} features ({} classes) to {}",
        cohort.n_subjects(),
        spec.n_samples_per_subject,
        cohort.n_features(),
        cohort.n_classes(),
        a.out.display()
    );
    Ok(())
}

fn resolve_cohort(src: &CohortSource) -> Result<Cohort> {
    match (&src.path, &src.preset, &src.synthetic) {
        (Some(p), None, None) => load_cohort(p),
        (None, Some(name), None) => generate_cohort(&name.parse::<Preset>()?.spec()),
        (None, None, Some(spec)) => generate_cohort(spec),
        (None, None, None) => generate_cohort(&SyntheticSpec::standard_benchmark()),
        _ => Err(Error::Config("cohort: give only one of path, preset, synthetic".into())),
    }
}

/// Applies command-line overrides on top of a run file.
pub fn run_file_for(a: &RunArgs) -> Result<RunFile> {
    let mut rf = match &a.config {
        Some(p) => read_toml::<RunFile>(p)?,
        None => RunFile::default(),
    };
    if a.cohort.is_some() || a.preset.is_some() {
        rf.cohort = CohortSource {
            path: a.cohort.clone(),
            preset: a.preset.clone(),
            synthetic: None,
        };
    }
    if let Some(s) = a.sweep {
        rf.sweep = s;
    }
    let e = &mut rf.experiment;
    if rf.sweep == SweepKind::Subject && a.config.is_none() {
        e.n_cv = 5;
    }
    if let Some(v) = &a.approaches {
        e.approaches = v.clone();
    }
    if let Some(v) = &a.families {
        e.meta_families = v.clone();
    }
    if let Some(v) = a.n_cv {
        e.n_cv = v;
    }
    if let Some(v) = &a.subset_sizes {
        e.subject_subset_sizes = v.clone();
    }
    if let Some(v) = &a.targets {
        e.targets = Some(v.clone());
    }
    if let Some(v) = a.base_penalty {
        e.base_penalty = v;
    }
    if let Some(v) = a.encoding {
        e.encoding = v;
    }
    if let Some(v) = a.seed {
        e.master_seed = v;
    }
    e.validate()?;
    Ok(rf)
}

pub fn cmd_run(a: &RunArgs) -> Result<()> {
    let rf = run_file_for(a)?;
    let cohort = resolve_cohort(&rf.cohort)?;
    let mut exp = Experiment::new(&cohort, rf.experiment.clone());
    if !a.no_cache {
        let dir = a.cache_dir.clone().unwrap_or_else(|| a.out.join("bank_cache"));
        exp = exp.with_cache(BankCache::new(dir));
    }
    let report = match rf.sweep {
        SweepKind::Size => exp.run_size_sweep()?,
        SweepKind::Subject => {
            if rf.experiment.subject_subset_sizes.is_empty() {
                return Err(Error::Config("subject sweep needs subset sizes".into()));
            }
            exp.run_subject_sweep()?
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_atomic(&a.out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&a.out.join("report.csv"), report.records_csv().as_bytes())?;
    write_atomic(&a.out.join("summaries.csv"), report.summaries_csv().as_bytes())?;
    write_atomic(&a.out.join("gains.csv"), report.gains_csv().as_bytes())?;
    let failed = report.records.iter().filter(|r| r.failure.is_some()).count();
    println!(
        "{} records ({} failed), content hash {}, {:.1}s",
        report.records.len(),
        failed,
        report.metadata.content_hash,
        report.run_info.wall_time_secs
    );
    Ok(())
}

/// One row of the theory table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub n_subjects: usize,
    pub predicted_error: f64,
    pub regime: Regime,
    pub predicted_optimal: bool,
    pub empirical_conventional: Option<f64>,
    pub empirical_ensemble: Option<f64>,
    pub singular_trials: Option<usize>,
}

/// Ensemble sizes from 1 to `n_samples`, geometric, always holding both
/// endpoints and the integer minimizer of the predicted error.
pub fn theory_grid(n_samples: usize, points: usize, optimum: usize) -> Vec<usize> {
    let points = points.max(2);
    let mut grid: Vec<usize> = (0..points)
        .map(|k| (n_samples as f64).powf(k as f64 / (points - 1) as f64).round() as usize)
        .collect();
    grid.extend([1, n_samples, optimum]);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Integer ensemble size minimizing the predicted error; ties go to the smaller size.
pub fn predicted_optimum(var_y: f64, n_samples: usize) -> usize {
    (1..=n_samples)
        .map(|n| (n, ensemble_error(var_y, n, n_samples)))
        .fold((1, f64::INFINITY), |best, (n, e)| if e < best.1 { (n, e) } else { best })
        .0
}

pub fn theory_rows(a: &TheoryArgs) -> Result<Vec<TheoryRow>> {
    if a.n_samples == 0 || !(a.var_y >= 0.0) {
        return Err(Error::Config("n_samples must be positive and var_y nonnegative".into()));
    }
    let opt = predicted_optimum(a.var_y, a.n_samples);
    let grid = match &a.grid {
        Some(g) if g.iter().any(|&n| n == 0) => return Err(Error::Config("grid sizes must be positive".into())),
        Some(g) => {
            let mut g = g.clone();
            g.extend([1, a.n_samples]);
            g.sort_unstable();
            g.dedup();
            g
        }
        None => theory_grid(a.n_samples, a.points, opt),
    };
    grid.into_iter()
        .map(|n| {
            let mc = if a.trials > 0 {
                Some(monte_carlo_ensemble_error(&MonteCarloConfig {
                    n_bases: n,
                    n_samples: a.n_samples,
                    n_trials: a.trials,
                    seed: a.seed,
                    ..MonteCarloConfig::default()
                })?)
            } else {
                None
            };
            Ok(TheoryRow {
                n_subjects: n,
                predicted_error: ensemble_error(a.var_y, n, a.n_samples),
                regime: classify_regime(n, a.n_samples, f64::INFINITY),
                predicted_optimal: n == opt,
                empirical_conventional: mc.as_ref().map(|m| m.conventional_error),
                empirical_ensemble: mc.as_ref().map(|m| m.ensemble_error),
                singular_trials: mc.as_ref().map(|m| m.singular_trials),
            })
        })
        .collect()
}

pub fn theory_csv(rows: &[TheoryRow]) -> String {
    let mut out = String::from(
        "n_subjects,predicted_error,regime,predicted_optimal,empirical_conventional,empirical_ensemble,singular_trials\n",
    );
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n_subjects,
            r.predicted_error,
            r.regime,
            r.predicted_optimal,
            o(r.empirical_conventional),
            o(r.empirical_ensemble),
            r.singular_trials.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    out
}

pub fn cmd_theory(a: &TheoryArgs) -> Result<()> {
    let rows = theory_rows(a)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let csv = theory_csv(&rows);
    write_atomic(&a.out.join("theory.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn find<'r>(
    report: &'r ExperimentReport,
    approach: Approach,
    family: Family,
    n_ens: usize,
    size: Option<usize>,
) -> Option<&'r Summary> {
    report.summaries.iter().find(|s| {
        s.approach == approach && s.meta_family == family && s.n_subjects_in_ensemble == n_ens && s.train_size == size
    })
}

fn cell(s: Option<&Summary>) -> String {
    s.map_or_else(
        || "not computed".to_string(),
        |s| format!("{:.4} [{:.4}, {:.4}]", s.mean, s.ci_low, s.ci_high),
    )
}

/// Writes the requested tables; returns the CSV form of the printed rows.
pub fn render_report(report: &ExperimentReport, queries: &[String], family: Option<Family>) -> Result<(String, String)> {
    let mut text = String::new();
    let mut csv = String::from("table,meta_family,n_subjects_in_ensemble,train_size,samples_per_class,approach,n,mean,ci_low,ci_high\n");
    let mut keys: Vec<(Family, usize, Option<usize>, Option<usize>)> = report
        .summaries
        .iter()
        .filter(|s| family.is_none_or(|f| f == s.meta_family))
        .map(|s| (s.meta_family, s.n_subjects_in_ensemble, s.train_size, s.samples_per_class))
        .collect();
    keys.sort_by_key(|k| (k.0, k.1, k.2.is_none(), k.2));
    keys.dedup();
    let size_label = |s: Option<usize>, spc: Option<usize>| match s {
        Some(s) => format!("{s} ({} per class)", spc.unwrap_or(0)),
        None => "all sizes".to_string(),
    };
    for q in queries {
        match q.as_str() {
            "accuracy" => {
                let _ = writeln!(text, "balanced accuracy, mean [95% CI]");
                let _ = writeln!(text, "{:<7} {:>4} {:<22} {:<32} {:<32}", "family", "N", "train size", "conventional", "ensemble");
                for &(f, n, size, spc) in &keys {
                    let conv = find(report, Approach::Conventional, f, n, size);
                    let ens = find(report, Approach::Ensemble, f, n, size);
                    let _ = writeln!(text, "{:<7} {:>4} {:<22} {:<32} {:<32}", f, n, size_label(size, spc), cell(conv), cell(ens));
                    for (a, s) in [(Approach::Conventional, conv), (Approach::Ensemble, ens)] {
                        if let Some(s) = s {
                            let _ = writeln!(
                                csv,
                                "accuracy,{f},{n},{},{},{a},{},{},{},{}",
                                opt_str(size),
                                opt_str(spc),
                                s.n,
                                s.mean,
                                s.ci_low,
                                s.ci_high
                            );
                        }
                    }
                }
            }
            "gain" => {
                let _ = writeln!(text, "ensemble - conventional, percentage points [95% CI]");
                let _ = writeln!(text, "{:<7} {:>4} {:<22} {:<32}", "family", "N", "train size", "gain");
                for &(f, n, size, spc) in &keys {
                    let g = report
                        .gains
                        .iter()
                        .find(|g| g.meta_family == f && g.n_subjects_in_ensemble == n && g.train_size == size);
                    let shown = g.map_or_else(
                        || "not computed".to_string(),
                        |g| format!("{:+.2} [{:+.2}, {:+.2}]", g.mean, g.ci_low, g.ci_high),
                    );
                    let _ = writeln!(text, "{:<7} {:>4} {:<22} {:<32}", f, n, size_label(size, spc), shown);
                    if let Some(g) = g {
                        let _ = writeln!(
                            csv,
                            "gain,{f},{n},{},{},,{},{},{},{}",
                            opt_str(size),
                            opt_str(spc),
                            g.n,
                            g.mean,
                            g.ci_low,
                            g.ci_high
                        );
                    }
                }
            }
            other => {
                return Err(Error::Unknown {
                    kind: "report query",
                    name: other.to_string(),
                })
            }
        }
        text.push('\n');
    }
    Ok((text, csv))
}

fn opt_str(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |v| v.to_string())
}

pub fn cmd_report(a: &ReportArgs, out: &mut impl std::io::Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let report = ExperimentReport::from_json(&text)?;
    let (table, csv) = render_report(&report, &a.query, a.family)?;
    out.write_all(table.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(path) = &a.csv {
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_importance(a: &ImportanceArgs) -> Result<()> {
    let cohort = load_cohort(&a.cohort)?;
    let ds = cohort.subject(&a.target).ok_or_else(|| Error::Unknown {
        kind: "target subject",
        name: a.target.clone(),
    })?;
    let k = cohort.n_classes();
    let cfg = ExperimentConfig::default().meta_config(a.family).reseeded(a.seed);
    let mut csv = String::new();
    match a.kind {
        ImportanceKind::Features => {
            let scaler = Standardizer::fit(ds.features());
            let model = cfg.fit(&scaler.transform(ds.features()), ds.labels(), k)?;
            match model.feature_weights()? {
                FeatureWeights::Linear(w) => {
                    csv.push_str("feature,class,weight\n");
                    for f in 0..w.ncols() {
                        for c in 0..w.nrows() {
                            let name = cohort.label_space().name(c).unwrap_or("?");
                            let _ = writeln!(csv, "{f},{name},{}", w[(c, f)]);
                        }
                    }
                }
                FeatureWeights::Importance(v) => {
                    csv.push_str("feature,importance\n");
                    for (f, v) in v.iter().enumerate() {
                        let _ = writeln!(csv, "{f},{v}");
                    }
                }
            }
        }
        ImportanceKind::Subjects => {
            let bank = crate::stacking::pretrain_bases(&cohort, &a.target, Penalty::L2)?;
            let stacked = stack_features(&bank, ds.features(), StackEncoding::OneHotLabels)?;
            let meta = fit_ensemble(&stacked, ds.labels(), &cfg)?;
            csv.push_str("subject,importance\n");
            for (id, v) in subject_importances(&meta, &bank)? {
                let _ = writeln!(csv, "{id},{v}");
            }
        }
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_atomic(&a.out, csv.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_holds_endpoints_and_optimum() {
        let opt = predicted_optimum(1.0, 200);
        assert_eq!(opt, 14);
        let g = theory_grid(200, 10, opt);
        assert_eq!(g.first(), Some(&1));
        assert_eq!(g.last(), Some(&200));
        assert!(g.contains(&14));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite { subject: "s".into(), row: 1 }), 3);
    }
}
