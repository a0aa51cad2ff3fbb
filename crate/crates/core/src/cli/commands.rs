use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{parse_config, RunConfig};
use super::io::{ingest_with_ids, write_metadata, write_trajectories_csv, TrajectoryMetadata};
use crate::error::Result;
use crate::mitigation::{compute_reweight_with_floor, inverse_prior, transform_plan};
use crate::prediction::{
    build_dataset, build_recoverer, drift_report, marginals_csv, paired_t_test, plot_data_csv, sigma_sweep,
    signed_drift, sweep_table, tv_distance, DriftReport, Recoverer, TTest,
};
use crate::recovery::{recover_posterior, summarize, BinnedMarginal, RecoveryRule, Summary};
use crate::rng::derive_seed;
use crate::systems::{lyapunov_closed_form, lyapunov_finite, Dataset, FamilyConfig, FamilyKind, Trajectory};

const PLOT_POINTS: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "physdrift", version, about = "Predict, measure and mitigate drift of recovered quantity distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a dataset and write it as CSV plus metadata.
    Generate(Common),
    /// Recover quantities for a trajectory CSV and write the pulled-back marginal.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to the input path with a `.json` extension.
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Write a drift report for one kernel scale.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// One drift report per configured scale and a summary table.
    Sweep(Common),
    /// Compare external samples against the prior and the dataset.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Reweight the dataset or pair it with a code support.
    Mitigate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        sigma: Option<f64>,
        /// Model samples whose marginal the reweighting undoes; defaults to the prediction.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Print finite-horizon and closed-form Lyapunov exponents.
    Lyapunov {
        #[arg(long)]
        family: String,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 0.25)]
        x0: f64,
        #[arg(long, default_value_t = 64)]
        horizon: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config and PHYSDRIFT_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Reweight,
    Transform,
}

/// Parse `args` (including the program name), run the command, and return
/// the exit status: 0 on success, 2 on invalid input, 1 on runtime failure.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

struct Run {
    config: RunConfig,
    out: PathBuf,
    seeds: Vec<u64>,
}

impl Run {
    fn load(common: &Common) -> Result<Self> {
        let text = fs::read_to_string(&common.config)?;
        let config = parse_config(&text)?;
        let out = config.resolve_output_dir(common.out.clone());
        fs::create_dir_all(&out)?;
        let seeds = match common.seed {
            Some(s) => vec![s],
            None => config.seeds.clone(),
        };
        Ok(Self { config, out, seeds })
    }

    fn multi(&self) -> bool {
        self.seeds.len() > 1
    }

    /// `stem.ext`, or `stem_seed_<s>.ext` when several seeds run.
    fn file(&self, stem: &str, ext: &str, seed: u64) -> PathBuf {
        if self.multi() {
            self.out.join(format!("{stem}_seed_{seed}.{ext}"))
        } else {
            self.out.join(format!("{stem}.{ext}"))
        }
    }

    fn with_sigma(&self, sigma: Option<f64>) -> Result<RunConfig> {
        let mut c = self.config.clone();
        if let Some(s) = sigma {
            c.kernel.sigma = s;
            c.kernel.validate()?;
        }
        Ok(c)
    }

    fn write_run_metadata(&self, command: &str) -> Result<()> {
        #[derive(Serialize)]
        struct RunMetadata<'a> {
            command: &'a str,
            version: &'a str,
            seeds: &'a [u64],
            unix_time_seconds: u64,
        }
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        write_json(
            &self.out.join("run_metadata.json"),
            &RunMetadata {
                command,
                version: env!("CARGO_PKG_VERSION"),
                seeds: &self.seeds,
                unix_time_seconds: now,
            },
        )
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn sibling_metadata(csv: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| csv.with_extension("json"))
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Generate(common) => generate(&Run::load(&common)?, stdout),
        Command::Recover { common, input, metadata } => {
            let run = Run::load(&common)?;
            let input = input.unwrap_or_else(|| run.out.join("dataset.csv"));
            let metadata = sibling_metadata(&input, metadata.as_ref());
            recover(&run, &input, &metadata, stdout)
        }
        Command::Predict { common, sigma } => predict(&Run::load(&common)?, sigma, stdout),
        Command::Sweep(common) => sweep(&Run::load(&common)?, stdout),
        Command::Audit { common, samples, metadata } => {
            let run = Run::load(&common)?;
            let metadata = sibling_metadata(&samples, metadata.as_ref());
            audit(&run, &samples, &metadata, stdout)
        }
        Command::Mitigate {
            common,
            mode,
            sigma,
            samples,
            metadata,
        } => {
            let run = Run::load(&common)?;
            match mode {
                Mode::Reweight => {
                    let model = samples.map(|s| {
                        let m = sibling_metadata(&s, metadata.as_ref());
                        (s, m)
                    });
                    reweight(&run, sigma, model, stdout)
                }
                Mode::Transform => transform(&run, sigma, stdout),
            }
        }
        Command::Lyapunov { family, r, x0, horizon } => {
            let kind: FamilyKind = family.parse()?;
            let config = FamilyConfig::new(kind).with_horizon(horizon);
            let finite = lyapunov_finite(&config, r, x0)?;
            writeln!(stdout, "lambda_finite {finite}")?;
            match lyapunov_closed_form(kind, r) {
                Some(c) => writeln!(stdout, "lambda_closed_form {c}")?,
                None => writeln!(stdout, "lambda_closed_form none")?,
            }
            Ok(())
        }
    }
}

fn generate(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    for &seed in &run.seeds {
        let dataset = build_dataset(&run.config.setup(seed))?;
        let csv = run.file("dataset", "csv", seed);
        write_trajectories_csv(&csv, dataset.trajectories())?;
        write_metadata(&run.file("dataset", "json", seed), &TrajectoryMetadata::for_dataset(&dataset))?;
        writeln!(stdout, "wrote {} trajectories to {}", dataset.len(), csv.display())?;
    }
    run.write_run_metadata("generate")
}

/// Per-trajectory output of the measurement rule.
enum Recovered {
    Grid { mode: f64, mean: f64, binned: Vec<f64> },
    Energy(f64),
}

impl Recovered {
    /// Scalar recovery: the energy, or the posterior mean under the mean rule
    /// and the mode otherwise.
    fn scalar(&self, rule: RecoveryRule) -> f64 {
        match self {
            Recovered::Grid { mean, .. } if rule == RecoveryRule::Mean => *mean,
            Recovered::Grid { mode, .. } => *mode,
            Recovered::Energy(e) => *e,
        }
    }

    fn posterior(&self, config: &RunConfig) -> Result<BinnedMarginal> {
        let edges = config.prior.edges();
        match self {
            Recovered::Grid { binned, .. } => BinnedMarginal::from_weights(edges, binned.clone()),
            Recovered::Energy(e) => {
                let mut mass = vec![0.0; config.prior.bins()];
                mass[config.prior.bin_of(*e)] = 1.0;
                BinnedMarginal::new(edges, mass)
            }
        }
    }
}

fn recover_each(config: &RunConfig, recoverer: &Recoverer, trajectories: &[Trajectory]) -> Result<Vec<Recovered>> {
    let edges = config.prior.edges();
    trajectories
        .par_iter()
        .map(|x| match recoverer {
            Recoverer::Grid { grid, .. } => {
                let p = recover_posterior(grid, x, &config.prior)?;
                Ok(Recovered::Grid {
                    mode: summarize(&p, Summary::Mode),
                    mean: summarize(&p, Summary::Mean),
                    binned: p.binned(&edges),
                })
            }
            Recoverer::PendulumEnergy { config: family, .. } => {
                Ok(Recovered::Energy(crate::recovery::recover_pendulum_energy(x, family)?))
            }
        })
        .collect()
}

fn recover(run: &Run, input: &Path, metadata: &Path, stdout: &mut dyn Write) -> Result<()> {
    let config = &run.config;
    let (ids, dataset) = ingest_with_ids(input, metadata, &config.family, &config.prior)?;
    let seed = run.seeds[0];
    let recoverer = build_recoverer(&config.setup(seed), &dataset)?;
    let each = recover_each(config, &recoverer, dataset.trajectories())?;
    let mut csv = String::new();
    if config.family.kind == FamilyKind::Pendulum {
        csv.push_str("traj_id,energy\n");
    } else {
        csv.push_str("traj_id,mode,mean\n");
    }
    for (id, r) in ids.iter().zip(&each) {
        let _ = match r {
            Recovered::Grid { mode, mean, .. } => writeln!(csv, "{id},{mode},{mean}"),
            Recovered::Energy(e) => writeln!(csv, "{id},{e}"),
        };
    }
    fs::write(run.out.join("recoveries.csv"), csv)?;
    let (marginal, out_of_range) = recoverer.pullback(dataset.trajectories())?;
    let prior = config.prior.as_marginal();

    #[derive(Serialize)]
    struct RecoverySummary<'a> {
        family: &'a FamilyConfig,
        rule: RecoveryRule,
        trajectories: usize,
        out_of_range_count: usize,
        tv_to_prior: f64,
        prior: &'a BinnedMarginal,
        marginal: &'a BinnedMarginal,
    }
    let tv = tv_distance(&marginal, &prior)?;
    write_json(
        &run.out.join("recovery.json"),
        &RecoverySummary {
            family: &config.family,
            rule: config.rule,
            trajectories: dataset.len(),
            out_of_range_count: out_of_range,
            tv_to_prior: tv,
            prior: &prior,
            marginal: &marginal,
        },
    )?;
    let mut table = String::from("bin_lo,bin_hi,prior,recovered\n");
    let e = prior.edges();
    for b in 0..prior.bins() {
        let _ = writeln!(table, "{},{},{},{}", e[b], e[b + 1], prior.mass()[b], marginal.mass()[b]);
    }
    fs::write(run.out.join("recovered_marginal.csv"), table)?;
    writeln!(stdout, "recovered {} trajectories, TV(recovered, prior) = {tv}", dataset.len())?;
    run.write_run_metadata("recover")
}

fn write_report_files(run: &Run, report: &DriftReport, stem: &str) -> Result<()> {
    write_json(&run.file(stem, "json", report.seed), report)?;
    fs::write(run.file("marginals", "csv", report.seed), marginals_csv(report))?;
    fs::write(run.file("plot_data", "csv", report.seed), plot_data_csv(report, PLOT_POINTS))?;
    Ok(())
}

#[derive(Serialize)]
struct SeedStatistics {
    seeds: Vec<u64>,
    /// `TV(predicted, prior) − TV(sampled data, prior)` per seed.
    differences: Vec<f64>,
    test: TTest,
}

fn predict(run: &Run, sigma: Option<f64>, stdout: &mut dyn Write) -> Result<()> {
    let config = run.with_sigma(sigma)?;
    let mut diffs = Vec::new();
    for &seed in &run.seeds {
        let report = drift_report(&config.setup(seed))?;
        write_report_files(run, &report, "drift_report")?;
        writeln!(
            stdout,
            "seed {seed} sigma {}: TV(pred, prior) = {}, TV(data, prior) = {}, TV(pred, data) = {}",
            report.sigma, report.tv_pred_prior, report.tv_sampled_data_prior, report.tv_pred_data
        )?;
        diffs.push(report.tv_pred_prior - report.tv_sampled_data_prior);
    }
    if run.multi() {
        let test = paired_t_test(&diffs)?;
        writeln!(stdout, "paired t = {}, p = {}, df = {}", test.t, test.p, test.df)?;
        write_json(
            &run.out.join("seed_statistics.json"),
            &SeedStatistics {
                seeds: run.seeds.clone(),
                differences: diffs,
                test,
            },
        )?;
    }
    run.write_run_metadata("predict")
}

fn sweep(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    let mut all = Vec::new();
    for &seed in &run.seeds {
        let dir = if run.multi() {
            run.out.join("sweep").join(format!("seed_{seed}"))
        } else {
            run.out.join("sweep")
        };
        fs::create_dir_all(&dir)?;
        let reports = sigma_sweep(&run.config.setup(seed), &run.config.sigmas)?;
        for r in &reports {
            write_json(&dir.join(format!("sigma_{}.json", r.sigma)), r)?;
            writeln!(stdout, "seed {seed} sigma {}: TV(pred, prior) = {}", r.sigma, r.tv_pred_prior)?;
        }
        all.extend(reports);
    }
    fs::write(run.out.join("sweep_summary.csv"), sweep_table(&all))?;
    run.write_run_metadata("sweep")
}

/// Recovered marginal of the configured dataset for `seed`, with the
/// recoverer used to measure it.
fn data_marginal(config: &RunConfig, seed: u64) -> Result<(Dataset, Recoverer, BinnedMarginal)> {
    let setup = config.setup(seed);
    let dataset = build_dataset(&setup)?;
    let recoverer = build_recoverer(&setup, &dataset)?;
    let (m, _) = recoverer.pullback(dataset.trajectories())?;
    Ok((dataset, recoverer, m))
}

fn audit(run: &Run, samples: &Path, metadata: &Path, stdout: &mut dyn Write) -> Result<()> {
    let config = &run.config;
    let (_, model) = ingest_with_ids(samples, metadata, &config.family, &config.prior)?;
    let seed = run.seeds[0];
    let (_, recoverer, data) = data_marginal(config, seed)?;
    let (model_marginal, out_of_range) = recoverer.pullback(model.trajectories())?;
    let prior = config.prior.as_marginal();

    #[derive(Serialize)]
    struct AuditReport {
        samples: usize,
        seed: u64,
        tv_model_prior: f64,
        tv_model_data: f64,
        tv_data_prior: f64,
        out_of_range_count: usize,
        signed_drift: Vec<f64>,
        prior: BinnedMarginal,
        data_marginal: BinnedMarginal,
        model_marginal: BinnedMarginal,
    }
    let report = AuditReport {
        samples: model.len(),
        seed,
        tv_model_prior: tv_distance(&model_marginal, &prior)?,
        tv_model_data: tv_distance(&model_marginal, &data)?,
        tv_data_prior: tv_distance(&data, &prior)?,
        out_of_range_count: out_of_range,
        signed_drift: signed_drift(&model_marginal, &data)?,
        prior,
        data_marginal: data,
        model_marginal,
    };
    write_json(&run.out.join("audit.json"), &report)?;
    writeln!(
        stdout,
        "audited {} samples: TV(model, prior) = {}, TV(model, data) = {}",
        report.samples, report.tv_model_prior, report.tv_model_data
    )?;
    run.write_run_metadata("audit")
}

fn reweight(run: &Run, sigma: Option<f64>, model: Option<(PathBuf, PathBuf)>, stdout: &mut dyn Write) -> Result<()> {
    let config = run.with_sigma(sigma)?;
    let seed = run.seeds[0];
    let setup = config.setup(seed);
    let dataset = build_dataset(&setup)?;
    let recoverer = build_recoverer(&setup, &dataset)?;
    let (model_marginal, source) = match model {
        Some((csv, meta)) => {
            let (_, samples) = ingest_with_ids(&csv, &meta, &config.family, &config.prior)?;
            (recoverer.pullback(samples.trajectories())?.0, "samples")
        }
        None => (drift_report(&setup)?.predicted_marginal, "prediction"),
    };
    let recovered: Vec<f64> = recover_each(&config, &recoverer, dataset.trajectories())?
        .iter()
        .map(|r| r.scalar(config.rule))
        .collect();
    let floor = config.mitigation.reweight_floor;
    let plan = compute_reweight_with_floor(&recovered, &config.prior, &model_marginal, floor)?;
    let inverse = inverse_prior(&model_marginal, config.mitigation.inverse_floor_fraction)?;
    fs::write(run.out.join("reweight.csv"), plan.to_csv())?;

    #[derive(Serialize)]
    struct ReweightSummary<'a> {
        model_source: &'a str,
        sigma: f64,
        seed: u64,
        floor: f64,
        clamped: usize,
        model_marginal: &'a BinnedMarginal,
        inverse_prior: &'a BinnedMarginal,
    }
    write_json(
        &run.out.join("reweight.json"),
        &ReweightSummary {
            model_source: source,
            sigma: config.kernel.sigma,
            seed,
            floor,
            clamped: plan.clamped,
            model_marginal: &model_marginal,
            inverse_prior: &inverse,
        },
    )?;
    writeln!(stdout, "wrote weights for {} trajectories", plan.weights.len())?;
    run.write_run_metadata("mitigate")
}

fn transform(run: &Run, sigma: Option<f64>, stdout: &mut dyn Write) -> Result<()> {
    let config = run.with_sigma(sigma)?;
    let seed = run.seeds[0];
    let t = &config.mitigation.transform;
    let mut setup = config.setup(seed);
    setup.dataset_size = t.support_size;
    let dataset = build_dataset(&setup)?;
    let recoverer = build_recoverer(&setup, &dataset)?;
    let posteriors = recover_each(&config, &recoverer, dataset.trajectories())?
        .iter()
        .map(|r| r.posterior(&config))
        .collect::<Result<Vec<_>>>()?;
    let code_dim = dataset.horizon() * dataset.dim();
    let plan = transform_plan(
        &posteriors,
        &config.prior.as_marginal(),
        code_dim,
        &config.kernel,
        t,
        derive_seed(seed, "transform", 0),
    )?;
    write_json(&run.out.join("pairing.json"), &plan)?;
    writeln!(
        stdout,
        "mean TV(p_j, prior): {} -> {} over {} swaps",
        plan.initial_mean_tv,
        plan.optimized_mean_tv,
        plan.optimized.trace.len().saturating_sub(1)
    )?;
    run.write_run_metadata("mitigate")
}
