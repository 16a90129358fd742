use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iwmm::config::RunConfig;
use iwmm::data::chain::{fit_chain, ChainFile};
use iwmm::data::{generate, save_csv, save_libsvm, GeneratorParams, Shape};
use iwmm::eval_bench::{aggregate, benchmark, parse_dataset_spec, score_chain, write_aggregate_csv, write_report_csv};
use iwmm::exec::Execution;
use iwmm::predictive::{density_grid, Axis, PredictiveDensity};
use iwmm::{Error, Result};

/// Infinite warped mixture model: fit, predict and benchmark.
#[derive(Parser)]
#[command(name = "iwmm", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (CSV if the path ends in .csv, else LIBSVM
    /// text) and its generator settings to `<out>.meta.json`.
    Generate {
        #[arg(long)]
        shape: Shape,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sampler on a dataset and save the chain.
    Fit {
        /// Data file (CSV or LIBSVM) or a generator spec such as `two-curve:100`.
        #[arg(long)]
        data: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        chain_out: PathBuf,
    },
    /// Evaluate the predictive density of a 2-D chain on a grid.
    DensityGrid {
        #[arg(long)]
        chain: PathBuf,
        /// First axis as `min:max:count`, original units. Defaults to the
        /// training data's range padded by a quarter on each side.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<Axis>,
        /// Second axis as `min:max:count`.
        #[arg(long, allow_hyphen_values = true)]
        y: Option<Axis>,
        /// Nodes per axis for defaulted axes.
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Latent draws per posterior sample (default: the chain's config).
        #[arg(long)]
        m_inner: Option<usize>,
        /// CSV output; metadata goes to `<out>.meta.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a chain: training Rand index and test log likelihood, as JSON.
    Score {
        #[arg(long)]
        chain: PathBuf,
        /// Held-out data in original units (CSV or LIBSVM, or a generator spec).
        #[arg(long)]
        test: String,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated comparison of the methods listed in the config.
    Benchmark {
        #[command(flatten)]
        config: ConfigArgs,
        /// Per-fold report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Aggregate CSV (mean and standard error per dataset and method).
        /// Printed to stdout when omitted.
        #[arg(long)]
        aggregate_out: Option<PathBuf>,
    },
    /// Print the fully resolved configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set eta=0.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Latent dimension; 0 means the data dimension.
    #[arg(long)]
    latent_dim: Option<usize>,
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn toml_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut table = match &self.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in &self.overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not KEY=VALUE")))?;
            table.insert(key.trim().to_string(), toml_value(value.trim()));
        }
        let mut set = |key: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                table.insert(key.into(), v);
            }
        };
        let int = |v: Option<u64>| v.map(|v| toml::Value::Integer(v as i64));
        set("seed", int(self.seed));
        set("iterations", int(self.iterations.map(|v| v as u64)));
        set("burn_in", int(self.burn_in.map(|v| v as u64)));
        set("thin", int(self.thin.map(|v| v as u64)));
        set("latent_dim", int(self.latent_dim.map(|v| v as u64)));
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        RunConfig::from_toml_str(&text)
    }
}

fn save_dataset(data: &iwmm::data::Dataset, out: &Path) -> Result<()> {
    if out.extension().is_some_and(|e| e == "csv") {
        save_csv(data, out)
    } else {
        save_libsvm(data, out)
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Generate { shape, n, seed, out } => {
            let data = generate(shape, n, seed)?;
            save_dataset(&data, &out)?;
            let meta = serde_json::json!({
                "shape": shape,
                "n": n,
                "seed": seed,
                "params": GeneratorParams::default(),
            });
            let meta_path = format!("{}.meta.json", out.display());
            std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
                .map_err(|e| Error::Config(format!("{meta_path}: {e}")))?;
            log::info!("wrote {} points of {shape} (seed {seed}) to {}", n, out.display());
        }
        Command::Fit {
            data,
            config,
            chain_out,
        } => {
            let config = config.resolve()?;
            let dataset = parse_dataset_spec(&data, config.seed)?;
            log::info!("config digest {} seed {}", config.digest(), config.seed);
            let chain = fit_chain(&dataset, &config)?;
            let d = &chain.header.diagnostics;
            log::info!(
                "fit done: samples={} accept_x={:.3} accept_theta={:.3} final_clusters={}",
                chain.samples.len(),
                d.accept_rate_x,
                d.accept_rate_theta,
                d.cluster_counts.last().copied().unwrap_or(0)
            );
            chain.save(&chain_out)?;
        }
        Command::DensityGrid {
            chain,
            x,
            y,
            count,
            m_inner,
            out,
        } => {
            let chain = ChainFile::load(&chain)?;
            let h = &chain.header;
            if h.d != 2 {
                return Err(Error::UnsupportedDimension(h.d));
            }
            let config = &h.config;
            let original = h.transform.invert(&h.train().y);
            let axis = |given: Option<Axis>, col: usize| match given {
                Some(a) => Ok(a),
                None => Axis::covering(original.column(col).iter().copied(), 0.25, count),
            };
            let axes = [axis(x, 0)?, axis(y, 1)?];
            let samples = iwmm::eval_bench::thin_evenly(&chain.samples, config.max_predictive_samples);
            let q = samples.first().ok_or(Error::EmptyChain)?.x.ncols();
            let density = PredictiveDensity::new(
                &samples,
                &h.train().y,
                &config.niw_prior(q)?,
                config.concentration()?,
                m_inner.unwrap_or(config.m_inner),
                config.seed,
                exec,
            )?;
            let mut grid = density_grid(&density, axes, Some(&h.transform), config.seed, exec)?;
            grid.config_digest = h.config_digest.clone();
            log::info!("grid mass over the box: {:.4}", grid.mass());
            grid.save(&out)?;
        }
        Command::Score { chain, test, out } => {
            let chain = ChainFile::load(&chain)?;
            let test = parse_dataset_spec(&test, chain.header.seed)?;
            let score = score_chain(&chain, &test, exec)?;
            let text = serde_json::to_string_pretty(&score)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text + "\n").map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => println!("{text}"),
            }
        }
        Command::Benchmark {
            config,
            out,
            aggregate_out,
        } => {
            let config = config.resolve()?;
            log::info!("config digest {}", config.digest());
            let rows = benchmark(&config, exec)?;
            write_report_csv(&rows, &out)?;
            let agg = aggregate(&rows);
            match aggregate_out {
                Some(path) => write_aggregate_csv(&agg, &path)?,
                None => {
                    println!("dataset,method,n_ok,n_failed,rand_index_mean,rand_index_stderr,test_log_lik_mean,test_log_lik_stderr,wall_time_s_mean");
                    for a in agg {
                        println!(
                            "{},{},{},{},{},{},{},{},{}",
                            a.dataset,
                            a.method,
                            a.n_ok,
                            a.n_failed,
                            a.rand_index_mean,
                            a.rand_index_stderr,
                            a.test_log_lik_mean,
                            a.test_log_lik_stderr,
                            a.wall_time_s_mean
                        );
                    }
                }
            }
        }
        Command::ShowConfig { config } => {
            let config = config.resolve()?;
            print!("{}", config.to_toml_string());
            println!("# digest {}", config.digest());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
