//! `caprec`: population size estimation from capture-recapture lists.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caprec::bench::{emit_report, run_benchmark, BenchConfig};
use caprec::crossfit::{FoldAssignment, NuisanceEstimates};
use caprec::dataset::{check_format, load_dataset, reformat, RawTable};
use caprec::estimator::{
    popsize_cond, popsize_detailed, Method, PairSelection, PopsizeOptions, ResultTable,
    DEFAULT_ALPHA, DEFAULT_MARGIN,
};
use caprec::simulator::{save_config, simulate, DgpForm, DgpSpec};
use caprec::{svg, Error, LearnerKind, ListPair, Result};

#[derive(Parser)]
#[command(
    name = "caprec",
    version,
    about = "Doubly robust population size estimation"
)]
struct Cli {
    /// Worker threads for model fitting and replications [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate capture probability and population size
    Popsize(PopsizeArgs),
    /// Estimate separately within each level of a categorical covariate
    PopsizeCond {
        #[command(flatten)]
        est: EstimateArgs,
        /// Categorical covariate defining the sub-populations
        #[arg(long)]
        condvar: String,
    },
    /// Simulate a population and write the observed lists
    Simulate(SimulateArgs),
    /// Draw confidence intervals from a results CSV as SVG
    Plotci {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "ci.svg")]
        out: PathBuf,
        /// Draw a reference line at the true population size
        #[arg(long)]
        true_n: Option<f64>,
    },
    /// Run a Monte Carlo study described by a key=value config file
    Benchmark {
        config: PathBuf,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Check that the first K columns are valid capture histories
    CheckFormat {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "k-lists", default_value_t = 2)]
        k_lists: usize,
    },
    /// Move the given (1-based) columns to the front as the list columns
    Reformat {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated 1-based column positions, e.g. 3,5
        #[arg(long, value_delimiter = ',', required = true)]
        lists: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with the K list columns first, then covariates
    #[arg(long)]
    data: PathBuf,
    /// Number of lists
    #[arg(long = "k-lists", default_value_t = 2)]
    k_lists: usize,
    /// Use these named columns as the lists instead of the first K
    #[arg(long, value_delimiter = ',')]
    lists: Option<Vec<String>>,
    /// Nuisance models: logit, mlogit, gam, ranger, rangerlogit, sl
    #[arg(long, default_value = "rangerlogit")]
    funcname: String,
    /// Library for sl
    #[arg(long = "sl-lib")]
    sl_lib: Option<String>,
    #[arg(long, default_value_t = 5)]
    nfolds: usize,
    /// Lower bound for estimated probabilities
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Also report the plug-in estimate
    #[arg(long)]
    plugin: bool,
    /// Reserved; targeted maximum likelihood is not available
    #[arg(long)]
    tmle: bool,
    #[arg(long, env = "CAPREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Full-precision results CSV
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PopsizeArgs {
    #[command(flatten)]
    est: EstimateArgs,
    /// First list of the pair [default: 1]. Without --j and --k, every
    /// pair is estimated when there are more than two lists.
    #[arg(long)]
    j: Option<usize>,
    /// Second list of the pair [default: 2]
    #[arg(long)]
    k: Option<usize>,
    /// Use nuisance estimates from a previous run (needs --idfold)
    #[arg(long, requires = "idfold")]
    getnuis: Option<PathBuf>,
    /// Fold labels matching --getnuis
    #[arg(long, requires = "getnuis")]
    idfold: Option<PathBuf>,
    /// Write the nuisance estimates of a single-pair run here
    #[arg(long)]
    save_nuis: Option<PathBuf>,
    /// Write the fold labels of a single-pair run here
    #[arg(long)]
    save_idfold: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Population size
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Number of continuous covariates
    #[arg(long, default_value_t = 1)]
    l: usize,
    #[arg(long = "k-lists", default_value_t = 2)]
    k_lists: usize,
    /// Intercept shift of every list's capture logit
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ep: f64,
    /// Add a three-level factor `catcov`
    #[arg(long)]
    categorical: bool,
    /// Capture logits linear in the covariates
    #[arg(long)]
    linear: bool,
    #[arg(long, env = "CAPREC_SEED", default_value_t = 0)]
    seed: u64,
    /// Directory for data.csv, data_xstar.csv and dgp.cfg
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::NotImplemented(_) | Error::Config { .. } => 2,
        Error::Degenerate(_) => 4,
        Error::Io { .. } | Error::Csv(_) | Error::Data(_) | Error::Fit { .. } => 3,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn options(a: &EstimateArgs) -> Result<PopsizeOptions> {
    if a.tmle {
        return Err(Error::NotImplemented("TMLE"));
    }
    let sl_library = a
        .sl_lib
        .as_deref()
        .map(|s| LearnerKind::parse_list(s, None))
        .transpose()?;
    let kinds = LearnerKind::parse_list(&a.funcname, sl_library.as_deref())?;
    let mut methods = vec![Method::DR];
    if a.plugin {
        methods.push(Method::PI);
    }
    Ok(PopsizeOptions {
        kinds,
        nfolds: a.nfolds,
        margin: a.margin,
        alpha: a.alpha,
        methods,
        seed: a.seed,
        ..PopsizeOptions::default()
    })
}

fn finish(table: &ResultTable, out: &Path) -> Result<()> {
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    print!("{table}");
    table.save(out)
}

fn cmd_popsize(a: PopsizeArgs) -> Result<()> {
    let data = load_dataset(&a.est.data, a.est.k_lists, a.est.lists.as_deref())?;
    let mut opts = options(&a.est)?;
    opts.pairs = if a.j.is_none() && a.k.is_none() && a.getnuis.is_none() && data.n_lists() > 2 {
        PairSelection::All
    } else {
        PairSelection::One(ListPair::new(
            a.j.unwrap_or(1),
            a.k.unwrap_or(2),
            data.n_lists(),
        )?)
    };
    if let (Some(nuis), Some(idfold)) = (&a.getnuis, &a.idfold) {
        opts.injected = Some(NuisanceEstimates::load(
            nuis,
            FoldAssignment::load(idfold)?,
        )?);
    }
    let (table, nuisances) = popsize_detailed(&data, &opts)?;
    if a.save_nuis.is_some() || a.save_idfold.is_some() {
        let [single] = nuisances.as_slice() else {
            return Err(Error::InvalidArgument(
                "--save-nuis and --save-idfold need a single list pair".into(),
            ));
        };
        if let Some(p) = &a.save_nuis {
            single.write_csv(create(p)?)?;
        }
        if let Some(p) = &a.save_idfold {
            single.folds.write_csv(create(p)?)?;
        }
    }
    finish(&table, &a.est.out)
}

fn cmd_popsize_cond(a: EstimateArgs, condvar: &str) -> Result<()> {
    let data = load_dataset(&a.data, a.k_lists, a.lists.as_deref())?;
    let table = popsize_cond(&data, condvar, &options(&a)?)?;
    finish(&table, &a.out)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let form = if a.linear {
        DgpForm::Linear
    } else {
        DgpForm::Nonlinear
    };
    let spec =
        DgpSpec::with_form(form, a.n, a.k_lists, a.l, a.ep, a.seed).with_categorical(a.categorical);
    let sim = simulate(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    sim.data.save(a.out.join("data.csv"))?;
    sim.data_xstar.save(a.out.join("data_xstar.csv"))?;
    save_config(&spec, a.out.join("dgp.cfg"))?;
    println!("psi0 = {:.4}", sim.psi0);
    println!("observed = {}", sim.data.n_obs());
    Ok(())
}

fn cmd_plotci(results: &Path, out: &Path, true_n: Option<f64>) -> Result<()> {
    let table = ResultTable::load(results)?;
    if table.rows.is_empty() {
        return Err(Error::Data(format!(
            "{} has no result rows",
            results.display()
        )));
    }
    write_text(out, &svg::forest_plot(&table, true_n))
}

fn cmd_benchmark(config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|source| Error::Io {
        path: config.to_owned(),
        source,
    })?;
    let cfg = BenchConfig::from_config(&text)?;
    let rows = run_benchmark(&cfg)?;
    let files = emit_report(&rows, cfg.alpha, out)?;
    println!("arm,learner,method,mean_bias,mean_abs_bias,rmse,coverage,reps_used");
    for r in &rows {
        println!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{}",
            r.arm,
            r.learner,
            r.method,
            r.mean_bias,
            r.mean_abs_bias,
            r.rmse,
            r.coverage,
            r.reps_used
        );
    }
    eprintln!("wrote {} and {}", files.csv.display(), files.svg.display());
    Ok(())
}

fn cmd_check_format(data: &Path, k: usize) -> Result<()> {
    let report = check_format(&RawTable::read(data)?, k);
    println!("binary columns: {:?}", report.list_columns_found);
    for v in &report.violations {
        println!("{}: {}", v.location, v.reason);
    }
    if report.is_valid {
        println!("format ok");
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{} violation(s)",
            report.violations.len()
        )))
    }
}

fn cmd_reformat(data: &Path, lists: &[usize], out: &Path) -> Result<()> {
    reformat(&RawTable::read(data)?, lists)?.save(out)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Popsize(a) => cmd_popsize(a),
        Command::PopsizeCond { est, condvar } => cmd_popsize_cond(est, &condvar),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Plotci {
            results,
            out,
            true_n,
        } => cmd_plotci(&results, &out, true_n),
        Command::Benchmark { config, out } => cmd_benchmark(&config, &out),
        Command::CheckFormat { data, k_lists } => cmd_check_format(&data, k_lists),
        Command::Reformat { data, lists, out } => cmd_reformat(&data, &lists, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
