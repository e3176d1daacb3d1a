use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lineup_core::data::{GroupedDesign, ModelSpec};
use lineup_core::diag::{self, HTestMode, DEFAULT_MIN_GROUP_SIZE};
use lineup_core::lineup::{make_lineup, render_svg, LineupRequest, PlotSpec, RenderOptions};
use lineup_core::lme::{self, FitOptions, Method};
use lineup_core::pboot::{BootstrapConfig, NullModelKind};
use lineup_core::synth::SynthKind;
use lineup_core::vpvalue::{self, DEFAULT_COMBINED_REPS, DEFAULT_REPS};
use lineup_study::{demo_config, report_from_disk, simulate_observers, store::Store, DataSource, StudyConfig, StudyService};

#[derive(Parser)]
#[command(name = "lmelineup", version, about = "Lineup diagnostics for linear mixed-effects models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and print estimates.
    Fit(FitArgs),
    /// Heteroscedasticity test on per-group residual dispersion.
    Htest(HtestArgs),
    /// Visual p-value for x of K picks (several K values combine replicates).
    Pvalue(PvalueArgs),
    /// Build one lineup and write its SVG; the answer goes to a separate file.
    Lineup(LineupArgs),
    /// Create a study from a JSON config, or the built-in demo.
    Create(CreateArgs),
    /// Serve the study API.
    Serve(ServeArgs),
    /// Print a study report rebuilt from its pick log.
    Report(ReportArgs),
    /// Run synthetic observers through a study.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV input (header required).
    #[arg(long, requires = "model", conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Model spec TOML: response, fixed, random, group.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Use a synthetic dataset instead of a CSV.
    #[arg(long, value_parser = parse_synth)]
    synth: Option<SynthKind>,
    #[arg(long, default_value_t = 1)]
    synth_seed: u64,
}

fn parse_synth(s: &str) -> std::result::Result<SynthKind, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| {
        "expected one of balanced-oneway, radon-like, longitudinal-like, dialyzer-like, exam-like".to_string()
    })
}

impl DataArgs {
    fn source(&self) -> Result<DataSource> {
        match (&self.data, &self.model, self.synth) {
            (Some(data), Some(model), None) => {
                let text = fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
                Ok(DataSource::Csv {
                    path: data.clone(),
                    model: ModelSpec::from_toml(&text)?,
                })
            }
            (None, _, Some(kind)) => Ok(DataSource::synthetic(kind, self.synth_seed)),
            _ => bail!("give either --data with --model, or --synth"),
        }
    }

    fn load(&self) -> Result<GroupedDesign> {
        Ok(self.source()?.load()?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Reml,
    Ml,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Reml => Method::Reml,
            MethodArg::Ml => Method::Ml,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "reml")]
    method: MethodArg,
    /// Print the fit as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct HtestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Minimum group size; several values give a sweep table.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_MIN_GROUP_SIZE])]
    min_size: Vec<usize>,
    /// Bootstrap replicates for a simulated reference distribution (0 = χ² only).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct PvalueArgs {
    /// Picks of the data panel (summed over replicates).
    #[arg(long)]
    x: usize,
    /// Evaluations per replicate, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also report the binomial baseline (single replicate only).
    #[arg(long)]
    binomial: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct LineupArgs {
    #[command(flatten)]
    data: DataArgs,
    /// qq1, qq2:<component>, cyclone, smooth:<covariate>, fanned:<covariate>, rescatter
    #[arg(long, value_parser = parse_plot)]
    plot: PlotSpec,
    /// same, drop-fixed:<term>, drop-random:<term>, uncorrelated
    #[arg(long, value_parser = parse_null, default_value = "same")]
    null: NullModelKind,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "lineup.svg")]
    out: PathBuf,
    /// Sealed answer file; defaults to `<out>.answer.json`.
    #[arg(long)]
    answer: Option<PathBuf>,
}

fn index_arg(s: &str, prefix: &str) -> Option<std::result::Result<usize, String>> {
    s.strip_prefix(prefix)
        .map(|rest| rest.parse().map_err(|_| format!("`{rest}` is not an index")))
}

fn parse_plot(s: &str) -> std::result::Result<PlotSpec, String> {
    const LEVEL: f64 = 0.95;
    match s {
        "qq1" => return Ok(PlotSpec::QqLevel1 { band_level: LEVEL }),
        "cyclone" => return Ok(PlotSpec::Cyclone),
        "rescatter" => return Ok(PlotSpec::ReScatter),
        _ => {}
    }
    if let Some(c) = index_arg(s, "qq2:") {
        return Ok(PlotSpec::QqLevel2 {
            component: c?,
            band_level: LEVEL,
        });
    }
    if let Some(c) = index_arg(s, "smooth:") {
        return Ok(PlotSpec::ResidualSmooth { covariate: c? });
    }
    if let Some(c) = index_arg(s, "fanned:") {
        return Ok(PlotSpec::FannedLines { covariate: c? });
    }
    Err(format!("unknown plot `{s}`"))
}

fn parse_null(s: &str) -> std::result::Result<NullModelKind, String> {
    match s {
        "same" => return Ok(NullModelKind::SameModel),
        "uncorrelated" => return Ok(NullModelKind::UncorrelatedRe),
        _ => {}
    }
    if let Some(i) = index_arg(s, "drop-fixed:") {
        return Ok(NullModelKind::DropFixed(i?));
    }
    if let Some(j) = index_arg(s, "drop-random:") {
        return Ok(NullModelKind::DropRandom(j?));
    }
    Err(format!("unknown null model `{s}`"))
}

#[derive(Args)]
struct StoreArgs {
    #[arg(long, env = "LMELINEUP_DATA_DIR", default_value = "lineup-data")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct CreateArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Study config JSON.
    #[arg(long, conflicts_with = "demo")]
    config: Option<PathBuf>,
    /// Create the demo study under this id.
    #[arg(long)]
    demo: Option<String>,
    /// Replicates per design for the demo.
    #[arg(long, default_value_t = 5)]
    replicates: u32,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, env = "LMELINEUP_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "LMELINEUP_HOST", default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    study: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    study: String,
    #[arg(long, default_value_t = 20)]
    observers: usize,
    #[arg(long, default_value_t = 0.5)]
    accuracy: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn fit(args: &FitArgs) -> Result<()> {
    let design = args.data.load()?;
    let f = lme::fit(&design, args.method.into(), &FitOptions::default())?;
    if args.json {
        println!("{}", f.to_json()?);
        return Ok(());
    }
    println!(
        "{} fit: {} observations in {} groups, criterion {:.4}, {} after {} iterations",
        f.method,
        f.n_obs,
        f.n_groups,
        f.criterion,
        if f.converged { "converged" } else { "NOT converged" },
        f.n_iter
    );
    println!("\nfixed effects");
    for (name, b) in f.fixed_names.iter().zip(f.beta.iter()) {
        println!("  {name:<24} {b:>12.5}");
    }
    println!("\nrandom-effect covariance");
    for (i, name) in f.random_names.iter().enumerate() {
        let row: Vec<String> = (0..f.q()).map(|j| format!("{:>10.5}", f.cov.d[(i, j)])).collect();
        println!("  {name:<24} {}", row.join(" "));
    }
    println!("\nresidual variance {:.5}", f.cov.sigma2);
    Ok(())
}

fn htest(args: &HtestArgs) -> Result<()> {
    let design = args.data.load()?;
    let rows = if args.bootstrap > 0 {
        let f = lme::fit(&design, Method::Reml, &FitOptions::default())?;
        let cfg = BootstrapConfig::new(args.bootstrap, args.seed);
        if args.min_size.len() == 1 {
            vec![diag::h_test(
                &design,
                args.min_size[0],
                HTestMode::Bootstrap {
                    fitted: &f,
                    config: cfg,
                },
            )?]
        } else {
            diag::h_sweep(&design, args.min_size.iter().copied(), Some((&f, &cfg)))?
        }
    } else if args.min_size.len() == 1 {
        vec![diag::h_test(&design, args.min_size[0], HTestMode::ChiSquare)?]
    } else {
        diag::h_sweep(&design, args.min_size.iter().copied(), None)?
    };
    if args.csv {
        print!("{}", diag::h_table_csv(&rows));
    } else {
        print!("{}", diag::h_table_text(&rows));
    }
    Ok(())
}

fn pvalue(args: &PvalueArgs) -> Result<()> {
    let mut out = Vec::new();
    if let [k] = args.k[..] {
        out.push(vpvalue::visual_pvalue_mc(args.x, k, args.m, args.reps.unwrap_or(DEFAULT_REPS), args.seed)?);
        if args.binomial {
            out.push(vpvalue::binomial_pvalue(args.x, k, args.m)?);
        }
    } else {
        if args.binomial {
            bail!("--binomial applies to a single replicate");
        }
        let reps = args.reps.unwrap_or(DEFAULT_COMBINED_REPS);
        out.push(vpvalue::combined_pvalue(args.x, &args.k, args.m, reps, args.seed)?);
    }
    if args.json {
        let v = if out.len() == 1 {
            serde_json::to_value(&out[0])?
        } else {
            serde_json::to_value(&out)?
        };
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        for p in &out {
            let method = match p.method {
                vpvalue::PMethod::VisualMc { reps } => format!("visual, {reps} runs"),
                vpvalue::PMethod::Binomial => "binomial".to_string(),
            };
            let se = p.mc_se.map(|s| format!(" (se {s:.5})")).unwrap_or_default();
            println!("{}/{} of m={}: p = {:.5}{se} {} [{method}]", p.x, p.k, p.m, p.p, p.significance());
        }
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "lineup".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn lineup(args: &LineupArgs) -> Result<()> {
    let design = args.data.load()?;
    let f = lme::fit(&design, Method::Reml, &FitOptions::default())?;
    let mut req = LineupRequest::new(sibling(&args.out, "").display().to_string(), args.plot.clone(), args.null, args.seed);
    req.m = args.m;
    let lineup = make_lineup(&design, &f, &req)?;
    let opts = RenderOptions {
        rows: args.m.div_ceil(5),
        cols: args.m.min(5),
        ..RenderOptions::default()
    };
    fs::write(&args.out, render_svg(&lineup, &opts)?).with_context(|| format!("writing {}", args.out.display()))?;
    let meta = sibling(&args.out, ".meta.json");
    fs::write(&meta, serde_json::to_string_pretty(&lineup.meta())?)?;
    let answer = args.answer.clone().unwrap_or_else(|| sibling(&args.out, ".answer.json"));
    fs::write(&answer, serde_json::to_string_pretty(&lineup.answer_key())?)?;
    println!(
        "wrote {} and {}; answer sealed in {}",
        args.out.display(),
        meta.display(),
        answer.display()
    );
    Ok(())
}

fn create(args: &CreateArgs) -> Result<()> {
    let cfg: StudyConfig = match (&args.config, &args.demo) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(id)) => demo_config(id, args.replicates),
        (None, None) => bail!("give --config or --demo"),
    };
    let service = StudyService::open(&args.store.data_dir)?;
    let summary = service.create_study(cfg)?;
    println!("created study {} with {} lineups", summary.study_id, summary.lineups);
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let service = Arc::new(StudyService::open(&args.store.data_dir)?);
    let addr = SocketAddr::new(args.host, args.port);
    tokio::runtime::Runtime::new()?.block_on(lineup_study::http::serve(service, addr))?;
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let store = Store::open(&args.store.data_dir)?;
    let r = report_from_disk(&store, &args.study)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print!("{}", r.to_text());
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let service = StudyService::open(&args.store.data_dir)?;
    let s = simulate_observers(&service, &args.study, args.observers, args.accuracy, args.seed)?;
    println!("{} observers submitted {} picks", s.observers, s.picks);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Fit(a) => fit(&a),
        Command::Htest(a) => htest(&a),
        Command::Pvalue(a) => pvalue(&a),
        Command::Lineup(a) => lineup(&a),
        Command::Create(a) => create(&a),
        Command::Serve(a) => serve(&a),
        Command::Report(a) => report(&a),
        Command::Simulate(a) => simulate(&a),
    }
}
