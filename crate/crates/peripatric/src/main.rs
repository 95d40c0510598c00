//! Command-line front end: simulators, exact tables, and the convergence
//! studies, all reproducible from a seed and an optional key=value config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use peripatric::ancestral::{
    collapse_time, first_phi_event_time, simulate_ancestry, CollapseTime, ColonyInit,
};
use peripatric::coalescent::{
    censored_generator, kingman_rates, simulate_censored, simulate_kingman, tmrca_stats,
    transition_row, CensoredState,
};
use peripatric::colony::{
    integrate_fluid_limit, sample_stationary, simulate_colony_path, stationary_pmf,
};
use peripatric::studies::{
    ancestral_convergence_study, duality_study, fluid_concentration_study,
    kingman_convergence_study, AncestralConvergenceConfig, ConvergenceReport, DualityConfig,
    EpsRule, FluidConcentrationConfig, KingmanConvergenceConfig,
};
use peripatric::{Error, ModelParams, Result, Rng};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "peripatric",
    version,
    about = "Simulators and exact numerics for peripatric metapopulation genealogies",
    disable_help_subcommand = true
)]
struct Cli {
    /// Worker threads for replicate fan-out (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the time-changed Kingman rate table and the censored generator.
    Rates(RatesArgs),
    /// Print the stationary colony-count table.
    Stationary(StationaryArgs),
    /// Integrate the fluid-limit ODE.
    Fluid(FluidArgs),
    /// Simulate the colony-count chain.
    Colony(ColonyArgs),
    /// Simulate the backward ancestral chain and dump trajectories.
    Ancestry(AncestryArgs),
    /// Censored coalescent: exact distributions or simulated paths.
    Coalescent(CoalescentArgs),
    /// Simulate inter-coalescence times of the time-changed Kingman limit.
    Kingman(KingmanArgs),
    /// Convergence of the rescaled ancestral chain to the censored coalescent.
    #[command(name = "study-thm1")]
    StudyThm1(StudyArgs),
    /// Convergence of accelerated censored chains to the Kingman limit.
    #[command(name = "study-thm2")]
    StudyThm2(StudyArgs),
    /// Concentration of the scaled colony count at the fluid equilibrium.
    #[command(name = "study-lemma1")]
    StudyLemma1(StudyArgs),
    /// Forward-vs-backward occupancy comparison at matched times.
    Duality(StudyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct RatesArgs {
    /// Sample size.
    #[arg(long, default_value_t = 4)]
    n: u32,
    /// Acceleration limit ratio; accepts `inf`.
    #[arg(long, default_value = "1")]
    p: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ModelArgs {
    /// Main population size N.
    #[arg(short = 'N', long)]
    pop_size: u64,
    /// Colony size fraction (eps * N must be integral).
    #[arg(long, conflicts_with_all = ["eps_n", "eps_rule"])]
    eps: Option<f64>,
    /// Colony size in individuals.
    #[arg(long, conflicts_with = "eps_rule")]
    eps_n: Option<u64>,
    /// Use the rule eps*N = round(N^(2/3)).
    #[arg(long)]
    eps_rule: bool,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        if self.eps_rule {
            return ModelParams::with_eps_rule(self.pop_size, self.theta, self.gamma, self.alpha);
        }
        if let Some(eps_n) = self.eps_n {
            return ModelParams::with_colony_size(
                self.pop_size,
                eps_n,
                self.theta,
                self.gamma,
                self.alpha,
            );
        }
        match self.eps {
            Some(eps) => ModelParams::new(self.pop_size, eps, self.theta, self.gamma, self.alpha),
            None => Err(Error::InvalidParams(
                "specify one of --eps, --eps-n, --eps-rule".into(),
            )),
        }
    }
}

#[derive(Args)]
struct StationaryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e-10)]
    tail_tol: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct FluidArgs {
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    z0: f64,
    #[arg(long, default_value_t = 5.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ColonyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Initial colony count (stationary draw when omitted).
    #[arg(long)]
    k0: Option<u64>,
    #[arg(long, default_value_t = 1000.0)]
    horizon: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct AncestryArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Sample size (all lineages start in the main population).
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Horizon in rescaled time.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Colony-count start: `stationary` or `fixed:<k>`.
    #[arg(long, default_value = "stationary")]
    colony_init: String,
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output path; with several replicates, `.rep<i>` is appended.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoalescentArgs {
    #[arg(long, default_value_t = 4)]
    n: u32,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Initial state `r0,r1` (defaults to all-inner `n,0`).
    #[arg(long)]
    initial: Option<String>,
    /// Times for exact distributions (comma-separated).
    #[arg(long, default_value = "0.1,0.5,1")]
    times: String,
    /// Simulate paths instead of computing exact distributions.
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct KingmanArgs {
    #[arg(long, default_value_t = 4)]
    n: u32,
    /// Acceleration limit ratio; accepts `inf`.
    #[arg(long, default_value = "1")]
    p: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    replicates: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct StudyArgs {
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is a
            // validation failure.
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            std::process::exit(1);
        }
    }
    let code = match run(cli.command) {
        Ok(()) => 0,
        Err(e @ Error::EventCapExceeded { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Rates(args) => cmd_rates(args),
        Command::Stationary(args) => cmd_stationary(args),
        Command::Fluid(args) => cmd_fluid(args),
        Command::Colony(args) => cmd_colony(args),
        Command::Ancestry(args) => cmd_ancestry(args),
        Command::Coalescent(args) => cmd_coalescent(args),
        Command::Kingman(args) => cmd_kingman(args),
        Command::StudyThm1(args) => cmd_study_thm1(args),
        Command::StudyThm2(args) => cmd_study_thm2(args),
        Command::StudyLemma1(args) => cmd_study_lemma1(args),
        Command::Duality(args) => cmd_duality(args),
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn provenance(cmd: &str, fields: &[(&str, String)]) -> String {
    let mut s = format!("# peripatric v{VERSION} {cmd}\n");
    for (k, v) in fields {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

fn parse_p(text: &str) -> Result<f64> {
    match text.trim() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|_| Error::InvalidParams(format!("p must be a number or 'inf', got {other}"))),
    }
}

fn parse_f64_list(text: &str, field: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParams(format!("config field '{field}': bad number {s}")))
        })
        .collect()
}

fn parse_u64_list(text: &str, field: &str) -> Result<Vec<u64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidParams(format!("config field '{field}': bad integer {s}")))
        })
        .collect()
}

fn cmd_rates(args: RatesArgs) -> Result<()> {
    let p = parse_p(&args.p)?;
    let kp = kingman_rates(args.n, p, args.alpha)?;
    let gen = censored_generator(args.n, args.theta, args.gamma, args.alpha)?;
    let content = match args.output.format {
        Format::Csv => {
            let mut s = provenance(
                "rates",
                &[
                    ("n", args.n.to_string()),
                    ("p", args.p.clone()),
                    ("alpha", args.alpha.to_string()),
                    ("theta", args.theta.to_string()),
                    ("gamma", args.gamma.to_string()),
                    ("q_frac", kp.q_frac.to_string()),
                ],
            );
            s.push_str("l,c_l\n");
            for l in 2..=args.n {
                let _ = writeln!(s, "{l},{}", kp.rate(l));
            }
            s.push_str("# censored generator\n");
            s.push_str(&gen.to_csv());
            s
        }
        Format::Json => {
            let obj = serde_json::json!({
                "provenance": {"version": VERSION, "command": "rates"},
                "n": args.n,
                "p": args.p,
                "alpha": args.alpha,
                "q_frac": kp.q_frac,
                "c": (2..=args.n).map(|l| kp.rate(l)).collect::<Vec<_>>(),
                "generator": {
                    "states": gen.states.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                    "q": (0..gen.dim()).map(|i| gen.row(i).to_vec()).collect::<Vec<_>>(),
                },
            });
            serde_json::to_string_pretty(&obj).expect("json") + "\n"
        }
    };
    emit(&args.output.out, &content)
}

fn cmd_stationary(args: StationaryArgs) -> Result<()> {
    let params = args.model.params()?;
    let pmf = stationary_pmf(&params, args.tail_tol)?;
    let content = match args.output.format {
        Format::Csv => {
            let mut s = provenance(
                "stationary",
                &[
                    ("N", params.n_big.to_string()),
                    ("eps_n", params.eps_n.to_string()),
                    ("theta", params.theta.to_string()),
                    ("gamma", params.gamma.to_string()),
                    ("alpha", params.alpha.to_string()),
                    ("lambda", params.lambda().to_string()),
                    ("tail_bound", pmf.tail_bound.to_string()),
                ],
            );
            s.push_str("k,prob\n");
            for (k, p) in pmf.probs.iter().enumerate() {
                let _ = writeln!(s, "{k},{p}");
            }
            s
        }
        Format::Json => {
            let obj = serde_json::json!({
                "provenance": {"version": VERSION, "command": "stationary"},
                "N": params.n_big,
                "eps_n": params.eps_n,
                "lambda": params.lambda(),
                "tail_bound": pmf.tail_bound,
                "probs": pmf.probs,
            });
            serde_json::to_string_pretty(&obj).expect("json") + "\n"
        }
    };
    emit(&args.output.out, &content)
}

fn cmd_fluid(args: FluidArgs) -> Result<()> {
    let path = integrate_fluid_limit(args.theta, args.gamma, args.alpha, args.z0, args.horizon, args.dt)?;
    let content = match args.output.format {
        Format::Csv => {
            let mut s = provenance(
                "fluid",
                &[
                    ("theta", args.theta.to_string()),
                    ("gamma", args.gamma.to_string()),
                    ("alpha", args.alpha.to_string()),
                    ("z0", args.z0.to_string()),
                    ("dt", args.dt.to_string()),
                ],
            );
            s.push_str("t,z\n");
            for (t, z) in path {
                let _ = writeln!(s, "{t},{z}");
            }
            s
        }
        Format::Json => {
            let obj = serde_json::json!({
                "provenance": {"version": VERSION, "command": "fluid"},
                "trace": path,
            });
            serde_json::to_string_pretty(&obj).expect("json") + "\n"
        }
    };
    emit(&args.output.out, &content)
}

fn cmd_colony(args: ColonyArgs) -> Result<()> {
    let params = args.model.params()?;
    let mut rng = Rng::new(args.seed);
    let k0 = match args.k0 {
        Some(k) => k,
        None => {
            let pmf = stationary_pmf(&params, 1e-10)?;
            sample_stationary(&pmf, &mut rng)
        }
    };
    let traj = simulate_colony_path(&params, k0, args.horizon, &mut rng)?;
    let content = match args.output.format {
        Format::Csv => {
            let mut s = provenance(
                "colony",
                &[
                    ("N", params.n_big.to_string()),
                    ("eps_n", params.eps_n.to_string()),
                    ("theta", params.theta.to_string()),
                    ("gamma", params.gamma.to_string()),
                    ("alpha", params.alpha.to_string()),
                    ("k0", k0.to_string()),
                    ("seed", args.seed.to_string()),
                ],
            );
            s.push_str("time,count\n");
            for (t, k) in traj.times.iter().zip(traj.counts.iter()) {
                let _ = writeln!(s, "{t},{k}");
            }
            s
        }
        Format::Json => {
            let obj = serde_json::json!({
                "provenance": {"version": VERSION, "command": "colony", "seed": args.seed},
                "k0": k0,
                "times": traj.times,
                "counts": traj.counts,
            });
            serde_json::to_string_pretty(&obj).expect("json") + "\n"
        }
    };
    emit(&args.output.out, &content)
}

fn parse_colony_init(text: &str) -> Result<ColonyInit> {
    if text == "stationary" {
        return Ok(ColonyInit::Stationary);
    }
    if let Some(k) = text.strip_prefix("fixed:") {
        let k = k
            .parse::<u32>()
            .map_err(|_| Error::InvalidParams(format!("bad colony-init count {k}")))?;
        return Ok(ColonyInit::Fixed(k));
    }
    Err(Error::InvalidParams(format!(
        "colony-init must be 'stationary' or 'fixed:<k>', got {text}"
    )))
}

fn cmd_ancestry(args: AncestryArgs) -> Result<()> {
    let params = args.model.params()?;
    if args.n == 0 {
        return Err(Error::InvalidParams("sample size n must be >= 1".into()));
    }
    let colony_init = parse_colony_init(&args.colony_init)?;
    let mut initial = vec![0u32; args.n + 1];
    initial[0] = args.n as u32;
    for rep in 0..args.replicates {
        let mut rng = Rng::for_replicate(args.seed, rep);
        let path = simulate_ancestry(&params, &initial, args.horizon, &mut rng, colony_init)?;
        let mut s = provenance(
            "ancestry",
            &[
                ("N", params.n_big.to_string()),
                ("eps_n", params.eps_n.to_string()),
                ("theta", params.theta.to_string()),
                ("gamma", params.gamma.to_string()),
                ("alpha", params.alpha.to_string()),
                ("n", args.n.to_string()),
                ("seed", args.seed.to_string()),
                ("replicate", rep.to_string()),
                (
                    "collapse_time",
                    match collapse_time(&path) {
                        CollapseTime::At(t) => t.to_string(),
                        CollapseTime::Censored => "censored".to_string(),
                    },
                ),
                (
                    "first_phi_event",
                    first_phi_event_time(&path)
                        .map(|t| t.to_string())
                        .unwrap_or_else(|| "none".to_string()),
                ),
            ],
        );
        s.push_str(&path.to_csv());
        let target = match (&args.out, args.replicates) {
            (None, _) => None,
            (Some(p), 1) => Some(p.clone()),
            (Some(p), _) => Some(with_replicate_suffix(p, rep)),
        };
        emit(&target, &s)?;
    }
    Ok(())
}

fn with_replicate_suffix(path: &Path, rep: u64) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".rep{rep}"));
    path.with_file_name(name)
}

fn cmd_coalescent(args: CoalescentArgs) -> Result<()> {
    let initial = match &args.initial {
        None => CensoredState::new(args.n, 0),
        Some(text) => {
            let parts: Vec<&str> = text.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::InvalidParams(format!(
                    "initial state must be 'r0,r1', got {text}"
                )));
            }
            let r0 = parts[0].trim().parse::<u32>().map_err(|_| {
                Error::InvalidParams(format!("bad r0 in initial state {text}"))
            })?;
            let r1 = parts[1].trim().parse::<u32>().map_err(|_| {
                Error::InvalidParams(format!("bad r1 in initial state {text}"))
            })?;
            CensoredState::new(r0, r1)
        }
    };
    let gen = censored_generator(args.n, args.theta, args.gamma, args.alpha)?;
    if gen.state_index(&initial).is_none() {
        return Err(Error::InvalidParams(format!(
            "initial state {initial} outside the space for n = {}",
            args.n
        )));
    }
    let header = [
        ("n", args.n.to_string()),
        ("theta", args.theta.to_string()),
        ("gamma", args.gamma.to_string()),
        ("alpha", args.alpha.to_string()),
        ("initial", initial.to_string()),
        ("seed", args.seed.to_string()),
    ];
    let content = if args.simulate {
        let mut s = provenance("coalescent-simulate", &header);
        s.push_str("replicate,time,r0,r1\n");
        for rep in 0..args.replicates {
            let mut rng = Rng::for_replicate(args.seed, rep);
            let path = simulate_censored(
                args.n, args.theta, args.gamma, args.alpha, initial, args.horizon, &mut rng,
            )?;
            for (t, st) in path.times.iter().zip(path.states.iter()) {
                let _ = writeln!(s, "{rep},{t},{},{}", st.r0, st.r1);
            }
        }
        s
    } else {
        let times = parse_f64_list(&args.times, "times")?;
        let stats = tmrca_stats(&gen, initial)?;
        match args.output.format {
            Format::Csv => {
                let mut s = provenance("coalescent-exact", &header);
                let _ = writeln!(s, "# tmrca_mean={}", stats.mean);
                s.push_str("t,state,prob\n");
                for &t in &times {
                    let row = transition_row(&gen, &initial, t, 1e-10)?;
                    for (st, p) in gen.states.iter().zip(row.iter()) {
                        let _ = writeln!(s, "{t},\"{st}\",{p}");
                    }
                }
                s
            }
            Format::Json => {
                let mut dists = Vec::new();
                for &t in &times {
                    let row = transition_row(&gen, &initial, t, 1e-10)?;
                    dists.push(serde_json::json!({
                        "t": t,
                        "states": gen.states.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                        "probs": row,
                    }));
                }
                let obj = serde_json::json!({
                    "provenance": {"version": VERSION, "command": "coalescent-exact"},
                    "initial": initial.to_string(),
                    "tmrca_mean": stats.mean,
                    "distributions": dists,
                });
                serde_json::to_string_pretty(&obj).expect("json") + "\n"
            }
        }
    };
    emit(&args.output.out, &content)
}

fn cmd_kingman(args: KingmanArgs) -> Result<()> {
    let p = parse_p(&args.p)?;
    let kp = kingman_rates(args.n, p, args.alpha)?;
    let mut s = provenance(
        "kingman",
        &[
            ("n", args.n.to_string()),
            ("p", args.p.clone()),
            ("alpha", args.alpha.to_string()),
            ("q_frac", kp.q_frac.to_string()),
            (
                "c",
                (2..=args.n)
                    .map(|l| kp.rate(l).to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("seed", args.seed.to_string()),
        ],
    );
    let headers: Vec<String> = (1..args.n).map(|j| format!("tau{j}")).collect();
    let _ = writeln!(s, "replicate,{}", headers.join(","));
    for rep in 0..args.replicates {
        let mut rng = Rng::for_replicate(args.seed, rep);
        let taus = simulate_kingman(&kp, &mut rng)?;
        let row: Vec<String> = taus.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{rep},{}", row.join(","));
    }
    emit(&args.output.out, &s)
}

// --------------------------- study plumbing -------------------------------

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidParams(format!(
                "config line {} is not key=value: {line}",
                lineno + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    fn load(path: &Option<PathBuf>) -> Result<Self> {
        let map = match path {
            Some(p) => read_kv(p)?,
            None => BTreeMap::new(),
        };
        Ok(Self { map })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.map.remove(key) {
            *slot = v.parse::<T>().map_err(|_| {
                Error::InvalidParams(format!("config field '{key}': cannot parse '{v}'"))
            })?;
        }
        Ok(())
    }

    fn take_u64_list(&mut self, key: &str, slot: &mut Vec<u64>) -> Result<()> {
        if let Some(v) = self.map.remove(key) {
            *slot = parse_u64_list(&v, key)?;
        }
        Ok(())
    }

    fn take_f64_list(&mut self, key: &str, slot: &mut Vec<f64>) -> Result<()> {
        if let Some(v) = self.map.remove(key) {
            *slot = parse_f64_list(&v, key)?;
        }
        Ok(())
    }

    fn take_eps_rule(&mut self, key: &str, slot: &mut EpsRule) -> Result<()> {
        if let Some(v) = self.map.remove(key) {
            *slot = match v.as_str() {
                "N^-1/3" | "pow23" => EpsRule::TwoThirdsPower,
                other => match other.strip_prefix("fixed:") {
                    Some(e) => EpsRule::Fixed(e.parse::<f64>().map_err(|_| {
                        Error::InvalidParams(format!("config field '{key}': bad eps '{e}'"))
                    })?),
                    None => {
                        return Err(Error::InvalidParams(format!(
                            "config field '{key}': expected 'N^-1/3' or 'fixed:<eps>', got '{v}'"
                        )))
                    }
                },
            };
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::InvalidParams(format!(
                "unknown config field '{key}'"
            )));
        }
        Ok(())
    }
}

fn write_report(report: &ConvergenceReport, args: &StudyArgs) -> Result<()> {
    let content = match args.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    };
    emit(&args.out, &content)
}

fn cmd_study_thm1(args: StudyArgs) -> Result<()> {
    let mut config = AncestralConvergenceConfig::default();
    let mut kv = KvConfig::load(&args.config)?;
    kv.take("n", &mut config.n)?;
    kv.take("theta", &mut config.theta)?;
    kv.take("gamma", &mut config.gamma)?;
    kv.take("alpha", &mut config.alpha)?;
    kv.take_u64_list("n_grid", &mut config.n_grid)?;
    kv.take_eps_rule("eps_rule", &mut config.eps_rule)?;
    kv.take_f64_list("times", &mut config.times)?;
    kv.take("replicates", &mut config.replicates)?;
    kv.take("seed", &mut config.seed)?;
    kv.take("tv_threshold", &mut config.tv_threshold)?;
    kv.take("event_cap", &mut config.event_cap)?;
    kv.finish()?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.replicates {
        config.replicates = reps;
    }
    let report = ancestral_convergence_study(&config)?;
    write_report(&report, &args)
}

fn cmd_study_thm2(args: StudyArgs) -> Result<()> {
    let mut config = KingmanConvergenceConfig::default();
    let mut kv = KvConfig::load(&args.config)?;
    kv.take("n", &mut config.n)?;
    kv.take("p", &mut config.p)?;
    kv.take("alpha", &mut config.alpha)?;
    kv.take("rate_scale", &mut config.rate_scale)?;
    kv.take_u64_list("k_grid", &mut config.k_grid)?;
    kv.take("replicates", &mut config.replicates)?;
    kv.take("seed", &mut config.seed)?;
    kv.take("ks_threshold", &mut config.ks_threshold)?;
    kv.finish()?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.replicates {
        config.replicates = reps;
    }
    let report = kingman_convergence_study(&config)?;
    write_report(&report, &args)
}

fn cmd_study_lemma1(args: StudyArgs) -> Result<()> {
    let mut config = FluidConcentrationConfig::default();
    let mut kv = KvConfig::load(&args.config)?;
    kv.take("theta", &mut config.theta)?;
    kv.take("gamma", &mut config.gamma)?;
    kv.take("alpha", &mut config.alpha)?;
    kv.take_u64_list("n_grid", &mut config.n_grid)?;
    kv.take_eps_rule("eps_rule", &mut config.eps_rule)?;
    kv.take("horizon", &mut config.horizon)?;
    kv.take("replicates", &mut config.replicates)?;
    kv.take("seed", &mut config.seed)?;
    kv.take("quantile", &mut config.quantile)?;
    kv.take("threshold", &mut config.threshold)?;
    kv.finish()?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.replicates {
        config.replicates = reps;
    }
    let report = fluid_concentration_study(&config)?;
    write_report(&report, &args)
}

fn cmd_duality(args: StudyArgs) -> Result<()> {
    let mut config = DualityConfig::default();
    let mut kv = KvConfig::load(&args.config)?;
    kv.take("n", &mut config.n)?;
    kv.take("N", &mut config.n_big)?;
    kv.take("eps_n", &mut config.eps_n)?;
    kv.take("theta", &mut config.theta)?;
    kv.take("gamma", &mut config.gamma)?;
    kv.take("alpha", &mut config.alpha)?;
    kv.take_f64_list("times", &mut config.times_rescaled)?;
    kv.take("replicates", &mut config.replicates)?;
    kv.take("seed", &mut config.seed)?;
    kv.take("burn_in_factor", &mut config.burn_in_factor)?;
    kv.take("tv_threshold", &mut config.tv_threshold)?;
    kv.finish()?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.replicates {
        config.replicates = reps;
    }
    let report = duality_study(&config)?;
    write_report(&report, &args)
}
