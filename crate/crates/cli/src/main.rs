use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eqrc_core::dataset::unix_now;
use eqrc_core::experiments::{
    bell_vectors, chsh_pairs, run_cyclic_bell, run_wigner_suite, tally_experiment, WignerMode,
};
use eqrc_core::inequalities::{analytic_expectation, cyclic_oracle};
use eqrc_core::output::{write_run_csv, write_sweep_csv, write_triples_csv};
use eqrc_core::stations::{
    collate, run_collator, run_source, run_station, CollatorConfig, Fault, KeyFile,
    MatchStrategy, SourceConfig, StationConfig, StationError, StationLog,
    DEFAULT_HIGH_WATER_MARK,
};
use eqrc_core::{
    bell_check, build_triple_table, chsh_check, rotate_to_canonical, run_bell_suite,
    run_chsh_suite, run_experiment, sample_pair_stream, sweep_angle, ExperimentSpec,
    GaugeKey, InequalityReport, Setting, SettingPair, Station, Switching, TripleKind,
};

#[derive(Parser)]
#[command(name = "eqrc", version, about = "Local-model EPRB spin-correlation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pairs per setting pair.
    #[arg(short = 'n', long = "pairs", visible_alias = "n", default_value_t = 1_000_000)]
    pairs: u64,
    #[arg(long, env = "EQRC_SEED", default_value_t = 1)]
    seed: u64,
    /// one | rademacher:j=K | rademacher-rarb:j=K,seed=S
    #[arg(long, default_value = "rademacher:j=3")]
    gauge: GaugeKey,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Wigner {
    Analytic,
    PerSpace,
    SingleSpace,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate E for one or more (left; right) setting pairs.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        left: Setting,
        /// Repeat for several setting pairs.
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        right: Vec<Setting>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Draw each pair's setting pair at random instead of group by group.
        #[arg(long)]
        switched: bool,
    },
    /// E against the right-wing angle, left fixed at [1, 0].
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 72)]
        steps: usize,
    },
    /// Bell's original inequality at a = [1,0], b = [1/2, √3/2], c = [-1/2, √3/2].
    Bell {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        analytic: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// CHSH at the idealized pairs.
    Chsh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        analytic: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Wigner-d'Espagnat count form.
    Wigner {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Wigner::PerSpace)]
        mode: Wigner,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// The abc' and ab'c triple tables from one pair stream.
    Triples {
        #[command(flatten)]
        common: Common,
    },
    /// The 8-row single-space oracle and a simulated single-space Bell check.
    CyclicDemo {
        #[arg(short = 'n', long = "pairs", visible_alias = "n", default_value_t = 10_000)]
        pairs: u64,
        #[arg(long, env = "EQRC_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "rademacher:j=3")]
        gauge: GaugeKey,
    },
    /// Pair source process.
    Source {
        #[arg(long, default_value_t = 7000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Pairs per session.
        #[arg(short = 'n', long = "pairs", visible_alias = "n", default_value_t = 1_000_000)]
        pairs: u64,
        #[arg(long, default_value_t = 1)]
        sessions: u32,
        #[arg(long, env = "EQRC_SEED", default_value_t = 1)]
        seed: u64,
        /// Emission log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Station process (L or R).
    Station {
        #[arg(long)]
        id: Station,
        /// Setting per session, cycled; repeat for several sessions.
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        setting: Vec<Setting>,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        collator: String,
        /// drop@K | duplicate@K | reorder@K[:W]
        #[arg(long)]
        inject: Option<Fault>,
        /// Report log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Join L and R reports into a dataset, live on --port or from two logs.
    Collate {
        #[arg(long, conflicts_with_all = ["left_log", "right_log"])]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, requires = "right_log")]
        left_log: Option<PathBuf>,
        #[arg(long, requires = "left_log")]
        right_log: Option<PathBuf>,
        #[arg(long = "match", default_value = "pair-id")]
        strategy: MatchStrategy,
        #[arg(long, default_value_t = DEFAULT_HIGH_WATER_MARK)]
        high_water_mark: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a gauge key file for the stations.
    Keygen {
        #[arg(long, default_value = "rademacher:j=3")]
        gauge: GaugeKey,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn sink(out: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn require_pairs(n: u64) -> CliResult {
    if n == 0 {
        return Err(Failure::Usage("--pairs must be at least 1".into()));
    }
    Ok(())
}

fn print_report(out: &Option<PathBuf>, r: &InequalityReport, format: Format) -> CliResult {
    let mut w = sink(out)?;
    match format {
        Format::Jsonl => {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let name = serde_json::to_value(r.name)?;
            let mode = serde_json::to_value(r.mode)?;
            writeln!(w, "inequality={}", name.as_str().unwrap_or_default())?;
            writeln!(w, "mode={}", mode.as_str().unwrap_or_default())?;
            writeln!(w, "lhs={}", r.lhs)?;
            writeln!(w, "rhs={}", r.rhs)?;
            writeln!(w, "lhs_std_error={}", r.lhs_std_error)?;
            writeln!(w, "rhs_std_error={}", r.rhs_std_error)?;
            if let Some(m) = r.margin_sigma {
                writeln!(w, "margin_sigma={m}")?;
            }
            writeln!(w, "violated={}", r.violated)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run(
    common: Common,
    left: Setting,
    rights: Vec<Setting>,
    format: Format,
    switched: bool,
) -> CliResult {
    require_pairs(common.pairs)?;
    if !left.bit_eq(&Setting::CANONICAL) {
        eprintln!("notice: left setting {left} canonicalized to [1, 0]; right settings rotated to match");
    }
    let pairs: Vec<_> = rights
        .into_iter()
        .map(|r| rotate_to_canonical(SettingPair::new(left, r)))
        .collect();
    let mut spec = ExperimentSpec::new(pairs, common.pairs, common.seed, common.gauge);
    if switched {
        spec = spec.switched(Switching::RandomSwitched);
    }
    let mut w = sink(&common.out)?;
    match format {
        Format::Csv => {
            let tallies = tally_experiment(&spec)?;
            let rows = spec
                .setting_pairs
                .iter()
                .zip(&tallies)
                .map(|(p, t)| Ok((*p, t.expectation()?)))
                .collect::<Result<Vec<_>, eqrc_core::StatsError>>()?;
            write_run_csv(&mut w, &rows)?;
        }
        Format::Jsonl => {
            let mut ds = run_experiment(&spec)?;
            ds.header.created_unix = Some(unix_now());
            ds.write_jsonl(&mut w)?;
        }
    }
    Ok(())
}

fn bell(common: Common, analytic: bool, format: Format) -> CliResult {
    let report = if analytic {
        let [a, b, c] = bell_vectors();
        bell_check(
            analytic_expectation(&a, &b),
            analytic_expectation(&a, &c),
            analytic_expectation(&b, &c),
        )?
    } else {
        require_pairs(common.pairs)?;
        run_bell_suite(common.seed, common.pairs, common.gauge)?
    };
    print_report(&common.out, &report, format)
}

fn chsh(common: Common, analytic: bool, format: Format) -> CliResult {
    let report = if analytic {
        let e = chsh_pairs().map(|p| analytic_expectation(&p.left, &p.right));
        chsh_check(e[0], e[1], e[2], e[3])?
    } else {
        require_pairs(common.pairs)?;
        run_chsh_suite(common.seed, common.pairs, common.gauge)?
    };
    print_report(&common.out, &report, format)
}

fn triples(common: Common) -> CliResult {
    require_pairs(common.pairs)?;
    let events = sample_pair_stream(common.seed, common.pairs)?;
    let [a, b, c] = bell_vectors();
    let tables = [TripleKind::AbcPrime, TripleKind::AbPrimeC]
        .map(|k| build_triple_table(k, &events, &common.gauge, (a, b, c)));
    let [t1, t2] = tables;
    write_triples_csv(sink(&common.out)?, &[t1?, t2?])?;
    Ok(())
}

fn cyclic_demo(pairs: u64, seed: u64, gauge: GaugeKey) -> CliResult {
    require_pairs(pairs)?;
    let mut w = sink(&None)?;
    writeln!(w, "A_a,A_b,A_c,e_ab,e_ac,e_bc,lhs,rhs,satisfied")?;
    for r in cyclic_oracle() {
        let [x, y, z] = r.assignment.map(|o| o.value());
        writeln!(
            w,
            "{x},{y},{z},{},{},{},{},{},{}",
            r.e_ab, r.e_ac, r.e_bc, r.lhs, r.rhs, r.satisfied
        )?;
    }
    let report = run_cyclic_bell(seed, pairs, gauge)?;
    writeln!(w, "single_space_pairs={pairs}")?;
    writeln!(w, "lhs={}", report.lhs)?;
    writeln!(w, "rhs={}", report.rhs)?;
    writeln!(w, "violated={}", report.violated)?;
    w.flush()?;
    Ok(())
}

fn station_failure(e: StationError) -> Failure {
    match e {
        StationError::MissingKey(p) => {
            Failure::Usage(format!("key file {} not found; refusing to start", p.display()))
        }
        other => Failure::Runtime(other.to_string()),
    }
}

fn read_log(path: &Path) -> Result<StationLog, Failure> {
    let f = File::open(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    StationLog::read_jsonl(BufReader::new(f))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run { common, left, right, format, switched } => {
            run(common, left, right, format, switched)
        }
        Command::Sweep { common, steps } => {
            require_pairs(common.pairs)?;
            if steps < 2 {
                return Err(Failure::Usage("--steps must be at least 2".into()));
            }
            let points = sweep_angle(common.seed, common.pairs, steps, common.gauge)?;
            write_sweep_csv(sink(&common.out)?, &points)?;
            Ok(())
        }
        Command::Bell { common, analytic, format } => bell(common, analytic, format),
        Command::Chsh { common, analytic, format } => chsh(common, analytic, format),
        Command::Wigner { common, mode, format } => {
            require_pairs(common.pairs)?;
            let mode = match mode {
                Wigner::Analytic => WignerMode::Analytic,
                Wigner::PerSpace => WignerMode::PerSpace,
                Wigner::SingleSpace => WignerMode::SingleSpace,
            };
            let report = run_wigner_suite(common.seed, common.pairs, common.gauge, mode)?;
            print_report(&common.out, &report, format)
        }
        Command::Triples { common } => triples(common),
        Command::CyclicDemo { pairs, seed, gauge } => cyclic_demo(pairs, seed, gauge),
        Command::Source { port, bind, pairs, sessions, seed, log } => {
            let listener = TcpListener::bind((bind.as_str(), port))?;
            eprintln!("source listening on {}", listener.local_addr()?);
            let cfg = SourceConfig {
                seed,
                pairs_per_session: pairs,
                sessions,
                log,
                accept_timeout: None,
            };
            let s = run_source(&listener, &cfg)?;
            eprintln!("source: {} sessions, {} pairs emitted", s.sessions, s.emitted);
            Ok(())
        }
        Command::Station { id, setting, key, source, collator, inject, log } => {
            let cfg = StationConfig {
                id,
                settings: setting,
                key_path: key,
                source,
                collator,
                inject,
                log,
                connect_timeout: Duration::from_secs(30),
            };
            let s = run_station(&cfg).map_err(station_failure)?;
            eprintln!(
                "station {}: {} reports sent, {} source messages rejected",
                s.station, s.reports_sent, s.rejected
            );
            Ok(())
        }
        Command::Collate { port, bind, left_log, right_log, strategy, high_water_mark, out } => {
            let collation = match (port, left_log, right_log) {
                (_, Some(l), Some(r)) => collate(&read_log(&l)?, &read_log(&r)?, strategy)?,
                (Some(port), _, _) => {
                    let listener = TcpListener::bind((bind.as_str(), port))?;
                    eprintln!("collator listening on {}", listener.local_addr()?);
                    let cfg = CollatorConfig {
                        strategy,
                        high_water_mark,
                        accept_timeout: None,
                    };
                    run_collator(&listener, &cfg)?.collation
                }
                _ => {
                    return Err(Failure::Usage(
                        "collate needs --port or both --left-log and --right-log".into(),
                    ))
                }
            };
            for issue in &collation.issues {
                eprintln!("pairing issue: {}", serde_json::to_string(issue)?);
            }
            collation.dataset.write_jsonl(sink(&out)?)?;
            Ok(())
        }
        Command::Keygen { gauge, out } => {
            let k = KeyFile::new(gauge);
            k.save(&out)?;
            eprintln!("wrote {} (digest {})", out.display(), k.digest_hex());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
