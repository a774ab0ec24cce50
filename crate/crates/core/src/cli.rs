//! Command-line front end.
//!
//! Subcommands: `dilat`, `bounds`, `integrals`, `classify`, `check`,
//! `catalog`. Exit codes: 0 success, 2 validation error, 3 classification
//! Undetermined under `--strict`. Defaults may be supplied through a
//! `key = value` config file (`--config PATH`); explicit flags win.
//! `CAVIMOD_THREADS` caps the rayon worker count.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dilatation::{chain_violation, sample};
use crate::expr::parse_map;
use crate::mapping::{self, MappingSpec, RadialProfile};
use crate::modulus::{
    cavitation_report, check_bgmv, check_fundamental_auto, exact_family_modulus_radial,
    lower_bound_sigma, upper_bound_extremal, CavitationConfig, CavitationVerdict, ModulusBounds,
};
use crate::quadrature::QuadratureGrid;
use crate::report::{
    emit_plot_data, CheckRow, DilatRow, PartialRow, Report, ResultsPayload, RunConfig,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "cavimod",
    version,
    about = "Dilatations, ring-modulus bounds and cavitation classification \
             for mappings of the punctured unit ball"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample pointwise dilatations K, L, D, Q (and optionally T) on a grid
    Dilat(CommonArgs),
    /// Lower and upper modulus bounds for the image of a spherical ring
    Bounds(CommonArgs),
    /// The four cavitation integrals with their epsilon-evidence table
    Integrals(CommonArgs),
    /// Cavitation verdict at the origin
    Classify(CommonArgs),
    /// Growth/fundamental inequality residuals and the dilatation chain sweep
    Check(CommonArgs),
    /// List the built-in map catalog
    Catalog(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dilat(_) => "dilat",
            Command::Bounds(_) => "bounds",
            Command::Integrals(_) => "integrals",
            Command::Classify(_) => "classify",
            Command::Check(_) => "check",
            Command::Catalog(_) => "catalog",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Dilat(a)
            | Command::Bounds(a)
            | Command::Integrals(a)
            | Command::Classify(a)
            | Command::Check(a)
            | Command::Catalog(a) => a,
        }
    }
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Map: `catalog:NAME(param=value,...)` or coordinate expressions
    #[arg(long)]
    map: Option<String>,
    /// Ambient dimension (default 3)
    #[arg(long)]
    n: Option<usize>,
    /// Inner ring radius (default 0.1)
    #[arg(long)]
    r: Option<f64>,
    /// Outer ring radius (default 1)
    #[arg(long = "R")]
    big_r: Option<f64>,
    /// Sphere refinement level (default 4)
    #[arg(long)]
    sphere_level: Option<u32>,
    /// Radial node count (default 2048; 32 for dilat)
    #[arg(long)]
    radial_m: Option<usize>,
    /// Coarsest epsilon exponent: epsilon = 2^-k0 (default 3)
    #[arg(long)]
    k0: Option<u32>,
    /// Finest epsilon exponent (default 16)
    #[arg(long)]
    kmax: Option<u32>,
    /// RNG seed for Monte Carlo sphere nodes and chain sweeps (default 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output format: json (default) or csv
    #[arg(long)]
    format: Option<String>,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also emit plot-friendly CSV to this path
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Compute the dual dilatation T in `dilat` samples
    #[arg(long)]
    with_dual: bool,
    /// Exit 3 when classification is Undetermined
    #[arg(long)]
    strict: bool,
    /// Key-value file supplying defaults for the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_config_file(path: &PathBuf) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::Parse {
            position: lineno + 1,
            message: format!("config line is not `key = value`: `{line}`"),
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn config_get<T: std::str::FromStr>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            Error::Argument(format!("config key `{key}` has bad value `{raw}`"))
        }),
    }
}

/// Fully resolved run configuration plus output destinations.
struct Resolved {
    run: RunConfig,
    output: Option<PathBuf>,
    plot: Option<PathBuf>,
    with_dual: bool,
}

fn resolve(command: &str, args: &CommonArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };
    let radial_default = if command == "dilat" { 32 } else { 2048 };
    let run = RunConfig {
        command: command.to_string(),
        map: args.map.clone().or_else(|| file.get("map").cloned()),
        n: args.n.or(config_get(&file, "n")?).unwrap_or(3),
        r: args.r.or(config_get(&file, "r")?).unwrap_or(0.1),
        big_r: args.big_r.or(config_get(&file, "R")?).unwrap_or(1.0),
        sphere_level: args
            .sphere_level
            .or(config_get(&file, "sphere_level")?)
            .unwrap_or(4),
        radial_m: args
            .radial_m
            .or(config_get(&file, "radial_m")?)
            .unwrap_or(radial_default),
        k0: args.k0.or(config_get(&file, "k0")?).unwrap_or(3),
        kmax: args.kmax.or(config_get(&file, "kmax")?).unwrap_or(16),
        seed: args.seed.or(config_get(&file, "seed")?).unwrap_or(0),
        strict: args.strict || config_get(&file, "strict")?.unwrap_or(false),
        format: args
            .format
            .clone()
            .or_else(|| file.get("format").cloned())
            .unwrap_or_else(|| "json".to_string()),
    };
    validate(&run)?;
    Ok(Resolved {
        run,
        output: args.output.clone(),
        plot: args.plot.clone(),
        with_dual: args.with_dual,
    })
}

fn validate(run: &RunConfig) -> Result<()> {
    if run.n < 2 {
        return Err(Error::Argument(format!("--n must be >= 2, got {}", run.n)));
    }
    if !(0.0 < run.r && run.r < run.big_r && run.big_r <= 1.0) {
        return Err(Error::Argument(format!(
            "need 0 < r < R <= 1, got r = {}, R = {}",
            run.r, run.big_r
        )));
    }
    if run.kmax <= run.k0 || run.k0 < 1 {
        return Err(Error::Argument(format!(
            "need 1 <= k0 < kmax, got k0 = {}, kmax = {}",
            run.k0, run.kmax
        )));
    }
    if run.format != "json" && run.format != "csv" {
        return Err(Error::Argument(format!(
            "--format must be json or csv, got `{}`",
            run.format
        )));
    }
    Ok(())
}

fn required_map(run: &RunConfig) -> Result<MappingSpec> {
    let src = run
        .map
        .as_deref()
        .ok_or_else(|| Error::Argument("--map is required for this command".into()))?;
    parse_map(src, run.n)
}

fn cavitation_config(run: &RunConfig) -> CavitationConfig {
    CavitationConfig {
        k0: run.k0,
        kmax: run.kmax,
        sphere_level: run.sphere_level,
        radial_m: run.radial_m,
        seed: run.seed,
        ..CavitationConfig::default()
    }
}

/// Closed-form image-ring family modulus, available for the radial and
/// conformal catalog maps.
fn exact_family_modulus(map: &MappingSpec, r: f64, big_r: f64) -> Option<f64> {
    let n = map.dimension();
    let profile = match map.label() {
        "identity" | "scaling" | "f3" => RadialProfile::identity(),
        "f1" => {
            let alpha = map.params().iter().find(|(k, _)| k == "alpha")?.1;
            RadialProfile::f1(alpha).ok()?
        }
        "f2" => RadialProfile::f2(),
        _ => return None,
    };
    Some(exact_family_modulus_radial(&profile, r, big_r, n))
}

fn cmd_dilat(map: &MappingSpec, run: &RunConfig, with_dual: bool) -> Result<ResultsPayload> {
    let grid = QuadratureGrid::build(
        run.n,
        run.r,
        run.big_r,
        run.sphere_level,
        run.radial_m,
        run.seed,
    )?;
    let mut samples = Vec::new();
    for u in &grid.sphere.nodes {
        for &t in &grid.radial.nodes {
            let x = u * t;
            let j = mapping::jacobian(map, &x)?;
            let s = sample(&j, u, with_dual)?;
            samples.push(DilatRow {
                x: x.iter().copied().collect(),
                sample: s,
            });
        }
    }
    Ok(ResultsPayload::Dilat { samples })
}

fn cmd_bounds(map: &MappingSpec, run: &RunConfig) -> Result<ResultsPayload> {
    let grid = QuadratureGrid::build(
        run.n,
        run.r,
        run.big_r,
        run.sphere_level,
        run.radial_m,
        run.seed,
    )?;
    let lower = lower_bound_sigma(map, &grid)?;
    let upper = upper_bound_extremal(map, &grid)?;
    Ok(ResultsPayload::Bounds(ModulusBounds {
        r: run.r,
        big_r: run.big_r,
        lower,
        upper,
        exact: exact_family_modulus(map, run.r, run.big_r),
        curve_family_note: "curves joining the boundary spheres of A(r,R)".into(),
        density_residuals: None,
    }))
}

fn cmd_integrals(map: &MappingSpec, run: &RunConfig) -> Result<ResultsPayload> {
    let cfg = cavitation_config(run);
    let (partials, report) = cavitation_report(map, &cfg)?;
    let rows = partials
        .rows
        .iter()
        .map(|&(epsilon, iq, ik, id, il)| PartialRow {
            epsilon,
            iq,
            ik,
            id,
            il,
        })
        .collect();
    Ok(ResultsPayload::Integrals {
        partials: rows,
        report,
    })
}

fn cmd_check(map: &MappingSpec, run: &RunConfig) -> Result<ResultsPayload> {
    let grid = QuadratureGrid::build(
        run.n,
        run.r,
        run.big_r,
        run.sphere_level,
        run.radial_m.min(512),
        run.seed,
    )?;
    let bgmv = check_bgmv(map, &grid)?;

    let mut chain_max: f64 = 0.0;
    let chain_points = 1000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0xc4a1_b0d5);
    let mut counted = 0usize;
    while counted < chain_points {
        let u = crate::quadrature::random_rotation(run.n, &mut rng).column(0).into_owned();
        let t = run.r + (run.big_r - run.r) * rand::Rng::gen::<f64>(&mut rng);
        let x = &u * t.min(1.0 - 1e-12);
        let Ok(j) = mapping::jacobian(map, &x) else {
            continue;
        };
        let Ok(s) = sample(&j, &u, true) else {
            continue;
        };
        chain_max = chain_max.max(chain_violation(&s, run.n));
        counted += 1;
    }
    let (fundamental, _qc_k) = check_fundamental_auto(map, &grid)?;

    Ok(ResultsPayload::Check {
        checks: vec![
            CheckRow {
                name: "bgmv".into(),
                r: run.r,
                big_r: run.big_r,
                residual: bgmv,
            },
            CheckRow {
                name: "fundamental".into(),
                r: run.r,
                big_r: run.big_r,
                residual: fundamental,
            },
        ],
        chain_max_violation: chain_max,
        chain_points,
    })
}

fn dispatch(resolved: &Resolved) -> Result<(ResultsPayload, Vec<String>)> {
    let run = &resolved.run;
    let mut warnings = Vec::new();
    let payload = match run.command.as_str() {
        "catalog" => ResultsPayload::Catalog {
            maps: mapping::catalog_list()
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        },
        other => {
            let map = required_map(run)?;
            if !map.has_analytic_jacobian() {
                warnings.push(
                    "expression map uses finite-difference Jacobians; \
                     accuracy floor ~1e-6"
                        .into(),
                );
            }
            match other {
                "dilat" => cmd_dilat(&map, run, resolved.with_dual)?,
                "bounds" => cmd_bounds(&map, run)?,
                "integrals" | "classify" => {
                    let payload = cmd_integrals(&map, run)?;
                    match payload {
                        ResultsPayload::Integrals { partials, report } => {
                            if report.verdict == CavitationVerdict::Undetermined {
                                warnings.push(format!(
                                    "classification undetermined (fired_rule: {})",
                                    report.fired_rule
                                ));
                            }
                            if other == "classify" {
                                ResultsPayload::Classify { partials, report }
                            } else {
                                ResultsPayload::Integrals { partials, report }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                "check" => cmd_check(&map, run)?,
                _ => unreachable!(),
            }
        }
    };
    Ok((payload, warnings))
}

fn write_report(report: &Report, resolved: &Resolved) -> Result<()> {
    let body = match resolved.run.format.as_str() {
        "csv" => report.to_csv(),
        _ => {
            let mut text = report.to_json()?;
            text.push('\n');
            text
        }
    };
    match &resolved.output {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    if let Some(path) = &resolved.plot {
        emit_plot_data(report, path)?;
    }
    Ok(())
}

fn init_threads() {
    if let Ok(raw) = std::env::var("CAVIMOD_THREADS") {
        if let Ok(k) = raw.parse::<usize>() {
            if k >= 1 {
                // ignore the error if a global pool already exists
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global();
            }
        }
    }
}

/// Run the CLI on an explicit argv (element 0 is the program name).
/// Returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    init_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version via "error" variants with exit 0
            let code = if err.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    let command = cli.command.name();
    let resolved = match resolve(command, cli.command.args()) {
        Ok(r) => r,
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_VALIDATION;
        }
    };

    let started = Instant::now();
    let (payload, warnings, code) = match dispatch(&resolved) {
        Ok((payload, warnings)) => {
            let code = match &payload {
                ResultsPayload::Classify { report, .. }
                    if resolved.run.strict
                        && report.verdict == CavitationVerdict::Undetermined =>
                {
                    EXIT_INCONCLUSIVE
                }
                _ => EXIT_OK,
            };
            (payload, warnings, code)
        }
        Err(err) => (
            ResultsPayload::Error {
                message: err.to_string(),
            },
            vec![err.to_string()],
            EXIT_VALIDATION,
        ),
    };

    let mut report = Report::new(resolved.run.clone(), payload);
    report.warnings = warnings;
    report.timing_ms = started.elapsed().as_millis() as u64;

    if let Err(err) = write_report(&report, &resolved) {
        eprintln!("error: {err}");
        return EXIT_VALIDATION;
    }
    code
}
