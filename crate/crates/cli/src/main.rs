//! `lifgibbs` command-line front end.
//!
//! Every command writes a JSON report carrying `schema_version` and the fully
//! resolved configuration. Failures print an error JSON on stderr and exit
//! with 1 for numerical failures or 2 for usage and input errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use lifgibbs::markov::{
    build_chain_capped, gibbs_ratio_bounds, trapezoid, write_chain, MembraneMixture,
    DEFAULT_MAX_STATE_BITS, MAX_BLOCK_BITS,
};
use lifgibbs::maxent::{parse_pairs, FitOptions, Monomial, UpletPotential};
use lifgibbs::{
    empirical_blocks, empirical_kl, empirical_pairwise, empirical_rates, entropy_rate, fit,
    kl_divergence, model_divergence, parse_raster, stationary, variation_constants, write_raster,
    Error, GibbsChain, NetworkParams, NoFireBounds, Raster, StationaryAnalysis,
};

const SCHEMA_VERSION: u32 = 1;
const STATE_BITS_ENV: &str = "LIFGIBBS_MAX_STATE_BITS";

#[derive(Parser, Debug)]
#[command(
    name = "lifgibbs",
    version,
    about = "Spike-train statistics of noisy leaky integrate-and-fire networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the network and write a raster.
    Simulate(SimulateArgs),
    /// Build the range-R chain and dump its transitions.
    BuildChain(ChainArgs),
    /// Stationary analysis of the range-R chain.
    Analyze(AnalyzeArgs),
    /// Maximum-entropy fit of monomial averages.
    Fit(FitArgs),
    /// Compare a raster, a potential or a shorter range against a chain.
    Compare(CompareArgs),
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to 10 * ceil(1 / (1 - gamma)).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Raster file; the raster goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Membrane-potential CSV (time, V_1..V_N).
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct ChainArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "R", value_parser = clap::value_parser!(u32).range(1..))]
    range: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "R", value_parser = clap::value_parser!(u32).range(1..))]
    range: u32,
    /// Include the invariant measure on words.
    #[arg(long)]
    measure: bool,
    /// Membrane density, e.g. `neuron=1 grid=auto` or `neuron=2 grid=-3:4:701`.
    #[arg(long, num_args = 1..=2, value_name = "KEY=VALUE")]
    density: Option<Vec<String>>,
    /// Longest cylinder for the Gibbs ratio bounds (default: R when feasible).
    #[arg(long)]
    gibbs_len: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct FitArgs {
    /// `bernoulli`, `pairwise`, or a file with one monomial per line, e.g. `(1,0) (2,-1)`.
    #[arg(long)]
    monomials: String,
    /// Whitespace-separated target averages, one per monomial.
    #[arg(long, conflicts_with = "raster")]
    targets: Option<PathBuf>,
    /// Raster whose time averages become the targets.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Number of neurons when neither a raster nor reference params give it.
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long = "R", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    range: u32,
    /// Params of the network the fitted model is compared against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Range of the reference chain (default: R).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    reference_range: Option<u32>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Write the fitted potential in text form.
    #[arg(long)]
    potential_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "R", value_parser = clap::value_parser!(u32).range(1..))]
    range: u32,
    /// Raster to compare against the chain.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// Largest lag of the pairwise correlations reported for the raster.
    #[arg(long, default_value_t = 1)]
    max_lag: u32,
    /// Potential file to score against the chain.
    #[arg(long)]
    potential: Option<PathBuf>,
    /// Shorter range whose chain is compared with the range-R chain.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    coarse: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::NonConvergence { .. } => (1, "non_convergence"),
            Error::FitNotConverged { .. } => (1, "fit_not_converged"),
            Error::NonFinite(_) => (1, "non_finite"),
            Error::BoundaryTarget(_) => (2, "boundary_target"),
            Error::InvalidParams(_) => (2, "invalid_params"),
            Error::StateSpaceTooLarge { .. } => (2, "state_space_too_large"),
            Error::Parse { .. } => (2, "parse"),
            Error::Io(_) => (2, "io"),
            _ => (2, "invalid_input"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            return report_failure(Failure::usage(message.trim()));
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::BuildChain(a) => cmd_build_chain(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "kind": f.kind, "message": f.message },
    });
    eprintln!("{body}");
    ExitCode::from(f.code)
}

fn load_params(path: &Path) -> Result<NetworkParams, Failure> {
    if !path.is_file() {
        return Err(Failure {
            code: 2,
            kind: "params_not_found",
            message: format!("params not found: {}", path.display()),
        });
    }
    Ok(NetworkParams::from_file(path)?)
}

fn read_text(path: &Path, what: &'static str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        kind: "io",
        message: format!("cannot read {what} {}: {e}", path.display()),
    })
}

fn load_raster(path: &Path) -> Result<Raster, Failure> {
    Ok(parse_raster(&read_text(path, "raster")?)?)
}

fn max_state_bits() -> Result<usize, Failure> {
    match std::env::var(STATE_BITS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Failure::usage(format!(
                "{STATE_BITS_ENV} must be a positive integer, got `{v}`"
            ))
        }),
        Err(_) => Ok(DEFAULT_MAX_STATE_BITS),
    }
}

fn chain_for(
    params: &NetworkParams,
    range: u32,
) -> Result<(GibbsChain, StationaryAnalysis), Failure> {
    let chain = build_chain_capped(params, range as usize, max_state_bits()?)?;
    let analysis = stationary(&chain)?;
    Ok((chain, analysis))
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text)?,
        None => match io::stdout().write_all(text.as_bytes()) {
            // A closed downstream pipe (`| head`) is not a failure.
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {}
            other => other?,
        },
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, report: &Value) -> CmdResult {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    emit(out, &text)
}

fn params_json(path: &Path, p: &NetworkParams) -> Value {
    json!({ "path": path.display().to_string(), "values": p })
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let params = load_params(&a.params)?;
    let burn_in = a.burn_in.unwrap_or_else(|| params.default_burn_in());
    let sim = lifgibbs::run(&params, a.steps, a.seed, burn_in, a.traces.is_some())?;
    if let Some(path) = &a.traces {
        let mut buf = Vec::new();
        lifgibbs::simulator::write_traces(&sim, &mut buf)?;
        fs::write(path, buf)?;
    }
    let mut raster = Vec::new();
    write_raster(&sim.raster, &mut raster)?;
    match &a.out {
        Some(path) => {
            fs::write(path, &raster)?;
            emit_json(
                None,
                &json!({
                    "schema_version": SCHEMA_VERSION,
                    "command": "simulate",
                    "config": {
                        "params": params_json(&a.params, &params),
                        "steps": a.steps,
                        "seed": a.seed,
                        "burn_in": burn_in,
                        "out": path.display().to_string(),
                        "traces": a.traces.as_ref().map(|p| p.display().to_string()),
                    },
                    "rates": empirical_rates(&sim.raster),
                }),
            )
        }
        None => emit(
            None,
            std::str::from_utf8(&raster).expect("raster text is ASCII"),
        ),
    }
}

fn cmd_build_chain(a: ChainArgs) -> CmdResult {
    let params = load_params(&a.params)?;
    let chain = build_chain_capped(&params, a.range as usize, max_state_bits()?)?;
    let mut buf = Vec::new();
    write_chain(&chain, &mut buf)?;
    emit(
        a.out.as_deref(),
        std::str::from_utf8(&buf).expect("chain text is ASCII"),
    )
}

#[derive(Debug, Serialize)]
struct DensitySpec {
    /// 1-based.
    neuron: usize,
    grid: GridSpec,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum GridSpec {
    Auto { points: usize },
    Explicit { lo: f64, hi: f64, points: usize },
}

fn parse_density(tokens: &[String], n_neurons: usize) -> Result<DensitySpec, Failure> {
    let mut neuron = 1;
    let mut grid = GridSpec::Auto { points: 2001 };
    for tok in tokens.iter().flat_map(|t| t.split_whitespace()) {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--density expects key=value, got `{tok}`")))?;
        match key {
            "neuron" => {
                neuron = value
                    .parse()
                    .map_err(|_| Failure::usage(format!("bad neuron `{value}`")))?;
            }
            "grid" if value == "auto" => grid = GridSpec::Auto { points: 2001 },
            "grid" => {
                let parts: Vec<&str> = value.split(':').collect();
                let bad = || {
                    Failure::usage(format!(
                        "grid must be `auto` or `lo:hi:points`, got `{value}`"
                    ))
                };
                if parts.len() != 3 {
                    return Err(bad());
                }
                let lo: f64 = parts[0].parse().map_err(|_| bad())?;
                let hi: f64 = parts[1].parse().map_err(|_| bad())?;
                let points: usize = parts[2].parse().map_err(|_| bad())?;
                if !(lo.is_finite() && hi.is_finite() && lo < hi && points >= 2) {
                    return Err(bad());
                }
                grid = GridSpec::Explicit { lo, hi, points };
            }
            _ => return Err(Failure::usage(format!("unknown density key `{key}`"))),
        }
    }
    if neuron == 0 || neuron > n_neurons {
        return Err(Failure::usage(format!(
            "density neuron must be in 1..={n_neurons}, got {neuron}"
        )));
    }
    Ok(DensitySpec { neuron, grid })
}

fn cmd_analyze(a: AnalyzeArgs) -> CmdResult {
    let params = load_params(&a.params)?;
    let density = a
        .density
        .as_ref()
        .map(|d| parse_density(d, params.n_neurons))
        .transpose()?;
    if matches!(a.format, Format::Csv) && density.is_none() {
        return Err(Failure::usage("--format csv needs --density"));
    }
    let (chain, analysis) = chain_for(&params, a.range)?;

    let density_values = match &density {
        Some(spec) => {
            let mix = MembraneMixture::new(&analysis, &chain, spec.neuron - 1)?;
            let grid = match spec.grid {
                GridSpec::Auto { points } => mix.auto_grid(points),
                GridSpec::Explicit { lo, hi, points } => (0..points)
                    .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
                    .collect(),
            };
            let values = lifgibbs::membrane_density(&analysis, &chain, spec.neuron - 1, &grid)?;
            Some((grid, values))
        }
        None => None,
    };

    if let (Format::Csv, Some((grid, values))) = (a.format, &density_values) {
        let mut csv = String::from("v,density\n");
        for (v, d) in grid.iter().zip(values) {
            csv.push_str(&format!("{v},{d}\n"));
        }
        return emit(a.out.as_deref(), &csv);
    }

    let n = params.n_neurons;
    let r = a.range as usize;
    let gibbs_len = a.gibbs_len.unwrap_or(r);
    let gibbs = if n * (r + gibbs_len) <= MAX_BLOCK_BITS || a.gibbs_len.is_some() {
        Some(gibbs_ratio_bounds(&analysis, &chain, gibbs_len)?)
    } else {
        None
    };
    let k = variation_constants(&params);
    let nofire = NoFireBounds::from_params(&params);
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "analyze",
        "config": {
            "params": params_json(&a.params, &params),
            "R": r,
            "max_state_bits": max_state_bits()?,
            "gibbs_len": gibbs.as_ref().map(|_| gibbs_len),
            "density": density,
        },
        "pressure": analysis.pressure,
        "entropy": analysis.entropy,
        "rates": analysis.rates,
        "sweeps": analysis.sweeps,
        "residual": analysis.residual,
        "variation_constants": k,
        "no_fire_bounds": nofire,
        "gibbs_ratio_bounds": gibbs,
    });
    if a.measure {
        report["measure"] = json!(analysis.measure);
    }
    if let Some((grid, values)) = density_values {
        report["density"] = json!({
            "grid": grid,
            "values": values,
            "integral": trapezoid(&grid, &values),
        });
    }
    emit_json(a.out.as_deref(), &report)
}

fn parse_monomials(spec: &str, n_neurons: usize) -> Result<Vec<Monomial>, Failure> {
    match spec {
        "bernoulli" => Ok((0..n_neurons).map(Monomial::rate).collect()),
        "pairwise" => {
            let mut out: Vec<Monomial> = (0..n_neurons).map(Monomial::rate).collect();
            for i in 0..n_neurons {
                for j in i + 1..n_neurons {
                    out.push(Monomial::pair(i, j)?);
                }
            }
            Ok(out)
        }
        path => {
            let text = read_text(Path::new(path), "monomials file")?;
            let mut out = Vec::new();
            for (k, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let pairs = parse_pairs(line).map_err(|m| Error::Parse {
                    line: k + 1,
                    message: m,
                })?;
                out.push(Monomial::new(pairs)?);
            }
            if out.is_empty() {
                return Err(Failure::usage("monomials file lists no monomials"));
            }
            Ok(out)
        }
    }
}

fn parse_targets(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = read_text(path, "targets file")?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Failure::usage(format!("bad target value `{t}`")))
        })
        .collect()
}

/// Time averages of each monomial over the raster's `(R+1)`-windows.
fn raster_targets(
    raster: &Raster,
    monomials: &[Monomial],
    range: usize,
) -> Result<Vec<f64>, Failure> {
    let n = raster.n_neurons();
    let blocks = empirical_blocks(raster, range + 1)?;
    monomials
        .iter()
        .map(|m| {
            let mask = m.anchored().mask(n, range)?;
            Ok(blocks
                .frequencies()
                .filter(|(c, _)| c & mask == mask)
                .map(|(_, f)| f)
                .sum())
        })
        .collect()
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    let raster = a.raster.as_deref().map(load_raster).transpose()?;
    let reference = a.reference.as_deref().map(load_params).transpose()?;
    let n = match (&raster, &reference, a.neurons) {
        (Some(r), _, _) => r.n_neurons(),
        (None, Some(p), _) => p.n_neurons,
        (None, None, Some(n)) => n,
        (None, None, None) => {
            return Err(Failure::usage(
                "give --raster, --reference or --neurons to fix the number of neurons",
            ))
        }
    };
    let range = a.range as usize;
    let monomials = parse_monomials(&a.monomials, n)?;
    let targets = match (&a.targets, &raster) {
        (Some(path), _) => parse_targets(path)?,
        (None, Some(r)) => raster_targets(r, &monomials, range)?,
        (None, None) => return Err(Failure::usage("give --targets or --raster")),
    };
    let options = FitOptions {
        tol: a.tol,
        max_iterations: a.max_iter,
        ..FitOptions::default()
    };
    let result = fit(&targets, &monomials, n, range, options)?;
    if let Some(path) = &a.potential_out {
        fs::write(path, result.potential.to_text())?;
    }
    let divergence = match &reference {
        Some(p) => {
            let rr = a.reference_range.unwrap_or(a.range);
            let (chain, analysis) = chain_for(p, rr)?;
            Some(json!({
                "R": rr,
                "value": model_divergence(&analysis, &chain, &result.potential)?,
            }))
        }
        None => None,
    };
    let terms: Vec<Value> = result
        .potential
        .terms()
        .iter()
        .map(|(m, c)| json!({ "monomial": m.to_string(), "lambda": c }))
        .collect();
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "config": {
            "monomials": a.monomials,
            "targets": a.targets.as_ref().map(|p| p.display().to_string()),
            "raster": a.raster.as_ref().map(|p| p.display().to_string()),
            "reference": match (&a.reference, &reference) {
                (Some(path), Some(p)) => params_json(path, p),
                _ => Value::Null,
            },
            "n_neurons": n,
            "R": range,
            "tol": a.tol,
            "max_iter": a.max_iter,
        },
        "terms": terms,
        "targets": result.targets,
        "achieved": result.achieved,
        "residual": result.residual,
        "iterations": result.iterations,
        "pressure": result.pressure,
        "entropy": result.entropy,
        "divergence": divergence,
    });
    emit_json(a.out.as_deref(), &report)
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    if a.raster.is_none() && a.potential.is_none() && a.coarse.is_none() {
        return Err(Failure::usage(
            "give at least one of --raster, --potential, --coarse",
        ));
    }
    let params = load_params(&a.params)?;
    let (chain, analysis) = chain_for(&params, a.range)?;
    let r = a.range as usize;
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "compare",
        "config": {
            "params": params_json(&a.params, &params),
            "R": r,
            "raster": a.raster.as_ref().map(|p| p.display().to_string()),
            "max_lag": a.max_lag,
            "potential": a.potential.as_ref().map(|p| p.display().to_string()),
            "coarse": a.coarse,
        },
        "model": {
            "pressure": analysis.pressure,
            "entropy": analysis.entropy,
            "rates": analysis.rates,
        },
    });
    if let Some(path) = &a.raster {
        let raster = load_raster(path)?;
        if raster.n_neurons() != params.n_neurons {
            return Err(Failure::usage(format!(
                "raster has {} neurons, params have {}",
                raster.n_neurons(),
                params.n_neurons
            )));
        }
        let words = empirical_blocks(&raster, r)?;
        let tv = 0.5
            * analysis
                .measure
                .iter()
                .enumerate()
                .map(|(w, m)| (m - words.frequency(w as u64)).abs())
                .sum::<f64>();
        let pairwise: Vec<Value> = (0..=a.max_lag as i64)
            .map(|lag| Ok(json!({ "lag": lag, "matrix": empirical_pairwise(&raster, lag)? })))
            .collect::<Result<_, Failure>>()?;
        let h = entropy_rate(&words, &empirical_blocks(&raster, r + 1)?)?;
        report["raster"] = json!({
            "length": raster.len(),
            "rates": empirical_rates(&raster),
            "pairwise": pairwise,
            "entropy_rate": h,
            "word_tv_distance": tv,
            "kl": empirical_kl(&raster, &analysis, &chain)?,
        });
    }
    if let Some(path) = &a.potential {
        let pot = UpletPotential::from_text(&read_text(path, "potential")?)?;
        report["potential_divergence"] = json!(model_divergence(&analysis, &chain, &pot)?);
    }
    if let Some(coarse) = a.coarse {
        if coarse > a.range {
            return Err(Failure::usage("--coarse must not exceed --R"));
        }
        let (cchain, canalysis) = chain_for(&params, coarse)?;
        report["range_divergence"] = json!({
            "coarse": coarse,
            "value": kl_divergence(&canalysis, &cchain, &chain)?,
            "bound": variation_constants(&params).k_prime * params.leak.powi(coarse as i32),
        });
    }
    emit_json(a.out.as_deref(), &report)
}
