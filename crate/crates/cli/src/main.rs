//! `dstab`: stability analysis of difference equations `x(t) = sum_k A_k x(t - r_k)`.
//!
//! Exit codes: 0 analysis completed, 1 usage or input error, 2 numeric
//! failure, 3 certificate search failure.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use dstab_core::files::{self, LoadError, LoadedSystem};
use dstab_core::format::{fmt17, to_json_string};
use dstab_core::lyapunov::{
    resolve_rounded_mu, search_certificate, search_lifted_certificate, verify_certificate, SearchOptions,
};
use dstab_core::robust::{max_delta, max_delta_research, verify_robust, UNBOUNDED_DELTA};
use dstab_core::simulator::{
    default_horizon, default_step, fit_decay, simulate, simulate_varying, write_discontinuities_csv,
    write_trajectory_csv, Trajectory,
};
use dstab_core::spectral::{
    classify_single_delay, default_rank_tol, scalar_sum_test, torus_sup_threads, DEFAULT_REFINE_ITERS,
    DEFAULT_RESOLUTION,
};
use dstab_core::systems::{commensurability, lift_commensurate};
use dstab_core::timevarying::certify_varying;
use dstab_core::{catalog, reproduce, Error};

const VERSION: &str = concat!("dstab ", env!("CARGO_PKG_VERSION"));
/// Relative tolerance for commensurability detection.
const COMMENSURATE_TOL: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(name = "dstab", version, about = "Stability analysis of linear difference equations with delays")]
struct Cli {
    /// Seed for randomized searches and perturbation draws.
    #[arg(long, global = true, env = "DSTAB_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SystemArg {
    /// System file (JSON).
    #[arg(long)]
    system: PathBuf,
}

#[derive(Args, Debug)]
struct CertArg {
    /// Certificate file (JSON) with `P` and `mu`.
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Treat the stored rate as rounded to this many decimals and use the
    /// largest verifying rate within half a unit of the last decimal.
    #[arg(long)]
    round_decimals: Option<i32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the system from its initial function and write a CSV trajectory.
    Simulate {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Trajectory CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        discontinuities_out: Option<PathBuf>,
        /// Use the time-varying delays of the `varying` section.
        #[arg(long)]
        varying: bool,
    },
    /// Delay-independent spectral test over the torus.
    Spectral {
        #[command(flatten)]
        system: SystemArg,
        /// Grid points per angle.
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        grid: usize,
        /// Coordinate-descent refinement rounds.
        #[arg(long, default_value_t = DEFAULT_REFINE_ITERS)]
        refine: usize,
        /// Worker threads for the grid sweep; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Search a Lyapunov-Krasovskii certificate with the largest decay rate.
    Certify {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long, default_value_t = SearchOptions::default().psd_margin)]
        psd_margin: f64,
        /// Write the certificate file here.
        #[arg(long)]
        out_cert: Option<PathBuf>,
        /// Lift a commensurate system to one delay and certify the lifted system.
        #[arg(long)]
        lift: bool,
    },
    /// Verify a stored certificate.
    Verify {
        #[command(flatten)]
        system: SystemArg,
        #[command(flatten)]
        cert: CertArg,
    },
    /// Robustness against norm-bounded matrix uncertainty.
    Robust {
        #[command(flatten)]
        system: SystemArg,
        #[command(flatten)]
        cert: CertArg,
        /// Decay rate to test; defaults to the certificate's rate.
        #[arg(long)]
        mu: Option<f64>,
        /// Largest uniform scaling of the uncertainty radii that still passes.
        #[arg(long)]
        max_delta: bool,
        /// Re-search P at every bisection step of --max-delta.
        #[arg(long, requires = "max_delta")]
        research_p: bool,
    },
    /// Decay-rate degradation under the time-varying delays of the `varying` section.
    Varying {
        #[command(flatten)]
        system: SystemArg,
        #[command(flatten)]
        cert: CertArg,
    },
    /// Run the built-in reproduction suite and print a pass/fail table.
    Reproduce {
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptySystem
            | Error::NonPositiveDelay { .. }
            | Error::NonIncreasingDelays { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidInput(_)
            | Error::NotScalar(_)
            | Error::NotSymmetric(_)
            | Error::StepTooLarge { .. }
            | Error::ProfileBoundViolation { .. }
            | Error::CausalityViolation { .. }
            | Error::OutOfRange { .. } => 1,
            Error::SearchFailure { .. } | Error::NoNominalCertificate => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_error(path: &Path, e: LoadError) -> Failure {
    let code = match &e {
        LoadError::Parse(_) => 1,
        LoadError::Validation(v) => Failure::from(v.clone()).code,
    };
    Failure { code, message: format!("{}: {e}", path.display()) }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Input {
    loaded: LoadedSystem,
    digest: String,
}

fn load_system(path: &Path) -> CliResult<Input> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Failure::usage(format!("{}: not UTF-8", path.display())))?;
    let loaded = files::parse_system(&text).map_err(|e| load_error(path, e))?;
    Ok(Input { loaded, digest: digest(&bytes) })
}

struct StoredCertificate {
    p_list: Vec<DMatrix<f64>>,
    stored_mu: f64,
    mu: f64,
    digest: String,
}

fn load_certificate(input: &Input, arg: &CertArg) -> CliResult<Option<StoredCertificate>> {
    let Some(path) = &arg.cert else {
        if arg.round_decimals.is_some() {
            return Err(Failure::usage("--round-decimals needs --cert"));
        }
        return Ok(None);
    };
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Failure::usage(format!("{}: not UTF-8", path.display())))?;
    let (p_list, stored_mu) =
        files::parse_certificate(&text, input.loaded.system.dim()).map_err(|e| load_error(path, e))?;
    let mu = match arg.round_decimals {
        Some(d) => resolve_rounded_mu(&input.loaded.system, &p_list, stored_mu, d)?.unwrap_or(stored_mu),
        None => stored_mu,
    };
    Ok(Some(StoredCertificate { p_list, stored_mu, mu, digest: digest(&bytes) }))
}

fn report(command: &str, inputs_digest: &str, seed: u64, verdicts: Value) -> Value {
    json!({
        "command": command,
        "inputs_digest": inputs_digest,
        "verdicts": verdicts,
        "version": VERSION,
        "seed": seed,
    })
}

fn emit(value: &Value) -> CliResult<()> {
    let mut out = io::stdout().lock();
    out.write_all(to_json_string(value).as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure { code: 2, message: format!("writing report: {e}") })
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn io_failure(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure { code: 2, message: format!("{}: {e}", path.display()) }
}

fn search_options(seed: u64) -> SearchOptions {
    SearchOptions { seed, ..SearchOptions::default() }
}

fn run_simulate(
    seed: u64,
    system: &Path,
    horizon: Option<f64>,
    step: Option<f64>,
    out: Option<&Path>,
    jumps_out: Option<&Path>,
    varying: bool,
) -> CliResult<()> {
    let input = load_system(system)?;
    let loaded = &input.loaded;
    let phi = loaded.initial.as_ref().ok_or_else(|| Failure::usage("system file has no `initial` section"))?;
    let horizon = horizon.unwrap_or_else(|| default_horizon(&loaded.system));
    let step = step.unwrap_or_else(|| default_step(&loaded.system));
    let traj = if varying {
        let section = loaded.varying.as_ref().ok_or_else(|| Failure::usage("system file has no `varying` section"))?;
        simulate_varying(&loaded.system, &section.profile, phi, horizon, step)?
    } else {
        simulate(&loaded.system, phi, horizon, step)?
    };
    match out {
        Some(path) => {
            let mut w = create(path)?;
            write_trajectory_csv(&traj, &mut w).and_then(|_| w.flush()).map_err(io_failure(path))?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            write_trajectory_csv(&traj, &mut w).and_then(|_| w.flush()).map_err(io_failure(Path::new("stdout")))?;
        }
    }
    if let Some(path) = jumps_out {
        let mut w = create(path)?;
        write_discontinuities_csv(&traj, &mut w).and_then(|_| w.flush()).map_err(io_failure(path))?;
    }
    if out.is_some() {
        emit(&report("simulate", &input.digest, seed, simulation_summary(&traj, varying)))?;
    }
    Ok(())
}

fn simulation_summary(traj: &Trajectory, varying: bool) -> Value {
    let last = traj.len() - 1;
    let sup = (0..traj.len()).map(|i| traj.norm(i)).fold(0.0, f64::max);
    let fit = fit_decay(traj, 0.5 * traj.horizon())
        .map(|(rate, amplitude)| json!({"rate": rate, "amplitude": amplitude}))
        .unwrap_or(Value::Null);
    json!({
        "simulation": {
            "varying_delays": varying,
            "step": traj.step(),
            "samples": traj.len(),
            "horizon": traj.horizon(),
            "discontinuities": traj.discontinuities().len(),
            "final_norm": traj.norm(last),
            "sup_norm": sup,
            "decay_fit_second_half": fit,
        }
    })
}

fn run_spectral(seed: u64, system: &Path, grid: usize, refine: usize, threads: Option<usize>) -> CliResult<()> {
    let input = load_system(system)?;
    let s = &input.loaded.system;
    let threads = threads.unwrap_or(1);
    if threads == 0 {
        return Err(Failure::usage("--threads must be positive"));
    }
    let torus = torus_sup_threads(s, grid, refine, threads)?;
    let mut verdicts = Map::new();
    verdicts.insert("torus".into(), serde_json::to_value(&torus).expect("serializable"));
    if s.dim() == 1 {
        verdicts.insert("absolute_sum".into(), json!(scalar_sum_test(s)?));
    }
    let comm = commensurability(s, COMMENSURATE_TOL);
    verdicts.insert("commensurability".into(), serde_json::to_value(&comm).expect("serializable"));
    let single = if s.num_delays() == 1 {
        Some(s.clone())
    } else if comm.commensurate {
        Some(lift_commensurate(s, &comm)?)
    } else {
        None
    };
    if let Some(single) = single {
        let a = &single.matrices()[0];
        let class = classify_single_delay(a, default_rank_tol(a))?;
        let mut c = serde_json::to_value(&class).expect("serializable");
        c["lifted_dimension"] = json!(single.dim());
        verdicts.insert("single_delay_class".into(), c);
    }
    emit(&report("spectral", &input.digest, seed, Value::Object(verdicts)))
}

fn run_certify(seed: u64, system: &Path, psd_margin: f64, out_cert: Option<&Path>, lift: bool) -> CliResult<()> {
    if !(psd_margin > 0.0) {
        return Err(Failure::usage("--psd-margin must be positive"));
    }
    let input = load_system(system)?;
    let options = SearchOptions { psd_margin, ..search_options(seed) };
    let (lifted, cert) = if lift {
        let (lifted, cert) = search_lifted_certificate(&input.loaded.system, COMMENSURATE_TOL, &options)?;
        (Some(lifted), cert)
    } else {
        (None, search_certificate(&input.loaded.system, &options)?)
    };
    let cert_json = files::certificate_json(&cert);
    if let Some(path) = out_cert {
        fs::write(path, to_json_string(&cert_json)).map_err(io_failure(path))?;
    }
    let mut verdicts = json!({ "certificate": cert_json });
    if let Some(l) = lifted {
        verdicts["lifted_system"] = files::system_json(&l);
    }
    emit(&report("certify", &input.digest, seed, verdicts))
}

fn with_cert_digest(input: &Input, cert: Option<&StoredCertificate>) -> String {
    match cert {
        Some(c) => format!("{}+{}", input.digest, c.digest),
        None => input.digest.clone(),
    }
}

fn run_verify(seed: u64, system: &Path, arg: &CertArg) -> CliResult<()> {
    if arg.cert.is_none() {
        return Err(Failure::usage("verify needs --cert"));
    }
    let input = load_system(system)?;
    let stored = load_certificate(&input, arg)?.expect("checked above");
    let cert = verify_certificate(&input.loaded.system, &stored.p_list, stored.mu)?;
    let verdicts = json!({
        "stored_mu": stored.stored_mu,
        "certificate": files::certificate_json(&cert),
        "ordering_holds": cert.ordering_holds(cert.psd_tol),
    });
    emit(&report("verify", &with_cert_digest(&input, Some(&stored)), seed, verdicts))
}

/// Nominal matrices and rate: the certificate file if given, a search otherwise.
fn nominal(input: &Input, stored: Option<&StoredCertificate>, seed: u64) -> CliResult<(Vec<DMatrix<f64>>, f64)> {
    match stored {
        Some(s) => Ok((s.p_list.clone(), s.mu)),
        None => {
            let cert = search_certificate(&input.loaded.system, &search_options(seed))?;
            Ok((cert.p_list, cert.mu))
        }
    }
}

fn delta_json(v: f64) -> Value {
    if v == UNBOUNDED_DELTA {
        json!("unbounded")
    } else {
        json!(v)
    }
}

fn run_robust(seed: u64, system: &Path, arg: &CertArg, mu: Option<f64>, want_max: bool, research: bool) -> CliResult<()> {
    let input = load_system(system)?;
    let s = &input.loaded.system;
    let stored = load_certificate(&input, arg)?;
    let deltas = input.loaded.uncertainty.clone();
    if deltas.is_none() && !want_max {
        return Err(Failure::usage("system file has no `uncertainty` section; use --max-delta"));
    }
    let (p_list, cert_mu) = nominal(&input, stored.as_ref(), seed)?;
    let mu = mu.unwrap_or(cert_mu);
    if !(mu >= 0.0) {
        return Err(Failure::usage("--mu must be nonnegative"));
    }
    let mut verdicts = Map::new();
    verdicts.insert("mu".into(), json!(mu));
    if let Some(d) = &deltas {
        let verdict = verify_robust(s, d, &p_list, mu)?;
        verdicts.insert("deltas".into(), json!(d));
        verdicts.insert("robust".into(), serde_json::to_value(&verdict).expect("serializable"));
    }
    if want_max {
        let scaling = deltas.clone().unwrap_or_else(|| vec![1.0; s.num_delays()]);
        let scale = if research {
            max_delta_research(s, mu, &scaling, &search_options(seed))?
        } else {
            max_delta(s, &p_list, mu, &scaling)?
        };
        let budget: Vec<Value> = scaling
            .iter()
            .map(|c| if scale == UNBOUNDED_DELTA { delta_json(scale) } else { json!(c * scale) })
            .collect();
        verdicts.insert(
            "max_delta".into(),
            json!({
                "scaling": scaling,
                "scale": delta_json(scale),
                "budget": budget,
                "research_p": research,
            }),
        );
    }
    emit(&report("robust", &with_cert_digest(&input, stored.as_ref()), seed, Value::Object(verdicts)))
}

fn run_varying(seed: u64, system: &Path, arg: &CertArg) -> CliResult<()> {
    let input = load_system(system)?;
    let s = &input.loaded.system;
    let section = input
        .loaded
        .varying
        .as_ref()
        .ok_or_else(|| Failure::usage("system file has no `varying` section"))?;
    let stored = load_certificate(&input, arg)?;
    let given = stored.as_ref().map(|c| (c.p_list.as_slice(), c.mu));
    let c = certify_varying(s, &section.bounds, given, &search_options(seed))?;
    let verdicts = json!({
        "bounds": serde_json::to_value(&section.bounds).expect("serializable"),
        "varying": {
            "beta": c.beta,
            "gamma_max": c.gamma_max,
            "gamma": c.gamma,
            "delta1_caps": c.delta1_caps,
            "epsilon_bounds": c.epsilon_bounds,
            "alpha": c.alpha,
            "alpha_tight": c.alpha_tight,
            "alpha1": c.alpha1,
            "alpha2": c.alpha2,
        },
        "base_certificate": files::certificate_json(&c.base_certificate),
    });
    emit(&report("varying", &with_cert_digest(&input, stored.as_ref()), seed, verdicts))
}

fn describe(check: &reproduce::Check) -> String {
    let value = fmt17(check.value);
    match &check.target {
        reproduce::Target::Within { expected, tolerance } => {
            format!("{} = {value}, expected {} +- {}", check.name, fmt17(*expected), fmt17(*tolerance))
        }
        reproduce::Target::AtMost { limit } => format!("{} = {value}, limit <= {}", check.name, fmt17(*limit)),
        reproduce::Target::AtLeast { limit } => format!("{} = {value}, limit >= {}", check.name, fmt17(*limit)),
        reproduce::Target::Holds => format!("{} does not hold", check.name),
    }
}

fn run_reproduce(seed: u64, out: Option<&Path>) -> CliResult<()> {
    let rows = reproduce::run(seed);
    let mut table = String::new();
    table.push_str(&format!("{:<26} {:<6} {}\n", "row", "result", "checks"));
    for row in &rows {
        let passed = row.checks.iter().filter(|c| c.passed).count();
        let result = if row.passed() { "PASS" } else { "FAIL" };
        table.push_str(&format!("{:<26} {:<6} {}/{}\n", row.label, result, passed, row.checks.len()));
        if let Some(e) = &row.error {
            table.push_str(&format!("    error: {e}\n"));
        }
        for c in row.checks.iter().filter(|c| !c.passed) {
            table.push_str(&format!("    failed: {}\n", describe(c)));
        }
    }
    let mut stdout = io::stdout().lock();
    stdout
        .write_all(table.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(io_failure(Path::new("stdout")))?;
    if let Some(path) = out {
        let mut hasher = Sha256::new();
        for e in catalog::SYSTEMS.iter().chain(catalog::CERTIFICATES) {
            hasher.update(e.text.as_bytes());
        }
        let value = report(
            "reproduce",
            &hex::encode(hasher.finalize()),
            seed,
            json!({ "rows": serde_json::to_value(&rows).expect("serializable") }),
        );
        fs::write(path, to_json_string(&value)).map_err(io_failure(path))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { system, horizon, step, out, discontinuities_out, varying } => run_simulate(
            seed,
            &system.system,
            horizon,
            step,
            out.as_deref(),
            discontinuities_out.as_deref(),
            varying,
        ),
        Command::Spectral { system, grid, refine, threads } => run_spectral(seed, &system.system, grid, refine, threads),
        Command::Certify { system, psd_margin, out_cert, lift } => {
            run_certify(seed, &system.system, psd_margin, out_cert.as_deref(), lift)
        }
        Command::Verify { system, cert } => run_verify(seed, &system.system, &cert),
        Command::Robust { system, cert, mu, max_delta, research_p } => {
            run_robust(seed, &system.system, &cert, mu, max_delta, research_p)
        }
        Command::Varying { system, cert } => run_varying(seed, &system.system, &cert),
        Command::Reproduce { out } => run_reproduce(seed, out.as_deref()),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dstab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
