use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use billiard_spectrum::geometry::{Scene, SceneConstants, ValidatedScene};
use billiard_spectrum::linearization::{fit_det_bounds, DEFAULT_MIN_FIT_ORBITS};
use billiard_spectrum::orbit::{multistart_spread, validate_orbit};
use billiard_spectrum::persistence::{csv_line, load_spectrum, save_spectrum, PersistenceError, RunManifest};
use billiard_spectrum::separation::{
    check_phase_separation, direction_gap, estimate_flow_constants, probe_reflection_isolation,
};
use billiard_spectrum::spectrum::{build_spectrum, IsolationReading, LengthSpectrum, ParityFilter};
use billiard_spectrum::symbolic::enumerate_configurations;
use billiard_spectrum::zeta::{eta_d, lb_search, LbSearchParams, TailModel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::{json, Value};

const THREADS_ENV: &str = "BILLIARD_THREADS";

#[derive(Parser)]
#[command(
    name = "billiard-spectrum",
    version,
    about = "Periodic-ray length spectrum of open disk billiards"
)]
struct Cli {
    /// Print results as JSON instead of key=value lines.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for randomized validation (multi-start solver checks).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to $BILLIARD_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scene file and print its constants.
    CheckScene {
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the primitive obstacle words up to a length.
    Enumerate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        k_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the length spectrum and write the orbit database.
    Spectrum {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        t_max: f64,
        #[arg(long)]
        out: PathBuf,
        /// Re-solve every orbit from this many random starts and report the spread.
        #[arg(long, default_value_t = 0)]
        multistart: usize,
    },
    /// Counting functions on a grid of lengths.
    Counts {
        #[command(flatten)]
        source: Source,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        x_grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncated Dirichlet series on a rectangular grid of s.
    Zeta {
        #[command(flatten)]
        source: Source,
        /// `lo:hi` range of Re s.
        #[arg(long)]
        re: String,
        /// `lo:hi` range of Im s.
        #[arg(long)]
        im: String,
        /// Points per axis.
        #[arg(long, default_value_t = 11)]
        grid: usize,
        /// Truncation length; defaults to the spectrum cutoff.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search bump windows around isolated even orbits.
    LbSearch {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rho: f64,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        q_grid: String,
        #[arg(long, value_enum, default_value_t = Isolation::OddOnly)]
        isolation: Isolation,
        /// Minimum number of orbits for the determinant envelope fit.
        #[arg(long, default_value_t = DEFAULT_MIN_FIT_ORBITS)]
        min_fit_orbits: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Phase-space separation of orbits with period up to T.
    Separation {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        position_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reflection-point isolation for a grid of exponents.
    #[command(name = "probe-reflections", alias = "probe-51")]
    ProbeReflections {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        t: f64,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        alpha_grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// Directory written by `spectrum`.
    #[arg(long, conflicts_with_all = ["scene", "t_max"])]
    spectrum: Option<PathBuf>,
    /// Scene file, to build the spectrum in-process.
    #[arg(long, requires = "t_max")]
    scene: Option<PathBuf>,
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Isolation {
    Strict,
    OddOnly,
}

impl From<Isolation> for IsolationReading {
    fn from(i: Isolation) -> Self {
        match i {
            Isolation::Strict => IsolationReading::Strict,
            Isolation::OddOnly => IsolationReading::OddOnly,
        }
    }
}

enum Failure {
    Usage(String),
    Validation(String),
}

impl Failure {
    fn validation(e: impl std::fmt::Display) -> Self {
        Failure::Validation(e.to_string())
    }
}

type Outcome = Result<Report, Failure>;

/// What a subcommand prints: ordered key/value pairs, plus whether every
/// check it performed passed.
struct Report {
    fields: Vec<(String, Value)>,
    passed: bool,
}

impl Report {
    fn new() -> Self {
        Self {
            fields: Vec::new(),
            passed: true,
        }
    }

    fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.push((key.to_string(), value.into()));
    }

    fn print(&self, as_json: bool) {
        if as_json {
            let map: serde_json::Map<String, Value> = self.fields.iter().cloned().collect();
            println!("{}", Value::Object(map));
        } else {
            for (k, v) in &self.fields {
                match v {
                    Value::String(s) => println!("{k}={s}"),
                    other => println!("{k}={other}"),
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let started = Instant::now();
    match run(&cli, started) {
        Ok(report) => {
            report.print(cli.json);
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `billiard-spectrum --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn read_scene(path: &Path) -> Result<ValidatedScene, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read scene file {}: {e}", path.display())))?;
    let scene = Scene::from_toml(&text)
        .map_err(|e| Failure::Usage(format!("cannot parse scene file {}: {e}", path.display())))?;
    ValidatedScene::new(scene).map_err(|e| Failure::Validation(format!("geometry: {e}")))
}

fn load_source(source: &Source) -> Result<LengthSpectrum, Failure> {
    match (&source.spectrum, &source.scene, source.t_max) {
        (Some(dir), _, _) => load_spectrum(dir).map_err(|e| match e {
            PersistenceError::Io { .. } => Failure::Usage(format!("persistence: {e}")),
            _ => Failure::Validation(format!("persistence: {e}")),
        }),
        (None, Some(scene), Some(t_max)) => {
            let vs = read_scene(scene)?;
            build_spectrum(&vs, t_max).map_err(|e| Failure::Validation(format!("spectrum: {e}")))
        }
        _ => Err(Failure::Usage(
            "give either --spectrum DIR or --scene FILE --t-max T".into(),
        )),
    }
}

/// Parses `start:stop:step` (inclusive) or `a,b,c`.
fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("cannot parse grid {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn parse_range(text: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Usage(format!("cannot parse range {text:?}, expected lo:hi"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Writes `name` into `out` (if given) together with a command manifest.
fn emit(
    out: Option<&Path>,
    command: &str,
    label: &str,
    started: Instant,
    name: &str,
    body: &str,
) -> Result<(), Failure> {
    let Some(dir) = out else { return Ok(()) };
    let io = |e: std::io::Error| Failure::Validation(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(name), body).map_err(io)?;
    let mut manifest = RunManifest::new(command, label, started.elapsed().as_secs_f64());
    manifest.add_file(dir, name).map_err(Failure::validation)?;
    fs::write(dir.join(format!("{command}.manifest.toml")), manifest.to_toml()).map_err(io)?;
    Ok(())
}

fn label_of(spec: &LengthSpectrum) -> String {
    spec.scene.as_ref().map(|s| s.scene().label.clone()).unwrap_or_default()
}

fn run(cli: &Cli, started: Instant) -> Outcome {
    match &cli.command {
        Command::CheckScene { scene, out } => check_scene(scene, out.as_deref(), started),
        Command::Enumerate { scene, k_max, out } => enumerate(scene, *k_max, out.as_deref(), started),
        Command::Spectrum {
            scene,
            t_max,
            out,
            multistart,
        } => spectrum(scene, *t_max, out, *multistart, cli.seed, started),
        Command::Counts { source, x_grid, out } => counts(source, x_grid, out.as_deref(), started),
        Command::Zeta {
            source,
            re,
            im,
            grid,
            t,
            out,
        } => zeta(source, re, im, *grid, *t, out.as_deref(), started),
        Command::LbSearch {
            source,
            delta,
            rho,
            q_grid,
            isolation,
            min_fit_orbits,
            out,
        } => lb(
            source,
            *delta,
            *rho,
            q_grid,
            *isolation,
            *min_fit_orbits,
            out.as_deref(),
            started,
        ),
        Command::Separation {
            source,
            t,
            position_tol,
            out,
        } => separation(source, *t, *position_tol, out.as_deref(), started),
        Command::ProbeReflections {
            source,
            t,
            alpha_grid,
            out,
        } => probe(source, *t, alpha_grid, out.as_deref(), started),
    }
}

fn check_scene(path: &Path, out: Option<&Path>, started: Instant) -> Outcome {
    let vs = read_scene(path)?;
    let c = vs.constants();
    let label = &vs.scene().label;
    let mut report = Report::new();
    report.put("label", label.as_str());
    report.put("obstacles", vs.len());
    report.put("d0", c.d0);
    report.put("d1", c.d1);
    report.put("d2", c.d2);
    report.put("eta0", c.eta0);
    report.put("psi0", c.psi0);
    let body = format!("{}\n{}\n", SceneConstants::csv_header(), c.csv_row(label));
    report.put("csv", body.lines().nth(1).unwrap_or_default());
    emit(out, "check-scene", label, started, "scene_constants.csv", &body)?;
    Ok(report)
}

fn enumerate(path: &Path, k_max: usize, out: Option<&Path>, started: Instant) -> Outcome {
    let vs = read_scene(path)?;
    let configs = enumerate_configurations(vs.len(), k_max).map_err(|e| Failure::Usage(format!("symbolic: {e}")))?;
    let mut body = csv_line(&["config", "k", "parity", "self_reverse"]);
    for c in &configs {
        body += &csv_line(&[
            c.to_string(),
            c.len().to_string(),
            c.parity().as_i8().to_string(),
            c.is_self_reverse().to_string(),
        ]);
    }
    emit(
        out,
        "enumerate",
        &vs.scene().label,
        started,
        "configurations.csv",
        &body,
    )?;
    let mut report = Report::new();
    report.put("k_max", k_max);
    report.put("configurations", configs.len());
    Ok(report)
}

fn spectrum(path: &Path, t_max: f64, out: &Path, multistart: usize, seed: u64, started: Instant) -> Outcome {
    let vs = read_scene(path)?;
    let spec = build_spectrum(&vs, t_max).map_err(|e| Failure::Validation(format!("spectrum: {e}")))?;
    let mut report = Report::new();
    let mut worst_roundtrip: f64 = 0.0;
    for rec in &spec.orbits {
        let check = validate_orbit(&vs, &rec.orbit);
        worst_roundtrip = worst_roundtrip.max(check.roundtrip_deviation);
        if !check.passed() {
            report.passed = false;
            eprintln!(
                "orbit {} failed validation: {}",
                rec.orbit.config,
                check.failures.join(", ")
            );
        }
    }
    if multistart > 0 {
        let mut spread: f64 = 0.0;
        for (i, rec) in spec.orbits.iter().enumerate() {
            let s = multistart_spread(&vs, &rec.orbit.config, multistart, seed.wrapping_add(i as u64))
                .map_err(|e| Failure::Validation(format!("orbit: {e}")))?;
            spread = spread.max(s);
        }
        report.put("multistart_spread", spread);
    }
    let manifest = save_spectrum(&spec, out, started.elapsed().as_secs_f64()).map_err(Failure::validation)?;
    report.put("label", vs.scene().label.as_str());
    report.put("t_max", t_max);
    report.put("k_max", spec.k_max);
    report.put("primitive", spec.primitive_count_total());
    report.put("entries", spec.entries.len());
    report.put("max_roundtrip", worst_roundtrip);
    report.put(
        "spectrum_sha256",
        manifest.files.get("spectrum.csv").cloned().unwrap_or_default(),
    );
    Ok(report)
}

fn counts(source: &Source, grid: &str, out: Option<&Path>, started: Instant) -> Outcome {
    let spec = load_source(source)?;
    let xs = parse_grid(grid)?;
    let mut body = csv_line(&["x", "primitive", "even", "odd", "n_odd", "n_even"]);
    let mut rows = Vec::new();
    for x in xs {
        let err = |e| Failure::Validation(format!("spectrum: {e}"));
        let all = spec.count_primitive(x, ParityFilter::All).map_err(err)?;
        let even = spec.count_primitive(x, ParityFilter::Even).map_err(err)?;
        let odd = spec.count_primitive(x, ParityFilter::Odd).map_err(err)?;
        let (n_odd, n_even) = spec.count_iterated(x).map_err(err)?;
        body += &csv_line(&[
            x.to_string(),
            all.to_string(),
            even.to_string(),
            odd.to_string(),
            n_odd.to_string(),
            n_even.to_string(),
        ]);
        rows.push(json!({"x": x, "primitive": all, "even": even, "odd": odd, "n_odd": n_odd, "n_even": n_even}));
    }
    emit(out, "counts", &label_of(&spec), started, "counts.csv", &body)?;
    let mut report = Report::new();
    report.put("rows", Value::Array(rows));
    Ok(report)
}

fn tail_model(spec: &LengthSpectrum) -> Option<TailModel> {
    let entropy = spec.fit_entropy().ok()?;
    let samples: Vec<(f64, f64)> = spec
        .orbits
        .iter()
        .map(|r| (r.orbit.tau_primitive, r.linearization.det_id_minus_p.ln()))
        .collect();
    let fit = fit_det_bounds(&samples, DEFAULT_MIN_FIT_ORBITS).ok()?;
    Some(TailModel {
        h: entropy.h,
        c1: fit.c1,
        mu1: fit.mu1,
        amplitude: entropy.intercept.exp(),
    })
}

fn zeta(
    source: &Source,
    re: &str,
    im: &str,
    n: usize,
    t: Option<f64>,
    out: Option<&Path>,
    started: Instant,
) -> Outcome {
    let spec = load_source(source)?;
    let (re_lo, re_hi) = parse_range(re)?;
    let (im_lo, im_hi) = parse_range(im)?;
    let t = t.unwrap_or(spec.t_max);
    let model = tail_model(&spec);
    let mut body = csv_line(&["re_s", "im_s", "re_eta", "im_eta", "tail_bound"]);
    let mut rows = Vec::new();
    for sr in linspace(re_lo, re_hi, n) {
        for si in linspace(im_lo, im_hi, n) {
            let eta = eta_d(&spec, Complex64::new(sr, si), t).map_err(|e| Failure::Validation(format!("zeta: {e}")))?;
            let tail = model.map_or(f64::NAN, |m| m.tail_bound(sr, t));
            body += &csv_line(&[
                sr.to_string(),
                si.to_string(),
                eta.re.to_string(),
                eta.im.to_string(),
                tail.to_string(),
            ]);
            rows.push(json!({"re_s": sr, "im_s": si, "re_eta": eta.re, "im_eta": eta.im, "tail_bound": if tail.is_finite() { json!(tail) } else { Value::Null }}));
        }
    }
    emit(out, "zeta", &label_of(&spec), started, "zeta.csv", &body)?;
    let mut report = Report::new();
    report.put("t", t);
    report.put("rows", Value::Array(rows));
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn lb(
    source: &Source,
    delta: f64,
    rho: f64,
    grid: &str,
    isolation: Isolation,
    min_fit: usize,
    out: Option<&Path>,
    started: Instant,
) -> Outcome {
    let spec = load_source(source)?;
    let q_grid = parse_grid(grid)?;
    let samples: Vec<(f64, f64)> = spec
        .orbits
        .iter()
        .map(|r| (r.orbit.tau_primitive, r.linearization.det_id_minus_p.ln()))
        .collect();
    let fit = fit_det_bounds(&samples, min_fit).map_err(|e| Failure::Validation(format!("linearization: {e}")))?;
    let cert = lb_search(
        &spec,
        &LbSearchParams {
            delta,
            rho,
            q_grid: &q_grid,
            mu2: fit.mu2,
            reading: isolation.into(),
        },
    )
    .map_err(|e| Failure::Validation(format!("zeta: {e}")))?;
    let mut body = csv_line(&["q", "witness", "ell", "m", "pairing", "bound", "margin"]);
    let mut rows = Vec::new();
    for w in &cert.windows {
        body += &csv_line(&[
            w.q.to_string(),
            w.witness.to_string(),
            w.window.ell.to_string(),
            w.window.m.to_string(),
            w.pairing.to_string(),
            w.bound.to_string(),
            w.margin.to_string(),
        ]);
        rows.push(
            json!({"q": w.q, "witness": w.witness.to_string(), "ell": w.window.ell, "m": w.window.m,
            "pairing": w.pairing, "bound": w.bound, "margin": w.margin}),
        );
    }
    emit(out, "lb-search", &label_of(&spec), started, "lb_search.csv", &body)?;
    let mut report = Report::new();
    report.put("mu2", fit.mu2);
    report.put("alpha0", cert.alpha0);
    report.put("c1", cert.c1);
    report.put("windows", Value::Array(rows));
    Ok(report)
}

fn separation(source: &Source, t: f64, position_tol: f64, out: Option<&Path>, started: Instant) -> Outcome {
    let spec = load_source(source)?;
    let vs = spec
        .scene
        .clone()
        .ok_or_else(|| Failure::Validation("spectrum has no scene".into()))?;
    let err = |e| Failure::Validation(format!("separation: {e}"));
    let constants = estimate_flow_constants(&vs, &spec).map_err(err)?;
    let thm = check_phase_separation(&vs, &spec, t, &constants, None).map_err(err)?;
    let gap = direction_gap(&vs, &spec, t, position_tol, &constants).map_err(err)?;
    let pair = |w: &Option<(_, _)>| match w {
        Some((a, b)) => (format!("{a}"), format!("{b}")),
        None => (String::new(), String::new()),
    };
    let (wa, wb) = pair(&thm.witness);
    let (ga, gb) = pair(&gap.witness);
    let mut body = csv_line(&[
        "check",
        "t",
        "min_distance",
        "bound",
        "margin",
        "passed",
        "witness_a",
        "witness_b",
    ]);
    body += &csv_line(&[
        "phase".to_string(),
        t.to_string(),
        thm.min_pair_distance.to_string(),
        thm.bound.to_string(),
        thm.margin.to_string(),
        thm.passed.to_string(),
        wa.clone(),
        wb.clone(),
    ]);
    let min_gap = gap.min_gap.unwrap_or(f64::INFINITY);
    body += &csv_line(&[
        "direction".to_string(),
        t.to_string(),
        min_gap.to_string(),
        gap.bound.to_string(),
        (min_gap / gap.bound).to_string(),
        gap.passed.to_string(),
        ga,
        gb,
    ]);
    emit(out, "separation", &label_of(&spec), started, "separation.csv", &body)?;
    let mut report = Report::new();
    report.put("a0", constants.a0);
    report.put("beta", constants.beta);
    report.put("c0", constants.c0);
    report.put("eps0", constants.eps0);
    report.put("min_distance", thm.min_pair_distance);
    report.put("bound", thm.bound);
    report.put("passed", thm.passed);
    report.put("witness", format!("{wa} {wb}").trim().to_string());
    report.put("direction_gap", gap.min_gap.map_or(Value::Null, |g| json!(g)));
    report.put("direction_pairs", gap.compared);
    report.put("direction_passed", gap.passed);
    report.passed = thm.passed && gap.passed;
    Ok(report)
}

fn probe(source: &Source, t: f64, grid: &str, out: Option<&Path>, started: Instant) -> Outcome {
    let spec = load_source(source)?;
    let alphas = parse_grid(grid)?;
    let rep =
        probe_reflection_isolation(&spec, t, &alphas).map_err(|e| Failure::Validation(format!("separation: {e}")))?;
    let witness = rep
        .critical
        .as_ref()
        .map(|(a, b)| format!("{a} {b}"))
        .unwrap_or_default();
    let mut body = csv_line(&["alpha", "radius", "pass", "witness"]);
    for row in &rep.rows {
        let w = if row.passed { String::new() } else { witness.clone() };
        body += &csv_line(&[row.alpha.to_string(), row.radius.to_string(), row.passed.to_string(), w]);
    }
    emit(
        out,
        "probe-reflections",
        &label_of(&spec),
        started,
        "reflection_probe.csv",
        &body,
    )?;
    let mut report = Report::new();
    report.put(
        "min_gap",
        if rep.min_gap.is_finite() {
            json!(rep.min_gap)
        } else {
            Value::Null
        },
    );
    report.put("min_alpha", rep.min_alpha.map_or(Value::Null, |a| json!(a)));
    report.put("critical", witness);
    Ok(report)
}
