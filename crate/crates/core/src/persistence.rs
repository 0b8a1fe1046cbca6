//! On-disk spectrum database: `spectrum.csv`, `orbits.csv` and a TOML
//! manifest carrying the scene and SHA-256 digests of both tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load/save cycle reproduces the files byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use csv::StringRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{GeometryError, Scene, ValidatedScene};
use crate::linearization::poincare_map;
use crate::orbit::{OrbitError, PeriodicOrbit};
use crate::spectrum::{LengthSpectrum, OrbitRecord, SpectrumEntry};
use crate::symbolic::{Configuration, Parity};

pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const ORBITS_FILE: &str = "orbits.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub const SPECTRUM_HEADER: [&str; 6] = ["config", "repetition", "tau", "tau_primitive", "parity", "weight"];
pub const ORBITS_HEADER: [&str; 10] = [
    "config",
    "k",
    "tau_primitive",
    "residual_reflection",
    "residual_closure",
    "clearance",
    "trace",
    "det_id_minus_p",
    "weight",
    "params",
];

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}, line {line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("{file} does not match the manifest digest (expected {expected}, found {actual})")]
    HashMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Scene(#[from] GeometryError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sidecar describing one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub label: String,
    pub version: String,
    pub wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complete: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primitive_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry_count: Option<usize>,
    /// SHA-256 of each output file, keyed by file name.
    pub files: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
}

impl RunManifest {
    pub fn new(command: &str, label: &str, wall_time_seconds: f64) -> Self {
        Self {
            command: command.to_string(),
            label: label.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds,
            t_max: None,
            k_max: None,
            complete: None,
            primitive_count: None,
            entry_count: None,
            files: BTreeMap::new(),
            scene: None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is plain data")
    }

    pub fn from_toml(text: &str) -> Result<Self, PersistenceError> {
        toml::from_str(text).map_err(|e| PersistenceError::Manifest(e.to_string()))
    }

    /// Records the digest of a file already written to `dir`.
    pub fn add_file(&mut self, dir: &Path, name: &str) -> Result<(), PersistenceError> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), PersistenceError> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_toml()).map_err(io_err(&path))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One `\n`-terminated CSV record.
pub fn csv_line<S: AsRef<str>>(fields: &[S]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(fields.iter().map(|f| f.as_ref()))
        .expect("writing to memory cannot fail");
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

pub fn spectrum_csv(spec: &LengthSpectrum) -> String {
    let mut out = csv_line(&SPECTRUM_HEADER);
    for e in &spec.entries {
        out += &csv_line(&[
            e.config.to_string(),
            e.repetition.to_string(),
            e.tau.to_string(),
            e.tau_primitive.to_string(),
            e.parity.as_i8().to_string(),
            e.weight.to_string(),
        ]);
    }
    out
}

pub fn orbits_csv(spec: &LengthSpectrum) -> String {
    let mut out = csv_line(&ORBITS_HEADER);
    for r in &spec.orbits {
        let o = &r.orbit;
        let mut fields = vec![
            o.config.to_string(),
            o.k().to_string(),
            o.tau_primitive.to_string(),
            o.residual_reflection.to_string(),
            o.residual_closure.to_string(),
            o.clearance.to_string(),
            r.linearization.trace.to_string(),
            r.linearization.det_id_minus_p.to_string(),
            r.linearization.weight(1).to_string(),
        ];
        fields.extend(o.params.iter().map(|p| p.to_string()));
        out += &csv_line(&fields);
    }
    out
}

/// Writes the three files of a spectrum database into `dir`.
pub fn save_spectrum(
    spec: &LengthSpectrum,
    dir: &Path,
    wall_time_seconds: f64,
) -> Result<RunManifest, PersistenceError> {
    let scene = spec
        .scene
        .as_ref()
        .ok_or_else(|| PersistenceError::Manifest("only spectra built from a scene can be saved".into()))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in [(SPECTRUM_FILE, spectrum_csv(spec)), (ORBITS_FILE, orbits_csv(spec))] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    let mut manifest = RunManifest::new("spectrum", &scene.scene().label, wall_time_seconds);
    manifest.t_max = Some(spec.t_max);
    manifest.k_max = Some(spec.k_max);
    manifest.complete = Some(spec.complete);
    manifest.primitive_count = Some(spec.primitive_count_total());
    manifest.entry_count = Some(spec.entries.len());
    manifest.scene = Some(scene.scene().clone());
    manifest.add_file(dir, SPECTRUM_FILE)?;
    manifest.add_file(dir, ORBITS_FILE)?;
    manifest.write(dir)?;
    Ok(manifest)
}

fn parse_err(file: &str, line: u64, message: impl Into<String>) -> PersistenceError {
    PersistenceError::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn data_lines(file: &str, text: &str, header: &[&str]) -> Result<Vec<(u64, StringRecord)>, PersistenceError> {
    if text.is_empty() {
        return Err(parse_err(file, 1, "empty file"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(i as u64 + 1, |p| p.line());
            parse_err(file, line, e.to_string())
        })?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 {
            if record.iter().ne(header.iter().copied()) {
                return Err(parse_err(file, 1, format!("unexpected header {:?}", record.as_slice())));
            }
            continue;
        }
        out.push((line, record));
    }
    // A complete table ends with a newline; a missing one means the last
    // record was cut short.
    if !text.ends_with('\n') {
        return Err(parse_err(file, text.lines().count() as u64, "line is not terminated"));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(
    file: &str,
    line: u64,
    fields: &StringRecord,
    i: usize,
    name: &str,
) -> Result<T, PersistenceError> {
    let raw = fields
        .get(i)
        .ok_or_else(|| parse_err(file, line, format!("missing field {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(file, line, format!("cannot parse {name} from {raw:?}")))
}

fn config_field(file: &str, line: u64, fields: &StringRecord) -> Result<Configuration, PersistenceError> {
    let raw = fields.get(0).unwrap_or("");
    Configuration::parse(raw).map_err(|e| parse_err(file, line, e.to_string()))
}

pub fn parse_spectrum_csv(text: &str) -> Result<Vec<SpectrumEntry>, PersistenceError> {
    let file = SPECTRUM_FILE;
    data_lines(file, text, &SPECTRUM_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != SPECTRUM_HEADER.len() {
                return Err(parse_err(file, line, format!("expected 6 fields, found {}", f.len())));
            }
            let parity: i8 = field(file, line, &f, 4, "parity")?;
            Ok(SpectrumEntry {
                config: config_field(file, line, &f)?,
                repetition: field(file, line, &f, 1, "repetition")?,
                tau: field(file, line, &f, 2, "tau")?,
                tau_primitive: field(file, line, &f, 3, "tau_primitive")?,
                parity: Parity::from_i8(parity)
                    .ok_or_else(|| parse_err(file, line, format!("parity {parity} is not +1 or -1")))?,
                weight: field(file, line, &f, 5, "weight")?,
            })
        })
        .collect()
}

fn parse_orbits_csv(text: &str, scene: &ValidatedScene) -> Result<Vec<OrbitRecord>, PersistenceError> {
    let file = ORBITS_FILE;
    let fixed = ORBITS_HEADER.len() - 1;
    data_lines(file, text, &ORBITS_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let config = config_field(file, line, &f)?;
            let k: usize = field(file, line, &f, 1, "k")?;
            if k != config.len() || f.len() != fixed + k {
                return Err(parse_err(
                    file,
                    line,
                    format!("expected {} fields, found {}", fixed + k, f.len()),
                ));
            }
            let params = (0..k)
                .map(|j| field(file, line, &f, fixed + j, "params"))
                .collect::<Result<Vec<f64>, _>>()?;
            let tau: f64 = field(file, line, &f, 2, "tau_primitive")?;
            for (i, name) in ORBITS_HEADER.iter().enumerate().take(fixed).skip(3) {
                let _: f64 = field(file, line, &f, i, name)?;
            }
            let orbit = PeriodicOrbit::from_params(scene.scene(), config, params)?;
            if orbit.tau_primitive != tau {
                return Err(parse_err(
                    file,
                    line,
                    "stored period disagrees with the boundary angles",
                ));
            }
            let linearization = poincare_map(scene.scene(), &orbit);
            Ok(OrbitRecord { orbit, linearization })
        })
        .collect()
}

/// Loads a database written by [`save_spectrum`], checking the digests.
pub fn load_spectrum(dir: &Path) -> Result<LengthSpectrum, PersistenceError> {
    let read = |name: &str| -> Result<String, PersistenceError> {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(io_err(&path))
    };
    let manifest = RunManifest::from_toml(&read(MANIFEST_FILE)?)?;
    let scene = manifest
        .scene
        .clone()
        .ok_or_else(|| PersistenceError::Manifest("no embedded scene".into()))?;
    let t_max = manifest
        .t_max
        .ok_or_else(|| PersistenceError::Manifest("no t_max".into()))?;
    let k_max = manifest
        .k_max
        .ok_or_else(|| PersistenceError::Manifest("no k_max".into()))?;
    let vs = ValidatedScene::new(scene)?;

    let spectrum_text = read(SPECTRUM_FILE)?;
    let orbits_text = read(ORBITS_FILE)?;
    let entries = parse_spectrum_csv(&spectrum_text)?;
    let orbits = parse_orbits_csv(&orbits_text, &vs)?;
    for (name, text) in [(SPECTRUM_FILE, &spectrum_text), (ORBITS_FILE, &orbits_text)] {
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| PersistenceError::Manifest(format!("no digest for {name}")))?;
        let actual = sha256_hex(text.as_bytes());
        if *expected != actual {
            return Err(PersistenceError::HashMismatch {
                file: name.to_string(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok(LengthSpectrum {
        d0: vs.constants().d0,
        scene: Some(vs),
        t_max,
        k_max,
        complete: manifest.complete.unwrap_or(false),
        entries,
        orbits,
    })
}
