//! Ensemble files (line-oriented JSON), detection reports and report verification.
//!
//! An ensemble file is a header object followed by one atom per line. Path
//! values are decimal strings with 17 significant digits, so a write/read
//! round trip is bit-exact. Exact-mode atoms carry dyadic probabilities;
//! ensemble-mode atoms carry none and are weighted equally.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::doob::BlowUp;
use crate::error::{Error, Result};
use crate::generators::{EnsembleProcess, Generated, GeneratorSpec, LinearModel, Mode};
use crate::pipeline::{
    detect, detect_ensemble, Check, DetectConfig, DetectOutcome, FreeLunchDecision, LevelRow,
    Normalization, Verdict,
};
use crate::space::{AdaptedProcess, Dyadic, FilteredSpace};

pub const ENSEMBLE_FORMAT: &str = "semimart-ensemble";
pub const REPORT_FORMAT: &str = "semimart-report";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileMode {
    Exact,
    Ensemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub format: String,
    pub version: u32,
    pub level: usize,
    pub atom_count: usize,
    pub mode: FileMode,
    pub generator: Option<GeneratorSpec>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomRecord {
    /// None in ensemble mode.
    pub probability: Option<Dyadic>,
    pub innovations: Vec<i8>,
    pub path: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleFile {
    pub header: EnsembleHeader,
    pub atoms: Vec<AtomRecord>,
}

fn encode_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn encode_innovations(xi: &[i8]) -> String {
    xi.iter().map(|&x| if x > 0 { '+' } else { '-' }).collect()
}

impl EnsembleFile {
    pub fn from_generated(spec: &GeneratorSpec, generated: &Generated) -> Self {
        match generated {
            Generated::Exact {
                space,
                process,
                model,
            } => {
                let mut resolved = spec.clone();
                resolved.scale = Some(model.scale);
                let atoms = (0..space.n_atoms())
                    .map(|a| AtomRecord {
                        probability: Some(space.dyadic_probabilities()[a]),
                        innovations: space.innovations().get(a).cloned().unwrap_or_default(),
                        path: process.path(a),
                    })
                    .collect::<Vec<_>>();
                EnsembleFile {
                    header: EnsembleHeader {
                        format: ENSEMBLE_FORMAT.into(),
                        version: VERSION,
                        level: space.level(),
                        atom_count: atoms.len(),
                        mode: FileMode::Exact,
                        generator: Some(resolved),
                        seed: Some(spec.seed),
                    },
                    atoms,
                }
            }
            Generated::Ensemble(e) => EnsembleFile {
                header: EnsembleHeader {
                    format: ENSEMBLE_FORMAT.into(),
                    version: VERSION,
                    level: e.level(),
                    atom_count: e.n_paths(),
                    mode: FileMode::Ensemble,
                    generator: Some(e.spec.clone()),
                    seed: Some(e.spec.seed),
                },
                atoms: e
                    .innovations
                    .iter()
                    .zip(&e.paths)
                    .map(|(xi, p)| AtomRecord {
                        probability: None,
                        innovations: xi.clone(),
                        path: p.clone(),
                    })
                    .collect(),
            },
        }
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        let header = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "{header}")?;
        for atom in &self.atoms {
            let line = json!({
                "probability": atom.probability,
                "innovations": encode_innovations(&atom.innovations),
                "path": atom.path.iter().map(|&x| encode_number(x)).collect::<Vec<_>>(),
            });
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn parse(text: &[u8]) -> Result<Self> {
        EnsembleFile::read(text)
    }

    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header_text = lines
            .next()
            .ok_or_else(|| Error::format("line 1", "empty file"))??;
        let header_value: Value = serde_json::from_str(&header_text)
            .map_err(|e| Error::format("line 1", e.to_string()))?;
        let header = parse_header(&header_value)?;
        let mut atoms = Vec::with_capacity(header.atom_count.min(1 << 20));
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            atoms.push(parse_atom(i + 2, &line, &header)?);
        }
        if atoms.len() != header.atom_count {
            return Err(Error::format(
                "header.atom_count",
                format!(
                    "header declares {} atoms, file has {}",
                    header.atom_count,
                    atoms.len()
                ),
            ));
        }
        if header.mode == FileMode::Exact {
            let probs: Vec<Dyadic> = atoms
                .iter()
                .map(|a| a.probability.expect("checked per line"))
                .collect();
            if Dyadic::sums_to_one(&probs) != Some(true) {
                return Err(Error::format(
                    "atoms[*].probability",
                    "probabilities do not sum to exactly 1",
                ));
            }
        }
        Ok(EnsembleFile { header, atoms })
    }

    /// The filtered space spanned by the atoms and the process read off their paths.
    pub fn to_exact(&self) -> Result<(Arc<FilteredSpace>, AdaptedProcess)> {
        if self.header.mode != FileMode::Exact {
            return Err(Error::format("header.mode", "expected an exact-mode file"));
        }
        let level = self.header.level;
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                (
                    a.probability.expect("checked on read"),
                    a.innovations.clone(),
                )
            })
            .collect();
        let space = Arc::new(FilteredSpace::from_innovations(level, atoms)?);
        let n = space.n_atoms();
        let by_time = (0..space.grid().len())
            .map(|t| (0..n).map(|a| self.atoms[a].path[t]).collect())
            .collect();
        let process = AdaptedProcess::new(space.clone(), by_time).map_err(|e| match e {
            Error::Invariant(reason) => Error::format("atoms[*].path", reason),
            other => other,
        })?;
        Ok((space, process))
    }

    /// Rebuilds the sampled ensemble; paths must match the recorded generator.
    pub fn to_ensemble(&self) -> Result<EnsembleProcess> {
        if self.header.mode != FileMode::Ensemble {
            return Err(Error::format(
                "header.mode",
                "expected an ensemble-mode file",
            ));
        }
        let spec = self.header.generator.clone().ok_or_else(|| {
            Error::format(
                "header.generator",
                "ensemble analysis needs the generator spec",
            )
        })?;
        let model = LinearModel::new(&spec)?;
        for (i, atom) in self.atoms.iter().enumerate() {
            let expect = model.path(&atom.innovations);
            if let Some(t) = (0..expect.len()).find(|&t| (expect[t] - atom.path[t]).abs() > 1e-12) {
                return Err(Error::format(
                    format!("line {}: path[{t}]", i + 2),
                    "value disagrees with the generator applied to the innovations",
                ));
            }
        }
        Ok(EnsembleProcess {
            spec,
            model,
            innovations: self.atoms.iter().map(|a| a.innovations.clone()).collect(),
            paths: self.atoms.iter().map(|a| a.path.clone()).collect(),
        })
    }
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::format(format!("{path}.{name}"), "missing field"))
}

fn parse_header(v: &Value) -> Result<EnsembleHeader> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::format("header", "expected an object"))?;
    let format = field(obj, "header", "format")?;
    if format.as_str() != Some(ENSEMBLE_FORMAT) {
        return Err(Error::format(
            "header.format",
            format!("expected \"{ENSEMBLE_FORMAT}\""),
        ));
    }
    let version = field(obj, "header", "version")?;
    if version.as_u64() != Some(VERSION as u64) {
        return Err(Error::format(
            "header.version",
            format!("unsupported version {version}"),
        ));
    }
    for name in ["level", "atom_count", "mode", "generator", "seed"] {
        field(obj, "header", name)?;
    }
    let header: EnsembleHeader = serde_json::from_value(v.clone()).map_err(|e| {
        let name = ["level", "atom_count", "mode", "generator", "seed"]
            .into_iter()
            .find(|n| e.to_string().contains(n))
            .unwrap_or("*");
        Error::format(format!("header.{name}"), e.to_string())
    })?;
    if header.level > 24 {
        return Err(Error::format("header.level", "at most 24"));
    }
    if let Some(g) = &header.generator {
        let expect = match g.mode {
            Mode::Exact => FileMode::Exact,
            Mode::Ensemble { .. } => FileMode::Ensemble,
        };
        if expect != header.mode || g.level != header.level {
            return Err(Error::format(
                "header.generator",
                "disagrees with header mode or level",
            ));
        }
    }
    Ok(header)
}

fn parse_atom(line_no: usize, text: &str, header: &EnsembleHeader) -> Result<AtomRecord> {
    let at = |name: &str| format!("line {line_no}: {name}");
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::format(format!("line {line_no}"), e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::format(format!("line {line_no}"), "expected an object"))?;
    let get = |name: &str| {
        obj.get(name)
            .ok_or_else(|| Error::format(at(name), "missing field"))
    };

    let probability = match (header.mode, get("probability")?) {
        (FileMode::Ensemble, Value::Null) => None,
        (FileMode::Ensemble, _) => {
            return Err(Error::format(
                at("probability"),
                "must be null in ensemble mode",
            ))
        }
        (FileMode::Exact, p) => {
            let d: Dyadic = serde_json::from_value(p.clone())
                .map_err(|e| Error::format(at("probability"), e.to_string()))?;
            if d.numerator == 0 || d.log2_denominator > 100 {
                return Err(Error::format(
                    at("probability"),
                    "need a positive numerator and denominator at most 2^100",
                ));
            }
            Some(d)
        }
    };

    let xi_text = get("innovations")?
        .as_str()
        .ok_or_else(|| Error::format(at("innovations"), "expected a string of '+'/'-'"))?;
    let innovations = xi_text
        .chars()
        .enumerate()
        .map(|(k, c)| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            _ => Err(Error::format(
                at(&format!("innovations[{k}]")),
                format!("unexpected character {c:?}"),
            )),
        })
        .collect::<Result<Vec<i8>>>()?;
    let steps = 1usize << header.level;
    if !innovations.is_empty() && innovations.len() != steps {
        return Err(Error::format(
            at("innovations"),
            format!("expected {steps} innovations"),
        ));
    }

    let path_values = get("path")?
        .as_array()
        .ok_or_else(|| Error::format(at("path"), "expected an array"))?;
    if path_values.len() != steps + 1 {
        return Err(Error::format(
            at("path"),
            format!("expected {} values, found {}", steps + 1, path_values.len()),
        ));
    }
    let path = path_values
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let value = match x {
                Value::String(s) => s.parse::<f64>().ok(),
                Value::Number(n) => n.as_f64(),
                _ => None,
            };
            match value {
                Some(v) if v.is_finite() => Ok(v),
                _ => Err(Error::format(
                    at(&format!("path[{k}]")),
                    "expected a finite decimal number",
                )),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AtomRecord {
        probability,
        innovations,
        path,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Adapted process values stored per cell: `values[t][c]` is the value on cell c at grid index t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSeries {
    pub values: Vec<Vec<f64>>,
}

impl CellSeries {
    pub fn of(x: &AdaptedProcess) -> Self {
        let space = x.space();
        CellSeries {
            values: (0..space.grid().len())
                .map(|t| {
                    space
                        .representatives(t)
                        .into_iter()
                        .map(|a| x.value(a, t))
                        .collect()
                })
                .collect(),
        }
    }

    /// Value at (atom, t), checking the shape against the space.
    pub fn expand(&self, space: &FilteredSpace, name: &str) -> Result<Vec<Vec<f64>>> {
        if self.values.len() != space.grid().len() {
            return Err(Error::format(
                format!("{name}.values"),
                "wrong number of grid times",
            ));
        }
        (0..space.grid().len())
            .map(|t| {
                if self.values[t].len() != space.cell_count(t) {
                    return Err(Error::format(
                        format!("{name}.values[{t}]"),
                        "wrong number of cells",
                    ));
                }
                Ok(space
                    .cells(t)
                    .iter()
                    .map(|&c| self.values[t][c as usize])
                    .collect())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificatePayload {
    /// Finest-grid index per atom; null for ∞.
    pub alpha: Vec<Option<usize>>,
    pub m: CellSeries,
    pub a: CellSeries,
    pub c: f64,
    pub c_prime: f64,
    pub c_report: f64,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeLunchPayload {
    pub statistic: BlowUp,
    pub empirical: bool,
    pub decision: FreeLunchDecision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub ensemble_sha256: String,
    pub config: DetectConfig,
    pub verdict: String,
    pub reason: Option<String>,
    pub normalization: Normalization,
    pub table: Vec<LevelRow>,
    pub certificate: Option<CertificatePayload>,
    pub free_lunch: Option<FreeLunchPayload>,
    pub log: Vec<String>,
}

impl ReportFile {
    pub fn new(outcome: &DetectOutcome, config: &DetectConfig, ensemble_bytes: &[u8]) -> Self {
        let (reason, certificate, free_lunch) = match &outcome.verdict {
            Verdict::Semimartingale(cert) => (
                None,
                Some(CertificatePayload {
                    alpha: cert.alpha.values(),
                    m: CellSeries::of(&cert.m),
                    a: CellSeries::of(&cert.a),
                    c: cert.c,
                    c_prime: cert.c_prime,
                    c_report: cert.c_report,
                    checks: cert.checks.clone(),
                }),
                None,
            ),
            Verdict::FreeLunch(ev) => (
                None,
                None,
                Some(FreeLunchPayload {
                    statistic: ev.statistic,
                    empirical: ev.empirical,
                    decision: ev.decision.clone(),
                }),
            ),
            Verdict::Inconclusive { reason } => (Some(reason.clone()), None, None),
        };
        ReportFile {
            format: REPORT_FORMAT.into(),
            version: VERSION,
            ensemble_sha256: sha256_hex(ensemble_bytes),
            config: config.clone(),
            verdict: outcome.verdict.kind().into(),
            reason,
            normalization: outcome.normalization.clone(),
            table: outcome.table.clone(),
            certificate,
            free_lunch,
            log: outcome.log.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))?;
        if v.get("format").and_then(Value::as_str) != Some(REPORT_FORMAT) {
            return Err(Error::format(
                "report.format",
                format!("expected \"{REPORT_FORMAT}\""),
            ));
        }
        serde_json::from_value(v).map_err(|e| Error::format("report", e.to_string()))
    }
}

/// Runs the pipeline appropriate to the file's mode.
pub fn detect_file(file: &EnsembleFile, config: &DetectConfig) -> Result<DetectOutcome> {
    match file.header.mode {
        FileMode::Exact => {
            let (_, s) = file.to_exact()?;
            detect(&s, config)
        }
        FileMode::Ensemble => detect_ensemble(&file.to_ensemble()?, config),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyItem {
    pub invariant: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verification {
    pub items: Vec<VerifyItem>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> Vec<&VerifyItem> {
        self.items.iter().filter(|i| !i.passed).collect()
    }

    fn push(&mut self, invariant: &str, passed: bool, detail: String) {
        self.items.push(VerifyItem {
            invariant: invariant.into(),
            passed,
            detail,
        });
    }
}

/// Re-checks a report against the ensemble it was computed from.
///
/// Payload invariants are checked directly from the stored numbers; then the
/// whole report is recomputed and compared field by field.
pub fn verify(report_text: &str, ensemble_bytes: &[u8]) -> Result<Verification> {
    let report = ReportFile::parse(report_text)?;
    let file = EnsembleFile::parse(ensemble_bytes)?;
    let mut out = Verification { items: Vec::new() };

    let digest = sha256_hex(ensemble_bytes);
    out.push(
        "ensemble digest",
        digest == report.ensemble_sha256,
        format!("file {digest}, report {}", report.ensemble_sha256),
    );

    let known = [
        "SemimartingaleCertificate",
        "FreeLunchEvidence",
        "Inconclusive",
    ];
    let consistent = known.contains(&report.verdict.as_str())
        && report.certificate.is_some() == (report.verdict == known[0])
        && report.free_lunch.is_some() == (report.verdict == known[1])
        && report.reason.is_some() == (report.verdict == known[2]);
    out.push(
        "verdict matches payload",
        consistent,
        report.verdict.clone(),
    );

    if let Some(cert) = &report.certificate {
        certificate_invariants(&mut out, cert, &file, report.config.tol)?;
    }
    if let Some(fl) = &report.free_lunch {
        free_lunch_invariants(&mut out, fl, &report.config);
    }

    let expected = ReportFile::new(
        &detect_file(&file, &report.config)?,
        &report.config,
        ensemble_bytes,
    );
    let expected_value = serde_json::to_value(&expected).expect("report serializes");
    let stored_value: Value =
        serde_json::from_str(report_text).map_err(|e| Error::format("report", e.to_string()))?;
    let diff = first_difference(&expected_value, &stored_value, "report");
    out.push(
        "report reproducible",
        diff.is_none(),
        diff.unwrap_or_else(|| "recomputation matches".into()),
    );
    Ok(out)
}

fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                match y.get(k) {
                    Some(w) => {
                        if let Some(d) = first_difference(v, w, &format!("{path}.{k}")) {
                            return Some(d);
                        }
                    }
                    None => return Some(format!("{path}.{k} missing")),
                }
            }
            y.keys()
                .find(|k| !x.contains_key(*k))
                .map(|k| format!("{path}.{k} unexpected"))
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Some(format!(
                    "{path} has length {} instead of {}",
                    y.len(),
                    x.len()
                ));
            }
            x.iter()
                .zip(y)
                .enumerate()
                .find_map(|(i, (v, w))| first_difference(v, w, &format!("{path}[{i}]")))
        }
        _ if a == b => None,
        _ => Some(format!("{path}: recomputed {a}, stored {b}")),
    }
}

fn certificate_invariants(
    out: &mut Verification,
    cert: &CertificatePayload,
    file: &EnsembleFile,
    tol: f64,
) -> Result<()> {
    if file.header.mode != FileMode::Exact {
        out.push(
            "certificate needs an exact ensemble",
            false,
            "ensemble-mode file".into(),
        );
        return Ok(());
    }
    let (space, s) = file.to_exact()?;
    let n = space.n_atoms();
    let last = space.last();
    if cert.alpha.len() != n {
        return Err(Error::format(
            "certificate.alpha",
            format!("expected {n} entries"),
        ));
    }
    let m = cert.m.expand(&space, "certificate.m")?;
    let a = cert.a.expand(&space, "certificate.a")?;
    let alpha: Vec<usize> = cert.alpha.iter().map(|x| x.unwrap_or(usize::MAX)).collect();

    // {α ≤ t} must be a union of time-t cells.
    let stopping = (0..=last).all(|t| {
        let mut seen = vec![None; space.cell_count(t)];
        space.cells(t).iter().enumerate().all(|(atom, &c)| {
            let stopped = alpha[atom] <= t;
            *seen[c as usize].get_or_insert(stopped) == stopped
        })
    });
    out.push("alpha is a stopping time", stopping, String::new());

    let scale = s.sup_norm().max(1.0);
    let mut gap: f64 = 0.0;
    for t in 0..=last {
        for atom in 0..n {
            let s_alpha = s.value(atom, t.min(alpha[atom]));
            gap = gap.max((m[t][atom] + a[t][atom] - s_alpha).abs());
        }
    }
    out.push(
        "M + A = S^alpha",
        gap <= tol * scale,
        format!("max gap {gap:e}"),
    );

    let a0 = a[0].iter().fold(0.0, |w: f64, v| w.max(v.abs()));
    out.push(
        "A starts at 0",
        a0 <= tol * scale,
        format!("max |A_0| {a0:e}"),
    );

    let p = space.probabilities();
    let mut residual: f64 = 0.0;
    for t in 1..=last {
        let cells = space.cells(t - 1);
        let k = space.cell_count(t - 1);
        let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
        for atom in 0..n {
            num[cells[atom] as usize] += p[atom] * (m[t][atom] - m[t - 1][atom]);
            den[cells[atom] as usize] += p[atom];
        }
        residual = num
            .iter()
            .zip(&den)
            .fold(residual, |w, (x, d)| w.max((x / d).abs()));
    }
    out.push(
        "M is a martingale",
        residual <= tol * scale,
        format!("max conditional drift {residual:e}"),
    );

    let tv = (0..n)
        .map(|atom| {
            (1..=last)
                .map(|t| (a[t][atom] - a[t - 1][atom]).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let bound = cert.c_report * (1.0 + 1e-12) + 1e-12;
    out.push(
        "TV(A) <= C_report",
        tv <= bound,
        format!("TV {tv}, bound {}", cert.c_report),
    );

    let failed: Vec<&str> = cert
        .checks
        .iter()
        .filter(|c| !c.passed || !(c.value <= c.bound * (1.0 + 1e-12) + 1e-12))
        .map(|c| c.name.as_str())
        .collect();
    out.push("recorded checks hold", failed.is_empty(), failed.join("; "));
    Ok(())
}

fn free_lunch_invariants(out: &mut Verification, fl: &FreeLunchPayload, config: &DetectConfig) {
    let d = &fl.decision;
    let rows = &d.rows;
    out.push("free-lunch rule passed", d.passed, String::new());
    out.push(
        "LI strictly decreasing",
        !rows.is_empty() && rows.windows(2).all(|w| w[1].li < w[0].li),
        format!("{:?}", rows.iter().map(|r| r.li).collect::<Vec<_>>()),
    );
    let end = rows.last();
    out.push(
        "LI below target at window end",
        end.is_some_and(|r| r.li < config.rule.li_target),
        format!("{:?}", end.map(|r| r.li)),
    );
    out.push(
        "VR below target at window end",
        end.is_some_and(|r| r.vr < config.rule.vr_target),
        format!("{:?}", end.map(|r| r.vr)),
    );
    out.push(
        "FL(alpha*) >= alpha*",
        d.alpha_star > 0.0 && rows.iter().all(|r| r.fl >= d.alpha_star),
        format!("alpha* = {}", d.alpha_star),
    );
    let min_plateau = rows.iter().map(|r| r.plateau).fold(f64::INFINITY, f64::min);
    out.push(
        "alpha* is half the smallest plateau",
        d.alpha_star == 0.5 * min_plateau,
        format!("alpha* = {}, smallest plateau {min_plateau}", d.alpha_star),
    );
}
