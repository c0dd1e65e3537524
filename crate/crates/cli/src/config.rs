//! Flat key-value run configuration files.
//!
//! The format is line-based and diff-friendly: `key = value` pairs, `#`
//! comments, coefficient lists comma-separated, versioned by a mandatory
//! `format = 1` key. Unknown keys are rejected (typos should not silently
//! change a run).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use zfrate_core::factorization::Scheme;
use zfrate_core::multiplier::Causality;
use zfrate_core::search::Framework;
use zfrate_core::TransferFunction;

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {}: {}", n, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

/// Reference rates carried by corpus configs, used by the reproduction
/// table. `None` marks a method expected to fail (no certificate).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceRates {
    pub lower: Option<f64>,
    pub causal: Option<Option<f64>>,
    pub anticausal: Option<Option<f64>>,
    pub noncausal_plain: Option<Option<f64>>,
    pub noncausal_rho: Option<Option<f64>>,
}

/// One parsed run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub plant_num: Vec<f64>,
    pub plant_den: Vec<f64>,
    pub k: f64,
    pub n_z: usize,
    pub class: Causality,
    pub framework: Framework,
    /// None = pick the scheme natural to (class, framework).
    pub scheme: Option<Scheme>,
    pub n_b: usize,
    pub n_f: usize,
    pub odd: bool,
    pub bisect_tol: f64,
    pub grid_n: usize,
    pub reference: ReferenceRates,
}

impl RunConfig {
    pub fn plant(&self) -> Result<TransferFunction, ConfigError> {
        TransferFunction::new(self.plant_num.clone(), self.plant_den.clone())
            .map_err(|e| err(None, format!("invalid plant: {e}")))
    }

    /// The scheme to run: explicit, or the natural default for the class
    /// and framework.
    pub fn effective_scheme(&self) -> Scheme {
        self.scheme.unwrap_or(match (self.framework, self.class) {
            (Framework::Iqc, _) => Scheme::Psi2,
            (Framework::RhoIqc, Causality::Noncausal) => Scheme::Psi3Rho,
            (Framework::RhoIqc, _) => Scheme::Psi2,
        })
    }
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| err(Some(line), format!("expected number, got '{}'", tok.trim())))
        })
        .collect()
}

fn parse_ref(s: &str, line: usize) -> Result<Option<f64>, ConfigError> {
    if s == "invalid" {
        Ok(None)
    } else {
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| err(Some(line), format!("expected number or 'invalid', got '{s}'")))
    }
}

/// Parses a configuration file's text.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(Some(line_no), format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim().to_string();
        if kv.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
            return Err(err(Some(line_no), format!("duplicate key '{key}'")));
        }
    }
    let take = |key: &str| kv.get(key).cloned();
    let require = |key: &str| {
        take(key).ok_or_else(|| err(None, format!("missing required key '{key}'")))
    };

    let (fline, fval) = require("format")?;
    if fval != "1" {
        return Err(err(Some(fline), format!("unsupported format '{fval}', expected 1")));
    }
    let name = require("name")?.1;
    let (nline, nval) = require("plant_num")?;
    let plant_num = parse_floats(&nval, nline)?;
    let (dline, dval) = require("plant_den")?;
    let plant_den = parse_floats(&dval, dline)?;
    let (kline, kval) = require("k")?;
    let k = kval
        .parse::<f64>()
        .map_err(|_| err(Some(kline), format!("expected number, got '{kval}'")))?;

    let parse_usize = |key: &str, default: usize| -> Result<usize, ConfigError> {
        match take(key) {
            None => Ok(default),
            Some((l, v)) => v
                .parse::<usize>()
                .map_err(|_| err(Some(l), format!("expected integer for '{key}', got '{v}'"))),
        }
    };
    let parse_f64 = |key: &str, default: f64| -> Result<f64, ConfigError> {
        match take(key) {
            None => Ok(default),
            Some((l, v)) => v
                .parse::<f64>()
                .map_err(|_| err(Some(l), format!("expected number for '{key}', got '{v}'"))),
        }
    };

    let n_z = parse_usize("nz", 1)?;
    let class = match take("class") {
        None => Causality::Noncausal,
        Some((l, v)) => match v.as_str() {
            "causal" => Causality::Causal,
            "anticausal" => Causality::Anticausal,
            "noncausal" => Causality::Noncausal,
            other => return Err(err(Some(l), format!("unknown class '{other}'"))),
        },
    };
    let framework = match take("framework") {
        None => Framework::RhoIqc,
        Some((l, v)) => match v.as_str() {
            "iqc" => Framework::Iqc,
            "rho_iqc" => Framework::RhoIqc,
            other => return Err(err(Some(l), format!("unknown framework '{other}'"))),
        },
    };
    let scheme = match take("scheme") {
        None => None,
        Some((l, v)) => Some(match v.as_str() {
            "auto" => None,
            "psi1" => Some(Scheme::Psi1),
            "psi2" => Some(Scheme::Psi2),
            "psi3" => Some(Scheme::Psi3),
            "psi3_rho" => Some(Scheme::Psi3Rho),
            other => return Err(err(Some(l), format!("unknown scheme '{other}'"))),
        })
        .flatten(),
    };
    let default_nb = match class {
        Causality::Anticausal => 0,
        _ => n_z,
    };
    let default_nf = match class {
        Causality::Causal => 0,
        _ => n_z,
    };
    let n_b = parse_usize("n_b", default_nb)?;
    let n_f = parse_usize("n_f", default_nf)?;
    let odd = match take("odd") {
        None => true,
        Some((l, v)) => match v.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(err(Some(l), format!("expected true/false, got '{other}'"))),
        },
    };
    let bisect_tol = parse_f64("bisect_tol", 1e-6)?;
    let grid_n = parse_usize("grid_n", 2048)?;

    let mut reference = ReferenceRates::default();
    if let Some((l, v)) = take("ref_lower") {
        reference.lower = Some(v.parse::<f64>().map_err(|_| {
            err(Some(l), format!("expected number for 'ref_lower', got '{v}'"))
        })?);
    }
    for (key, slot) in [
        ("ref_causal", &mut reference.causal),
        ("ref_anticausal", &mut reference.anticausal),
        ("ref_noncausal_plain", &mut reference.noncausal_plain),
        ("ref_noncausal_rho", &mut reference.noncausal_rho),
    ] {
        if let Some((l, v)) = take(key) {
            *slot = Some(parse_ref(&v, l)?);
        }
    }

    const KNOWN: &[&str] = &[
        "format",
        "name",
        "plant_num",
        "plant_den",
        "k",
        "nz",
        "class",
        "framework",
        "scheme",
        "n_b",
        "n_f",
        "odd",
        "bisect_tol",
        "grid_n",
        "ref_lower",
        "ref_causal",
        "ref_anticausal",
        "ref_noncausal_plain",
        "ref_noncausal_rho",
    ];
    for (key, (l, _)) in &kv {
        if !KNOWN.contains(&key.as_str()) {
            return Err(err(Some(*l), format!("unknown key '{key}'")));
        }
    }

    Ok(RunConfig {
        name,
        plant_num,
        plant_den,
        k,
        n_z,
        class,
        framework,
        scheme,
        n_b,
        n_f,
        odd,
        bisect_tol,
        grid_n,
        reference,
    })
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|mut e| {
        e.message = format!("{}: {}", path.display(), e.message);
        e
    })
}

fn fmt_coeffs(v: &[f64]) -> String {
    v.iter()
        .map(|c| format!("{c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Canonical serialization; `parse(serialize(c)) == c`.
pub fn serialize(c: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format = 1");
    let _ = writeln!(out, "name = {}", c.name);
    let _ = writeln!(out, "plant_num = {}", fmt_coeffs(&c.plant_num));
    let _ = writeln!(out, "plant_den = {}", fmt_coeffs(&c.plant_den));
    let _ = writeln!(out, "k = {}", c.k);
    let _ = writeln!(out, "nz = {}", c.n_z);
    let class = match c.class {
        Causality::Causal => "causal",
        Causality::Anticausal => "anticausal",
        Causality::Noncausal => "noncausal",
    };
    let _ = writeln!(out, "class = {class}");
    let _ = writeln!(out, "framework = {}", c.framework);
    if let Some(s) = c.scheme {
        let _ = writeln!(out, "scheme = {s}");
    }
    let _ = writeln!(out, "n_b = {}", c.n_b);
    let _ = writeln!(out, "n_f = {}", c.n_f);
    let _ = writeln!(out, "odd = {}", c.odd);
    let _ = writeln!(out, "bisect_tol = {}", c.bisect_tol);
    let _ = writeln!(out, "grid_n = {}", c.grid_n);
    if let Some(l) = c.reference.lower {
        let _ = writeln!(out, "ref_lower = {l}");
    }
    let fmt_ref = |r: &Option<f64>| match r {
        Some(v) => format!("{v}"),
        None => "invalid".into(),
    };
    if let Some(r) = &c.reference.causal {
        let _ = writeln!(out, "ref_causal = {}", fmt_ref(r));
    }
    if let Some(r) = &c.reference.anticausal {
        let _ = writeln!(out, "ref_anticausal = {}", fmt_ref(r));
    }
    if let Some(r) = &c.reference.noncausal_plain {
        let _ = writeln!(out, "ref_noncausal_plain = {}", fmt_ref(r));
    }
    if let Some(r) = &c.reference.noncausal_rho {
        let _ = writeln!(out, "ref_noncausal_rho = {}", fmt_ref(r));
    }
    out
}
