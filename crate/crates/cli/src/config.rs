//! Experiment configuration: INI-style sections, `--key=value` overrides,
//! defaults and validation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ini::Ini;
use serde::Serialize;

use pisim_core::twoqubit::Scheme;

use crate::error::CliError;

/// Every accepted key with its section. Keys are unique across sections,
/// so an override may name the key alone.
pub const KEYS: &[(&str, &str)] = &[
    ("system", "system"),
    ("h", "system"),
    ("h1", "system"),
    ("h2", "system"),
    ("k", "system"),
    ("eta", "system"),
    ("initial", "system"),
    ("m", "system"),
    ("omega", "system"),
    ("gamma", "system"),
    ("n_bath", "system"),
    ("x0", "system"),
    ("p0", "system"),
    ("xg", "system"),
    ("pg", "system"),
    ("feedback", "controller"),
    ("actuation", "controller"),
    ("alpha_p", "controller"),
    ("alpha_i", "controller"),
    ("theta", "controller"),
    ("f_pi", "controller"),
    ("tau_p", "controller"),
    ("tau_i", "controller"),
    ("epsilon", "controller"),
    ("alpha_p1", "controller"),
    ("alpha_p2", "controller"),
    ("alpha_i1", "controller"),
    ("alpha_i2", "controller"),
    ("compensation", "controller"),
    ("goal", "controller"),
    ("n_traj", "ensemble"),
    ("seed", "ensemble"),
    ("dt", "ensemble"),
    ("t_final", "ensemble"),
    ("output_stride", "ensemble"),
    ("window_start", "ensemble"),
    ("window_end", "ensemble"),
    ("threads", "ensemble"),
    ("positivity_check", "ensemble"),
    ("scheme", "ensemble"),
    ("abort_below", "ensemble"),
    ("csv", "output"),
    ("summary", "output"),
];

pub const SECTIONS: [&str; 4] = ["system", "controller", "ensemble", "output"];

pub fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, s)| *s)
}

/// Raw key/value pairs after merging the file and the overrides.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn from_ini_str(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text)
            .map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        let mut raw = RawConfig::default();
        for (section, props) in ini.iter() {
            let section = match section {
                Some(s) if SECTIONS.contains(&s) => s,
                Some(s) => return Err(CliError::Config(format!("unknown section [{s}]"))),
                None if props.is_empty() => continue,
                None => return Err(CliError::Config("keys must follow a section header".into())),
            };
            for (key, value) in props.iter() {
                match section_of(key) {
                    Some(s) if s == section => {
                        raw.values.insert(key.to_string(), value.trim().to_string());
                    }
                    Some(s) => {
                        return Err(CliError::Config(format!(
                            "key `{key}` belongs in [{s}], not [{section}]"
                        )))
                    }
                    None => {
                        return Err(CliError::Config(format!(
                            "unknown key `{key}` in [{section}]"
                        )))
                    }
                }
            }
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_ini_str(&text)
    }

    /// Applies `--key=value` or `--section.key=value`.
    pub fn apply_override(&mut self, arg: &str) -> Result<(), CliError> {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("expected --key=value, got `{arg}`")))?;
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected --key=value, got `{arg}`")))?;
        let key = match key.split_once('.') {
            Some((section, k)) => {
                if section_of(k) != Some(section) {
                    return Err(CliError::Config(format!("unknown key `{section}.{k}`")));
                }
                k
            }
            None => key,
        };
        if section_of(key).is_none() {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        self.values
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn remove(&mut self, key: &str) {
        self.values.remove(key);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn number(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key).map(|v| parse_number(key, v)).transpose()
    }

    fn number_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.number(key)?.unwrap_or(default))
    }

    /// A duration that may be written in oscillator periods: `0.25T`, `T/4`.
    fn time(&self, key: &str, period: Option<f64>) -> Result<Option<f64>, CliError> {
        self.get(key)
            .map(|v| parse_time(key, v, period))
            .transpose()
    }

    fn integer(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| {
                    CliError::Config(format!("`{key}` must be a non-negative integer, got `{v}`"))
                })
            })
            .transpose()
    }
}

fn parse_number(key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}` must be a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(CliError::Config(format!(
            "`{key}` must be finite, got `{v}`"
        )));
    }
    Ok(x)
}

fn parse_time(key: &str, v: &str, period: Option<f64>) -> Result<f64, CliError> {
    let uses_period = v.contains('T');
    if !uses_period {
        return parse_number(key, v);
    }
    let t = period.ok_or_else(|| {
        CliError::Config(format!(
            "`{key}` = `{v}`: periods are only defined for the oscillator"
        ))
    })?;
    if let Some(div) = v.strip_prefix("T/") {
        return Ok(t / parse_number(key, div)?);
    }
    if v == "T" {
        return Ok(t);
    }
    match v.strip_suffix('T') {
        Some(factor) => Ok(parse_number(key, factor.trim_end_matches('*'))? * t),
        None => Err(CliError::Config(format!(
            "`{key}`: cannot read `{v}` as a duration"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SystemKind {
    #[serde(rename = "twoqubit")]
    TwoQubit,
    #[serde(rename = "oscillator")]
    Oscillator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Feedback {
    P,
    I,
    PI,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActuationKind {
    #[serde(rename = "xp")]
    Xp,
    #[serde(rename = "x_only")]
    XOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CompensationSetting {
    #[serde(rename = "auto")]
    Auto,
    #[serde(rename = "off")]
    Off,
    #[serde(rename = "value")]
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoQubitSystem {
    pub h1: f64,
    pub h2: f64,
    pub k: f64,
    pub eta: f64,
    /// Initial populations of (T_1, T_0, T_−1).
    pub initial: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillatorSystem {
    pub m: f64,
    pub omega: f64,
    pub gamma: f64,
    pub n_bath: f64,
    pub k: f64,
    pub eta: f64,
    /// Rotating-frame start.
    pub x0: f64,
    pub p0: f64,
    /// Rotating-frame target.
    pub xg: f64,
    pub pg: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SystemConfig {
    #[serde(rename = "twoqubit")]
    TwoQubit(TwoQubitSystem),
    #[serde(rename = "oscillator")]
    Oscillator(OscillatorSystem),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub feedback: Feedback,
    pub actuation: Option<ActuationKind>,
    /// Two-qubit gains, resolved from θ and f_PI when those were given.
    pub alpha_p: f64,
    pub alpha_i: f64,
    pub theta: Option<f64>,
    pub f_pi: Option<f64>,
    /// Nominal delay; the applied one is [`ControllerConfig::delay_p`].
    pub tau_p: f64,
    pub tau_i: f64,
    pub epsilon: f64,
    /// Constant oscillator gains (α_p1, α_p2, α_i1, α_i2).
    pub gains: Option<[f64; 4]>,
    pub compensation: CompensationSetting,
    pub goal: f64,
}

impl ControllerConfig {
    /// Proportional delay actually applied, τ_P + ε.
    pub fn delay_p(&self) -> f64 {
        self.tau_p + self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSettings {
    pub n_traj: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
    pub window: (f64, f64),
    pub threads: Option<usize>,
    pub positivity_every_step: bool,
    pub scheme: Scheme,
    pub abort_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSettings {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub controller: ControllerConfig,
    pub ensemble: EnsembleSettings,
    pub output: OutputSettings,
}

pub const DEFAULT_N_TRAJ: usize = 2000;
pub const TWOQUBIT_DT: f64 = 0.01;
pub const TWOQUBIT_T_FINAL: f64 = 400.0;
pub const OSCILLATOR_STEPS_PER_PERIOD: f64 = 500.0;
pub const OSCILLATOR_T_FINAL: f64 = 500.0;

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T, CliError> {
    options
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(v))
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!(
                "`{key}` must be one of {}, got `{v}`",
                names.join(", ")
            ))
        })
}

fn forbid(raw: &RawConfig, keys: &[&str], why: &str) -> Result<(), CliError> {
    match keys.iter().find(|k| raw.has(k)) {
        Some(k) => Err(CliError::Config(format!("`{k}` is not allowed {why}"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn resolve(raw: &RawConfig) -> Result<Self, CliError> {
        let kind = choice(
            "system",
            raw.get("system").ok_or_else(|| {
                CliError::Config("`system` is required (twoqubit or oscillator)".into())
            })?,
            &[
                ("twoqubit", SystemKind::TwoQubit),
                ("oscillator", SystemKind::Oscillator),
            ],
        )?;
        let feedback = choice(
            "feedback",
            raw.get("feedback")
                .ok_or_else(|| CliError::Config("`feedback` is required (P, I or PI)".into()))?,
            &[("P", Feedback::P), ("I", Feedback::I), ("PI", Feedback::PI)],
        )?;
        let system = match kind {
            SystemKind::TwoQubit => SystemConfig::TwoQubit(two_qubit_system(raw)?),
            SystemKind::Oscillator => SystemConfig::Oscillator(oscillator_system(raw)?),
        };
        let period = match &system {
            SystemConfig::Oscillator(o) => Some(o.period),
            SystemConfig::TwoQubit(_) => None,
        };
        let controller = match kind {
            SystemKind::TwoQubit => two_qubit_controller(raw, feedback)?,
            SystemKind::Oscillator => oscillator_controller(raw, feedback, period)?,
        };
        let ensemble = ensemble_settings(raw, kind, period)?;
        let output = OutputSettings {
            csv: PathBuf::from(raw.get("csv").unwrap_or("pisim_timeseries.csv")),
            summary: PathBuf::from(raw.get("summary").unwrap_or("pisim_summary.json")),
        };
        Ok(ExperimentConfig {
            system,
            controller,
            ensemble,
            output,
        })
    }

    pub fn kind(&self) -> SystemKind {
        match self.system {
            SystemConfig::TwoQubit(_) => SystemKind::TwoQubit,
            SystemConfig::Oscillator(_) => SystemKind::Oscillator,
        }
    }

    /// Every key with its resolved value, grouped by section. Feeding this
    /// back as a config file reproduces the run exactly.
    pub fn sections(&self) -> BTreeMap<&'static str, Vec<(String, String)>> {
        let mut sections: BTreeMap<&'static str, Vec<(String, String)>> = BTreeMap::new();
        let mut put = |key: &str, value: String| {
            let section = section_of(key).expect("known key");
            sections
                .entry(section)
                .or_default()
                .push((key.to_string(), value));
        };
        match &self.system {
            SystemConfig::TwoQubit(s) => {
                put("system", "twoqubit".into());
                put("h1", s.h1.to_string());
                put("h2", s.h2.to_string());
                put("k", s.k.to_string());
                put("eta", s.eta.to_string());
                put("initial", s.initial.map(|x| x.to_string()).join(","));
            }
            SystemConfig::Oscillator(s) => {
                put("system", "oscillator".into());
                for (k, v) in [
                    ("m", s.m),
                    ("omega", s.omega),
                    ("gamma", s.gamma),
                    ("n_bath", s.n_bath),
                    ("k", s.k),
                    ("eta", s.eta),
                    ("x0", s.x0),
                    ("p0", s.p0),
                    ("xg", s.xg),
                    ("pg", s.pg),
                ] {
                    put(k, v.to_string());
                }
            }
        }
        let c = &self.controller;
        put("feedback", format!("{:?}", c.feedback));
        if let Some(a) = c.actuation {
            put(
                "actuation",
                if a == ActuationKind::Xp {
                    "xp"
                } else {
                    "x_only"
                }
                .into(),
            );
        }
        match (c.theta, c.f_pi, self.kind()) {
            (Some(theta), Some(f), _) => {
                put("theta", theta.to_string());
                put("f_pi", f.to_string());
            }
            (Some(theta), None, SystemKind::Oscillator) => put("theta", theta.to_string()),
            _ if self.kind() == SystemKind::TwoQubit => {
                put("alpha_p", c.alpha_p.to_string());
                put("alpha_i", c.alpha_i.to_string());
            }
            _ => {}
        }
        put("tau_p", c.tau_p.to_string());
        put("tau_i", c.tau_i.to_string());
        if self.kind() == SystemKind::Oscillator {
            put("epsilon", c.epsilon.to_string());
            put(
                "compensation",
                match c.compensation {
                    CompensationSetting::Auto => "auto".into(),
                    CompensationSetting::Off => "off".into(),
                    CompensationSetting::Value(v) => v.to_string(),
                },
            );
        } else {
            put("goal", c.goal.to_string());
        }
        if let Some(g) = c.gains {
            for (k, v) in ["alpha_p1", "alpha_p2", "alpha_i1", "alpha_i2"]
                .iter()
                .zip(g)
            {
                if v != 0.0 || c.actuation == Some(ActuationKind::Xp) || k.ends_with('1') {
                    put(k, v.to_string());
                }
            }
        }
        let e = &self.ensemble;
        put("n_traj", e.n_traj.to_string());
        put("seed", e.seed.to_string());
        put("dt", e.dt.to_string());
        put("t_final", e.t_final.to_string());
        put("output_stride", e.output_stride.to_string());
        put("window_start", e.window.0.to_string());
        put("window_end", e.window.1.to_string());
        if let Some(t) = e.threads {
            put("threads", t.to_string());
        }
        if self.kind() == SystemKind::TwoQubit {
            put(
                "positivity_check",
                if e.positivity_every_step {
                    "every_step"
                } else {
                    "output"
                }
                .into(),
            );
            put(
                "scheme",
                if e.scheme == Scheme::Kraus {
                    "kraus"
                } else {
                    "euler"
                }
                .into(),
            );
            put("abort_below", e.abort_below.to_string());
        }
        put("csv", self.output.csv.display().to_string());
        put("summary", self.output.summary.display().to_string());
        sections
    }

    pub fn to_ini(&self) -> String {
        let sections = self.sections();
        let mut out = String::new();
        for section in SECTIONS {
            if let Some(entries) = sections.get(section) {
                out.push_str(&format!("[{section}]\n"));
                for (k, v) in entries {
                    out.push_str(&format!("{k} = {v}\n"));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn two_qubit_system(raw: &RawConfig) -> Result<TwoQubitSystem, CliError> {
    forbid(
        raw,
        &["m", "omega", "gamma", "n_bath", "x0", "p0", "xg", "pg"],
        "for the two-qubit system",
    )?;
    let (h1, h2) = match raw.number("h")? {
        Some(h) => {
            forbid(raw, &["h1", "h2"], "together with `h`")?;
            (h, h)
        }
        None => (raw.number_or("h1", 0.1)?, raw.number_or("h2", 0.1)?),
    };
    let initial = match raw.get("initial").unwrap_or("t1") {
        v if v.eq_ignore_ascii_case("t1") => [1.0, 0.0, 0.0],
        v if v.eq_ignore_ascii_case("t0") => [0.0, 1.0, 0.0],
        v if v.eq_ignore_ascii_case("tm1") => [0.0, 0.0, 1.0],
        v => {
            let w: Vec<f64> = v
                .split(',')
                .map(|x| parse_number("initial", x.trim()))
                .collect::<Result<_, _>>()?;
            let sum: f64 = w.iter().sum();
            if w.len() != 3 || w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(CliError::Config(format!(
                    "`initial` must be t1, t0, tm1 or three non-negative weights summing to 1, got `{v}`"
                )));
            }
            [w[0], w[1], w[2]]
        }
    };
    Ok(TwoQubitSystem {
        h1,
        h2,
        k: raw.number_or("k", 1.0)?,
        eta: raw.number_or("eta", 0.4)?,
        initial,
    })
}

fn oscillator_system(raw: &RawConfig) -> Result<OscillatorSystem, CliError> {
    forbid(raw, &["h", "h1", "h2", "initial"], "for the oscillator")?;
    let m = raw.number_or("m", 1.0)?;
    let omega = raw.number_or("omega", 1.0)?;
    if !(m > 0.0 && omega > 0.0) {
        return Err(CliError::Config("`m` and `omega` must be positive".into()));
    }
    let mw = m * omega;
    Ok(OscillatorSystem {
        m,
        omega,
        gamma: raw.number_or("gamma", 0.02)?,
        n_bath: raw.number_or("n_bath", 1.0)?,
        k: raw.number_or("k", 0.02)?,
        eta: raw.number_or("eta", 0.4)?,
        x0: raw.number_or("x0", 10.0)?,
        p0: raw.number_or("p0", 10.0 * mw)?,
        xg: raw.number_or("xg", 6.0)?,
        pg: raw.number_or("pg", 4.0 * mw)?,
        period: 2.0 * PI / omega,
    })
}

fn two_qubit_controller(raw: &RawConfig, feedback: Feedback) -> Result<ControllerConfig, CliError> {
    forbid(
        raw,
        &[
            "actuation",
            "epsilon",
            "alpha_p1",
            "alpha_p2",
            "alpha_i1",
            "alpha_i2",
            "compensation",
        ],
        "for the two-qubit system",
    )?;
    let alpha_form = raw.has("alpha_p") || raw.has("alpha_i");
    let mixing_form = raw.has("theta") || raw.has("f_pi");
    let (alpha_p, alpha_i, theta, f_pi) = match (alpha_form, mixing_form) {
        (true, true) => {
            return Err(CliError::Config(
                "give either alpha_p/alpha_i or theta/f_pi, not both".into(),
            ));
        }
        (false, false) => {
            return Err(CliError::Config(
                "feedback strength missing: give alpha_p/alpha_i or theta/f_pi".into(),
            ))
        }
        (true, false) => {
            let ap = raw.number_or("alpha_p", 0.0)?;
            let ai = raw.number_or("alpha_i", 0.0)?;
            (ap, ai, None, None)
        }
        (false, true) => {
            let f = raw
                .number("f_pi")?
                .ok_or_else(|| CliError::Config("`theta` needs `f_pi`".into()))?;
            let theta = match (raw.number("theta")?, feedback) {
                (Some(t), _) => t,
                (None, Feedback::P) => 0.0,
                (None, Feedback::I) => 1.0,
                (None, Feedback::PI) => {
                    return Err(CliError::Config(
                        "PI feedback with f_pi needs `theta`".into(),
                    ))
                }
            };
            let (ap, ai) =
                pisim_core::feedback::from_mixing(theta, f).map_err(CliError::from_core)?;
            (ap, ai, Some(theta), Some(f))
        }
    };
    let consistent = match feedback {
        Feedback::P => alpha_i == 0.0,
        Feedback::I => alpha_p == 0.0,
        Feedback::PI => true,
    };
    if !consistent {
        return Err(CliError::Config(format!(
            "feedback = {feedback:?} conflicts with alpha_p = {alpha_p}, alpha_i = {alpha_i}"
        )));
    }
    let tau_i = raw.number_or("tau_i", 0.0)?;
    if alpha_i != 0.0 && !raw.has("tau_i") {
        return Err(CliError::Config("integral feedback needs `tau_i`".into()));
    }
    Ok(ControllerConfig {
        feedback,
        actuation: None,
        alpha_p,
        alpha_i,
        theta,
        f_pi,
        tau_p: raw.number_or("tau_p", 0.0)?,
        tau_i,
        epsilon: 0.0,
        gains: None,
        compensation: CompensationSetting::Off,
        goal: raw.number_or("goal", 0.0)?,
    })
}

fn oscillator_controller(
    raw: &RawConfig,
    feedback: Feedback,
    period: Option<f64>,
) -> Result<ControllerConfig, CliError> {
    forbid(
        raw,
        &["alpha_p", "alpha_i", "f_pi", "goal"],
        "for the oscillator (use theta or alpha_p1..alpha_i2)",
    )?;
    let actuation = choice(
        "actuation",
        raw.get("actuation").unwrap_or("xp"),
        &[("xp", ActuationKind::Xp), ("x_only", ActuationKind::XOnly)],
    )?;
    if actuation == ActuationKind::XOnly {
        forbid(raw, &["alpha_p2", "alpha_i2"], "with x_only actuation")?;
    }
    let theta = match (raw.number("theta")?, feedback) {
        (Some(t), Feedback::PI) => t,
        (Some(_), _) => {
            return Err(CliError::Config(
                "`theta` only applies to PI feedback".into(),
            ))
        }
        (None, Feedback::P) => 0.0,
        (None, Feedback::I) => 1.0,
        (None, Feedback::PI) => return Err(CliError::Config("PI feedback needs `theta`".into())),
    };
    let gain_keys = ["alpha_p1", "alpha_p2", "alpha_i1", "alpha_i2"];
    let gains = if gain_keys.iter().any(|k| raw.has(k)) {
        let mut g = [0.0; 4];
        for (slot, key) in g.iter_mut().zip(gain_keys) {
            *slot = raw.number_or(key, 0.0)?;
        }
        Some(g)
    } else {
        None
    };
    let compensation = match raw.get("compensation").unwrap_or("auto") {
        v if v.eq_ignore_ascii_case("auto") => CompensationSetting::Auto,
        v if v.eq_ignore_ascii_case("off") => CompensationSetting::Off,
        v => CompensationSetting::Value(parse_number("compensation", v)?),
    };
    let epsilon = raw.time("epsilon", period)?.unwrap_or(0.0);
    if epsilon != 0.0 && actuation != ActuationKind::XOnly {
        return Err(CliError::Config(
            "`epsilon` only applies to x_only actuation".into(),
        ));
    }
    let tau_i = raw.time("tau_i", period)?.unwrap_or(0.0);
    if theta > 0.0 && !raw.has("tau_i") {
        return Err(CliError::Config("integral feedback needs `tau_i`".into()));
    }
    Ok(ControllerConfig {
        feedback,
        actuation: Some(actuation),
        alpha_p: 0.0,
        alpha_i: 0.0,
        theta: Some(theta),
        f_pi: None,
        tau_p: raw.time("tau_p", period)?.unwrap_or(0.0),
        tau_i,
        epsilon,
        gains,
        compensation,
        goal: 0.0,
    })
}

fn ensemble_settings(
    raw: &RawConfig,
    kind: SystemKind,
    period: Option<f64>,
) -> Result<EnsembleSettings, CliError> {
    let (dt_default, tf_default, stride_default) = match period {
        Some(t) => (t / OSCILLATOR_STEPS_PER_PERIOD, OSCILLATOR_T_FINAL, 10),
        None => (TWOQUBIT_DT, TWOQUBIT_T_FINAL, 50),
    };
    let dt = raw.time("dt", period)?.unwrap_or(dt_default);
    let t_final = raw.time("t_final", period)?.unwrap_or(tf_default);
    let window = (
        raw.time("window_start", period)?.unwrap_or(0.75 * t_final),
        raw.time("window_end", period)?.unwrap_or(t_final),
    );
    let positivity_every_step = match raw.get("positivity_check").unwrap_or("output") {
        v if v.eq_ignore_ascii_case("output") => false,
        v if v.eq_ignore_ascii_case("every_step") => true,
        v => {
            return Err(CliError::Config(format!(
                "`positivity_check` must be output or every_step, got `{v}`"
            )))
        }
    };
    if kind == SystemKind::Oscillator {
        forbid(
            raw,
            &["positivity_check", "scheme", "abort_below"],
            "for the oscillator",
        )?;
    }
    let scheme = choice(
        "scheme",
        raw.get("scheme").unwrap_or("kraus"),
        &[("kraus", Scheme::Kraus), ("euler", Scheme::EulerMaruyama)],
    )?;
    // Euler-Maruyama needs a looser floor, see TRAJECTORY_ABORT
    let abort_default = match scheme {
        Scheme::Kraus => pisim_core::quantum::POSITIVITY_ABORT,
        Scheme::EulerMaruyama => pisim_core::twoqubit::TRAJECTORY_ABORT,
    };
    let threads = raw.integer("threads")?.map(|t| t as usize);
    if threads == Some(0) {
        return Err(CliError::Config("`threads` must be at least 1".into()));
    }
    Ok(EnsembleSettings {
        n_traj: raw
            .integer("n_traj")?
            .map_or(DEFAULT_N_TRAJ, |n| n as usize),
        seed: raw.integer("seed")?.unwrap_or(0),
        dt,
        t_final,
        output_stride: raw
            .integer("output_stride")?
            .map_or(stride_default, |n| n as usize),
        window,
        threads,
        positivity_every_step,
        scheme,
        abort_below: raw.number_or("abort_below", abort_default)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::resolve(&RawConfig::from_ini_str(text)?)
    }

    #[test]
    fn minimal_two_qubit_config_gets_defaults() {
        let c = resolve("[system]\nsystem = twoqubit\nh = 0.1\nk = 1\neta = 0.4\n[controller]\nfeedback = I\nalpha_i = 0.2\ntau_i = 3\n")
            .unwrap();
        assert_eq!(c.ensemble.dt, 0.01);
        assert_eq!(c.ensemble.t_final, 400.0);
        assert_eq!(c.ensemble.n_traj, 2000);
        assert_eq!((c.controller.alpha_p, c.controller.alpha_i), (0.0, 0.2));
    }

    #[test]
    fn mixing_ratio_resolves_gains() {
        let c = resolve("[system]\nsystem = twoqubit\n[controller]\nfeedback = PI\ntheta = 0.85\nf_pi = 0.2\ntau_i = 3\n").unwrap();
        assert!((c.controller.alpha_p - 0.03).abs() < 1e-12);
        assert!((c.controller.alpha_i - 0.17).abs() < 1e-12);
    }

    #[test]
    fn both_gain_forms_are_rejected() {
        let e = resolve("[system]\nsystem = twoqubit\n[controller]\nfeedback = PI\ntheta = 0.8\nf_pi = 0.2\nalpha_p = 0.1\n");
        assert!(matches!(e, Err(CliError::Config(_))));
    }

    #[test]
    fn x_only_rejects_position_gains() {
        let e = resolve("[system]\nsystem = oscillator\n[controller]\nfeedback = P\nactuation = x_only\nalpha_p2 = 0.1\n");
        assert!(matches!(e, Err(CliError::Config(m)) if m.contains("alpha_p2")));
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(RawConfig::from_ini_str("[system]\nsystme = twoqubit\n").is_err());
        assert!(RawConfig::from_ini_str("[plots]\nx = 1\n").is_err());
        assert!(RawConfig::from_ini_str("[ensemble]\nh = 0.1\n").is_err());
        assert!(RawConfig::default().apply_override("--bogus=1").is_err());
    }

    #[test]
    fn durations_in_periods() {
        let t = 2.0 * PI;
        assert!((parse_time("tau_p", "0.25T", Some(t)).unwrap() - t / 4.0).abs() < 1e-15);
        assert!((parse_time("dt", "T/500", Some(t)).unwrap() - t / 500.0).abs() < 1e-15);
        assert_eq!(parse_time("tau_p", "1.5", Some(t)).unwrap(), 1.5);
        assert!(parse_time("tau_p", "0.25T", None).is_err());
    }

    #[test]
    fn overrides_win_over_the_file() {
        let mut raw = RawConfig::from_ini_str(
            "[system]\nsystem = twoqubit\nh = 0.1\n[controller]\nfeedback = P\nalpha_p = 0.2\n",
        )
        .unwrap();
        raw.apply_override("--h=0.5").unwrap();
        raw.apply_override("--ensemble.n_traj=10").unwrap();
        let c = ExperimentConfig::resolve(&raw).unwrap();
        assert_eq!(c.ensemble.n_traj, 10);
        assert!(matches!(c.system, SystemConfig::TwoQubit(TwoQubitSystem { h1, .. }) if h1 == 0.5));
    }

    #[test]
    fn echo_round_trips() {
        for text in [
            "[system]\nsystem = twoqubit\nh1 = 0.2\nh2 = 0.1\n[controller]\nfeedback = PI\ntheta = 0.7\nf_pi = 0.2\ntau_i = 3\ntau_p = 0.5\n",
            "[system]\nsystem = oscillator\neta = 0.6\n[controller]\nfeedback = PI\nactuation = x_only\ntheta = 0.8\ntau_p = 0.25T\ntau_i = T/2\nepsilon = 0.05T\n",
        ] {
            let c = resolve(text).unwrap();
            let again = resolve(&c.to_ini()).unwrap();
            assert_eq!(c, again);
        }
    }
}
