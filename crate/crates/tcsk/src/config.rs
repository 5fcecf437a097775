//! Run configuration: a TOML document validated into a [`RunConfig`].
//!
//! Every table and key is optional except `command`; see the README for the
//! full key set. Errors carry the dotted key path of the first offence.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tcsk_core::flows::FlowSettings;
use tcsk_core::geodesic::GeodesicSettings;
use tcsk_core::mat::{self, Mat};
use tcsk_core::solver::{default_schedule, NewtonSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Continue,
    Jflow,
    Calabi,
    Geodesic,
    Energy,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Continue => "continue",
            Command::Jflow => "jflow",
            Command::Calabi => "calabi",
            Command::Geodesic => "geodesic",
            Command::Energy => "energy",
            Command::Check => "check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed configuration: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    #[default]
    Cos,
    Sin,
}

/// `amplitude·cos(k·x)` or `amplitude·sin(k·x)` with integer `k` per real axis.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerm {
    pub k: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub wave: Wave,
}

/// A scalar field: zero, a finite trigonometric sum, a seeded random
/// band-limited field, or a stored field file.
#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    Zero,
    Modes {
        terms: Vec<ModeTerm>,
    },
    Random {
        max_mode: usize,
        amplitude: f64,
        /// Falls back to the run seed.
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
    },
}

impl FieldSpec {
    pub fn validate(&self, path: &str, sizes: &[usize]) -> Result<(), ConfigError> {
        match self {
            FieldSpec::Zero | FieldSpec::File { .. } => Ok(()),
            FieldSpec::Modes { terms } => {
                for (i, term) in terms.iter().enumerate() {
                    let here = format!("{path}.terms[{i}]");
                    if term.k.len() != sizes.len() {
                        return invalid(format!("{here}.k"), format!("needs {} entries", sizes.len()));
                    }
                    if let Some(a) = (0..sizes.len()).find(|&a| 2 * term.k[a].unsigned_abs() as usize >= sizes[a]) {
                        return invalid(format!("{here}.k[{a}]"), "wavenumber at or above Nyquist");
                    }
                    if !term.amplitude.is_finite() {
                        return invalid(format!("{here}.amplitude"), "must be finite");
                    }
                }
                Ok(())
            }
            FieldSpec::Random { max_mode, amplitude, .. } => {
                if *max_mode == 0 || sizes.iter().any(|&s| 2 * max_mode >= s) {
                    return invalid(format!("{path}.max_mode"), "must lie in 1..size/2");
                }
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return invalid(format!("{path}.amplitude"), "must be finite and non-negative");
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Defaults to 64 per axis for `n = 1` and 16 for `n = 2`.
    pub sizes: Option<Vec<usize>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 1, sizes: None }
    }
}

impl GridConfig {
    pub fn sizes(&self) -> Vec<usize> {
        self.sizes
            .clone()
            .unwrap_or_else(|| vec![if self.n == 2 { 16 } else { 64 }; 2 * self.n])
    }
}

/// `χ = χ_H + i∂∂̄ψ`; `χ_H = re + i·im`, identity when omitted.
#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChiConfig {
    pub re: Option<Vec<Vec<f64>>>,
    pub im: Option<Vec<Vec<f64>>>,
    pub psi: FieldSpec,
}

impl ChiConfig {
    pub fn constant(&self, n: usize) -> Mat {
        let mut m = mat::ZERO;
        for a in 0..n {
            for b in 0..n {
                let re = self.re.as_ref().map_or(if a == b { 1.0 } else { 0.0 }, |r| r[a][b]);
                let im = self.im.as_ref().map_or(0.0, |r| r[a][b]);
                m[a][b] = num_complex::Complex64::new(re, im);
            }
        }
        m
    }

    fn validate(&self, n: usize, sizes: &[usize]) -> Result<(), ConfigError> {
        for (key, part) in [("re", &self.re), ("im", &self.im)] {
            let Some(rows) = part else { continue };
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return invalid(format!("chi.{key}"), format!("must be a {n}x{n} matrix"));
            }
            if let Some((a, b)) = entries(n).find(|&(a, b)| !rows[a][b].is_finite()) {
                return invalid(format!("chi.{key}[{a}][{b}]"), "must be finite");
            }
        }
        let m = self.constant(n);
        for (a, b) in entries(n) {
            let gap = m[a][b] - m[b][a].conj();
            if gap.re.abs() > 1e-14 {
                return invalid(format!("chi.re[{a}][{b}]"), format!("must equal chi.re[{b}][{a}]"));
            }
            if gap.im.abs() > 1e-14 {
                let message = if a == b {
                    "diagonal must be real".to_string()
                } else {
                    format!("must equal -chi.im[{b}][{a}]")
                };
                return invalid(format!("chi.im[{a}][{b}]"), message);
            }
        }
        let lambda = mat::min_eigenvalue(n, &m);
        if !(lambda > 0.0) {
            return invalid("chi", format!("constant part is not positive definite (eigenvalue {lambda:.3e})"));
        }
        self.psi.validate("chi.psi", sizes)
    }
}

fn entries(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |a| (0..n).map(move |b| (a, b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub max_step_halvings: usize,
    pub secant_predictor: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            max_step_halvings: 4,
            secant_predictor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicConfig {
    pub eps: f64,
    pub n_t: usize,
    pub phi0: FieldSpec,
    pub phi1: FieldSpec,
    pub solver: GeodesicSettings,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            n_t: 17,
            phi0: FieldSpec::Zero,
            phi1: FieldSpec::Modes {
                terms: vec![ModeTerm {
                    k: vec![1, 0],
                    amplitude: 0.3,
                    wave: Wave::Cos,
                }],
            },
            solver: GeodesicSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Field file to evaluate; `--input` takes precedence.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub criteria: Vec<usize>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            criteria: (1..=10).collect(),
        }
    }
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub chi: ChiConfig,
    /// Path parameter for `calabi`, `geodesic` and `energy`.
    #[serde(default = "half")]
    pub t: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<f64>,
    #[serde(default)]
    pub newton: NewtonSettings,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub flow: FlowSettings,
    /// Initial potential of the flows.
    #[serde(default = "default_start")]
    pub start: FieldSpec,
    #[serde(default)]
    pub geodesic: GeodesicConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

fn default_start() -> FieldSpec {
    FieldSpec::Random {
        max_mode: 2,
        amplitude: 0.1,
        seed: None,
    }
}

impl RunConfig {
    /// Defaults for `command` with no document at all.
    pub fn defaults(command: Command) -> Self {
        parse_config(&format!("command = \"{}\"", command.name())).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.grid.n;
        if n != 1 && n != 2 {
            return invalid("grid.n", format!("must be 1 or 2, got {n}"));
        }
        let sizes = self.grid.sizes();
        if sizes.len() != 2 * n {
            return invalid("grid.sizes", format!("needs {} entries for n = {n}", 2 * n));
        }
        if let Some((i, s)) = sizes.iter().enumerate().find(|(_, &s)| s < 8 || !s.is_power_of_two()) {
            return invalid(format!("grid.sizes[{i}]"), format!("{s} is not a power of two >= 8"));
        }
        self.chi.validate(n, &sizes)?;
        if !(0.0..=1.0).contains(&self.t) {
            return invalid("t", format!("{} outside [0, 1]", self.t));
        }
        validate_schedule(&self.schedule)?;
        self.newton
            .validate()
            .or_else(|e| invalid("newton", e.to_string()))?;
        self.flow.validate().or_else(|e| invalid("flow", e.to_string()))?;
        self.start.validate("start", &sizes)?;
        let geo = &self.geodesic;
        if !(geo.eps > 0.0 && geo.eps.is_finite()) {
            return invalid("geodesic.eps", "must be positive");
        }
        if geo.n_t < 9 || geo.n_t % 2 == 0 {
            return invalid("geodesic.n_t", "must be odd and at least 9");
        }
        geo.phi0.validate("geodesic.phi0", &sizes)?;
        geo.phi1.validate("geodesic.phi1", &sizes)?;
        if let Some((i, c)) = self.check.criteria.iter().enumerate().find(|(_, &c)| !(1..=10).contains(&c)) {
            return invalid(format!("check.criteria[{i}]"), format!("no criterion {c}"));
        }
        Ok(())
    }
}

fn validate_schedule(schedule: &[f64]) -> Result<(), ConfigError> {
    if schedule.first() != Some(&0.0) {
        return invalid("schedule[0]", "must start at 0");
    }
    for (i, &t) in schedule.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return invalid(format!("schedule[{i}]"), format!("{t} outside [0, 1]"));
        }
        if i > 0 && t <= schedule[i - 1] {
            return invalid(format!("schedule[{i}]"), "must increase strictly");
        }
    }
    Ok(())
}

/// Parses and validates a document; `command` must be present.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_for(text, None)
}

/// Like [`parse_config`], with `command` supplied by the caller when the
/// document omits it. A document naming a different command is rejected.
pub fn parse_config_for(text: &str, command: Option<Command>) -> Result<RunConfig, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    if let Some(cmd) = command {
        match table.get("command") {
            None => {
                table.insert("command".into(), toml::Value::String(cmd.name().into()));
            }
            Some(toml::Value::String(s)) if s != cmd.name() => {
                return invalid("command", format!("document is for `{s}` but `{}` was requested", cmd.name()));
            }
            _ => {}
        }
    }
    let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Invalid {
            path: if path == "." { "(root)".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_of(e: ConfigError) -> String {
        match e {
            ConfigError::Invalid { path, .. } => path,
            other => panic!("expected a key error, got {other}"),
        }
    }

    #[test]
    fn minimal_check_config_gets_defaults() {
        let c = parse_config("command = \"check\"").unwrap();
        assert_eq!(c.command, Command::Check);
        assert_eq!((c.grid.n, c.grid.sizes(), c.seed), (1, vec![64, 64], 0));
        assert_eq!(c.schedule.len(), 21);
        assert_eq!(c.check.criteria, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn non_hermitian_chi_names_entry() {
        let text = "command = \"continue\"\n[grid]\nn = 2\n[chi]\nre = [[1.0, 0.2], [0.1, 1.0]]\n";
        assert_eq!(path_of(parse_config(text).unwrap_err()), "chi.re[0][1]");
        let text = "command = \"continue\"\n[chi]\nim = [[0.5]]\n";
        assert_eq!(path_of(parse_config(text).unwrap_err()), "chi.im[0][0]");
    }

    #[test]
    fn schedule_out_of_range() {
        let e = parse_config("command = \"continue\"\nschedule = [0.0, 0.5, 1.2]").unwrap_err();
        assert_eq!(e.to_string(), "schedule[2]: 1.2 outside [0, 1]");
        let e = parse_config("command = \"continue\"\nschedule = [0.0, 0.5, 0.5]").unwrap_err();
        assert_eq!(path_of(e), "schedule[2]");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let e = parse_config("command = \"jflow\"\n[flow]\ndt = 0.1\n").unwrap_err();
        assert_eq!(path_of(e), "flow.dt");
        let e = parse_config("command = \"jflow\"\n[start]\nkind = \"random\"\nmax_mode = 2\namplitude = 0.1\nextra = 1\n")
            .unwrap_err();
        assert!(path_of(e).starts_with("start"));
        assert!(parse_config("bogus = 1\ncommand = \"check\"").is_err());
    }

    #[test]
    fn grid_and_fields_validated() {
        let e = parse_config("command = \"check\"\n[grid]\nsizes = [64, 48]").unwrap_err();
        assert_eq!(path_of(e), "grid.sizes[1]");
        let e = parse_config("command = \"check\"\n[grid]\nn = 2\nsizes = [16, 16]").unwrap_err();
        assert_eq!(path_of(e), "grid.sizes");
        let text = "command = \"continue\"\n[chi.psi]\nkind = \"modes\"\nterms = [{ k = [40, 0], amplitude = 0.1 }]\n";
        assert_eq!(path_of(parse_config(text).unwrap_err()), "chi.psi.terms[0].k[0]");
        let e = parse_config("command = \"check\"\n[check]\ncriteria = [1, 11]").unwrap_err();
        assert_eq!(path_of(e), "check.criteria[1]");
        assert_eq!(path_of(parse_config("command = \"geodesic\"\n[geodesic]\nn_t = 10").unwrap_err()), "geodesic.n_t");
    }

    #[test]
    fn command_override() {
        let c = parse_config_for("seed = 4", Some(Command::Energy)).unwrap();
        assert_eq!((c.command, c.seed), (Command::Energy, 4));
        let e = parse_config_for("command = \"check\"", Some(Command::Jflow)).unwrap_err();
        assert_eq!(path_of(e), "command");
        assert!(matches!(parse_config("seed = 1"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config("command = "), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn settings_tables_round_trip() {
        let text = "command = \"calabi\"\nt = 0.25\n[newton]\ntol_outer = 1e-11\n[flow]\ndt_init = 0.1\nmax_steps = 5\n[geodesic.solver]\ntol = 1e-9\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.newton.tol_outer, 1e-11);
        assert_eq!(c.newton.max_newton, NewtonSettings::default().max_newton);
        assert_eq!((c.flow.dt_init, c.flow.max_steps), (0.1, 5));
        assert_eq!(c.geodesic.solver.tol, 1e-9);
        assert_eq!(c.t, 0.25);
        let back = parse_config(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(parse_config("command = \"calabi\"\n[flow]\ndt_min = 0.0").is_err());
    }
}
