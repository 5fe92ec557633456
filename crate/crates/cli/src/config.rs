//! Experiment configuration: TOML file, environment, then flag overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nsfde::linalg::Matrix;
use nsfde::model::builtin::LinearParams;
use nsfde::{HistoryPath64, InitialData64, LinearNeutralModel64, NeutralTerm, RunConfig64, TailRule};
use serde::{Deserialize, Serialize};

pub const ENV_OUT_DIR: &str = "NSFDE_OUT_DIR";
pub const ENV_WORKERS: &str = "NSFDE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ZeroNeutral,
    PointDelay,
    FadingAverage,
}

/// A matrix given either as a scalar multiple of the identity or as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn build(&self, rows: usize, cols: usize, key: &str) -> Result<Matrix<f64>, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(Matrix::scaled_identity(rows, cols, *s)),
            MatrixSpec::Rows(r) => {
                let m = Matrix::from_rows(r).map_err(|e| format!("{key}: {e}"))?;
                if m.rows() != rows || m.cols() != cols {
                    return Err(format!("{key}: expected {rows}×{cols}, got {}×{}", m.rows(), m.cols()));
                }
                Ok(m)
            }
        }
    }
}

/// `Σ₁`: a scalar `s` puts `s·x_j` on noise channel `j`; otherwise one
/// `d×d` matrix per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma1Spec {
    Diagonal(f64),
    Blocks(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialSpec {
    Constant { value: Vec<f64> },
    Table {
        knots: Vec<f64>,
        values: Vec<Vec<f64>>,
        /// Exponential tail rate; constant tail when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail_rate: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub trials: usize,
    pub slack: f64,
    /// Radius of the sampling ball.
    pub radius: f64,
    /// Declared `L_R` for the local monotonicity check; analytic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_r: Option<f64>,
    /// Mix in pairs that differ only at `θ = -τ` (point-delay models).
    pub spike: bool,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            trials: 10_000,
            slack: 1e-6,
            radius: 10.0,
            l_r: None,
            spike: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Number of leading paths written to the trajectory CSV; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSection {
    /// Resolutions compared pairwise in order; `[n, 2n]` when empty.
    pub levels: Vec<u32>,
    pub epsilons: Vec<f64>,
    /// Radii of the non-explosion scan as multiples of `‖ξ‖_r`; no scan
    /// when empty.
    pub radius_multipliers: Vec<f64>,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            epsilons: vec![0.01, 0.1],
            radius_multipliers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// `E‖ξ‖²_r`; `‖ξ‖²_r` of the deterministic initial data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_norm_sq: Option<f64>,
    /// Horizon of the growth report; skipped when below 8.
    pub growth_horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_paths: Option<usize>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            xi_norm_sq: None,
            growth_horizon: 16.0,
            growth_paths: None,
        }
    }
}

/// The full configuration. Optional keys are filled in by [`Config::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelKind,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "one_f")]
    pub r: f64,
    #[serde(default = "one_f")]
    pub tau: f64,
    #[serde(default)]
    pub kappa: f64,
    /// Kernel rate `λ > r` of the fading average; `2r` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default = "zero_matrix")]
    pub a: MatrixSpec,
    #[serde(default = "zero_matrix")]
    pub b: MatrixSpec,
    #[serde(default = "zero_matrix")]
    pub sigma0: MatrixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<Sigma1Spec>,
    /// Declared `L`; analytic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coercivity: Option<f64>,
    pub initial: InitialSpec,
    /// Steps per unit time; smallest power of two `≥ r/ln 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default = "one_f")]
    pub horizon: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_eps_fix")]
    pub eps_fix: f64,
    #[serde(default = "default_iter_cap")]
    pub iter_cap: usize,
    #[serde(default)]
    pub halt_on_stop: bool,
    /// `ε` of the growth report.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Output directory; a runtime setting, not echoed.
    #[serde(default = "default_out_dir", skip_serializing)]
    pub out_dir: PathBuf,
    /// Worker threads; a runtime setting, not echoed.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn zero_matrix() -> MatrixSpec {
    MatrixSpec::Scalar(0.0)
}
fn default_radius() -> f64 {
    100.0
}
fn default_paths() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-10
}
fn default_eps_fix() -> f64 {
    1e-12
}
fn default_iter_cap() -> usize {
    200
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Flag-level overrides, applied after the file and the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub n: Option<u32>,
    /// `key=value` pairs; `section.key` reaches into a section and values
    /// are TOML literals (bare words fall back to strings).
    pub set: Vec<String>,
}

/// Everything a subcommand needs, built once from a validated config.
pub struct Setup {
    pub config: Config,
    pub model: LinearNeutralModel64,
    pub init: Arc<InitialData64>,
    pub xi_norm: f64,
    pub run: RunConfig64,
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_set(table: &mut toml::Table, pair: &str) -> Result<(), String> {
    let (key, value) = pair
        .split_once('=')
        .ok_or_else(|| format!("--set expects key=value, got `{pair}`"))?;
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let leaf = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| format!("empty key in `{pair}`"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{p}` is not a section"))?;
    }
    cur.insert(leaf.to_string(), parse_literal(value.trim()));
    Ok(())
}

impl Config {
    /// Reads `path` (if any), then applies environment and flag overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, String> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?
                .parse::<toml::Table>()
                .map_err(|e| format!("{}: {e}", p.display()))?,
            None => toml::Table::new(),
        };
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            table.insert("out_dir".into(), toml::Value::String(dir));
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            let w: i64 = w.trim().parse().map_err(|_| format!("{ENV_WORKERS} must be an integer, got `{w}`"))?;
            table.insert("workers".into(), toml::Value::Integer(w));
        }
        for pair in &overrides.set {
            apply_set(&mut table, pair)?;
        }
        let mut cfg: Config = table.try_into().map_err(|e: toml::de::Error| format!("config: {e}"))?;
        if let Some(d) = &overrides.out_dir {
            cfg.out_dir = d.clone();
        }
        if overrides.workers.is_some() {
            cfg.workers = overrides.workers;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(p) = overrides.paths {
            cfg.paths = p;
        }
        if overrides.n.is_some() {
            cfg.n = overrides.n;
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// Fills defaults, validates every constraint and builds the model.
    pub fn resolve(mut self) -> Result<Setup, String> {
        if self.d == 0 || self.m == 0 {
            return Err("d and m must be positive".into());
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(format!("r: must be positive, got {}", self.r));
        }
        let n = *self.n.get_or_insert_with(|| RunConfig64::min_resolution(self.r).next_power_of_two());
        if (n as f64) * std::f64::consts::LN_2 < self.r * (1.0 - 1e-12) {
            return Err(format!(
                "n: {n} violates n ≥ r/ln 2 = {:.6} (needed for e^(r/n) ≤ 2)",
                self.r / std::f64::consts::LN_2
            ));
        }
        if self.paths == 0 {
            return Err("paths: must be at least 1".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(format!("horizon: must be positive, got {}", self.horizon));
        }
        if !(self.tol > 0.0 && self.eps_fix > 0.0) || self.iter_cap == 0 {
            return Err("tol, eps_fix and iter_cap must be positive".into());
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon: must be positive, got {}", self.epsilon));
        }
        if self.workers == Some(0) {
            return Err("workers: must be at least 1".into());
        }
        let offset = self.offset.get_or_insert_with(|| vec![0.0; self.d]).clone();
        if self.model == ModelKind::FadingAverage && self.kernel_rate.is_none() {
            self.kernel_rate = Some(2.0 * self.r);
        }
        let model = self.build_model(offset)?;
        let init = Arc::new(self.build_initial()?);
        let xi_norm = HistoryPath64::new(init.clone(), self.tol)
            .map_err(|e| format!("initial: {e}"))?
            .grid_norm(0);
        if !(self.radius > 3.0 * xi_norm) {
            return Err(format!(
                "radius: R = {} must exceed 3‖ξ‖_r = {} so the stopping times start after 0",
                self.radius,
                3.0 * xi_norm
            ));
        }
        self.validate_sections(n, xi_norm)?;
        let run = RunConfig64 {
            n,
            horizon: self.horizon,
            radius: self.radius,
            norm_tol: self.tol,
            eps_fix: self.eps_fix,
            iter_cap: self.iter_cap,
            halt_on_stop: self.halt_on_stop,
        };
        Ok(Setup {
            config: self,
            model,
            init,
            xi_norm,
            run,
        })
    }

    fn validate_sections(&mut self, n: u32, xi_norm: f64) -> Result<(), String> {
        let c = &self.check;
        if c.trials == 0 || !(c.slack >= 0.0) || !(c.radius > 0.0) {
            return Err("check: trials and radius must be positive, slack non-negative".into());
        }
        if self.converge.levels.is_empty() {
            self.converge.levels = vec![n, 2 * n];
        }
        let min = RunConfig64::min_resolution(self.r);
        if let Some(&bad) = self.converge.levels.iter().find(|&&l| l < min) {
            return Err(format!("converge.levels: {bad} violates n ≥ r/ln 2"));
        }
        if self.converge.levels.len() < 2 {
            return Err("converge.levels: need at least two resolutions".into());
        }
        let mults = &self.converge.radius_multipliers;
        if mults.windows(2).any(|w| w[1] <= w[0]) {
            return Err("converge.radius_multipliers: must be increasing".into());
        }
        if let Some(&m) = mults.first() {
            if !(m * xi_norm > 3.0 * xi_norm) || xi_norm == 0.0 {
                return Err("converge.radius_multipliers: every radius must exceed 3‖ξ‖_r".into());
            }
        }
        if let Some(x) = self.bounds.xi_norm_sq {
            if !(x >= 0.0) {
                return Err("bounds.xi_norm_sq: must be non-negative".into());
            }
        }
        Ok(())
    }

    fn build_model(&self, offset: Vec<f64>) -> Result<LinearNeutralModel64, String> {
        let (d, m) = (self.d, self.m);
        let mut p = LinearParams::zeros(d, m, self.r);
        p.tau = self.tau;
        p.offset = offset;
        p.a = self.a.build(d, d, "a")?;
        p.b_delay = self.b.build(d, d, "b")?;
        p.sigma0 = self.sigma0.build(d, m, "sigma0")?;
        p.sigma1 = match &self.sigma1 {
            None => Vec::new(),
            Some(Sigma1Spec::Diagonal(s)) => LinearParams::diagonal_multiplicative(d, m, *s),
            Some(Sigma1Spec::Blocks(blocks)) => blocks
                .iter()
                .map(|rows| MatrixSpec::Rows(rows.clone()).build(d, d, "sigma1"))
                .collect::<Result<_, _>>()?,
        };
        p.coercivity = self.coercivity;
        p.neutral = match self.model {
            ModelKind::ZeroNeutral => NeutralTerm::Zero,
            ModelKind::PointDelay => NeutralTerm::PointDelay { kappa: self.kappa },
            ModelKind::FadingAverage => NeutralTerm::FadingAverage {
                kappa: self.kappa,
                rate: self.kernel_rate.unwrap_or(2.0 * self.r),
            },
        };
        LinearNeutralModel64::new(p).map_err(|e| format!("model: {e}"))
    }

    fn build_initial(&self) -> Result<InitialData64, String> {
        let built = match &self.initial {
            InitialSpec::Constant { value } => InitialData64::constant(value.clone(), self.r),
            InitialSpec::Table {
                knots,
                values,
                tail_rate,
            } => {
                let tail = match tail_rate {
                    Some(rate) => TailRule::Exponential { rate: *rate },
                    None => TailRule::Constant,
                };
                InitialData64::table(knots.clone(), values.clone(), tail, self.r)
            }
        };
        let init = built.map_err(|e| format!("initial: {e}"))?;
        if init.dim() != self.d {
            return Err(format!("initial: dimension {} does not match d = {}", init.dim(), self.d));
        }
        Ok(init)
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
model = "point_delay"
kappa = 0.1
a = -1.0
initial = { kind = "constant", value = [1.0] }
"#;

    #[test]
    fn default_resolution_is_power_of_two() {
        let s = Config::from_toml(BASE).unwrap().resolve().unwrap();
        assert_eq!(s.run.n, 2);
        let mut c = Config::from_toml(BASE).unwrap();
        c.r = 3.0;
        c.tau = 0.1;
        c.initial = InitialSpec::Constant { value: vec![1.0] };
        assert_eq!(c.resolve().unwrap().run.n, 8);
    }

    #[test]
    fn small_radius_names_the_constraint() {
        let mut c = Config::from_toml(BASE).unwrap();
        c.radius = 3.0;
        let err = c.resolve().err().unwrap();
        assert!(err.starts_with("radius:") && err.contains("3‖ξ‖_r"), "{err}");
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let mut c = Config::from_toml(BASE).unwrap();
        c.r = 2.0;
        c.tau = 0.1;
        c.n = Some(2);
        assert!(c.resolve().err().unwrap().starts_with("n:"));
    }

    #[test]
    fn overrides_reach_sections_and_echo() {
        let dir = std::env::temp_dir().join(format!("nsfde-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, BASE).unwrap();
        let o = Overrides {
            seed: Some(42),
            set: vec!["converge.epsilons=[0.5]".into(), "paths=7".into()],
            ..Default::default()
        };
        let s = Config::load(Some(&path), &o).unwrap().resolve().unwrap();
        assert_eq!(s.config.seed, 42);
        assert_eq!(s.config.paths, 7);
        assert_eq!(s.config.converge.epsilons, vec![0.5]);
        let echoed = s.config.to_toml();
        assert!(echoed.contains("seed = 42"));
        let mut again = Config::from_toml(&echoed).unwrap();
        again.out_dir = s.config.out_dir.clone();
        assert_eq!(again, s.config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml(&format!("{BASE}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn expansive_point_delay_is_rejected() {
        let mut c = Config::from_toml(BASE).unwrap();
        c.kappa = 0.5;
        assert!(c.resolve().err().unwrap().starts_with("model:"));
    }
}
