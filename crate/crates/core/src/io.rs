//! Run configuration, CSV output, and the run manifest.
//!
//! The configuration is one JSON document with optional sections `measure`,
//! `factor`, `grid`, `solver`, `sim`, `converge`, and `figures`. Every field
//! has a default; the manifest written next to each output records the
//! configuration with all defaults filled in, and can be passed back as
//! `--config` to repeat the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::lab::{figure_sweep, lln_experiment, LabError, LlnExperiment, SweepSpec};
use crate::limit::{solve_limit, LimitError, SolverConfig};
use crate::model::{
    product_measure, validate_measure, DiscreteTypeMeasure, FirmType, ModelError,
    SystematicFactorConfig, TimeGrid, Trajectory, TypeAtom, DEFAULT_CAP,
};
use crate::sim::{run_replications, Assignment, SimConfig, SimError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("CONFIG_PARSE: {0}")]
    ConfigParse(String),
    #[error("VALIDATION: {0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Simulation(String),
    #[error("IO: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse(_) | CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Simulation(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<LimitError> for CliError {
    fn from(e: LimitError) -> Self {
        match e {
            LimitError::Model(m) => m.into(),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFiniteState { .. } => CliError::Simulation(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Limit(l) => l.into(),
            LabError::Sim(s) => s.into(),
            LabError::Model(m) => m.into(),
            LabError::Invalid(msg) => CliError::Validation(msg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedType {
    #[serde(flatten)]
    pub firm_type: FirmType,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedInit {
    pub lambda_init: f64,
    pub weight: f64,
}

/// Either explicit joint atoms or a product of a type law and an
/// initial-intensity law. Defaults to the single-type contagion case
/// σ = 0.9, α = 4, λ̄ = 0.5, λ0 = 0.5, β^C = 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSection {
    pub cap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<TypeAtom>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<WeightedType>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inits: Option<Vec<WeightedInit>>,
}

impl Default for MeasureSection {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            atoms: None,
            types: None,
            inits: None,
        }
    }
}

pub fn default_atoms() -> Vec<TypeAtom> {
    vec![TypeAtom {
        firm_type: FirmType::new(4.0, 0.5, 0.9, 2.0, 0.0),
        lambda_init: 0.5,
        weight: 1.0,
    }]
}

impl MeasureSection {
    fn resolve(&self) -> Result<DiscreteTypeMeasure, CliError> {
        match (&self.types, &self.inits) {
            (Some(types), Some(inits)) => {
                let t: Vec<(FirmType, f64)> =
                    types.iter().map(|x| (x.firm_type, x.weight)).collect();
                let i: Vec<(f64, f64)> = inits.iter().map(|x| (x.lambda_init, x.weight)).collect();
                Ok(product_measure(&t, &i)?)
            }
            (None, None) => Ok(DiscreteTypeMeasure::new(
                self.atoms.clone().unwrap_or_else(default_atoms),
            )),
            _ => Err(CliError::ConfigParse(
                "measure.types and measure.inits must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_firms: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub assignment: Assignment,
    pub record_moments: Vec<u32>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            n_firms: 1000,
            n_reps: 20,
            seed: 0,
            assignment: Assignment::Proportional,
            record_moments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub n_values: Vec<usize>,
    pub n_reps: usize,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            n_values: vec![100, 1000, 10_000],
            n_reps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiguresSection {
    pub grid: TimeGrid,
}

impl Default for FiguresSection {
    fn default() -> Self {
        Self {
            grid: TimeGrid::new(2.0, 2000).expect("valid default grid"),
        }
    }
}

fn default_grid() -> TimeGrid {
    TimeGrid::new(1.0, 1000).expect("valid default grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub measure: MeasureSection,
    pub factor: SystematicFactorConfig,
    pub grid: TimeGrid,
    pub solver: SolverConfig,
    pub sim: SimSection,
    pub converge: ConvergeSection,
    pub figures: FiguresSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            measure: MeasureSection::default(),
            factor: SystematicFactorConfig::default(),
            grid: default_grid(),
            solver: SolverConfig::default(),
            sim: SimSection::default(),
            converge: ConvergeSection::default(),
            figures: FiguresSection::default(),
        }
    }
}

/// Configuration with the measure resolved to explicit atoms and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub measure: DiscreteTypeMeasure,
}

impl ResolvedConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_firms: self.config.sim.n_firms,
            measure: self.measure.clone(),
            factor: self.config.factor,
            grid: self.config.grid,
            seed: self.config.sim.seed,
            assignment: self.config.sim.assignment,
            record_moments: self.config.sim.record_moments.clone(),
        }
    }
}

fn parse_value(text: &str, origin: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::ConfigParse(format!("{origin}: {e}")))
}

fn from_value(v: Value, origin: &str) -> Result<RunConfig, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::ConfigParse(format!("{origin}: {e}")))
}

/// Sets `path` (dot-separated keys, numeric segments index arrays) in `root`.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::ConfigParse(format!("override '{assignment}' is not key=value"))
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    CliError::ConfigParse(format!(
                        "override '{key}': '{seg}' is not an array index"
                    ))
                })?;
                items.get_mut(idx).ok_or_else(|| {
                    CliError::ConfigParse(format!("override '{key}': index {idx} out of range"))
                })?
            }
            Value::Object(map) => map.entry(seg.to_string()).or_insert(if last {
                Value::Null
            } else {
                Value::Object(Default::default())
            }),
            _ => {
                return Err(CliError::ConfigParse(format!(
                    "override '{key}': '{seg}' is not inside an object or array"
                )))
            }
        };
    }
    *node = value;
    Ok(())
}

/// Reads a config file or a previously written manifest.
pub fn read_config_value(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::ConfigParse(format!("cannot read config {}: {e}", path.display()))
    })?;
    let origin = path.display().to_string();
    let value = parse_value(&text, &origin)?;
    match value {
        Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => {
            Ok(map.remove("config").expect("checked key"))
        }
        Value::Object(_) => Ok(value),
        _ => Err(CliError::ConfigParse(format!(
            "{origin}: top level must be an object"
        ))),
    }
}

/// Builds the run configuration: defaults, then the file, then `--set`
/// overrides, then `--seed`.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ResolvedConfig, CliError> {
    let base = match path {
        Some(p) => read_config_value(p)?,
        None => json!({}),
    };
    let origin = path.map_or("defaults".to_string(), |p| p.display().to_string());
    let mut config = from_value(base, &origin)?;
    materialize_measure(&mut config)?;
    if !overrides.is_empty() {
        let mut value = serde_json::to_value(&config).expect("config serializes");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        config = from_value(value, "--set overrides")?;
        materialize_measure(&mut config)?;
    }
    if let Some(s) = seed {
        config.sim.seed = s;
    }
    resolve(config)
}

fn materialize_measure(config: &mut RunConfig) -> Result<(), CliError> {
    let m = config.measure.resolve()?;
    config.measure.atoms = Some(m.atoms);
    config.measure.types = None;
    config.measure.inits = None;
    Ok(())
}

pub fn resolve(config: RunConfig) -> Result<ResolvedConfig, CliError> {
    let measure = validate_measure(config.measure.resolve()?, config.measure.cap)?;
    config.factor.validate()?;
    config.solver.validate()?;
    let resolved = ResolvedConfig { config, measure };
    resolved.sim_config().validate()?;
    Ok(resolved)
}

/// Writes CSV text built row by row.
struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &str) -> Self {
        let mut text = String::with_capacity(1 << 16);
        text.push_str(header);
        text.push('\n');
        Self { text }
    }

    fn row(&mut self, fields: &[&dyn std::fmt::Display]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            write!(self.text, "{f}").expect("writing to a String");
        }
        self.text.push('\n');
    }

    fn save(self, path: &Path) -> Result<PathBuf, CliError> {
        fs::write(path, self.text).map_err(|e| CliError::io(path, e))?;
        Ok(path.to_path_buf())
    }
}

/// Files written by one command.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_manifest(
    out: &Path,
    command: &str,
    resolved: &ResolvedConfig,
    files: &[PathBuf],
    metadata: Value,
    started: Instant,
) -> Result<PathBuf, CliError> {
    let names: Vec<String> = files
        .iter()
        .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = json!({
        "command": command,
        "tool_version": TOOL_VERSION,
        "seed": resolved.config.sim.seed,
        "grid": resolved.config.grid,
        "config": resolved.config,
        "outputs": names,
        "metadata": metadata,
        "timing": { "seconds": started.elapsed().as_secs_f64() },
    });
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// `t,F,Q,b_0,...` on the configured grid.
pub fn cli_limit(resolved: &ResolvedConfig, out: &Path) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    ensure_dir(out)?;
    let cfg = &resolved.config;
    let limit = solve_limit(&resolved.measure, &cfg.grid, &cfg.solver)?;
    let mut header = String::from("t,F,Q");
    for i in 0..limit.riccati.len() {
        write!(header, ",b_{i}").expect("writing to a String");
    }
    let mut csv = Csv::new(&header);
    let (f, q) = (limit.f.values(), limit.q.values());
    for (k, t) in cfg.grid.times().enumerate() {
        let mut row: Vec<&dyn std::fmt::Display> = vec![&t, &f[k], &q[k]];
        for r in &limit.riccati {
            row.push(&r.b.values()[k]);
        }
        csv.row(&row);
    }
    let files = vec![csv.save(&out.join("limit.csv"))?];
    let meta = json!({
        "iterations": limit.iterations,
        "residual": limit.residual,
        "residual_history": limit.residual_history,
    });
    let manifest = write_manifest(out, "limit", resolved, &files, meta, started)?;
    Ok(RunOutput { files, manifest })
}

/// Per-replication `t,rep,L` and the pointwise aggregate `t,mean,q10,q90`.
pub fn cli_simulate(resolved: &ResolvedConfig, out: &Path) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    ensure_dir(out)?;
    let cfg = resolved.sim_config();
    let reps = run_replications(&cfg, resolved.config.sim.n_reps)?;
    let mut paths = Csv::new("t,rep,L");
    for r in &reps.results {
        for (t, l) in cfg.grid.times().zip(r.l_path.values()) {
            paths.row(&[&t, &r.replication, l]);
        }
    }
    let mut agg = Csv::new("t,mean,q10,q90");
    let a = &reps.aggregate;
    for (k, t) in cfg.grid.times().enumerate() {
        agg.row(&[
            &t,
            &a.mean.values()[k],
            &a.q10.values()[k],
            &a.q90.values()[k],
        ]);
    }
    let mut files = vec![
        paths.save(&out.join("paths.csv"))?,
        agg.save(&out.join("aggregate.csv"))?,
    ];
    if !cfg.record_moments.is_empty() {
        let mut header = String::from("t,rep");
        for p in &cfg.record_moments {
            write!(header, ",m{p}").expect("writing to a String");
        }
        let mut moments = Csv::new(&header);
        for r in &reps.results {
            let m = r
                .intensity_moment_paths
                .as_ref()
                .expect("moments were requested");
            for (k, t) in cfg.grid.times().enumerate() {
                let mut row: Vec<&dyn std::fmt::Display> = vec![&t, &r.replication];
                for path in &m.paths {
                    row.push(&path.values()[k]);
                }
                moments.row(&row);
            }
        }
        files.push(moments.save(&out.join("moments.csv"))?);
    }
    let meta = json!({
        "n_firms": cfg.n_firms,
        "n_reps": reps.results.len(),
        "eps": cfg.factor.eps_schedule.eps(cfg.n_firms),
    });
    let manifest = write_manifest(out, "simulate", resolved, &files, meta, started)?;
    Ok(RunOutput { files, manifest })
}

/// `N,reps,mean,median,q10,q90,seconds`, one row per portfolio size.
pub fn cli_converge(resolved: &ResolvedConfig, out: &Path) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    ensure_dir(out)?;
    let cfg = &resolved.config;
    let exp = LlnExperiment {
        measure: resolved.measure.clone(),
        factor: cfg.factor,
        grid: cfg.grid,
        n_values: cfg.converge.n_values.clone(),
        n_reps: cfg.converge.n_reps,
        seed: cfg.sim.seed,
        solver: cfg.solver,
        assignment: cfg.sim.assignment,
    };
    let report = lln_experiment(&exp)?;
    let mut csv = Csv::new("N,reps,mean,median,q10,q90,seconds");
    for c in &report.cells {
        let s = &c.summary;
        csv.row(&[
            &c.n_firms, &c.reps, &s.mean, &s.median, &s.q10, &s.q90, &c.seconds,
        ]);
    }
    let files = vec![csv.save(&out.join("convergence.csv"))?];
    let meta = json!({
        "limit_iterations": report.limit_iterations,
        "limit_residual": report.limit_residual,
        "grid_sup_gap": report.grid_sup_gap,
        "median_increases_at": report.median_increases,
        "cell_seeds": report.cells.iter().map(|c| c.seed).collect::<Vec<_>>(),
    });
    let manifest = write_manifest(out, "converge", resolved, &files, meta, started)?;
    Ok(RunOutput { files, manifest })
}

/// The three limit families in long format `t,param_value,F`.
pub fn cli_figures(resolved: &ResolvedConfig, out: &Path) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    ensure_dir(out)?;
    let grid = resolved.config.figures.grid;
    let families = [
        ("fig1_betaC.csv", SweepSpec::contagion_family(grid)),
        ("fig2_alpha.csv", SweepSpec::reversion_speed_family(grid)),
        (
            "fig3_lambdabar.csv",
            SweepSpec::reversion_level_family(grid),
        ),
    ];
    let mut files = Vec::new();
    let mut meta = serde_json::Map::new();
    for (name, mut spec) in families {
        spec.solver = resolved.config.solver;
        let rows = figure_sweep(&spec)?;
        let mut csv = Csv::new("t,param_value,F");
        for row in &rows {
            write_family_rows(&mut csv, row.value, &row.solution.f);
        }
        meta.insert(
            name.to_string(),
            json!({
                "swept": spec.field.name(),
                "values": spec.values,
                "iterations": rows.iter().map(|r| r.solution.iterations).collect::<Vec<_>>(),
                "residuals": rows.iter().map(|r| r.solution.residual).collect::<Vec<_>>(),
            }),
        );
        files.push(csv.save(&out.join(name))?);
    }
    let manifest = write_manifest(
        out,
        "figures",
        resolved,
        &files,
        Value::Object(meta),
        started,
    )?;
    Ok(RunOutput { files, manifest })
}

fn write_family_rows(csv: &mut Csv, value: f64, f: &Trajectory) {
    for (t, fk) in f.grid().times().zip(f.values()) {
        csv.row(&[&t, &value, fk]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let mut v = json!({"sim": {"n_firms": 10}, "measure": {"atoms": [{"alpha": 1.0}]}});
        apply_override(&mut v, "sim.n_firms=25").unwrap();
        apply_override(&mut v, "measure.atoms.0.alpha=3.5").unwrap();
        apply_override(&mut v, "factor.eps_schedule=zero").unwrap();
        apply_override(&mut v, "grid.t_end=2").unwrap();
        assert_eq!(v["sim"]["n_firms"], 25);
        assert_eq!(v["measure"]["atoms"][0]["alpha"], 3.5);
        assert_eq!(v["factor"]["eps_schedule"], "zero");
        assert_eq!(v["grid"]["t_end"], 2);
        assert!(apply_override(&mut v, "sim.n_firms").is_err());
        assert!(apply_override(&mut v, "measure.atoms.5.alpha=1").is_err());
        assert!(apply_override(&mut v, "sim.n_firms.x=1").is_err());
    }

    #[test]
    fn defaults_resolve_to_contagion_case() {
        let r = load_config(None, &[], None).unwrap();
        assert_eq!(r.measure.atoms, default_atoms());
        assert_eq!(r.config.grid.n_steps(), 1000);
        assert_eq!(r.config.solver, SolverConfig::default());
        let r = load_config(None, &["measure.atoms.0.beta_c=0".into()], Some(9)).unwrap();
        assert_eq!(r.measure.atoms[0].firm_type.beta_c, 0.0);
        assert_eq!(r.config.sim.seed, 9);
    }

    #[test]
    fn product_sections_materialize_to_atoms() {
        let v = json!({"measure": {
            "types": [
                {"alpha": 4.0, "lambda_bar": 0.5, "sigma": 0.9, "beta_c": 2.0, "weight": 0.3},
                {"alpha": 2.0, "lambda_bar": 0.25, "sigma": 0.9, "beta_c": 1.0, "weight": 0.7}
            ],
            "inits": [{"lambda_init": 0.5, "weight": 0.5}, {"lambda_init": 0.1, "weight": 0.5}]
        }});
        let mut cfg: RunConfig = serde_json::from_value(v).unwrap();
        materialize_measure(&mut cfg).unwrap();
        let atoms = cfg.measure.atoms.as_ref().unwrap();
        assert_eq!(atoms.len(), 4);
        assert!(cfg.measure.types.is_none());
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_errors_are_classified() {
        let bad_key = load_config(None, &["sim.n_frims=3".into()], None).unwrap_err();
        assert_eq!(bad_key.exit_code(), 2);
        assert!(matches!(bad_key, CliError::ConfigParse(_)));
        let invalid = load_config(None, &["measure.atoms.0.sigma=-0.1".into()], None).unwrap_err();
        assert!(matches!(invalid, CliError::Validation(ref m) if m.contains("NEGATIVE_PARAMETER")));
        let grid = load_config(None, &["grid.n_steps=0".into()], None).unwrap_err();
        assert_eq!(grid.exit_code(), 2);
        let half = load_config(None, &["measure.inits=[]".into()], None).unwrap_err();
        assert_eq!(half.exit_code(), 2);
    }

    #[test]
    fn error_exit_codes() {
        let solver: CliError = LimitError::NoConvergence {
            iterations: 1,
            residual: 1.0,
        }
        .into();
        assert_eq!(solver.exit_code(), 3);
        let sim: CliError = SimError::NonFiniteState { firm: 0, step: 0 }.into();
        assert_eq!(sim.exit_code(), 4);
        assert_eq!(CliError::Io("x".into()).exit_code(), 5);
    }
}
