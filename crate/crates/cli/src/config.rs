//! Run configuration.
//!
//! The file format is one `key = value` pair per line. Keys are dotted
//! (`utility.kind`, `grid.n`), values are JSON (`1.5`, `"cara"`, `[0, 0.5, 1]`)
//! and a bare word is read as a string. Blank lines and lines starting with
//! `#` are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use contractsolve_core::error::Error as CoreError;
use contractsolve_core::{
    Budget, Density, LossModel, MarginalTable, ProblemSpec, QuantileTable, UtilitySpec,
    WeightingSpec,
};
use serde_json::Value;

use crate::error::CliError;

pub const DEFAULT_GRID_N: usize = 2049;
pub const MIN_GRID_N: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Solve,
    Feasibility,
    OracleCheck,
    Envelope,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Feasibility => "feasibility",
            Mode::OracleCheck => "oracle-check",
            Mode::Envelope => "envelope",
            Mode::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        [
            Mode::Solve,
            Mode::Feasibility,
            Mode::OracleCheck,
            Mode::Envelope,
            Mode::Sweep,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or(())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub lambda: Option<f64>,
    pub grid_n: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Absent only in envelope mode.
    pub problem: Option<ProblemSpec>,
    pub n: usize,
    pub lambda: Option<f64>,
    pub out_dir: PathBuf,
    pub contract_points: usize,
    pub oracle_nodes: usize,
    pub oracle_levels: usize,
    pub envelope: Option<Vec<f64>>,
    pub sweep_lambdas: Vec<f64>,
}

impl RunConfig {
    pub fn problem(&self) -> &ProblemSpec {
        self.problem
            .as_ref()
            .expect("problem is parsed for every mode but envelope")
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("cannot read {}", path.display()),
        source,
    })?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut fields = Fields::new(parse_entries(text)?);

    let mode = match fields.string("mode")? {
        Some(s) => s
            .parse()
            .map_err(|_| invalid("mode", format!("unknown mode `{s}`")))?,
        None => Mode::Solve,
    };
    let mode = overrides.mode.unwrap_or(mode);

    let n = fields.count("grid.n")?;
    let n = overrides.grid_n.or(n).unwrap_or(DEFAULT_GRID_N);
    if n < MIN_GRID_N {
        return Err(invalid("grid.n >= 9", format!("got {n}")));
    }

    let lambda = fields.number("lambda")?;
    let lambda = overrides.lambda.or(lambda);
    if let Some(l) = lambda {
        if !(l > 0.0 && l.is_finite()) {
            return Err(invalid("lambda", "must be positive and finite"));
        }
    }

    let out_dir = fields.string("output.dir")?.map(PathBuf::from);
    let out_dir = overrides
        .out
        .clone()
        .or(out_dir)
        .unwrap_or_else(|| PathBuf::from("out"));

    let contract_points = fields.count("contract.points")?.unwrap_or(201);
    if contract_points < 2 {
        return Err(invalid("contract.points", "need at least 2 points"));
    }
    let oracle_nodes = fields.count("oracle.nodes")?.unwrap_or(9);
    let oracle_levels = fields.count("oracle.levels")?.unwrap_or(7);
    if oracle_nodes < 2 || oracle_levels == 0 {
        return Err(invalid("oracle.nodes", "need at least 2 nodes and 1 level"));
    }

    let envelope = fields.numbers("envelope.values")?;
    if mode == Mode::Envelope {
        match &envelope {
            None => return Err(invalid("envelope.values", "required in envelope mode")),
            Some(v) if v.len() < MIN_GRID_N => {
                return Err(invalid("envelope.values", "need at least 9 samples"))
            }
            _ => {}
        }
    }

    let sweep_lambdas = fields
        .numbers("sweep.lambdas")?
        .unwrap_or_else(|| (-4..=4).map(|k| 2f64.powi(k)).collect());
    if sweep_lambdas.is_empty() || sweep_lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(invalid(
            "sweep.lambdas",
            "must be a nonempty list of positive values",
        ));
    }

    let problem = if mode != Mode::Envelope || fields.has_prefix_of_problem() {
        Some(parse_problem(&mut fields)?)
    } else {
        None
    };

    fields.finish()?;
    Ok(RunConfig {
        mode,
        problem,
        n,
        lambda,
        out_dir,
        contract_points,
        oracle_nodes,
        oracle_levels,
        envelope,
        sweep_lambdas,
    })
}

fn parse_problem(f: &mut Fields) -> Result<ProblemSpec, CliError> {
    let beta = f.required_number("beta")?;
    let budget = match (f.number("varpi")?, f.number("premium")?) {
        (Some(v), None) => Budget::Direct(v),
        (None, Some(p)) => Budget::Premium(p),
        (None, None) => return Err(invalid("varpi", "give `varpi` or `premium`")),
        (Some(_), Some(_)) => return Err(invalid("varpi", "`varpi` and `premium` are exclusive")),
    };

    let utility = match f.required_string("utility.kind")?.as_str() {
        "cara" => UtilitySpec::cara(f.required_number("utility.alpha")?),
        "crra" => UtilitySpec::crra(f.required_number("utility.gamma")?),
        "log" => Ok(UtilitySpec::Log),
        "tabulated" => MarginalTable::new(
            f.required_numbers("utility.x")?,
            f.required_numbers("utility.marginal")?,
        )
        .map(UtilitySpec::Tabulated),
        other => return Err(invalid("utility.kind", format!("unknown kind `{other}`"))),
    }
    .map_err(|e| core_invalid(e, "utility"))?;

    let weighting = match f.string("weighting.kind")?.as_deref().unwrap_or("identity") {
        "identity" => WeightingSpec::Identity,
        "power" => WeightingSpec::Power {
            gamma: f.required_number("weighting.gamma")?,
        },
        "prelec" => WeightingSpec::Prelec {
            a: f.required_number("weighting.a")?,
            b: f.number("weighting.b")?.unwrap_or(1.0),
        },
        "tk" => WeightingSpec::TverskyKahneman {
            gamma: f.required_number("weighting.gamma")?,
        },
        other => return Err(invalid("weighting.kind", format!("unknown kind `{other}`"))),
    };

    let loss = match f.required_string("loss.kind")?.as_str() {
        "uniform" => LossModel::Uniform {
            b: f.required_number("loss.b")?,
        },
        "mass" => LossModel::MassAtZero {
            q: f.required_number("loss.q")?,
            b: f.required_number("loss.b")?,
        },
        "tabulated" => {
            QuantileTable::new(f.required_numbers("loss.p")?, f.required_numbers("loss.x")?)
                .map(LossModel::Tabulated)
                .map_err(|e| core_invalid(e, "loss"))?
        }
        other => return Err(invalid("loss.kind", format!("unknown kind `{other}`"))),
    };

    let density = match f.string("phi.kind")?.as_deref().unwrap_or("constant") {
        "constant" => Density::Constant(f.number("phi.value")?.unwrap_or(1.0)),
        "power" => Density::Power {
            scale: f.number("phi.scale")?.unwrap_or(1.0),
            exponent: f.required_number("phi.exponent")?,
        },
        "tabulated" => Density::Tabulated {
            t: f.required_numbers("phi.t")?,
            values: f.required_numbers("phi.values")?,
        },
        other => return Err(invalid("phi.kind", format!("unknown kind `{other}`"))),
    };

    let spec = ProblemSpec {
        beta,
        budget,
        density,
        utility,
        weighting,
        loss,
    };
    spec.validate().map_err(|e| core_invalid(e, "problem"))?;
    Ok(spec)
}

fn invalid(field: &str, detail: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.into(),
        detail: detail.into(),
    }
}

fn core_invalid(e: CoreError, fallback: &str) -> CliError {
    match e {
        CoreError::InvalidParameter(name) => invalid(&name, "invalid value"),
        other => invalid(fallback, other.to_string()),
    }
}

type Entries = BTreeMap<String, (usize, Value)>;

fn parse_entries(text: &str) -> Result<Entries, CliError> {
    let mut entries = Entries::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| CliError::Parse { line, message };
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| parse_err("expected `key = value`".into()))?;
        let key = key.trim();
        let valid_key = !key.is_empty()
            && key.split('.').all(|part| {
                !part.is_empty()
                    && part
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            });
        if !valid_key {
            return Err(parse_err(format!("malformed key `{key}`")));
        }
        let value = value.trim();
        let parsed = match serde_json::from_str::<Value>(value) {
            Ok(v) => v,
            Err(_) if is_bare_word(value) => Value::String(value.to_owned()),
            Err(e) => return Err(parse_err(format!("bad value for `{key}`: {e}"))),
        };
        if let Some((first, _)) = entries.insert(key.to_owned(), (line, parsed)) {
            return Err(parse_err(format!("`{key}` already set on line {first}")));
        }
    }
    Ok(entries)
}

fn is_bare_word(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Typed access to the entries; whatever is left over at the end is an error.
struct Fields {
    entries: Entries,
}

impl Fields {
    fn new(entries: Entries) -> Self {
        Self { entries }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn has_prefix_of_problem(&self) -> bool {
        self.entries.keys().any(|k| {
            ["beta", "varpi", "premium"].contains(&k.as_str())
                || ["utility.", "weighting.", "loss.", "phi."]
                    .iter()
                    .any(|p| k.starts_with(p))
        })
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => as_number(&v)
                .map(Some)
                .ok_or_else(|| invalid(key, "expected a finite number")),
        }
    }

    fn required_number(&mut self, key: &str) -> Result<f64, CliError> {
        self.number(key)?
            .ok_or_else(|| invalid(key, "required field is missing"))
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .and_then(|n| usize::try_from(n).ok())
                .map(Some)
                .ok_or_else(|| invalid(key, "expected a nonnegative integer")),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(invalid(key, "expected a string")),
        }
    }

    fn required_string(&mut self, key: &str) -> Result<String, CliError> {
        self.string(key)?
            .ok_or_else(|| invalid(key, "required field is missing"))
    }

    fn numbers(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(as_number)
                .collect::<Option<Vec<f64>>>()
                .map(Some)
                .ok_or_else(|| invalid(key, "expected an array of finite numbers")),
            Some(_) => Err(invalid(key, "expected an array of numbers")),
        }
    }

    fn required_numbers(&mut self, key: &str) -> Result<Vec<f64>, CliError> {
        self.numbers(key)?
            .ok_or_else(|| invalid(key, "required field is missing"))
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(invalid(
                &key,
                format!("unknown or unused key (line {line})"),
            )),
        }
    }
}

fn as_number(v: &Value) -> Option<f64> {
    v.as_f64().filter(|x| x.is_finite())
}
