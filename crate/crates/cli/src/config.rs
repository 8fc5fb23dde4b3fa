use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use deltapmp::fit::ingest_trajectories;
use deltapmp::reference::{demo_case, sample_reference, sample_reference_uniform, DemoCase, ReferenceProblem};
use deltapmp::{
    ControlBounds, ControlVector, Error, Label, RefineStrategy, Result, TimePartition, TrajectoryRecord,
    WeightPolicy,
};

/// Every config-file key, also accepted as a `--key value` flag.
#[derive(Debug, Default, Clone, Args)]
pub struct KeyArgs {
    /// Trajectory CSV path or built-in data set (example1, example2-case1..4)
    #[arg(long)]
    pub source: Option<String>,
    /// Horizon as `t0,t1`; defaults to the record's time span
    #[arg(long)]
    pub horizon: Option<String>,
    /// Stopping threshold on successive total times
    #[arg(long)]
    pub delta: Option<String>,
    /// Refinement strategy: double | increment
    #[arg(long)]
    pub strategy: Option<String>,
    /// Pieces in the first partition of the refinement loop
    #[arg(long = "initial-n")]
    pub initial_n: Option<String>,
    /// Maximum number of partitions solved
    #[arg(long = "max-refinements")]
    pub max_refinements: Option<String>,
    /// Lower control bounds, comma separated
    #[arg(long)]
    pub lower: Option<String>,
    /// Upper control bounds, comma separated
    #[arg(long)]
    pub upper: Option<String>,
    /// Integrator step for replaying schedules
    #[arg(long)]
    pub step: Option<String>,
    /// Knot placement: auto | uniform | samples
    #[arg(long)]
    pub knots: Option<String>,
    /// Pieces for `fit` and `solve`
    #[arg(long)]
    pub pieces: Option<String>,
    /// Piece weights in the Hamiltonian scores: uniform | span
    #[arg(long)]
    pub weights: Option<String>,
    /// Constant control for built-in data sets
    #[arg(long)]
    pub control: Option<String>,
    /// Sample built-in data at this many uniform times instead of checkpoints
    #[arg(long)]
    pub samples: Option<String>,
    /// Trajectory id to use from a CSV source
    #[arg(long)]
    pub trajectory: Option<String>,
    /// Accept negative-labeled trajectories
    #[arg(long = "allow-negative")]
    pub allow_negative: Option<String>,
}

impl KeyArgs {
    fn pairs(&self) -> [(&'static str, &Option<String>); 16] {
        [
            ("source", &self.source),
            ("horizon", &self.horizon),
            ("delta", &self.delta),
            ("strategy", &self.strategy),
            ("initial-n", &self.initial_n),
            ("max-refinements", &self.max_refinements),
            ("lower", &self.lower),
            ("upper", &self.upper),
            ("step", &self.step),
            ("knots", &self.knots),
            ("pieces", &self.pieces),
            ("weights", &self.weights),
            ("control", &self.control),
            ("samples", &self.samples),
            ("trajectory", &self.trajectory),
            ("allow-negative", &self.allow_negative),
        ]
    }

    fn known(key: &str) -> bool {
        KeyArgs::default().pairs().iter().any(|(k, _)| *k == key)
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !KeyArgs::known(&key) {
            return Err(Error::InvalidInput(format!("config line {}: unknown key '{key}'", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotMode {
    Auto,
    Uniform,
    Samples,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Builtin(&'static DemoCase),
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: Source,
    pub horizon: Option<(f64, f64)>,
    pub delta: f64,
    pub strategy: RefineStrategy,
    pub initial_n: usize,
    pub max_refinements: usize,
    pub bounds: Option<ControlBounds>,
    pub step: f64,
    pub knots: KnotMode,
    pub pieces: Option<usize>,
    pub weights: WeightPolicy,
    pub control: Option<f64>,
    pub samples: Option<usize>,
    pub trajectory: Option<String>,
    pub allow_negative: bool,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

impl RunConfig {
    /// Merges the config file (if any) with flag overrides.
    pub fn load(path: Option<&Path>, flags: &KeyArgs) -> Result<Self> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", p.display())))?;
                parse_config_file(&text)?
            }
            None => BTreeMap::new(),
        };
        for (key, value) in flags.pairs() {
            if let Some(v) = value {
                map.insert(key.to_string(), v.clone());
            }
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let source = match get("source") {
            None => return Err(Error::InvalidInput("no source given (use --source or a config file)".into())),
            Some(s) => match demo_case(s) {
                Some(case) => Source::Builtin(case),
                None => {
                    let path = PathBuf::from(s);
                    if !path.is_file() {
                        return Err(Error::InvalidInput(format!(
                            "source '{s}' is neither a built-in data set nor a readable file"
                        )));
                    }
                    Source::Csv(path)
                }
            },
        };
        let horizon = get("horizon")
            .map(|v| {
                let h = parse_list("horizon", v)?;
                match h[..] {
                    [t0, t1] if t0 < t1 => Ok((t0, t1)),
                    _ => Err(Error::InvalidInput(format!("horizon must be 't0,t1' with t0 < t1, got '{v}'"))),
                }
            })
            .transpose()?;
        let bounds = match (get("lower"), get("upper")) {
            (None, None) => None,
            (Some(lo), Some(hi)) => Some(ControlBounds::new(parse_list("lower", lo)?, parse_list("upper", hi)?)?),
            _ => return Err(Error::InvalidInput("lower and upper must be given together".into())),
        };
        let knots = match get("knots").unwrap_or("auto") {
            "auto" => KnotMode::Auto,
            "uniform" => KnotMode::Uniform,
            "samples" => KnotMode::Samples,
            other => {
                return Err(Error::InvalidInput(format!(
                    "knots must be auto, uniform or samples, got '{other}'"
                )))
            }
        };
        let allow_negative = match get("allow-negative").unwrap_or("false") {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(Error::InvalidInput(format!("allow-negative: expected a boolean, got '{other}'"))),
        };
        let positive = |key: &str, v: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidInput(format!("{key} must be positive, got {v}")))
            }
        };
        let count = |key: &str, v: usize| -> Result<usize> {
            if v > 0 {
                Ok(v)
            } else {
                Err(Error::InvalidInput(format!("{key} must be at least 1")))
            }
        };
        Ok(Self {
            source,
            horizon,
            delta: positive("delta", get("delta").map(|v| parse("delta", v)).transpose()?.unwrap_or(0.01))?,
            strategy: get("strategy").unwrap_or("double").parse()?,
            initial_n: count(
                "initial-n",
                get("initial-n").map(|v| parse("initial-n", v)).transpose()?.unwrap_or(2),
            )?,
            max_refinements: count(
                "max-refinements",
                get("max-refinements").map(|v| parse("max-refinements", v)).transpose()?.unwrap_or(8),
            )?,
            bounds,
            step: positive("step", get("step").map(|v| parse("step", v)).transpose()?.unwrap_or(1e-4))?,
            knots,
            pieces: get("pieces").map(|v| parse("pieces", v).and_then(|n| count("pieces", n))).transpose()?,
            weights: get("weights").unwrap_or("uniform").parse()?,
            control: get("control").map(|v| parse("control", v)).transpose()?,
            samples: get("samples").map(|v| parse("samples", v)).transpose()?,
            trajectory: get("trajectory").map(str::to_string),
            allow_negative,
        })
    }

    pub fn record(&self) -> Result<TrajectoryRecord> {
        match &self.source {
            Source::Builtin(case) => {
                let problem = ReferenceProblem::example1();
                let u = ControlVector::scalar(self.control.unwrap_or(case.control));
                match self.samples {
                    Some(n) => sample_reference_uniform(&problem, &u, n),
                    None => sample_reference(&problem, &u, case.checkpoints),
                }
            }
            Source::Csv(path) => {
                let records = ingest_trajectories(path)?;
                let found = match &self.trajectory {
                    Some(id) => records.into_iter().find(|r| r.id() == id),
                    None => records
                        .into_iter()
                        .find(|r| self.allow_negative || r.label() == Label::Positive),
                };
                found.ok_or_else(|| Error::InvalidInput(format!("no usable trajectory in {}", path.display())))
            }
        }
    }

    pub fn bounds(&self, record: &TrajectoryRecord) -> ControlBounds {
        match (&self.bounds, &self.source) {
            (Some(b), _) => b.clone(),
            (None, Source::Builtin(_)) => ReferenceProblem::example1().bounds,
            (None, Source::Csv(_)) => ControlBounds::unit(record.control_dim()),
        }
    }

    /// Pieces used by single-partition commands.
    pub fn single_pieces(&self, record: &TrajectoryRecord) -> usize {
        let intervals = record.samples().len() - 1;
        self.pieces
            .unwrap_or(if intervals <= 16 { intervals } else { self.initial_n })
    }

    pub fn partition(&self, record: &TrajectoryRecord, pieces: usize) -> Result<TimePartition> {
        let intervals = record.samples().len() - 1;
        let on_samples = match self.knots {
            KnotMode::Samples => {
                if self.horizon.is_some() {
                    return Err(Error::InvalidInput("knots = samples cannot be combined with a horizon".into()));
                }
                if !intervals.is_multiple_of(pieces) {
                    return Err(Error::InvalidInput(format!(
                        "{pieces} pieces do not divide the {intervals} sample intervals"
                    )));
                }
                true
            }
            KnotMode::Auto => self.horizon.is_none() && intervals.is_multiple_of(pieces),
            KnotMode::Uniform => false,
        };
        if on_samples {
            let stride = intervals / pieces;
            TimePartition::new(1, (0..=pieces).map(|k| record.samples()[k * stride].t).collect())
        } else {
            let (t0, t1) = self.horizon.unwrap_or((record.t_first(), record.t_last()));
            TimePartition::uniform(t0, t1, pieces)
        }
    }
}
