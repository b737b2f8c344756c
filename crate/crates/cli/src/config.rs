//! Run settings: command-line flags layered over an optional `key = value`
//! file, layered over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use mctsteg_core::environment::{LinearModel, RemoteSpec};
use mctsteg_core::mcts::Budget;
use mctsteg_core::SchemeKind;

use crate::error::CliError;

/// Options shared by every subcommand. Each has a config-file key equal to
/// its long flag name without the leading dashes.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Manifest of cover images (one relative path per line).
    #[arg(long, value_name = "MANIFEST")]
    pub covers: Option<PathBuf>,
    /// Stego manifest(s), optionally labelled as `label=MANIFEST`.
    #[arg(long, value_name = "[LABEL=]MANIFEST")]
    pub stegos: Vec<String>,
    /// Output directory (or file, for train-env).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Relative payload: bits per pixel, or per nonzero coefficient for JPEG-domain input.
    #[arg(long)]
    pub payload: Option<f64>,
    /// Cost scaling factor applied by the search.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_searches: Option<usize>,
    /// Cover confidence at which a sublattice's search stops early.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// UCT exploration constant.
    #[arg(long)]
    pub uct_c: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// builtin:<model file> | exec:<command> | tcp:<host:port>
    #[arg(long, value_name = "SPEC")]
    pub env: Option<String>,
    /// spatial2x2 | jpegblock
    #[arg(long)]
    pub scheme: Option<String>,
    /// hill | file:<dir of <stem>.cost maps>
    #[arg(long)]
    pub cost: Option<String>,
    /// Baseline method: plain | cmd
    #[arg(long)]
    pub method: Option<String>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Builtin detector model used to compute P_E.
    #[arg(long, value_name = "FILE")]
    pub detector: Option<PathBuf>,
    /// Scaling factor for the CMD baseline.
    #[arg(long)]
    pub cmd_alpha: Option<f64>,
    /// Also search the first sublattice instead of embedding it unadjusted.
    #[arg(long)]
    pub adjust_first: Option<bool>,
    /// Number of images for gen-corpus.
    #[arg(long)]
    pub count: Option<usize>,
    /// Side length of generated images.
    #[arg(long)]
    pub size: Option<usize>,
    /// Training epochs for train-env.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvChoice {
    Builtin(PathBuf),
    Remote(RemoteSpec),
}

impl FromStr for EnvChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("builtin:") {
            Some(path) if !path.is_empty() => Ok(Self::Builtin(PathBuf::from(path))),
            Some(_) => Err("builtin environment needs a model path".into()),
            None => s.parse().map(Self::Remote),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostChoice {
    Hill,
    Files(PathBuf),
}

impl FromStr for CostChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "hill" {
            Ok(Self::Hill)
        } else if let Some(dir) = s.strip_prefix("file:") {
            Ok(Self::Files(PathBuf::from(dir)))
        } else {
            Err(format!("cost source must be hill or file:<dir>, got {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Plain,
    Cmd,
}

impl FromStr for BaselineMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Self::Plain),
            "cmd" => Ok(Self::Cmd),
            other => Err(format!("unknown method {other:?} (expected plain or cmd)")),
        }
    }
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Cmd => "cmd",
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub covers: Option<PathBuf>,
    pub stegos: Vec<String>,
    pub out: Option<PathBuf>,
    pub payload: f64,
    pub budget: Budget,
    pub seed: u64,
    pub env: Option<EnvChoice>,
    pub scheme: SchemeKind,
    pub cost: CostChoice,
    pub method: BaselineMethod,
    pub jobs: usize,
    pub detector: Option<PathBuf>,
    pub cmd_alpha: f64,
    pub adjust_first: bool,
    pub count: usize,
    pub size: usize,
    pub epochs: usize,
}

pub const DEFAULT_PAYLOAD: f64 = 0.4;
pub const DEFAULT_CMD_ALPHA: f64 = 9.0;

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("{}:{}: unknown key {key:?}", path.display(), n + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "covers", "stegos", "out", "payload", "alpha", "max-searches", "threshold", "uct-c", "seed", "env", "scheme",
    "cost", "method", "jobs", "detector", "cmd-alpha", "adjust-first", "count", "size", "epochs",
];

struct Layers<'a> {
    file: &'a BTreeMap<String, String>,
    base: &'a Path,
}

impl Layers<'_> {
    fn pick<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse().map(Some).map_err(|e| CliError::Config(format!("{key}: {e}"))),
            None => Ok(None),
        }
    }

    /// Paths from the file are relative to the file's directory.
    fn path(&self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.file.get(key).map(|p| self.base.join(p)))
    }
}

impl RunConfig {
    pub fn resolve(opts: Opts) -> Result<Self, CliError> {
        let file = match &opts.config {
            Some(p) => parse_file(p)?,
            None => BTreeMap::new(),
        };
        let base = opts.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("")).to_path_buf();
        let l = Layers { file: &file, base: &base };

        let defaults = Budget::default();
        let budget = Budget {
            max_searches: l.pick("max-searches", opts.max_searches)?.unwrap_or(defaults.max_searches),
            confidence_threshold: l.pick("threshold", opts.threshold)?.unwrap_or(defaults.confidence_threshold),
            exploration_c: l.pick("uct-c", opts.uct_c)?.unwrap_or(defaults.exploration_c),
            alpha: l.pick("alpha", opts.alpha)?.unwrap_or(defaults.alpha),
            ..defaults
        };
        budget.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let stegos = if opts.stegos.is_empty() {
            file.get("stegos").map(|s| s.split(',').map(|x| x.trim().to_string()).collect()).unwrap_or_default()
        } else {
            opts.stegos
        };
        let env_from_flag = opts.env.is_some();
        let env = l.pick::<EnvChoice>("env", opts.env.map(|s| s.parse()).transpose().map_err(CliError::Config)?)?;
        let env = match env {
            Some(EnvChoice::Builtin(p)) if !env_from_flag => Some(EnvChoice::Builtin(base.join(p))),
            other => other,
        };
        let cost_from_flag = opts.cost.is_some();
        let cost = l.pick::<CostChoice>("cost", opts.cost.map(|s| s.parse()).transpose().map_err(CliError::Config)?)?;
        let cost = match cost {
            Some(CostChoice::Files(p)) if !cost_from_flag => CostChoice::Files(base.join(p)),
            Some(c) => c,
            None => CostChoice::Hill,
        };

        let cfg = Self {
            covers: l.path("covers", opts.covers),
            stegos,
            out: l.path("out", opts.out),
            payload: l.pick("payload", opts.payload)?.unwrap_or(DEFAULT_PAYLOAD),
            budget,
            seed: l.pick("seed", opts.seed)?.unwrap_or(0),
            env,
            scheme: l
                .pick::<SchemeKind>("scheme", opts.scheme.map(|s| s.parse()).transpose().map_err(CliError::Config)?)?
                .unwrap_or(SchemeKind::Spatial2x2),
            cost,
            method: l
                .pick::<BaselineMethod>("method", opts.method.map(|s| s.parse()).transpose().map_err(CliError::Usage)?)?
                .unwrap_or(BaselineMethod::Plain),
            jobs: l.pick("jobs", opts.jobs)?.unwrap_or(1),
            detector: l.path("detector", opts.detector),
            cmd_alpha: l.pick("cmd-alpha", opts.cmd_alpha)?.unwrap_or(DEFAULT_CMD_ALPHA),
            adjust_first: l.pick("adjust-first", opts.adjust_first)?.unwrap_or(false),
            count: l.pick("count", opts.count)?.unwrap_or(100),
            size: l.pick("size", opts.size)?.unwrap_or(128),
            epochs: l.pick("epochs", opts.epochs)?.unwrap_or(60),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.payload >= 0.0 && self.payload.is_finite()) {
            return Err(CliError::Config(format!("payload must be a nonnegative number, got {}", self.payload)));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if !(self.cmd_alpha > 1.0) {
            return Err(CliError::Config(format!("cmd-alpha must exceed 1, got {}", self.cmd_alpha)));
        }
        if self.size < 16 {
            return Err(CliError::Config("size must be at least 16".into()));
        }
        if self.epochs == 0 {
            return Err(CliError::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn require_covers(&self) -> Result<&Path, CliError> {
        self.covers.as_deref().ok_or_else(|| CliError::Config("--covers is required".into()))
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Config("--out is required".into()))
    }

    pub fn require_env(&self) -> Result<&EnvChoice, CliError> {
        self.env.as_ref().ok_or_else(|| CliError::Config("--env is required".into()))
    }

    pub fn load_detector(&self) -> Result<Option<LinearModel>, CliError> {
        self.detector
            .as_ref()
            .map(|p| {
                LinearModel::load(p).map_err(|e| CliError::Config(format!("detector {}: {e}", p.display())))
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# run\nalpha = 2.0\nmax_searches = 7\nseed=5\ncovers = c.txt\n").unwrap();
        let cfg = RunConfig::resolve(Opts { config: Some(path.clone()), seed: Some(9), ..Opts::default() }).unwrap();
        assert_eq!(cfg.budget.alpha, 2.0);
        assert_eq!(cfg.budget.max_searches, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.budget.confidence_threshold, 0.98);
        assert_eq!(cfg.covers, Some(dir.path().join("c.txt")));
        assert_eq!(cfg.payload, DEFAULT_PAYLOAD);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::resolve(Opts { alpha: Some(1.0), ..Opts::default() }).is_err());
        assert!(RunConfig::resolve(Opts { threshold: Some(1.5), ..Opts::default() }).is_err());
        assert!(RunConfig::resolve(Opts { payload: Some(-0.1), ..Opts::default() }).is_err());
        assert!(RunConfig::resolve(Opts { jobs: Some(0), ..Opts::default() }).is_err());
        assert!(matches!(
            RunConfig::resolve(Opts { method: Some("stc".into()), ..Opts::default() }),
            Err(CliError::Usage(_))
        ));
        assert!(RunConfig::resolve(Opts { env: Some("builtin:".into()), ..Opts::default() }).is_err());
    }

    #[test]
    fn unknown_file_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "alpah = 2\n").unwrap();
        assert!(RunConfig::resolve(Opts { config: Some(path), ..Opts::default() }).is_err());
    }

    #[test]
    fn spec_strings() {
        assert_eq!("builtin:m.bin".parse(), Ok(EnvChoice::Builtin("m.bin".into())));
        assert_eq!("tcp:h:1".parse(), Ok(EnvChoice::Remote(RemoteSpec::Tcp("h:1".into()))));
        assert_eq!("file:costs".parse(), Ok(CostChoice::Files("costs".into())));
        assert!("sobel".parse::<CostChoice>().is_err());
    }
}
