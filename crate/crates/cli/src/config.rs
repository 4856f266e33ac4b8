//! Run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment. Relative paths in a
//! config file are resolved against the file's directory. Every key can be
//! overridden on the command line with `--key-name VALUE` (underscores become
//! dashes); flags win over the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use beam_core::asgraph::RelationshipFormat;
use beam_core::detector::DetectorConfig;
use beam_core::embedding::Hyperparams;

use crate::error::{CliError, Result};

macro_rules! overrides {
    ($($field:ident => $help:literal),* $(,)?) => {
        #[derive(Debug, Clone, Default, clap::Args)]
        #[command(next_help_heading = "Config overrides")]
        pub struct Overrides {
            $(#[arg(long, value_name = "VALUE", help = $help)] pub $field: Option<String>,)*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(if let Some(x) = &self.$field { v.push((stringify!($field), x.as_str())); })*
                v
            }
        }

        #[cfg(test)]
        pub const KEYS: &[&str] = &[$(stringify!($field)),*];
    };
}

overrides! {
    relationships => "AS relationship file",
    relationships_format => "caida (u|v|-1/0) or tsv (u<TAB>v<TAB>p2c)",
    route_usage => "per-link route counts, needed by W1/W2 noise",
    roa => "ROA snapshot, prefix,max_length,asn rows",
    org => "AS to organisation map, asn<TAB>org rows",
    replay => "announcement replay, JSONL",
    rib => "initial RIB snapshot, JSONL",
    model => "embedding model file",
    alarms => "alarm JSONL",
    metrics => "detection metrics JSON output",
    dim => "embedding dimension",
    epochs => "training epochs",
    batch_size => "training mini-batch size",
    learning_rate => "SGD learning rate",
    negatives => "negative samples per edge",
    alpha => "floor on each weight component; defaults to 1e-6 / dim",
    seed => "seed for training and noise injection",
    window_secs => "event window w in seconds",
    lookback_secs => "calibration history in seconds",
    default_th_d => "path-score threshold used until calibrated",
    default_th_v => "vantage-count threshold used until calibrated",
    th_d => "fixed path-score threshold, disables its calibration",
    th_v => "fixed vantage-count threshold, disables its calibration",
    collapse_prepend => "collapse AS prepending (true/false)",
    skew_secs => "tolerated timestamp reordering in the replay",
    strict_order => "fail when a replay record arrives too late (true/false)",
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub relationships: Option<PathBuf>,
    pub relationships_format: RelationshipFormat,
    pub route_usage: Option<PathBuf>,
    pub roa: Option<PathBuf>,
    pub org: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub rib: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub alarms: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub hyper: Hyperparams,
    alpha_set: bool,
    pub detector: DetectorConfig,
    pub skew_secs: u64,
    pub strict_order: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            relationships: None,
            relationships_format: RelationshipFormat::CaidaSerial,
            route_usage: None,
            roa: None,
            org: None,
            replay: None,
            rib: None,
            model: None,
            alarms: None,
            metrics: None,
            hyper: Hyperparams::default(),
            alpha_set: false,
            detector: DetectorConfig::default(),
            skew_secs: 0,
            strict_order: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key} = {value:?}: {e}")))
}

impl Config {
    /// Defaults, then the file (if any), then flag overrides.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Config> {
        let mut c = Config::default();
        if let Some(path) = file {
            if !path.is_file() {
                return Err(CliError::MissingFile(path.to_path_buf()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            c.apply_text(&text, path.parent())?;
        }
        for (k, v) in overrides.pairs() {
            c.set(k, v, None)?;
        }
        c.finish()?;
        Ok(c)
    }

    fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim(), base)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let path = || {
            let p = PathBuf::from(value);
            Some(match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            })
        };
        let bool_of = |v: &str| match v.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(CliError::Config(format!("{key} = {v:?}: expected true or false"))),
        };
        // `auto` (or empty) restores calibration
        let fixed = !(value.eq_ignore_ascii_case("auto") || value.is_empty());
        match key {
            "relationships" => self.relationships = path(),
            "relationships_format" => {
                self.relationships_format = match value.to_ascii_lowercase().as_str() {
                    "caida" => RelationshipFormat::CaidaSerial,
                    "tsv" => RelationshipFormat::Tsv,
                    _ => return Err(CliError::Config(format!("{key} = {value:?}: expected caida or tsv"))),
                }
            }
            "route_usage" => self.route_usage = path(),
            "roa" => self.roa = path(),
            "org" => self.org = path(),
            "replay" => self.replay = path(),
            "rib" => self.rib = path(),
            "model" => self.model = path(),
            "alarms" => self.alarms = path(),
            "metrics" => self.metrics = path(),
            "dim" => self.hyper.dim = parse(key, value)?,
            "epochs" => self.hyper.epochs = parse(key, value)?,
            "batch_size" => self.hyper.batch_size = parse(key, value)?,
            "learning_rate" => self.hyper.learning_rate = parse(key, value)?,
            "negatives" => self.hyper.negatives = parse(key, value)?,
            "alpha" => {
                self.hyper.alpha = parse(key, value)?;
                self.alpha_set = true;
            }
            "seed" => self.hyper.seed = parse(key, value)?,
            "window_secs" => self.detector.window_secs = parse(key, value)?,
            "lookback_secs" => self.detector.lookback_secs = parse(key, value)?,
            "default_th_d" => self.detector.default_th_d = parse(key, value)?,
            "default_th_v" => self.detector.default_th_v = parse(key, value)?,
            "th_d" => self.detector.th_d = if fixed { Some(parse(key, value)?) } else { None },
            "th_v" => self.detector.th_v = if fixed { Some(parse(key, value)?) } else { None },
            "collapse_prepend" => self.detector.collapse_prepend = bool_of(value)?,
            "skew_secs" => self.skew_secs = parse(key, value)?,
            "strict_order" => self.strict_order = bool_of(value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if !self.alpha_set && self.hyper.dim > 0 {
            self.hyper.alpha = 1e-6 / self.hyper.dim as f64;
        }
        self.hyper
            .validate()
            .map_err(|e| CliError::InvalidParameter(e.to_string()))?;
        let d = &self.detector;
        let bad = |m: &str| Err(CliError::InvalidParameter(m.to_string()));
        if d.window_secs <= 0 || d.lookback_secs <= 0 {
            return bad("window_secs and lookback_secs must be positive");
        }
        if !(d.default_th_d >= 0.0) || d.th_d.is_some_and(|t| !(t >= 0.0) || !t.is_finite()) {
            return bad("path-score thresholds must be finite and non-negative");
        }
        if d.default_th_v == 0 || d.th_v == Some(0) {
            return bad("vantage-count thresholds must be at least 1");
        }
        Ok(())
    }

    /// The named input, which must be configured and exist.
    pub fn input<'a>(&self, key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        let p = value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{key} is not set")))?;
        if !p.is_file() {
            return Err(CliError::MissingFile(p.to_path_buf()));
        }
        Ok(p)
    }
}
