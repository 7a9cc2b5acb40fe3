use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::Format;
use crate::params::Hyperparams;
use crate::trainer::{Mode, Ranker};

/// What an experiment produces: the popularity baseline or a trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentMode {
    Popularity,
    Train(Mode),
}

impl FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "popularity" => Ok(ExperimentMode::Popularity),
            other => other.parse().map(ExperimentMode::Train).map_err(|_| {
                Error::config(format!(
                    "unknown mode {other:?} (expected popularity, single-rank, single-rate, vanilla or rnr)"
                ))
            }),
        }
    }
}

impl fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentMode::Popularity => f.write_str("popularity"),
            ExperimentMode::Train(m) => m.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub format: Format,
    pub delimiter: char,
    pub min_interactions: usize,
    pub holdout: usize,
    pub mode: ExperimentMode,
    pub ranker: Ranker,
    /// `seed` here drives both the split and training.
    pub hp: Hyperparams,
    pub grid_alpha: Vec<f64>,
    pub grid_lambda: Vec<f64>,
    pub out: PathBuf,
}

pub const KEYS: &[&str] = &[
    "data",
    "format",
    "delimiter",
    "min-interactions",
    "holdout",
    "mode",
    "ranker",
    "alpha",
    "lambda",
    "lr",
    "dim",
    "k",
    "epochs-max",
    "patience",
    "seed",
    "grid-alpha",
    "grid-lambda",
    "out",
    "cdae-corruption",
    "cdae-negatives",
    "bpr-negatives",
];

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected key=value, got {raw:?}", n + 1)))?;
        pairs.push((key.trim().to_owned(), value.trim().to_owned()));
    }
    Ok(pairs)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_delimiter(value: &str) -> Result<char> {
    match value {
        "tab" | "\\t" => return Ok('\t'),
        "space" => return Ok(' '),
        _ => {}
    }
    let mut chars = value.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(Error::config(format!("delimiter must be a single character, got {value:?}"))),
    }
}

impl ExperimentConfig {
    /// Builds a config from key/value pairs; later pairs override earlier
    /// ones. Validates every field and that the input file is readable.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            let k = k.into();
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::config(format!("unknown configuration key {k:?}")));
            }
            map.insert(k, v.into());
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let required = |k: &str| get(k).ok_or_else(|| Error::config(format!("missing required setting {k}")));

        let mut hp = Hyperparams::default();
        macro_rules! set {
            ($field:ident, $key:literal) => {
                if let Some(v) = get($key) {
                    hp.$field = parse_value($key, v)?;
                }
            };
        }
        set!(alpha, "alpha");
        set!(lambda, "lambda");
        set!(lr, "lr");
        set!(dim, "dim");
        set!(k, "k");
        set!(epochs_max, "epochs-max");
        set!(patience, "patience");
        set!(seed, "seed");
        set!(cdae_corruption, "cdae-corruption");
        set!(cdae_negatives, "cdae-negatives");
        set!(bpr_negatives_per_pos, "bpr-negatives");
        hp.validate()?;

        let cfg = ExperimentConfig {
            data: PathBuf::from(required("data")?),
            format: get("format").map_or(Ok(Format::MovielensDat), str::parse)?,
            delimiter: get("delimiter").map_or(Ok(','), parse_delimiter)?,
            min_interactions: get("min-interactions").map_or(Ok(4), |v| parse_value("min-interactions", v))?,
            holdout: parse_value("holdout", required("holdout")?)?,
            mode: parse_value::<String>("mode", required("mode")?).and_then(|m| m.parse())?,
            ranker: get("ranker").map_or(Ok(Ranker::Bpr), str::parse)?,
            grid_alpha: match get("grid-alpha") {
                Some(v) => parse_list("grid-alpha", v)?,
                None => vec![hp.alpha],
            },
            grid_lambda: match get("grid-lambda") {
                Some(v) => parse_list("grid-lambda", v)?,
                None => vec![hp.lambda],
            },
            out: PathBuf::from(required("out")?),
            hp,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.min_interactions == 0 {
            return Err(Error::config("min-interactions must be >= 1"));
        }
        if self.grid_alpha.is_empty() || self.grid_lambda.is_empty() {
            return Err(Error::config("grids must not be empty"));
        }
        for &a in &self.grid_alpha {
            Hyperparams { alpha: a, ..self.hp.clone() }.validate()?;
        }
        for &l in &self.grid_lambda {
            Hyperparams { lambda: l, ..self.hp.clone() }.validate()?;
        }
        if !self.data.is_file() {
            return Err(Error::config(format!("data file {} is not readable", self.data.display())));
        }
        if self.out.exists() && !self.out.is_dir() {
            return Err(Error::config(format!("output path {} is not a directory", self.out.display())));
        }
        Ok(())
    }

    /// Dataset name for reports: the data file's stem.
    pub fn dataset_name(&self) -> String {
        self.data
            .file_stem()
            .map_or_else(|| "data".to_owned(), |s| s.to_string_lossy().into_owned())
    }
}
