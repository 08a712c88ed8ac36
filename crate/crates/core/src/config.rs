//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment. Values are read as JSON
//! scalars when they parse as one (`3`, `1e-2`, `true`, `"x"`, `null`) and
//! as bare strings otherwise; an empty value means `null`. Layers are merged
//! left to right, so later layers win.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type KvMap = BTreeMap<String, String>;

pub fn parse_kv(text: &str, origin: &Path) -> Result<KvMap> {
    let mut out = KvMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(err(format!("bad key `{k}`")));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(err(format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<KvMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, path)
}

/// Parse `key=value` strings, e.g. from repeated `--set` flags.
pub fn kv_from_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<KvMap> {
    let text = pairs
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join("\n");
    parse_kv(&text, Path::new("<command line>"))
}

fn scalar(v: &str) -> Value {
    if v.is_empty() {
        return Value::Null;
    }
    match serde_json::from_str::<Value>(v) {
        Ok(j) if !j.is_object() && !j.is_array() => j,
        _ => Value::String(v.to_string()),
    }
}

/// Deserialize `T` from its defaults overlaid with `layers`. Unknown keys
/// are rejected by the target type.
pub fn from_layers<T: DeserializeOwned>(layers: &[&KvMap]) -> Result<T> {
    let mut obj = Map::new();
    for layer in layers {
        for (k, v) in layer.iter() {
            obj.insert(k.clone(), scalar(v));
        }
    }
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::invalid(format!("config: {e}")))
}

/// Render a config back to `key = value` lines in key order.
pub fn to_kv_text<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
    let Value::Object(obj) = v else {
        return Err(Error::invalid("config must serialize to a flat object"));
    };
    let mut out = String::new();
    for (k, v) in obj {
        let s = match v {
            Value::Null => String::new(),
            Value::String(s) => s,
            other => other.to_string(),
        };
        out.push_str(&format!("{k} = {s}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{NegAggregation, TrainConfig};
    use crate::synth::SynthConfig;
    use crate::zoo_builder::{BuilderConfig, Strategy};

    fn p() -> &'static Path {
        Path::new("t.cfg")
    }

    #[test]
    fn parses_and_layers() {
        let base = parse_kv("# defaults\nepochs = 5\nmargin=0.25  # inline\n\n", p()).unwrap();
        let over = kv_from_pairs(&["epochs=9", "neg_aggregation = sum"]).unwrap();
        let cfg: TrainConfig = from_layers(&[&base, &over]).unwrap();
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.margin, 0.25);
        assert_eq!(cfg.neg_aggregation, NegAggregation::Sum);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn errors_carry_lines() {
        match parse_kv("a = 1\nnonsense\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_kv("a = 1\na = 2", p()).is_err());
        assert!(parse_kv("two words = 1", p()).is_err());
        let unknown = parse_kv("epoch = 3", p()).unwrap();
        assert!(from_layers::<TrainConfig>(&[&unknown]).is_err());
        let bad = parse_kv("epochs = many", p()).unwrap();
        assert!(from_layers::<TrainConfig>(&[&bad]).is_err());
    }

    #[test]
    fn round_trips_every_config() {
        let t = TrainConfig {
            lr: 3e-3,
            ..Default::default()
        };
        let back: TrainConfig =
            from_layers(&[&parse_kv(&to_kv_text(&t).unwrap(), p()).unwrap()]).unwrap();
        assert_eq!(back, t);
        let s = SynthConfig {
            n_datasets: 3,
            ..Default::default()
        };
        let back: SynthConfig =
            from_layers(&[&parse_kv(&to_kv_text(&s).unwrap(), p()).unwrap()]).unwrap();
        assert_eq!(back, s);
        let b = BuilderConfig {
            budget: Some(40),
            strategy: Strategy::Random,
            ..Default::default()
        };
        let text = to_kv_text(&b).unwrap();
        assert!(text.contains("n_init = \n"));
        let back: BuilderConfig = from_layers(&[&parse_kv(&text, p()).unwrap()]).unwrap();
        assert_eq!(back, b);
    }
}
