//! Flat `key = value` run configuration with per-key provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use medsum::model::ModelConfig;
use medsum::text::{load_token_list, parse_token_list, Preprocessor, DEFAULT_STOPWORDS};
use medsum::training::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    fn label(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Count,
    Positive,
    Int,
    Real,
    Switch,
    Text,
}

struct KeySpec {
    name: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec { name, kind, default }
}

const SCHEMA: &[KeySpec] = &[
    key("seed", Kind::Int, "1"),
    // pipeline
    key("task", Kind::Text, "body"),
    key("stopwords", Kind::Text, ""),
    key("domain_terms", Kind::Text, ""),
    key("min_freq", Kind::Positive, "1"),
    key("max_vocab", Kind::Positive, "5000"),
    key("split_train", Kind::Real, "0.8"),
    key("split_val", Kind::Real, "0.1"),
    key("split_test", Kind::Real, "0.1"),
    // model
    key("embed_dim", Kind::Positive, "32"),
    key("hidden_dim", Kind::Positive, "64"),
    key("encoder_layers", Kind::Positive, "2"),
    key("attention_dim", Kind::Positive, "32"),
    key("max_source_len", Kind::Positive, "128"),
    key("max_target_len", Kind::Positive, "48"),
    key("attention", Kind::Switch, "on"),
    key("coverage", Kind::Switch, "off"),
    key("coverage_weight", Kind::Real, "1.0"),
    key("beam_width", Kind::Positive, "1"),
    // training
    key("epochs", Kind::Positive, "40"),
    key("batch_size", Kind::Positive, "1"),
    key("base_lr", Kind::Real, "0.02"),
    key("warmup_steps", Kind::Positive, "400"),
    key("momentum", Kind::Real, "0.9"),
    key("early_stop_patience", Kind::Positive, "5"),
    key("clip_norm", Kind::Real, "5.0"),
    key("distill_temperature", Kind::Real, "2.0"),
    key("distill_mix", Kind::Real, "0.5"),
    key("mlm_steps", Kind::Count, "0"),
    key("mlm_mask_prob", Kind::Real, "0.15"),
    key("folds", Kind::Positive, "5"),
    key("plot", Kind::Switch, "off"),
];

fn spec(name: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|k| k.name == name)
}

fn check(spec: &KeySpec, value: &str) -> Result<(), String> {
    let ok = match spec.kind {
        Kind::Count | Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Positive => value.parse::<u64>().is_ok_and(|v| v > 0),
        Kind::Real => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Switch => matches!(value, "on" | "off"),
        Kind::Text => true,
    };
    if !ok {
        let want = match spec.kind {
            Kind::Count | Kind::Int => "a non-negative integer",
            Kind::Positive => "a positive integer",
            Kind::Real => "a finite number",
            Kind::Switch => "on or off",
            Kind::Text => unreachable!(),
        };
        return Err(format!("{} expects {want}, got {value:?}", spec.name));
    }
    if spec.name == "task" && !matches!(value, "body" | "title") {
        return Err(format!("task must be body or title, got {value:?}"));
    }
    Ok(())
}

/// Merged configuration. Later sources override earlier ones: default < file < flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Source)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA.iter().map(|k| (k.name, (k.default.to_string(), Source::Default))).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str, source: Source) -> Result<(), CliError> {
        let spec = spec(name).ok_or_else(|| CliError::Usage(format!("unknown config key {name:?}")))?;
        check(spec, value).map_err(CliError::Usage)?;
        let slot = self.values.get_mut(spec.name).expect("schema key");
        if source >= slot.1 {
            *slot = (value.to_string(), source);
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: Source) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim(), source)
                .map_err(|e| CliError::Usage(format!("config line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Parses `key=value` as given on the command line.
    pub fn apply_assignment(&mut self, assignment: &str, source: Source) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got {assignment:?}")))?;
        self.set(k.trim(), v.trim(), source)
    }

    pub fn source(&self, name: &str) -> Source {
        self.values[name].1
    }

    pub fn raw(&self, name: &str) -> &str {
        &self.values[name].0
    }

    fn usize(&self, name: &str) -> usize {
        self.raw(name).parse().expect("validated on set")
    }

    fn f64(&self, name: &str) -> f64 {
        self.raw(name).parse().expect("validated on set")
    }

    fn switch(&self, name: &str) -> bool {
        self.raw(name) == "on"
    }

    pub fn seed(&self) -> u64 {
        self.raw("seed").parse().expect("validated on set")
    }

    pub fn folds(&self) -> usize {
        self.usize("folds")
    }

    pub fn plot(&self) -> bool {
        self.switch("plot")
    }

    pub fn title_task(&self) -> bool {
        self.raw("task") == "title"
    }

    pub fn min_freq(&self) -> usize {
        self.usize("min_freq")
    }

    pub fn max_vocab(&self) -> usize {
        self.usize("max_vocab")
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        (self.f64("split_train"), self.f64("split_val"), self.f64("split_test"))
    }

    pub fn mlm_steps(&self) -> usize {
        self.usize("mlm_steps")
    }

    pub fn mlm_mask_prob(&self) -> f64 {
        self.f64("mlm_mask_prob")
    }

    pub fn beam_width(&self) -> usize {
        self.usize("beam_width")
    }

    pub fn domain_terms(&self) -> Result<Vec<String>, CliError> {
        match self.raw("domain_terms") {
            "" => Ok(Vec::new()),
            p => Ok(load_token_list(&PathBuf::from(p))?),
        }
    }

    pub fn preprocessor(&self) -> Result<Preprocessor, CliError> {
        let words = match self.raw("stopwords") {
            "" => parse_token_list(DEFAULT_STOPWORDS),
            p => load_token_list(&PathBuf::from(p))?,
        };
        Ok(Preprocessor::new(words))
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig, CliError> {
        let coverage = self.switch("coverage");
        let cfg = ModelConfig {
            vocab_size,
            embed_dim: self.usize("embed_dim"),
            hidden_dim: self.usize("hidden_dim"),
            encoder_layers: self.usize("encoder_layers"),
            attention_dim: self.usize("attention_dim"),
            max_source_len: self.usize("max_source_len"),
            max_target_len: self.usize("max_target_len"),
            coverage_enabled: coverage,
            coverage_weight: if coverage { self.f64("coverage_weight") } else { 0.0 },
            attention_enabled: self.switch("attention"),
            beam_width: self.beam_width(),
            seed: self.seed(),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.usize("epochs"),
            batch_size: self.usize("batch_size"),
            base_lr: self.f64("base_lr"),
            warmup_steps: self.usize("warmup_steps"),
            momentum: self.f64("momentum"),
            early_stop_patience: self.usize("early_stop_patience"),
            clip_norm: self.f64("clip_norm"),
            distill_temperature: self.f64("distill_temperature"),
            distill_mix: self.f64("distill_mix"),
            seed: self.seed(),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Every key with its value and where the value came from.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in SCHEMA {
            let (v, src) = &self.values[k.name];
            let _ = writeln!(out, "{} = {}  # {}", k.name, v, src.label());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering() {
        let mut c = RunConfig::default();
        c.apply_text("epochs = 7 # short\n\n# note\nseed=3", Source::File).unwrap();
        c.set("seed", "9", Source::Flag).unwrap();
        assert_eq!((c.raw("epochs"), c.source("epochs")), ("7", Source::File));
        assert_eq!(c.seed(), 9);
        // a file value never overrides a flag
        c.set("seed", "4", Source::File).unwrap();
        assert_eq!(c.seed(), 9);
        assert_eq!(c.source("hidden_dim"), Source::Default);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("hiden_dim = 4", Source::File).is_err());
        assert!(c.apply_text("epochs 4", Source::File).is_err());
        assert!(c.set("epochs", "0", Source::Flag).is_err());
        assert!(c.set("coverage", "yes", Source::Flag).is_err());
        assert!(c.set("base_lr", "nan", Source::Flag).is_err());
        assert!(c.set("task", "abstract", Source::Flag).is_err());
    }

    #[test]
    fn coverage_weight_only_counts_when_coverage_is_on() {
        let mut c = RunConfig::default();
        assert_eq!(c.model_config(50).unwrap().coverage_weight, 0.0);
        c.set("coverage", "on", Source::Flag).unwrap();
        let m = c.model_config(50).unwrap();
        assert!(m.coverage_enabled);
        assert_eq!(m.coverage_weight, 1.0);
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn render_lists_every_key() {
        let text = RunConfig::default().render();
        assert_eq!(text.lines().count(), SCHEMA.len());
        assert!(text.contains("epochs = 40  # default"));
    }
}
