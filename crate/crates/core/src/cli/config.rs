//! Run configuration: defaults, then a `key = value` file, then flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use super::CliError;
use crate::corpus::{FilterConfig, VocabRole};
use crate::decoding::BeamConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// A config value that can be parsed from and printed to a config file.
trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! number_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|_| format!("{s:?} is not a valid {}", stringify!($t)))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

number_value!(usize, u64, f64);

impl Value for String {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
    fn show(&self) -> String {
        self.clone()
    }
}

impl Value for Option<PathBuf> {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(if s.is_empty() { None } else { Some(PathBuf::from(s)) })
    }
    fn show(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

impl Value for Vec<f64> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| format!("{x:?} is not a number")))
            .collect()
    }
    fn show(&self) -> String {
        self.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:expr])+ $name:ident: $ty:ty = $default:expr;)+) => {
        /// Every setting of every subcommand.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(pub $name: $ty,)+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($name: $default,)+ }
            }
        }

        /// Flags overriding configuration keys.
        #[derive(Args, Clone, Debug, Default)]
        pub struct Overrides {
            $(
                $(#[doc = $doc])+
                #[arg(long, value_name = "VALUE", help_heading = "Configuration")]
                pub $name: Option<String>,
            )+
        }

        impl RunConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
                match key {
                    $(stringify!($name) => {
                        self.$name = Value::parse(value).map_err(|m| CliError::Config(format!("{key}: {m}")))?;
                    })+
                    _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), Value::show(&self.$name)),)+]
            }
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(if let Some(v) = &self.$name {
                    out.push((stringify!($name), v.as_str()));
                })+
                out
            }
        }
    };
}

run_config! {
    /// Training corpus (JSONL)
    train_file: Option<PathBuf> = None;
    /// Development corpus (JSONL); the training data is scored if absent
    dev_file: Option<PathBuf> = None;
    /// Main input file of the subcommand
    input: Option<PathBuf> = None;
    /// Main output file (or directory for `train`)
    output: Option<PathBuf> = None;
    /// Model checkpoint to load
    model: Option<PathBuf> = None;
    /// Reference corpus for `eval`
    reference: Option<PathBuf> = None;
    /// Word vectors for lenient relation matching (`word v1 ... vd` lines)
    embeddings: Option<PathBuf> = None;
    /// Where `eval` writes the `sigma P R F` sweep
    sweep_output: Option<PathBuf> = None;
    /// Plain-text sources for `convert`, one per line
    sources: Option<PathBuf> = None;
    /// CoNLL parses of the sources for `convert`
    source_parses: Option<PathBuf> = None;
    /// Relations to compare against in `eval`: `reference` or `source`
    against: String = "reference".into();
    /// Similarity thresholds for the relation sweep
    sigmas: Vec<f64> = vec![1.0, 0.9, 0.8, 0.7];
    /// LSTM hidden size
    hidden_size: usize = 256;
    /// Word embedding and tree vector size
    embed_size: usize = 256;
    /// Operation embedding size
    op_embed_size: usize = 32;
    /// Encoder depth
    encoder_layers: usize = 2;
    /// Longest source kept
    max_source_len: usize = 100;
    /// Longest summary kept
    max_summary_len: usize = 60;
    /// Minimum count for the input vocabulary
    input_min_count: usize = 5;
    /// Output vocabulary size, excluding special tokens
    output_max_size: usize = 10_000;
    /// Instances per optimizer step
    batch_size: usize = 64;
    /// Adam learning rate
    lr: f64 = 1e-3;
    /// Adam first-moment decay
    beta1: f64 = 0.9;
    /// Adam second-moment decay
    beta2: f64 = 0.999;
    /// Adam epsilon
    eps: f64 = 1e-8;
    /// Elementwise gradient bound
    grad_clip: f64 = 5.0;
    /// Decoupled weight decay
    weight_decay: f64 = 1e-6;
    /// Maximum training epochs
    epochs: usize = 30;
    /// Early-stopping patience in epochs (0 disables)
    patience: usize = 3;
    /// Random seed
    seed: u64 = 1;
    /// Beam size
    beam_size: usize = 10;
    /// Longest generated summary
    max_words: usize = 60;
    /// Length normalization exponent for finished hypotheses
    length_penalty: f64 = 0.0;
    /// Worker threads for `decode` and `eval`
    workers: usize = 1;
}

impl RunConfig {
    /// Applies a `key = value` file. `#` starts a comment; dashes in keys
    /// are read as underscores.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let key = k.trim().replace('-', "_");
            self.set(&key, v.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<(), CliError> {
        for (k, v) in o.pairs() {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Resolved configuration in the file format.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_size: self.hidden_size,
            embed_size: self.embed_size,
            op_embed_size: self.op_embed_size,
            encoder_layers: self.encoder_layers,
            max_source_len: self.max_source_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            grad_clip: self.grad_clip,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            max_words: self.max_words,
            max_steps: None,
            length_penalty: self.length_penalty,
            bias: None,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            max_source_len: self.max_source_len,
            max_summary_len: self.max_summary_len,
        }
    }

    pub fn input_role(&self) -> VocabRole {
        VocabRole::Input {
            min_count: self.input_min_count,
        }
    }

    pub fn output_role(&self) -> VocabRole {
        VocabRole::Output {
            max_size: self.output_max_size,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("embed_size", self.embed_size),
            ("op_embed_size", self.op_embed_size),
            ("encoder_layers", self.encoder_layers),
            ("batch_size", self.batch_size),
            ("beam_size", self.beam_size),
            ("max_words", self.max_words),
            ("workers", self.workers),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{k} must be positive")));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(CliError::Config("sigmas must lie in (0, 1]".into()));
        }
        if self.against != "reference" && self.against != "source" {
            return Err(CliError::Config(format!(
                "against must be `reference` or `source`, not {:?}",
                self.against
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_echo() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nhidden-size = 64\nlr = 0.01  # inline\nsigmas = 1.0, 0.5\n\n")
            .unwrap();
        let flags = Overrides {
            hidden_size: Some("32".into()),
            ..Overrides::default()
        };
        c.apply_overrides(&flags).unwrap();
        assert_eq!(c.hidden_size, 32);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.sigmas, vec![1.0, 0.5]);

        let mut again = RunConfig::default();
        again.apply_text(&c.render()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn bad_keys_and_values() {
        let mut c = RunConfig::default();
        let e = c.apply_text("hidden_sise = 3").unwrap_err();
        assert!(e.contains("unknown key"), "{e}");
        let e = c.apply_text("a\n").unwrap_err();
        assert!(e.contains("line 1"), "{e}");
        let e = c.apply_text("epochs = -1").unwrap_err();
        assert!(e.contains("epochs"), "{e}");
        c.set("against", "nowhere").unwrap();
        assert!(c.validate().is_err());
    }
}
