//! Run configuration: line-oriented `key = value` text with `#` comments and dotted
//! keys. Every key has a default, unknown keys are rejected, and the resolved
//! configuration renders back to text that parses to the same value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::{Optimizer, TrainConfig};
use crate::crafting::RuleKind;
use crate::dataio::formats::read_text;
use crate::dataio::SynthConfig;
use crate::error::{Error, Result};
use crate::linalg::derive_seed;
use crate::rebalance::{DiscInput, DiscriminatorConfig, MixupConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    /// k-fold cross-validation over seen classes.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rebalance {
    None,
    Learned,
    Oracle,
    Calibrate(f64),
}

/// Where rebalancing happens relative to ensemble averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebalanceOrder {
    /// Each member is smoothed and rebalanced, then the members are averaged.
    Member,
    /// Members are averaged first, then rebalanced once with the mean `p_D`.
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub features: PathBuf,
    pub embeddings: PathBuf,
    pub split: PathBuf,
    pub irrelevant: PathBuf,
    pub rules: PathBuf,
    pub model: PathBuf,
    pub disc: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub n_irrelevant: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub craft_mode: RuleKind,
    pub craft_lambda: Lambda,
    pub craft_lambda_grid: Vec<f64>,
    pub craft_folds: usize,
    pub craft_normalize: bool,
    pub train: TrainConfig,
    pub finetune: bool,
    pub mixup_alpha: f64,
    /// 0 means one negative per positive.
    pub mixup_n_negatives: usize,
    pub disc: DiscriminatorConfig,
    pub disc_input: DiscInput,
    pub eval_mode: EvalMode,
    pub eval_rebalance: Rebalance,
    pub eval_ensemble: bool,
    pub eval_order: RebalanceOrder,
    pub eval_tau: f64,
    pub eval_tau_select: bool,
    pub eval_tau_grid: Vec<f64>,
    pub eval_gamma_sweep: Vec<f64>,
    pub eval_models: Vec<PathBuf>,
    pub eval_rules: Vec<PathBuf>,
    pub eval_discs: Vec<PathBuf>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = |s: &str| PathBuf::from(s);
        Self {
            seed: 1,
            synth: SynthConfig::default(),
            n_irrelevant: 500,
            hidden: 64,
            feature_dim: 16,
            craft_mode: RuleKind::Visual,
            craft_lambda: Lambda::Fixed(1e-2),
            craft_lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            craft_folds: 5,
            craft_normalize: false,
            train: TrainConfig::default(),
            finetune: true,
            mixup_alpha: 0.4,
            mixup_n_negatives: 0,
            disc: DiscriminatorConfig::default(),
            disc_input: DiscInput::SortedLogits,
            eval_mode: EvalMode::Gzsl,
            eval_rebalance: Rebalance::None,
            eval_ensemble: false,
            eval_order: RebalanceOrder::Member,
            eval_tau: 1.0,
            eval_tau_select: false,
            eval_tau_grid: vec![0.5, 1.0, 2.0, 5.0],
            eval_gamma_sweep: Vec::new(),
            eval_models: Vec::new(),
            eval_rules: Vec::new(),
            eval_discs: Vec::new(),
            paths: Paths {
                features: p("data/features.txt"),
                embeddings: p("data/embeddings.txt"),
                split: p("data/split.txt"),
                irrelevant: p("data/irrelevant.txt"),
                rules: p("rules.txt"),
                model: p("model.txt"),
                disc: p("disc.txt"),
                report: p("report.txt"),
            },
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` must be true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn join_paths(items: &[PathBuf]) -> String {
    items
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Zsl => "zsl",
            EvalMode::Gzsl => "gzsl",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(EvalMode::Zsl),
            "gzsl" => Ok(EvalMode::Gzsl),
            _ => Err(Error::Config(format!("unknown eval mode `{s}` (zsl|gzsl)"))),
        }
    }
}

impl fmt::Display for Rebalance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rebalance::None => f.write_str("none"),
            Rebalance::Learned => f.write_str("learned"),
            Rebalance::Oracle => f.write_str("oracle"),
            Rebalance::Calibrate(g) => write!(f, "calibrate:{g}"),
        }
    }
}

impl FromStr for Rebalance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rebalance::None),
            "learned" => Ok(Rebalance::Learned),
            "oracle" => Ok(Rebalance::Oracle),
            _ => match s.strip_prefix("calibrate:").map(str::parse::<f64>) {
                Some(Ok(g)) if g.is_finite() => Ok(Rebalance::Calibrate(g)),
                _ => Err(Error::Config(format!(
                    "unknown rebalance `{s}` (none|learned|oracle|calibrate:<gamma>)"
                ))),
            },
        }
    }
}

impl fmt::Display for RebalanceOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RebalanceOrder::Member => "member",
            RebalanceOrder::Average => "average",
        })
    }
}

impl FromStr for RebalanceOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "member" => Ok(RebalanceOrder::Member),
            "average" => Ok(RebalanceOrder::Average),
            _ => Err(Error::Config(format!("unknown rebalance order `{s}` (member|average)"))),
        }
    }
}

impl RunConfig {
    /// Assign one key. Values are validated for syntax here and for range in
    /// [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = || PathBuf::from(v);
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "synth.n_seen" => self.synth.n_seen = parse_value(key, v)?,
            "synth.n_unseen" => self.synth.n_unseen = parse_value(key, v)?,
            "synth.attribute_dim" => self.synth.q = parse_value(key, v)?,
            "synth.feature_dim" => self.synth.d = parse_value(key, v)?,
            "synth.samples_per_class" => self.synth.samples_per_class = parse_value(key, v)?,
            "synth.noise" => self.synth.noise_stddev = parse_value(key, v)?,
            "synth.n_irrelevant" => self.n_irrelevant = parse_value(key, v)?,
            "model.hidden" => self.hidden = parse_value(key, v)?,
            "model.feature_dim" => self.feature_dim = parse_value(key, v)?,
            "craft.mode" => self.craft_mode = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "craft.lambda" => {
                self.craft_lambda = if v == "auto" {
                    Lambda::Auto
                } else {
                    Lambda::Fixed(parse_value(key, v)?)
                }
            }
            "craft.lambda_grid" => self.craft_lambda_grid = parse_list(key, v)?,
            "craft.folds" => self.craft_folds = parse_value(key, v)?,
            "craft.normalize" => self.craft_normalize = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse_value(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_value(key, v)?,
            "train.optimizer" => {
                self.train.optimizer = match (v, self.train.optimizer) {
                    ("sgd", _) => Optimizer::Sgd,
                    ("adam", Optimizer::Adam { .. }) => self.train.optimizer,
                    ("adam", Optimizer::Sgd) => Optimizer::adam(),
                    _ => return Err(Error::Config(format!("unknown optimizer `{v}` (sgd|adam)"))),
                }
            }
            "train.beta1" | "train.beta2" | "train.eps" => {
                let x: f64 = parse_value(key, v)?;
                let (mut b1, mut b2, mut eps) = match self.train.optimizer {
                    Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
                    Optimizer::Sgd => {
                        return Err(Error::Config(format!(
                            "`{key}` needs train.optimizer = adam set before it"
                        )))
                    }
                };
                match key {
                    "train.beta1" => b1 = x,
                    "train.beta2" => b2 = x,
                    _ => eps = x,
                }
                self.train.optimizer = Optimizer::Adam {
                    beta1: b1,
                    beta2: b2,
                    eps,
                };
            }
            "train.temperature" => self.train.temperature = parse_value(key, v)?,
            "train.finetune" => self.finetune = parse_bool(key, v)?,
            "mixup.alpha" => self.mixup_alpha = parse_value(key, v)?,
            "mixup.n_negatives" => self.mixup_n_negatives = parse_value(key, v)?,
            "disc.iterations" => self.disc.iterations = parse_value(key, v)?,
            "disc.learning_rate" => self.disc.learning_rate = parse_value(key, v)?,
            "disc.input" => self.disc_input = v.parse()?,
            "eval.mode" => self.eval_mode = v.parse()?,
            "eval.rebalance" => self.eval_rebalance = v.parse()?,
            "eval.ensemble" => self.eval_ensemble = parse_bool(key, v)?,
            "eval.rebalance_order" => self.eval_order = v.parse()?,
            "eval.tau" => self.eval_tau = parse_value(key, v)?,
            "eval.tau_select" => self.eval_tau_select = parse_bool(key, v)?,
            "eval.tau_grid" => self.eval_tau_grid = parse_list(key, v)?,
            "eval.gamma_sweep" => self.eval_gamma_sweep = parse_list(key, v)?,
            "eval.models" => self.eval_models = parse_list(key, v)?,
            "eval.rules" => self.eval_rules = parse_list(key, v)?,
            "eval.discs" => self.eval_discs = parse_list(key, v)?,
            "paths.features" => self.paths.features = path(),
            "paths.embeddings" => self.paths.embeddings = path(),
            "paths.split" => self.paths.split = path(),
            "paths.irrelevant" => self.paths.irrelevant = path(),
            "paths.rules" => self.paths.rules = path(),
            "paths.model" => self.paths.model = path(),
            "paths.disc" => self.paths.disc = path(),
            "paths.report" => self.paths.report = path(),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let t = &self.train;
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("synth.n_seen", s.n_seen.to_string()),
            ("synth.n_unseen", s.n_unseen.to_string()),
            ("synth.attribute_dim", s.q.to_string()),
            ("synth.feature_dim", s.d.to_string()),
            ("synth.samples_per_class", s.samples_per_class.to_string()),
            ("synth.noise", s.noise_stddev.to_string()),
            ("synth.n_irrelevant", self.n_irrelevant.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.feature_dim", self.feature_dim.to_string()),
            ("craft.mode", self.craft_mode.to_string()),
            (
                "craft.lambda",
                match self.craft_lambda {
                    Lambda::Auto => "auto".into(),
                    Lambda::Fixed(l) => l.to_string(),
                },
            ),
            ("craft.lambda_grid", join(&self.craft_lambda_grid)),
            ("craft.folds", self.craft_folds.to_string()),
            ("craft.normalize", self.craft_normalize.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
        ];
        match t.optimizer {
            Optimizer::Sgd => out.push(("train.optimizer", "sgd".into())),
            Optimizer::Adam { beta1, beta2, eps } => out.extend([
                ("train.optimizer", "adam".into()),
                ("train.beta1", beta1.to_string()),
                ("train.beta2", beta2.to_string()),
                ("train.eps", eps.to_string()),
            ]),
        }
        out.extend([
            ("train.temperature", t.temperature.to_string()),
            ("train.finetune", self.finetune.to_string()),
            ("mixup.alpha", self.mixup_alpha.to_string()),
            ("mixup.n_negatives", self.mixup_n_negatives.to_string()),
            ("disc.iterations", self.disc.iterations.to_string()),
            ("disc.learning_rate", self.disc.learning_rate.to_string()),
            ("disc.input", self.disc_input.to_string()),
            ("eval.mode", self.eval_mode.to_string()),
            ("eval.rebalance", self.eval_rebalance.to_string()),
            ("eval.ensemble", self.eval_ensemble.to_string()),
            ("eval.rebalance_order", self.eval_order.to_string()),
            ("eval.tau", self.eval_tau.to_string()),
            ("eval.tau_select", self.eval_tau_select.to_string()),
            ("eval.tau_grid", join(&self.eval_tau_grid)),
            ("eval.gamma_sweep", join(&self.eval_gamma_sweep)),
            ("eval.models", join_paths(&self.eval_models)),
            ("eval.rules", join_paths(&self.eval_rules)),
            ("eval.discs", join_paths(&self.eval_discs)),
            ("paths.features", self.paths.features.display().to_string()),
            ("paths.embeddings", self.paths.embeddings.display().to_string()),
            ("paths.split", self.paths.split.display().to_string()),
            ("paths.irrelevant", self.paths.irrelevant.display().to_string()),
            ("paths.rules", self.paths.rules.display().to_string()),
            ("paths.model", self.paths.model.display().to_string()),
            ("paths.disc", self.paths.disc.display().to_string()),
            ("paths.report", self.paths.report.display().to_string()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parse config text on top of the defaults, then apply `overrides` in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen_keys = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", no + 1)))?;
            let key = key.trim();
            if !seen_keys.insert(key.to_string()) {
                return Err(Error::Config(format!("config line {}: duplicate key `{key}`", no + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("config line {}: {}", no + 1, strip_kind(&e))))?;
        }
        for (key, value) in overrides {
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("--set {key}: {}", strip_kind(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::parse(&read_text(path)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        self.train.validate()?;
        if self.hidden < 1 || self.feature_dim < 1 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if let Lambda::Fixed(l) = self.craft_lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::Config("craft.lambda must be >= 0 or auto".into()));
            }
        }
        if self.craft_lambda_grid.is_empty() || self.craft_lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config(
                "craft.lambda_grid must be a non-empty list of values >= 0".into(),
            ));
        }
        if self.craft_folds < 2 {
            return Err(Error::Config("craft.folds must be >= 2".into()));
        }
        if !(self.mixup_alpha > 0.0) || !self.mixup_alpha.is_finite() {
            return Err(Error::Config("mixup.alpha must be > 0".into()));
        }
        if !(self.disc.learning_rate >= 0.0) || !self.disc.learning_rate.is_finite() {
            return Err(Error::Config("disc.learning_rate must be >= 0".into()));
        }
        let positive = |t: &f64| *t > 0.0 && t.is_finite();
        if !positive(&self.eval_tau) {
            return Err(Error::Config("eval.tau must be > 0".into()));
        }
        if self.eval_tau_grid.is_empty() || !self.eval_tau_grid.iter().all(positive) {
            return Err(Error::Config(
                "eval.tau_grid must be a non-empty list of values > 0".into(),
            ));
        }
        if self.eval_gamma_sweep.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("eval.gamma_sweep values must be finite".into()));
        }
        Ok(())
    }

    /// Generator settings; the generator seed is a sub-seed of the master seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, "synth"),
            ..self.synth.clone()
        }
    }

    /// Training settings for one crafting mode, with its own shuffling seed.
    pub fn train_config(&self, kind: RuleKind) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &format!("train.{kind}")),
            ..self.train.clone()
        }
    }

    pub fn init_seed(&self, kind: RuleKind) -> u64 {
        derive_seed(self.seed, &format!("init.{kind}"))
    }

    pub fn mixup_config(&self, positives: usize) -> MixupConfig {
        MixupConfig {
            alpha: self.mixup_alpha,
            n_negatives: if self.mixup_n_negatives == 0 {
                positives
            } else {
                self.mixup_n_negatives
            },
            seed: derive_seed(self.seed, "mixup"),
        }
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

/// Parse a `key=value` override as given to `--set`.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override `{arg}` is not of the form key=value")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_render_and_parse_back() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text(), &[]).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse("# header\n\ntrain.epochs = 7   # short run\nseed=9\n", &[]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = RunConfig::parse("train.epoch = 3\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("line 1") && m.contains("train.epoch")));
    }

    #[test]
    fn module_invariants_are_revalidated() {
        assert!(RunConfig::parse("train.epochs = 0\n", &[]).is_err());
        assert!(RunConfig::parse("mixup.alpha = 0\n", &[]).is_err());
        assert!(RunConfig::parse("synth.noise = -1\n", &[]).is_err());
        assert!(RunConfig::parse("eval.tau_grid = 1, -2\n", &[]).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let ov = vec![parse_override("train.epochs=11").unwrap()];
        let cfg = RunConfig::parse("train.epochs = 3\n", &ov).unwrap();
        assert_eq!(cfg.train.epochs, 11);
        assert!(parse_override("nonsense").is_err());
        assert!(RunConfig::parse("", &[("bogus".into(), "1".into())]).is_err());
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", &[]).is_err());
    }

    #[test]
    fn enum_values() {
        let cfg = RunConfig::parse(
            "eval.rebalance = calibrate:0.25\neval.mode = zsl\ncraft.lambda = auto\ndisc.input = probabilities\ntrain.optimizer = sgd\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.eval_rebalance, Rebalance::Calibrate(0.25));
        assert_eq!(cfg.eval_mode, EvalMode::Zsl);
        assert_eq!(cfg.craft_lambda, Lambda::Auto);
        assert_eq!(cfg.disc_input, DiscInput::Probabilities);
        assert_eq!(cfg.train.optimizer, Optimizer::Sgd);
        assert_eq!(RunConfig::parse(&cfg.to_text(), &[]).unwrap(), cfg);
        assert!(RunConfig::parse("eval.rebalance = calibrate:x\n", &[]).is_err());
        assert!(RunConfig::parse("train.optimizer = sgd\ntrain.beta1 = 0.5\n", &[]).is_err());
    }

    #[test]
    fn stage_seeds_are_independent_of_each_other() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.init_seed(RuleKind::Semantic), cfg.init_seed(RuleKind::Visual));
        assert_ne!(
            cfg.train_config(RuleKind::Semantic).seed,
            cfg.train_config(RuleKind::Visual).seed
        );
        let other = RunConfig {
            seed: 2,
            ..RunConfig::default()
        };
        assert_ne!(other.synth_config().seed, cfg.synth_config().seed);
    }

    proptest! {
        #[test]
        fn rendered_config_round_trips(
            seed in any::<u64>(),
            lr in 1e-6f64..1.0,
            tau in 0.01f64..10.0,
            gammas in proptest::collection::vec(-1.0f64..1.0, 0..4),
            epochs in 1usize..500,
        ) {
            let mut cfg = RunConfig { seed, eval_tau: tau, eval_gamma_sweep: gammas, ..RunConfig::default() };
            cfg.train.learning_rate = lr;
            cfg.train.epochs = epochs;
            prop_assert_eq!(RunConfig::parse(&cfg.to_text(), &[]).unwrap(), cfg);
        }
    }
}
