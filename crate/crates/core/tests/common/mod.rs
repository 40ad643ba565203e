#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;
use zslcraft::config::RunConfig;
use zslcraft::pipeline::{cmd_craft, cmd_eval, cmd_rebalance, cmd_synth, cmd_train, EvalOutput};

pub fn default_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.conf")
}

pub fn owned(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// A synthesized benchmark in a scratch directory, with helpers that run the
/// pipeline stages against it.
pub struct Bench {
    pub dir: TempDir,
    base: Vec<(String, String)>,
}

impl Bench {
    pub fn new(overrides: &[(&str, &str)]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut base = Vec::new();
        for (key, file) in [
            ("paths.features", "features.txt"),
            ("paths.embeddings", "embeddings.txt"),
            ("paths.split", "split.txt"),
            ("paths.irrelevant", "irrelevant.txt"),
        ] {
            base.push((key.to_string(), dir.path().join(file).display().to_string()));
        }
        base.extend(owned(overrides));
        let bench = Bench { dir, base };
        cmd_synth(&bench.config(&[]), false).unwrap();
        bench
    }

    pub fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    pub fn config(&self, overrides: &[(&str, &str)]) -> RunConfig {
        let mut all = self.base.clone();
        all.extend(owned(overrides));
        RunConfig::load(&default_config_path(), &all).unwrap()
    }

    /// Craft, train and fit a discriminator; files are suffixed with `tag`.
    pub fn member(&self, mode: &str, tag: &str, extra: &[(&str, &str)]) {
        let rules = self.path(&format!("rules_{tag}.txt"));
        let model = self.path(&format!("model_{tag}.txt"));
        let disc = self.path(&format!("disc_{tag}.txt"));
        let mut o = vec![
            ("craft.mode", mode),
            ("paths.rules", rules.as_str()),
            ("paths.model", model.as_str()),
            ("paths.disc", disc.as_str()),
        ];
        o.extend_from_slice(extra);
        let cfg = self.config(&o);
        cmd_craft(&cfg, true).unwrap();
        cmd_train(&cfg, true).unwrap();
        cmd_rebalance(&cfg, true).unwrap();
    }

    /// Evaluate the members named by `tags` (one, or two for an ensemble).
    pub fn eval(&self, tags: &[&str], rebalance: &str, extra: &[(&str, &str)]) -> EvalOutput {
        let list = |prefix: &str| {
            tags.iter()
                .map(|t| self.path(&format!("{prefix}_{t}.txt")))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let (models, rules, discs) = (list("model"), list("rules"), list("disc"));
        let report = self.path("report.txt");
        let ensemble = if tags.len() == 2 { "true" } else { "false" };
        let mut o = vec![
            ("eval.models", models.as_str()),
            ("eval.rules", rules.as_str()),
            ("eval.discs", discs.as_str()),
            ("eval.ensemble", ensemble),
            ("eval.rebalance", rebalance),
            ("paths.report", report.as_str()),
        ];
        o.extend_from_slice(extra);
        cmd_eval(&self.config(&o), true).unwrap()
    }
}
