//! The commands behind the CLI: synth, craft, train, rebalance and eval.
//!
//! Each command reads its inputs from the paths of a [`RunConfig`], writes one kind
//! of artifact and reports which dataset rows it was served. Only `eval` ever
//! reads test rows, and the training-side commands see seen training rows only.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::backbone::{train_crafted, CraftedModel, FeatureExtractor};
use crate::config::{EvalMode, Lambda, Rebalance, RebalanceOrder, RunConfig};
use crate::crafting::{
    cross_validate_lambda, fit_projection, load_rules, save_rules, seen_prototypes, semantic_rules, unseen_prototypes,
    visual_rules, RuleKind, RuleSet,
};
use crate::dataio::formats::{
    load_embeddings, load_features, load_split, load_unlabeled, save_embeddings, save_features, save_split,
    save_unlabeled, write_output,
};
use crate::dataio::{indices_by_class, synth_irrelevant, synth_zsl, AuditedDataset, ZslDataset};
use crate::error::{Error, Result};
use crate::inference::{
    check_pool, ensemble_rows, predict_rows, seen_logits, select_temperature, softmax_rows, zsl_logits,
};
use crate::linalg::{derive_seed, DenseMatrix, SeededRng};
use crate::metrics::{gzsl_h, harmonic_mean, mean_per_class_accuracy, per_class_accuracy, zsl_t1, PredictionReport};
use crate::rebalance::{
    calibrate_stack, oracle_p, rebalance_scores, synth_negative_logits, train_discriminator, Discriminator, MixupConfig,
};

pub const REPORT_HEADER: &str = "ZSLC-REPORT v1";

/// Dataset rows a command was served.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Audit {
    pub served: Vec<usize>,
    pub served_unseen: Vec<usize>,
    pub served_outside_train: Vec<usize>,
}

impl Audit {
    fn of(ds: &AuditedDataset) -> Self {
        Self {
            served: ds.served(),
            served_unseen: ds.served_unseen(),
            served_outside_train: ds.served_outside_train(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub written: Vec<PathBuf>,
    pub audit: Audit,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub written: Vec<PathBuf>,
    pub audit: Audit,
    pub report: PredictionReport,
    pub temperature: f64,
    pub text: String,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<AuditedDataset> {
    let (features, labels) = load_features(&cfg.paths.features)?;
    let split = load_split(&cfg.paths.split)?;
    Ok(AuditedDataset::new(ZslDataset::new(features, labels, &split)?))
}

/// Seen training rows held out for temperature selection: a seeded tenth of each
/// class, never its last row. Empty unless `eval.tau_select` is on.
pub fn validation_rows(ds: &AuditedDataset, cfg: &RunConfig) -> Vec<usize> {
    if !cfg.eval_tau_select {
        return Vec::new();
    }
    let train = ds.train_indices();
    let mut rng = SeededRng::new(derive_seed(cfg.seed, "validation"));
    let mut out = Vec::new();
    let labels = ds.rows(&train).1;
    for (_, positions) in indices_by_class(&labels) {
        let mut rows: Vec<usize> = positions.iter().map(|&p| train[p]).collect();
        rng.shuffle(&mut rows);
        let take = rows.len().div_ceil(10).min(rows.len() - 1);
        out.extend_from_slice(&rows[..take]);
    }
    out.sort_unstable();
    out
}

/// Training rows minus the validation rows.
pub fn fit_rows(ds: &AuditedDataset, cfg: &RunConfig) -> Vec<usize> {
    let held: BTreeSet<usize> = validation_rows(ds, cfg).into_iter().collect();
    ds.train_indices().into_iter().filter(|i| !held.contains(i)).collect()
}

fn check_classes(rules: &RuleSet, ds: &AuditedDataset, what: &str) -> Result<()> {
    if rules.class_ids() != ds.class_ids() {
        return Err(Error::Consistency(format!(
            "{what} lists classes {:?}, the split orders them as {:?}",
            rules.class_ids(),
            ds.class_ids()
        )));
    }
    Ok(())
}

fn init_extractor(cfg: &RunConfig, kind: RuleKind, input: usize, output: usize) -> Result<FeatureExtractor> {
    FeatureExtractor::init(&[input, cfg.hidden, output], &mut SeededRng::new(cfg.init_seed(kind)))
}

/// Generate the synthetic benchmark and the task-irrelevant set.
pub fn cmd_synth(cfg: &RunConfig, force: bool) -> Result<CommandOutput> {
    let synth = cfg.synth_config();
    let (ds, table) = synth_zsl(&synth)?;
    let irrelevant = synth_irrelevant(&synth, cfg.n_irrelevant)?;
    let p = &cfg.paths;
    save_features(&p.features, ds.features(), ds.labels(), force)?;
    save_embeddings(&p.embeddings, &table, force)?;
    save_split(&p.split, &ds.split(), force)?;
    save_unlabeled(&p.irrelevant, &irrelevant, force)?;
    Ok(CommandOutput {
        written: vec![
            p.features.clone(),
            p.embeddings.clone(),
            p.split.clone(),
            p.irrelevant.clone(),
        ],
        audit: Audit::default(),
    })
}

/// Build the full rule pool, seen classes first.
pub fn craft_rules(cfg: &RunConfig, kind: RuleKind, ds: &AuditedDataset) -> Result<RuleSet> {
    let table = load_embeddings(&cfg.paths.embeddings)?;
    let ids = ds.class_ids();
    match kind {
        RuleKind::Semantic => semantic_rules(&table, ids, cfg.craft_normalize),
        RuleKind::Visual => {
            let init = init_extractor(cfg, kind, ds.feature_dim(), cfg.feature_dim)?;
            let (x, y) = ds.rows(&fit_rows(ds, cfg));
            let seen = ds.seen_classes();
            let protos = seen_prototypes(&init.forward(&x)?, &y, seen)?;
            let s = table.rows_for(seen)?;
            let lambda = match cfg.craft_lambda {
                Lambda::Fixed(l) => l,
                Lambda::Auto => cross_validate_lambda(&s, &protos, &cfg.craft_lambda_grid, cfg.craft_folds)?,
            };
            let w = fit_projection(&s, &protos, lambda)?;
            let unseen = unseen_prototypes(&w, &table.rows_for(ds.unseen_classes())?)?;
            visual_rules(&protos, &unseen, ids, cfg.craft_normalize)
        }
    }
}

pub fn cmd_craft(cfg: &RunConfig, force: bool) -> Result<CommandOutput> {
    let ds = load_dataset(cfg)?;
    let rules = craft_rules(cfg, cfg.craft_mode, &ds)?;
    save_rules(&cfg.paths.rules, &rules, force)?;
    Ok(CommandOutput {
        written: vec![cfg.paths.rules.clone()],
        audit: Audit::of(&ds),
    })
}

/// Train an extractor against the seen part of a rule pool. With
/// `train.finetune = false` the initial extractor is kept as is.
pub fn train_model(cfg: &RunConfig, pool: &RuleSet, ds: &AuditedDataset) -> Result<CraftedModel> {
    check_classes(pool, ds, "the rule pool")?;
    let seen_rules = pool.subset(ds.seen_classes())?;
    let init = init_extractor(cfg, pool.kind(), ds.feature_dim(), pool.dim())?;
    let extractor = if cfg.finetune {
        let (x, y) = ds.rows(&fit_rows(ds, cfg));
        train_crafted(&init, &seen_rules, &x, &y, &cfg.train_config(pool.kind()))?.extractor
    } else {
        init
    };
    CraftedModel::new(extractor, seen_rules, cfg.train.temperature)
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<CommandOutput> {
    let ds = load_dataset(cfg)?;
    let pool = load_rules(&cfg.paths.rules)?;
    let model = train_model(cfg, &pool, &ds)?;
    model.save(&cfg.paths.model, force)?;
    Ok(CommandOutput {
        written: vec![cfg.paths.model.clone()],
        audit: Audit::of(&ds),
    })
}

/// Fit the seen/unseen discriminator of a trained model.
pub fn fit_discriminator(
    cfg: &RunConfig,
    model: &CraftedModel,
    ds: &AuditedDataset,
    irrelevant: &DenseMatrix,
) -> Result<Discriminator> {
    let (x, _) = ds.rows(&fit_rows(ds, cfg));
    let positives = seen_logits(model, &x)?;
    let irrelevant_logits = seen_logits(model, irrelevant)?;
    let base = cfg.mixup_config(positives.rows());
    let mixup = MixupConfig {
        seed: derive_seed(base.seed, &model.seen_rules.kind().to_string()),
        ..base
    };
    let negatives = synth_negative_logits(&positives, &irrelevant_logits, &mixup)?;
    let tau = model.temperature;
    let mut disc = train_discriminator(
        &cfg.disc_input.prepare_rows(&positives, tau)?,
        &cfg.disc_input.prepare_rows(&negatives, tau)?,
        &cfg.disc,
    )?;
    disc.input = cfg.disc_input;
    Ok(disc)
}

pub fn cmd_rebalance(cfg: &RunConfig, force: bool) -> Result<CommandOutput> {
    let ds = load_dataset(cfg)?;
    let model = CraftedModel::load(&cfg.paths.model)?;
    let irrelevant = load_unlabeled(&cfg.paths.irrelevant)?;
    let disc = fit_discriminator(cfg, &model, &ds, &irrelevant)?;
    disc.save(&cfg.paths.disc, force)?;
    Ok(CommandOutput {
        written: vec![cfg.paths.disc.clone()],
        audit: Audit::of(&ds),
    })
}

/// One ensemble member at evaluation time.
#[derive(Debug, Clone)]
pub struct Member {
    pub model: CraftedModel,
    pub pool: RuleSet,
    pub disc: Option<Discriminator>,
}

impl Member {
    fn n_seen(&self) -> usize {
        self.model.seen_rules.len()
    }

    /// `p_D` per row of `logits`, or `None` when the scheme does not use one.
    fn p_d(&self, logits: &DenseMatrix, truth_seen: &[bool], rebalance: Rebalance) -> Result<Option<Vec<f64>>> {
        let cs = self.n_seen();
        match rebalance {
            Rebalance::None | Rebalance::Calibrate(_) => Ok(None),
            Rebalance::Oracle => Ok(Some(truth_seen.iter().map(|&s| oracle_p(s)).collect())),
            Rebalance::Learned => {
                let disc = self
                    .disc
                    .as_ref()
                    .ok_or_else(|| Error::Config("learned rebalancing needs a discriminator per model".into()))?;
                logits
                    .row_iter()
                    .map(|row| disc.p_seen_logits(&row[..cs], self.model.temperature))
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            }
        }
    }
}

fn member_paths(list: &[PathBuf], fallback: &Path) -> Vec<PathBuf> {
    if list.is_empty() {
        vec![fallback.to_path_buf()]
    } else {
        list.to_vec()
    }
}

/// Load the evaluation members named by the config and check them against the split.
pub fn load_members(cfg: &RunConfig, ds: &AuditedDataset) -> Result<Vec<Member>> {
    let models = member_paths(&cfg.eval_models, &cfg.paths.model);
    let pools = member_paths(&cfg.eval_rules, &cfg.paths.rules);
    let want = if cfg.eval_ensemble { 2 } else { 1 };
    if models.len() != want || pools.len() != want {
        return Err(Error::Config(format!(
            "expected {want} model(s) and rule pool(s), got {} and {}",
            models.len(),
            pools.len()
        )));
    }
    let discs = if cfg.eval_rebalance == Rebalance::Learned {
        let d = member_paths(&cfg.eval_discs, &cfg.paths.disc);
        if d.len() != want {
            return Err(Error::Config(format!(
                "expected {want} discriminator(s), got {}",
                d.len()
            )));
        }
        d.iter()
            .map(|p| Discriminator::load(p).map(Some))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; want]
    };
    let mut members = Vec::with_capacity(want);
    for ((m, r), disc) in models.iter().zip(&pools).zip(discs) {
        let member = Member {
            model: CraftedModel::load(m)?,
            pool: load_rules(r)?,
            disc,
        };
        check_classes(&member.pool, ds, &r.display().to_string())?;
        check_pool(&member.model, &member.pool)?;
        if let Some(d) = &member.disc {
            if d.dim() != member.n_seen() {
                return Err(Error::Consistency(format!(
                    "discriminator expects {} seen logits, the model has {}",
                    d.dim(),
                    member.n_seen()
                )));
            }
        }
        members.push(member);
    }
    Ok(members)
}

fn adjust(scores: &[f64], mask: &[bool], rebalance: Rebalance, p_d: Option<f64>) -> Result<Vec<f64>> {
    match (rebalance, p_d) {
        (Rebalance::Calibrate(g), _) => Ok(calibrate_stack(scores, mask, g)),
        (Rebalance::Learned | Rebalance::Oracle, Some(p)) => rebalance_scores(scores, mask, p),
        _ => Ok(scores.to_vec()),
    }
}

/// Joint-pool scores: smooth each member, rebalance, and average in the configured order.
fn joint_scores(
    members: &[Member],
    logits: &[DenseMatrix],
    truth_seen: &[bool],
    tau: f64,
    rebalance: Rebalance,
    order: RebalanceOrder,
) -> Result<DenseMatrix> {
    let cs = members[0].n_seen();
    let c = logits[0].cols();
    let mask: Vec<bool> = (0..c).map(|j| j < cs).collect();
    let probs = logits
        .iter()
        .map(|l| softmax_rows(l, tau))
        .collect::<Result<Vec<_>>>()?;
    let pds = members
        .iter()
        .zip(logits)
        .map(|(m, l)| m.p_d(l, truth_seen, rebalance))
        .collect::<Result<Vec<_>>>()?;
    let n = logits[0].rows();
    let k = members.len() as f64;
    let mut data = Vec::with_capacity(n * c);
    for i in 0..n {
        let mut row = vec![0.0; c];
        match order {
            RebalanceOrder::Member => {
                for (p, pd) in probs.iter().zip(&pds) {
                    let adjusted = adjust(p.row(i), &mask, rebalance, pd.as_ref().map(|v| v[i]))?;
                    row.iter_mut().zip(adjusted).for_each(|(r, a)| *r += a / k);
                }
            }
            RebalanceOrder::Average => {
                for p in &probs {
                    row.iter_mut().zip(p.row(i)).for_each(|(r, a)| *r += a / k);
                }
                let pd = pds
                    .iter()
                    .map(|v| v.as_ref().map(|v| v[i]))
                    .sum::<Option<f64>>()
                    .map(|s| s / k);
                row = adjust(&row, &mask, rebalance, pd)?;
            }
        }
        data.extend(row);
    }
    DenseMatrix::new(n, c, data)
}

fn member_logits(members: &[Member], x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    members.iter().map(|m| zsl_logits(&m.model, x, &m.pool)).collect()
}

fn unseen_columns(logits: &DenseMatrix, from: usize) -> DenseMatrix {
    let cols: Vec<usize> = (from..logits.cols()).collect();
    logits.select_cols(&cols)
}

/// H between seen-validation accuracy and the share of task-irrelevant samples the
/// joint pool sends to unseen classes. Seen-only data cannot measure unseen
/// accuracy, so irrelevant samples stand in for it.
fn tau_criterion(
    members: &[Member],
    cfg: &RunConfig,
    tau: f64,
    val: &(DenseMatrix, Vec<usize>),
    irrelevant: &DenseMatrix,
    class_ids: &[usize],
    seen: &[usize],
) -> Result<f64> {
    let (x, y) = val;
    let scores = joint_scores(
        members,
        &member_logits(members, x)?,
        &vec![true; y.len()],
        tau,
        cfg.eval_rebalance,
        cfg.eval_order,
    )?;
    let pred: Vec<usize> = predict_rows(&scores)?.into_iter().map(|k| class_ids[k]).collect();
    let present: Vec<usize> = seen.iter().copied().filter(|c| y.contains(c)).collect();
    let s = mean_per_class_accuracy(&pred, y, &present)?;
    let scores = joint_scores(
        members,
        &member_logits(members, irrelevant)?,
        &vec![false; irrelevant.rows()],
        tau,
        cfg.eval_rebalance,
        cfg.eval_order,
    )?;
    let cs = seen.len();
    let routed = predict_rows(&scores)?.into_iter().filter(|&k| k >= cs).count();
    Ok(harmonic_mean(s, routed as f64 / irrelevant.rows().max(1) as f64))
}

/// Evaluate, render the report and return it without writing anything.
pub fn evaluate(cfg: &RunConfig, ds: &AuditedDataset) -> Result<(PredictionReport, f64, String)> {
    let members = load_members(cfg, ds)?;
    let class_ids = ds.class_ids().to_vec();
    let seen = ds.seen_classes().to_vec();
    let unseen = ds.unseen_classes().to_vec();
    let cs = seen.len();

    let tau = if cfg.eval_tau_select {
        let val = ds.rows(&validation_rows(ds, cfg));
        if val.1.is_empty() {
            return Err(Error::Invalid("temperature selection found no validation rows".into()));
        }
        let irrelevant = load_unlabeled(&cfg.paths.irrelevant)?;
        select_temperature(&cfg.eval_tau_grid, |t| {
            tau_criterion(&members, cfg, t, &val, &irrelevant, &class_ids, &seen)
        })?
    } else {
        cfg.eval_tau
    };

    let test = ds.test_indices();
    let (x, y) = ds.rows(&test);
    let truth_seen: Vec<bool> = y.iter().map(|c| seen.contains(c)).collect();
    let logits = member_logits(&members, &x)?;

    // unseen-only pool
    let unseen_rows: Vec<usize> = (0..y.len()).filter(|&i| !truth_seen[i]).collect();
    let mut zsl_scores: Option<DenseMatrix> = None;
    for l in &logits {
        let p = softmax_rows(&unseen_columns(&l.select_rows(&unseen_rows), cs), tau)?;
        zsl_scores = Some(match zsl_scores {
            None => p,
            Some(prev) => ensemble_rows(&prev, &p)?,
        });
    }
    let zsl_scores = zsl_scores.expect("at least one member");
    let zsl_pred: Vec<usize> = predict_rows(&zsl_scores)?.into_iter().map(|k| unseen[k]).collect();
    let zsl_truth: Vec<usize> = unseen_rows.iter().map(|&i| y[i]).collect();
    let t1 = zsl_t1(&zsl_pred, &zsl_truth, &unseen)?;

    // joint pool
    let split_metrics = |scores: &DenseMatrix| -> Result<(Vec<usize>, (f64, f64, f64))> {
        let pred: Vec<usize> = predict_rows(scores)?.into_iter().map(|k| class_ids[k]).collect();
        let (si, ui): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| truth_seen[i]);
        let pick = |ix: &[usize], v: &[usize]| ix.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let m = gzsl_h(
            &pick(&si, &pred),
            &pick(&si, &y),
            &seen,
            &pick(&ui, &pred),
            &pick(&ui, &y),
            &unseen,
        )?;
        Ok((pred, m))
    };
    let joint = joint_scores(&members, &logits, &truth_seen, tau, cfg.eval_rebalance, cfg.eval_order)?;
    let (joint_pred, (s, u, h)) = split_metrics(&joint)?;

    let mut text = format!("{REPORT_HEADER}\n");
    for (k, v) in cfg.entries() {
        let _ = writeln!(text, "# {k} = {v}");
    }
    let per_class = match cfg.eval_mode {
        EvalMode::Zsl => {
            for (r, &i) in unseen_rows.iter().enumerate() {
                let max = zsl_scores.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(text, "{} {} {} {max:.6}", test[i], y[i], zsl_pred[r]);
            }
            per_class_accuracy(&zsl_pred, &zsl_truth, &unseen)?
        }
        EvalMode::Gzsl => {
            for i in 0..y.len() {
                let max = joint.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(text, "{} {} {} {max:.6}", test[i], y[i], joint_pred[i]);
            }
            per_class_accuracy(&joint_pred, &y, &class_ids)?
        }
    };
    for &g in &cfg.eval_gamma_sweep {
        let scores = joint_scores(
            &members,
            &logits,
            &truth_seen,
            tau,
            Rebalance::Calibrate(g),
            cfg.eval_order,
        )?;
        let (_, (gs, gu, gh)) = split_metrics(&scores)?;
        let _ = writeln!(text, "sweep gamma={g} S={gs:.6} U={gu:.6} H={gh:.6}");
    }
    if cfg.eval_tau_select {
        let _ = writeln!(text, "selected_tau={tau}");
    }
    let report = PredictionReport {
        per_class_accuracy: per_class,
        t1,
        s,
        u,
        h,
    };
    text.push_str(&report.metrics_block());
    Ok((report, tau, text))
}

pub fn cmd_eval(cfg: &RunConfig, force: bool) -> Result<EvalOutput> {
    let ds = load_dataset(cfg)?;
    let (report, temperature, text) = evaluate(cfg, &ds)?;
    write_output(&cfg.paths.report, &text, force)?;
    Ok(EvalOutput {
        written: vec![cfg.paths.report.clone()],
        audit: Audit::of(&ds),
        report,
        temperature,
        text,
    })
}

/// The resolved configuration embedded in a report.
pub fn report_config(report: &str) -> Result<RunConfig> {
    let mut lines = report.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Config("not a report: missing header".into()));
    }
    let body: String = lines
        .map_while(|l| l.strip_prefix("# "))
        .map(|l| format!("{l}\n"))
        .collect();
    RunConfig::parse(&body, &[])
}

/// `T1`, `S`, `U`, `H` parsed back from a report's metrics block.
pub fn report_metrics(report: &str) -> Result<[f64; 4]> {
    let mut out = [f64::NAN; 4];
    for line in report.lines() {
        for (k, key) in ["T1=", "S=", "U=", "H="].iter().enumerate() {
            if let Some(v) = line.strip_prefix(key) {
                out[k] = v
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad metric line `{line}`")))?;
            }
        }
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid("report has no complete metrics block".into()));
    }
    Ok(out)
}
