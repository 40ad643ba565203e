mod common;

use common::Bench;
use zslcraft::backbone::{train_crafted, CraftedModel, FeatureExtractor};
use zslcraft::crafting::{fit_projection, load_rules, RuleKind};
use zslcraft::dataio::{load_embeddings, load_unlabeled};
use zslcraft::inference::{predict, seen_logits, softmax_rows};
use zslcraft::linalg::{dot, l2_norm, DenseMatrix, SeededRng};
use zslcraft::pipeline::{
    cmd_craft, cmd_eval, cmd_rebalance, cmd_train, fit_rows, load_dataset, report_config, report_metrics,
};

fn mean_max(probs: &DenseMatrix) -> f64 {
    probs
        .row_iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / probs.rows() as f64
}

#[test]
fn semantic_training_fits_seen_classes() {
    let bench = Bench::new(&[]);
    let cfg = bench.config(&[("craft.mode", "semantic")]);
    let ds = load_dataset(&cfg).unwrap();
    let table = load_embeddings(&cfg.paths.embeddings).unwrap();
    let seen = ds.seen_classes().to_vec();
    let rules = zslcraft::crafting::semantic_rules(&table, &seen, false).unwrap();
    let (x, y) = ds.train_rows();
    let init = FeatureExtractor::init(
        &[x.cols(), cfg.hidden, rules.dim()],
        &mut SeededRng::new(cfg.init_seed(RuleKind::Semantic)),
    )
    .unwrap();
    let out = train_crafted(&init, &rules, &x, &y, &cfg.train_config(RuleKind::Semantic)).unwrap();
    assert!(out.epoch_losses.last().unwrap() < &out.initial_loss);

    let model = CraftedModel::new(out.extractor, rules, 1.0).unwrap();
    let logits = seen_logits(&model, &x).unwrap();
    let correct = logits
        .row_iter()
        .zip(&y)
        .filter(|(row, &t)| seen[predict(row).unwrap()] == t)
        .count();
    let acc = correct as f64 / y.len() as f64;
    assert!(acc >= 0.95, "seen-train top-1 {acc}");
}

#[test]
fn synthetic_benchmark_diagnostics() {
    let bench = Bench::new(&[]);
    let cfg = bench.config(&[]);
    let ds = load_dataset(&cfg).unwrap();
    let table = load_embeddings(&cfg.paths.embeddings).unwrap();
    let (seen, unseen) = (ds.seen_classes().to_vec(), ds.unseen_classes().to_vec());

    // nearest-embedding baseline: regress embeddings on raw features, then pick the
    // closest unseen embedding
    let (x, y) = ds.train_rows();
    let targets = DenseMatrix::from_rows(
        &y.iter()
            .map(|&c| table.embeddings().row(table.row_of(c).unwrap()).to_vec())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let map = fit_projection(&x, &targets, 1.0).unwrap();
    let test = ds.test_indices();
    let (xt, yt) = ds.rows(&test);
    let unseen_rows: Vec<usize> = (0..yt.len()).filter(|&i| unseen.contains(&yt[i])).collect();
    let projected = xt.select_rows(&unseen_rows).matmul(&map).unwrap();
    let candidates = table.rows_for(&unseen).unwrap();
    let mut correct = 0;
    for (r, &i) in unseen_rows.iter().enumerate() {
        let dist: Vec<f64> = candidates
            .row_iter()
            .map(|e| {
                -projected
                    .row(r)
                    .iter()
                    .zip(e)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .collect();
        correct += usize::from(unseen[predict(&dist).unwrap()] == yt[i]);
    }
    let acc = correct as f64 / unseen_rows.len() as f64;
    assert!(acc > 0.2, "nearest-embedding accuracy {acc}");

    // predicted unseen prototypes against the true unseen means of the initial features
    let rules_path = bench.path("rules_v.txt");
    let model_path = bench.path("model_v.txt");
    let vcfg = bench.config(&[("paths.rules", &rules_path), ("paths.model", &model_path)]);
    cmd_craft(&vcfg, false).unwrap();
    let pool = load_rules(&vcfg.paths.rules).unwrap();
    let init = FeatureExtractor::init(
        &[ds.feature_dim(), cfg.hidden, cfg.feature_dim],
        &mut SeededRng::new(cfg.init_seed(RuleKind::Visual)),
    )
    .unwrap();
    let feats = init.forward(&xt).unwrap();
    let mut cosines = Vec::new();
    for &c in &unseen {
        let rows: Vec<usize> = (0..yt.len()).filter(|&i| yt[i] == c).collect();
        let mut mean = vec![0.0; feats.cols()];
        for &i in &rows {
            mean.iter_mut()
                .zip(feats.row(i))
                .for_each(|(m, v)| *m += v / rows.len() as f64);
        }
        let predicted = pool.rules().row(pool.position(c).unwrap());
        cosines.push(dot(predicted, &mean) / (l2_norm(predicted) * l2_norm(&mean)));
    }
    let mean_cos = cosines.iter().sum::<f64>() / cosines.len() as f64;
    assert!(mean_cos >= 0.8, "mean prototype cosine {mean_cos}: {cosines:?}");

    // irrelevant samples are scored less confidently than seen test samples
    cmd_train(&vcfg, false).unwrap();
    let model = CraftedModel::load(&vcfg.paths.model).unwrap();
    let seen_rows: Vec<usize> = (0..yt.len()).filter(|&i| seen.contains(&yt[i])).collect();
    let seen_conf = mean_max(&softmax_rows(&seen_logits(&model, &xt.select_rows(&seen_rows)).unwrap(), 1.0).unwrap());
    let irrelevant = load_unlabeled(&cfg.paths.irrelevant).unwrap();
    let irr_conf = mean_max(&softmax_rows(&seen_logits(&model, &irrelevant).unwrap(), 1.0).unwrap());
    assert!(irr_conf < seen_conf, "irrelevant {irr_conf} vs seen {seen_conf}");
}

#[test]
fn training_commands_never_serve_unseen_rows() {
    let bench = Bench::new(&[("train.epochs", "5")]);
    let ds = load_dataset(&bench.config(&[])).unwrap();
    for (mode, tau_select) in [("semantic", "false"), ("visual", "true")] {
        let rules = bench.path(&format!("rules_{mode}.txt"));
        let model = bench.path(&format!("model_{mode}.txt"));
        let disc = bench.path(&format!("disc_{mode}.txt"));
        let cfg = bench.config(&[
            ("craft.mode", mode),
            ("eval.tau_select", tau_select),
            ("paths.rules", &rules),
            ("paths.model", &model),
            ("paths.disc", &disc),
        ]);
        let audits = [
            cmd_craft(&cfg, false).unwrap().audit,
            cmd_train(&cfg, false).unwrap().audit,
            cmd_rebalance(&cfg, false).unwrap().audit,
        ];
        for audit in &audits {
            assert!(audit.served_unseen.is_empty(), "{mode}: {:?}", audit.served_unseen);
            assert!(
                audit.served_outside_train.is_empty(),
                "{mode}: {:?}",
                audit.served_outside_train
            );
        }
        assert!(!audits[1].served.is_empty());
        let eval = cmd_eval(&cfg, false).unwrap();
        assert!(!eval.audit.served_unseen.is_empty());
        std::fs::remove_file(&cfg.paths.report).unwrap();
        assert!(fit_rows(&ds, &cfg)
            .iter()
            .all(|&i| ds.seen_classes().contains(&ds.rows(&[i]).1[0])));
    }
}

#[test]
fn calibration_sweep_trades_seen_for_unseen() {
    let bench = Bench::new(&[("train.epochs", "20")]);
    bench.member("visual", "v", &[]);
    let out = bench.eval(&["v"], "none", &[("eval.gamma_sweep", "0, 0.1, 0.2, 0.4, 0.6, 0.8, 1")]);
    let sweep: Vec<(f64, f64)> = out
        .text
        .lines()
        .filter(|l| l.starts_with("sweep "))
        .map(|l| {
            let field = |k: &str| {
                l.split(' ')
                    .find_map(|f| f.strip_prefix(k))
                    .unwrap()
                    .parse::<f64>()
                    .unwrap()
            };
            (field("S="), field("U="))
        })
        .collect();
    assert_eq!(sweep.len(), 7);
    for w in sweep.windows(2) {
        assert!(w[1].0 <= w[0].0, "{sweep:?}");
        assert!(w[1].1 >= w[0].1, "{sweep:?}");
    }
    assert!((sweep[0].0 - out.report.s).abs() < 5e-7);
    assert!(sweep[6].1 > sweep[0].1, "{sweep:?}");
}

#[test]
fn zsl_eval_reuses_model_and_report_reproduces() {
    let bench = Bench::new(&[("train.epochs", "10")]);
    bench.member("semantic", "s", &[]);
    let model_path = bench.path("model_s.txt");
    let before = std::fs::read(&model_path).unwrap();
    let out = bench.eval(&["s"], "learned", &[("eval.mode", "zsl")]);
    assert_eq!(std::fs::read(&model_path).unwrap(), before);

    let cfg = report_config(&out.text).unwrap();
    let again = cmd_eval(&cfg, true).unwrap();
    assert_eq!(again.text, out.text);
    assert_eq!(
        report_metrics(&out.text).unwrap(),
        [out.report.t1, out.report.s, out.report.u, out.report.h].map(|v| format!("{v:.6}").parse().unwrap())
    );
}

#[test]
fn temperature_selection_reports_grid_value() {
    let bench = Bench::new(&[("train.epochs", "10")]);
    bench.member("semantic", "s", &[("eval.tau_select", "true")]);
    let out = bench.eval(
        &["s"],
        "learned",
        &[("eval.tau_select", "true"), ("eval.tau_grid", "0.5, 1, 2")],
    );
    assert!([0.5, 1.0, 2.0].contains(&out.temperature));
    assert!(out.text.contains(&format!("selected_tau={}", out.temperature)));
}
