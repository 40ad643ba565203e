use super::extractor::FeatureExtractor;
use super::optim::{adam_step, sgd_step, AdamState, Optimizer};
use crate::crafting::RuleSet;
use crate::error::{Error, Result};
use crate::inference::softmax_in_place;
use crate::linalg::{DenseMatrix, SeededRng};
use crate::par;

/// Rows per gradient work unit. Fixed so the reduction order never depends on the
/// number of threads.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        // zero is allowed: it reproduces the untouched extractor
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("train.learning_rate must be finite and >= 0".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("train.temperature must be > 0".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::Config("adam needs 0 <= beta < 1 and eps > 0".into()));
            }
        }
        Ok(())
    }
}

fn rule_positions(rules: &RuleSet, labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            rules.position(l).ok_or(Error::LabelOutOfRange {
                label: l,
                classes: rules.len(),
            })
        })
        .collect()
}

/// Summed (not averaged) loss and gradients of one chunk of rows.
fn chunk_loss_and_grad(
    extractor: &FeatureExtractor,
    rules: &DenseMatrix,
    batch: &DenseMatrix,
    targets: &[usize],
    temperature: f64,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let cache = extractor.forward_cached(batch)?;
    let features = cache.activations.last().expect("at least one layer");
    let logits = features.matmul_transposed(rules)?;

    let classes = rules.rows();
    let mut loss = 0.0;
    let mut d_logits = Vec::with_capacity(logits.rows() * classes);
    for (i, &t) in targets.iter().enumerate() {
        let mut p: Vec<f64> = logits.row(i).iter().map(|l| l / temperature).collect();
        let lse = softmax_in_place(&mut p);
        loss += lse - logits.get(i, t) / temperature;
        p[t] -= 1.0;
        d_logits.extend(p.into_iter().map(|x| x / temperature));
    }
    let d_logits = DenseMatrix::new(logits.rows(), classes, d_logits)?;

    // dL/df; the rules are constants here and get no gradient
    let mut upstream = d_logits.matmul(rules)?;
    let layers = extractor.num_layers();
    let mut grads = vec![DenseMatrix::zeros(0, 0); 2 * layers];
    for k in (0..layers).rev() {
        let out = &cache.activations[k + 1];
        let d_z: Vec<f64> = upstream
            .data()
            .iter()
            .zip(out.data())
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let d_z = DenseMatrix::new(out.rows(), out.cols(), d_z)?;
        grads[2 * k] = d_z.transpose().matmul(&cache.activations[k])?;
        let mut db = vec![0.0; d_z.cols()];
        for row in d_z.row_iter() {
            db.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        grads[2 * k + 1] = DenseMatrix::new(1, db.len(), db)?;
        if k > 0 {
            upstream = d_z.matmul(extractor.weights(k))?;
        }
    }
    Ok((loss, grads))
}

/// Mean cross-entropy of `softmax(f(x)·rᵀ / τ)` against `labels` (class ids of
/// `rules`), and its gradient with respect to the extractor parameters only.
pub fn crafted_loss_and_grad(
    extractor: &FeatureExtractor,
    rules: &RuleSet,
    batch: &DenseMatrix,
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, Vec<DenseMatrix>)> {
    if rules.dim() != extractor.output_dim() {
        return Err(Error::shape(
            "crafted_loss_and_grad",
            format!("rule dim {} vs feature dim {}", rules.dim(), extractor.output_dim()),
        ));
    }
    if labels.len() != batch.rows() || batch.rows() == 0 {
        return Err(Error::shape(
            "crafted_loss_and_grad",
            format!("{} labels for {} rows", labels.len(), batch.rows()),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {temperature}")));
    }
    let targets = rule_positions(rules, labels)?;
    let n = batch.rows();
    let chunks = n.div_ceil(GRAD_CHUNK);
    let partials = par::map_indexed(chunks, |c| {
        let idx: Vec<usize> = (c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n)).collect();
        chunk_loss_and_grad(
            extractor,
            rules.rules(),
            &batch.select_rows(&idx),
            &targets[idx[0]..=idx[idx.len() - 1]],
            temperature,
        )
    });
    let mut total_loss = 0.0;
    let mut total: Option<Vec<DenseMatrix>> = None;
    for part in partials {
        let (loss, grads) = part?;
        total_loss += loss;
        total = Some(match total {
            None => grads,
            Some(acc) => acc
                .iter()
                .zip(&grads)
                .map(|(a, g)| a.add(g))
                .collect::<Result<Vec<_>>>()?,
        });
    }
    let scale = 1.0 / n as f64;
    let grads = total
        .expect("n > 0")
        .iter()
        .map(|g| g.scale(scale))
        .collect::<Result<Vec<_>>>()?;
    Ok((total_loss * scale, grads))
}

/// Mean crafted loss over a data set, without gradients.
pub fn crafted_loss(
    extractor: &FeatureExtractor,
    rules: &RuleSet,
    features: &DenseMatrix,
    labels: &[usize],
    temperature: f64,
) -> Result<f64> {
    let targets = rule_positions(rules, labels)?;
    let logits = extractor.forward(features)?.matmul_transposed(rules.rules())?;
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let mut p: Vec<f64> = logits.row(i).iter().map(|l| l / temperature).collect();
        loss += softmax_in_place(&mut p) - logits.get(i, t) / temperature;
    }
    Ok(loss / labels.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub extractor: FeatureExtractor,
    /// Loss on the full training set before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fit the extractor so its features match the frozen `rules`.
///
/// Only the extractor is updated; `rules` is borrowed immutably. Every training
/// label must be a class of `rules`.
pub fn train_crafted(
    extractor: &FeatureExtractor,
    rules: &RuleSet,
    features: &DenseMatrix,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    rule_positions(rules, labels)?;
    if features.rows() == 0 {
        return Err(Error::Invalid("no training samples".into()));
    }
    let initial_loss = crafted_loss(extractor, rules, features, labels, config.temperature)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut net = extractor.clone();
    let mut adam = AdamState::new(net.params());
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..features.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch = features.select_rows(batch_idx);
            let batch_labels: Vec<usize> = batch_idx.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = match crafted_loss_and_grad(&net, rules, &batch, &batch_labels, config.temperature) {
                Ok(v) => v,
                Err(Error::Invalid(_)) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sum += loss * batch_idx.len() as f64;
            if config.learning_rate == 0.0 {
                continue;
            }
            match config.optimizer {
                Optimizer::Sgd => sgd_step(net.params_mut(), &grads, config.learning_rate),
                Optimizer::Adam { beta1, beta2, eps } => adam_step(
                    net.params_mut(),
                    &grads,
                    &mut adam,
                    config.learning_rate,
                    beta1,
                    beta2,
                    eps,
                ),
            }
            if net.params().iter().any(|p| p.data().iter().any(|x| !x.is_finite())) {
                return Err(Error::Diverged { epoch });
            }
        }
        let epoch_loss = sum / features.rows() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainOutcome {
        extractor: net,
        initial_loss,
        epoch_losses,
    })
}
