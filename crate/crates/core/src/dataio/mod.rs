//! Datasets, class embeddings, splits and the synthetic attribute benchmark.

pub mod formats;
pub mod hexfloat;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::linalg::{rand_normal, DenseMatrix, SeededRng};

pub use formats::{
    load_embeddings, load_features, load_split, load_unlabeled, save_embeddings, save_features, save_split,
    save_unlabeled, write_output,
};

/// Class partition and sample splits. Sample indices address rows of the feature file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Labeled features with a seen/unseen class partition and train/test masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ZslDataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    class_ids: Vec<usize>,
    seen_classes: Vec<usize>,
    unseen_classes: Vec<usize>,
    train_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

impl ZslDataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, split: &Split) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Invalid(format!("{} labels for {n} samples", labels.len())));
        }
        let seen: BTreeSet<usize> = split.seen.iter().copied().collect();
        let unseen: BTreeSet<usize> = split.unseen.iter().copied().collect();
        if seen.len() != split.seen.len() || unseen.len() != split.unseen.len() {
            return Err(Error::Invalid("duplicate class id in split".into()));
        }
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::Invalid(format!("class {c} is both seen and unseen")));
        }
        if let Some(&l) = labels.iter().find(|l| !seen.contains(l) && !unseen.contains(l)) {
            return Err(Error::Invalid(format!("label {l} is neither seen nor unseen")));
        }
        let mut train_mask = vec![false; n];
        let mut test_mask = vec![false; n];
        for (mask, idx, name) in [
            (&mut train_mask, &split.train, "train"),
            (&mut test_mask, &split.test, "test"),
        ] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Invalid(format!("{name} index {i} out of range ({n} samples)")));
                }
                if mask[i] {
                    return Err(Error::Invalid(format!("{name} index {i} listed twice")));
                }
                mask[i] = true;
            }
        }
        for i in 0..n {
            if train_mask[i] && test_mask[i] {
                return Err(Error::Invalid(format!("sample {i} is in both train and test")));
            }
            if train_mask[i] && !seen.contains(&labels[i]) {
                return Err(Error::Invalid(format!(
                    "training sample {i} has unseen label {}",
                    labels[i]
                )));
            }
        }
        for &c in &split.seen {
            if !(0..n).any(|i| train_mask[i] && labels[i] == c) {
                return Err(Error::Invalid(format!("seen class {c} has no training sample")));
            }
        }
        let class_ids = split.seen.iter().chain(&split.unseen).copied().collect();
        Ok(Self {
            features,
            labels,
            class_ids,
            seen_classes: split.seen.clone(),
            unseen_classes: split.unseen.clone(),
            train_mask,
            test_mask,
        })
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Seen classes followed by unseen classes.
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen_classes
    }

    pub fn unseen_classes(&self) -> &[usize] {
        &self.unseen_classes
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen_classes.contains(&class)
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.train_mask[i]).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.test_mask[i]).collect()
    }

    pub fn split(&self) -> Split {
        Split {
            seen: self.seen_classes.clone(),
            unseen: self.unseen_classes.clone(),
            train: self.train_indices(),
            test: self.test_indices(),
        }
    }
}

/// One embedding row per class, aligned with `class_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    embeddings: DenseMatrix,
    class_ids: Vec<usize>,
}

impl ClassEmbeddingTable {
    pub fn new(embeddings: DenseMatrix, class_ids: Vec<usize>) -> Result<Self> {
        if embeddings.rows() != class_ids.len() {
            return Err(Error::Invalid(format!(
                "{} embedding rows for {} class ids",
                embeddings.rows(),
                class_ids.len()
            )));
        }
        let unique: BTreeSet<_> = class_ids.iter().collect();
        if unique.len() != class_ids.len() {
            return Err(Error::Invalid("duplicate class id in embedding table".into()));
        }
        if let Some(i) = (0..embeddings.rows()).find(|&i| embeddings.row(i).iter().all(|&x| x == 0.0)) {
            return Err(Error::Invalid(format!(
                "class {} has an all-zero embedding",
                class_ids[i]
            )));
        }
        Ok(Self { embeddings, class_ids })
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn row_of(&self, class: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    /// Embedding rows for `classes`, in that order.
    pub fn rows_for(&self, classes: &[usize]) -> Result<DenseMatrix> {
        let idx = classes
            .iter()
            .map(|&c| self.row_of(c).ok_or(Error::UnknownClass(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.embeddings.select_rows(&idx))
    }
}

/// Parameters of the synthetic attribute-grounded benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    /// Attribute (class embedding) dimension.
    pub q: usize,
    /// Feature dimension.
    pub d: usize,
    pub samples_per_class: usize,
    pub noise_stddev: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_seen: 15,
            n_unseen: 5,
            q: 16,
            d: 32,
            samples_per_class: 100,
            noise_stddev: 0.1,
            seed: 1,
        }
    }
}

const MAX_REJECTIONS: usize = 1000;
const TRAIN_FRACTION: f64 = 0.8;

// Stream ids of the generator seeded with `SynthConfig::seed`.
const STREAM_ATTRIBUTES: u64 = 0;
const STREAM_MAPS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_IRRELEVANT: u64 = 3;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_seen", self.n_seen),
            ("n_unseen", self.n_unseen),
            ("q", self.q),
            ("d", self.d),
            ("samples_per_class", self.samples_per_class),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("synth.{name} must be >= 1")));
            }
        }
        if !(self.noise_stddev >= 0.0) || !self.noise_stddev.is_finite() {
            return Err(Error::Config("synth.noise_stddev must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn n_classes(&self) -> usize {
        self.n_seen + self.n_unseen
    }
}

/// Shared generator state: class attribute vectors and the two random maps.
struct Generator {
    attributes: Vec<Vec<f64>>,
    g1: DenseMatrix,
    g2: DenseMatrix,
}

fn draw_attribute(rng: &mut SeededRng, q: usize, taken: &BTreeSet<Vec<u8>>) -> Result<Vec<u8>> {
    for _ in 0..MAX_REJECTIONS {
        let bits: Vec<u8> = (0..q).map(|_| u8::from(rng.bit())).collect();
        if bits.contains(&1) && !taken.contains(&bits) {
            return Ok(bits);
        }
    }
    Err(Error::Config(format!(
        "could not draw a distinct attribute vector in {MAX_REJECTIONS} attempts (q = {q} too small?)"
    )))
}

impl Generator {
    fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::with_stream(config.seed, STREAM_ATTRIBUTES);
        let mut taken = BTreeSet::new();
        let mut attributes = Vec::with_capacity(config.n_classes());
        for _ in 0..config.n_classes() {
            let bits = draw_attribute(&mut rng, config.q, &taken)?;
            attributes.push(bits.iter().map(|&b| f64::from(b)).collect());
            taken.insert(bits);
        }
        let h = 2 * config.q;
        let mut rng = SeededRng::with_stream(config.seed, STREAM_MAPS);
        let g1 = rand_normal(&mut rng, h, config.q, 0.0, 1.0 / (config.q as f64).sqrt())?;
        let g2 = rand_normal(&mut rng, config.d, h, 0.0, 1.0 / (h as f64).sqrt())?;
        Ok(Self { attributes, g1, g2 })
    }

    fn taken(&self) -> BTreeSet<Vec<u8>> {
        self.attributes
            .iter()
            .map(|a| a.iter().map(|&x| x as u8).collect())
            .collect()
    }

    /// Noise-free feature vector `G₂·tanh(G₁·a)`.
    fn center(&self, attribute: &[f64]) -> Result<Vec<f64>> {
        let a = DenseMatrix::new(attribute.len(), 1, attribute.to_vec())?;
        let hidden = self.g1.matmul(&a)?;
        let hidden = DenseMatrix::from_raw(hidden.rows(), 1, hidden.data().iter().map(|x| x.tanh()).collect());
        Ok(self.g2.matmul(&hidden)?.into_data())
    }
}

fn noisy_rows(
    centers: impl Iterator<Item = Vec<f64>>,
    rng: &mut SeededRng,
    noise: f64,
    d: usize,
    n: usize,
) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(n * d);
    for c in centers {
        data.extend(c.iter().map(|&x| x + noise * rng.normal()));
    }
    DenseMatrix::new(n, d, data)
}

/// Generate the synthetic benchmark and its class embeddings (the binary attribute vectors).
///
/// Samples are stored class by class. The first `n_seen` classes are seen; of each seen
/// class, the first 80% of samples (at least one) are training samples. Everything else
/// is test data.
pub fn synth_zsl(config: &SynthConfig) -> Result<(ZslDataset, ClassEmbeddingTable)> {
    let generator = Generator::new(config)?;
    let n_classes = config.n_classes();
    let per = config.samples_per_class;
    let centers = generator
        .attributes
        .iter()
        .map(|a| generator.center(a))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = SeededRng::with_stream(config.seed, STREAM_NOISE);
    let features = noisy_rows(
        centers.iter().flat_map(|c| std::iter::repeat_n(c.clone(), per)),
        &mut rng,
        config.noise_stddev,
        config.d,
        n_classes * per,
    )?;
    let labels: Vec<usize> = (0..n_classes).flat_map(|c| std::iter::repeat_n(c, per)).collect();

    let n_train = ((per as f64 * TRAIN_FRACTION).floor() as usize).clamp(1, per);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        if label < config.n_seen && i % per < n_train {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    let split = Split {
        seen: (0..config.n_seen).collect(),
        unseen: (config.n_seen..n_classes).collect(),
        train,
        test,
    };
    let dataset = ZslDataset::new(features, labels, &split)?;
    let table = ClassEmbeddingTable::new(DenseMatrix::from_rows(&generator.attributes)?, (0..n_classes).collect())?;
    Ok((dataset, table))
}

/// Task-irrelevant features and the attribute vectors they were generated from.
///
/// Attribute vectors are drawn per sample and never coincide with a class vector of
/// the dataset generated from the same config.
pub fn synth_irrelevant_with_attributes(config: &SynthConfig, n_samples: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let generator = Generator::new(config)?;
    let taken = generator.taken();
    let mut rng = SeededRng::with_stream(config.seed, STREAM_IRRELEVANT);
    let mut attrs = Vec::with_capacity(n_samples);
    let mut features = Vec::with_capacity(n_samples * config.d);
    for _ in 0..n_samples {
        let bits = draw_attribute(&mut rng, config.q, &taken)?;
        let a: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        let center = generator.center(&a)?;
        features.extend(center.iter().map(|&x| x + config.noise_stddev * rng.normal()));
        attrs.push(a);
    }
    let attributes = if attrs.is_empty() {
        DenseMatrix::zeros(0, config.q)
    } else {
        DenseMatrix::from_rows(&attrs)?
    };
    Ok((DenseMatrix::new(n_samples, config.d, features)?, attributes))
}

pub fn synth_irrelevant(config: &SynthConfig, n_samples: usize) -> Result<DenseMatrix> {
    Ok(synth_irrelevant_with_attributes(config, n_samples)?.0)
}

/// Dataset access that records every sample row it serves.
///
/// Commands read samples only through this wrapper so a run can be audited for
/// unseen-class rows reaching a training stage.
#[derive(Debug)]
pub struct AuditedDataset {
    dataset: ZslDataset,
    served: Mutex<BTreeSet<usize>>,
}

impl AuditedDataset {
    pub fn new(dataset: ZslDataset) -> Self {
        Self {
            dataset,
            served: Mutex::new(BTreeSet::new()),
        }
    }

    /// Metadata only; no sample rows are exposed.
    pub fn seen_classes(&self) -> &[usize] {
        self.dataset.seen_classes()
    }

    pub fn unseen_classes(&self) -> &[usize] {
        self.dataset.unseen_classes()
    }

    pub fn class_ids(&self) -> &[usize] {
        self.dataset.class_ids()
    }

    pub fn feature_dim(&self) -> usize {
        self.dataset.features().cols()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.dataset.train_indices()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.dataset.test_indices()
    }

    /// Features and labels of the given rows.
    pub fn rows(&self, indices: &[usize]) -> (DenseMatrix, Vec<usize>) {
        self.served
            .lock()
            .expect("audit log poisoned")
            .extend(indices.iter().copied());
        let labels = indices.iter().map(|&i| self.dataset.labels()[i]).collect();
        (self.dataset.features().select_rows(indices), labels)
    }

    pub fn train_rows(&self) -> (DenseMatrix, Vec<usize>) {
        self.rows(&self.train_indices())
    }

    pub fn served(&self) -> Vec<usize> {
        self.served
            .lock()
            .expect("audit log poisoned")
            .iter()
            .copied()
            .collect()
    }

    /// Served rows whose label is an unseen class.
    pub fn served_unseen(&self) -> Vec<usize> {
        let unseen: BTreeSet<_> = self.dataset.unseen_classes().iter().collect();
        self.served()
            .into_iter()
            .filter(|&i| unseen.contains(&self.dataset.labels()[i]))
            .collect()
    }

    /// Served rows that are not training rows.
    pub fn served_outside_train(&self) -> Vec<usize> {
        self.served()
            .into_iter()
            .filter(|&i| !self.dataset.train_mask()[i])
            .collect()
    }
}

/// Group row indices by label, keyed by class id.
pub fn indices_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_seen: 4,
            n_unseen: 2,
            q: 8,
            d: 6,
            samples_per_class: 10,
            noise_stddev: 0.1,
            seed,
        }
    }

    #[test]
    fn zero_noise_gives_identical_class_samples() {
        let cfg = SynthConfig {
            noise_stddev: 0.0,
            ..small(3)
        };
        let (ds, _) = synth_zsl(&cfg).unwrap();
        assert_eq!(ds.features().row(0), ds.features().row(1));
        assert_ne!(ds.features().row(0), ds.features().row(10));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_zsl(&small(7)).unwrap();
        let b = synth_zsl(&small(7)).unwrap();
        assert_eq!(a, b);
        let c = synth_zsl(&small(8)).unwrap();
        assert_ne!(a.0.features(), c.0.features());
    }

    #[test]
    fn split_ratio() {
        let (ds, table) = synth_zsl(&SynthConfig::default()).unwrap();
        assert_eq!(ds.train_indices().len(), 15 * 80);
        assert_eq!(ds.test_indices().len(), 15 * 20 + 5 * 100);
        assert_eq!(table.embeddings().shape(), (20, 16));
        assert!(table.embeddings().data().iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn too_small_attribute_space_fails() {
        let cfg = SynthConfig {
            n_seen: 3,
            n_unseen: 1,
            q: 2,
            ..small(1)
        };
        assert!(matches!(synth_zsl(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn irrelevant_attributes_avoid_classes() {
        let cfg = SynthConfig::default();
        let (_, table) = synth_zsl(&cfg).unwrap();
        let (feats, attrs) = synth_irrelevant_with_attributes(&cfg, 300).unwrap();
        assert_eq!(feats.shape(), (300, cfg.d));
        for a in attrs.row_iter() {
            assert!(table.embeddings().row_iter().all(|c| c != a));
        }
        assert_eq!(synth_irrelevant(&cfg, 0).unwrap().shape(), (0, cfg.d));
    }

    #[test]
    fn noise_free_classes_are_separable() {
        let cfg = SynthConfig {
            noise_stddev: 0.0,
            ..SynthConfig::default()
        };
        let (ds, _) = synth_zsl(&cfg).unwrap();
        let groups = indices_by_class(ds.labels());
        let protos: Vec<(usize, Vec<f64>)> = groups
            .iter()
            .map(|(&c, idx)| (c, ds.features().row(idx[0]).to_vec()))
            .collect();
        for i in 0..ds.len() {
            let x = ds.features().row(i);
            let best = protos
                .iter()
                .min_by(|a, b| {
                    let da: f64 = a.1.iter().zip(x).map(|(p, v)| (p - v).powi(2)).sum();
                    let db: f64 = b.1.iter().zip(x).map(|(p, v)| (p - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap()
                .0;
            assert_eq!(best, ds.labels()[i]);
        }
    }

    #[test]
    fn dataset_rejects_unseen_training_sample() {
        let f = DenseMatrix::zeros(2, 1);
        let split = Split {
            seen: vec![0],
            unseen: vec![1],
            train: vec![0, 1],
            test: vec![],
        };
        assert!(ZslDataset::new(f.clone(), vec![0, 1], &split).is_err());
        let overlap = Split {
            seen: vec![0, 1],
            unseen: vec![1],
            train: vec![0],
            test: vec![1],
        };
        assert!(ZslDataset::new(f.clone(), vec![0, 1], &overlap).is_err());
        let missing = Split {
            seen: vec![0, 2],
            unseen: vec![1],
            train: vec![0],
            test: vec![1],
        };
        assert!(ZslDataset::new(f, vec![0, 1], &missing).is_err());
    }

    #[test]
    fn audit_records_rows() {
        let (ds, _) = synth_zsl(&small(1)).unwrap();
        let audited = AuditedDataset::new(ds);
        let _ = audited.train_rows();
        assert!(audited.served_unseen().is_empty());
        assert!(audited.served_outside_train().is_empty());
        let _ = audited.rows(&[59]);
        assert_eq!(audited.served_unseen(), vec![59]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn synth_always_satisfies_dataset_invariants(
            seed in any::<u64>(), n_seen in 1usize..6, n_unseen in 1usize..4,
            q in 4usize..10, per in 1usize..12,
        ) {
            let cfg = SynthConfig { n_seen, n_unseen, q, d: 5, samples_per_class: per, noise_stddev: 0.2, seed };
            let (ds, table) = synth_zsl(&cfg).unwrap();
            // re-validating through the constructor checks every invariant
            let again = ZslDataset::new(ds.features().clone(), ds.labels().to_vec(), &ds.split()).unwrap();
            prop_assert_eq!(&again, &ds);
            prop_assert_eq!(table.class_ids().len(), n_seen + n_unseen);
            for &i in &ds.train_indices() {
                prop_assert!(ds.is_seen(ds.labels()[i]));
            }
        }
    }
}
