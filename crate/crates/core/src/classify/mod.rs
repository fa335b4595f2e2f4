//! Six-way severity classifiers via transfer learning: backbone selection,
//! scope-limited fine-tuning, prediction, and the feature/gradient hooks the
//! interpretability analyses consume.

mod nets;

pub use nets::{BackboneNet, InceptionNet, NetParts, TinyViT};

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis, Ix2, Ix4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from, Dataset, GradeLabel};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::serialize::{fill_store, read_store, write_store};
use crate::nn::{Adam, Graph, ParamStore};

pub const NUM_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    InceptionCnn,
    Vit,
}

impl Backbone {
    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::InceptionCnn => "inception_cnn",
            Backbone::Vit => "vit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inception_cnn" => Ok(Backbone::InceptionCnn),
            "vit" => Ok(Backbone::Vit),
            other => Err(Error::validation(format!("unknown backbone '{other}'"))),
        }
    }

    /// Table heading used in the metrics report.
    pub fn table_heading(self) -> &'static str {
        match self {
            Backbone::InceptionCnn => "GoogLeNet-class CNN",
            Backbone::Vit => "Vision Transformer (ViT)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    HeadOnly,
    LastBlockAndHead,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backbone: Backbone,
    pub pretrained: bool,
    /// Checkpoint to warm-start the backbone from; the head is always fresh.
    pub pretrained_weights: Option<PathBuf>,
    pub trainable_scope: TrainableScope,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Square input side; records of other sizes are resampled on the way in.
    pub input_size: usize,
    /// Base channel width the architecture scales from.
    pub width: usize,
    /// Weight the loss by inverse class frequency.
    pub class_weighting: bool,
}

impl ClassifierConfig {
    pub fn desk(backbone: Backbone, seed: u64) -> Self {
        ClassifierConfig {
            backbone,
            pretrained: false,
            pretrained_weights: None,
            trainable_scope: TrainableScope::Full,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed,
            input_size: 32,
            width: 24,
            class_weighting: false,
        }
    }

    pub fn paper(backbone: Backbone, seed: u64) -> Self {
        ClassifierConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-4,
            input_size: 256,
            width: 32,
            ..ClassifierConfig::desk(backbone, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::validation("learning rate must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch size must be >= 1"));
        }
        if self.input_size < 16 || self.input_size % 8 != 0 {
            return Err(Error::validation(format!(
                "input size {} must be a multiple of 8 and at least 16",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// A backbone plus head with a fixed label order. Built untrained by
/// [`build_classifier`]; [`finetune`] trains it in place.
pub struct TrainedClassifier {
    pub cfg: ClassifierConfig,
    pub store: ParamStore,
    net: BackboneNet,
    pub label_order: [GradeLabel; NUM_CLASSES],
}

/// Instantiate the backbone, optionally warm-started from a checkpoint, with
/// a fresh 6-way head and freezing applied per the trainable scope.
pub fn build_classifier(cfg: &ClassifierConfig) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = rng_from(cfg.seed, &["classifier-init", cfg.backbone.as_str()]);
    let net = match cfg.backbone {
        Backbone::InceptionCnn => BackboneNet::Inception(InceptionNet::build(&mut store, &mut rng, cfg)),
        Backbone::Vit => BackboneNet::Vit(TinyViT::build(&mut store, &mut rng, cfg)),
    };

    if cfg.pretrained {
        match &cfg.pretrained_weights {
            Some(path) if path.exists() => {
                warm_start_backbone(&mut store, &net, path)?;
            }
            Some(path) => {
                log::warn!(
                    "pretrained weights {} not found; using random initialization",
                    path.display()
                );
            }
            None => {
                log::warn!("pretrained requested but no weight source configured; using random initialization");
            }
        }
    }

    let (_, last_block, head) = net.spans();
    for id in store.ids().collect::<Vec<_>>() {
        let raw = id.raw();
        let trainable = match cfg.trainable_scope {
            TrainableScope::Full => true,
            TrainableScope::HeadOnly => head.contains(raw),
            TrainableScope::LastBlockAndHead => head.contains(raw) || last_block.contains(raw),
        };
        store.set_trainable(id, trainable);
    }

    Ok(TrainedClassifier {
        cfg: cfg.clone(),
        store,
        net,
        label_order: GradeLabel::all(),
    })
}

/// Copy matching backbone parameters (by name and shape) from a donor
/// checkpoint; the head stays freshly initialized.
fn warm_start_backbone(store: &mut ParamStore, net: &BackboneNet, path: &Path) -> Result<()> {
    let (_, params) = read_store(path)?;
    let (_, _, head) = net.spans();
    let mut copied = 0usize;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if head.contains(id.raw()) {
            continue;
        }
        if let Some((_, value)) = params
            .iter()
            .find(|(name, value)| name == store.name(id) && value.shape() == store.value(id).shape())
        {
            store.set_value(id, value.clone());
            copied += 1;
        }
    }
    log::info!(
        "warm start from {}: {copied} backbone tensors loaded",
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FinetuneHistory {
    pub epochs: Vec<FinetuneEpoch>,
    /// Epoch whose parameters were kept (best validation accuracy).
    pub best_epoch: usize,
}

impl FinetuneHistory {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_accuracy));
        }
        out
    }
}

fn record_tensor(img: &Image, size: usize) -> Result<Array3<f32>> {
    Ok(img.resize_bilinear(size, size)?.to_chw_pm1())
}

fn batch_of(tensors: &[Array3<f32>], idx: &[usize]) -> Array4<f32> {
    let s = tensors[0].shape();
    let mut out = Array4::<f32>::zeros((idx.len(), s[0], s[1], s[2]));
    for (row, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), row).assign(&tensors[i]);
    }
    out
}

/// Cross-entropy fine-tuning with per-epoch validation; the best-validation
/// parameters are restored at the end. Deterministic per seed.
pub fn finetune(
    model: &mut TrainedClassifier,
    train: &Dataset,
    val: &Dataset,
) -> Result<FinetuneHistory> {
    if train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    for g in GradeLabel::all() {
        if train.count_for(g) == 0 {
            log::warn!("{g} absent from the training set");
        }
    }
    let cfg = model.cfg.clone();

    let tensors: Vec<Array3<f32>> = train
        .records()
        .iter()
        .map(|r| record_tensor(&r.image, cfg.input_size))
        .collect::<Result<_>>()?;
    let targets: Vec<usize> = train.records().iter().map(|r| r.grade.index()).collect();

    let class_weights = cfg.class_weighting.then(|| {
        let mut counts = [0usize; NUM_CLASSES];
        for &t in &targets {
            counts[t] += 1;
        }
        let total: usize = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { total as f32 / (NUM_CLASSES as f32 * c as f32) })
            .collect::<Vec<f32>>()
    });

    let mut adam = Adam::new(cfg.learning_rate as f32);
    let mut history = FinetuneHistory::default();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_snapshot = model.store.snapshot();
    let mut best_epoch = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tensors.len()).collect();
        let mut rng = rng_from(cfg.seed, &["finetune-epoch", &epoch.to_string()]);
        order.shuffle(&mut rng);

        let mut loss_sum = 0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch_of(&tensors, chunk);
            let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new(&model.store);
            let xv = g.leaf(x.into_dyn());
            let parts = model.net.forward_parts(&mut g, xv);
            let loss = g
                .tape
                .cross_entropy_weighted(parts.logits, t, class_weights.clone());
            let loss_val = g.tape.scalar_value(loss) as f64;
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("finetune {}", cfg.backbone.as_str()),
                    epoch,
                });
            }
            loss_sum += loss_val;
            batches += 1;
            g.backward(loss)?;
            let grads = g.param_grads();
            adam.step(&mut model.store, &grads);
        }

        let val_accuracy = if val.is_empty() {
            f64::NAN
        } else {
            evaluate_accuracy(model, val)?
        };
        if !val.is_empty() && val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_snapshot = model.store.snapshot();
            best_epoch = epoch;
        }
        history.epochs.push(FinetuneEpoch {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
    }

    if !val.is_empty() {
        model.store.restore(&best_snapshot);
        history.best_epoch = best_epoch;
    } else {
        log::warn!("no validation set; keeping final-epoch parameters");
        history.best_epoch = cfg.epochs - 1;
    }
    Ok(history)
}

/// Fraction of records whose predicted grade matches the label.
pub fn evaluate_accuracy(model: &TrainedClassifier, ds: &Dataset) -> Result<f64> {
    let preds = model.predict_dataset(ds)?;
    let correct = preds
        .iter()
        .zip(ds.records())
        .filter(|((g, _), r)| *g == r.grade)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

impl TrainedClassifier {
    pub fn trainable_parameter_count(&self) -> usize {
        self.store.trainable_numel()
    }

    pub fn head_parameter_count(&self) -> usize {
        let (_, _, head) = self.net.spans();
        self.store
            .ids()
            .filter(|id| head.contains(id.raw()))
            .map(|id| self.store.value(id).len())
            .sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim()
    }

    fn forward_batch(&self, batch: &Array4<f32>) -> Result<(Vec<[f64; NUM_CLASSES]>, Array4<f32>, ndarray::Array2<f32>)> {
        let mut g = Graph::new(&self.store);
        let xv = g.leaf(batch.clone().into_dyn());
        let parts = self.net.forward_parts(&mut g, xv);
        let logits = g
            .tape
            .value(parts.logits)
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        let feats = g
            .tape
            .value(parts.features)
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        let maps = g
            .tape
            .value(parts.maps)
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_owned();
        let probs = logits
            .rows()
            .into_iter()
            .map(|row| softmax6(row.as_slice().unwrap()))
            .collect();
        Ok((probs, maps, feats))
    }

    /// Predicted grade and class probabilities; exact logit ties resolve to
    /// the lower grade.
    pub fn predict(&self, img: &Image) -> Result<(GradeLabel, [f64; NUM_CLASSES])> {
        Ok(self.predict_dataset_images(std::slice::from_ref(img))?.remove(0))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<(GradeLabel, [f64; NUM_CLASSES])>> {
        let images: Vec<Image> = ds.records().iter().map(|r| r.image.clone()).collect();
        self.predict_dataset_images(&images)
    }

    pub fn predict_dataset_images(
        &self,
        images: &[Image],
    ) -> Result<Vec<(GradeLabel, [f64; NUM_CLASSES])>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let tensors: Vec<Array3<f32>> = chunk
                .iter()
                .map(|im| record_tensor(im, self.cfg.input_size))
                .collect::<Result<_>>()?;
            let idx: Vec<usize> = (0..tensors.len()).collect();
            let batch = batch_of(&tensors, &idx);
            let (probs, _, _) = self.forward_batch(&batch)?;
            for p in probs {
                out.push((self.label_order[argmax_tie_lowest(&p)], p));
            }
        }
        Ok(out)
    }

    /// Penultimate feature vector (the activations feeding the head).
    pub fn extract_features(&self, img: &Image) -> Result<Vec<f32>> {
        Ok(self.extract_features_batch(std::slice::from_ref(img))?.remove(0))
    }

    pub fn extract_features_batch(&self, images: &[Image]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let tensors: Vec<Array3<f32>> = chunk
                .iter()
                .map(|im| record_tensor(im, self.cfg.input_size))
                .collect::<Result<_>>()?;
            let idx: Vec<usize> = (0..tensors.len()).collect();
            let batch = batch_of(&tensors, &idx);
            let (_, _, feats) = self.forward_batch(&batch)?;
            for row in feats.rows() {
                out.push(row.to_vec());
            }
        }
        Ok(out)
    }

    /// Last spatial activation maps and the gradient of the target-class
    /// logit with respect to them, shapes `(C, h, w)` each.
    pub fn activations_and_gradients(
        &self,
        img: &Image,
        target: GradeLabel,
    ) -> Result<(Array3<f32>, Array3<f32>)> {
        let tensor = record_tensor(img, self.cfg.input_size)?;
        let idx = [0usize];
        let batch = batch_of(&[tensor], &idx);
        let mut g = Graph::new(&self.store);
        let xv = g.leaf(batch.into_dyn());
        let parts = self.net.forward_parts(&mut g, xv);
        let target_logit = g.tape.select(parts.logits, &[0, target.index()]);
        g.backward(target_logit)?;
        let maps = g
            .tape
            .value(parts.maps)
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .index_axis(Axis(0), 0)
            .to_owned();
        let grads = g
            .tape
            .grad(parts.maps)
            .ok_or_else(|| Error::Shape("no gradient reached the spatial maps".into()))?
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .index_axis(Axis(0), 0)
            .to_owned();
        Ok((maps, grads))
    }

    /// Recompute class logits from a spatial map: global average pooling
    /// followed by the head. Used by gradient checks.
    pub fn logits_from_maps(&self, maps: &Array3<f32>) -> Result<[f64; NUM_CLASSES]> {
        let (c, h, w) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
        let mut batch = Array4::<f32>::zeros((1, c, h, w));
        batch.index_axis_mut(Axis(0), 0).assign(maps);
        let mut g = Graph::new(&self.store);
        let mv = g.leaf(batch.into_dyn());
        let features = g.tape.global_avg_pool(mv);
        let logits = self.net.head().forward(&mut g, features);
        let row = g
            .tape
            .value(logits)
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .row(0)
            .to_owned();
        let mut out = [0f64; NUM_CLASSES];
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o = v as f64;
        }
        Ok(out)
    }
}

/// Argmax with exact ties resolved toward the lower index (lower grade).
pub fn argmax_tie_lowest(p: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0usize;
    for j in 1..NUM_CLASSES {
        if p[j] > p[best] {
            best = j;
        }
    }
    best
}

fn softmax6(logits: &[f32]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut exps = [0f64; NUM_CLASSES];
    let mut sum = 0f64;
    for (e, &z) in exps.iter_mut().zip(logits) {
        *e = ((z as f64) - max).exp();
        sum += *e;
    }
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierManifest {
    kind: String,
    config: ClassifierConfig,
    label_order: Vec<u8>,
    seed: u64,
    tool_version: String,
}

pub fn save_classifier(path: &Path, model: &TrainedClassifier) -> Result<()> {
    let manifest = ClassifierManifest {
        kind: "classifier".into(),
        config: model.cfg.clone(),
        label_order: model.label_order.iter().map(|g| g.value()).collect(),
        seed: model.cfg.seed,
        tool_version: crate::TOOL_VERSION.into(),
    };
    let header = serde_json::to_value(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    write_store(path, &header, &model.store)
}

pub fn load_classifier(path: &Path) -> Result<TrainedClassifier> {
    let (header, params) = read_store(path)?;
    let manifest: ClassifierManifest = serde_json::from_value(header)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;
    if manifest.kind != "classifier" {
        return Err(Error::Checkpoint(format!(
            "{}: not a classifier checkpoint",
            path.display()
        )));
    }
    let mut cfg = manifest.config;
    // never re-trigger a warm start when reloading
    cfg.pretrained_weights = None;
    cfg.pretrained = false;
    let mut model = build_classifier(&cfg)?;
    fill_store(&mut model.store, &params)?;
    let mut order = [GradeLabel::new(1)?; NUM_CLASSES];
    for (slot, v) in order.iter_mut().zip(&manifest.label_order) {
        *slot = GradeLabel::new(*v)?;
    }
    model.label_order = order;
    Ok(model)
}
