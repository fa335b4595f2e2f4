//! Training loops for both translation variants, the standalone generator
//! wrapper, and sample generation into a target grade.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{rng_from, Dataset, DomainPartition, GradeLabel, ImageRecord, Provenance};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::{Adam, Graph, ParamStore, Var};

use super::losses::adversarial_loss;
use super::nets::{
    track_range, FeatureHeads, IdRange, PatchDiscriminator, ResnetGenerator,
};
use super::{GanConfig, GanVariant};

/// Per-epoch mean losses keyed by name.
#[derive(Debug, Clone)]
pub struct EpochLosses {
    pub epoch: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLosses>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn series(&self, name: &str) -> Vec<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.values.get(name).copied())
            .collect()
    }

    /// Total generator objective per epoch.
    pub fn generator_objective(&self) -> Vec<f64> {
        self.series("g_total")
    }

    pub fn all_finite(&self) -> bool {
        self.epochs
            .iter()
            .all(|e| e.values.values().all(|v| v.is_finite()))
    }

    /// CSV rows `epoch,loss_name,value`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,loss_name,value\n");
        for e in &self.epochs {
            for (name, value) in &e.values {
                out.push_str(&format!("{},{},{}\n", e.epoch, name, value));
            }
        }
        out
    }
}

/// A generator network with its own parameter store; the unit that gets
/// checkpointed and used for sample generation.
pub struct Generator {
    pub cfg: GanConfig,
    pub store: ParamStore,
    pub arch: ResnetGenerator,
}

impl Generator {
    pub fn new(cfg: &GanConfig, init_tag: &str) -> Self {
        let mut store = ParamStore::new();
        let mut rng = rng_from(cfg.seed, &["gan-init", init_tag]);
        let arch = ResnetGenerator::build(&mut store, &mut rng, "gen", cfg);
        Generator {
            cfg: cfg.clone(),
            store,
            arch,
        }
    }

    /// Inference pass over a batch of `(3, S, S)` tensors in `[-1, 1]`.
    pub fn translate(&self, batch: &[Array3<f32>]) -> Result<Vec<Array3<f32>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack_batch(batch)?;
        let mut g = Graph::new(&self.store);
        let xv = g.leaf(x.into_dyn());
        let y = self.arch.forward(&mut g, xv);
        let yv = g.tape.value(y).view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
        Ok((0..yv.shape()[0])
            .map(|i| yv.index_axis(Axis(0), i).to_owned())
            .collect())
    }
}

/// Trained CycleGAN bundle: G (A to B), F (B to A), and both discriminators
/// in one parameter store with per-network id ranges.
pub struct CycleGanModel {
    pub cfg: GanConfig,
    pub store: ParamStore,
    pub gen_ab: ResnetGenerator,
    pub gen_ba: ResnetGenerator,
    pub disc_a: PatchDiscriminator,
    pub disc_b: PatchDiscriminator,
    range_gen_ab: IdRange,
    range_gen_ba: IdRange,
}

impl CycleGanModel {
    /// Copy the A-to-B generator into a standalone [`Generator`].
    pub fn generator_ab(&self) -> Generator {
        extract_generator(&self.cfg, &self.store, self.range_gen_ab, "cyclegan-extract")
    }

    /// Copy the B-to-A generator.
    pub fn generator_ba(&self) -> Generator {
        extract_generator(&self.cfg, &self.store, self.range_gen_ba, "cyclegan-extract")
    }
}

/// Trained CUT bundle: generator, contrastive heads, discriminator.
pub struct CutModel {
    pub cfg: GanConfig,
    pub store: ParamStore,
    pub gen: ResnetGenerator,
    pub heads: FeatureHeads,
    pub disc: PatchDiscriminator,
    range_gen: IdRange,
}

impl CutModel {
    pub fn generator(&self) -> Generator {
        extract_generator(&self.cfg, &self.store, self.range_gen, "cut-extract")
    }
}

fn extract_generator(
    cfg: &GanConfig,
    store: &ParamStore,
    range: IdRange,
    tag: &str,
) -> Generator {
    let mut gen = Generator::new(cfg, tag);
    let src_ids: Vec<_> = store.ids().filter(|&id| range.contains(id)).collect();
    let dst_ids: Vec<_> = gen.store.ids().collect();
    assert_eq!(src_ids.len(), dst_ids.len(), "generator layout mismatch");
    for (src, dst) in src_ids.into_iter().zip(dst_ids) {
        gen.store.set_value(dst, store.value(src).clone());
    }
    gen
}

fn stack_batch(batch: &[Array3<f32>]) -> Result<Array4<f32>> {
    let (c, h, w) = {
        let s = batch[0].shape();
        (s[0], s[1], s[2])
    };
    let mut out = Array4::<f32>::zeros((batch.len(), c, h, w));
    for (i, img) in batch.iter().enumerate() {
        if img.shape() != [c, h, w] {
            return Err(Error::Shape("ragged batch".into()));
        }
        out.index_axis_mut(Axis(0), i).assign(img);
    }
    Ok(out)
}

fn dataset_tensors(ds: &Dataset, size: usize) -> Result<Vec<Array3<f32>>> {
    ds.records()
        .iter()
        .map(|r| Ok(r.image.resize_bilinear(size, size)?.to_chw_pm1()))
        .collect()
}

/// Mean of the non-saturating real/fake discriminator objective.
fn softplus_mean(g: &mut Graph, logits: Var, negate: bool) -> Var {
    let z = if negate { g.tape.scale(logits, -1.0) } else { logits };
    let sp = g.tape.softplus(z);
    g.tape.mean_all(sp)
}

fn patch_scores(g: &Graph, logits: Var) -> Vec<f64> {
    g.tape
        .value(logits)
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z as f64).exp()))
        .collect()
}

struct StepLog {
    values: BTreeMap<String, f64>,
}

impl StepLog {
    fn new() -> Self {
        StepLog {
            values: BTreeMap::new(),
        }
    }

    fn put(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
    }

    fn check_finite(&self, context: &str, epoch: usize) -> Result<()> {
        for (name, v) in &self.values {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("{context} ({name})"),
                    epoch,
                });
            }
        }
        Ok(())
    }
}

fn epoch_plan(
    na: usize,
    nb: usize,
    cfg: &GanConfig,
    epoch: usize,
) -> (Vec<usize>, Vec<usize>, usize) {
    let mut idx_a: Vec<usize> = (0..na).collect();
    let mut idx_b: Vec<usize> = (0..nb).collect();
    let mut rng = rng_from(cfg.seed, &["gan-epoch", &epoch.to_string()]);
    idx_a.shuffle(&mut rng);
    idx_b.shuffle(&mut rng);
    let mut steps = na.max(nb).div_ceil(cfg.batch_size);
    if cfg.steps_per_epoch_cap > 0 {
        steps = steps.min(cfg.steps_per_epoch_cap);
    }
    (idx_a, idx_b, steps)
}

fn take_batch(
    tensors: &[Array3<f32>],
    order: &[usize],
    step: usize,
    bs: usize,
) -> Result<Array4<f32>> {
    let picks: Vec<&Array3<f32>> = (0..bs)
        .map(|j| &tensors[order[(step * bs + j) % order.len()]])
        .collect();
    let owned: Vec<Array3<f32>> = picks.into_iter().cloned().collect();
    stack_batch(&owned)
}

/// Train a CycleGAN on one domain partition. Deterministic per seed.
pub fn train_cyclegan(
    part: &DomainPartition,
    cfg: &GanConfig,
) -> Result<(CycleGanModel, TrainHistory)> {
    cfg.validate()?;
    if cfg.variant != GanVariant::CycleGan {
        return Err(Error::validation("config variant is not cyclegan"));
    }
    if part.train_a.is_empty() || part.train_b.is_empty() {
        return Err(Error::validation("both domains must be non-empty"));
    }

    let mut store = ParamStore::new();
    let mut rng = rng_from(cfg.seed, &["cyclegan-init", &part.target_grade.value().to_string()]);
    let (gen_ab, range_gen_ab) =
        track_range(&mut store, |s| ResnetGenerator::build(s, &mut rng, "gen_ab", cfg));
    let (gen_ba, range_gen_ba) =
        track_range(&mut store, |s| ResnetGenerator::build(s, &mut rng, "gen_ba", cfg));
    let (disc_a, range_disc_a) =
        track_range(&mut store, |s| PatchDiscriminator::build(s, &mut rng, "disc_a", cfg));
    let (disc_b, range_disc_b) =
        track_range(&mut store, |s| PatchDiscriminator::build(s, &mut rng, "disc_b", cfg));

    let xs = dataset_tensors(&part.train_a, cfg.image_size)?;
    let ys = dataset_tensors(&part.train_b, cfg.image_size)?;

    let lr = cfg.learning_rate as f32;
    let mut adam_g = Adam::for_gan(lr);
    let mut adam_d = Adam::for_gan(lr);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let (idx_a, idx_b, steps) = epoch_plan(xs.len(), ys.len(), cfg, epoch);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for step in 0..steps {
            let bx = take_batch(&xs, &idx_a, step, cfg.batch_size)?;
            let by = take_batch(&ys, &idx_b, step, cfg.batch_size)?;
            let mut log = StepLog::new();

            // generator update
            let (fake_y_val, fake_x_val) = {
                let mut g = Graph::new(&store);
                let x = g.leaf(bx.clone().into_dyn());
                let y = g.leaf(by.clone().into_dyn());
                let fake_y = gen_ab.forward(&mut g, x);
                let rec_x = gen_ba.forward(&mut g, fake_y);
                let fake_x = gen_ba.forward(&mut g, y);
                let rec_y = gen_ab.forward(&mut g, fake_x);
                let dy = disc_b.logits(&mut g, fake_y);
                let dx = disc_a.logits(&mut g, fake_x);
                let adv_g = softplus_mean(&mut g, dy, true);
                let adv_f = softplus_mean(&mut g, dx, true);
                let cyc_a = g.tape.l1_mean(rec_x, x);
                let cyc_b = g.tape.l1_mean(rec_y, y);
                let adv = g.tape.add(adv_g, adv_f);
                let cyc = g.tape.add(cyc_a, cyc_b);
                let cyc_w = g.tape.scale(cyc, cfg.lambda_cycle as f32);
                let total = g.tape.add(adv, cyc_w);

                log.put("g_adv", g.tape.scalar_value(adv) as f64);
                log.put("cycle", g.tape.scalar_value(cyc) as f64);
                log.put("g_total", g.tape.scalar_value(total) as f64);

                g.backward(total)?;
                let grads: Vec<_> = g
                    .param_grads()
                    .into_iter()
                    .filter(|(id, _)| range_gen_ab.contains(*id) || range_gen_ba.contains(*id))
                    .collect();
                let fy = g.tape.value(fake_y).clone();
                let fx = g.tape.value(fake_x).clone();
                adam_g.step(&mut store, &grads);
                (fy, fx)
            };

            // discriminator update on detached fakes
            {
                let mut g = Graph::new(&store);
                let x = g.leaf(bx.into_dyn());
                let y = g.leaf(by.into_dyn());
                let fy = g.leaf(fake_y_val);
                let fx = g.leaf(fake_x_val);
                let real_b = disc_b.logits(&mut g, y);
                let fake_b = disc_b.logits(&mut g, fy);
                let real_a = disc_a.logits(&mut g, x);
                let fake_a = disc_a.logits(&mut g, fx);
                let rb = softplus_mean(&mut g, real_b, true);
                let fb = softplus_mean(&mut g, fake_b, false);
                let ra = softplus_mean(&mut g, real_a, true);
                let fa = softplus_mean(&mut g, fake_a, false);
                let sum_b = g.tape.add(rb, fb);
                let sum_a = g.tape.add(ra, fa);
                let both = g.tape.add(sum_a, sum_b);
                let d_total = g.tape.scale(both, 0.5);
                log.put("d_loss", g.tape.scalar_value(d_total) as f64);

                let eq1_b = adversarial_loss(&patch_scores(&g, real_b), &patch_scores(&g, fake_b))?;
                let eq1_a = adversarial_loss(&patch_scores(&g, real_a), &patch_scores(&g, fake_a))?;
                log.put("adv_eq1", 0.5 * (eq1_a + eq1_b));

                g.backward(d_total)?;
                let grads: Vec<_> = g
                    .param_grads()
                    .into_iter()
                    .filter(|(id, _)| range_disc_a.contains(*id) || range_disc_b.contains(*id))
                    .collect();
                adam_d.step(&mut store, &grads);
            }

            log.check_finite("cyclegan", epoch)?;
            for (k, v) in log.values {
                *sums.entry(k).or_insert(0.0) += v;
            }
        }
        let values = sums
            .into_iter()
            .map(|(k, v)| (k, v / steps as f64))
            .collect();
        history.epochs.push(EpochLosses { epoch, values });
    }

    Ok((
        CycleGanModel {
            cfg: cfg.clone(),
            store,
            gen_ab,
            gen_ba,
            disc_a,
            disc_b,
            range_gen_ab,
            range_gen_ba,
        },
        history,
    ))
}

/// Sample patch coordinates shared by the anchor and positive feature maps.
fn sample_coords(
    shape: &[usize],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize, usize)> {
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    (0..count)
        .map(|_| {
            (
                rng.random_range(0..n),
                rng.random_range(0..h),
                rng.random_range(0..w),
            )
        })
        .collect()
}

struct NceContext<'a> {
    heads: &'a FeatureHeads,
    patches: usize,
    negs: usize,
    tau: f32,
}

/// Multi-layer patch-contrastive objective between the re-encoded output and
/// the input encoding; mean over tap layers.
fn nce_objective(
    g: &mut Graph,
    ctx: &NceContext<'_>,
    feats_src: &[Var],
    feats_out: &[Var],
    rng: &mut impl Rng,
) -> Var {
    let mut terms = Vec::new();
    for (l, (&fs, &fo)) in feats_src.iter().zip(feats_out).enumerate() {
        let shape = g.tape.value(fs).shape().to_vec();
        let coords = sample_coords(&shape, ctx.patches, rng);
        let anchors = g.tape.gather_patches(fo, &coords);
        let positives = g.tape.gather_patches(fs, &coords);
        let q = ctx.heads.mlps[l].forward(g, anchors);
        let k = ctx.heads.mlps[l].forward(g, positives);
        let qn = g.tape.normalize_rows(q, 1e-8);
        let kn = g.tape.normalize_rows(k, 1e-8);
        let kt = g.tape.permute(kn, &[1, 0]);
        let sim = g.tape.matmul(qn, kt);
        let negs = ctx.negs.min(ctx.patches - 1);
        terms.push(g.tape.nce_from_sim(sim, negs, ctx.tau));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.tape.add(acc, t);
    }
    g.tape.scale(acc, 1.0 / terms.len() as f32)
}

/// Train a CUT model on one domain partition. Deterministic per seed.
pub fn train_cut(part: &DomainPartition, cfg: &GanConfig) -> Result<(CutModel, TrainHistory)> {
    cfg.validate()?;
    if cfg.variant != GanVariant::Cut {
        return Err(Error::validation("config variant is not cut"));
    }
    if part.train_a.is_empty() || part.train_b.is_empty() {
        return Err(Error::validation("both domains must be non-empty"));
    }

    let mut store = ParamStore::new();
    let mut rng = rng_from(cfg.seed, &["cut-init", &part.target_grade.value().to_string()]);
    let (gen, range_gen) =
        track_range(&mut store, |s| ResnetGenerator::build(s, &mut rng, "gen", cfg));
    let (heads, range_heads) =
        track_range(&mut store, |s| FeatureHeads::build(s, &mut rng, "heads", cfg));
    let (disc, range_disc) =
        track_range(&mut store, |s| PatchDiscriminator::build(s, &mut rng, "disc", cfg));

    let xs = dataset_tensors(&part.train_a, cfg.image_size)?;
    let ys = dataset_tensors(&part.train_b, cfg.image_size)?;

    let lr = cfg.learning_rate as f32;
    let mut adam_g = Adam::for_gan(lr);
    let mut adam_d = Adam::for_gan(lr);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let (idx_a, idx_b, steps) = epoch_plan(xs.len(), ys.len(), cfg, epoch);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for step in 0..steps {
            let bx = take_batch(&xs, &idx_a, step, cfg.batch_size)?;
            let by = take_batch(&ys, &idx_b, step, cfg.batch_size)?;
            let mut log = StepLog::new();
            let mut patch_rng = rng_from(
                cfg.seed,
                &["cut-patches", &epoch.to_string(), &step.to_string()],
            );
            let ctx = NceContext {
                heads: &heads,
                patches: cfg.patches_per_image,
                negs: cfg.negatives_per_anchor,
                tau: cfg.tau as f32,
            };

            // generator + heads update
            let fake_y_val = {
                let mut g = Graph::new(&store);
                let x = g.leaf(bx.clone().into_dyn());
                let (fake_y, feats_x) = gen.forward_with_features(&mut g, x);
                let dy = disc.logits(&mut g, fake_y);
                let adv = softplus_mean(&mut g, dy, true);
                let feats_fake = gen.encode(&mut g, fake_y);
                let nce_x = nce_objective(&mut g, &ctx, &feats_x, &feats_fake, &mut patch_rng);
                let nce = if cfg.nce_identity {
                    let y = g.leaf(by.clone().into_dyn());
                    let (idt_y, feats_y) = gen.forward_with_features(&mut g, y);
                    let feats_idt = gen.encode(&mut g, idt_y);
                    let nce_y =
                        nce_objective(&mut g, &ctx, &feats_y, &feats_idt, &mut patch_rng);
                    let sum = g.tape.add(nce_x, nce_y);
                    g.tape.scale(sum, 0.5)
                } else {
                    nce_x
                };
                let nce_w = g.tape.scale(nce, cfg.lambda_nce as f32);
                let total = g.tape.add(adv, nce_w);

                log.put("g_adv", g.tape.scalar_value(adv) as f64);
                log.put("nce", g.tape.scalar_value(nce) as f64);
                log.put("g_total", g.tape.scalar_value(total) as f64);

                g.backward(total)?;
                let grads: Vec<_> = g
                    .param_grads()
                    .into_iter()
                    .filter(|(id, _)| range_gen.contains(*id) || range_heads.contains(*id))
                    .collect();
                let fy = g.tape.value(fake_y).clone();
                adam_g.step(&mut store, &grads);
                fy
            };

            // discriminator update
            {
                let mut g = Graph::new(&store);
                let y = g.leaf(by.into_dyn());
                let fy = g.leaf(fake_y_val);
                let real = disc.logits(&mut g, y);
                let fake = disc.logits(&mut g, fy);
                let r = softplus_mean(&mut g, real, true);
                let f = softplus_mean(&mut g, fake, false);
                let sum = g.tape.add(r, f);
                let d_total = g.tape.scale(sum, 0.5);
                log.put("d_loss", g.tape.scalar_value(d_total) as f64);
                log.put(
                    "adv_eq1",
                    adversarial_loss(&patch_scores(&g, real), &patch_scores(&g, fake))?,
                );
                g.backward(d_total)?;
                let grads: Vec<_> = g
                    .param_grads()
                    .into_iter()
                    .filter(|(id, _)| range_disc.contains(*id))
                    .collect();
                adam_d.step(&mut store, &grads);
            }

            log.check_finite("cut", epoch)?;
            for (k, v) in log.values {
                *sums.entry(k).or_insert(0.0) += v;
            }
        }
        let values = sums
            .into_iter()
            .map(|(k, v)| (k, v / steps as f64))
            .collect();
        history.epochs.push(EpochLosses { epoch, values });
    }

    Ok((
        CutModel {
            cfg: cfg.clone(),
            store,
            gen,
            heads,
            disc,
            range_gen,
        },
        history,
    ))
}

/// Translate `n` source images into the target grade.
///
/// Sources cycle when `n` exceeds their count; outputs carry the variant's
/// provenance and the requested grade label.
pub fn generate(
    gen: &Generator,
    sources: &Dataset,
    target_grade: GradeLabel,
    n: usize,
    provenance: Provenance,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::validation("generation count must be >= 1"));
    }
    if sources.is_empty() {
        return Err(Error::validation("source dataset is empty"));
    }
    let size = gen.cfg.image_size;
    let tensors = dataset_tensors(sources, size)?;
    let mut records = Vec::with_capacity(n);
    let chunk = 8usize;
    let mut i = 0;
    while i < n {
        let count = chunk.min(n - i);
        let batch: Vec<Array3<f32>> = (0..count)
            .map(|j| tensors[(i + j) % tensors.len()].clone())
            .collect();
        let outputs = gen.translate(&batch)?;
        for (j, out) in outputs.into_iter().enumerate() {
            let image = Image::from_chw_pm1(&out.view())?;
            let src = &sources.records()[(i + j) % sources.len()];
            records.push(ImageRecord {
                patient_id: src.patient_id.clone(),
                image,
                grade: target_grade,
                provenance,
                source_path: PathBuf::from(format!(
                    "grade_{}/gen_{:05}.png",
                    target_grade.value(),
                    i + j
                )),
            });
        }
        i += count;
    }
    Ok(Dataset::new(records))
}
