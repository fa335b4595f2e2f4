//! The nine pipeline stages. Each stage checks its inputs, writes its
//! artifacts under the workspace, and records a stage manifest with content
//! hashes so identical reruns are verifiable.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentPlan};
use crate::classify::{
    build_classifier, evaluate_accuracy, finetune, load_classifier, save_classifier, Backbone,
    TrainedClassifier,
};
use crate::data::{derive_seed, one_vs_all_partition, split_dataset, Dataset, GradeLabel, Provenance};
use crate::error::{Error, Result};
use crate::gan::{
    generate, load_generator, save_generator, train_cut, train_cyclegan, GanVariant,
};
use crate::interpret::{
    channel_histograms, frequency_spectrum, grad_cam, mean_intensity_table, pca_project,
    render, separability_score,
};
use crate::metrics::{compute_metrics, ConfusionMatrix};

use super::config::PipelineConfig;
use super::manifest::{
    artifact_refs, counts_csv, hash_file, materialize_images, read_dataset_csv,
    require_artifact, sha256_hex, write_dataset_csv, ArtifactRef, StageManifest,
};

/// Optional CLI narrowing of the GAN and classifier stages.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageFilters {
    pub grade: Option<GradeLabel>,
    pub variant: Option<GanVariant>,
    pub backbone: Option<Backbone>,
}

fn finish_stage(
    cfg: &PipelineConfig,
    stage: &str,
    inputs: Vec<ArtifactRef>,
    output_rels: Vec<String>,
) -> Result<()> {
    let ws = &cfg.paths.workspace;
    let manifest = StageManifest {
        stage: stage.into(),
        tool_version: crate::TOOL_VERSION.into(),
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        inputs,
        outputs: artifact_refs(ws, &output_rels)?,
    };
    manifest.write(ws)
}

fn rels_of(ds: &Dataset) -> Vec<String> {
    ds.records()
        .iter()
        .map(|r| r.source_path.display().to_string())
        .collect()
}

// ---------------------------------------------------------------------------
// ingest

pub fn stage_ingest(cfg: &PipelineConfig) -> Result<()> {
    let input = &cfg.paths.input;
    if input.as_os_str().is_empty() {
        return Err(Error::Config("paths.input is not set".into()));
    }
    if !input.exists() {
        return Err(Error::MissingArtifact(format!(
            "input corpus {}",
            input.display()
        )));
    }
    let ds = crate::data::load_corpus(input)?;
    if ds.is_empty() {
        log::warn!("ingested corpus is empty");
    }

    let ws = &cfg.paths.workspace;
    // normalize names so downstream paths are stable
    let renamed = Dataset::new(
        ds.records()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut rec = r.clone();
                rec.source_path =
                    format!("orig_{:05}_g{}.png", i, r.grade.value()).into();
                rec
            })
            .collect(),
    );
    let stored = materialize_images(ws, "data/images", &renamed)?;
    write_dataset_csv(ws, "data/manifest.csv", &stored)?;
    let counts = counts_csv(&[(Provenance::Original, &stored)]);
    let counts_path = ws.join("data/counts.csv");
    std::fs::write(&counts_path, counts).map_err(|e| Error::io(&counts_path, e))?;

    let input_ref = if input.is_file() {
        ArtifactRef {
            path: input.display().to_string(),
            sha256: hash_file(input)?,
        }
    } else {
        // synthetic hash over the sorted directory listing
        let mut parts = Vec::new();
        for entry in walk_sorted(input)? {
            parts.push(format!("{}:{}", entry.display(), hash_file(&entry)?));
        }
        ArtifactRef {
            path: input.display().to_string(),
            sha256: sha256_hex(parts.join("\n").as_bytes()),
        }
    };

    let mut outputs = vec!["data/manifest.csv".to_string(), "data/counts.csv".to_string()];
    outputs.extend(rels_of(&stored));
    finish_stage(cfg, "ingest", vec![input_ref], outputs)
}

fn walk_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            if e.is_dir() {
                stack.push(e);
            } else {
                out.push(e);
            }
        }
    }
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------------------
// split

#[derive(Debug, Serialize, Deserialize)]
struct SplitSummary {
    seed: u64,
    ratio: f64,
    by_patient: bool,
    train_count: usize,
    test_count: usize,
    train_patients: Vec<String>,
    test_patients: Vec<String>,
}

pub fn stage_split(cfg: &PipelineConfig) -> Result<()> {
    let ws = &cfg.paths.workspace;
    let manifest_rel = "data/manifest.csv";
    require_artifact(ws, manifest_rel)?;
    let ds = read_dataset_csv(ws, manifest_rel)?;
    let seed = derive_seed(cfg.seed, &["split"]);
    let (train, test) = split_dataset(&ds, cfg.split.ratio, seed, cfg.split.by_patient)?;

    write_dataset_csv(ws, "data/train.csv", &train)?;
    write_dataset_csv(ws, "data/test.csv", &test)?;
    let patients = |d: &Dataset| -> Vec<String> {
        let set: BTreeSet<String> = d.records().iter().map(|r| r.patient_id.clone()).collect();
        set.into_iter().collect()
    };
    let summary = SplitSummary {
        seed,
        ratio: cfg.split.ratio,
        by_patient: cfg.split.by_patient,
        train_count: train.len(),
        test_count: test.len(),
        train_patients: patients(&train),
        test_patients: patients(&test),
    };
    let path = ws.join("data/split.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&summary).expect("split summary encode"),
    )
    .map_err(|e| Error::io(&path, e))?;

    let inputs = artifact_refs(ws, &[manifest_rel.to_string()])?;
    finish_stage(
        cfg,
        "split",
        inputs,
        vec![
            "data/train.csv".into(),
            "data/test.csv".into(),
            "data/split.json".into(),
        ],
    )
}

// ---------------------------------------------------------------------------
// augment

pub fn stage_augment(cfg: &PipelineConfig) -> Result<()> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "data/train.csv")?;
    let train = read_dataset_csv(ws, "data/train.csv")?;

    let explicit = cfg.augment_targets()?;
    let mut plan = AugmentPlan::with_multiplier(
        &train,
        cfg.augment.multiplier,
        derive_seed(cfg.seed, &["augment"]),
    );
    if !explicit.is_empty() {
        plan.per_grade_targets = explicit;
    }
    plan.crop_area_range = (cfg.augment.crop_area_min, cfg.augment.crop_area_max);
    plan.min_crop_area = cfg.augment.min_crop_area;

    let augmented = augment_dataset(&train, &plan)?;
    let stored = materialize_images(ws, "augmented/transform", &augmented)?;
    write_dataset_csv(ws, "augmented/manifest.csv", &stored)?;
    let counts = counts_csv(&[
        (Provenance::Original, &train),
        (Provenance::Transform, &stored),
    ]);
    let counts_path = ws.join("augmented/counts.csv");
    std::fs::write(&counts_path, counts).map_err(|e| Error::io(&counts_path, e))?;

    let inputs = artifact_refs(ws, &["data/train.csv".to_string()])?;
    let mut outputs = vec![
        "augmented/manifest.csv".to_string(),
        "augmented/counts.csv".to_string(),
    ];
    outputs.extend(rels_of(&stored));
    finish_stage(cfg, "augment", inputs, outputs)
}

// ---------------------------------------------------------------------------
// train-gan and generate

fn gan_work_list(
    cfg: &PipelineConfig,
    train: &Dataset,
    filters: &StageFilters,
) -> Vec<(GanVariant, GradeLabel)> {
    let grades: Vec<GradeLabel> = if cfg.gan.grades.is_empty() {
        GradeLabel::all()
            .into_iter()
            .filter(|g| train.count_for(*g) > 0)
            .collect()
    } else {
        cfg.gan
            .grades
            .iter()
            .filter_map(|&g| GradeLabel::new(g).ok())
            .collect()
    };
    let mut work = Vec::new();
    for &variant in &cfg.gan.variants {
        if filters.variant.is_some_and(|v| v != variant) {
            continue;
        }
        for &grade in &grades {
            if filters.grade.is_some_and(|g| g != grade) {
                continue;
            }
            work.push((variant, grade));
        }
    }
    work
}

fn gan_ckpt_rel(variant: GanVariant, grade: GradeLabel) -> String {
    format!("models/gan/{}_grade_{}.ckpt", variant.as_str(), grade.value())
}

pub fn stage_train_gan(cfg: &PipelineConfig, filters: &StageFilters) -> Result<()> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "data/train.csv")?;
    let train = read_dataset_csv(ws, "data/train.csv")?;
    let work = gan_work_list(cfg, &train, filters);
    let mut outputs = Vec::new();

    for (variant, grade) in work {
        let part = one_vs_all_partition(&train, grade)?;
        let seed = derive_seed(cfg.seed, &["gan", variant.as_str(), &grade.value().to_string()]);
        let gan_cfg = cfg.gan.to_gan_config(variant, seed);
        log::info!("training {} for {grade}", variant.as_str());
        let (gen, history) = match variant {
            GanVariant::CycleGan => {
                let (model, history) = train_cyclegan(&part, &gan_cfg)?;
                (model.generator_ab(), history)
            }
            GanVariant::Cut => {
                let (model, history) = train_cut(&part, &gan_cfg)?;
                (model.generator(), history)
            }
        };
        let ckpt_rel = gan_ckpt_rel(variant, grade);
        let ckpt = ws.join(&ckpt_rel);
        if let Some(parent) = ckpt.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_generator(&ckpt, &gen, variant, grade, gan_cfg.epochs)?;
        let hist_rel = format!(
            "models/gan/{}_grade_{}_history.csv",
            variant.as_str(),
            grade.value()
        );
        let hist_path = ws.join(&hist_rel);
        std::fs::write(&hist_path, history.to_csv_string())
            .map_err(|e| Error::io(&hist_path, e))?;
        outputs.push(ckpt_rel);
        outputs.push(hist_rel);
    }

    let inputs = artifact_refs(ws, &["data/train.csv".to_string()])?;
    finish_stage(cfg, "train-gan", inputs, outputs)
}

pub fn stage_generate(cfg: &PipelineConfig, filters: &StageFilters) -> Result<()> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "data/train.csv")?;
    let train = read_dataset_csv(ws, "data/train.csv")?;
    let work = gan_work_list(cfg, &train, filters);
    let explicit = cfg.generate_targets()?;

    let mut outputs = Vec::new();
    let mut per_variant: BTreeMap<GanVariant, Dataset> = BTreeMap::new();
    let mut input_rels = vec!["data/train.csv".to_string()];

    for (variant, grade) in work {
        let ckpt_rel = gan_ckpt_rel(variant, grade);
        require_artifact(ws, &ckpt_rel)?;
        input_rels.push(ckpt_rel.clone());
        let (gen, _manifest) = load_generator(&ws.join(&ckpt_rel))?;
        let sources = Dataset::new(
            train
                .records()
                .iter()
                .filter(|r| r.grade != grade)
                .cloned()
                .collect(),
        );
        let n = explicit
            .get(&grade)
            .copied()
            .unwrap_or(cfg.gan.generate_multiplier * train.count_for(grade).max(1));
        let out = generate(&gen, &sources, grade, n, variant.provenance())?;
        let stored = materialize_images(ws, &format!("generated/{}", variant.as_str()), &out)?;
        outputs.extend(rels_of(&stored));
        per_variant
            .entry(variant)
            .and_modify(|d| *d = d.concat(&stored))
            .or_insert(stored);
    }

    for (variant, ds) in &per_variant {
        let rel = format!("generated/{}_manifest.csv", variant.as_str());
        // keep earlier grades from previous (filtered) runs
        let regenerated: BTreeSet<GradeLabel> = ds.records().iter().map(|r| r.grade).collect();
        let merged = if ws.join(&rel).exists() {
            let existing = read_dataset_csv(ws, &rel)?;
            let kept = Dataset::new(
                existing
                    .records()
                    .iter()
                    .filter(|r| !regenerated.contains(&r.grade))
                    .cloned()
                    .collect(),
            );
            kept.concat(ds)
        } else {
            ds.clone()
        };
        write_dataset_csv(ws, &rel, &merged)?;
        outputs.push(rel);
    }

    let inputs = artifact_refs(ws, &input_rels)?;
    finish_stage(cfg, "generate", inputs, outputs)
}

// ---------------------------------------------------------------------------
// train-classifier

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierIndexEntry {
    pub backbone: Backbone,
    pub method: Provenance,
    pub checkpoint: String,
    pub history: String,
    pub corpus_size: usize,
    pub val_accuracy: f64,
}

fn corpus_for_method(
    cfg: &PipelineConfig,
    ws: &Path,
    train: &Dataset,
    method: Provenance,
) -> Result<(Dataset, Vec<String>)> {
    let mut input_rels = vec!["data/train.csv".to_string()];
    let ds = match method {
        Provenance::Original => train.clone(),
        Provenance::Transform => {
            let rel = "augmented/manifest.csv";
            require_artifact(ws, rel)?;
            input_rels.push(rel.into());
            let aug = read_dataset_csv(ws, rel)?;
            if cfg.classifier.include_originals {
                train.concat(&aug)
            } else {
                aug
            }
        }
        Provenance::CycleGan | Provenance::Cut => {
            let variant = if method == Provenance::Cut { "cut" } else { "cyclegan" };
            let rel = format!("generated/{variant}_manifest.csv");
            require_artifact(ws, &rel)?;
            input_rels.push(rel.clone());
            let gen = read_dataset_csv(ws, &rel)?;
            if cfg.classifier.include_originals {
                train.concat(&gen)
            } else {
                gen
            }
        }
    };
    Ok((ds, input_rels))
}

pub fn stage_train_classifier(cfg: &PipelineConfig, filters: &StageFilters) -> Result<()> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "data/train.csv")?;
    let train = read_dataset_csv(ws, "data/train.csv")?;
    let methods = cfg.classifier.method_provenances()?;

    let mut outputs = Vec::new();
    let mut input_rels: BTreeSet<String> = BTreeSet::new();
    let mut index: Vec<ClassifierIndexEntry> = Vec::new();

    for &backbone in &cfg.classifier.backbones {
        if filters.backbone.is_some_and(|b| b != backbone) {
            continue;
        }
        for &method in &methods {
            let (corpus, rels) = corpus_for_method(cfg, ws, &train, method)?;
            input_rels.extend(rels);
            let seed = derive_seed(
                cfg.seed,
                &["classifier", backbone.as_str(), method.as_str()],
            );
            let (fit, val) = if cfg.classifier.val_fraction > 0.0 && corpus.len() >= 10 {
                split_dataset(&corpus, 1.0 - cfg.classifier.val_fraction, seed, false)?
            } else {
                (corpus.clone(), Dataset::new(vec![]))
            };
            log::info!(
                "fine-tuning {} on {} ({} images)",
                backbone.as_str(),
                method.as_str(),
                corpus.len()
            );
            let mut model = build_classifier(&cfg.classifier.to_classifier_config(backbone, seed))?;
            let history = finetune(&mut model, &fit, &val)?;
            let val_accuracy = if val.is_empty() {
                f64::NAN
            } else {
                evaluate_accuracy(&model, &val)?
            };

            let ckpt_rel = format!(
                "models/classifier/{}__{}.ckpt",
                backbone.as_str(),
                method.as_str()
            );
            let hist_rel = format!(
                "models/classifier/{}__{}_history.csv",
                backbone.as_str(),
                method.as_str()
            );
            let ckpt = ws.join(&ckpt_rel);
            if let Some(parent) = ckpt.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_classifier(&ckpt, &model)?;
            let hist_path = ws.join(&hist_rel);
            std::fs::write(&hist_path, history.to_csv_string())
                .map_err(|e| Error::io(&hist_path, e))?;
            index.push(ClassifierIndexEntry {
                backbone,
                method,
                checkpoint: ckpt_rel.clone(),
                history: hist_rel.clone(),
                corpus_size: corpus.len(),
                val_accuracy,
            });
            outputs.push(ckpt_rel);
            outputs.push(hist_rel);
        }
    }

    // merge with entries from previous (filtered) runs
    let index_path = ws.join("models/classifier/index.json");
    if index_path.exists() {
        let retrained: BTreeSet<(Backbone, Provenance)> =
            index.iter().map(|e| (e.backbone, e.method)).collect();
        let mut kept: Vec<ClassifierIndexEntry> = read_classifier_index(ws)?
            .into_iter()
            .filter(|e| !retrained.contains(&(e.backbone, e.method)))
            .collect();
        kept.extend(index);
        kept.sort_by_key(|e| (e.backbone.as_str(), e.method.as_str()));
        index = kept;
    }
    if let Some(parent) = index_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(
        &index_path,
        serde_json::to_string_pretty(&index).expect("index encode"),
    )
    .map_err(|e| Error::io(&index_path, e))?;
    outputs.push("models/classifier/index.json".into());

    let inputs = artifact_refs(ws, &input_rels.into_iter().collect::<Vec<_>>())?;
    finish_stage(cfg, "train-classifier", inputs, outputs)
}

pub fn read_classifier_index(ws: &Path) -> Result<Vec<ClassifierIndexEntry>> {
    let path = require_artifact(ws, "models/classifier/index.json")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("index decode: {e}")))
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Serialize, Deserialize)]
struct IsolationSummary {
    test_images: usize,
    training_images: usize,
    overlapping_hashes: usize,
    disjoint: bool,
}

/// Union of content hashes across every corpus any model trained on.
fn training_content_hashes(ws: &Path) -> Result<BTreeSet<String>> {
    let mut hashes = BTreeSet::new();
    let train = read_dataset_csv(ws, "data/train.csv")?;
    hashes.extend(train.content_hashes());
    for rel in [
        "augmented/manifest.csv",
        "generated/cut_manifest.csv",
        "generated/cyclegan_manifest.csv",
    ] {
        if ws.join(rel).exists() {
            hashes.extend(read_dataset_csv(ws, rel)?.content_hashes());
        }
    }
    Ok(hashes)
}

pub fn stage_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "data/test.csv")?;
    let test = read_dataset_csv(ws, "data/test.csv")?;
    if test.is_empty() {
        return Err(Error::validation("test set is empty"));
    }
    let index = read_classifier_index(ws)?;
    if index.is_empty() {
        return Err(Error::MissingArtifact(
            "models/classifier/index.json lists no trained models".into(),
        ));
    }

    // test-set isolation: no test image content may appear in any corpus a
    // model trained on
    let train_hashes = training_content_hashes(ws)?;
    let test_hashes: BTreeSet<String> = test.content_hashes().into_iter().collect();
    let overlap = test_hashes.intersection(&train_hashes).count();
    let isolation = IsolationSummary {
        test_images: test_hashes.len(),
        training_images: train_hashes.len(),
        overlapping_hashes: overlap,
        disjoint: overlap == 0,
    };
    let eval_dir = ws.join("eval");
    std::fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    let iso_path = eval_dir.join("isolation.json");
    std::fs::write(
        &iso_path,
        serde_json::to_string_pretty(&isolation).expect("isolation encode"),
    )
    .map_err(|e| Error::io(&iso_path, e))?;
    if overlap > 0 {
        return Err(Error::validation(format!(
            "test-set isolation violated: {overlap} shared image(s) between test and training corpora"
        )));
    }

    let true_labels: Vec<u8> = test.records().iter().map(|r| r.grade.value()).collect();
    let mut metrics_rows = String::from(
        "backbone,method,precision,sensitivity,specificity,accuracy,f1_score\n",
    );
    let mut outputs = vec!["eval/metrics.csv".to_string(), "eval/isolation.json".to_string()];
    let mut input_rels = vec!["data/test.csv".to_string(), "models/classifier/index.json".to_string()];

    for entry in &index {
        require_artifact(ws, &entry.checkpoint)?;
        input_rels.push(entry.checkpoint.clone());
        let model = load_classifier(&ws.join(&entry.checkpoint))?;
        let preds = model.predict_dataset(&test)?;
        let pred_labels: Vec<u8> = preds.iter().map(|(g, _)| g.value()).collect();
        let cm = ConfusionMatrix::from_labels(&true_labels, &pred_labels, 6)?;
        let report = compute_metrics(&cm)?;
        let row = report.row();
        metrics_rows.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            entry.backbone.as_str(),
            entry.method.as_str(),
            row[0],
            row[1],
            row[2],
            row[3],
            row[4]
        ));

        let cm_rel = format!(
            "eval/confusion_{}__{}.csv",
            entry.backbone.as_str(),
            entry.method.as_str()
        );
        let mut cm_text = String::from("true\\pred,1,2,3,4,5,6\n");
        for (t, row) in cm.counts().iter().enumerate() {
            cm_text.push_str(&format!("{}", t + 1));
            for v in row {
                cm_text.push_str(&format!(",{v}"));
            }
            cm_text.push('\n');
        }
        let cm_path = ws.join(&cm_rel);
        std::fs::write(&cm_path, cm_text).map_err(|e| Error::io(&cm_path, e))?;
        outputs.push(cm_rel);
    }

    let metrics_path = eval_dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_rows).map_err(|e| Error::io(&metrics_path, e))?;

    let inputs = artifact_refs(ws, &input_rels)?;
    finish_stage(cfg, "evaluate", inputs, outputs)
}

// ---------------------------------------------------------------------------
// interpret

/// The corpus each method's analyses run over (training side only).
fn interpret_corpus(ws: &Path, train: &Dataset, method: Provenance) -> Result<Dataset> {
    Ok(match method {
        Provenance::Original => train.clone(),
        Provenance::Transform => read_dataset_csv(ws, "augmented/manifest.csv")?,
        Provenance::Cut => read_dataset_csv(ws, "generated/cut_manifest.csv")?,
        Provenance::CycleGan => read_dataset_csv(ws, "generated/cyclegan_manifest.csv")?,
    })
}

fn model_for_method(
    index: &[ClassifierIndexEntry],
    preferred: Backbone,
    method: Provenance,
    ws: &Path,
) -> Result<TrainedClassifier> {
    let entry = index
        .iter()
        .find(|e| e.backbone == preferred && e.method == method)
        .or_else(|| index.iter().find(|e| e.method == method))
        .ok_or_else(|| {
            Error::MissingArtifact(format!(
                "no classifier trained on method '{}'",
                method.as_str()
            ))
        })?;
    load_classifier(&ws.join(&entry.checkpoint))
}

pub fn stage_interpret(cfg: &PipelineConfig) -> Result<()> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "data/train.csv")?;
    let train = read_dataset_csv(ws, "data/train.csv")?;
    let index = read_classifier_index(ws)?;
    let methods = cfg.classifier.method_provenances()?;
    let preferred = *cfg
        .classifier
        .backbones
        .first()
        .unwrap_or(&Backbone::InceptionCnn);

    for sub in ["histograms", "spectra", "pca", "gradcam"] {
        let dir = ws.join("interpret").join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut outputs: Vec<String> = Vec::new();
    let mut hist_csv = String::from("method,grade,bin,overall,red,green,blue\n");
    let mut spec_csv = String::from("method,grade,low_band_energy,high_band_energy\n");
    let mut pca_csv = String::from("method,points,explained_1,explained_2,separability\n");
    let mut cam_groups: BTreeMap<(GradeLabel, Provenance), Vec<f64>> = BTreeMap::new();

    for &method in &methods {
        let corpus = interpret_corpus(ws, &train, method)?;
        let model = model_for_method(&index, preferred, method, ws)?;

        // histograms and spectra per grade
        for grade in GradeLabel::all() {
            let subset: Vec<&crate::data::ImageRecord> = corpus
                .records()
                .iter()
                .filter(|r| r.grade == grade)
                .collect();
            if subset.is_empty() {
                continue;
            }
            let hist = channel_histograms(subset.iter().map(|r| &r.image))?;
            let rel = format!("interpret/histograms/{}_grade_{}.png", method.as_str(), grade.value());
            let fig = render::line_plot(&[
                ("overall", [40, 40, 40], &hist.overall),
                ("red", [214, 39, 40], &hist.red),
                ("green", [44, 160, 44], &hist.green),
                ("blue", [31, 119, 180], &hist.blue),
            ]);
            fig.save_png(&ws.join(&rel))?;
            outputs.push(rel);
            for bin in 0..256 {
                hist_csv.push_str(&format!(
                    "{},{},{bin},{:.10},{:.10},{:.10},{:.10}\n",
                    method.as_str(),
                    grade.value(),
                    hist.overall[bin],
                    hist.red[bin],
                    hist.green[bin],
                    hist.blue[bin]
                ));
            }

            let n = cfg.interpret.samples_per_grade.min(subset.len()).max(1);
            let mut mean_logmag: Option<ndarray::Array2<f64>> = None;
            let mut low_sum = 0.0;
            let mut high_sum = 0.0;
            for r in subset.iter().take(n) {
                let spec = frequency_spectrum(&r.image, cfg.interpret.low_radius_fraction)?;
                low_sum += spec.low_band_energy;
                high_sum += spec.high_band_energy;
                mean_logmag = Some(match mean_logmag {
                    None => spec.log_magnitude,
                    Some(acc) => acc + &spec.log_magnitude,
                });
            }
            let mean_logmag = mean_logmag.unwrap() / n as f64;
            let rel = format!("interpret/spectra/{}_grade_{}.png", method.as_str(), grade.value());
            render::grayscale_map(&mean_logmag).save_png(&ws.join(&rel))?;
            outputs.push(rel);
            spec_csv.push_str(&format!(
                "{},{},{:.3},{:.3}\n",
                method.as_str(),
                grade.value(),
                low_sum / n as f64,
                high_sum / n as f64
            ));

            // grad-cam samples
            for (i, r) in subset.iter().take(cfg.interpret.samples_per_grade).enumerate() {
                let hm = grad_cam(&model, &r.image, r.grade, cfg.interpret.gradcam_target)?;
                cam_groups
                    .entry((grade, method))
                    .or_default()
                    .push(hm.mean_intensity);
                let rel = format!(
                    "interpret/gradcam/{}_grade_{}_{i}.png",
                    method.as_str(),
                    grade.value()
                );
                render::heatmap_overlay(&r.image, &hm.grid, 0.4).save_png(&ws.join(&rel))?;
                outputs.push(rel);
            }
        }

        // PCA over penultimate features
        let mut per_grade_seen: BTreeMap<GradeLabel, usize> = BTreeMap::new();
        let mut imgs = Vec::new();
        let mut labels = Vec::new();
        for r in corpus.records() {
            let seen = per_grade_seen.entry(r.grade).or_insert(0);
            if *seen < cfg.interpret.pca_max_per_grade {
                imgs.push(r.image.clone());
                labels.push(r.grade);
                *seen += 1;
            }
        }
        if labels.iter().collect::<BTreeSet<_>>().len() >= 2 && imgs.len() >= 4 {
            let feats = model.extract_features_batch(&imgs)?;
            let d = feats[0].len();
            let mut mat = ndarray::Array2::<f64>::zeros((feats.len(), d));
            for (i, f) in feats.iter().enumerate() {
                for (j, &v) in f.iter().enumerate() {
                    mat[[i, j]] = v as f64;
                }
            }
            let mut emb = pca_project(&mat, 2)?;
            emb.labels = labels.clone();
            emb.separability = separability_score(&emb.coords, &labels)?;
            let rel = format!("interpret/pca/{}.png", method.as_str());
            render::scatter_plot(&emb.coords, &labels).save_png(&ws.join(&rel))?;
            outputs.push(rel);
            pca_csv.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4}\n",
                method.as_str(),
                imgs.len(),
                emb.explained_variance[0],
                emb.explained_variance.get(1).copied().unwrap_or(0.0),
                emb.separability
            ));
        } else {
            log::warn!("{}: too few classes/points for PCA", method.as_str());
        }
    }

    let table = mean_intensity_table(&cam_groups);
    for (rel, text) in [
        ("interpret/histograms.csv", hist_csv),
        ("interpret/spectra.csv", spec_csv),
        ("interpret/pca_summary.csv", pca_csv),
        ("interpret/mean_intensity.csv", table.to_csv_string()),
    ] {
        let path = ws.join(rel);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        outputs.push(rel.to_string());
    }

    let inputs = artifact_refs(
        ws,
        &[
            "data/train.csv".to_string(),
            "models/classifier/index.json".to_string(),
        ],
    )?;
    finish_stage(cfg, "interpret", inputs, outputs)
}

// ---------------------------------------------------------------------------
// report

pub fn stage_report(cfg: &PipelineConfig) -> Result<()> {
    let outputs = super::report::make_report(cfg)?;
    let ws = &cfg.paths.workspace;
    let inputs = artifact_refs(
        ws,
        &[
            "eval/metrics.csv".to_string(),
            "interpret/mean_intensity.csv".to_string(),
        ],
    )?;
    finish_stage(cfg, "report", inputs, outputs)
}
