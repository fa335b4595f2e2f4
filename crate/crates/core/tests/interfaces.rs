//! External-interface checks: manifest CSV variants, the grade-directory
//! fallback, output naming layouts, and history/checkpoint file formats.

use std::path::PathBuf;

use bronchograde::augment::{augment_dataset, AugmentPlan};
use bronchograde::data::{
    load_corpus, load_directory, load_manifest, Dataset, GradeLabel, ImageRecord, Provenance,
};
use bronchograde::gan::{load_generator, save_generator, GanVariant};
use bronchograde::img::Image;
use bronchograde::synth::write_demo_corpus;

fn write_png(path: &std::path::Path, color: [u8; 3]) {
    Image::constant(24, 24, color).save_png(path).unwrap();
}

#[test]
fn manifest_with_ventilation_hours_and_grade_precedence() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("a.png"), [10, 20, 30]);
    write_png(&dir.path().join("b.png"), [40, 50, 60]);
    // explicit grade wins over ventilation hours; split column tolerated
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(
        &manifest,
        "patient_id,image_path,ventilation_hours,grade,split\n\
         p1,a.png,12,,train\n\
         p2,b.png,12,5,test\n",
    )
    .unwrap();
    let ds = load_manifest(&manifest).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.records()[0].grade.value(), 1); // from hours
    assert_eq!(ds.records()[1].grade.value(), 5); // explicit column wins
    assert_eq!(ds.records()[0].image.height(), 256); // normalized on ingest
}

#[test]
fn manifest_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("ok.png"), [1, 2, 3]);
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(
        &manifest,
        "patient_id,image_path,ventilation_hours\np1,ok.png,5\np2,missing.png,5\n",
    )
    .unwrap();
    let err = load_manifest(&manifest).unwrap_err().to_string();
    assert!(err.contains("row 2"), "error: {err}");

    std::fs::write(
        &manifest,
        "patient_id,image_path,ventilation_hours,grade\np1,ok.png,,\n",
    )
    .unwrap();
    let err = load_manifest(&manifest).unwrap_err().to_string();
    assert!(err.contains("neither grade nor ventilation_hours"), "{err}");

    std::fs::write(
        &manifest,
        "patient_id,image_path,grade\np1,ok.png,9\n",
    )
    .unwrap();
    assert!(load_manifest(&manifest).is_err());
}

#[test]
fn empty_manifest_loads_as_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(&manifest, "patient_id,image_path,ventilation_hours\n").unwrap();
    let ds = load_manifest(&manifest).unwrap();
    assert!(ds.is_empty());
}

#[test]
fn directory_fallback_reads_grade_subfolders() {
    let dir = tempfile::tempdir().unwrap();
    for g in [1u8, 3] {
        let sub = dir.path().join(format!("grade_{g}"));
        std::fs::create_dir(&sub).unwrap();
        write_png(&sub.join(format!("img{g}.png")), [g * 10, 0, 0]);
    }
    let ds = load_directory(dir.path()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.count_for(GradeLabel::new(1).unwrap()), 1);
    assert_eq!(ds.count_for(GradeLabel::new(3).unwrap()), 1);
    // load_corpus dispatches on path kind
    let via_corpus = load_corpus(dir.path()).unwrap();
    assert_eq!(via_corpus.len(), 2);
}

#[test]
fn demo_corpus_manifest_spans_all_bands() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_demo_corpus(dir.path(), 2, 3).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert!(text.starts_with("patient_id,image_path,ventilation_hours\n"));
    let ds = load_manifest(&manifest).unwrap();
    for g in GradeLabel::all() {
        assert_eq!(ds.count_for(g), 2, "missing {g}");
    }
}

#[test]
fn augment_output_names_follow_the_layout() {
    let records = (0..2)
        .map(|i| ImageRecord {
            patient_id: "p".into(),
            image: Image::constant(16, 16, [i * 100, 10, 10]),
            grade: GradeLabel::new(2).unwrap(),
            provenance: Provenance::Original,
            source_path: PathBuf::from(format!("src{i}.png")),
        })
        .collect();
    let ds = Dataset::new(records);
    let plan = AugmentPlan::with_multiplier(&ds, 2, 7);
    let out = augment_dataset(&ds, &plan).unwrap();
    for r in out.records() {
        let path = r.source_path.display().to_string();
        assert!(
            path.starts_with("grade_2/src") && path.ends_with(".png"),
            "unexpected layout: {path}"
        );
    }
}

#[test]
fn generator_checkpoint_manifest_records_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bronchograde::gan::GanConfig {
        image_size: 16,
        base_channels: 8,
        n_res_blocks: 1,
        ..bronchograde::gan::GanConfig::desk(GanVariant::Cut, 33)
    };
    let gen = bronchograde::gan::Generator::new(&cfg, "iface-test");
    let path = dir.path().join("g.ckpt");
    save_generator(&path, &gen, GanVariant::Cut, GradeLabel::new(4).unwrap(), 9).unwrap();
    let (_, manifest) = load_generator(&path).unwrap();
    assert_eq!(manifest.variant, GanVariant::Cut);
    assert_eq!(manifest.grade, 4);
    assert_eq!(manifest.epoch, 9);
    assert_eq!(manifest.seed, 33);
    assert_eq!(manifest.config.image_size, 16);
}

#[test]
fn gan_history_csv_has_the_documented_columns() {
    use bronchograde::data::one_vs_all_partition;
    use bronchograde::synth::two_color_domains;

    let (a, b) = two_color_domains(4, 16, 9);
    let ds = a.concat(&b);
    let part = one_vs_all_partition(&ds, GradeLabel::new(2).unwrap()).unwrap();
    let cfg = bronchograde::gan::GanConfig {
        epochs: 1,
        image_size: 16,
        base_channels: 8,
        n_res_blocks: 1,
        steps_per_epoch_cap: 2,
        patches_per_image: 4,
        negatives_per_anchor: 3,
        ..bronchograde::gan::GanConfig::desk(GanVariant::Cut, 1)
    };
    let (_, hist) = bronchograde::gan::train_cut(&part, &cfg).unwrap();
    let csv = hist.to_csv_string();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "epoch,loss_name,value");
    let names: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    for expected in ["adv_eq1", "d_loss", "g_adv", "g_total", "nce"] {
        assert!(names.contains(&expected), "missing series {expected}");
    }
}
