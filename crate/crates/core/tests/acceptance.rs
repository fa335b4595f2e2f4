//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime. Oracles here are written independently of the library paths
//! they check.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Array4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use bronchograde::augment::{self, augment_dataset, AugmentPlan, CropRect};
use bronchograde::classify::{
    build_classifier, evaluate_accuracy, finetune, Backbone, ClassifierConfig,
};
use bronchograde::data::{one_vs_all_partition, split_dataset, Dataset, GradeLabel};
use bronchograde::gan::{
    self, adversarial_loss, cycle_loss, generate, patch_nce_loss, train_cut, train_cyclegan,
    GanConfig, GanVariant, PatchFeatureSet,
};
use bronchograde::img::Image;
use bronchograde::interpret::{
    frequency_spectrum, grad_cam_from_maps, pca_project, separability_score,
};
use bronchograde::metrics::{compute_metrics, ConfusionMatrix};
use bronchograde::nn::{gradcheck, Tape};
use bronchograde::pipeline::{self, load_config, PipelineConfig, Profile, StageFilters};
use bronchograde::synth::{shapes_dataset, two_color_domains, write_demo_corpus, ShapesConfig};

fn pass(criterion: &str, started: Instant) {
    println!(
        "[PASS] {criterion} ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// criterion 1: metric oracle equivalence

/// Independent per-class oracle straight from label pairs.
fn oracle_macro_metrics(t: &[u8], p: &[u8], k: usize) -> [f64; 5] {
    let mut precision = 0.0;
    let mut sensitivity = 0.0;
    let mut specificity = 0.0;
    let mut f1 = 0.0;
    for c in 1..=k as u8 {
        let (mut tp, mut fp, mut fn_, mut tn) = (0f64, 0f64, 0f64, 0f64);
        for (&ti, &pi) in t.iter().zip(p) {
            match (ti == c, pi == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        let pr = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let re = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let sp = if tn + fp == 0.0 { 0.0 } else { tn / (tn + fp) };
        precision += pr;
        sensitivity += re;
        specificity += sp;
        f1 += if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) };
    }
    let kk = k as f64;
    let accuracy = t.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
    [
        precision / kk,
        sensitivity / kk,
        specificity / kk,
        accuracy,
        f1 / kk,
    ]
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xAC1);
    for trial in 0..1000 {
        let k = rng.random_range(2..=6usize);
        let n = rng.random_range(1..=200usize);
        let t: Vec<u8> = (0..n).map(|_| rng.random_range(1..=k as u8)).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.random_range(1..=k as u8)).collect();
        let cm = ConfusionMatrix::from_labels(&t, &p, k).unwrap();
        let m = compute_metrics(&cm).unwrap();
        let got = m.row();
        let want = oracle_macro_metrics(&t, &p, k);
        for (g, w) in got.iter().zip(want) {
            assert!(
                (g - w).abs() <= 1e-12,
                "trial {trial}: {got:?} vs oracle {want:?}"
            );
        }
    }

    // fixed 3-class case, oracle first
    let mut t = Vec::new();
    let mut p = Vec::new();
    for (ct, cp, n) in [
        (1u8, 1u8, 5),
        (1, 2, 1),
        (2, 1, 1),
        (2, 2, 3),
        (2, 3, 1),
        (3, 2, 1),
        (3, 3, 4),
    ] {
        for _ in 0..n {
            t.push(ct);
            p.push(cp);
        }
    }
    let want = oracle_macro_metrics(&t, &p, 3);
    assert!((want[3] - 0.75).abs() < 1e-12);
    let cm = ConfusionMatrix::from_counts(vec![vec![5, 1, 0], vec![1, 3, 1], vec![0, 1, 4]])
        .unwrap();
    let m = compute_metrics(&cm).unwrap();
    assert!((m.accuracy - 0.75).abs() <= 1e-12);
    assert!((m.precision - 0.7444).abs() <= 1e-4);
    assert!((m.sensitivity - 0.7444).abs() <= 1e-4);
    assert!((m.f1 - 0.7444).abs() <= 1e-4);
    assert!((m.specificity - 0.8758).abs() <= 1e-4);
    for (g, w) in m.row().iter().zip(want) {
        assert!((g - w).abs() <= 1e-12);
    }

    assert!(started.elapsed() < Duration::from_secs(10), "too slow");
    pass("criterion 1: metric oracle equivalence", started);
}

// ---------------------------------------------------------------------------
// criterion 2: transform group suite

fn random_image(rng: &mut ChaCha20Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| {
        [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()]
    })
}

#[test]
fn criterion_2_transform_group_suite() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xAC2);
    for _ in 0..100 {
        let img = random_image(&mut rng, 256, 256);

        // four quarter turns compose to the identity, bit-exactly
        let r4 = img
            .rotate90_cw(1)
            .rotate90_cw(1)
            .rotate90_cw(1)
            .rotate90_cw(1);
        assert_eq!(r4, img);

        // reflections are involutions
        assert_eq!(img.reflect_x().reflect_x(), img);
        assert_eq!(img.reflect_y().reflect_y(), img);

        // reflect_x . reflect_y = rotate180
        assert_eq!(img.reflect_x().reflect_y(), img.rotate90_cw(2));

        // scale, crop and resize preserve shape and 8-bit range
        let sx = rng.random_range(1.1..=1.5);
        let sy = rng.random_range(1.1..=1.5);
        let scaled = augment::scale(&img, sx, sy).unwrap();
        assert_eq!((scaled.height(), scaled.width()), (256, 256));
        let cropped = augment::crop(
            &img,
            CropRect {
                x0: 0.1,
                y0: 0.05,
                x1: 0.9,
                y1: 0.95,
            },
        )
        .unwrap();
        assert_eq!((cropped.height(), cropped.width()), (256, 256));
        let resized = augment::resize(&img, 128, 200).unwrap();
        assert_eq!((resized.height(), resized.width()), (128, 200));
    }
    assert!(started.elapsed() < Duration::from_secs(30), "too slow");
    pass("criterion 2: transform group suite", started);
}

// ---------------------------------------------------------------------------
// criterion 3: loss-value anchors and loss gradients

/// f64 reference of the tape's contrastive chain for one anchor row set:
/// row-normalize both matrices, sim = q k^T, InfoNCE with cyclic negatives.
fn nce_reference_f64(q: &Array2<f64>, k: &Array2<f64>, negs: usize, tau: f64) -> f64 {
    let normalize = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + 1e-8).sqrt();
            row.mapv_inplace(|v| v / n);
        }
        out
    };
    let qn = normalize(q);
    let kn = normalize(k);
    let p = qn.shape()[0];
    let mut total = 0.0;
    for i in 0..p {
        let sim = |a: usize, b: usize| -> f64 {
            (0..qn.shape()[1]).map(|j| qn[[a, j]] * kn[[b, j]]).sum()
        };
        let mut logits = vec![sim(i, i) / tau];
        for d in 1..=negs {
            logits.push(sim(i, (i + d) % p) / tau);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - logits[0];
    }
    total / p as f64
}

#[test]
fn criterion_3_loss_anchors_and_gradients() {
    let started = Instant::now();

    // adversarial estimator anchors
    let v = adversarial_loss(&[0.5], &[0.5]).unwrap();
    assert!((v - (-1.3863)).abs() <= 1e-4, "{v}");

    // cycle-loss anchors
    let x = Array4::<f32>::from_elem((1, 3, 4, 4), 0.25);
    let y = Array4::<f32>::from_elem((1, 3, 4, 4), -0.5);
    assert_eq!(cycle_loss(&x, &x, &y, &y).unwrap(), 0.0);
    let zeros = Array4::<f32>::zeros((1, 3, 4, 4));
    let ones = Array4::<f32>::from_elem((1, 3, 4, 4), 1.0);
    let v = cycle_loss(&zeros, &ones, &zeros, &ones).unwrap();
    assert!((v - 2.0).abs() <= 1e-9, "{v}");

    // contrastive anchors
    let pfs = PatchFeatureSet {
        anchor: vec![1.0, 0.0],
        positive: vec![1.0, 0.0],
        negatives: vec![vec![0.0, 1.0], vec![0.0, -1.0]],
    };
    let v = patch_nce_loss(&pfs, 1.0).unwrap();
    assert!((v - 0.5514).abs() <= 1e-4, "{v}");
    let tied = PatchFeatureSet {
        anchor: vec![1.0, 0.0],
        positive: vec![1.0, 0.0],
        negatives: vec![vec![1.0, 0.0]],
    };
    let v = patch_nce_loss(&tied, 1.0).unwrap();
    assert!((v - std::f64::consts::LN_2).abs() <= 1e-4, "{v}");

    // cycle-loss gradients: tape vs central differences of the f64 reference
    let mut rng = ChaCha20Rng::seed_from_u64(0xAC3);
    let shape = [2usize, 3, 4, 4];
    let n_el: usize = shape.iter().product();
    let mk = |rng: &mut ChaCha20Rng, lo: f32, hi: f32| -> Array4<f32> {
        Array4::from_shape_fn((shape[0], shape[1], shape[2], shape[3]), |_| {
            rng.random_range(lo..hi)
        })
    };
    // keep |a - b| away from the L1 kink so FD is valid
    let xa = mk(&mut rng, 0.5, 1.0);
    let xb = mk(&mut rng, -1.0, -0.5);
    let ya = mk(&mut rng, 0.5, 1.0);
    let yb = mk(&mut rng, -1.0, -0.5);

    let tape_grads = {
        let mut tape = Tape::new();
        let a = tape.leaf(xa.clone().into_dyn());
        let b = tape.leaf(xb.clone().into_dyn());
        let c = tape.leaf(ya.clone().into_dyn());
        let d = tape.leaf(yb.clone().into_dyn());
        let l1 = tape.l1_mean(b, a);
        let l2 = tape.l1_mean(d, c);
        let total = tape.add(l1, l2);
        tape.backward(total).unwrap();
        [
            tape.grad(a).unwrap().clone(),
            tape.grad(b).unwrap().clone(),
            tape.grad(c).unwrap().clone(),
            tape.grad(d).unwrap().clone(),
        ]
    };
    let f64_cycle = |xa: &Array4<f32>, xb: &Array4<f32>, ya: &Array4<f32>, yb: &Array4<f32>| {
        let term = |a: &Array4<f32>, b: &Array4<f32>| {
            a.iter()
                .zip(b.iter())
                .map(|(&u, &v)| (u as f64 - v as f64).abs())
                .sum::<f64>()
                / n_el as f64
        };
        term(xb, xa) + term(yb, ya)
    };
    let h = 1e-4f32;
    let mut worst_cycle = 0f64;
    let inputs = [&xa, &xb, &ya, &yb];
    for (which, base) in inputs.iter().enumerate() {
        for probe in 0..6 {
            let flat = (probe * 7) % n_el;
            let idx = {
                let mut rem = flat;
                let mut out = [0usize; 4];
                for d in (0..4).rev() {
                    out[d] = rem % shape[d];
                    rem /= shape[d];
                }
                out
            };
            let mut plus = (*base).clone();
            plus[idx] += h;
            let mut minus = (*base).clone();
            minus[idx] -= h;
            let eval = |probe_arr: &Array4<f32>| -> f64 {
                let mut args = [&xa, &xb, &ya, &yb];
                args[which] = probe_arr;
                f64_cycle(args[0], args[1], args[2], args[3])
            };
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h as f64);
            let ad = tape_grads[which][IxDyn(&idx)] as f64;
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs());
            worst_cycle = worst_cycle.max(rel);
        }
    }
    assert!(worst_cycle <= 1e-3, "cycle gradient rel error {worst_cycle}");

    // contrastive gradients: tape chain vs f64 reference FD
    let p = 5usize;
    let dim = 6usize;
    let tau = 0.3f64;
    let negs = 3usize;
    let qf: Array2<f32> =
        Array2::from_shape_fn((p, dim), |_| rng.random_range(-1.0..1.0f32));
    let kf: Array2<f32> =
        Array2::from_shape_fn((p, dim), |_| rng.random_range(-1.0..1.0f32));

    let (tape_gq, tape_gk) = {
        let mut tape = Tape::new();
        let q = tape.leaf(qf.clone().into_dyn());
        let k = tape.leaf(kf.clone().into_dyn());
        let qn = tape.normalize_rows(q, 1e-8);
        let kn = tape.normalize_rows(k, 1e-8);
        let kt = tape.permute(kn, &[1, 0]);
        let sim = tape.matmul(qn, kt);
        let loss = tape.nce_from_sim(sim, negs, tau as f32);
        tape.backward(loss).unwrap();
        (
            tape.grad(q).unwrap().clone(),
            tape.grad(k).unwrap().clone(),
        )
    };
    let to_f64 = |m: &Array2<f32>| m.mapv(|v| v as f64);
    let h = 1e-6f64;
    let mut worst_nce = 0f64;
    for row in 0..p {
        for col in 0..dim {
            for which in 0..2 {
                let mut qp = to_f64(&qf);
                let mut kp = to_f64(&kf);
                let (plus, minus);
                if which == 0 {
                    let mut a = qp.clone();
                    a[[row, col]] += h;
                    let mut b = qp.clone();
                    b[[row, col]] -= h;
                    plus = nce_reference_f64(&a, &kp, negs, tau);
                    minus = nce_reference_f64(&b, &kp, negs, tau);
                    qp[[row, col]] += 0.0;
                } else {
                    let mut a = kp.clone();
                    a[[row, col]] += h;
                    let mut b = kp.clone();
                    b[[row, col]] -= h;
                    plus = nce_reference_f64(&qp, &a, negs, tau);
                    minus = nce_reference_f64(&qp, &b, negs, tau);
                    kp[[row, col]] += 0.0;
                }
                let fd = (plus - minus) / (2.0 * h);
                let ad = if which == 0 {
                    tape_gq[IxDyn(&[row, col])] as f64
                } else {
                    tape_gk[IxDyn(&[row, col])] as f64
                };
                if fd.abs() > 1e-3 {
                    let rel = (ad - fd).abs() / fd.abs();
                    worst_nce = worst_nce.max(rel);
                } else {
                    assert!(
                        (ad - fd).abs() < 1e-4,
                        "tiny-gradient mismatch: ad {ad} fd {fd}"
                    );
                }
            }
        }
    }
    assert!(worst_nce <= 1e-3, "nce gradient rel error {worst_nce}");

    // sanity: the general-purpose grad checker agrees on a composite graph
    let small = gradcheck::max_relative_error(
        &[
            ndarray::ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| rng.random_range(0.5..1.0f32)),
            ndarray::ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| rng.random_range(-1.0..-0.5f32)),
        ],
        |t: &mut Tape, v| t.l1_mean(v[0], v[1]),
        1e-3,
        1e-2,
    );
    assert!(small < 1e-2);

    assert!(started.elapsed() < Duration::from_secs(30), "too slow");
    pass("criterion 3: loss anchors and gradients", started);
}

// ---------------------------------------------------------------------------
// criterion 4: GAN toy convergence

fn domain_mean(ds: &Dataset) -> [f64; 3] {
    let mut m = [0f64; 3];
    for r in ds.records() {
        let cm = r.image.channel_means();
        for c in 0..3 {
            m[c] += cm[c];
        }
    }
    for c in m.iter_mut() {
        *c /= ds.len() as f64;
    }
    m
}

#[test]
fn criterion_4_gan_toy_convergence() {
    let started = Instant::now();
    let (a, b) = two_color_domains(64, 32, 17);
    let ds = a.concat(&b);
    let part = one_vs_all_partition(&ds, GradeLabel::new(2).unwrap()).unwrap();
    let src_mean = domain_mean(&part.train_a);
    let tgt_mean = domain_mean(&part.train_b);

    for variant in [GanVariant::CycleGan, GanVariant::Cut] {
        let t = Instant::now();
        let cfg = GanConfig::desk(variant, 99);
        assert_eq!(cfg.epochs, 5);
        let (gen, hist) = match variant {
            GanVariant::CycleGan => {
                let (m, h) = train_cyclegan(&part, &cfg).unwrap();
                (m.generator_ab(), h)
            }
            GanVariant::Cut => {
                let (m, h) = train_cut(&part, &cfg).unwrap();
                (m.generator(), h)
            }
        };
        assert!(
            t.elapsed() < Duration::from_secs(300),
            "{variant:?} exceeded 5 minutes"
        );
        assert!(hist.all_finite(), "{variant:?}: non-finite loss");
        let g = hist.generator_objective();
        assert_eq!(g.len(), 5);
        let ratio = g.last().unwrap() / g[0];
        assert!(
            ratio <= 0.8,
            "{variant:?}: final/first generator loss {ratio:.3} > 0.8"
        );

        let out = generate(&gen, &part.train_a, part.target_grade, 32, variant.provenance())
            .unwrap();
        assert_eq!(out.len(), 32);
        for r in out.records() {
            assert_eq!((r.image.height(), r.image.width()), (32, 32));
        }
        let gen_mean = domain_mean(&out);
        for c in 0..3 {
            let want = tgt_mean[c] - src_mean[c];
            let got = gen_mean[c] - src_mean[c];
            if want.abs() > 5.0 {
                assert!(
                    want.signum() == got.signum(),
                    "{variant:?} channel {c}: target shift {want:+.1}, generated {got:+.1}"
                );
            }
        }
        println!(
            "  {variant:?}: loss ratio {ratio:.3}, mean shift {:?}",
            (0..3)
                .map(|c| format!("{:+.1}", gen_mean[c] - src_mean[c]))
                .collect::<Vec<_>>()
        );
    }
    pass("criterion 4: GAN toy convergence", started);
}

// ---------------------------------------------------------------------------
// criterion 5: classifier toy accuracy and the augmentation gap

#[test]
fn criterion_5_classifier_accuracy_and_augmentation_gap() {
    let started = Instant::now();
    let ds = shapes_dataset(&ShapesConfig {
        n_per_class: 100,
        size: 32,
        seed: 11,
        ..ShapesConfig::default()
    });
    assert_eq!(ds.len(), 600);
    let (train, test) = split_dataset(&ds, 0.7, 5, false).unwrap();

    let cfg = ClassifierConfig::desk(Backbone::InceptionCnn, 7);
    let carve = |corpus: &Dataset, seed: u64| split_dataset(corpus, 0.85, seed, false).unwrap();

    let t = Instant::now();
    let mut model = build_classifier(&cfg).unwrap();
    let (fit, val) = carve(&train, 101);
    finetune(&mut model, &fit, &val).unwrap();
    let elapsed = t.elapsed();
    let acc_full = evaluate_accuracy(&model, &test).unwrap();
    assert!(
        elapsed < Duration::from_secs(300),
        "fine-tune took {elapsed:?}"
    );
    assert!(acc_full >= 0.95, "full-data test accuracy {acc_full:.3} < 0.95");

    // a held-out grade-3 image comes back as grade 3 with clear confidence
    let held_out = test
        .records()
        .iter()
        .find(|r| r.grade.value() == 3)
        .expect("test split has grade 3");
    let (pred, probs) = model.predict(&held_out.image).unwrap();
    assert_eq!(pred.value(), 3);
    assert!(probs[2] > 0.5, "grade-3 probability {:.3}", probs[2]);

    // 10% stratified subsample vs subsample + graphic augmentation to 5x
    let (sub, _) = split_dataset(&train, 0.1, 9, false).unwrap();
    let mut m1 = build_classifier(&cfg).unwrap();
    let (fit1, val1) = carve(&sub, 102);
    finetune(&mut m1, &fit1, &val1).unwrap();
    let acc_sub = evaluate_accuracy(&m1, &test).unwrap();

    let plan = AugmentPlan::with_multiplier(&sub, 4, 33);
    let aug = augment_dataset(&sub, &plan).unwrap();
    let combined = sub.concat(&aug);
    assert_eq!(combined.len(), 5 * sub.len());
    let mut m2 = build_classifier(&cfg).unwrap();
    let (fit2, val2) = carve(&combined, 103);
    finetune(&mut m2, &fit2, &val2).unwrap();
    let acc_aug = evaluate_accuracy(&m2, &test).unwrap();

    let gap = (acc_aug - acc_sub) * 100.0;
    println!(
        "  full {acc_full:.3}, subsample {acc_sub:.3}, augmented {acc_aug:.3}, gap {gap:+.1} points"
    );
    assert!(
        gap >= 10.0,
        "augmentation gap {gap:.1} points < 10 (sub {acc_sub:.3}, aug {acc_aug:.3})"
    );
    pass("criterion 5: classifier accuracy and augmentation gap", started);
}

// ---------------------------------------------------------------------------
// criterion 6: interpretation math

/// Direct DFT magnitude from the definition (independent oracle).
fn dft_magnitude_oracle(gray: &Array2<f64>, u: i64, v: i64) -> f64 {
    let (h, w) = (gray.shape()[0] as i64, gray.shape()[1] as i64);
    let mut re = 0.0;
    let mut im = 0.0;
    for y in 0..h {
        for x in 0..w {
            let phase = -2.0 * std::f64::consts::PI
                * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
            let val = gray[[y as usize, x as usize]];
            re += val * phase.cos();
            im += val * phase.sin();
        }
    }
    (re * re + im * im).sqrt()
}

#[test]
fn criterion_6_interpretation_math() {
    let started = Instant::now();

    // constant image: all spectral energy at DC
    let flat = Image::constant(32, 32, [120, 120, 120]);
    let s = frequency_spectrum(&flat, 0.25).unwrap();
    assert_eq!(s.high_band_energy, 0.0);
    assert!(s.low_band_energy > 0.0);

    // k-cycle horizontal sinusoid: peaks at +/-k, against the DFT oracle
    let k = 4usize;
    let img = Image::from_fn(32, 32, |_, x| {
        let v = 128.0 + 90.0 * (2.0 * std::f64::consts::PI * k as f64 * x as f64 / 32.0).cos();
        let b = v.round().clamp(0.0, 255.0) as u8;
        [b, b, b]
    });
    let gray = img.to_gray_f64();
    // oracle check: the peak bins really carry the sinusoid energy
    let peak = dft_magnitude_oracle(&gray, 0, k as i64);
    let off_peak = dft_magnitude_oracle(&gray, 0, k as i64 + 1);
    assert!(peak > 10.0 * off_peak.max(1e-9));
    let s = frequency_spectrum(&img, 0.25).unwrap();
    let (cy, cx) = (16usize, 16usize);
    let mut bins: Vec<((usize, usize), f64)> = s
        .log_magnitude
        .indexed_iter()
        .filter(|&((y, x), _)| (y, x) != (cy, cx))
        .map(|((y, x), &v)| ((y, x), v))
        .collect();
    bins.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top2: Vec<(usize, usize)> = bins[..2].iter().map(|(pos, _)| *pos).collect();
    assert!(top2.contains(&(cy, cx + k)) && top2.contains(&(cy, cx - k)), "{top2:?}");
    // magnitude at the centered peak agrees with the oracle
    let fast_peak = (s.log_magnitude[[cy, cx + k]]).exp() - 1.0;
    assert!((fast_peak - peak).abs() <= 1e-6 * peak);

    // Parseval within relative 1e-6
    let spatial: f64 = gray.iter().map(|v| v * v).sum();
    let expected = gray.len() as f64 * spatial;
    assert!((s.total_energy() - expected).abs() <= 1e-6 * expected);

    // PCA: planted 2-D subspace recovered with orthonormal components
    let mut rng = ChaCha20Rng::seed_from_u64(0xAC6);
    let (n, d) = (80usize, 10usize);
    let mut basis = Array2::<f64>::zeros((2, d));
    for v in basis.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let mut data = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let (s1, s2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        for j in 0..d {
            data[[i, j]] = s1 * basis[[0, j]] + s2 * basis[[1, j]];
        }
    }
    let emb = pca_project(&data, 2).unwrap();
    let explained: f64 = emb.explained_variance.iter().sum();
    assert!(explained >= 0.999, "explained {explained}");
    for i in 0..2 {
        for j in 0..2 {
            let dot: f64 = (0..d).map(|r| emb.components[[r, i]] * emb.components[[r, j]]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() <= 1e-8, "components not orthonormal");
        }
    }

    // Grad-CAM hand case
    let acts = Array3::from_shape_vec((1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let grads = Array3::from_elem((1, 2, 2), 1.0f32);
    let hm = grad_cam_from_maps(&acts, &grads, 2, 2).unwrap();
    assert_eq!(
        hm.grid,
        Array2::from_shape_vec((2, 2), vec![0u8, 85, 170, 255]).unwrap()
    );
    assert_eq!(hm.mean_intensity, 127.5);

    // silhouette on well-separated clusters
    let mut coords = Array2::<f64>::zeros((60, 2));
    let mut labels = Vec::new();
    for i in 0..60 {
        let c = i % 3;
        coords[[i, 0]] = c as f64 * 100.0 + rng.random_range(-0.5..0.5);
        coords[[i, 1]] = rng.random_range(-0.5..0.5);
        labels.push(GradeLabel::new(c as u8 + 1).unwrap());
    }
    let score = separability_score(&coords, &labels).unwrap();
    assert!(score > 0.9, "silhouette {score}");

    assert!(started.elapsed() < Duration::from_secs(60), "too slow");
    pass("criterion 6: interpretation math", started);
}

// ---------------------------------------------------------------------------
// criteria 7 and 8: full desk pipeline (shared workspace)

struct FullRun {
    dir: tempfile::TempDir,
    cfg: PipelineConfig,
    elapsed: Duration,
}

static FULL_RUN: OnceLock<FullRun> = OnceLock::new();

fn full_run() -> &'static FullRun {
    FULL_RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus_dir = dir.path().join("corpus");
        let manifest = write_demo_corpus(&corpus_dir, 12, 5).unwrap();

        let mut cfg = PipelineConfig::default_for(Profile::Desk);
        cfg.seed = 42;
        cfg.paths.input = manifest;
        cfg.paths.workspace = dir.path().join("ws");
        cfg.augment.multiplier = 3;
        cfg.gan.epochs = 3;
        cfg.gan.steps_per_epoch_cap = 24;
        cfg.classifier.epochs = 10;
        cfg.interpret.samples_per_grade = 2;
        cfg.interpret.pca_max_per_grade = 20;

        let t = Instant::now();
        pipeline::run_all(&cfg).unwrap();
        let elapsed = t.elapsed();
        FullRun { dir, cfg, elapsed }
    })
}

fn hash_tree(root: &std::path::Path, rels: &[&str]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for rel in rels {
        let p = root.join(rel);
        if p.is_file() {
            out.insert(rel.to_string(), pipeline::hash_file(&p).unwrap());
        } else if p.is_dir() {
            let mut stack = vec![p.clone()];
            while let Some(d) = stack.pop() {
                let mut entries: Vec<_> = std::fs::read_dir(&d)
                    .unwrap()
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .collect();
                entries.sort();
                for e in entries {
                    if e.is_dir() {
                        stack.push(e);
                    } else {
                        let rel_name = e.strip_prefix(root).unwrap().display().to_string();
                        out.insert(rel_name, pipeline::hash_file(&e).unwrap());
                    }
                }
            }
        }
    }
    out
}

#[test]
fn criterion_7_pipeline_determinism_and_isolation() {
    let started = Instant::now();
    let run = full_run();
    assert!(
        run.elapsed < Duration::from_secs(900),
        "end-to-end run took {:?}",
        run.elapsed
    );
    let ws = &run.cfg.paths.workspace;

    // the evaluate stage's isolation assertion passed and recorded disjoint
    let iso: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.join("eval/isolation.json")).unwrap())
            .unwrap();
    assert_eq!(iso["disjoint"], serde_json::Value::Bool(true));
    assert_eq!(iso["overlapping_hashes"], serde_json::json!(0));

    // report exists with populated tables and zero broken assets
    let html = std::fs::read_to_string(ws.join("report/report.html")).unwrap();
    assert!(html.contains("Dataset counts"));
    assert!(html.contains("Classification performance"));
    assert!(html.contains("Grad-CAM mean heatmap intensity"));
    let report_dir = ws.join("report");
    let mut asset_count = 0;
    for cap in html.split("src=\"").skip(1) {
        let path = cap.split('"').next().unwrap();
        assert!(
            report_dir.join(path).is_file(),
            "broken asset link: {path}"
        );
        asset_count += 1;
    }
    assert!(asset_count > 0, "report embeds no figures");

    // rerunning split and augment with identical seeds reproduces identical
    // membership and bit-identical augmented images
    let before = hash_tree(
        ws,
        &["data/train.csv", "data/test.csv", "augmented"],
    );
    pipeline::run_stage(pipeline::Stage::Split, &run.cfg, &StageFilters::default()).unwrap();
    pipeline::run_stage(pipeline::Stage::Augment, &run.cfg, &StageFilters::default()).unwrap();
    let after = hash_tree(
        ws,
        &["data/train.csv", "data/test.csv", "augmented"],
    );
    assert_eq!(before, after, "rerun changed artifacts");

    // regenerating the report is byte-identical except the timestamp line
    let strip_timestamp = |text: &str| -> String {
        text.lines()
            .filter(|l| !l.contains("generated-at"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    pipeline::run_stage(pipeline::Stage::Report, &run.cfg, &StageFilters::default()).unwrap();
    let html2 = std::fs::read_to_string(ws.join("report/report.html")).unwrap();
    assert_eq!(
        strip_timestamp(&html),
        strip_timestamp(&html2),
        "regenerated report differs beyond the timestamp"
    );

    println!("  end-to-end {:.1}s, {} assets", run.elapsed.as_secs_f64(), asset_count);
    pass("criterion 7: pipeline determinism and isolation", started);
}

#[test]
fn criterion_8_report_format_fidelity() {
    let started = Instant::now();
    let run = full_run();
    let ws = &run.cfg.paths.workspace;

    // metrics table: exactly the five metric columns per (backbone x method) row
    let metrics = std::fs::read_to_string(ws.join("eval/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "backbone,method,precision,sensitivity,specificity,accuracy,f1_score"
    );
    let rows: Vec<&str> = lines.collect();
    let expected_rows = run.cfg.classifier.backbones.len() * run.cfg.classifier.methods.len();
    assert_eq!(rows.len(), expected_rows);
    for row in &rows {
        assert_eq!(row.split(',').count(), 7, "row '{row}'");
        for field in row.split(',').skip(2) {
            let v: f64 = field.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    // mean-intensity table: 6 grade rows x 4 method columns
    let intensity = std::fs::read_to_string(ws.join("interpret/mean_intensity.csv")).unwrap();
    let mut lines = intensity.lines();
    assert_eq!(
        lines.next().unwrap(),
        "grade,Original,Transformations,CycleGAN,CUT"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], format!("grade {}", i + 1));
        for f in &fields[1..] {
            let v: f64 = f.parse().expect("blank cell in a populated run");
            assert!((0.0..=255.0).contains(&v));
        }
    }

    pass("criterion 8: report format fidelity", started);
}

// keep the workspace alive for both criteria
#[allow(dead_code)]
fn _hold(run: &FullRun) -> &tempfile::TempDir {
    &run.dir
}

// ---------------------------------------------------------------------------
// cross-checks used by several criteria

#[test]
fn config_loading_round_trips() {
    // ensures the acceptance workspace's config path is exercised
    let cfg = load_config(None, Profile::Desk, &[]).unwrap();
    assert_eq!(cfg.profile, Profile::Desk);
    assert!(gan::generator_feature_channels(&cfg.gan.to_gan_config(GanVariant::Cut, 0)).len() >= 2);
}
