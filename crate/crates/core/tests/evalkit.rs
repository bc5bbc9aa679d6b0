mod common;

use common::{random_windows, rng, small_config};
use rand::Rng;
use skelmap::dataset::{build_windows, label_windows, AbnormalRange, Label, WindowSpec};
use skelmap::evalkit::{auroc_oracle, export_latents, roc_curve, score_frames, score_window};
use skelmap::models::{pack_windows, Architecture, Model, ModelCheckpoint};
use skelmap::poseio::SkeletonImage;
use skelmap::Error;
use skelmap_tensor::{Mode, Tape};

fn random_labeled(r: &mut impl Rng) -> Vec<(f64, bool)> {
    let n = r.gen_range(2..=200);
    // a small value grid forces plenty of ties
    let levels = r.gen_range(1..=n.max(2));
    let mut s: Vec<(f64, bool)> = (0..n)
        .map(|_| (r.gen_range(0..levels) as f64 / levels as f64, r.gen_bool(0.4)))
        .collect();
    s[0].1 = true;
    s[1].1 = false;
    s
}

#[test]
fn trapezoid_matches_pairwise_oracle() {
    let mut r = rng(42);
    for _ in 0..200 {
        let s = random_labeled(&mut r);
        let roc = roc_curve(&s).unwrap();
        let oracle = auroc_oracle(&s).unwrap();
        assert!((roc.auroc - oracle).abs() < 1e-9, "{} vs {oracle}", roc.auroc);
        assert!((0.0..=1.0).contains(&roc.auroc));
        let distinct = {
            let mut v: Vec<f64> = s.iter().map(|p| p.0).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        };
        assert_eq!(roc.points.len() - 1, distinct + 1);
        assert!(roc.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    }
}

#[test]
fn monotone_transforms_leave_the_curve_unchanged() {
    let mut r = rng(43);
    let transforms: [fn(f64) -> f64; 3] = [|x| 3.0 * x - 7.0, |x| x.exp(), |x| (x + 0.5).powi(3)];
    for _ in 0..50 {
        let s = random_labeled(&mut r);
        let base = roc_curve(&s).unwrap();
        for f in transforms {
            let t: Vec<_> = s.iter().map(|&(v, l)| (f(v), l)).collect();
            let roc = roc_curve(&t).unwrap();
            assert_eq!(roc.auroc, base.auroc);
            let pts = |c: &skelmap::evalkit::RocCurve| c.points.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
            assert_eq!(pts(&roc), pts(&base));
        }
    }
}

fn run_images(segment: &str, n: u64, seed: u64) -> Vec<SkeletonImage> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let px = (0..skelmap::poseio::IMAGE_PIXELS).map(|_| u8::from(r.gen_bool(0.1))).collect();
            SkeletonImage::new(segment, i, px).unwrap()
        })
        .collect()
}

#[test]
fn frame_scores_cover_window_ends_and_agree_with_window_labels() {
    let cfg = small_config();
    let ck = ModelCheckpoint {
        model: Model::new(Architecture::LstmVae, cfg.clone(), 3).unwrap(),
        epochs: 0,
        seed: 3,
    };
    let mut images = run_images("a", 20, 1);
    images.extend(run_images("b", 9, 2));
    let windows = build_windows(&images, WindowSpec::new(cfg.window).unwrap());
    let ranges = vec![AbnormalRange::new("a", 5, 9).unwrap(), AbnormalRange::new("b", 0, 2).unwrap()];
    let series = score_frames(&ck, &windows, Some(&ranges), false).unwrap();
    assert_eq!(series.len(), (20 - 2) + (9 - 2));
    let labeled = label_windows(&windows, &ranges).unwrap();
    for (e, lw) in series.entries().iter().zip(&labeled) {
        assert_eq!((e.segment.as_str(), e.frame), (lw.window.segment_id(), lw.window.end_frame()));
        assert_eq!(e.label, Some(lw.label));
    }
    assert!(series.entries().iter().all(|e| e.frame >= 2));
    // the series agrees with single-window scoring
    for (w, e) in windows.iter().zip(series.entries()).step_by(5) {
        assert!((score_window(&ck, w, false).unwrap() - e.score).abs() < 1e-12);
    }
}

#[test]
fn window_score_matches_loop_reference() {
    let cfg = small_config();
    let model = Model::new(Architecture::LstmVae, cfg.clone(), 9).unwrap();
    let ck = ModelCheckpoint {
        model: model.clone(),
        epochs: 0,
        seed: 9,
    };
    let windows = random_windows(3, cfg.window, 10);
    let refs: Vec<_> = windows.iter().collect();
    let input = pack_windows(&refs, cfg.window).unwrap();
    let mut m = model;
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &input, 3, None, Mode::Eval).unwrap();
    let pred = tape.value(out.recon).data();
    let pix = skelmap::poseio::IMAGE_PIXELS;
    for (b, w) in windows.iter().enumerate() {
        let mut acc = 0.0;
        for t in 0..cfg.window {
            let row = (t * 3 + b) * pix;
            for (i, &x) in w.frame(t).iter().enumerate() {
                let y = pred[row + i];
                let x = f64::from(x);
                acc += x * y.ln() + (1.0 - x) * (1.0 - y).ln();
            }
        }
        let expect = -acc / (cfg.window * pix) as f64;
        assert!((score_window(&ck, w, false).unwrap() - expect).abs() < 1e-12);
        assert!(score_window(&ck, w, true).unwrap() >= expect - 1e-12);
    }
}

#[test]
fn scoring_checks_the_input_kind() {
    let cfg = small_config();
    let ck = ModelCheckpoint {
        model: Model::new(Architecture::Ae, cfg.clone(), 1).unwrap(),
        epochs: 0,
        seed: 1,
    };
    let w = &random_windows(1, cfg.window, 2)[0];
    assert!(matches!(score_window(&ck, w, false), Err(Error::Incompatible(_))));
}

#[test]
fn latents_match_the_encoder() {
    let cfg = small_config();
    let model = Model::new(Architecture::LstmVae, cfg.clone(), 12).unwrap();
    let ck = ModelCheckpoint {
        model: model.clone(),
        epochs: 0,
        seed: 12,
    };
    let mut windows = random_windows(40, cfg.window, 13);
    windows.push(windows[0].clone());
    let refs: Vec<_> = windows.iter().collect();
    let labels: Vec<_> = (0..refs.len()).map(|i| Some(if i % 3 == 0 { Label::Abnormal } else { Label::Normal })).collect();
    let table = export_latents(&ck, &refs, &labels).unwrap();
    assert_eq!(table.rows.len(), 41);
    assert_eq!(table.rows[0].mu, table.rows[40].mu);
    assert_eq!(table.rows[3].label, Some(Label::Abnormal));
    let mut m = model;
    for (w, row) in windows.iter().zip(&table.rows).step_by(7) {
        let input = pack_windows(&[w], cfg.window).unwrap();
        let mut tape = Tape::new();
        let (mu, _) = m.encode(&mut tape, &input, 1, Mode::Eval).unwrap();
        for (a, b) in tape.value(mu).data().iter().zip(&row.mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let csv = table.to_csv().unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 3 + cfg.latent_dim);
    assert!(header.starts_with("segment,end_frame,label,mu_1"));

    let ae = ModelCheckpoint {
        model: Model::new(Architecture::Ae, cfg.clone(), 1).unwrap(),
        epochs: 0,
        seed: 1,
    };
    let frames = random_windows(2, 1, 3);
    let refs: Vec<_> = frames.iter().collect();
    assert!(matches!(export_latents(&ae, &refs, &[]), Err(Error::Incompatible(_))));
}
