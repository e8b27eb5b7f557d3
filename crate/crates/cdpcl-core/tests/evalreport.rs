//! mIoU, evaluation, discrepancy analysis, and report emission tests.

mod common;

use std::fs;
use std::path::PathBuf;

use cdpcl_core::evalreport::{
    diag_offdiag_means, discrepancy_report, emit_report, evaluate, miou, svg_line_plot,
    write_eval_csv, ConfusionMatrix,
};
use cdpcl_core::protobank::IGNORE_INDEX;
use cdpcl_core::segtrain::{train, TrainConfig};
use cdpcl_core::synthdomains::{make_split, SplitConfig};
use common::oracle_miou;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

#[test]
fn diagonal_confusion_is_perfect() {
    let mut cm = ConfusionMatrix::new(3);
    cm.add(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
    let (per, mean) = miou(&cm);
    assert_eq!(per, vec![Some(1.0), Some(1.0), Some(1.0)]);
    assert_eq!(mean, 1.0);
}

#[test]
fn missed_class_has_zero_iou_and_absent_class_is_excluded() {
    let mut cm = ConfusionMatrix::new(3);
    // class 1 appears 5 times in truth, never predicted; class 2 never occurs
    cm.add(&[1, 1, 1, 1, 1], &[0, 0, 0, 0, 0]).unwrap();
    let (per, mean) = miou(&cm);
    assert_eq!(per[1], Some(0.0));
    assert_eq!(per[2], None);
    // class 0: tp 0, fp 5 -> iou 0; mean over classes 0 and 1
    assert_eq!(mean, 0.0);
}

#[test]
fn confusion_total_counts_non_ignored_pixels() {
    let mut cm = ConfusionMatrix::new(2);
    cm.add(&[0, 1, IGNORE_INDEX, 1], &[1, 1, 0, 0]).unwrap();
    assert_eq!(cm.total(), 3);
    assert!(cm.add(&[0], &[5]).is_err());
    assert!(cm.add(&[0, 1], &[0]).is_err());
}

#[test]
fn miou_matches_bruteforce_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..50 {
        let c = rng.gen_range(2..6);
        let n = 64; // 8x8 maps
        let truth: Vec<u8> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    IGNORE_INDEX
                } else {
                    rng.gen_range(0..c) as u8
                }
            })
            .collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.gen_range(0..c) as u8).collect();
        let mut cm = ConfusionMatrix::new(c);
        cm.add(&truth, &pred).unwrap();
        let (per, mean) = miou(&cm);
        let (oper, omean) = oracle_miou(&truth, &pred, c);
        assert_eq!(per, oper);
        assert!((mean - omean).abs() <= 1e-15);
    }
}

#[test]
fn diag_offdiag_means_arithmetic() {
    let cos = vec![
        vec![Some(1.0), Some(0.2), None],
        vec![Some(0.0), Some(0.8), None],
        vec![None, None, None],
    ];
    let (d, o) = diag_offdiag_means(&cos);
    assert!((d - 0.9).abs() <= 1e-15);
    assert!((o - 0.1).abs() <= 1e-15);
}

struct TrainedRun {
    _data: tempfile::TempDir,
    _out: tempfile::TempDir,
    checkpoint: PathBuf,
    run_dir: PathBuf,
    eval_dirs: Vec<PathBuf>,
}

fn trained_run() -> TrainedRun {
    let data = tempfile::tempdir().unwrap();
    let mut scfg = SplitConfig::default_desk(data.path().into(), 4, 5);
    scfg.height = 32;
    scfg.width = 32;
    scfg.train_count = 4;
    scfg.eval_count = 2;
    let dirs = make_split(&scfg).unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        data_dir: data.path().into(),
        out_dir: out.path().into(),
        classes: 4,
        feat_dim: 12,
        batch: 2,
        iters: 8,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let outcome = train(&cfg).unwrap();
    TrainedRun {
        checkpoint: outcome.checkpoint,
        run_dir: out.path().into(),
        eval_dirs: dirs[1..].to_vec(),
        _data: data,
        _out: out,
    }
}

#[test]
fn evaluate_is_deterministic_and_validates() {
    let run = trained_run();
    let a = evaluate(&run.checkpoint, &run.eval_dirs).unwrap();
    let b = evaluate(&run.checkpoint, &run.eval_dirs).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.domain, y.domain);
        assert_eq!(x.per_class, y.per_class);
        assert_eq!(x.mean.to_bits(), y.mean.to_bits());
        assert!(x.mean >= 0.0 && x.mean <= 1.0);
        assert_eq!(x.pixels, 2 * 32 * 32);
    }

    // empty dataset directory: hard error, no partial table
    let empty = tempfile::tempdir().unwrap();
    fs::write(
        empty.path().join("manifest.tsv"),
        "# classes=4 height=32 width=32\n",
    )
    .unwrap();
    assert!(evaluate(&run.checkpoint, &[empty.path().into()]).is_err());

    // class-count mismatch
    let other = tempfile::tempdir().unwrap();
    let mut scfg = SplitConfig::default_desk(other.path().into(), 6, 1);
    scfg.height = 32;
    scfg.width = 32;
    scfg.train_count = 2;
    scfg.eval_count = 2;
    let dirs = make_split(&scfg).unwrap();
    assert!(evaluate(&run.checkpoint, &dirs[..1].to_vec()).is_err());
}

#[test]
fn eval_csv_layout() {
    let run = trained_run();
    let evals = evaluate(&run.checkpoint, &run.eval_dirs).unwrap();
    let path = run.run_dir.join("eval_miou.csv");
    write_eval_csv(&evals, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "domain,miou,class_0,class_1,class_2,class_3"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn discrepancy_report_is_deterministic_and_marks_absent() {
    let run = trained_run();
    let a = discrepancy_report(&run.checkpoint, &run.eval_dirs).unwrap();
    let b = discrepancy_report(&run.checkpoint, &run.eval_dirs).unwrap();
    assert_eq!(a.markdown, b.markdown);
    assert_eq!(a.classes, 4);
    // every defined cosine entry is a valid cosine
    for row in &a.cos_src {
        for v in row.iter().flatten() {
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v));
        }
    }
    // the markdown carries both L1 and cosine sections
    assert!(a.markdown.contains("vs source prototypes"));
    assert!(a.markdown.contains("Cosine similarity"));
}

fn fake_run(dir: &std::path::Path, ablation: &str, with_eval: bool) {
    fs::create_dir_all(dir).unwrap();
    let cfg = TrainConfig {
        ablation: ablation.parse().unwrap(),
        seed: 3,
        ..TrainConfig::default()
    };
    fs::write(dir.join("config_used.cfg"), cfg.to_text()).unwrap();
    fs::write(
        dir.join("train_log.csv"),
        "iter,lr,l_seg,l_upcl,l_hpcl,l_total,active_classes\n0,0.01,1.5,0.3,0.2,1.532,4\n1,0.0099,1.2,0.3,0.2,1.232,4\n",
    )
    .unwrap();
    if with_eval {
        fs::write(
            dir.join("eval_miou.csv"),
            "domain,miou,class_0\nunseen_a,0.5,0.5\nunseen_b,0.7,0.7\n",
        )
        .unwrap();
    }
}

#[test]
fn emit_report_summary_and_svg() {
    let root = tempfile::tempdir().unwrap();
    let modes = ["baseline", "pcl", "upcl", "hpcl", "cdpcl"];
    let run_dirs: Vec<PathBuf> = modes
        .iter()
        .map(|m| {
            let d = root.path().join(m);
            fake_run(&d, m, *m != "hpcl"); // one run lacks eval output
            d
        })
        .collect();
    let out = root.path().join("report");
    let written = emit_report(&run_dirs, &out).unwrap();
    assert!(written.iter().any(|p| p.ends_with("summary.csv")));

    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6); // header + one row per mode
    assert_eq!(lines[0], "run,ablation,seed,final_loss,miou_unseen_a,miou_unseen_b,miou_mean");
    assert!(lines.iter().any(|l| l.contains("absent")));

    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("| PCL | UPCL | HPCL |"));
    assert!(md.lines().filter(|l| l.starts_with("| ")).count() >= 5);

    let svg = fs::read_to_string(out.join("loss_curves.svg")).unwrap();
    assert!(svg.starts_with("<?xml"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<svg").count(), 1);
    assert_eq!(svg.matches("<polyline").count(), svg.matches("/>").count() - 1); // rect also self-closes
}

#[test]
fn emit_report_single_run_and_missing_logs() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path().join("solo");
    fake_run(&d, "cdpcl", true);
    let bare = root.path().join("bare");
    fs::create_dir_all(&bare).unwrap();
    let out = root.path().join("rep");
    emit_report(&[d, bare], &out).unwrap();
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("missing"));
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn svg_plot_handles_empty_and_flat_series() {
    let svg = svg_line_plot("empty", &[]);
    assert!(svg.contains("</svg>"));
    let flat = svg_line_plot("flat", &[("a".into(), vec![(0.0, 1.0), (1.0, 1.0)])]);
    assert!(flat.contains("<polyline"));
}
