//! Unseen-domain mIoU evaluation, class-feature discrepancy analysis, and
//! report emission (CSV, markdown, standalone SVG plots).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CdpclError, Result};
use crate::numerics::{read_checkpoint, Tensor};
use crate::protobank::{downsample_labels, pool_class_features, LabelBatch, IGNORE_INDEX};
use crate::segtrain::{batch_tensor, load_state, SegNet, TrainConfig, DOWNSAMPLE};
use crate::synthdomains::read_dataset;

/// Pixel confusion counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulate a pair of flat label maps; ignored truth pixels are
    /// skipped.
    pub fn add(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(CdpclError::Shape {
                op: "ConfusionMatrix::add",
                detail: format!("truth {} pixels vs pred {}", truth.len(), pred.len()),
            });
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE_INDEX {
                continue;
            }
            if t as usize >= self.classes || p as usize >= self.classes {
                return Err(CdpclError::Data(format!(
                    "label pair ({t}, {p}) outside {} classes",
                    self.classes
                )));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }
}

/// Per-class IoU `TP / (TP + FP + FN)`; classes never observed in truth or
/// prediction are `None` and excluded from the mean.
pub fn miou(cm: &ConfusionMatrix) -> (Vec<Option<f64>>, f64) {
    let c = cm.classes;
    let mut per = Vec::with_capacity(c);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for ci in 0..c {
        let tp = cm.at(ci, ci);
        let fp: u64 = (0..c).filter(|&t| t != ci).map(|t| cm.at(t, ci)).sum();
        let fne: u64 = (0..c).filter(|&p| p != ci).map(|p| cm.at(ci, p)).sum();
        if tp + fp + fne == 0 {
            per.push(None);
        } else {
            let iou = tp as f64 / (tp + fp + fne) as f64;
            per.push(Some(iou));
            sum += iou;
            counted += 1;
        }
    }
    (per, if counted == 0 { 0.0 } else { sum / counted as f64 })
}

/// Result of evaluating one domain split.
#[derive(Debug, Clone)]
pub struct DomainEval {
    pub domain: String,
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    pub pixels: u64,
}

const EVAL_BATCH: usize = 8;

fn infer_dims(checkpoint: &Path) -> Result<(usize, usize)> {
    let tensors = read_checkpoint(checkpoint)?;
    let head = tensors
        .iter()
        .find(|(n, _)| n == "head_w")
        .map(|(_, t)| t)
        .ok_or_else(|| {
            CdpclError::Data(format!("{}: missing tensor 'head_w'", checkpoint.display()))
        })?;
    Ok((head.shape()[0], head.shape()[1]))
}

/// Load the network of a checkpoint, inferring class and feature counts
/// from the head weights.
pub fn load_eval_state(checkpoint: &Path) -> Result<crate::segtrain::TrainState> {
    let (classes, feat_dim) = infer_dims(checkpoint)?;
    let cfg = TrainConfig { classes, feat_dim, ..TrainConfig::default() };
    load_state(cfg, checkpoint)
}

fn eval_domain(net: &SegNet, dir: &Path) -> Result<DomainEval> {
    let ds = read_dataset(dir)?;
    if ds.classes != net.classes {
        return Err(CdpclError::Config(format!(
            "{}: dataset has {} classes, checkpoint has {}",
            dir.display(),
            ds.classes,
            net.classes
        )));
    }
    if ds.samples.is_empty() {
        return Err(CdpclError::Data(format!("{}: empty dataset", dir.display())));
    }
    let mut cm = ConfusionMatrix::new(net.classes);
    let mut idx = 0;
    while idx < ds.samples.len() {
        let end = (idx + EVAL_BATCH).min(ds.samples.len());
        let idxs: Vec<usize> = (idx..end).collect();
        let (images, labels) = batch_tensor(&ds, &idxs);
        let pred = net.predict(&images)?;
        cm.add(&labels.data, &pred)?;
        idx = end;
    }
    let pixels = cm.total();
    let (per_class, mean) = miou(&cm);
    let domain = ds
        .samples
        .first()
        .map(|s| s.domain.clone())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(DomainEval { domain, per_class, mean, pixels })
}

/// Evaluate a checkpoint on every given split, in order.
pub fn evaluate(checkpoint: &Path, dataset_dirs: &[PathBuf]) -> Result<Vec<DomainEval>> {
    let state = load_eval_state(checkpoint)?;
    dataset_dirs.iter().map(|d| eval_domain(&state.net, d)).collect()
}

/// Write the per-domain table: `domain,miou,class_0..class_{C-1}` with
/// empty cells for absent classes.
pub fn write_eval_csv(evals: &[DomainEval], path: &Path) -> Result<()> {
    let classes = evals.first().map(|e| e.per_class.len()).unwrap_or(0);
    let mut out = String::from("domain,miou");
    for c in 0..classes {
        write!(out, ",class_{c}").unwrap();
    }
    out.push('\n');
    for e in evals {
        write!(out, "{},{}", e.domain, e.mean).unwrap();
        for v in &e.per_class {
            match v {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CdpclError::Io { path: path.into(), source: e })
}

// ---------------------------------------------------------------------------
// discrepancy analysis

/// Per-class distances between dataset class features and the two prototype
/// banks, plus the full cross-cosine matrices. `None` marks classes absent
/// from the data or with an uninitialized prototype.
#[derive(Debug, Clone)]
pub struct DiscrepancyReport {
    pub classes: usize,
    /// mean elementwise L1 distance, class features vs source prototypes
    pub l1_src: Vec<Option<f64>>,
    pub l1_aug: Vec<Option<f64>>,
    /// `cos(feature_i, source prototype_k)`
    pub cos_src: Vec<Vec<Option<f64>>>,
    pub cos_aug: Vec<Vec<Option<f64>>>,
    pub markdown: String,
}

fn l2_normalized_row(t: &Tensor, row: usize) -> Vec<f64> {
    let n = t.shape()[1];
    let r = &t.data()[row * n..(row + 1) * n];
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    r.iter().map(|v| v / norm).collect()
}

/// Mean alignment split of a cross-cosine matrix: (mean diagonal, mean
/// off-diagonal) over defined entries.
pub fn diag_offdiag_means(cos: &[Vec<Option<f64>>]) -> (f64, f64) {
    let mut diag = (0.0, 0usize);
    let mut off = (0.0, 0usize);
    for (i, row) in cos.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if let Some(v) = v {
                if i == k {
                    diag = (diag.0 + v, diag.1 + 1);
                } else {
                    off = (off.0 + v, off.1 + 1);
                }
            }
        }
    }
    (
        if diag.1 == 0 { 0.0 } else { diag.0 / diag.1 as f64 },
        if off.1 == 0 { 0.0 } else { off.0 / off.1 as f64 },
    )
}

/// Pool class features over whole datasets with the checkpoint's network,
/// then compare them with both prototype banks. Features and prototypes are
/// L2-normalized per class, matching how the losses consume them.
pub fn discrepancy_report(checkpoint: &Path, dataset_dirs: &[PathBuf]) -> Result<DiscrepancyReport> {
    let state = load_eval_state(checkpoint)?;
    let (c, n) = (state.net.classes, state.net.feat_dim);
    if !state.bank_src.initialized.iter().any(|&b| b) {
        return Err(CdpclError::Contract {
            op: "discrepancy_report",
            detail: "checkpoint has no initialized prototypes".into(),
        });
    }

    // dataset-wide mean of per-batch pooled class features
    let mut sums = vec![vec![0.0; n]; c];
    let mut hits = vec![0usize; c];
    for dir in dataset_dirs {
        let ds = read_dataset(dir)?;
        if ds.classes != c {
            return Err(CdpclError::Config(format!(
                "{}: dataset has {} classes, checkpoint has {}",
                dir.display(),
                ds.classes,
                c
            )));
        }
        let mut idx = 0;
        while idx < ds.samples.len() {
            let end = (idx + EVAL_BATCH).min(ds.samples.len());
            let idxs: Vec<usize> = (idx..end).collect();
            let (images, labels) = batch_tensor(&ds, &idxs);
            let feats = {
                let mut g = crate::numerics::Graph::new();
                let v = state.net.frozen_forward(&mut g, &images)?;
                g.value(v).clone()
            };
            let labels_ds = downsample_labels(
                &LabelBatch::new(labels.b, labels.h, labels.w, labels.data.clone()).unwrap(),
                labels.h / DOWNSAMPLE,
                labels.w / DOWNSAMPLE,
            )?;
            let cf = pool_class_features(&feats, &labels_ds, c)?;
            for ci in 0..c {
                if cf.present[ci] {
                    for ni in 0..n {
                        sums[ci][ni] += cf.features.data()[ci * n + ni];
                    }
                    hits[ci] += 1;
                }
            }
            idx = end;
        }
    }

    let defined: Vec<bool> = (0..c)
        .map(|ci| hits[ci] > 0 && state.bank_src.initialized[ci] && state.bank_aug.initialized[ci])
        .collect();
    let norm_feat: Vec<Option<Vec<f64>>> = (0..c)
        .map(|ci| {
            if hits[ci] == 0 {
                return None;
            }
            let mean: Vec<f64> = sums[ci].iter().map(|v| v / hits[ci] as f64).collect();
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            Some(mean.iter().map(|v| v / norm).collect())
        })
        .collect();
    let l1 = |bank: &Tensor, ci: usize| -> Option<f64> {
        if !defined[ci] {
            return None;
        }
        let f = norm_feat[ci].as_ref()?;
        let p = l2_normalized_row(bank, ci);
        Some(f.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64)
    };
    let cosine = |bank: &Tensor| -> Vec<Vec<Option<f64>>> {
        (0..c)
            .map(|i| {
                (0..c)
                    .map(|k| {
                        if !defined[i] || !defined[k] {
                            return None;
                        }
                        let f = norm_feat[i].as_ref()?;
                        let p = l2_normalized_row(bank, k);
                        Some(f.iter().zip(&p).map(|(a, b)| a * b).sum())
                    })
                    .collect()
            })
            .collect()
    };
    let l1_src: Vec<Option<f64>> = (0..c).map(|ci| l1(&state.bank_src.prototypes, ci)).collect();
    let l1_aug: Vec<Option<f64>> = (0..c).map(|ci| l1(&state.bank_aug.prototypes, ci)).collect();
    let cos_src = cosine(&state.bank_src.prototypes);
    let cos_aug = cosine(&state.bank_aug.prototypes);

    let mut md = String::new();
    md.push_str("## Class-feature discrepancy\n\n");
    md.push_str("Mean elementwise L1 distance between dataset class features and prototypes.\n\n");
    md.push_str("| Class | vs source prototypes | vs augmented prototypes |\n");
    md.push_str("|---|---|---|\n");
    for ci in 0..c {
        let fmt = |v: &Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "absent".to_string(),
        };
        writeln!(md, "| class_{ci} | {} | {} |", fmt(&l1_src[ci]), fmt(&l1_aug[ci])).unwrap();
    }
    for (title, cos) in [("source", &cos_src), ("augmented", &cos_aug)] {
        writeln!(md, "\n### Cosine similarity, class features vs {title} prototypes\n").unwrap();
        md.push_str("| |");
        for k in 0..c {
            write!(md, " class_{k} |").unwrap();
        }
        md.push('\n');
        md.push_str("|---|");
        md.push_str(&"---|".repeat(c));
        md.push('\n');
        for i in 0..c {
            write!(md, "| class_{i} |").unwrap();
            for k in 0..c {
                match cos[i][k] {
                    Some(v) => write!(md, " {v:.4} |").unwrap(),
                    None => write!(md, " absent |").unwrap(),
                }
            }
            md.push('\n');
        }
    }

    Ok(DiscrepancyReport {
        classes: c,
        l1_src,
        l1_aug,
        cos_src,
        cos_aug,
        markdown: md,
    })
}

// ---------------------------------------------------------------------------
// run summary report

/// What one run directory contributed to the summary.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub ablation: Option<String>,
    pub seed: Option<u64>,
    pub final_total: Option<f64>,
    pub loss_curve: Vec<(f64, f64)>,
    pub domain_miou: Vec<(String, f64)>,
    pub missing: Vec<String>,
}

fn parse_train_log(path: &Path) -> Option<(Vec<(f64, f64)>, f64)> {
    let text = fs::read_to_string(path).ok()?;
    let mut curve = Vec::new();
    let mut last = f64::NAN;
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 7 {
            continue;
        }
        let it: f64 = cells[0].parse().ok()?;
        let total: f64 = cells[5].parse().ok()?;
        curve.push((it, total));
        last = total;
    }
    if curve.is_empty() {
        None
    } else {
        Some((curve, last))
    }
}

fn parse_eval_csv(path: &Path) -> Option<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).ok()?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let mut cells = line.split(',');
        let domain = cells.next()?.to_string();
        let val: f64 = cells.next()?.parse().ok()?;
        rows.push((domain, val));
    }
    Some(rows)
}

fn summarize_run(dir: &Path) -> RunSummary {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let mut missing = Vec::new();
    let (ablation, seed) = match TrainConfig::from_file(&dir.join("config_used.cfg")) {
        Ok(cfg) => (Some(cfg.ablation.as_str().to_string()), Some(cfg.seed)),
        Err(_) => {
            missing.push("config_used.cfg".to_string());
            (None, None)
        }
    };
    let (loss_curve, final_total) = match parse_train_log(&dir.join("train_log.csv")) {
        Some((c, l)) => (c, Some(l)),
        None => {
            missing.push("train_log.csv".to_string());
            (Vec::new(), None)
        }
    };
    let domain_miou = match parse_eval_csv(&dir.join("eval_miou.csv")) {
        Some(rows) => rows,
        None => {
            missing.push("eval_miou.csv".to_string());
            Vec::new()
        }
    };
    RunSummary { name, ablation, seed, final_total, loss_curve, domain_miou, missing }
}

/// Minimal standalone SVG line plot; one polyline per series.
pub fn svg_line_plot(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 40.0);
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    if ymax == ymin {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut svg = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        w / 2.0,
        title
    )
    .unwrap();
    writeln!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>",
        w - ml - mr,
        h - mt - mb
    )
    .unwrap();
    for (label, pos) in [(ymin, h - mb), (ymax, mt)] {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{label:.3}</text>",
            ml - 6.0,
            pos + 4.0
        )
        .unwrap();
    }
    for (label, pos) in [(xmin, ml), (xmax, w - mr)] {
        writeln!(
            svg,
            "<text x=\"{pos}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{label:.0}</text>",
            h - mb + 16.0
        )
        .unwrap();
    }
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let path: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            w - mr - 150.0,
            mt + 16.0 * (si as f64 + 1.0)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn esc_csv(s: &str) -> String {
    s.replace(',', ";")
}

/// Aggregate run directories into `summary.csv`, `report.md`, and SVG plots
/// under `out_dir`. Runs with missing artifacts appear with `absent` cells;
/// the report is still produced.
pub fn emit_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| CdpclError::Io { path: out_dir.into(), source: e })?;
    let runs: Vec<RunSummary> = run_dirs.iter().map(|d| summarize_run(d)).collect();
    let mut written = Vec::new();

    // union of domain names across runs, in first-seen order
    let mut domains: Vec<String> = Vec::new();
    for r in &runs {
        for (d, _) in &r.domain_miou {
            if !domains.contains(d) {
                domains.push(d.clone());
            }
        }
    }

    let mut csv = String::from("run,ablation,seed,final_loss");
    for d in &domains {
        write!(csv, ",miou_{}", esc_csv(d)).unwrap();
    }
    csv.push_str(",miou_mean\n");
    let cell = |v: Option<String>| v.unwrap_or_else(|| "absent".to_string());
    for r in &runs {
        write!(
            csv,
            "{},{},{},{}",
            esc_csv(&r.name),
            cell(r.ablation.clone()),
            cell(r.seed.map(|s| s.to_string())),
            cell(r.final_total.map(|v| v.to_string()))
        )
        .unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for d in &domains {
            match r.domain_miou.iter().find(|(n, _)| n == d) {
                Some((_, v)) => {
                    write!(csv, ",{v}").unwrap();
                    sum += v;
                    count += 1;
                }
                None => csv.push_str(",absent"),
            }
        }
        if count > 0 {
            writeln!(csv, ",{}", sum / count as f64).unwrap();
        } else {
            csv.push_str(",absent\n");
        }
    }
    let csv_path = out_dir.join("summary.csv");
    fs::write(&csv_path, &csv).map_err(|e| CdpclError::Io { path: csv_path.clone(), source: e })?;
    written.push(csv_path);

    // markdown summary; the checkmark columns mirror which loss terms each
    // ablation mode enables
    let mut md = String::from("# Run summary\n\n");
    md.push_str("| Run | PCL | UPCL | HPCL |");
    for d in &domains {
        write!(md, " mIoU {d} |").unwrap();
    }
    md.push_str(" mean |\n|---|---|---|---|");
    md.push_str(&"---|".repeat(domains.len() + 1));
    md.push('\n');
    for r in &runs {
        let marks = match r.ablation.as_deref() {
            Some("baseline") => [" ", " ", " "],
            Some("pcl") => ["x", " ", " "],
            Some("upcl") => [" ", "x", " "],
            Some("hpcl") => [" ", " ", "x"],
            Some("cdpcl") => [" ", "x", "x"],
            _ => ["?", "?", "?"],
        };
        write!(md, "| {} | {} | {} | {} |", r.name, marks[0], marks[1], marks[2]).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for d in &domains {
            match r.domain_miou.iter().find(|(n, _)| n == d) {
                Some((_, v)) => {
                    write!(md, " {:.2} |", v * 100.0).unwrap();
                    sum += v;
                    count += 1;
                }
                None => md.push_str(" absent |"),
            }
        }
        if count > 0 {
            writeln!(md, " {:.2} |", sum / count as f64 * 100.0).unwrap();
        } else {
            md.push_str(" absent |\n");
        }
    }
    md.push('\n');
    for r in &runs {
        if !r.missing.is_empty() {
            writeln!(md, "- `{}`: missing {}", r.name, r.missing.join(", ")).unwrap();
        }
    }

    // loss curves, one plot over all runs that have logs
    let loss_series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .filter(|r| !r.loss_curve.is_empty())
        .map(|r| (r.name.clone(), r.loss_curve.clone()))
        .collect();
    if !loss_series.is_empty() {
        let p = out_dir.join("loss_curves.svg");
        fs::write(&p, svg_line_plot("Training loss", &loss_series))
            .map_err(|e| CdpclError::Io { path: p.clone(), source: e })?;
        writeln!(md, "\n![loss](loss_curves.svg)").unwrap();
        written.push(p);
    }
    let miou_series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .filter(|r| !r.domain_miou.is_empty())
        .map(|r| {
            let pts = domains
                .iter()
                .enumerate()
                .filter_map(|(i, d)| {
                    r.domain_miou.iter().find(|(n, _)| n == d).map(|(_, v)| (i as f64, *v))
                })
                .collect();
            (r.name.clone(), pts)
        })
        .collect();
    if !miou_series.is_empty() {
        let p = out_dir.join("miou.svg");
        fs::write(&p, svg_line_plot("mIoU per domain", &miou_series))
            .map_err(|e| CdpclError::Io { path: p.clone(), source: e })?;
        writeln!(md, "\n![miou](miou.svg)").unwrap();
        written.push(p);
    }

    let md_path = out_dir.join("report.md");
    fs::write(&md_path, &md).map_err(|e| CdpclError::Io { path: md_path.clone(), source: e })?;
    written.push(md_path);
    Ok(written)
}
