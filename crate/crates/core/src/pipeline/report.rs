//! Self-contained HTML report: dataset counts, metrics comparison,
//! mean-intensity table, figure galleries, and the provenance block.
//! Deterministic output except for the single timestamp line.

use std::path::Path;

use crate::data::GradeLabel;
use crate::error::{Error, Result};

use super::config::PipelineConfig;
use super::manifest::{count_dataset_csv, require_artifact, StageManifest};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn csv_to_html_table(path: &Path) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;
    let mut html = String::from("<table>\n");
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?;
        let tag = if i == 0 { "th" } else { "td" };
        html.push_str("<tr>");
        for field in row.iter() {
            html.push_str(&format!("<{tag}>{}</{tag}>", escape(field)));
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</table>\n");
    Ok(html)
}

/// Assemble `report/report.html` plus copied assets; returns the
/// workspace-relative paths written.
pub fn make_report(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let ws = &cfg.paths.workspace;
    require_artifact(ws, "eval/metrics.csv")?;
    require_artifact(ws, "interpret/mean_intensity.csv")?;

    let report_dir = ws.join("report");
    let assets_dir = report_dir.join("assets");
    std::fs::create_dir_all(&assets_dir).map_err(|e| Error::io(&assets_dir, e))?;
    let mut outputs = vec!["report/report.html".to_string()];

    // copy figures into the report's asset directory
    let mut galleries: Vec<(String, Vec<(String, String)>)> = Vec::new(); // (section, [(asset rel, caption)])
    for section in ["histograms", "spectra", "pca", "gradcam"] {
        let dir = ws.join("interpret").join(section);
        if !dir.is_dir() {
            continue;
        }
        let mut entries: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|s| s.to_str()) == Some("png"))
            .collect();
        entries.sort();
        let mut items = Vec::new();
        for src in entries {
            let name = format!(
                "{section}_{}",
                src.file_name().unwrap().to_string_lossy()
            );
            let dst = assets_dir.join(&name);
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
            outputs.push(format!("report/assets/{name}"));
            let caption = src
                .file_stem()
                .unwrap()
                .to_string_lossy()
                .replace('_', " ");
            items.push((format!("assets/{name}"), caption));
        }
        if !items.is_empty() {
            galleries.push((section.to_string(), items));
        }
    }

    // per-grade dataset counts by augmentation method
    let mut counts_html = String::from(
        "<table>\n<tr><th>grade</th><th>Original</th><th>Transformations</th><th>CycleGAN</th><th>CUT</th></tr>\n",
    );
    let col = |rel: &str| -> Option<std::collections::BTreeMap<GradeLabel, usize>> {
        count_dataset_csv(ws, rel).ok()
    };
    let columns = [
        col("data/manifest.csv"),
        col("augmented/manifest.csv"),
        col("generated/cyclegan_manifest.csv"),
        col("generated/cut_manifest.csv"),
    ];
    let mut totals = [0usize; 4];
    for g in GradeLabel::all() {
        counts_html.push_str(&format!("<tr><td>grade {}</td>", g.value()));
        for (i, c) in columns.iter().enumerate() {
            match c {
                Some(map) => {
                    let v = map.get(&g).copied().unwrap_or(0);
                    totals[i] += v;
                    counts_html.push_str(&format!("<td>{v}</td>"));
                }
                None => counts_html.push_str("<td></td>"),
            }
        }
        counts_html.push_str("</tr>\n");
    }
    counts_html.push_str("<tr><td>total</td>");
    for (i, c) in columns.iter().enumerate() {
        if c.is_some() {
            counts_html.push_str(&format!("<td>{}</td>", totals[i]));
        } else {
            counts_html.push_str("<td></td>");
        }
    }
    counts_html.push_str("</tr>\n</table>\n");

    let metrics_html = csv_to_html_table(&ws.join("eval/metrics.csv"))?;
    let intensity_html = csv_to_html_table(&ws.join("interpret/mean_intensity.csv"))?;
    let pca_html = if ws.join("interpret/pca_summary.csv").exists() {
        csv_to_html_table(&ws.join("interpret/pca_summary.csv"))?
    } else {
        String::new()
    };

    // provenance: every stage manifest with its full output listing
    let mut provenance = String::new();
    let manifests_dir = ws.join("manifests");
    if manifests_dir.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(&manifests_dir)
            .map_err(|e| Error::io(&manifests_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        for f in files {
            let stage = f.file_stem().unwrap().to_string_lossy().to_string();
            if stage == "report" {
                // the report cannot self-describe; its assets are linked above
                continue;
            }
            if let Ok(m) = StageManifest::read(ws, &stage) {
                provenance.push_str(&format!(
                    "<details><summary>{} &mdash; seed {}, config {}, {} output(s)</summary>\n<ul>\n",
                    escape(&m.stage),
                    m.seed,
                    &m.config_hash[..12.min(m.config_hash.len())],
                    m.outputs.len()
                ));
                for o in &m.outputs {
                    provenance.push_str(&format!(
                        "<li><code>{}</code> <small>{}</small></li>\n",
                        escape(&o.path),
                        &o.sha256[..12.min(o.sha256.len())]
                    ));
                }
                provenance.push_str("</ul>\n</details>\n");
            }
        }
    }

    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    html.push_str(&format!("<title>{}</title>\n", escape(&cfg.report.title)));
    html.push_str(
        "<style>body{font-family:sans-serif;max-width:1100px;margin:2em auto;padding:0 1em}\
         table{border-collapse:collapse;margin:1em 0}td,th{border:1px solid #999;\
         padding:4px 10px;text-align:right}th{background:#eee}img{margin:4px;\
         image-rendering:pixelated}h2{border-bottom:1px solid #ccc}</style>\n</head>\n<body>\n",
    );
    html.push_str(&format!("<h1>{}</h1>\n", escape(&cfg.report.title)));
    html.push_str(&format!(
        "<p id=\"generated-at\">generated at unix time {timestamp}</p>\n"
    ));

    html.push_str("<h2>Dataset counts by augmentation method</h2>\n");
    html.push_str(&counts_html);
    html.push_str("<h2>Classification performance</h2>\n");
    html.push_str(&metrics_html);
    html.push_str("<h2>Grad-CAM mean heatmap intensity</h2>\n");
    html.push_str(&intensity_html);
    if !pca_html.is_empty() {
        html.push_str("<h2>Feature-space separability</h2>\n");
        html.push_str(&pca_html);
    }

    for (section, items) in &galleries {
        html.push_str(&format!("<h2>{}</h2>\n", escape(section)));
        for (asset, caption) in items {
            html.push_str(&format!(
                "<figure style=\"display:inline-block\"><img src=\"{asset}\" alt=\"{0}\" width=\"240\">\
                 <figcaption><small>{0}</small></figcaption></figure>\n",
                escape(caption)
            ));
        }
    }

    html.push_str("<h2>Provenance</h2>\n");
    html.push_str(&format!(
        "<p>tool version {}, root seed {}, config hash <code>{}</code></p>\n",
        crate::TOOL_VERSION,
        cfg.seed,
        cfg.config_hash()
    ));
    html.push_str(&provenance);
    html.push_str("</body>\n</html>\n");

    let path = report_dir.join("report.html");
    std::fs::write(&path, html).map_err(|e| Error::io(&path, e))?;
    Ok(outputs)
}
