//! Rendering of audit artifacts from a [`MetricsDocument`].
//!
//! Renderers only format; every number comes from the document. IoUs and
//! percentages are rounded to two decimals here and nowhere else.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geo::Continent;
use crate::matching::Criterion;
use crate::metrics::{CriterionMetrics, MetricsDocument, ModelMetrics, RunCounters};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("model {0:?} is not in the metrics document")]
    UnknownModel(String),
    #[error("model {model:?} has no {criterion} results")]
    MissingCriterion { model: String, criterion: Criterion },
}

pub const DEFAULT_HIGHLIGHT_THRESHOLD: f64 = 0.05;
pub const HIGHLIGHT_MARK: &str = "*";
const ARROW: &str = "\u{2192}";
const MINUS: &str = "\u{2212}";

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub csv: String,
    pub text: String,
}

/// A highlighted cell improved by strictly more than the threshold.
pub fn is_highlighted(before: f64, after: f64, threshold: f64) -> bool {
    after - before > threshold
}

pub fn format_iou_cell(before: Option<f64>, after: Option<f64>) -> String {
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.2}"));
    format!("{} {ARROW} {}", f(before), f(after))
}

/// Two-decimal percentage with an ASCII sign for negatives and no sign for
/// positives. Values that round to zero print unsigned.
pub fn format_pct(value: f64) -> String {
    let s = format!("{value:.2}");
    if s == "-0.00" {
        "0.00%".to_owned()
    } else {
        format!("{s}%")
    }
}

/// [`format_pct`] with a typographic minus sign, for the text tables.
pub fn format_pct_text(value: f64) -> String {
    format_pct(value).replacen('-', MINUS, 1)
}

fn model<'a>(doc: &'a MetricsDocument, model_id: &str) -> Result<&'a ModelMetrics, ReportError> {
    doc.model(model_id)
        .ok_or_else(|| ReportError::UnknownModel(model_id.to_owned()))
}

fn csv_string(rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

fn text_grid(rows: &[Vec<String>]) -> String {
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|i| {
            rows.iter()
                .filter_map(|r| r.get(i))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (i, cell) in r.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            let pad = widths[i] - cell.chars().count();
            line.extend(std::iter::repeat_n(' ', pad));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn class_rows(
    m: &ModelMetrics,
    criterion: Criterion,
) -> Result<Vec<(&str, &CriterionMetrics)>, ReportError> {
    let rows: Vec<_> = m
        .classes
        .iter()
        .filter_map(|c| {
            c.by_criterion
                .get(&criterion)
                .map(|cm| (c.class_label.as_str(), cm))
        })
        .collect();
    if rows.is_empty() {
        return Err(ReportError::MissingCriterion {
            model: m.model_id.clone(),
            criterion,
        });
    }
    Ok(rows)
}

/// Before/after continent-IoU table for one model and criterion.
pub fn render_iou_table(
    doc: &MetricsDocument,
    model_id: &str,
    criterion: Criterion,
    highlight_threshold: f64,
) -> Result<RenderedTable, ReportError> {
    let m = model(doc, model_id)?;
    let rows = class_rows(m, criterion)?;

    let mut csv_rows = vec![{
        let mut h = vec!["class".to_owned()];
        h.extend(Continent::ALL.iter().map(|c| c.name().to_owned()));
        h.push("highlighted".to_owned());
        h
    }];
    let mut text_rows = vec![{
        let mut h = vec!["class".to_owned()];
        h.extend(Continent::ALL.iter().map(|c| c.heading().to_owned()));
        h
    }];
    let mut n_highlighted = 0;
    for (class, cm) in rows {
        let mut csv_row = vec![class.to_owned()];
        let mut text_row = vec![class.to_owned()];
        let mut marked = Vec::new();
        for c in Continent::ALL {
            let before = cm.plain.mean(c);
            let after = cm.corrected.mean(c);
            let cell = format_iou_cell(before, after);
            let hl = matches!((before, after), (Some(b), Some(a)) if is_highlighted(b, a, highlight_threshold));
            if hl {
                marked.push(c.name());
                n_highlighted += 1;
                text_row.push(format!("{cell}{HIGHLIGHT_MARK}"));
            } else {
                text_row.push(cell.clone());
            }
            csv_row.push(cell);
        }
        csv_row.push(marked.join(";"));
        csv_rows.push(csv_row);
        text_rows.push(text_row);
    }

    let mut text = format!(
        "{model_id}: continent {}-IoU before {ARROW} after class-merging\n",
        criterion.name()
    );
    text.push_str(&text_grid(&text_rows));
    if n_highlighted > 0 {
        let _ = writeln!(text, "{HIGHLIGHT_MARK} improvement > {highlight_threshold}");
    }
    Ok(RenderedTable {
        csv: csv_string(&csv_rows),
        text,
    })
}

fn disparity_heading(criterion: Criterion) -> String {
    let t = criterion.task();
    format!("Disp_{t}-{t}-corrected")
}

/// Percentage change in disparity per class, one column per criterion
/// present (detection first).
pub fn render_disparity_table(
    doc: &MetricsDocument,
    model_id: &str,
) -> Result<RenderedTable, ReportError> {
    let m = model(doc, model_id)?;
    let mut criteria = m.criteria();
    // detection column before segmentation
    criteria.sort_by_key(|c| match c {
        Criterion::Box => 0,
        Criterion::Mask => 1,
    });
    if criteria.is_empty() {
        return Err(ReportError::MissingCriterion {
            model: model_id.to_owned(),
            criterion: Criterion::Mask,
        });
    }

    let mut header = vec!["class".to_owned()];
    header.extend(criteria.iter().map(|&c| disparity_heading(c)));
    let mut csv_rows = vec![header.clone()];
    let mut text_rows = vec![header];
    let mut notes: Vec<String> = Vec::new();
    for class in &m.classes {
        let mut csv_row = vec![class.class_label.clone()];
        let mut text_row = vec![class.class_label.clone()];
        for &crit in &criteria {
            match class.by_criterion.get(&crit).and_then(|cm| cm.pct_change) {
                Some(p) => {
                    csv_row.push(format_pct(p));
                    text_row.push(format_pct_text(p));
                }
                None => {
                    csv_row.push("n/a".to_owned());
                    text_row.push("n/a".to_owned());
                    notes.push(format!(
                        "{} {}: {}",
                        class.class_label,
                        crit.task(),
                        undefined_reason(class.by_criterion.get(&crit))
                    ));
                }
            }
        }
        csv_rows.push(csv_row);
        text_rows.push(text_row);
    }

    let mut text = format!("{model_id}: percentage change in geo-disparity after class-merging\n");
    text.push_str(&text_grid(&text_rows));
    for n in notes {
        let _ = writeln!(text, "n/a: {n}");
    }
    Ok(RenderedTable {
        csv: csv_string(&csv_rows),
        text,
    })
}

fn undefined_reason(cm: Option<&CriterionMetrics>) -> String {
    let Some(cm) = cm else {
        return "not evaluated".to_owned();
    };
    if let Some(n) = &cm.plain.disp_note {
        return n.clone();
    }
    if let Some(n) = &cm.corrected.disp_note {
        return format!("corrected: {n}");
    }
    match cm.plain.disp {
        Some(0.0) => "baseline disparity is 0".to_owned(),
        _ => "undefined".to_owned(),
    }
}

// SVG layout, in user units.
const PLOT_TOP: f64 = 40.0;
const PLOT_HEIGHT: f64 = 300.0;
const PLOT_LEFT: f64 = 60.0;
const GLYPH_WIDTH: f64 = 18.0;
const GLYPH_GAP: f64 = 8.0;
const GROUP_GAP: f64 = 30.0;
const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];

fn y_of(v: f64) -> f64 {
    PLOT_TOP + PLOT_HEIGHT * (1.0 - v.clamp(0.0, 1.0))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Box-and-whisker plot of the six continent-IoUs per {class, model},
/// grouped by class. The IoU axis spans [0, 1], so box height is
/// proportional to the IQR.
pub fn render_box_plots(doc: &MetricsDocument, criterion: Criterion, corrected: bool) -> String {
    let summaries = doc.box_plot_summaries(criterion, corrected);
    let models: Vec<&str> = doc.models.iter().map(|m| m.model_id.as_str()).collect();

    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, s) in summaries.iter().enumerate() {
        match groups.last_mut() {
            Some((class, members)) if *class == s.class_label => members.push(i),
            _ => groups.push((&s.class_label, vec![i])),
        }
    }
    let glyphs: usize = groups.iter().map(|g| g.1.len()).sum();
    let plot_width =
        glyphs as f64 * (GLYPH_WIDTH + GLYPH_GAP) + groups.len() as f64 * GROUP_GAP + GROUP_GAP;
    let legend_width = 160.0;
    let width = PLOT_LEFT + plot_width.max(120.0) + legend_width;
    let height = PLOT_TOP + PLOT_HEIGHT + 60.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let title = format!(
        "continent {}-IoU, {}",
        criterion.name(),
        if corrected { "corrected" } else { "plain" }
    );
    let _ = writeln!(
        s,
        r#"<text x="{PLOT_LEFT:.0}" y="20" font-size="13">{}</text>"#,
        xml_escape(&title)
    );

    // axis and gridlines
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            PLOT_LEFT,
            PLOT_LEFT + plot_width
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            PLOT_LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{PLOT_LEFT:.2}" y1="{PLOT_TOP:.2}" x2="{PLOT_LEFT:.2}" y2="{:.2}" stroke="#000000"/>"##,
        PLOT_TOP + PLOT_HEIGHT
    );

    let mut x = PLOT_LEFT + GROUP_GAP;
    for (class, members) in &groups {
        let group_start = x;
        for &i in members {
            let b = &summaries[i];
            let q = &b.quartiles;
            let colour =
                PALETTE[models.iter().position(|m| *m == b.model_id).unwrap_or(0) % PALETTE.len()];
            let cx = x + GLYPH_WIDTH / 2.0;
            let _ = writeln!(
                s,
                r#"<g class="glyph" data-class="{}" data-model="{}" data-iqr="{:.6}">"#,
                xml_escape(class),
                xml_escape(&b.model_id),
                q.iqr
            );
            let _ = writeln!(
                s,
                r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#000000"/>"##,
                y_of(q.max),
                y_of(q.min)
            );
            for v in [q.min, q.max] {
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000"/>"##,
                    x + 4.0,
                    y_of(v),
                    x + GLYPH_WIDTH - 4.0,
                    y_of(v)
                );
            }
            let _ = writeln!(
                s,
                r##"<rect x="{x:.2}" y="{:.2}" width="{GLYPH_WIDTH:.2}" height="{:.2}" fill="{colour}" stroke="#000000"/>"##,
                y_of(q.q3),
                PLOT_HEIGHT * q.iqr
            );
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000" stroke-width="2"/>"##,
                y_of(q.median),
                x + GLYPH_WIDTH,
                y_of(q.median)
            );
            if let Some(cm) = doc
                .model(&b.model_id)
                .and_then(|m| m.class(class))
                .and_then(|c| c.by_criterion.get(&criterion))
            {
                for c in Continent::ALL {
                    if let Some(v) = cm.variant(corrected).mean(c) {
                        let _ = writeln!(
                            s,
                            r##"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="#000000"><title>{}</title></circle>"##,
                            y_of(v),
                            c.name()
                        );
                    }
                }
            }
            let _ = writeln!(s, "</g>");
            x += GLYPH_WIDTH + GLYPH_GAP;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (group_start + x - GLYPH_GAP) / 2.0,
            PLOT_TOP + PLOT_HEIGHT + 18.0,
            xml_escape(class)
        );
        x += GROUP_GAP;
    }

    let lx = PLOT_LEFT + plot_width.max(120.0) + 20.0;
    for (i, m) in models.iter().enumerate() {
        let y = PLOT_TOP + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{y:.2}" width="10" height="10" fill="{}"/>"#,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 14.0,
            y + 9.0,
            xml_escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Image and instance counters, as printed by `validate` and in the summary.
pub fn render_counters(c: &RunCounters) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "images: {}", c.images_total);
    for (cont, n) in &c.images_per_continent {
        let _ = writeln!(s, "  {:<14}{n}", cont.heading());
    }
    let _ = writeln!(s, "images without geo row: {}", c.images_without_geo);
    let _ = writeln!(
        s,
        "images with unresolved continent: {}",
        c.images_unresolved
    );
    let g = &c.ground_truth;
    let _ = writeln!(
        s,
        "ground truth: {} read, {} kept, {} aliased, {} dropped (not whitelisted)",
        g.records_read,
        g.records_kept,
        g.aliased.values().sum::<usize>(),
        g.dropped_total()
    );
    let _ = writeln!(s, "point-like instances excluded: {}", c.point_like.total());
    let _ = writeln!(
        s,
        "instances on images without continent: {}",
        c.gt_excluded_no_continent
    );
    for (model, p) in &c.predictions {
        let _ = writeln!(
            s,
            "predictions {model}: {} read, {} kept, {} aliased, {} dropped (not whitelisted)",
            p.records_read,
            p.records_kept,
            p.aliased.values().sum::<usize>(),
            p.dropped_total()
        );
    }
    if !c.instances_per_class.is_empty() {
        let mut rows = vec![{
            let mut h = vec!["class".to_owned()];
            h.extend(Continent::ALL.iter().map(|c| c.heading().to_owned()));
            h
        }];
        for (class, per) in &c.instances_per_class {
            let mut r = vec![class.clone()];
            r.extend(
                Continent::ALL
                    .iter()
                    .map(|c| per.get(c).copied().unwrap_or(0).to_string()),
            );
            rows.push(r);
        }
        let _ = writeln!(s, "\ninstances per class and continent:");
        s.push_str(&text_grid(&rows));
    }
    s
}

/// Plain-text run summary: counters, then disparity per model.
pub fn render_summary(doc: &MetricsDocument, highlight_threshold: f64) -> String {
    let mut s = String::new();
    if let Some(run) = &doc.run {
        let _ = writeln!(s, "geodisp {}", run.tool_version);
        let _ = writeln!(s, "region table: {}", run.region_table);
        for (role, digest) in &run.input_digests {
            let _ = writeln!(s, "input {role}: sha256 {digest}");
        }
        s.push('\n');
        s.push_str(&render_counters(&run.counters));
    }
    for m in &doc.models {
        let _ = writeln!(s, "\nmodel {}", m.model_id);
        for crit in m.criteria() {
            let mut rows = vec![vec![
                "class".to_owned(),
                "Disp".to_owned(),
                "Disp corrected".to_owned(),
                "change".to_owned(),
                "highlighted".to_owned(),
            ]];
            for c in &m.classes {
                let Some(cm) = c.by_criterion.get(&crit) else {
                    continue;
                };
                let d = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4}"));
                let hl = Continent::ALL
                    .iter()
                    .filter(|&&k| {
                        matches!((cm.plain.mean(k), cm.corrected.mean(k)),
                            (Some(b), Some(a)) if is_highlighted(b, a, highlight_threshold))
                    })
                    .count();
                rows.push(vec![
                    c.class_label.clone(),
                    d(cm.plain.disp),
                    d(cm.corrected.disp),
                    cm.pct_change.map_or_else(|| "n/a".to_owned(), format_pct),
                    hl.to_string(),
                ]);
            }
            let _ = writeln!(s, "{} ({})", crit.name(), crit.task());
            s.push_str(&text_grid(&rows));
        }
    }
    s
}

/// Every report file for a document, as (file name, contents), in a fixed
/// order. The formatted text tables are appended to `summary.txt`.
pub fn render_all(
    doc: &MetricsDocument,
    highlight_threshold: f64,
) -> Result<Vec<(String, String)>, ReportError> {
    let mut files = Vec::new();
    let mut criteria: Vec<Criterion> = doc.models.iter().flat_map(|m| m.criteria()).collect();
    criteria.sort();
    criteria.dedup();
    let mut summary = render_summary(doc, highlight_threshold);
    for m in &doc.models {
        for &crit in &m.criteria() {
            let t = render_iou_table(doc, &m.model_id, crit, highlight_threshold)?;
            files.push((format!("iou_{}_{}.csv", m.model_id, crit.name()), t.csv));
            summary.push('\n');
            summary.push_str(&t.text);
        }
        if !m.classes.is_empty() {
            let t = render_disparity_table(doc, &m.model_id)?;
            files.push((format!("disparity_{}.csv", m.model_id), t.csv));
            summary.push('\n');
            summary.push_str(&t.text);
        }
    }
    for &crit in &criteria {
        for (corrected, tag) in [(false, "plain"), (true, "corrected")] {
            files.push((
                format!("boxplots_{}_{tag}.svg", crit.name()),
                render_box_plots(doc, crit, corrected),
            ));
        }
    }
    files.push(("summary.txt".to_owned(), summary));
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ClassMetrics, ContinentCell, VariantMetrics, METRICS_SCHEMA_VERSION};
    use std::collections::BTreeMap;

    fn variant(means: [f64; 6]) -> VariantMetrics {
        VariantMetrics::from_row(
            Continent::ALL
                .iter()
                .zip(means)
                .map(|(&c, m)| {
                    (
                        c,
                        ContinentCell {
                            mean_iou: Some(m),
                            n_instances: 10,
                        },
                    )
                })
                .collect(),
        )
    }

    fn doc(classes: Vec<(&str, [f64; 6], [f64; 6])>) -> MetricsDocument {
        MetricsDocument {
            schema_version: METRICS_SCHEMA_VERSION,
            run: None,
            models: vec![ModelMetrics {
                model_id: "m".into(),
                classes: classes
                    .into_iter()
                    .map(|(name, before, after)| ClassMetrics {
                        class_label: name.into(),
                        by_criterion: BTreeMap::from([(
                            Criterion::Mask,
                            CriterionMetrics::new(variant(before), variant(after)),
                        )]),
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn pct_formatting() {
        assert_eq!(format_pct(-88.68), "-88.68%");
        assert_eq!(format_pct(32.55), "32.55%");
        assert_eq!(format_pct(-0.001), "0.00%");
        assert_eq!(format_pct(0.0), "0.00%");
        assert_eq!(format_pct_text(-90.07), "\u{2212}90.07%");
        assert_eq!(format_pct_text(6.07), "6.07%");
    }

    #[test]
    fn highlight_is_strict() {
        assert!(is_highlighted(0.17, 0.52, 0.05));
        assert!(!is_highlighted(0.59, 0.60, 0.05));
        assert!(!is_highlighted(0.5, 0.5, 0.0));
    }

    #[test]
    fn identical_runs_have_no_highlights() {
        let v = [0.5, 0.4, 0.3, 0.6, 0.7, 0.2];
        let d = doc(vec![("car", v, v)]);
        let t = render_iou_table(&d, "m", Criterion::Mask, 0.05).unwrap();
        assert!(!t.text.contains(HIGHLIGHT_MARK));
        assert!(t.csv.contains("car,0.50 \u{2192} 0.50,"));
        assert!(t.csv.lines().nth(1).unwrap().ends_with(','));
        let dt = render_disparity_table(&d, "m").unwrap();
        assert!(dt.csv.contains("car,0.00%"));
    }

    #[test]
    fn missing_model_and_criterion() {
        let d = doc(vec![("car", [0.5; 6], [0.5; 6])]);
        assert!(matches!(
            render_iou_table(&d, "x", Criterion::Mask, 0.05),
            Err(ReportError::UnknownModel(_))
        ));
        assert!(matches!(
            render_iou_table(&d, "m", Criterion::Box, 0.05),
            Err(ReportError::MissingCriterion { .. })
        ));
    }

    #[test]
    fn undefined_disparity_gets_footnote() {
        let d = doc(vec![("car", [0.5; 6], [0.5, 0.6, 0.5, 0.5, 0.5, 0.5])]);
        let t = render_disparity_table(&d, "m").unwrap();
        assert!(t.csv.contains("car,n/a"));
        assert!(t.text.contains("n/a: car seg: baseline disparity is 0"));
    }

    #[test]
    fn box_heights_follow_iqr() {
        let d = MetricsDocument {
            models: vec![
                doc(vec![("bus", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [0.5; 6])])
                    .models
                    .remove(0),
                ModelMetrics {
                    model_id: "n".into(),
                    ..doc(vec![("bus", [0.3, 0.31, 0.32, 0.33, 0.34, 0.35], [0.5; 6])])
                        .models
                        .remove(0)
                },
            ],
            ..doc(vec![])
        };
        let svg = render_box_plots(&d, Criterion::Mask, false);
        let heights: Vec<f64> = svg
            .lines()
            .filter(|l| l.starts_with("<rect x") && l.contains("stroke"))
            .map(|l| {
                let h = l.split("height=\"").nth(1).unwrap();
                h[..h.find('"').unwrap()].parse().unwrap()
            })
            .collect();
        assert_eq!(heights.len(), 2);
        assert!((heights[0] / heights[1] - 10.0).abs() < 0.01, "{heights:?}");
        assert_eq!(svg, render_box_plots(&d, Criterion::Mask, false));
        let flat = render_box_plots(&d, Criterion::Mask, true);
        assert!(flat.contains(r#"height="0.00""#));
    }
}
