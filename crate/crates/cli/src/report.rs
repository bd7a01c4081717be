use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use qaware::train::{read_trace, AblationResult, CategoryGrid, MetricsReport, TraceRecord};

use crate::CliError;

const FONT: &str = "sans-serif";

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("plot: {e}"))
}

/// Loss and both terms per step.
pub fn render_loss_plot(trace: &[TraceRecord], path: &Path) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let series: [(&str, RGBColor, fn(&TraceRecord) -> f64); 3] = [
        ("loss", BLACK, |r| r.loss),
        ("term1", RGBColor(200, 40, 40), |r| r.term1),
        ("term2", RGBColor(40, 80, 200), |r| r.term2),
    ];
    let values = trace.iter().flat_map(|r| [r.loss, r.term1, r.term2]);
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let n = trace.len().max(2) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("pretraining loss", (FONT, 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..n, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("value")
        .label_style((FONT, 12))
        .draw()
        .map_err(plot_err)?;
    for (name, color, get) in series {
        chart
            .draw_series(LineSeries::new(trace.iter().enumerate().map(|(i, r)| (i as f64, get(r))), &color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .label_font((FONT, 12))
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn heat_color(v: f64, lo: f64, hi: f64) -> RGBColor {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(lerp(247.0, 8.0), lerp(251.0, 69.0), lerp(255.0, 148.0))
}

/// Category-pair grid: rows are the first category, columns the second.
pub fn render_heatmap(grid: &CategoryGrid, path: &Path) -> Result<(), CliError> {
    let n = grid.categories.len();
    let cell = 120;
    let (left, top) = (110, 60);
    let root = SVGBackend::new(path, ((left + cell * n + 20) as u32, (top + cell * n + 40) as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let vals: Vec<f64> = grid.srcc.iter().flatten().flatten().copied().collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    root.draw(&Text::new("probe SRCC by category pair", (left as i32, 20), (FONT, 18)))
        .map_err(plot_err)?;
    for (i, (cat, row)) in grid.categories.iter().zip(&grid.srcc).enumerate() {
        let y = (top + i * cell) as i32;
        root.draw(&Text::new(cat.name(), (10, y + cell as i32 / 2), (FONT, 14))).map_err(plot_err)?;
        for (j, v) in row.iter().enumerate() {
            let x = (left + j * cell) as i32;
            if i == 0 {
                let name = grid.categories[j].name();
                root.draw(&Text::new(name, (x + 20, top as i32 - 16), (FONT, 14))).map_err(plot_err)?;
            }
            let fill = v.map_or(RGBColor(220, 220, 220), |v| heat_color(v, lo, hi));
            root.draw(&Rectangle::new([(x, y), (x + cell as i32, y + cell as i32)], fill.filled()))
                .map_err(plot_err)?;
            root.draw(&Rectangle::new([(x, y), (x + cell as i32, y + cell as i32)], BLACK))
                .map_err(plot_err)?;
            let label = v.map_or("-".to_string(), |v| format!("{v:.3}"));
            let ink = if v.is_some_and(|v| heat_color(v, lo, hi).0 < 120) { WHITE } else { BLACK };
            root.draw(&Text::new(label, (x + cell as i32 / 2 - 20, y + cell as i32 / 2), (FONT, 16).into_font().color(&ink)))
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn metrics_line(out: &mut String, name: &str, m: &MetricsReport) {
    let _ = writeln!(
        out,
        "{name}: median SRCC {:.4}, median PLCC {:.4} over {} splits",
        m.median_srcc,
        m.median_plcc,
        m.per_seed.len()
    );
}

/// Files written by `report`.
#[derive(Debug, Default)]
pub struct ReportOutput {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Summarizes whatever a run directory holds: a pretraining trace, probe or
/// fine-tune metrics, an ablation table. Plots go to `out`.
pub fn report(run: &Path, out: &Path) -> Result<ReportOutput, CliError> {
    let trace_path = run.join("trace.jsonl");
    let probe_path = run.join("probe_metrics.json");
    let ft_path = run.join("finetune_metrics.json");
    let ablation_path = run.join("ablation.json");
    if ![&trace_path, &probe_path, &ft_path, &ablation_path].iter().any(|p| p.exists()) {
        return Err(CliError::Data(format!(
            "{} has no trace.jsonl, metrics or ablation.json",
            run.display()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut res = ReportOutput::default();
    let s = &mut res.summary;
    let _ = writeln!(s, "run: {}", run.display());

    if trace_path.exists() {
        let trace = read_trace(&trace_path)?;
        if trace.is_empty() {
            let _ = writeln!(s, "no steps recorded");
        } else {
            let epochs = trace.last().map_or(0, |r| r.epoch + 1);
            let mean = |e: usize, f: fn(&TraceRecord) -> f64| {
                let v: Vec<f64> = trace.iter().filter(|r| r.epoch == e).map(f).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            };
            let _ = writeln!(s, "steps: {} over {} epochs", trace.len(), epochs);
            let _ = writeln!(s, "epoch\tloss\tterm1\tterm2");
            for e in 0..epochs {
                let _ = writeln!(
                    s,
                    "{e}\t{:.4}\t{:.4}\t{:.4}",
                    mean(e, |r| r.loss),
                    mean(e, |r| r.term1),
                    mean(e, |r| r.term2)
                );
            }
            let plot = out.join("loss.svg");
            render_loss_plot(&trace, &plot)?;
            res.files.push(plot);
        }
    }
    if probe_path.exists() {
        metrics_line(s, "linear probe", &read_json(&probe_path)?);
    }
    if ft_path.exists() {
        metrics_line(s, "fine-tune", &read_json(&ft_path)?);
    }
    if ablation_path.exists() {
        let results: Vec<AblationResult> = read_json(&ablation_path)?;
        let _ = writeln!(s, "variant\tmedian_srcc\tmedian_plcc");
        for r in &results {
            let _ = writeln!(s, "{}\t{:.4}\t{:.4}", r.name, r.probe.median_srcc, r.probe.median_plcc);
        }
        let grid = CategoryGrid::from_results(&results);
        if grid.srcc.iter().flatten().any(Option::is_some) {
            let _ = write!(s, "{}", grid.to_table());
            let plot = out.join("heatmap.svg");
            render_heatmap(&grid, &plot)?;
            res.files.push(plot);
        }
    }
    let path = out.join("summary.txt");
    std::fs::write(&path, &res.summary).map_err(|e| CliError::io(&path, e))?;
    res.files.push(path);
    Ok(res)
}
