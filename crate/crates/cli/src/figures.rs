//! Figures as SVG, each with a CSV twin holding exactly the plotted values.
//!
//! Floats go through the CSV writer's shortest round-trip formatting, so
//! the readers here reproduce the plotted numbers bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use depthbins::bins::{peak_bin_index, BinCenterVector, BinKind, OccupancyHistogram};
use depthbins::metrics::{read_series_csv, write_series_csv, SeriesPoint};
use depthbins_net::eval::{evaluate, per_frame_series};
use depthbins_net::pipeline::synth_sequence;
use depthbins_net::train::prepare_all;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{load_model, ramp_color, split_samples, sweep_checkpoint, FiguresArgs, SweepRow, SWEEP_FILE};
use crate::{CliError, Result, SplitArg};

const SIZE: (u32, u32) = (720, 440);

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("plotting: {e}"))
}

#[derive(Debug, Default)]
pub struct FiguresSummary {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub curves: Vec<CurveRow>,
    /// `(variant, histogram)` for each evaluated model.
    pub occupancy: Vec<(String, OccupancyHistogram)>,
    pub series: Option<Vec<SeriesPoint>>,
    pub sweep: Option<Vec<SweepRow>>,
}

impl FiguresSummary {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

pub fn emit_all(a: &FiguresArgs) -> Result<FiguresSummary> {
    fs::create_dir_all(&a.out)?;
    let mut s = FiguresSummary::default();
    let (model, mut cfg) = load_model(&a.checkpoint, None)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let test = split_samples(&cfg, SplitArg::Test, a.limit)?;
    let ev = evaluate(&model, &test, cfg.eval_cap)?;

    // shortest- and longest-range images the model got right, if any
    let pick = |label: usize| {
        ev.samples
            .iter()
            .filter(|e| e.label == label)
            .max_by_key(|e| e.predicted_label == label)
    };
    let k = cfg.k_domains;
    let mut curves = Vec::new();
    for e in [pick(1), if k > 1 { pick(k) } else { None }].into_iter().flatten() {
        for (i, c) in e.fused_centers.iter().enumerate() {
            curves.push(CurveRow {
                frame_id: e.frame_id.clone(),
                label: e.label,
                index: i,
                center: *c,
            });
        }
    }
    let p = a.out.join("bin_centers.csv");
    write_rows(&p, &curves)?;
    s.written.push(p);
    s.written.push(plot_bin_centers(&a.out.join("bin_centers.svg"), &curves)?);
    s.curves = curves;

    s.occupancy.push(("variation".into(), ev.occupancy.clone()));
    match &a.width_checkpoint {
        Some(w) => {
            let (wm, _) = load_model(w, None)?;
            let wev = evaluate(&wm, &test, cfg.eval_cap)?;
            s.occupancy.push(("width".into(), wev.occupancy));
        }
        None => s.warn("no --width-checkpoint: skipping the width-based occupancy heatmap".into()),
    }
    for (name, h) in s.occupancy.clone() {
        let p = a.out.join(format!("occupancy_{name}.csv"));
        write_rows(&p, &occupancy_rows(&h))?;
        s.written.push(p);
        s.written.push(plot_heatmap(&a.out.join(format!("occupancy_{name}.svg")), &h, &name)?);
    }

    if cfg.dataset_dir.is_some() {
        s.warn("per-frame RMSE uses the synthetic sequence generator, not the dataset directory".into());
    }
    let frames = prepare_all(&synth_sequence(&cfg, a.frames)?.load_all()?, &cfg)?;
    let series = per_frame_series(&model, &frames, cfg.eval_cap)?;
    let p = a.out.join("per_frame_rmse.csv");
    write_series_csv(&series, fs::File::create(&p)?)?;
    s.written.push(p);
    s.written.push(plot_series(&a.out.join("per_frame_rmse.svg"), &series)?);
    s.series = Some(series);

    match &a.sweep_dir {
        Some(dir) => match load_sweep(dir, &mut s) {
            Some(rows) if !rows.is_empty() => {
                let p = a.out.join("k_sweep.csv");
                write_k_sweep_csv(&p, &rows)?;
                s.written.push(p);
                s.written.push(plot_k_sweep(&a.out.join("k_sweep.svg"), &rows)?);
                s.sweep = Some(rows);
            }
            _ => s.warn(format!("no usable sweep results in {}: skipping the K sweep", dir.display())),
        },
        None => s.warn("no --sweep-dir: skipping the K sweep".into()),
    }
    Ok(s)
}

/// Rows of `sweep.json`, keeping only K values whose checkpoint exists.
fn load_sweep(dir: &Path, s: &mut FiguresSummary) -> Option<Vec<SweepRow>> {
    let text = fs::read_to_string(dir.join(SWEEP_FILE)).ok()?;
    let rows: Vec<SweepRow> = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => {
            s.warn(format!("{}: {e}", dir.join(SWEEP_FILE).display()));
            return None;
        }
    };
    let mut kept = Vec::new();
    for r in rows {
        if sweep_checkpoint(dir, r.k).exists() {
            kept.push(r);
        } else {
            s.warn(format!("sweep checkpoint for K = {} is missing", r.k));
        }
    }
    Some(kept)
}

// ---------------------------------------------------------------- CSV twins

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub frame_id: String,
    pub label: usize,
    pub index: usize,
    pub center: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub bucket: usize,
    pub depth: f64,
    pub bin: usize,
    pub freq: f64,
}

pub fn occupancy_rows(h: &OccupancyHistogram) -> Vec<OccupancyRow> {
    let mut rows = Vec::with_capacity(h.freq.len());
    for b in 0..h.buckets.count {
        for (n, f) in h.row(b).iter().enumerate() {
            rows.push(OccupancyRow {
                bucket: b,
                depth: h.buckets.bucket_center(b),
                bin: n,
                freq: *f,
            });
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_bin_centers_csv(path: &Path) -> Result<Vec<CurveRow>> {
    read_rows(path)
}

pub fn read_occupancy_csv(path: &Path) -> Result<Vec<OccupancyRow>> {
    read_rows(path)
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesPoint>> {
    Ok(read_series_csv(fs::File::open(path)?)?)
}

pub fn write_k_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_k_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path)
}

// ---------------------------------------------------------------- charts

fn group_curves(rows: &[CurveRow]) -> Vec<(String, usize, Vec<(f64, f64)>)> {
    let mut out: Vec<(String, usize, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((id, _, pts)) if *id == r.frame_id => pts.push((r.index as f64, r.center)),
            _ => out.push((r.frame_id.clone(), r.label, vec![(r.index as f64, r.center)])),
        }
    }
    out
}

fn plot_bin_centers(path: &Path, rows: &[CurveRow]) -> Result<PathBuf> {
    let curves = group_curves(rows);
    let n = curves.iter().map(|c| c.2.len()).max().unwrap_or(1).max(2);
    let top = rows.iter().map(|r| r.center).fold(1.0, f64::max) * 1.05;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Fused bin centers", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..(n - 1) as f64, 0f64..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("bin index")
        .y_desc("center depth (m)")
        .draw()
        .map_err(plot_err)?;
    let palette = [BLUE, RED, GREEN, MAGENTA];
    for (i, (id, label, pts)) in curves.into_iter().enumerate() {
        let color = palette[i % palette.len()];
        let peak = peak_bin_index(&BinCenterVector::new(pts.iter().map(|p| p.1).collect(), BinKind::Fused));
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("frame {id}, RD{label}, peak bin {peak}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(path.to_path_buf())
}

fn plot_heatmap(path: &Path, h: &OccupancyHistogram, variant: &str) -> Result<PathBuf> {
    let peak = h.freq.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let step = h.buckets.max_depth / h.buckets.count as f64;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Depth frequency per bin ({variant})"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..h.n_bins as f64, 0f64..h.buckets.max_depth)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("bin index")
        .y_desc("ground-truth depth (m)")
        .draw()
        .map_err(plot_err)?;
    let cells = (0..h.buckets.count).flat_map(|b| {
        (0..h.n_bins).map(move |n| {
            let [r, g, bl] = ramp_color(1.0 - h.at(b, n) / peak);
            let y0 = b as f64 * step;
            Rectangle::new([(n as f64, y0), (n as f64 + 1.0, y0 + step)], RGBColor(r, g, bl).filled())
        })
    });
    chart.draw_series(cells).map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(path.to_path_buf())
}

fn plot_series(path: &Path, series: &[SeriesPoint]) -> Result<PathBuf> {
    let n = series.len().max(2) as f64;
    let top = series.iter().filter_map(|p| p.rmse).fold(0.1, f64::max) * 1.1;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("RMSE per frame (shaded: indoor)", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0f64..n, 0f64..top)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("frame").y_desc("RMSE (m)").draw().map_err(plot_err)?;
    let shade = RGBColor(210, 210, 210).mix(0.6).filled();
    chart
        .draw_series(series.iter().filter(|p| p.indoor_flag).map(|p| {
            let x = p.frame_index as f64;
            Rectangle::new([(x, 0.0), (x + 1.0, top)], shade)
        }))
        .map_err(plot_err)?;
    // frames without valid pixels break the line
    let mut segment = Vec::new();
    let mut segments = Vec::new();
    for p in series {
        match p.rmse {
            Some(r) => segment.push((p.frame_index as f64 + 0.5, r)),
            None if !segment.is_empty() => segments.push(std::mem::take(&mut segment)),
            None => {}
        }
    }
    if !segment.is_empty() {
        segments.push(segment);
    }
    for seg in segments {
        chart
            .draw_series(LineSeries::new(seg, BLUE.stroke_width(2)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(path.to_path_buf())
}

fn plot_k_sweep(path: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    let kmin = rows.iter().map(|r| r.k).min().unwrap_or(1) as f64;
    let kmax = rows.iter().map(|r| r.k).max().unwrap_or(2) as f64;
    let span = (kmin - 0.5)..(kmax + 0.5);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    let metrics: [(&str, fn(&SweepRow) -> f64, RGBColor); 2] =
        [("delta1", |r| r.delta1, BLUE), ("RMSE (m)", |r| r.rmse, RED)];
    for (area, (name, get, color)) in panels.iter().zip(metrics) {
        let top = rows.iter().map(get).fold(0.0, f64::max) * 1.1 + 1e-6;
        let mut chart = ChartBuilder::on(area)
            .caption(format!("{name} vs K"), ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(span.clone(), 0f64..top)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("K").y_desc(name).draw().map_err(plot_err)?;
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, get(r))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?;
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(path.to_path_buf())
}
