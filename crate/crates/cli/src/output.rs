//! CSV streams, JSON documents and raster heatmaps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use patchflow::diagnostics::jumps::MarkerResiduals;
use patchflow::diagnostics::recorder::Cell;
use patchflow::{DiagnosticsRecord, ScalarGrid};
use serde::Serialize;

use crate::error::CliError;

pub const MARKER_COLUMNS: &[&str] = &[
    "step",
    "t",
    "marker",
    "x",
    "y",
    "valid",
    "jump_f",
    "jump_rho",
    "r1",
    "r2",
    "r3",
    "r4",
    "jump_flux",
    "jump_flux_error",
    "jump_mu_rot",
    "jump_mu_rot_error",
    "jump_grad",
];

/// The diagnostics time series, one row per record.
pub struct TimeSeriesWriter {
    w: csv::Writer<BufWriter<File>>,
}

impl TimeSeriesWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(DiagnosticsRecord::COLUMNS)?;
        Ok(Self { w })
    }

    pub fn write(&mut self, r: &DiagnosticsRecord) -> Result<(), CliError> {
        self.w.write_record(r.csv_cells())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}

/// Per-marker residual tables of every record, stacked.
pub struct MarkerWriter {
    w: csv::Writer<BufWriter<File>>,
}

impl MarkerWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(MARKER_COLUMNS)?;
        Ok(Self { w })
    }

    pub fn write(&mut self, step: u64, t: f64, markers: &[MarkerResiduals]) -> Result<(), CliError> {
        for m in markers {
            let row = [
                step.cell(),
                t.cell(),
                m.marker.cell(),
                m.x.cell(),
                m.y.cell(),
                u8::from(m.valid).cell(),
                m.jump_f.cell(),
                m.jump_rho.cell(),
                m.r1.cell(),
                m.r2.cell(),
                m.r3.cell(),
                m.r4.cell(),
                m.jump_flux.cell(),
                m.jump_flux_error.cell(),
                m.jump_mu_rot.cell(),
                m.jump_mu_rot_error.cell(),
                m.jump_grad.cell(),
            ];
            self.w.write_record(&row)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Pixel `(row, col)` shows node `(i, j) = (col, n - 1 - row)`, so that `y`
/// points up.
fn pixels(g: &ScalarGrid) -> impl Iterator<Item = f64> + '_ {
    let n = g.n();
    (0..n).flat_map(move |row| (0..n).map(move |col| g.values()[col * n + (n - 1 - row)]))
}

/// Binary grayscale PGM, black at the minimum and white at the maximum.
/// The range goes into a header comment.
pub fn write_pgm(path: &Path, g: &ScalarGrid) -> Result<(), CliError> {
    let (lo, hi) = (g.min(), g.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n# min {lo:e} max {hi:e}\n{} {}\n255\n", g.n(), g.n())?;
    let bytes: Vec<u8> = pixels(g).map(|v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Binary PPM on a blue-white-red scale symmetric about zero.
pub fn write_ppm_signed(path: &Path, g: &ScalarGrid) -> Result<(), CliError> {
    let m = g.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if m > 0.0 { m } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n# absmax {m:e}\n{} {}\n255\n", g.n(), g.n())?;
    let mut bytes = Vec::with_capacity(3 * g.n() * g.n());
    for v in pixels(g) {
        let s = (v / scale).clamp(-1.0, 1.0);
        let fade = (255.0 * (1.0 - s.abs())).round() as u8;
        if s >= 0.0 {
            bytes.extend_from_slice(&[255, fade, fade]);
        } else {
            bytes.extend_from_slice(&[fade, fade, 255]);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
