//! Localization tables (ThunderSTORM-style header, nanometre units, 1-based
//! frames) and synthetic ground-truth emitter lists.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::localize::{Localization, LocalizationTable};
use crate::metrics::TruthTable;

use super::{atomic_write, read_file};

pub const LOCS_HEADER: &str = r#""id","frame","x [nm]","y [nm]","sigma [nm]","intensity [photon]""#;
pub const TRUTH_HEADER: &str = "frame,emitter,x_px,y_px";

/// Serialises with 1-based ids and frames; positions and sigma are converted to
/// nanometres with the table's pixel size. The fit residual is not stored.
pub fn format_locs_csv(table: &LocalizationTable) -> Result<String> {
    let px = table.pixel_size_nm;
    if !(px > 0.0 && px.is_finite()) {
        return Err(Error::param("pixel size must be finite and > 0"));
    }
    let mut out = String::with_capacity(64 * (table.len() + 1));
    out.push_str(LOCS_HEADER);
    out.push('\n');
    for (i, l) in table.locs.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            l.frame + 1,
            l.x * px,
            l.y * px,
            l.sigma * px,
            l.intensity
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_locs_csv(table: &LocalizationTable, path: &Path) -> Result<()> {
    atomic_write(path, format_locs_csv(table)?.as_bytes())
}

fn csv_err(label: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Csv {
        path: label.to_string(),
        line,
        msg: msg.into(),
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(|f| f.trim().trim_matches('"')).collect()
}

fn number(label: &str, line: usize, name: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .parse()
        .map_err(|_| csv_err(label, line, format!("{} is not a number: {:?}", name, text)))?;
    if !v.is_finite() {
        return Err(csv_err(label, line, format!("{} is not finite", name)));
    }
    Ok(v)
}

/// 1-based frame number (integral floats such as `3.0` are accepted) to 0-based index.
fn frame_index(label: &str, line: usize, text: &str) -> Result<usize> {
    let v = number(label, line, "frame", text)?;
    if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(csv_err(
            label,
            line,
            format!("frame must be a positive integer, got {}", text),
        ));
    }
    Ok(v as usize - 1)
}

/// Parses a localization CSV; `label` names the source in diagnostics. Rows are
/// stably sorted by frame.
pub fn parse_locs_csv(text: &str, pixel_size_nm: f64, label: &str) -> Result<LocalizationTable> {
    if !(pixel_size_nm > 0.0 && pixel_size_nm.is_finite()) {
        return Err(Error::param("pixel size must be finite and > 0"));
    }
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_start_matches('\u{feff}').trim_end() == LOCS_HEADER => {}
        Some((_, h)) => return Err(csv_err(label, 1, format!("unexpected header {:?}", h))),
        None => return Err(csv_err(label, 1, "missing header")),
    }
    let mut locs = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = fields(raw);
        if f.len() != 6 {
            return Err(csv_err(label, line, format!("expected 6 fields, found {}", f.len())));
        }
        let frame = frame_index(label, line, f[1])?;
        let x = number(label, line, "x", f[2])? / pixel_size_nm;
        let y = number(label, line, "y", f[3])? / pixel_size_nm;
        let sigma = number(label, line, "sigma", f[4])? / pixel_size_nm;
        let intensity = number(label, line, "intensity", f[5])?;
        locs.push(Localization {
            frame,
            x,
            y,
            sigma,
            intensity,
            fit_residual: f64::NAN,
        });
    }
    locs.sort_by_key(|l| l.frame);
    Ok(LocalizationTable {
        locs,
        source: label.to_string(),
        pixel_size_nm,
    })
}

pub fn read_locs_csv(path: &Path, pixel_size_nm: f64) -> Result<LocalizationTable> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| csv_err(&path.display().to_string(), 0, "not UTF-8"))?;
    parse_locs_csv(&text, pixel_size_nm, &path.display().to_string())
}

/// One row per active emitter-frame; frames are 1-based, positions in pixels.
pub fn format_truth_csv(truth: &TruthTable) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for (f, active) in truth.active.iter().enumerate() {
        for &(e, x, y) in active {
            writeln!(out, "{},{},{},{}", f + 1, e, x, y).unwrap();
        }
    }
    out
}

pub fn write_truth_csv(truth: &TruthTable, path: &Path) -> Result<()> {
    atomic_write(path, format_truth_csv(truth).as_bytes())
}

/// Parses a ground-truth CSV. `frames` fixes the frame count (trailing frames
/// without active emitters are otherwise indistinguishable from absent ones).
pub fn parse_truth_csv(text: &str, frames: Option<usize>, label: &str) -> Result<TruthTable> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_start_matches('\u{feff}').trim_end() == TRUTH_HEADER => {}
        Some((_, h)) => return Err(csv_err(label, 1, format!("unexpected header {:?}", h))),
        None => return Err(csv_err(label, 1, "missing header")),
    }
    let mut active: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); frames.unwrap_or(0)];
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = fields(raw);
        if f.len() != 4 {
            return Err(csv_err(label, line, format!("expected 4 fields, found {}", f.len())));
        }
        let frame = frame_index(label, line, f[0])?;
        let emitter: usize = f[1]
            .parse()
            .map_err(|_| csv_err(label, line, format!("emitter is not an index: {:?}", f[1])))?;
        let x = number(label, line, "x", f[2])?;
        let y = number(label, line, "y", f[3])?;
        match frames {
            Some(n) if frame >= n => {
                return Err(csv_err(
                    label,
                    line,
                    format!("frame {} beyond the {}-frame stack", frame + 1, n),
                ));
            }
            _ => {}
        }
        if frame >= active.len() {
            active.resize(frame + 1, Vec::new());
        }
        active[frame].push((emitter, x, y));
    }
    Ok(TruthTable { active })
}

pub fn read_truth_csv(path: &Path, frames: Option<usize>) -> Result<TruthTable> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| csv_err(&path.display().to_string(), 0, "not UTF-8"))?;
    parse_truth_csv(&text, frames, &path.display().to_string())
}
