//! Working with the learned language space: interpolation, clustering,
//! sampling and estimating vectors for new varieties.

mod cluster;
mod estimate;
mod sample;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evaluation::bits_per_char;
use crate::model::{LanguageVector, Model};
use crate::tensor::Real;
use crate::training::Checkpoint;

pub use cluster::{cluster, distance_matrix, robinson_foulds, DendrogramTree, Linkage, Metric};
pub use estimate::{estimate_vector, nearest_language, Estimate, EstimationConfig, EstimationInit};
pub use sample::{generate, Generated, SamplerConfig};

/// Segment-wise `(1 − α)·a + α·b`.
pub fn interpolate<T: Real>(a: &LanguageVector<T>, b: &LanguageVector<T>, alpha: f64) -> Result<LanguageVector<T>> {
    if a.num_segments() != b.num_segments() || a.segment_dim() != b.segment_dim() {
        return Err(Error::shape(
            "interpolate",
            &[a.num_segments(), a.segment_dim()],
            &[b.num_segments(), b.segment_dim()],
        ));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite("interpolation weight".into()));
    }
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let (wa, wb) = (T::of(1.0 - alpha), T::of(alpha));
    let segs = a
        .segments()
        .iter()
        .zip(b.segments())
        .map(|(sa, sb)| sa.iter().zip(sb).map(|(&x, &y)| wa * x + wb * y).collect())
        .collect();
    LanguageVector::new(segs)
}

/// Inclusive grid `start:end:step`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("grid `{spec}` is not start:end:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(bad());
    }
    let span = (end - start) / step;
    let mut n = span.floor() as usize;
    // an endpoint within 1e-12 of the last step counts as reached
    if (start + (n + 1) as f64 * step - end).abs() <= 1e-12 {
        n += 1;
    }
    let mut grid: Vec<f64> = (0..=n).map(|i| start + i as f64 * step).collect();
    if let Some(last) = grid.last_mut() {
        if (*last - end).abs() <= 1e-12 {
            *last = end;
        }
    }
    Ok(grid)
}

/// Bits/char of `texts` along the segment between two languages of a checkpoint.
pub fn interpolation_curve<S: AsRef<str>>(
    ckpt: &Checkpoint,
    from: &str,
    to: &str,
    texts: &[S],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if texts.is_empty() || texts.iter().all(|t| t.as_ref().is_empty()) {
        return Err(Error::Config("interpolation test text is empty".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Config(format!("interpolation weight {a} outside [0, 1]")));
    }
    let model: Model<f64> = ckpt.model.cast();
    let la = model.language_vector(ckpt.language_id(from)?)?;
    let lb = model.language_vector(ckpt.language_id(to)?)?;
    grid.iter()
        .map(|&alpha| {
            let v = interpolate(&la, &lb, alpha)?;
            Ok((alpha, bits_per_char(&model, &ckpt.vocab, &v, texts)?))
        })
        .collect()
}

pub const CURVE_HEADER: &str = "alpha,bits_per_char";

pub fn curve_csv(rows: &[(f64, f64)]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for (a, b) in rows {
        let _ = writeln!(s, "{a},{b}");
    }
    s
}

/// Language vectors of a checkpoint as full (concatenated) f64 vectors.
pub fn language_vectors(ckpt: &Checkpoint) -> Result<Vec<(String, Vec<f64>)>> {
    ckpt.languages
        .iter()
        .enumerate()
        .map(|(i, code)| {
            let v = ckpt.model.language_vector(i)?;
            Ok((code.clone(), v.full().iter().map(|&x| x as f64).collect()))
        })
        .collect()
}
