//! Grayscale PGM (P5) heatmaps of 3×3 relation matrices.
//!
//! Each cell becomes a 32×32 block (96×96 pixels total). Values map
//! linearly from [min, max] to [0, 255]; a constant matrix renders as
//! mid-gray 128.

use std::path::Path;

use crate::error::{Error, Result};

const CELL: usize = 32;

/// Render the P5 document for a 3×3 matrix.
pub fn render_pgm(matrix: &[[f64; 3]; 3]) -> Result<Vec<u8>> {
    let flat: Vec<f64> = matrix.iter().flatten().cloned().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("heatmap matrix contains a non-finite value".into()));
    }
    let min = flat.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shade = |v: f64| -> u8 {
        if max == min {
            128
        } else {
            ((v - min) / (max - min) * 255.0).round() as u8
        }
    };
    let side = 3 * CELL;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for py in 0..side {
        for px in 0..side {
            out.push(shade(matrix[py / CELL][px / CELL]));
        }
    }
    Ok(out)
}

pub fn emit_heatmap(matrix: &[[f64; 3]; 3], path: &Path) -> Result<()> {
    std::fs::write(path, render_pgm(matrix)?)?;
    Ok(())
}
