//! Pooling-activity introspection: per-layer n×n grids of channel-summed
//! activations plus the prediction grid of per-cell maximum probability,
//! written as token-headed CSVs (optionally rendered as PGM images).

use std::fs;
use std::path::Path;

use crate::corpus::SentenceExample;
use crate::error::Result;
use crate::model::{bind, ModelBundle};
use crate::tensor::{Phase, Tape};

/// One n×n grid with its token labels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub label: String,
    pub tokens: Vec<String>,
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }
}

/// Runs inference on one sentence and returns one grid per pooling layer
/// (activations summed over channels) followed by the prediction grid
/// (probabilities maxed over tags).
pub fn layer_heatmaps(bundle: &mut ModelBundle, ex: &SentenceExample) -> Result<Vec<HeatmapGrid>> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &bundle.params, false);
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let acts = bundle.forward(&mut tape, &bound, ex, Phase::Infer, &mut rng)?;
    let tokens: Vec<String> = ex.tokens.iter().map(|t| t.text.clone()).collect();
    let n = tokens.len();

    let mut grids = Vec::with_capacity(acts.layers.len() + 1);
    for (i, &layer) in acts.layers.iter().enumerate() {
        let c = *tape.shape(layer).last().expect("table tensor");
        let v = tape.value(layer);
        let mut grid = vec![0.0; n * n];
        for (cell, g) in grid.iter_mut().enumerate() {
            *g = v[cell * c..(cell + 1) * c].iter().sum();
        }
        grids.push(HeatmapGrid {
            label: format!("layer_{}", i + 1),
            tokens: tokens.clone(),
            values: grid,
        });
    }
    let z = *tape.shape(acts.q).last().expect("q tensor");
    let qv = tape.value(acts.q);
    let mut grid = vec![0.0; n * n];
    for (cell, g) in grid.iter_mut().enumerate() {
        *g = qv[cell * z..(cell + 1) * z]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
    }
    grids.push(HeatmapGrid {
        label: "prediction".to_string(),
        tokens,
        values: grid,
    });
    Ok(grids)
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Token-headed CSV: first row is the empty corner plus column tokens, each
/// following row is its token then the grid values.
pub fn write_csv(grid: &HeatmapGrid, path: &Path) -> Result<()> {
    let n = grid.n();
    let mut out = String::new();
    out.push_str(
        &std::iter::once(String::new())
            .chain(grid.tokens.iter().map(|t| csv_escape(t)))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for i in 0..n {
        let mut row = vec![csv_escape(&grid.tokens[i])];
        for j in 0..n {
            row.push(format!("{}", grid.get(i, j)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Grayscale PGM rendering, min-max normalized, one pixel per cell.
#[allow(clippy::needless_range_loop)]
pub fn write_pgm(grid: &HeatmapGrid, path: &Path) -> Result<()> {
    let n = grid.n();
    let min = grid.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = grid.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if (max - min).abs() < 1e-300 { 1.0 } else { max - min };
    let mut out = format!("P2\n{} {}\n255\n", n, n);
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| format!("{}", ((grid.get(i, j) - min) / range * 255.0).round() as u8))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
