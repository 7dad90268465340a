//! NDCG@1..10 of discrete models over a grid of `beta` and code lengths.

use std::io::Write;

use dfm_core::{ndcg_at_k, train_dfm, Dataset, RankingRun, TrainConfig};

use crate::error::{Error, Result};

pub const GRID_K_MAX: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub beta: f64,
    pub k: usize,
    /// NDCG@1..=10, or the reason the cell failed.
    pub outcome: std::result::Result<Vec<f64>, String>,
}

fn run_cell(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> dfm_core::Result<Vec<f64>> {
    let model = train_dfm(train, cfg)?;
    let run = RankingRun::from_predictions(&model, test, GRID_K_MAX)?;
    (1..=GRID_K_MAX).map(|k| ndcg_at_k(&run, k).map(|r| r.mean)).collect()
}

/// Trains one model per `(beta, k)` cell, `beta` outermost. A failing cell
/// is recorded and the sweep continues.
pub fn eval_grid(
    train: &Dataset,
    test: &Dataset,
    betas: &[f64],
    ks: &[usize],
    base: &TrainConfig,
    mut on_cell: impl FnMut(&GridCell),
) -> Result<Vec<GridCell>> {
    if betas.is_empty() || ks.is_empty() {
        return Err(Error::Usage("the grid needs at least one beta and one code length".into()));
    }
    let mut cells = Vec::with_capacity(betas.len() * ks.len());
    for &beta in betas {
        for &k in ks {
            let cfg = base.clone().with_beta(beta).with_k(k);
            let outcome = run_cell(train, test, &cfg).map_err(|e| e.to_string());
            let cell = GridCell { beta, k, outcome };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// `%g`-style formatting with 6 significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..6).contains(&exp) {
        let s = trim(format!("{:.*}", (5 - exp).max(0) as usize, v));
        // rounding can carry into a new digit, e.g. 999999.5
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() <= 6 {
            return s;
        }
    }
    let s = format!("{v:.5e}");
    let (mantissa, e) = s.split_once('e').expect("scientific format");
    format!("{}e{e}", trim(mantissa.to_string()))
}

pub fn write_csv<W: Write>(cells: &[GridCell], out: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Format(format!("writing CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["beta".to_string(), "k".into(), "status".into()];
    header.extend((1..=GRID_K_MAX).map(|k| format!("ndcg@{k}")));
    header.push("error".into());
    w.write_record(&header).map_err(to_err)?;
    for c in cells {
        let mut rec = vec![sig6(c.beta), c.k.to_string()];
        match &c.outcome {
            Ok(v) => {
                rec.push("ok".into());
                rec.extend(v.iter().map(|&x| sig6(x)));
                rec.push(String::new());
            }
            Err(msg) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), GRID_K_MAX));
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing CSV: {e}")))?;
    Ok(())
}
