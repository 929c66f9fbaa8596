use std::fmt::Write as _;

use anyhow::{bail, Result};
use cast_core::config::RunConfig;
use cast_core::corpus::Property;
use cast_core::fusion::Variant;
use cast_core::nn::Checkpoint;
use cast_core::trainer::{evaluate, finetune, pretrain_contrastive, pretrain_mnp, Dataset, RunLog, Task, TrainConfig};

/// Table rows in display order.
pub const ROWS: [&str; 8] = [
    "graph-only",
    "text-only",
    "concat",
    "concat-frozen",
    "contrastive",
    "desc",
    "cast-base",
    "cast",
];

#[derive(Debug, Clone)]
pub struct Cell {
    pub row: String,
    pub property: Property,
    pub seed: u64,
    pub mae: f64,
    pub log: RunLog,
}

fn variant_of(row: &str) -> Variant {
    match row {
        "graph-only" | "contrastive" => Variant::GraphOnly,
        "text-only" => Variant::TextOnly,
        "concat" => Variant::Concat,
        "concat-frozen" => Variant::ConcatFrozenText,
        "desc" => Variant::Desc,
        _ => Variant::Cast,
    }
}

pub fn selected_rows(cfg: &RunConfig) -> Result<Vec<&'static str>> {
    if cfg.compare.rows.is_empty() {
        return Ok(ROWS.to_vec());
    }
    for r in &cfg.compare.rows {
        if !ROWS.contains(&r.as_str()) {
            bail!("unknown comparison row `{r}` (expected one of {})", ROWS.join(", "));
        }
    }
    Ok(ROWS.into_iter().filter(|r| cfg.compare.rows.iter().any(|x| x == r)).collect())
}

/// Fine-tunes every selected row for every seed and property and scores it
/// on the test split. Pretraining runs once per seed and is shared by all
/// properties.
pub fn run(cfg: &RunConfig, data: &Dataset) -> Result<Vec<Cell>> {
    let rows = selected_rows(cfg)?;
    let mut cells = Vec::new();
    for &seed in &cfg.compare.seeds {
        let mnp: Option<Checkpoint> = if rows.contains(&"cast") {
            log::info!("seed {seed}: masked-node pretraining");
            let pcfg = TrainConfig { seed, ..cfg.pretrain.clone() };
            Some(pretrain_mnp(data, Variant::Cast, &cfg.model, &pcfg)?.checkpoint)
        } else {
            None
        };
        let contrastive: Option<Checkpoint> = if rows.contains(&"contrastive") {
            log::info!("seed {seed}: contrastive pretraining");
            let ccfg = TrainConfig { seed, ..cfg.contrastive.clone() };
            Some(pretrain_contrastive(data, &cfg.model, &ccfg)?.0)
        } else {
            None
        };
        for &property in &cfg.compare.properties {
            let fcfg = TrainConfig {
                seed,
                task: Task::Regression(property),
                ..cfg.finetune.clone()
            };
            for &row in &rows {
                let init = match row {
                    "cast" => mnp.as_ref(),
                    "contrastive" => contrastive.as_ref(),
                    _ => None,
                };
                log::info!("seed {seed}: {row} on {property}");
                let out = finetune(init, data, variant_of(row), &cfg.model, &fcfg)?;
                let mae = evaluate(&out.trained, data, &data.split.test)?.mae;
                cells.push(Cell {
                    row: row.to_string(),
                    property,
                    seed,
                    mae,
                    log: out.log,
                });
            }
        }
    }
    Ok(cells)
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn results_csv(cells: &[Cell]) -> String {
    let mut s = String::from("row,property,seed,mae\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{}", c.row, c.property, c.seed, c.mae);
    }
    s
}

/// Markdown table with one row per model and `mean (std)` test MAE per
/// property.
pub fn table(cells: &[Cell], properties: &[Property]) -> String {
    let mut s = String::from("| model |");
    for p in properties {
        let _ = write!(s, " {p} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(properties.len()));
    s.push('\n');
    for row in ROWS {
        if !cells.iter().any(|c| c.row == row) {
            continue;
        }
        let _ = write!(s, "| {row} |");
        for &p in properties {
            let v: Vec<f64> = cells.iter().filter(|c| c.row == row && c.property == p).map(|c| c.mae).collect();
            if v.is_empty() {
                s.push_str(" - |");
            } else {
                let (m, sd) = mean_std(&v);
                let _ = write!(s, " {m:.3} ({sd:.3}) |");
            }
        }
        s.push('\n');
    }
    s
}
