use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, Dataset, TrainConfig, TrainError};
use crate::model::ConvVariant;
use crate::parallel::Execution;

pub const ABLATION_CSV_HEADER: &str = "config,accuracy,f1,params,seed";

/// Datasets for the sweep; the 384-dim row needs its own embeddings.
pub struct AblationData<'a> {
    pub base: &'a Dataset,
    pub dim_384: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub accuracy: f64,
    pub f1: f64,
    pub params: usize,
    pub seed: u64,
    pub best_epoch: usize,
}

fn run_one(name: &str, config: &TrainConfig, data: &Dataset, exec: Execution) -> Result<AblationRow, TrainError> {
    let out = train(config, data, exec, None)?;
    let test: Vec<_> = out.test_idx.iter().map(|&i| &data.samples[i]).collect();
    let ev = evaluate(&out.best, &test, config.threshold, exec)?;
    Ok(AblationRow {
        config: name.to_string(),
        accuracy: ev.metrics.accuracy,
        f1: ev.metrics.f1,
        params: out.best.parameter_count(),
        seed: config.seed,
        best_epoch: out.best_epoch,
    })
}

/// Component ablations followed by the convolution sweep. Each row is the
/// test-split score of the best checkpoint; the sweep reuses the full-model
/// row for the base config's own variant.
pub fn run_ablation(
    data: AblationData<'_>,
    base: &TrainConfig,
    exec: Execution,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    let mut push = |row: AblationRow, rows: &mut Vec<AblationRow>| {
        progress(&row);
        rows.push(row);
    };

    let full = run_one("full_model", base, data.base, exec)?;
    push(full.clone(), &mut rows);

    let edge = TrainConfig {
        use_edge_features: true,
        ..base.clone()
    };
    push(run_one("edge_features", &edge, data.base, exec)?, &mut rows);

    let unweighted = TrainConfig {
        weighted_node_embeddings: false,
        ..base.clone()
    };
    push(
        run_one("unweighted_node_embeddings", &unweighted, data.base, exec)?,
        &mut rows,
    );

    let small = TrainConfig {
        embedding_dim: 384,
        ..base.clone()
    };
    push(run_one("embeddings_384", &small, data.dim_384, exec)?, &mut rows);

    for variant in ConvVariant::ALL {
        let name = format!("conv_{variant}");
        let row = if variant == base.conv {
            AblationRow {
                config: name,
                ..full.clone()
            }
        } else {
            let cfg = TrainConfig {
                conv: variant,
                ..base.clone()
            };
            run_one(&name, &cfg, data.base, exec)?
        };
        push(row, &mut rows);
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{ABLATION_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6},{},{}", r.config, r.accuracy, r.f1, r.params, r.seed)?;
    }
    Ok(())
}
