//! Model construction from a trial config and hidden-size solving for a
//! parameter budget.

use rru_core::ModelConfig;

use crate::config::{CellSpec, TrialConfig};
use crate::dataset::DataShape;
use crate::error::{HarnessError, Result};

/// Allowed relative gap between the achieved and the requested parameter count.
pub const SOLVE_TOLERANCE: f64 = 0.02;

/// `layers` cells of state size `n`, chained from the data's input width.
pub fn model_config(cell: &CellSpec, layers: usize, dropout_rate: f64, shape: &DataShape, n: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        input: shape.input.clone(),
        layers: (0..layers).map(|_| cell.layer(0, n, dropout_rate)).collect(),
        logit_size: shape.logit_size,
        task: shape.task,
        stateful: shape.stateful,
        zero_state_prob: 0.0,
    };
    cfg.chain_input_sizes();
    cfg
}

/// Same layout with every layer's state size set to `n`.
pub fn with_state_size(template: &ModelConfig, n: usize) -> ModelConfig {
    let mut cfg = template.clone();
    for layer in &mut cfg.layers {
        layer.set_state_size(n);
    }
    cfg.chain_input_sizes();
    cfg
}

/// State size whose parameter count is closest to `target`. The count grows
/// strictly with `n`, so the crossing point is found by bisection.
pub fn solve_hidden_size(template: &ModelConfig, target: usize) -> Result<usize> {
    let count = |n| with_state_size(template, n).count_params();
    let smallest = count(1);
    if target < smallest {
        return Err(HarnessError::Config(format!(
            "target of {target} parameters is below the smallest model ({smallest} at n = 1)"
        )));
    }
    let mut hi = 1;
    while count(hi) < target {
        hi *= 2;
        if hi > 1 << 24 {
            return Err(HarnessError::Config(format!(
                "target of {target} parameters is unreachable"
            )));
        }
    }
    if hi == 1 {
        return Ok(1);
    }
    // invariant: count(lo) < target <= count(hi)
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let n = if target - count(lo) <= count(hi) - target {
        lo
    } else {
        hi
    };
    let achieved = count(n);
    let gap = (achieved as f64 - target as f64).abs() / target as f64;
    if gap > SOLVE_TOLERANCE {
        return Err(HarnessError::Config(format!(
            "closest model to {target} parameters has {achieved} (n = {n})"
        )));
    }
    Ok(n)
}

/// Model config of a trial: the explicit hidden size, or the one solved for
/// its parameter budget. Also returns that size.
pub fn build_model_config(cfg: &TrialConfig, shape: &DataShape) -> Result<(ModelConfig, usize)> {
    let template = model_config(&cfg.cell, cfg.layers, cfg.dropout_rate, shape, 1);
    let n = match (cfg.hidden_size, cfg.target_params) {
        (Some(n), None) => n,
        (None, Some(target)) => solve_hidden_size(&template, target)?,
        _ => {
            return Err(HarnessError::Config(
                "set exactly one of hidden_size and target_params".into(),
            ))
        }
    };
    let mut model = with_state_size(&template, n);
    model.zero_state_prob = if shape.stateful { cfg.zero_state_prob } else { 0.0 };
    model.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok((model, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Metric;
    use rru_core::{InputSpec, RruVariant, Task};

    fn music_shape() -> DataShape {
        DataShape {
            input: InputSpec::Dense { features: 88 },
            logit_size: 88,
            task: Task::Music,
            stateful: false,
            metric: Metric::Nll,
        }
    }

    fn rru() -> CellSpec {
        CellSpec::Rru {
            middle_multiplier: 2.0,
            relu_layers: 1,
            output_size: 64,
            variant: RruVariant::Standard,
        }
    }

    #[test]
    fn exact_count_is_a_fixed_point() {
        let template = model_config(&rru(), 1, 0.5, &music_shape(), 1);
        for n in [1, 2, 17, 64, 300] {
            let target = with_state_size(&template, n).count_params();
            assert_eq!(solve_hidden_size(&template, target).unwrap(), n);
        }
    }

    #[test]
    fn below_smallest_is_an_error() {
        let template = model_config(&rru(), 2, 0.0, &music_shape(), 1);
        let smallest = template.count_params();
        assert!(solve_hidden_size(&template, smallest - 1).is_err());
        assert_eq!(solve_hidden_size(&template, smallest).unwrap(), 1);
    }

    #[test]
    fn all_cells_reach_their_budgets() {
        for cell in [
            rru(),
            CellSpec::Gru,
            CellSpec::Lstm { forget_bias: 1.0 },
            CellSpec::Mogrifier {
                forget_bias: 1.0,
                rounds: 5,
                rank: 40,
            },
        ] {
            let template = model_config(&cell, 2, 0.0, &music_shape(), 1);
            for target in [200_000, 1_000_000, 3_000_000] {
                let n = solve_hidden_size(&template, target).unwrap();
                let got = with_state_size(&template, n).count_params() as f64;
                assert!(
                    (got - target as f64).abs() / (target as f64) < SOLVE_TOLERANCE,
                    "{cell:?} {target}: {got}"
                );
            }
        }
    }

    #[test]
    fn stacked_layers_chain_widths() {
        let cfg = with_state_size(&model_config(&CellSpec::Gru, 3, 0.1, &music_shape(), 1), 20);
        cfg.validate().unwrap();
        assert_eq!(cfg.layers[1].input_size(), 20);
        assert_eq!(cfg.layers[2].dropout_rate(), 0.1);
    }
}
