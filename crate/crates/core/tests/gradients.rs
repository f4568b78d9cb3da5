//! Finite-difference oracles for every op, cell, variant and a full model.

use proptest::prelude::*;
use rru_core::autodiff::{grad_check, ParamStore};
use rru_core::cells::{BaselineConfig, BaselineKind, CellConfig, RruConfig, RruVariant};
use rru_core::check::{cell_grad_check, model_grad_check, run_suite_case, suite_cases};
use rru_core::model::{InputSpec, ModelConfig, Task};
use rru_core::{Rng, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn assert_suite_passes(keep: impl Fn(&str) -> bool) {
    for seed in 0..20 {
        for case in suite_cases(seed).into_iter().filter(|c| keep(&c.label)) {
            let report = run_suite_case(&case, seed).unwrap();
            assert!(
                report.passed(),
                "{} seed {seed} ({:?}):\n{report}",
                case.label,
                case.config
            );
        }
    }
}

#[test]
fn every_rru_variant_matches_finite_differences() {
    let names: Vec<&str> = RruVariant::ALL.iter().map(|v| v.name()).collect();
    assert_suite_passes(|label| names.contains(&label));
}

#[test]
fn gru_and_lstm_match_finite_differences() {
    assert_suite_passes(|label| label == "gru" || label == "lstm");
}

#[test]
fn mogrifier_matches_finite_differences() {
    assert_suite_passes(|label| label.starts_with("mogrifier"));
}

#[test]
fn suite_covers_every_cell() {
    let labels: Vec<String> = suite_cases(3).into_iter().map(|c| c.label).collect();
    assert_eq!(labels.len(), 11);
    for case in suite_cases(11) {
        assert!(case.config.input_size() <= 8 && case.config.state_size() <= 8);
        assert!(case.steps <= 5 && case.batch <= 3);
    }
}

#[test]
fn mogrifier_rank_40_five_rounds() {
    let cfg = CellConfig::Baseline(BaselineConfig {
        kind: BaselineKind::MogrifierLstm,
        input_size: 6,
        state_size: 7,
        forget_bias: 1.0,
        mog_rounds: 5,
        mog_rank: 40,
        recurrent_dropout_rate: 0.0,
    });
    let report = cell_grad_check(&cfg, 3, 2, 0, EPS, TOL).unwrap();
    assert!(report.passed(), "{report}");
}

/// Across many seeds, elements whose gradient is near zero sit below the
/// central-difference error floor (ε² truncation plus roundoff, ~1e-10), where
/// a relative comparison is meaningless; those must still agree absolutely.
#[test]
fn mogrifier_rank_40_across_seeds_within_difference_floor() {
    let cfg = CellConfig::Baseline(BaselineConfig {
        kind: BaselineKind::MogrifierLstm,
        input_size: 6,
        state_size: 7,
        forget_bias: 1.0,
        mog_rounds: 5,
        mog_rank: 40,
        recurrent_dropout_rate: 0.0,
    });
    for seed in 0..40 {
        let report = cell_grad_check(&cfg, 3, 2, seed, EPS, TOL).unwrap();
        for p in report.failures() {
            assert!(p.max_abs_diff < 1e-9, "seed {seed}:\n{report}");
        }
    }
}

#[test]
fn two_layer_rru_stack_over_four_steps() {
    for (task, input) in [
        (Task::Music, InputSpec::Dense { features: 5 }),
        (
            Task::Language,
            InputSpec::Tokens {
                vocab_size: 9,
                embedding_size: 4,
            },
        ),
        (Task::Classification, InputSpec::Dense { features: 3 }),
        (Task::Regression, InputSpec::Dense { features: 2 }),
    ] {
        let layer = |m, n, p| {
            CellConfig::Rru(RruConfig {
                input_size: m,
                state_size: n,
                output_size: p,
                middle_multiplier: 1.5,
                relu_layers: 1,
                dropout_rate: 0.2,
                variant: RruVariant::Standard,
            })
        };
        let mut cfg = ModelConfig {
            input,
            layers: vec![layer(0, 6, 5), layer(0, 4, 3)],
            logit_size: 4,
            task,
            stateful: false,
            zero_state_prob: 0.0,
        };
        cfg.chain_input_sizes();
        let report = model_grad_check(&cfg, 4, 2, 3, EPS, TOL).unwrap();
        assert!(report.passed(), "{task:?}:\n{report}");
    }
}

#[test]
fn identity_linear_layer() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add(
        "w",
        Tensor::from_f64(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
    );
    let x = Tensor::<f64>::from_f64(1, 3, &[0.3, -1.1, 2.0]).unwrap();
    let report = grad_check(&mut store, EPS, 1e-10, |tape, store| {
        let x = tape.constant(x.clone());
        let w = tape.param(store, w);
        let y = tape.matmul(x, w)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.passed() && report.max_rel_error() < 1e-10, "{report}");
    // ∂sum(xW)/∂W_ij = x_i
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(store.grad(w).get(i, j), x.get(0, i));
        }
    }
}

#[test]
fn corrupted_backward_rule_is_caught() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::row_vector(vec![0.4, -0.9, 1.3]));
    let report = grad_check(&mut store, EPS, TOL, |tape, store| {
        let a = tape.param(store, a);
        let v = tape.value(a).map(|x| x * x);
        // d(x²)/dx is 2x; the rule below is off by a factor of 2
        let sq = tape.custom(&[a], v, Box::new(|g, inputs, _| Ok(vec![g.mul(inputs[0])?])));
        Ok(tape.sum(sq))
    })
    .unwrap();
    assert!(!report.passed());
    assert!((report.max_rel_error() - 0.5).abs() < 1e-6);
}

#[test]
fn non_finite_loss_reports_location() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::row_vector(vec![1e-6]));
    let err = grad_check(&mut store, 1e-5, TOL, |tape, store| {
        let a = tape.param(store, a);
        let l = tape.log(a);
        Ok(tape.sum(l))
    })
    .unwrap_err();
    assert!(err.to_string().contains("a[0] - eps"), "{err}");
}

/// Smallest analytic gradient magnitude a test point may have, unless exactly
/// zero: below ~1e-4 the central difference's own error floor exceeds the
/// relative tolerance, so such points are redrawn.
const MIN_GRAD: f64 = 1e-3;

/// One random op applied to parameter operands, reduced by a fixed random
/// linear functional with weights bounded away from zero.
fn single_op_check(op: usize, rows: usize, cols: usize, seed: u64) -> f64 {
    // a one-column row normalizes to ±sqrt(g) and has zero gradient; see below
    let cols = if op == 11 { cols.max(2) } else { cols };
    let mut rng = Rng::new(seed);
    for _ in 0..100 {
        if let Some(err) = single_op_attempt(op, rows, cols, seed, &mut rng) {
            return err;
        }
    }
    panic!("op {op}: no well-conditioned test point");
}

fn single_op_attempt(op: usize, rows: usize, cols: usize, seed: u64, rng: &mut Rng) -> Option<f64> {
    let mut store = ParamStore::<f64>::new();
    let mut draw = |lo: f64, hi: f64, r: usize, c: usize| -> Tensor<f64> { rng.uniform_tensor(lo, hi, r, c).unwrap() };
    // ReLU inputs kept away from the kink; log inputs positive
    let a_val = match op {
        4 => draw(0.1, 2.0, rows, cols).map(|v| if (v * 1e4) as i64 % 2 == 0 { v } else { -v }),
        8 => draw(0.2, 3.0, rows, cols),
        // short rows make the normalizer's curvature blow up the ε² term
        11 => draw(0.5, 1.5, rows, cols).map(|v| if (v * 1e4) as i64 % 2 == 0 { v } else { -v }),
        _ => draw(-1.5, 1.5, rows, cols),
    };
    let a = store.add("a", a_val);
    let b = store.add("b", draw(-1.5, 1.5, rows, cols));
    let row = store.add("row", draw(-1.5, 1.5, 1, cols));
    let k = store.add("k", draw(-1.0, 1.0, cols, 3));
    let s = store.add("s", draw(-1.0, 1.0, 1, 1));
    let mask = draw(0.0, 2.0, rows, cols);
    let sign = |t: Tensor<f64>| t.map(|v| if v < 1.0 { v - 1.5 } else { v - 0.5 });
    let weights = sign(draw(0.0, 2.0, rows, cols));
    let weights3 = sign(draw(0.0, 2.0, rows, 3));
    let bits = draw(0.0, 1.0, rows, cols).map(|v| if v < 0.5 { 0.0 } else { 1.0 });
    let ids: Vec<usize> = (0..rows).map(|r| (r * 7 + seed as usize) % cols.max(1)).collect();
    let row_w: Vec<f64> = (0..rows).map(|r| 0.5 + r as f64 * 0.25).collect();

    let build = |tape: &mut rru_core::autodiff::Tape<f64>, store: &ParamStore<f64>| {
        let (a, b, row, k, s) = (
            tape.param(store, a),
            tape.param(store, b),
            tape.param(store, row),
            tape.param(store, k),
            tape.param(store, s),
        );
        let (out, w) = match op {
            0 => (tape.matmul(a, k)?, weights3.clone()),
            1 => (tape.add(a, b)?, weights.clone()),
            2 => (tape.sub(a, row)?, weights.clone()),
            3 => (tape.mul(a, b)?, weights.clone()),
            4 => (tape.relu(a), weights.clone()),
            5 => (tape.sigmoid(a), weights.clone()),
            6 => (tape.tanh(a), weights.clone()),
            7 => (tape.exp(a), weights.clone()),
            8 => (tape.log(a), weights.clone()),
            9 => (tape.affine(a, 0.7, -0.2), weights.clone()),
            10 => {
                let sb = tape.broadcast(s, cols)?;
                (tape.mul(a, sb)?, weights.clone())
            }
            11 => (tape.normalize_rows(a, 1e-6), weights.clone()),
            12 => (tape.mul_const(a, mask.clone())?, weights.clone()),
            13 => (
                tape.select_rows(&[a, b], &ids.iter().map(|i| i % 2).collect::<Vec<_>>())?,
                weights.clone(),
            ),
            14 => (tape.scale(a, -1.3), weights.clone()),
            15 => return tape.bce_with_logits(a, bits.clone(), row_w.clone()),
            16 => return tape.softmax_xent(a, ids.clone(), row_w.clone()),
            17 => return tape.squared_error(a, mask.clone(), row_w.clone()),
            _ => {
                let g = tape.gather(k, &ids.iter().map(|&i| i % cols).collect::<Vec<_>>())?;
                (g, weights3.clone())
            }
        };
        let wo = tape.mul_const(out, w)?;
        Ok(tape.sum(wo))
    };
    let report = grad_check(&mut store, EPS, 1e-7, build).unwrap();
    let ill_conditioned = store
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .any(|&g| g != 0.0 && g.abs() < MIN_GRAD);
    (!ill_conditioned).then(|| report.max_rel_error())
}

#[test]
fn single_column_normalize_has_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::from_f64(3, 1, &[0.4, -2.0, 7.5]).unwrap());
    let report = grad_check(&mut store, EPS, TOL, |tape, store| {
        let a = tape.param(store, a);
        let y = tape.normalize_rows(a, 1e-6);
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(store.grad(a).data().iter().all(|&g| g.abs() < 1e-12));
    assert!(report.params[0].max_abs_diff < 1e-9, "{report}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_passes_single_op_check(op in 0usize..19, rows in 1usize..5, cols in 1usize..6, seed in 0u64..1_000_000) {
        let err = single_op_check(op, rows, cols, seed);
        prop_assert!(err < 1e-7, "op {op} {rows}x{cols} seed {seed}: {err}");
    }
}
