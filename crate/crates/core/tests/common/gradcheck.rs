//! Analytic gradients against central finite differences.

use hirope::tinylm::{loss_and_grads, Example, Model, ModelConfig};
use hirope::{HierPos, PositionStrategy};

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-4;
/// Weights are scaled up from the default init so attention is far from
/// uniform and every path carries a measurable gradient.
const SCALE: f64 = 8.0;

fn positions(segments: &[u64]) -> Vec<HierPos> {
    let mut t = 0;
    (0..segments.len())
        .map(|i| {
            if i > 0 && segments[i] != segments[i - 1] {
                t = 0;
            }
            let p = HierPos::segmented(segments[i], t, i as u64);
            t += 1;
            p
        })
        .collect()
}

fn batch() -> Vec<Example> {
    vec![
        Example {
            tokens: vec![0, 3, 5, 7, 0, 4, 6, 8],
            positions: positions(&[0, 0, 0, 0, 1, 1, 1, 1]),
        },
        Example {
            tokens: vec![1, 9, 2, 10, 3, 9, 1],
            positions: positions(&[0, 0, 0, 1, 1, 2, 2]),
        },
    ]
}

/// Worst relative error per parameter tensor of a 2-layer model.
pub fn check(strategy: PositionStrategy) -> Vec<(String, f64)> {
    let mut model = Model::new(ModelConfig {
        layers: 2,
        heads: 2,
        head_dim: 4,
        vocab: 11,
        ff_dim: 16,
        rope_base: 10_000.0,
        strategy,
        seed: 3,
    })
    .unwrap();
    for p in model.params_mut() {
        *p *= SCALE;
    }
    let batch = batch();
    let (_, grads) = loss_and_grads(&batch, &model).unwrap();
    let tensors = model.tensors().to_vec();
    let mut report = Vec::new();
    for (name, slot) in tensors {
        let mut worst = 0.0f64;
        for idx in slot.offset..slot.offset + slot.len() {
            let orig = model.params()[idx];
            let mut at = |offset: f64| {
                model.params_mut()[idx] = orig + offset;
                loss_and_grads(&batch, &model).unwrap().0
            };
            // fourth-order central difference
            let numeric = (8.0 * (at(STEP) - at(-STEP)) - (at(2.0 * STEP) - at(-2.0 * STEP))) / (12.0 * STEP);
            model.params_mut()[idx] = orig;
            let analytic = grads[idx];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(err);
        }
        report.push((name, worst));
    }
    report
}
