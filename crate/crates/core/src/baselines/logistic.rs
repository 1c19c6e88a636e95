use super::{softmax, Hyperparams};

/// Multinomial logistic regression on binary presence features, trained by
/// full-batch gradient descent with an L2 penalty on the non-bias weights.
pub(super) fn fit(
    docs: &[(Vec<(usize, f64)>, usize)],
    vocab_size: usize,
    num_classes: usize,
    hp: &Hyperparams,
) -> Vec<Vec<f64>> {
    let n = docs.len() as f64;
    let bias = vocab_size;
    let mut w = vec![vec![0.0; vocab_size + 1]; num_classes];
    let mut grad = vec![vec![0.0; vocab_size + 1]; num_classes];
    let mut scores = vec![0.0; num_classes];
    for _ in 0..hp.epochs {
        for g in grad.iter_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for (x, y) in docs {
            for (t, s) in scores.iter_mut().enumerate() {
                *s = w[t][bias] + x.iter().map(|&(col, _)| w[t][col]).sum::<f64>();
            }
            let p = softmax(&scores);
            for t in 0..num_classes {
                let err = p[t] - if t == *y { 1.0 } else { 0.0 };
                for &(col, _) in x {
                    grad[t][col] += err;
                }
                grad[t][bias] += err;
            }
        }
        for t in 0..num_classes {
            for j in 0..=vocab_size {
                let penalty = if j == bias { 0.0 } else { hp.l2 * w[t][j] };
                w[t][j] -= hp.learning_rate * (grad[t][j] / n + penalty);
            }
        }
    }
    w
}
