/// Multinomial naive Bayes with add-`alpha` smoothing. Returns log
/// likelihoods per column with the log prior in the trailing bias slot.
pub(super) fn fit(
    docs: &[(Vec<(usize, f64)>, usize)],
    vocab_size: usize,
    num_classes: usize,
    priors: &[f64],
    alpha: f64,
) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; vocab_size]; num_classes];
    for (x, y) in docs {
        for &(col, c) in x {
            counts[*y][col] += c;
        }
    }
    counts
        .into_iter()
        .zip(priors)
        .map(|(row, &prior)| {
            let total: f64 = row.iter().sum();
            let denom = (total + alpha * vocab_size as f64).ln();
            let mut w: Vec<f64> = row.iter().map(|c| (c + alpha).ln() - denom).collect();
            // Classes absent from a bootstrap resample get a vanishing prior.
            w.push(if prior > 0.0 { prior.ln() } else { -1e3 });
            w
        })
        .collect()
}
