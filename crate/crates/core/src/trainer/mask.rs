use rand::Rng;

/// Masks each of `n` nodes independently with probability `ratio`. An empty
/// draw masks node 0 instead, so there is always something to predict.
pub fn sample_mask(n: usize, ratio: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < ratio).collect();
    if n > 0 && !m.contains(&true) {
        m[0] = true;
    }
    m
}
