use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;

/// Stratified shuffle split. Returns sorted train and test indices.
///
/// The train size is `round(n · ratio)`, shared across classes by largest
/// remainder so each class keeps its proportion within one sample.
pub fn split_dataset(labels: &[u8], train_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if labels.len() < 2 {
        return Err(TrainError::Data(format!(
            "need at least 2 samples, got {}",
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(TrainError::Config(format!("train ratio {train_ratio} outside [0, 1]")));
    }
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        let slot = classes
            .get_mut(y as usize)
            .ok_or_else(|| TrainError::Data(format!("label {y} is not 0 or 1")))?;
        slot.push(i);
    }
    if let Some(c) = classes.iter().position(Vec::is_empty) {
        return Err(TrainError::Data(format!("class {c} has no samples")));
    }

    let n_train = (labels.len() as f64 * train_ratio).round() as usize;
    if n_train == 0 || n_train == labels.len() {
        return Err(TrainError::Config(format!(
            "ratio {train_ratio} leaves an empty {} split",
            if n_train == 0 { "train" } else { "test" }
        )));
    }
    let exact: Vec<f64> = classes
        .iter()
        .map(|c| c.len() as f64 * n_train as f64 / labels.len() as f64)
        .collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let mut left = n_train - take.iter().sum::<usize>();
    for &c in order.iter().cycle().take(2) {
        if left > 0 && take[c] < classes[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, idx) in classes.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..take[c]]);
        test.extend_from_slice(&idx[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
