use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng};

/// Index sets for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Stratified k-fold split.
///
/// Each class is shuffled, the classes are laid end to end, and positions are
/// dealt round-robin to the folds. Per-class fold counts therefore differ by
/// at most one, and so do total fold sizes.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::config(format!("k = {k}; need at least 2 folds")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        match l {
            0 | 1 => by_class[l as usize].push(i),
            _ => return Err(Error::contract(format!("label {l} outside {{0, 1}}"))),
        }
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::config(format!(
                "class {class} has {} samples, fewer than k = {k}",
                members.len()
            )));
        }
    }

    let mut rng = Rng::stream(seed, Purpose::Folds, 0);
    let mut assignment = vec![0usize; labels.len()];
    let mut pos = 0;
    for members in by_class.iter_mut() {
        rng.shuffle(members);
        for &idx in members.iter() {
            assignment[idx] = pos % k;
            pos += 1;
        }
    }

    Ok((0..k)
        .map(|f| {
            let (valid, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, valid }
        })
        .collect())
}
