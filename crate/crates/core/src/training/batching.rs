use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Example;

/// Index batches in which real and artificial examples never mix: each
/// group is shuffled and chunked on its own, then the batch order is shuffled.
pub fn homogeneous_batches<R: Rng>(examples: &[Example], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let (mut real, mut artificial): (Vec<usize>, Vec<usize>) =
        (0..examples.len()).partition(|&i| !examples[i].artificial);
    real.shuffle(rng);
    artificial.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = real
        .chunks(batch_size)
        .chain(artificial.chunks(batch_size))
        .map(<[usize]>::to_vec)
        .collect();
    batches.shuffle(rng);
    batches
}

/// Number of batches holding both real and artificial examples.
pub fn mixed_batch_count(examples: &[Example], batches: &[Vec<usize>]) -> usize {
    batches
        .iter()
        .filter(|b| {
            let artificial = b.iter().filter(|&&i| examples[i].artificial).count();
            artificial != 0 && artificial != b.len()
        })
        .count()
}
