//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use travmap_core::{BevGrid, GridSpec, PrototypeQueue};

/// A full-size BEV with random colors over roughly `observed` of its cells.
pub fn random_bev(spec: GridSpec, observed: f64, seed: u64) -> BevGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.width_cells * spec.height_cells;
    let occupancy: Vec<bool> = (0..n).map(|_| rng.random_bool(observed)).collect();
    let rgb = occupancy
        .iter()
        .map(|&o| if o { rng.random() } else { [0, 0, 0] })
        .collect();
    BevGrid {
        spec,
        rgb,
        occupancy,
        timestamp: 0.0,
    }
}

pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Queue holding `fill` prototypes out of at most `capacity`.
pub fn filled_queue(dim: usize, fill: usize, capacity: usize, seed: u64) -> PrototypeQueue {
    let mut q = PrototypeQueue::new(dim, 0.9, 0.99, Some(capacity)).unwrap();
    let mut s = seed;
    while q.len() < fill {
        for z in unit_vectors(fill, dim, s) {
            q.update(&z);
        }
        s += 1;
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shape() {
        let b = random_bev(GridSpec::default(), 0.6, 1);
        assert_eq!(b.rgb.len(), b.spec.width_cells * b.spec.height_cells);
        let frac = b.occupancy.iter().filter(|&&o| o).count() as f64 / b.occupancy.len() as f64;
        assert!((frac - 0.6).abs() < 0.02);
        let q = filled_queue(16, 64, 64, 0);
        assert_eq!(q.len(), 64);
    }
}
