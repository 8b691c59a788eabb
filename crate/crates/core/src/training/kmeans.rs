//! Lloyd's k-means with k-means++ seeding. Centroids are L2-normalized after
//! convergence so they can serve as cosine-space prototypes.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Unit-norm centroids.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the (unnormalized) converged centroids.
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // floating round-off can walk past the end; take the last positive
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|d| *d > 0.0).unwrap();
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R, max_iters: usize) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::Clustering(format!("need at least k={k} points, got {}", points.len())));
    }
    let dim = points[0].len();
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            dists[i] = d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // re-seed from the point farthest from its centroid
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[j] = points[far].clone();
                dists[far] = 0.0;
                assignments[far] = j;
                changed = true;
            } else {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &j)| sq_dist(p, &centroids[j])).sum();
    Ok(KMeansResult {
        centroids: centroids.iter().map(|c| normalized(c)).collect(),
        assignments,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cluster_is_normalized_mean() {
        let pts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.6, 0.8, 0.0]];
        let r = kmeans(&pts, 1, &mut ChaCha8Rng::seed_from_u64(0), 100).unwrap();
        let mean = normalized(&[1.6 / 3.0, 1.8 / 3.0, 0.0]);
        for (a, b) in r.centroids[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_axis_clusters() {
        let pts = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]];
        let r = kmeans(&pts, 2, &mut ChaCha8Rng::seed_from_u64(1), 100).unwrap();
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a[1].total_cmp(&b[1]));
        assert_eq!(c, vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let r = kmeans(&pts, 12, &mut rng, 100).unwrap();
        assert!(r.inertia < 1e-20);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = vec![vec![1.0, 0.0]];
        assert!(matches!(kmeans(&pts, 2, &mut ChaCha8Rng::seed_from_u64(0), 10), Err(Error::Clustering(_))));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0, 0.0]; 6];
        let r = kmeans(&pts, 3, &mut ChaCha8Rng::seed_from_u64(3), 10).unwrap();
        assert_eq!(r.centroids.len(), 3);
        assert!(r.centroids.iter().all(|c| (c[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let a = kmeans(&pts, 7, &mut ChaCha8Rng::seed_from_u64(9), 100).unwrap();
        let b = kmeans(&pts, 7, &mut ChaCha8Rng::seed_from_u64(9), 100).unwrap();
        assert_eq!(a, b);
    }
}
