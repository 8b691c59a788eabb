use rand::Rng;

use super::kmeans::kmeans;
use super::queue::{ClassTag, FeatureQueue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeGroup {
    pub trav: Vec<Vec<f64>>,
    pub untrav: Vec<Vec<f64>>,
}

impl PrototypeGroup {
    pub fn of(&self, class: ClassTag) -> &[Vec<f64>] {
        match class {
            ClassTag::Trav => &self.trav,
            ClassTag::Untrav => &self.untrav,
        }
    }
}

/// Multi-scale prototype sets, one group per cluster count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeHierarchy {
    pub groups: Vec<PrototypeGroup>,
}

impl PrototypeHierarchy {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (m, g) in self.groups.iter().enumerate() {
            if m > 0 && g.trav.len() <= self.groups[m - 1].trav.len() {
                return Err(Error::Clustering("group sizes must be strictly increasing".into()));
            }
            for p in g.trav.iter().chain(&g.untrav) {
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-5 {
                    return Err(Error::Clustering(format!("prototype norm {n} in group {m}")));
                }
            }
        }
        Ok(())
    }
}

pub fn validate_cluster_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("cluster sizes {sizes:?} must be positive and strictly increasing")));
    }
    Ok(())
}

/// Clusters both queues once per group size. Fails with a clustering error
/// (the caller defers) while either queue holds fewer than `max(sizes)` items.
pub fn build_hierarchy<R: Rng + ?Sized>(
    q_trav: &FeatureQueue,
    q_untrav: &FeatureQueue,
    sizes: &[usize],
    rng: &mut R,
    max_iters: usize,
) -> Result<PrototypeHierarchy> {
    validate_cluster_sizes(sizes)?;
    let need = *sizes.last().unwrap();
    if q_trav.len() < need || q_untrav.len() < need {
        return Err(Error::Clustering(format!(
            "queues hold {}/{} vectors, need {need}",
            q_trav.len(),
            q_untrav.len()
        )));
    }
    let trav = q_trav.to_vec();
    let untrav = q_untrav.to_vec();
    let mut groups = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let t = kmeans(&trav, k, rng, max_iters)?;
        let u = kmeans(&untrav, k, rng, max_iters)?;
        groups.push(PrototypeGroup {
            trav: t.centroids,
            untrav: u.centroids,
        });
    }
    Ok(PrototypeHierarchy { groups })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the best-matching prototype by cosine; ties keep the lowest index.
pub(crate) fn argmax_cos<'a>(z: &[f64], protos: impl IntoIterator<Item = &'a Vec<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in protos.into_iter().enumerate() {
        let pn = dot(p, p).sqrt();
        let s = if pn > 0.0 { dot(z, p) / pn } else { f64::NEG_INFINITY };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Pseudo-label for an unlabeled embedding: the nearest prototype of group
/// `m` over both classes, trav prototypes indexed first.
pub fn assign_unlabeled<'h>(z: &[f64], hierarchy: &'h PrototypeHierarchy, m: usize) -> Option<(ClassTag, &'h [f64])> {
    let g = hierarchy.groups.get(m)?;
    let i = argmax_cos(z, g.trav.iter().chain(&g.untrav))?;
    Some(if i < g.trav.len() {
        (ClassTag::Trav, &g.trav[i][..])
    } else {
        (ClassTag::Untrav, &g.untrav[i - g.trav.len()][..])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::kmeans::normalized;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn queue(class: ClassTag, pts: &[Vec<f64>]) -> FeatureQueue {
        let mut q = FeatureQueue::new(class, 4096);
        q.extend(pts);
        q
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        normalized(&v)
    }

    #[test]
    fn single_group_is_queue_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<Vec<f64>> = (0..20).map(|_| random_unit(&mut rng, 5)).collect();
        let qt = queue(ClassTag::Trav, &pts);
        let qu = queue(ClassTag::Untrav, &pts[..10]);
        let h = build_hierarchy(&qt, &qu, &[1], &mut rng, 100).unwrap();
        let mut mean = vec![0.0; 5];
        for p in &pts {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / 20.0;
            }
        }
        let mean = normalized(&mean);
        for (a, b) in h.groups[0].trav[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn group_sizes_match_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| random_unit(&mut rng, 4)).collect();
        let q = queue(ClassTag::Trav, &pts);
        let h = build_hierarchy(&q, &q, &[2, 4], &mut rng, 100).unwrap();
        assert_eq!(h.groups.len(), 2);
        assert_eq!((h.groups[0].trav.len(), h.groups[0].untrav.len()), (2, 2));
        assert_eq!((h.groups[1].trav.len(), h.groups[1].untrav.len()), (4, 4));
        h.validate().unwrap();
    }

    #[test]
    fn small_queue_defers() {
        let q = queue(ClassTag::Trav, &[vec![1.0, 0.0]]);
        let err = build_hierarchy(&q, &q, &[2], &mut ChaCha8Rng::seed_from_u64(0), 10).unwrap_err();
        assert!(matches!(err, Error::Clustering(_)));
    }

    #[test]
    fn separated_blobs_recover_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let centers = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let mut pts = Vec::new();
        let mut sums = vec![vec![0.0; 3]; 3];
        for (b, c) in centers.iter().enumerate() {
            for _ in 0..100 {
                let p: Vec<f64> = c.iter().map(|x| x + 0.01 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
                let p = normalized(&p);
                for (s, v) in sums[b].iter_mut().zip(&p) {
                    *s += v;
                }
                pts.push(p);
            }
        }
        let q = queue(ClassTag::Trav, &pts);
        let h = build_hierarchy(&q, &q, &[3], &mut rng, 100).unwrap();
        for s in &sums {
            let want = normalized(s);
            let best = h.groups[0]
                .trav
                .iter()
                .map(|c| c.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-3, "{best}");
        }
    }

    #[test]
    fn rebuild_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..64).map(|_| random_unit(&mut rng, 6)).collect();
        let q = queue(ClassTag::Trav, &pts);
        let a = build_hierarchy(&q, &q, &[2, 5, 9], &mut ChaCha8Rng::seed_from_u64(4), 100).unwrap();
        let b = build_hierarchy(&q, &q, &[2, 5, 9], &mut ChaCha8Rng::seed_from_u64(4), 100).unwrap();
        assert_eq!(a, b);
    }

    fn two_axis_hierarchy() -> PrototypeHierarchy {
        PrototypeHierarchy {
            groups: vec![PrototypeGroup {
                trav: vec![vec![1.0, 0.0, 0.0]],
                untrav: vec![vec![0.0, 1.0, 0.0]],
            }],
        }
    }

    #[test]
    fn assignment_examples() {
        let h = two_axis_hierarchy();
        let (c, p) = assign_unlabeled(&[0.0, 1.0, 0.0], &h, 0).unwrap();
        assert_eq!((c, p), (ClassTag::Untrav, &[0.0, 1.0, 0.0][..]));
        let z = normalized(&[0.9, 0.1, 0.0]);
        assert_eq!(assign_unlabeled(&z, &h, 0).unwrap().0, ClassTag::Trav);
        let tie = normalized(&[1.0, 1.0, 0.0]);
        assert_eq!(assign_unlabeled(&tie, &h, 0).unwrap().0, ClassTag::Trav);
        assert!(assign_unlabeled(&tie, &h, 1).is_none());
    }

    proptest! {
        #[test]
        fn assignment_ignores_positive_scale(seed in 0u64..500, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = PrototypeGroup {
                trav: (0..4).map(|_| random_unit(&mut rng, 5)).collect(),
                untrav: (0..4).map(|_| random_unit(&mut rng, 5)).collect(),
            };
            let h = PrototypeHierarchy { groups: vec![g] };
            let z = random_unit(&mut rng, 5);
            let zs: Vec<f64> = z.iter().map(|x| x * scale).collect();
            prop_assert_eq!(assign_unlabeled(&z, &h, 0), assign_unlabeled(&zs, &h, 0));
        }
    }
}
