//! Loss terms over sampled pixel embeddings. Every term returns its value
//! together with the gradient with respect to each input embedding so the
//! caller can scatter it back into a feature-map upstream gradient.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::prototypes::{argmax_cos, assign_unlabeled, dot, PrototypeHierarchy};
use super::queue::ClassTag;

/// Value and per-input gradients of one loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastTerm {
    pub value: f64,
    pub grad_trav: Vec<Vec<f64>>,
    pub grad_untrav: Vec<Vec<f64>>,
}

/// How the prototype loss normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtoDenominator {
    /// Positive plus sampled negatives; bounded below by zero.
    #[default]
    WithPositive,
    /// Sampled negatives only.
    NegativesOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounters {
    pub contrast: u64,
    pub cluster_trav: u64,
    pub cluster_untrav: u64,
    pub unlabel: u64,
    pub hierarchy_deferred: u64,
}

impl SkipCounters {
    pub fn add(&mut self, o: &SkipCounters) {
        self.contrast += o.contrast;
        self.cluster_trav += o.cluster_trav;
        self.cluster_untrav += o.cluster_untrav;
        self.unlabel += o.unlabel;
        self.hierarchy_deferred += o.hierarchy_deferred;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub contrast: f64,
    pub cluster: f64,
    pub unlabel: f64,
}

pub fn total_loss(parts: &LossParts, lambda: f64) -> f64 {
    parts.contrast + lambda * (parts.cluster + parts.unlabel)
}

/// log Σ exp(s) and the matching softmax weights, max-shifted.
fn log_sum_exp(s: &[f64]) -> (f64, Vec<f64>) {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    (m + sum.ln(), e.into_iter().map(|x| x / sum).collect())
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// InfoNCE over ordered traversable pairs with untraversable negatives in the
/// denominator. `None` when fewer than two positives or no negatives.
pub fn contrast_loss(trav: &[Vec<f64>], untrav: &[Vec<f64>], tau: f64) -> Option<ContrastTerm> {
    let n = trav.len();
    if n < 2 || untrav.is_empty() {
        return None;
    }
    let d = trav[0].len();
    let nf = n as f64;
    let pair_scale = 1.0 / (nf * (nf - 1.0) * tau);
    let mut sum = vec![0.0; d];
    for z in trav {
        axpy(&mut sum, 1.0, z);
    }
    let self_sim: f64 = trav.iter().map(|z| dot(z, z)).sum();
    let mut value = -pair_scale * (dot(&sum, &sum) - self_sim);
    let mut grad_trav = vec![vec![0.0; d]; n];
    let mut grad_untrav = vec![vec![0.0; d]; untrav.len()];
    let mut logits = vec![0.0; untrav.len()];
    for (i, z) in trav.iter().enumerate() {
        for (l, u) in logits.iter_mut().zip(untrav) {
            *l = dot(z, u) / tau;
        }
        let (lse, w) = log_sum_exp(&logits);
        value += lse / nf;
        let g = &mut grad_trav[i];
        for k in 0..d {
            g[k] = -2.0 * pair_scale * (sum[k] - z[k]);
        }
        for (wk, (u, gu)) in w.iter().zip(untrav.iter().zip(grad_untrav.iter_mut())) {
            axpy(g, wk / (nf * tau), u);
            axpy(gu, wk / (nf * tau), z);
        }
    }
    Some(ContrastTerm {
        value,
        grad_trav,
        grad_untrav,
    })
}

fn pick_negatives<R: Rng + ?Sized>(available: usize, r: usize, rng: &mut R) -> Vec<usize> {
    if r >= available {
        (0..available).collect()
    } else {
        index::sample(rng, available, r).into_vec()
    }
}

/// Prototype contrast for samples of `class` against each group of the
/// hierarchy. `None` when there is nothing to compare against.
#[allow(clippy::too_many_arguments)]
pub fn proto_loss<R: Rng + ?Sized>(
    features: &[Vec<f64>],
    hierarchy: &PrototypeHierarchy,
    class: ClassTag,
    r: usize,
    tau: f64,
    denominator: ProtoDenominator,
    rng: &mut R,
) -> Option<Term> {
    if features.is_empty()
        || hierarchy.is_empty()
        || hierarchy
            .groups
            .iter()
            .any(|g| g.of(class).is_empty() || g.of(class.opposite()).is_empty())
    {
        return None;
    }
    let d = features[0].len();
    let scale = 1.0 / (features.len() * hierarchy.groups.len()) as f64;
    let mut value = 0.0;
    let mut grad = vec![vec![0.0; d]; features.len()];
    for (z, g) in features.iter().zip(grad.iter_mut()) {
        for group in &hierarchy.groups {
            let own = group.of(class);
            let opp = group.of(class.opposite());
            let pos = &own[argmax_cos(z, own).unwrap()];
            let negs = pick_negatives(opp.len(), r, rng);
            let mut members: Vec<&Vec<f64>> = Vec::with_capacity(negs.len() + 1);
            if denominator == ProtoDenominator::WithPositive {
                members.push(pos);
            }
            members.extend(negs.iter().map(|&j| &opp[j]));
            let logits: Vec<f64> = members.iter().map(|p| dot(z, p) / tau).collect();
            let (lse, w) = log_sum_exp(&logits);
            value += scale * (lse - dot(z, pos) / tau);
            axpy(g, -scale / tau, pos);
            for (wk, p) in w.iter().zip(&members) {
                axpy(g, scale * wk / tau, p);
            }
        }
    }
    Some(Term { value, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTerm {
    pub value: f64,
    pub grad_trav: Vec<Vec<f64>>,
    pub grad_untrav: Vec<Vec<f64>>,
}

/// Sum of the prototype loss over both classes. Skipped halves contribute
/// zero and bump their counter.
#[allow(clippy::too_many_arguments)]
pub fn cluster_loss<R: Rng + ?Sized>(
    trav: &[Vec<f64>],
    untrav: &[Vec<f64>],
    hierarchy: &PrototypeHierarchy,
    r: usize,
    tau: f64,
    denominator: ProtoDenominator,
    rng: &mut R,
    skips: &mut SkipCounters,
) -> ClusterTerm {
    let d = trav.first().or(untrav.first()).map_or(0, |v| v.len());
    let mut out = ClusterTerm {
        value: 0.0,
        grad_trav: vec![vec![0.0; d]; trav.len()],
        grad_untrav: vec![vec![0.0; d]; untrav.len()],
    };
    match proto_loss(trav, hierarchy, ClassTag::Trav, r, tau, denominator, rng) {
        Some(t) => {
            out.value += t.value;
            out.grad_trav = t.grad;
        }
        None => skips.cluster_trav += 1,
    }
    match proto_loss(untrav, hierarchy, ClassTag::Untrav, r, tau, denominator, rng) {
        Some(t) => {
            out.value += t.value;
            out.grad_untrav = t.grad;
        }
        None => skips.cluster_untrav += 1,
    }
    out
}

/// Adds isotropic Gaussian noise. The result is not renormalized.
pub fn psa_perturb<R: Rng + ?Sized>(z: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    z.iter()
        .map(|x| {
            let e: f64 = StandardNormal.sample(rng);
            x + sigma * e
        })
        .collect()
}

/// Pulls perturbed unlabeled embeddings toward their assigned prototypes.
/// One perturbation per sample is shared across groups.
pub fn unlabel_loss<R: Rng + ?Sized>(
    features: &[Vec<f64>],
    hierarchy: &PrototypeHierarchy,
    sigma: f64,
    rng: &mut R,
) -> Option<Term> {
    if features.is_empty() || hierarchy.is_empty() {
        return None;
    }
    let d = features[0].len();
    let scale = 1.0 / (features.len() * hierarchy.groups.len()) as f64;
    let mut value = 0.0;
    let mut grad = vec![vec![0.0; d]; features.len()];
    for (z, g) in features.iter().zip(grad.iter_mut()) {
        let v = psa_perturb(z, sigma, rng);
        for m in 0..hierarchy.groups.len() {
            let (_, p) = assign_unlabeled(z, hierarchy, m)?;
            for k in 0..d {
                let diff = v[k] - p[k];
                value += scale * diff * diff;
                g[k] += 2.0 * scale * diff;
            }
        }
    }
    Some(Term { value, grad })
}
