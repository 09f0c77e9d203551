//! Binary deep-level labels from clustering joint representations.
//!
//! Both methods are deterministic given (data, seed, config) and canonicalize
//! labels so the lowest-index example always receives label 0.

use crate::error::{CemaError, Result};
use crate::represent::JointRepresentation;
use crate::text::Text;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    KMeans,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<u8>,
    pub method: ClusterMethod,
    pub seed: u64,
    /// K-means inertia or spectral cut weight, as a convergence diagnostic.
    pub inertia_or_cut: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn all_identical(points: &[Vec<f64>]) -> bool {
    points.windows(2).all(|w| w[0] == w[1])
}

/// Canonicalize so the lowest-index example has label 0.
fn canonicalize(labels: &mut [u8]) {
    if labels.first() == Some(&1) {
        for l in labels.iter_mut() {
            *l = 1 - *l;
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding for arbitrary k. Returns
/// (labels in 0..k, inertia).
fn kmeans_k(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(CemaError::DegenerateData);
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = n - 1;
        for (i, d) in d2.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen].clone());
    }

    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        for (i, p) in points.iter().enumerate() {
            labels[i] = centers
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(p, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
        }
        let mut new_centers = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (acc, v) in new_centers[l].iter_mut().zip(p) {
                *acc += v;
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(CemaError::DegenerateData);
        }
        let mut shift = 0.0f64;
        for (j, c) in new_centers.iter_mut().enumerate() {
            for v in c.iter_mut() {
                *v /= counts[j] as f64;
            }
            shift = shift.max(sq_dist(c, &centers[j]).sqrt());
        }
        centers = new_centers;
        if shift < 1e-6 {
            break;
        }
    }
    let inertia: f64 = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    Ok((labels, inertia))
}

fn with_reseeds<T>(seed: u64, mut attempt: impl FnMut(u64) -> Result<T>) -> Result<T> {
    let mut last = None;
    for offset in 0..=5u64 {
        match attempt(seed.wrapping_add(offset)) {
            Ok(v) => return Ok(v),
            Err(e @ CemaError::DegenerateData) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

/// Binary k-means over joint-representation rows.
pub fn kmeans_binary(points: &[Vec<f64>], seed: u64) -> Result<ClusterAssignment> {
    if points.len() < 2 {
        return Err(CemaError::InvalidInput(
            "k-means needs at least 2 points".into(),
        ));
    }
    if all_identical(points) {
        return Err(CemaError::DegenerateData);
    }
    let (raw_labels, inertia) = with_reseeds(seed, |s| kmeans_k(points, 2, s))?;
    let mut labels: Vec<u8> = raw_labels.iter().map(|&l| l as u8).collect();
    canonicalize(&mut labels);
    Ok(ClusterAssignment {
        labels,
        method: ClusterMethod::KMeans,
        seed,
        inertia_or_cut: inertia,
    })
}

/// Connected components of an adjacency list.
fn components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Spectral bipartition: symmetric k-NN graph, unnormalized Laplacian,
/// Fiedler vector by shifted power iteration with deflation of the constant
/// vector, threshold at zero.
pub fn spectral_binary(points: &[Vec<f64>], seed: u64, n_neighbors: usize) -> Result<ClusterAssignment> {
    let n = points.len();
    if n < 3 {
        return Err(CemaError::InvalidInput(
            "spectral clustering needs at least 3 points".into(),
        ));
    }
    if n_neighbors >= n {
        return Err(CemaError::Config(format!(
            "n_neighbors {n_neighbors} must be < point count {n}"
        )));
    }
    if all_identical(points) {
        return Err(CemaError::DegenerateData);
    }

    // k-NN edges, max-symmetrized: an edge exists if either endpoint ranks
    // the other among its k nearest.
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        let mut dists: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, sq_dist(&points[i], &points[j])))
            .collect();
        dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(j, _) in dists.iter().take(n_neighbors) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let neighbor_lists: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| adj[i][j]).collect())
        .collect();

    let comps = components(&neighbor_lists);
    let mut labels = vec![0u8; n];
    if comps.len() > 1 {
        // Disconnected graph: pack components into the two largest groups.
        let mut sorted: Vec<&Vec<usize>> = comps.iter().collect();
        sorted.sort_by_key(|c| std::cmp::Reverse(c.len()));
        let (mut size0, mut size1) = (0usize, 0usize);
        for comp in sorted {
            let side = if size0 <= size1 { 0u8 } else { 1u8 };
            for &v in comp {
                labels[v] = side;
            }
            if side == 0 {
                size0 += comp.len();
            } else {
                size1 += comp.len();
            }
        }
        canonicalize(&mut labels);
        let cut = cut_weight(&neighbor_lists, &labels);
        return Ok(ClusterAssignment {
            labels,
            method: ClusterMethod::Spectral,
            seed,
            inertia_or_cut: cut,
        });
    }

    let degrees: Vec<f64> = neighbor_lists.iter().map(|l| l.len() as f64).collect();
    let max_degree = degrees.iter().cloned().fold(0.0, f64::max);
    let shift = 2.0 * max_degree + 1.0;

    // x <- (shift*I - L) x, deflating the constant vector.
    let fiedler = with_reseeds(seed, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        deflate_constant(&mut x);
        normalize(&mut x)?;
        for _ in 0..10_000 {
            let mut y = vec![0.0f64; n];
            for i in 0..n {
                let mut acc = (shift - degrees[i]) * x[i];
                for &j in &neighbor_lists[i] {
                    acc += x[j];
                }
                y[i] = acc;
            }
            deflate_constant(&mut y);
            normalize(&mut y)?;
            let delta: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            // eigenvectors are sign-ambiguous; compare against both signs
            let delta_neg: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a + b).abs())
                .fold(0.0, f64::max);
            let converged = delta.min(delta_neg) < 1e-8;
            x = y;
            if converged {
                break;
            }
        }
        let lab: Vec<u8> = x.iter().map(|&v| if v >= 0.0 { 1 } else { 0 }).collect();
        if lab.iter().all(|&l| l == 0) || lab.iter().all(|&l| l == 1) {
            return Err(CemaError::DegenerateData);
        }
        Ok(lab)
    })?;

    labels = fiedler;
    canonicalize(&mut labels);
    let cut = cut_weight(&neighbor_lists, &labels);
    Ok(ClusterAssignment {
        labels,
        method: ClusterMethod::Spectral,
        seed,
        inertia_or_cut: cut,
    })
}

fn cut_weight(adj: &[Vec<usize>], labels: &[u8]) -> f64 {
    let mut cut = 0.0;
    for (i, neigh) in adj.iter().enumerate() {
        for &j in neigh {
            if j > i && labels[i] != labels[j] {
                cut += 1.0;
            }
        }
    }
    cut
}

fn deflate_constant(x: &mut [f64]) {
    let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

fn normalize(x: &mut [f64]) -> Result<()> {
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(CemaError::DegenerateData);
    }
    for v in x.iter_mut() {
        *v /= norm;
    }
    Ok(())
}

/// Ablation pathway for k in {3,4}: cluster with k groups, then reduce to
/// binary labels by one-vs-rest on the largest cluster. k=2 delegates to the
/// configured binary method.
pub fn cluster_with_k(
    points: &[Vec<f64>],
    k: usize,
    method: ClusterMethod,
    seed: u64,
    n_neighbors: usize,
) -> Result<ClusterAssignment> {
    match k {
        2 => match method {
            ClusterMethod::KMeans => kmeans_binary(points, seed),
            ClusterMethod::Spectral => spectral_binary(points, seed, n_neighbors),
        },
        3 | 4 => {
            if points.len() < k {
                return Err(CemaError::InvalidInput(format!(
                    "need at least {k} points for {k} clusters"
                )));
            }
            if all_identical(points) {
                return Err(CemaError::DegenerateData);
            }
            // multi-cluster ablation always runs k-means; the one-vs-rest
            // reduction is what the ablation axis exercises
            let (raw, inertia) = with_reseeds(seed, |s| kmeans_k(points, k, s))?;
            let mut counts = vec![0usize; k];
            for &l in &raw {
                counts[l] += 1;
            }
            let largest = counts
                .iter()
                .enumerate()
                .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
                .unwrap()
                .0;
            let mut labels: Vec<u8> = raw
                .iter()
                .map(|&l| if l == largest { 0 } else { 1 })
                .collect();
            canonicalize(&mut labels);
            Ok(ClusterAssignment {
                labels,
                method,
                seed,
                inertia_or_cut: inertia,
            })
        }
        _ => Err(CemaError::Config(format!(
            "cluster count must be 2, 3, or 4, got {k}"
        ))),
    }
}

/// Pair auxiliary texts with their cluster labels to form the substitute
/// training set.
pub fn assign_deep_labels(
    assignment: &ClusterAssignment,
    texts: &[Text],
) -> Result<Vec<(Text, u8)>> {
    if assignment.labels.is_empty() {
        return Err(CemaError::InvalidAssignment("empty assignment".into()));
    }
    if assignment.labels.len() != texts.len() {
        return Err(CemaError::InvalidAssignment(format!(
            "{} labels vs {} texts",
            assignment.labels.len(),
            texts.len()
        )));
    }
    Ok(texts
        .iter()
        .cloned()
        .zip(assignment.labels.iter().copied())
        .collect())
}

/// Flatten joint representations into plain rows for the cluster routines.
pub fn joint_rows(joints: &[JointRepresentation]) -> Vec<Vec<f64>> {
    joints.iter().map(|j| j.vector.clone()).collect()
}
