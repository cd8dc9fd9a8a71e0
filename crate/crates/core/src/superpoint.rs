//! Superpoints: farthest-point initialization, the sparse learnable
//! association between Gaussians and their K nearest superpoints, property
//! reconstruction through superpoints, and hard assignment.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Logit given to the column of the superpoint a Gaussian seeded.
pub const SEED_LOGIT: f64 = 0.9;
/// Logit of every other neighbor slot, including newly introduced ones.
pub const DEFAULT_LOGIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpointModel {
    /// Canonical superpoint positions `p^c`.
    pub positions: Vec<Vector3<f64>>,
    /// `P×K` neighbor superpoint ids, ascending canonical distance.
    pub neighbors: Vec<u32>,
    /// `P×K` association logits.
    pub logits: Vec<f64>,
    pub k: usize,
}

/// Greedy farthest point sampling starting from index 0. Distance ties go
/// to the smaller index.
pub fn init_superpoints_fps(points: &[Vector3<f64>], m: usize) -> Result<(Vec<usize>, Vec<Vector3<f64>>)> {
    if m > points.len() {
        return Err(Error::TooManySamples { requested: m, available: points.len() });
    }
    if m == 0 {
        return Err(Error::Config("superpoint count must be at least 1".into()));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = 0;
    for _ in 0..m {
        chosen.push(current);
        let c = points[current];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    let positions = chosen.iter().map(|&i| points[i]).collect();
    Ok((chosen, positions))
}

/// `P×K` nearest superpoints per point, ascending distance, ties by index.
pub fn knn_superpoints(points: &[Vector3<f64>], superpoints: &[Vector3<f64>], k: usize) -> Result<Vec<u32>> {
    if k > superpoints.len() {
        return Err(Error::TooManyNeighbors { k, m: superpoints.len() });
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let rows: Vec<Vec<u32>> = points
        .par_iter()
        .map(|p| {
            let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
            for (j, s) in superpoints.iter().enumerate() {
                let d = (p - s).norm_squared();
                let key = (d, j as u32);
                if best.len() == k {
                    let worst = best[k - 1];
                    if d > worst.0 || (d == worst.0 && key.1 > worst.1) {
                        continue;
                    }
                }
                let pos = best.partition_point(|&(bd, bj)| bd < d || (bd == d && bj < key.1));
                best.insert(pos, key);
                best.truncate(k);
            }
            best.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(rows.concat())
}

/// Row-wise softmax of a `rows×k` logit matrix.
pub fn association_probabilities(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (x, y) in row.iter().zip(o.iter_mut()) {
            *y = (x - max).exp();
            sum += *y;
        }
        for y in o.iter_mut() {
            *y /= sum;
        }
    }
    out
}

/// Pull a gradient on softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], grad: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for ((a, g), o) in probs.chunks_exact(k).zip(grad.chunks_exact(k)).zip(out.chunks_exact_mut(k)) {
        let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        for i in 0..k {
            o[i] = a[i] * (g[i] - dot);
        }
    }
    out
}

/// Normalized Gaussian-to-superpoint aggregation of a `P×d` property.
/// Superpoints listed by no Gaussian keep their row from `previous`.
/// Accumulation runs in Gaussian order, so results are reproducible.
pub fn gather_superpoint_properties(
    probs: &[f64],
    neighbors: &[u32],
    k: usize,
    values: &[f64],
    d: usize,
    previous: &[f64],
) -> Vec<f64> {
    let m = previous.len() / d;
    let mut sum = vec![0.0; m * d];
    let mut weight = vec![0.0; m];
    for (i, (a_row, n_row)) in probs.chunks_exact(k).zip(neighbors.chunks_exact(k)).enumerate() {
        let v = &values[i * d..(i + 1) * d];
        for (&a, &j) in a_row.iter().zip(n_row) {
            let j = j as usize;
            weight[j] += a;
            for c in 0..d {
                sum[j * d + c] += a * v[c];
            }
        }
    }
    for j in 0..m {
        if weight[j] > 0.0 {
            for c in 0..d {
                sum[j * d + c] /= weight[j];
            }
        } else {
            sum[j * d..(j + 1) * d].copy_from_slice(&previous[j * d..(j + 1) * d]);
        }
    }
    sum
}

/// Superpoint-to-Gaussian redistribution: `v'_i = Σ_k a_ik u_{n_ik}`.
pub fn scatter_gaussian_properties(probs: &[f64], neighbors: &[u32], k: usize, u: &[f64], d: usize) -> Vec<f64> {
    let p = probs.len() / k;
    let mut out = vec![0.0; p * d];
    for (i, (a_row, n_row)) in probs.chunks_exact(k).zip(neighbors.chunks_exact(k)).enumerate() {
        for (&a, &j) in a_row.iter().zip(n_row) {
            for c in 0..d {
                out[i * d + c] += a * u[j as usize * d + c];
            }
        }
    }
    out
}

/// Value and gradients of a property reconstruction loss.
#[derive(Clone, Debug)]
pub struct PropertyLoss {
    pub loss: f64,
    /// `P×d`, with respect to the property values.
    pub grad_values: Vec<f64>,
    /// `P×K`, with respect to the association probabilities.
    pub grad_probs: Vec<f64>,
}

/// `(1/P) Σ_i MSE(v_i, v'_i)` with `v' = scatter(gather(v))`, where MSE
/// averages over the `d` components.
pub fn property_reconstruction_loss(probs: &[f64], neighbors: &[u32], k: usize, m: usize, values: &[f64], d: usize) -> f64 {
    property_loss_with_grad(probs, neighbors, k, m, values, d).loss
}

pub fn property_loss_with_grad(
    probs: &[f64],
    neighbors: &[u32],
    k: usize,
    m: usize,
    values: &[f64],
    d: usize,
) -> PropertyLoss {
    let p = probs.len() / k;
    let mut sum = vec![0.0; m * d];
    let mut weight = vec![0.0; m];
    for i in 0..p {
        for s in 0..k {
            let (a, j) = (probs[i * k + s], neighbors[i * k + s] as usize);
            weight[j] += a;
            for c in 0..d {
                sum[j * d + c] += a * values[i * d + c];
            }
        }
    }
    let u: Vec<f64> = (0..m * d)
        .map(|x| if weight[x / d] > 0.0 { sum[x] / weight[x / d] } else { 0.0 })
        .collect();
    let recon = scatter_gaussian_properties(probs, neighbors, k, &u, d);
    let norm = 1.0 / (p as f64 * d as f64);
    let mut loss = 0.0;
    let mut grad_values = vec![0.0; p * d];
    let mut g_recon = vec![0.0; p * d];
    for x in 0..p * d {
        let r = recon[x] - values[x];
        loss += r * r;
        g_recon[x] = 2.0 * r * norm;
        grad_values[x] = -g_recon[x];
    }
    loss *= norm;

    let mut grad_probs = vec![0.0; p * k];
    let mut g_u = vec![0.0; m * d];
    for i in 0..p {
        for s in 0..k {
            let (a, j) = (probs[i * k + s], neighbors[i * k + s] as usize);
            let mut dot = 0.0;
            for c in 0..d {
                dot += g_recon[i * d + c] * u[j * d + c];
                g_u[j * d + c] += a * g_recon[i * d + c];
            }
            grad_probs[i * k + s] = dot;
        }
    }
    for i in 0..p {
        for s in 0..k {
            let (a, j) = (probs[i * k + s], neighbors[i * k + s] as usize);
            let w = weight[j];
            let mut dot = 0.0;
            for c in 0..d {
                let g = g_u[j * d + c] / w;
                grad_values[i * d + c] += a * g;
                dot += g * (values[i * d + c] - u[j * d + c]);
            }
            grad_probs[i * k + s] += dot;
        }
    }
    PropertyLoss { loss, grad_values, grad_probs }
}

/// Superpoint with the highest probability per row; ties go to the smaller
/// superpoint id.
pub fn hard_assignment(probs: &[f64], neighbors: &[u32], k: usize) -> Vec<u32> {
    probs
        .chunks_exact(k)
        .zip(neighbors.chunks_exact(k))
        .map(|(a, n)| {
            let mut best = (a[0], n[0]);
            for s in 1..k {
                if a[s] > best.0 || (a[s] == best.0 && n[s] < best.1) {
                    best = (a[s], n[s]);
                }
            }
            best.1
        })
        .collect()
}

fn flatten(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(v: &[f64]) -> Vec<Vector3<f64>> {
    v.chunks_exact(3).map(Vector3::from_column_slice).collect()
}

impl SuperpointModel {
    /// FPS seeding, K-nearest neighborhoods and the initial logits.
    pub fn initialize(points: &[Vector3<f64>], m: usize, k: usize) -> Result<Self> {
        let (seeds, positions) = init_superpoints_fps(points, m)?;
        let neighbors = knn_superpoints(points, &positions, k)?;
        let mut logits = vec![DEFAULT_LOGIT; points.len() * k];
        for (j, &i) in seeds.iter().enumerate() {
            for s in 0..k {
                if neighbors[i * k + s] as usize == j {
                    logits[i * k + s] = SEED_LOGIT;
                }
            }
        }
        Ok(Self { positions, neighbors, logits, k })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_gaussians(&self) -> usize {
        self.logits.len() / self.k
    }

    pub fn probabilities(&self) -> Vec<f64> {
        association_probabilities(&self.logits, self.k)
    }

    pub fn assignment(&self) -> Vec<u32> {
        hard_assignment(&self.probabilities(), &self.neighbors, self.k)
    }

    /// Recompute `p^c` from the canonical Gaussian centers.
    pub fn update_canonical_positions(&mut self, points: &[Vector3<f64>]) {
        let probs = self.probabilities();
        let prev = flatten(&self.positions);
        let u = gather_superpoint_properties(&probs, &self.neighbors, self.k, &flatten(points), 3, &prev);
        self.positions = unflatten(&u);
    }

    /// Superpoints that appear in at least one neighbor list.
    pub fn occupied(&self) -> Vec<bool> {
        let mut used = vec![false; self.len()];
        for &j in &self.neighbors {
            used[j as usize] = true;
        }
        used
    }

    /// Recompute neighborhoods from the current canonical positions.
    /// Slots whose superpoint stays a neighbor keep their logit; new ones
    /// start at [`DEFAULT_LOGIT`].
    pub fn refresh_neighbors(&mut self, points: &[Vector3<f64>]) -> Result<()> {
        let fresh = knn_superpoints(points, &self.positions, self.k)?;
        let k = self.k;
        let mut logits = vec![DEFAULT_LOGIT; fresh.len()];
        for i in 0..points.len() {
            for s in 0..k {
                let j = fresh[i * k + s];
                if let Some(old) = (0..k).find(|&o| self.neighbors[i * k + o] == j) {
                    logits[i * k + s] = self.logits[i * k + old];
                }
            }
        }
        self.neighbors = fresh;
        self.logits = logits;
        Ok(())
    }

    /// Keep association rows where `keep` is true.
    pub fn retain_gaussians(&mut self, keep: &[bool]) {
        crate::scene::retain_rows(&mut self.neighbors, self.k, keep);
        crate::scene::retain_rows(&mut self.logits, self.k, keep);
    }

    /// Append a copy of Gaussian `i`'s association row.
    pub fn duplicate_gaussian(&mut self, i: usize) {
        crate::scene::extend_row(&mut self.neighbors, self.k, i);
        crate::scene::extend_row(&mut self.logits, self.k, i);
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.k == 0 || self.neighbors.len() != self.logits.len() || self.neighbors.len() % self.k != 0 {
            return Err(Error::Model("association shape mismatch".into()));
        }
        for row in self.neighbors.chunks_exact(self.k) {
            for (s, &j) in row.iter().enumerate() {
                if j as usize >= m || row[..s].contains(&j) {
                    return Err(Error::Model("invalid neighbor list".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dense(probs: &[f64], neighbors: &[u32], k: usize, m: usize) -> Vec<Vec<f64>> {
        let p = probs.len() / k;
        let mut a = vec![vec![0.0; m]; p];
        for i in 0..p {
            for s in 0..k {
                a[i][neighbors[i * k + s] as usize] = probs[i * k + s];
            }
        }
        a
    }

    fn random_instance(seed: u64, p: usize, m: usize, k: usize) -> (Vec<f64>, Vec<u32>) {
        let mut r = crate::testutil::rng(seed);
        let pts: Vec<Vector3<f64>> = (0..p).map(|_| Vector3::new(r.gen(), r.gen(), r.gen())).collect();
        let sp: Vec<Vector3<f64>> = (0..m).map(|_| Vector3::new(r.gen(), r.gen(), r.gen())).collect();
        let nb = knn_superpoints(&pts, &sp, k).unwrap();
        let logits: Vec<f64> = (0..p * k).map(|_| r.gen_range(-2.0..2.0)).collect();
        (association_probabilities(&logits, k), nb)
    }

    #[test]
    fn fps_examples() {
        let one = [Vector3::new(1.0, 2.0, 3.0)];
        assert_eq!(init_superpoints_fps(&one, 1).unwrap().0, vec![0]);
        let line = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)];
        assert_eq!(init_superpoints_fps(&line, 2).unwrap().0, vec![0, 2]);
        let mut all = init_superpoints_fps(&line, 3).unwrap().0;
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(init_superpoints_fps(&line, 4), Err(Error::TooManySamples { .. })));
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64 * 0.7, (i % 2) as f64, 0.0)).collect();
        let grid = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 1.0, 0.0)];
        let nb = knn_superpoints(&pts, &grid, 2).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let mut all: Vec<(f64, u32)> = grid.iter().enumerate().map(|(j, s)| ((p - s).norm_squared(), j as u32)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(&nb[i * 2..i * 2 + 2], &[all[0].1, all[1].1]);
        }
        assert!(matches!(knn_superpoints(&pts, &grid, 4), Err(Error::TooManyNeighbors { .. })));
        // coincident point comes first; equidistant ties go to the smaller id
        let nb = knn_superpoints(&[grid[2]], &grid, 3).unwrap();
        assert_eq!(nb[0], 2);
        let twin = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        assert_eq!(knn_superpoints(&[Vector3::zeros()], &twin, 1).unwrap(), vec![0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(association_probabilities(&[3.0, -1.0], 1), vec![1.0, 1.0]);
        assert_eq!(association_probabilities(&[0.3; 4], 4), vec![0.25; 4]);
        let a = association_probabilities(&[2f64.ln(), 0.0], 2);
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15 && (a[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gather_examples() {
        let (probs, nb) = random_instance(1, 12, 4, 2);
        let constant = vec![2.5; 12];
        let prev = vec![-7.0; 4];
        let u = gather_superpoint_properties(&probs, &nb, 2, &constant, 1, &prev);
        let used = nb.iter().fold(vec![false; 4], |mut acc, &j| {
            acc[j as usize] = true;
            acc
        });
        for j in 0..4 {
            let expected = if used[j] { 2.5 } else { -7.0 };
            assert!((u[j] - expected).abs() < 1e-14);
        }
        let u = gather_superpoint_properties(&[1.0], &[1], 1, &[4.0, 5.0], 2, &[0.0; 4]);
        assert_eq!(u, vec![0.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn gather_hand_instance() {
        // P = 3, M = 2
        let probs = [0.7, 0.3, 0.4, 0.6, 1.0, 0.0];
        let nb = [0, 1, 1, 0, 0, 1];
        let v = [1.0, 2.0, 4.0];
        let u = gather_superpoint_properties(&probs, &nb, 2, &v, 1, &[0.0, 0.0]);
        let u0 = (0.7 * 1.0 + 0.6 * 2.0 + 1.0 * 4.0) / (0.7 + 0.6 + 1.0);
        let u1 = (0.3 * 1.0 + 0.4 * 2.0) / (0.3 + 0.4);
        assert!((u[0] - u0).abs() < 1e-15 && (u[1] - u1).abs() < 1e-15);
    }

    #[test]
    fn scatter_examples() {
        let (probs, nb) = random_instance(2, 9, 5, 3);
        let out = scatter_gaussian_properties(&probs, &nb, 3, &[1.5; 10], 2);
        assert!(out.iter().all(|v| (v - 1.5).abs() < 1e-14));
        let out = scatter_gaussian_properties(&[1.0, 1.0], &[1, 0], 1, &[10.0, 20.0], 1);
        assert_eq!(out, vec![20.0, 10.0]);
    }

    #[test]
    fn property_loss_examples() {
        let (probs, nb) = random_instance(3, 10, 4, 2);
        assert!(property_reconstruction_loss(&probs, &nb, 2, 4, &[0.4; 30], 3).abs() < 1e-28);
        assert_eq!(property_reconstruction_loss(&[1.0, 1.0], &[0, 1], 1, 2, &[3.0, -1.0], 1), 0.0);
        let l = property_reconstruction_loss(&[1.0, 1.0], &[0, 0], 1, 1, &[0.0, 2.0], 1);
        assert!((l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_equals_dense() {
        for seed in 0..5 {
            let (p, m, k, d) = (30, 12, 4, 3);
            let (probs, nb) = random_instance(seed + 10, p, m, k);
            let mut r = crate::testutil::rng(seed);
            let v: Vec<f64> = (0..p * d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let a = dense(&probs, &nb, k, m);
            let prev = vec![0.0; m * d];
            let u = gather_superpoint_properties(&probs, &nb, k, &v, d, &prev);
            for j in 0..m {
                let w: f64 = (0..p).map(|i| a[i][j]).sum();
                if w == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let expected = (0..p).map(|i| a[i][j] * v[i * d + c]).sum::<f64>() / w;
                    assert!((u[j * d + c] - expected).abs() < 1e-12);
                }
            }
            let s = scatter_gaussian_properties(&probs, &nb, k, &u, d);
            for i in 0..p {
                for c in 0..d {
                    let expected: f64 = (0..m).map(|j| a[i][j] * u[j * d + c]).sum();
                    assert!((s[i * d + c] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn property_loss_gradients_match_finite_difference() {
        let (p, m, k, d) = (15, 6, 3, 3);
        let mut r = crate::testutil::rng(77);
        let pts: Vec<Vector3<f64>> = (0..p).map(|_| Vector3::new(r.gen(), r.gen(), r.gen())).collect();
        let sp: Vec<Vector3<f64>> = (0..m).map(|_| Vector3::new(r.gen(), r.gen(), r.gen())).collect();
        let nb = knn_superpoints(&pts, &sp, k).unwrap();
        let logits: Vec<f64> = (0..p * k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..p * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let loss = |lg: &[f64], v: &[f64]| property_reconstruction_loss(&association_probabilities(lg, k), &nb, k, m, v, d);
        let probs = association_probabilities(&logits, k);
        let g = property_loss_with_grad(&probs, &nb, k, m, &v, d);
        let g_logits = softmax_backward(&probs, &g.grad_probs, k);
        let h = 1e-6;
        for x in 0..p * d {
            let (mut a, mut b) = (v.clone(), v.clone());
            a[x] += h;
            b[x] -= h;
            let numeric = (loss(&logits, &a) - loss(&logits, &b)) / (2.0 * h);
            assert!((numeric - g.grad_values[x]).abs() < 1e-7);
        }
        for x in 0..p * k {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a[x] += h;
            b[x] -= h;
            let numeric = (loss(&a, &v) - loss(&b, &v)) / (2.0 * h);
            assert!((numeric - g_logits[x]).abs() < 1e-7);
        }
    }

    #[test]
    fn hard_assignment_examples() {
        assert_eq!(hard_assignment(&[1.0], &[7], 1), vec![7]);
        assert_eq!(hard_assignment(&[0.2, 0.7, 0.1], &[4, 9, 1], 3), vec![9]);
        assert_eq!(hard_assignment(&[0.5, 0.5], &[5, 2], 2), vec![2]);
    }

    #[test]
    fn canonical_position_update() {
        let mut model = SuperpointModel {
            positions: vec![Vector3::zeros()],
            neighbors: vec![0, 0],
            logits: vec![0.0, 0.0],
            k: 1,
        };
        let pts = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 2.0, 0.0)];
        model.update_canonical_positions(&pts);
        assert_eq!(model.positions[0], Vector3::new(2.0, 1.0, 0.0));
        let before = model.clone();
        model.update_canonical_positions(&pts);
        assert_eq!(model, before);
    }

    #[test]
    fn initialization_logits() {
        let pts: Vec<Vector3<f64>> = (0..20).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let model = SuperpointModel::initialize(&pts, 4, 3).unwrap();
        model.validate().unwrap();
        let (seeds, _) = init_superpoints_fps(&pts, 4).unwrap();
        for i in 0..20 {
            let row = &model.logits[i * 3..i * 3 + 3];
            if let Some(j) = seeds.iter().position(|&s| s == i) {
                assert_eq!(model.neighbors[i * 3], j as u32);
                assert_eq!(row, &[SEED_LOGIT, DEFAULT_LOGIT, DEFAULT_LOGIT]);
            } else {
                assert!(row.iter().all(|&l| l == DEFAULT_LOGIT));
            }
        }
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 12)) {
            let a = association_probabilities(&logits, 4);
            for row in a.chunks(4) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn assignment_ignores_row_shift(logits in prop::collection::vec(-5.0f64..5.0, 8), shift in -10.0f64..10.0) {
            let nb = [3u32, 0, 2, 1, 1, 2, 0, 3];
            let base = hard_assignment(&association_probabilities(&logits, 4), &nb, 4);
            let shifted: Vec<f64> = logits.iter().enumerate().map(|(x, l)| if x < 4 { l + shift } else { *l }).collect();
            prop_assert_eq!(base, hard_assignment(&association_probabilities(&shifted, 4), &nb, 4));
        }

        #[test]
        fn loss_nonnegative(seed in 0u64..1000) {
            let (probs, nb) = random_instance(seed, 8, 4, 2);
            let mut r = crate::testutil::rng(seed);
            let v: Vec<f64> = (0..24).map(|_| r.gen_range(-3.0..3.0)).collect();
            prop_assert!(property_reconstruction_loss(&probs, &nb, 2, 4, &v, 3) >= 0.0);
        }
    }
}
