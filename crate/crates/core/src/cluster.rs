//! Turbine clustering: spatial k-means (default) and correlation-based
//! agglomerative grouping (alternative). Cluster assignments feed imputation
//! and per-cluster model training.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Column, Dataset, TurbineLayout};
use crate::{Error, Result};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    SpatialKmeans,
    CorrelationAgglomerative,
}

/// A partition of the turbines into k clusters.
///
/// Clusters are canonically labeled: cluster ids ascend with the smallest
/// turbine index they contain, so two runs that produce the same partition
/// produce the same labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub schema_version: u32,
    pub method: ClusterMethod,
    pub k: usize,
    pub seed: Option<u64>,
    /// Cluster index per turbine, indexed by turbine index (id - 1).
    pub assignment: Vec<usize>,
    /// Per-cluster (x, y) centroid for the spatial method.
    pub centroids: Option<Vec<(f64, f64)>>,
}

impl ClusterModel {
    pub fn n_turbines(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_of(&self, turbine: usize) -> usize {
        self.assignment[turbine]
    }

    /// Turbine indices of one cluster, ascending.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(t, _)| t)
            .collect()
    }

    /// Check the partition property: total assignment, no empty cluster.
    pub fn validate(&self, n_turbines: usize) -> Result<()> {
        if self.assignment.len() != n_turbines {
            return Err(Error::ShapeMismatch(format!(
                "cluster assignment covers {} turbines, dataset has {n_turbines}",
                self.assignment.len()
            )));
        }
        let mut seen = vec![false; self.k];
        for &c in &self.assignment {
            if c >= self.k {
                return Err(Error::InvalidData(format!(
                    "cluster index {c} out of range for k={}",
                    self.k
                )));
            }
            seen[c] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidData("empty cluster in assignment".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::save_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ClusterModel> {
        let model: ClusterModel = crate::load_json(path.as_ref())?;
        if model.schema_version > SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.as_ref().display().to_string(),
                found: model.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(model)
    }
}

/// Relabel clusters so ids ascend with each cluster's smallest member, and
/// permute the payload (e.g. centroids) the same way.
fn canonicalize(assignment: &mut [usize], k: usize) -> Vec<usize> {
    let mut label_of = vec![usize::MAX; k];
    let mut next = 0;
    for a in assignment.iter_mut() {
        if label_of[*a] == usize::MAX {
            label_of[*a] = next;
            next += 1;
        }
        *a = label_of[*a];
    }
    debug_assert_eq!(next, k);
    // old index of new label j
    let mut order = vec![0; k];
    for (old, &new) in label_of.iter().enumerate() {
        order[new] = old;
    }
    order
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

/// k-means++ seeding over the points, deterministic for a fixed seed.
fn kmeanspp(points: &[(f64, f64)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    centers.push(points[first]);
    chosen[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, points[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // All remaining points coincide with a center; take the first
            // unchosen index so seeding still yields k centers.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[idx] = true;
        centers.push(points[idx]);
        for (i, &p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, points[idx]));
        }
    }
    centers
}

/// One Lloyd run. Returns (assignment, centroids, per-iteration objective).
pub(crate) fn lloyd(
    points: &[(f64, f64)],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> (Vec<usize>, Vec<(f64, f64)>, Vec<f64>) {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut objectives = Vec::new();

    for _ in 0..max_iter {
        // Assignment pass; ties go to the lowest centroid index.
        let mut next = vec![0usize; n];
        for (i, &p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist2(p, centroids[0]);
            for (c, &ctr) in centroids.iter().enumerate().skip(1) {
                let d = dist2(p, ctr);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            next[i] = best;
        }

        // Repair empty clusters by reseeding from the farthest point.
        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        let mut moved = vec![false; n];
        let mut repaired = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = usize::MAX;
            let mut far_d = -1.0;
            for (i, &p) in points.iter().enumerate() {
                if moved[i] || counts[next[i]] <= 1 {
                    continue;
                }
                let d = dist2(p, centroids[next[i]]);
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
            if far == usize::MAX {
                continue;
            }
            counts[next[far]] -= 1;
            next[far] = c;
            counts[c] = 1;
            moved[far] = true;
            repaired = true;
        }

        let converged = next == assignment && !repaired;
        assignment = next;

        // Recompute centroids as member means, summing in index order.
        let mut sums = vec![(0.0, 0.0); k];
        for (i, &p) in points.iter().enumerate() {
            let c = assignment[i];
            sums[c].0 += p.0;
            sums[c].1 += p.1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = (sums[c].0 / counts[c] as f64, sums[c].1 / counts[c] as f64);
            }
        }

        let objective: f64 = points
            .iter()
            .enumerate()
            .map(|(i, &p)| dist2(p, centroids[assignment[i]]))
            .sum();
        objectives.push(objective);

        if converged {
            break;
        }
    }
    (assignment, centroids, objectives)
}

/// Cluster turbines by position with seeded k-means++ and Lloyd iterations.
///
/// Input order does not matter: turbines are processed in id order
/// internally, so any permutation of `layout` yields the same partition.
pub fn cluster_spatial(layout: &[TurbineLayout], k: usize, seed: u64) -> Result<ClusterModel> {
    cluster_spatial_iter(layout, k, seed, 300)
}

pub fn cluster_spatial_iter(
    layout: &[TurbineLayout],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel> {
    let n = layout.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!(
            "cluster count k={k} out of range 1..={n}"
        )));
    }
    let mut sorted: Vec<&TurbineLayout> = layout.iter().collect();
    sorted.sort_by_key(|l| l.turbine_id);
    for pair in sorted.windows(2) {
        if pair[0].turbine_id == pair[1].turbine_id {
            return Err(Error::DuplicateLayout(pair[0].turbine_id));
        }
    }
    for l in &sorted {
        if !l.x.is_finite() || !l.y.is_finite() {
            return Err(Error::InvalidData(format!(
                "turbine {} has non-finite coordinates",
                l.turbine_id
            )));
        }
    }
    let points: Vec<(f64, f64)> = sorted.iter().map(|l| (l.x, l.y)).collect();
    let (mut assignment, centroids, _) = lloyd(&points, k, seed, max_iter);
    let order = canonicalize(&mut assignment, k);
    let centroids: Vec<(f64, f64)> = order.iter().map(|&old| centroids[old]).collect();
    Ok(ClusterModel {
        schema_version: SCHEMA_VERSION,
        method: ClusterMethod::SpatialKmeans,
        k,
        seed: Some(seed),
        assignment,
        centroids: Some(centroids),
    })
}

/// Pearson correlation of two equal-length samples; `None` when fewer than
/// two points or either side has zero variance.
fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Pairwise power-series distance d = 1 - pearson over jointly VALID slots.
/// `None` marks an undefined pair.
fn power_distances(ds: &Dataset, turbines: &[usize]) -> Vec<Vec<Option<f64>>> {
    let m = turbines.len();
    let mut d = vec![vec![None; m]; m];
    for a in 0..m {
        for b in (a + 1)..m {
            let (ta, tb) = (turbines[a], turbines[b]);
            let pa = ds.series(Column::Patv, ta);
            let pb = ds.series(Column::Patv, tb);
            let va = ds.validity_series(ta);
            let vb = ds.validity_series(tb);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for s in 0..ds.n_steps() {
                if va[s].is_valid() && vb[s].is_valid() {
                    xs.push(pa[s]);
                    ys.push(pb[s]);
                }
            }
            let dist = pearson(&xs, &ys).map(|r| 1.0 - r);
            d[a][b] = dist;
            d[b][a] = dist;
        }
    }
    d
}

/// Cluster turbines by power-series correlation: average-linkage
/// agglomerative merging on d = 1 - pearson, cut at k clusters.
///
/// Correlations use jointly VALID slots only. A turbine whose correlation is
/// undefined against every other (constant or empty series) is set aside and
/// attached to the cluster of its nearest turbine by id, with a warning.
/// Pairs of otherwise-usable turbines with no joint support get the maximum
/// distance 2.
pub fn cluster_correlation(ds: &Dataset, k: usize) -> Result<ClusterModel> {
    let n = ds.n_turbines();
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!(
            "cluster count k={k} out of range 1..={n}"
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let dist = power_distances(ds, &all);

    // Usable turbines have at least one defined pairwise correlation.
    let usable: Vec<usize> = (0..n)
        .filter(|&t| (0..n).any(|o| dist[t][o].is_some()))
        .collect();
    let degenerate: Vec<usize> = (0..n).filter(|t| !usable.contains(t)).collect();
    if usable.len() < k {
        return Err(Error::InvalidData(format!(
            "only {} turbines have usable power correlations, need at least k={k}",
            usable.len()
        )));
    }
    if n == 1 {
        return Ok(ClusterModel {
            schema_version: SCHEMA_VERSION,
            method: ClusterMethod::CorrelationAgglomerative,
            k,
            seed: None,
            assignment: vec![0],
            centroids: None,
        });
    }

    // Average linkage via the Lance-Williams update on the usable set.
    let m = usable.len();
    let mut d = vec![vec![0.0f64; m]; m];
    for a in 0..m {
        for b in 0..m {
            if a != b {
                d[a][b] = dist[usable[a]][usable[b]].unwrap_or(2.0);
            }
        }
    }
    let mut active: Vec<bool> = vec![true; m];
    let mut size = vec![1usize; m];
    // Representative id for tie-breaking: the smallest member turbine index.
    let mut rep: Vec<usize> = usable.clone();
    let mut members: Vec<Vec<usize>> = usable.iter().map(|&t| vec![t]).collect();
    let mut n_clusters = m;
    while n_clusters > k {
        let mut best: Option<(usize, usize)> = None;
        let mut best_d = f64::INFINITY;
        for a in 0..m {
            if !active[a] {
                continue;
            }
            for b in (a + 1)..m {
                if !active[b] {
                    continue;
                }
                let dd = d[a][b];
                let key = (rep[a].min(rep[b]), rep[a].max(rep[b]));
                let better = dd < best_d
                    || (dd == best_d
                        && best.map_or(true, |(x, y)| {
                            key < (rep[x].min(rep[y]), rep[x].max(rep[y]))
                        }));
                if better {
                    best_d = dd;
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.expect("at least two active clusters");
        // Merge b into a.
        for c in 0..m {
            if !active[c] || c == a || c == b {
                continue;
            }
            d[a][c] = (size[a] as f64 * d[a][c] + size[b] as f64 * d[b][c])
                / (size[a] + size[b]) as f64;
            d[c][a] = d[a][c];
        }
        size[a] += size[b];
        rep[a] = rep[a].min(rep[b]);
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        active[b] = false;
        n_clusters -= 1;
    }

    let mut assignment = vec![usize::MAX; n];
    let mut label = 0;
    for a in 0..m {
        if !active[a] {
            continue;
        }
        for &t in &members[a] {
            assignment[t] = label;
        }
        label += 1;
    }

    for &t in &degenerate {
        // Nearest usable turbine by id distance, smaller id on ties.
        let nearest = usable
            .iter()
            .copied()
            .min_by_key(|&o| (o.abs_diff(t), o))
            .expect("usable set non-empty");
        log::warn!(
            "turbine {} has no usable power correlation; assigning to cluster of turbine {}",
            t + 1,
            nearest + 1
        );
        assignment[t] = assignment[nearest];
    }

    canonicalize(&mut assignment, k);
    Ok(ClusterModel {
        schema_version: SCHEMA_VERSION,
        method: ClusterMethod::CorrelationAgglomerative,
        k,
        seed: None,
        assignment,
        centroids: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Validity, STEPS_PER_DAY};

    fn layout_of(points: &[(f64, f64)]) -> Vec<TurbineLayout> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| TurbineLayout {
                turbine_id: i as u32 + 1,
                x,
                y,
            })
            .collect()
    }

    #[test]
    fn well_separated_groups_split_exactly() {
        let mut points = Vec::new();
        for i in 0..5 {
            let off = i as f64 * 0.04 - 0.1;
            points.push((off, -off));
            points.push((100.0 + off, 100.0 - off));
        }
        let layout = layout_of(&points);
        let model = cluster_spatial(&layout, 2, 7).unwrap();
        model.validate(10).unwrap();
        for i in 0..10 {
            // Even indices sit near the origin, odd near (100, 100).
            assert_eq!(model.assignment[i], model.assignment[i % 2]);
        }
        assert_ne!(model.assignment[0], model.assignment[1]);
    }

    #[test]
    fn k_one_and_k_n_edge_cases() {
        let layout = layout_of(&[(0.0, 0.0), (1.0, 0.0), (5.0, 5.0), (9.0, 1.0)]);
        let one = cluster_spatial(&layout, 1, 3).unwrap();
        assert!(one.assignment.iter().all(|&c| c == 0));

        let all = cluster_spatial(&layout, 4, 3).unwrap();
        all.validate(4).unwrap();
        let mut seen: Vec<usize> = all.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
        let centroids = all.centroids.as_ref().unwrap();
        for (i, l) in layout.iter().enumerate() {
            let c = centroids[all.assignment[i]];
            assert_eq!(c, (l.x, l.y));
        }

        assert!(cluster_spatial(&layout, 0, 3).is_err());
        assert!(cluster_spatial(&layout, 5, 3).is_err());
    }

    #[test]
    fn deterministic_and_permutation_invariant() {
        let mut points = Vec::new();
        let mut state = 12345u64;
        for _ in 0..30 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = (state >> 33) as f64 / 1e6;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let y = (state >> 33) as f64 / 1e6;
            points.push((x, y));
        }
        let layout = layout_of(&points);
        let a = cluster_spatial(&layout, 5, 42).unwrap();
        let b = cluster_spatial(&layout, 5, 42).unwrap();
        assert_eq!(a, b);

        let mut shuffled = layout.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let c = cluster_spatial(&shuffled, 5, 42).unwrap();
        assert_eq!(a.assignment, c.assignment);

        let other_seed = cluster_spatial(&layout, 5, 43).unwrap();
        other_seed.validate(30).unwrap();
    }

    #[test]
    fn lloyd_objective_is_non_increasing() {
        let mut points = Vec::new();
        for i in 0..40 {
            let x = (i as f64 * 0.7).sin() * 50.0;
            let y = (i as f64 * 1.3).cos() * 50.0;
            points.push((x, y));
        }
        for seed in [1u64, 2, 3, 99] {
            let (_, _, objectives) = lloyd(&points, 4, seed, 300);
            for w in objectives.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9,
                    "objective rose from {} to {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    fn dataset_from_power(series: &[Vec<f64>]) -> Dataset {
        let n_steps = series[0].len();
        assert_eq!(n_steps % STEPS_PER_DAY, 0);
        let mut ds = Dataset::new(series.len(), n_steps / STEPS_PER_DAY);
        for (t, s) in series.iter().enumerate() {
            for (i, &v) in s.iter().enumerate() {
                let mut values = [1.0; Column::COUNT];
                values[Column::Patv.index()] = v;
                ds.set_row(t, i, values, Validity::Valid);
            }
        }
        ds
    }

    #[test]
    fn perfect_correlation_merges_before_anticorrelated() {
        let n = STEPS_PER_DAY;
        let base: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin() + 2.0).collect();
        let doubled: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
        let anti: Vec<f64> = base.iter().map(|v| -v + 10.0).collect();
        let ds = dataset_from_power(&[base, doubled, anti]);
        let model = cluster_correlation(&ds, 2).unwrap();
        assert_eq!(model.assignment[0], model.assignment[1]);
        assert_ne!(model.assignment[0], model.assignment[2]);
    }

    #[test]
    fn correlation_k_n_gives_singletons() {
        let n = STEPS_PER_DAY;
        let series: Vec<Vec<f64>> = (0..4)
            .map(|t| (0..n).map(|i| ((i + t * 17) as f64 * 0.13).sin()).collect())
            .collect();
        let ds = dataset_from_power(&series);
        let model = cluster_correlation(&ds, 4).unwrap();
        model.validate(4).unwrap();
        let mut labels = model.assignment.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn zero_variance_turbine_falls_back_to_neighbor() {
        let n = STEPS_PER_DAY;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let b: Vec<f64> = a.iter().map(|v| v * 3.0).collect();
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).cos()).collect();
        let flat: Vec<f64> = vec![5.0; n];
        let ds = dataset_from_power(&[a, b, c, flat]);
        let model = cluster_correlation(&ds, 2).unwrap();
        model.validate(4).unwrap();
        // The flat turbine joins its nearest-by-id neighbor's cluster.
        assert_eq!(model.assignment[3], model.assignment[2]);
    }

    #[test]
    fn model_roundtrips_and_rejects_newer_schema() {
        let layout = layout_of(&[(0.0, 0.0), (1.0, 0.0), (5.0, 5.0)]);
        let model = cluster_spatial(&layout, 2, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.json");
        model.save(&path).unwrap();
        let back = ClusterModel::load(&path).unwrap();
        assert_eq!(model, back);

        let mut newer = model.clone();
        newer.schema_version = SCHEMA_VERSION + 1;
        newer.save(&path).unwrap();
        match ClusterModel::load(&path) {
            Err(Error::SchemaVersion { .. }) => {}
            other => panic!("expected schema version error, got {other:?}"),
        }
    }
}
