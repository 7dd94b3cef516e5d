use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng;

/// Outcome of spherical k-means: unit centroids, final assignment and the
/// objective (sum of squared distances to assigned centroids) recorded
/// after every assignment step.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub objective: Vec<f64>,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0).then(|| v.iter().map(|x| x / norm).collect())
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the centroid with maximal inner product; ties go to the lowest index.
pub(crate) fn best_centroid<C: AsRef<[f64]>>(point: &[f64], centroids: &[C]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = inner(point, centroid.as_ref());
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}

/// Lloyd iterations on the unit sphere.
///
/// Initial centroids are a seeded uniform sample of distinct input points.
/// A cluster left empty by an assignment step is re-seeded with the point
/// farthest from its current centroid.
pub fn spherical_kmeans(points: &[Vec<f64>], k: usize, seed: u64, iters: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidArgument("cluster count must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewVectors {
            vectors: points.len(),
            clusters: k,
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }

    let mut rng = rng::seeded(seed);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| unit(&points[i]).ok_or(Error::ZeroVector))
        .collect::<Result<_>>()?;

    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let changed = assign(points, &centroids, &mut assignment, &mut objective);
        let reseeded = update(points, &mut centroids, &assignment);
        if !changed && !reseeded {
            break;
        }
    }
    assign(points, &centroids, &mut assignment, &mut objective);
    Ok(KMeans {
        centroids,
        assignment,
        objective,
    })
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &mut [usize], objective: &mut Vec<f64>) -> bool {
    let mut changed = false;
    let mut total = 0.0;
    for (p, slot) in points.iter().zip(assignment.iter_mut()) {
        let c = best_centroid(p, centroids);
        total += sq_dist(p, &centroids[c]);
        changed |= *slot != c;
        *slot = c;
    }
    objective.push(total);
    changed
}

/// Recomputes centroids; returns whether any empty cluster was re-seeded.
fn update(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &[usize]) -> bool {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    // distances are taken against the centroids used for this assignment
    let mut far: Vec<(usize, f64)> = if empty.is_empty() {
        Vec::new()
    } else {
        let mut d: Vec<(usize, f64)> = points
            .iter()
            .zip(assignment)
            .enumerate()
            .map(|(i, (p, &c))| (i, sq_dist(p, &centroids[c])))
            .collect();
        d.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        d
    };
    for (c, sum) in sums.iter().enumerate() {
        if counts[c] > 0 {
            if let Some(u) = unit(sum) {
                centroids[c] = u;
            }
        }
    }
    for (&c, (i, _)) in empty.iter().zip(far.drain(..)) {
        if let Some(u) = unit(&points[i]) {
            centroids[c] = u;
        }
    }
    !empty.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| unit(&(0..dim).map(|_| rng::normal(&mut r)).collect::<Vec<_>>()).unwrap())
            .collect()
    }

    #[test]
    fn objective_is_non_increasing() {
        let points = random_unit(400, 8, 11);
        let km = spherical_kmeans(&points, 12, 3, 25).unwrap();
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn assignment_is_argmax_inner_product() {
        let points = random_unit(200, 5, 2);
        let km = spherical_kmeans(&points, 7, 9, 25).unwrap();
        for (p, &c) in points.iter().zip(&km.assignment) {
            let best = (0..7).map(|j| inner(p, &km.centroids[j])).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(inner(p, &km.centroids[c]), best);
        }
    }

    #[test]
    fn one_point_per_cluster() {
        let points = random_unit(6, 4, 5);
        let km = spherical_kmeans(&points, 6, 0, 25).unwrap();
        let mut sorted = km.assignment.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn duplicates_force_reseeding() {
        // three identical points and one outlier, three clusters: two start on
        // the same location so one of them empties out.
        let mut points = vec![vec![1.0, 0.0]; 3];
        points.push(vec![0.0, 1.0]);
        points.push(vec![0.0, 1.0]);
        let km = spherical_kmeans(&points, 3, 1, 10).unwrap();
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let points = random_unit(3, 4, 5);
        assert!(matches!(
            spherical_kmeans(&points, 4, 0, 5),
            Err(Error::TooFewVectors { vectors: 3, clusters: 4 })
        ));
    }
}
