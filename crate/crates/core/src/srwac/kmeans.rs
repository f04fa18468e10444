//! Lloyd's k-means on planar points with k-means++ seeding and restarts.

use rand::Rng;

use crate::scenario::Point2;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id of every input point.
    pub assignment: Vec<usize>,
    pub centers: Vec<Point2>,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
    /// WCSS after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq(a: Point2, b: Point2) -> f64 {
    (a.u - b.u).powi(2) + (a.v - b.v).powi(2)
}

/// Clusters `points` into `k` groups, keeping the restart with the lowest
/// WCSS. Requires `1 <= k <= points.len()`.
pub fn kmeans<R: Rng>(points: &[Point2], k: usize, rng: &mut R, opts: &KMeansOptions) -> Clustering {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= {} points, got {k}", points.len());
    let mut best: Option<Clustering> = None;
    for _ in 0..opts.restarts.max(1) {
        let centers = seed_plus_plus(points, k, rng);
        let run = lloyd(points, centers, opts.max_iter);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn seed_plus_plus<R: Rng>(points: &[Point2], k: usize, rng: &mut R) -> Vec<Point2> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|&p| sq(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centers.push(c);
        for (i, &p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq(p, c));
        }
    }
    centers
}

fn assign(points: &[Point2], centers: &[Point2], assignment: &mut [usize]) -> f64 {
    let mut wcss = 0.0;
    for (i, &p) in points.iter().enumerate() {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(j, &c)| (j, sq(p, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assignment[i] = best;
        wcss += d;
    }
    wcss
}

fn lloyd(points: &[Point2], mut centers: Vec<Point2>, max_iter: usize) -> Clustering {
    let k = centers.len();
    let mut assignment = vec![0; points.len()];
    let mut wcss = assign(points, &centers, &mut assignment);
    let mut history = vec![wcss];
    for _ in 0..max_iter {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (i, &p) in points.iter().enumerate() {
            let s = &mut sums[assignment[i]];
            s.0 += p.u;
            s.1 += p.v;
            s.2 += 1;
        }
        let mut next = centers.clone();
        for (j, &(su, sv, n)) in sums.iter().enumerate() {
            if n > 0 {
                next[j] = Point2::new(su / n as f64, sv / n as f64);
            }
        }
        // Re-seed emptied clusters at the point farthest from the other centers.
        for j in 0..k {
            if sums[j].2 == 0 {
                let far = points
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        let da = nearest_other(a, &next, j);
                        let db = nearest_other(b, &next, j);
                        da.total_cmp(&db)
                    })
                    .expect("points is nonempty");
                next[j] = far;
            }
        }
        let mut next_assignment = vec![0; points.len()];
        let next_wcss = assign(points, &next, &mut next_assignment);
        if next_wcss > wcss {
            // Only a re-seed can raise WCSS; keep the better configuration.
            break;
        }
        let stable = next_assignment == assignment;
        centers = next;
        assignment = next_assignment;
        wcss = next_wcss;
        history.push(wcss);
        if stable {
            break;
        }
    }
    Clustering {
        assignment,
        centers,
        wcss,
        history,
    }
}

fn nearest_other(p: Point2, centers: &[Point2], skip: usize) -> f64 {
    centers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &c)| sq(p, c))
        .fold(f64::INFINITY, f64::min)
}
