use std::collections::VecDeque;

use super::cfar::Detection;

/// DBSCAN label per point: cluster index, or `None` for noise.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    let dx = points[i][0] - points[j][0];
                    let dy = points[i][1] - points[j][1];
                    dx * dx + dy * dy <= eps2
                })
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    labels
}

/// Groups detections in Cartesian space and returns intensity-weighted
/// cluster means. Clusters smaller than `min_pts` are dropped.
pub fn cluster(dets: &[Detection], eps: f64, min_pts: usize) -> Vec<[f64; 2]> {
    let points: Vec<[f64; 2]> = dets.iter().map(Detection::cartesian).collect();
    let labels = dbscan(&points, eps, min_pts.max(1));
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut acc = vec![(0.0, 0.0, 0.0, 0usize); k];
    for ((p, d), label) in points.iter().zip(dets).zip(&labels) {
        if let Some(c) = label {
            let w = d.intensity;
            acc[*c].0 += w * p[0];
            acc[*c].1 += w * p[1];
            acc[*c].2 += w;
            acc[*c].3 += 1;
        }
    }
    acc.into_iter()
        .filter(|a| a.3 >= min_pts && a.2 > 0.0)
        .map(|(x, y, w, _)| [x / w, y / w])
        .collect()
}
