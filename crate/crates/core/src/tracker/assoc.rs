/// Result of measurement-to-track association.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// `(track index, cluster index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_tracks: Vec<usize>,
    pub unassigned_clusters: Vec<usize>,
}

/// Greedy global nearest neighbour on a squared-Mahalanobis cost matrix
/// `cost[track][cluster]`: repeatedly take the cheapest remaining pair
/// inside the gate. Ties resolve by track index, then cluster index.
pub fn associate(cost: &[Vec<f64>], n_clusters: usize, gate: f64) -> Assignment {
    let n_tracks = cost.len();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (t, row) in cost.iter().enumerate() {
        for (c, &d) in row.iter().enumerate() {
            if d <= gate {
                candidates.push((d, t, c));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; n_tracks];
    let mut cluster_used = vec![false; n_clusters];
    let mut pairs = Vec::new();
    for (_, t, c) in candidates {
        if !track_used[t] && !cluster_used[c] {
            track_used[t] = true;
            cluster_used[c] = true;
            pairs.push((t, c));
        }
    }
    pairs.sort_unstable();
    Assignment {
        pairs,
        unassigned_tracks: (0..n_tracks).filter(|&t| !track_used[t]).collect(),
        unassigned_clusters: (0..n_clusters).filter(|&c| !cluster_used[c]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{assignment_cost, hungarian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pair() {
        let a = associate(&[vec![1.0]], 1, 9.0);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!(a.unassigned_tracks.is_empty() && a.unassigned_clusters.is_empty());
    }

    #[test]
    fn no_clusters_misses_every_track() {
        let a = associate(&[vec![], vec![]], 0, 9.0);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unassigned_tracks, vec![0, 1]);
    }

    #[test]
    fn out_of_gate_pairs_are_rejected() {
        let a = associate(&[vec![25.0, 4.0]], 2, 9.0);
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unassigned_clusters, vec![0]);
    }

    #[test]
    fn greedy_is_close_to_optimal() {
        // tracks and clusters scattered in a room, clusters near tracks
        let mut ratio_sum = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tracks: Vec<[f64; 2]> = (0..4)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(1.0..4.5)])
                .collect();
            let clusters: Vec<[f64; 2]> = tracks
                .iter()
                .map(|t| {
                    [
                        t[0] + rng.random_range(-0.3..0.3),
                        t[1] + rng.random_range(-0.3..0.3),
                    ]
                })
                .collect();
            let cost: Vec<Vec<f64>> = tracks
                .iter()
                .map(|t| {
                    clusters
                        .iter()
                        .map(|c| ((t[0] - c[0]).powi(2) + (t[1] - c[1]).powi(2)) / 0.04)
                        .collect()
                })
                .collect();
            let greedy = associate(&cost, 4, f64::INFINITY);
            assert_eq!(greedy.pairs.len(), 4);
            let g = assignment_cost(&cost, &greedy.pairs);
            let opt = assignment_cost(&cost, &hungarian(&cost));
            assert!(g + 1e-12 >= opt);
            ratio_sum += (g - opt) / opt.max(1e-12);
        }
        assert!(
            ratio_sum / 100.0 <= 0.10,
            "mean excess {}",
            ratio_sum / 100.0
        );
    }
}
