use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::sim::RaiFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range: f64,
    /// Degrees.
    pub angle: f64,
    pub intensity: f64,
}

impl Detection {
    pub fn cartesian(&self) -> [f64; 2] {
        let a = self.angle.to_radians();
        [self.range * a.sin(), self.range * a.cos()]
    }
}

/// Summed-area table with a zero border row and column.
struct Integral {
    table: Array2<f64>,
}

impl Integral {
    fn new(grid: &Array2<f64>) -> Self {
        let (nr, na) = grid.dim();
        let mut table = Array2::zeros((nr + 1, na + 1));
        for i in 0..nr {
            let mut row = 0.0;
            for j in 0..na {
                row += grid[[i, j]];
                table[[i + 1, j + 1]] = table[[i, j + 1]] + row;
            }
        }
        Self { table }
    }

    /// Sum over the inclusive box clipped to the grid, and its cell count.
    fn sum(&self, i0: isize, i1: isize, j0: isize, j1: isize) -> (f64, usize) {
        let (nr, na) = (
            self.table.nrows() as isize - 1,
            self.table.ncols() as isize - 1,
        );
        let (i0, i1) = (i0.max(0), i1.min(nr - 1));
        let (j0, j1) = (j0.max(0), j1.min(na - 1));
        if i0 > i1 || j0 > j1 {
            return (0.0, 0);
        }
        let (a, b, c, d) = (i0 as usize, i1 as usize + 1, j0 as usize, j1 as usize + 1);
        let s = self.table[[b, d]] - self.table[[a, d]] - self.table[[b, c]] + self.table[[a, c]];
        (s, ((b - a) * (d - c)))
    }
}

/// Cell-averaging CFAR with square guard and training rings.
///
/// A cell is detected when its intensity exceeds `scale` times the mean of
/// the training ring. Windows are truncated at the grid edges.
pub fn ca_cfar(frame: &RaiFrame, guard: usize, train: usize, scale: f64) -> Vec<Detection> {
    let grid = &frame.intensity;
    let (nr, na) = grid.dim();
    let integral = Integral::new(grid);
    let (g, w) = (guard as isize, (guard + train) as isize);
    let mut out = Vec::new();
    for i in 0..nr {
        for j in 0..na {
            let v = grid[[i, j]];
            if v <= 0.0 {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            let (outer, n_outer) = integral.sum(ii - w, ii + w, jj - w, jj + w);
            let (inner, n_inner) = integral.sum(ii - g, ii + g, jj - g, jj + g);
            let n = n_outer - n_inner;
            if n == 0 {
                continue;
            }
            // clamp tiny negative round-off from the table differences
            let noise = ((outer - inner) / n as f64).max(0.0);
            if v > scale * noise {
                out.push(Detection {
                    range: frame.range_axis[i],
                    angle: frame.angle_axis[j],
                    intensity: v,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_suite, spawn_task, RadarConfig, Scene, TargetInit};

    #[test]
    fn zero_frame_has_no_detections() {
        let frame = RaiFrame::zeros(&RadarConfig::default(), 0).unwrap();
        assert!(ca_cfar(&frame, 1, 4, 5.0).is_empty());
    }

    #[test]
    fn isolated_peak() {
        let mut frame = RaiFrame::zeros(&RadarConfig::default(), 0).unwrap();
        frame.intensity.fill(0.001);
        frame.intensity[[20, 30]] = 100.0;
        let dets = ca_cfar(&frame, 1, 4, 5.0);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].range, frame.range_axis[20]);
        assert_eq!(dets[0].angle, frame.angle_axis[30]);
    }

    #[test]
    fn integral_matches_direct_sum_at_edges() {
        let mut frame = RaiFrame::zeros(&RadarConfig::default(), 0).unwrap();
        for ((i, j), v) in frame.intensity.indexed_iter_mut() {
            *v = (i * 7 + j * 3) as f64 % 5.0;
        }
        let integral = Integral::new(&frame.intensity);
        let (s, n) = integral.sum(-3, 2, 60, 70);
        let mut direct = 0.0;
        for i in 0..=2 {
            for j in 60..64 {
                direct += frame.intensity[[i, j]];
            }
        }
        assert_eq!(n, 3 * 4);
        assert!((s - direct).abs() < 1e-9);
    }

    #[test]
    fn strong_blob_detected_reliably() {
        // 20 dB: blob peak 100x the mean noise floor
        let suite = default_suite();
        let mut room = suite.rooms[0].clone();
        room.clutter = Default::default();
        room.motion.speed_min = 0.0;
        room.motion.speed_max = 0.0;
        let range = 2.5;
        let mut scene_cfg = suite.scene.clone();
        scene_cfg.fluctuation = 0.0;
        let peak = scene_cfg.base_amplitude / (1.0 + range);
        room.noise_scale = peak / 100.0 / scene_cfg.base_amplitude;
        let mut hits = 0;
        for seed in 0..100 {
            let mut task = spawn_task(&room, 1, seed, &suite.radar).unwrap();
            task.targets[0] = TargetInit {
                position: [0.4, (range * range - 0.16f64).sqrt()],
                speed: 0.0,
                heading: 0.0,
            };
            let (_, frame) = Scene::new(&task, &suite.radar, &scene_cfg)
                .unwrap()
                .next_frame()
                .unwrap();
            let dets = ca_cfar(&frame, 1, 4, 6.0);
            if dets
                .iter()
                .any(|d| (d.range - range).abs() < 0.2 && (d.angle - 9.2).abs() < 4.0)
            {
                hits += 1;
            }
        }
        assert!(hits >= 90, "{hits}/100");
    }
}
