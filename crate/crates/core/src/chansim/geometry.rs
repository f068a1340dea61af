//! Room geometry and ray synthesis.

use super::{Path, PathSet, SPEED_OF_LIGHT};

/// Rectangular room with walls at `x = 0`, `x = width`, `y = 0` and
/// `y = depth`, all sharing one amplitude reflection coefficient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Room {
    pub width: f64,
    pub depth: f64,
    pub reflection: f64,
}

impl Room {
    /// First-order wall images of a point.
    fn images(&self, p: [f64; 2]) -> [[f64; 2]; 4] {
        [
            [-p[0], p[1]],
            [2.0 * self.width - p[0], p[1]],
            [p[0], -p[1]],
            [p[0], 2.0 * self.depth - p[1]],
        ]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Uniform linear array along the x axis, centered on `center`.
pub fn ula_positions(center: [f64; 2], elements: usize, spacing: f64) -> Vec<[f64; 2]> {
    (0..elements)
        .map(|i| {
            let offset = (i as f64 - (elements as f64 - 1.0) / 2.0) * spacing;
            [center[0] + offset, center[1]]
        })
        .collect()
}

/// Direct ray plus one first-order reflection per wall (five paths) for
/// every TX/RX element pair. Amplitudes follow free-space `1/d` spreading
/// with the wall reflection coefficient applied to reflected rays.
pub fn image_method_paths(
    room: &Room,
    tx_elements: &[[f64; 2]],
    rx_elements: &[[f64; 2]],
    f_c: f64,
    symbol_period: f64,
    subcarriers: &[i16],
) -> PathSet {
    let paths = tx_elements
        .iter()
        .map(|&tx| {
            rx_elements
                .iter()
                .map(|&rx| {
                    let mut pair = Vec::with_capacity(5);
                    let d = dist(tx, rx).max(1e-3);
                    pair.push(Path {
                        amplitude: 1.0 / d,
                        delay: d / SPEED_OF_LIGHT,
                    });
                    for image in room.images(tx) {
                        let d = dist(image, rx).max(1e-3);
                        pair.push(Path {
                            amplitude: room.reflection / d,
                            delay: d / SPEED_OF_LIGHT,
                        });
                    }
                    pair
                })
                .collect()
        })
        .collect();
    PathSet {
        paths,
        f_c,
        symbol_period,
        subcarriers: subcarriers.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ula_is_centered_and_spaced() {
        let pos = ula_positions([1.0, 2.0], 3, 0.5);
        assert_eq!(pos.len(), 3);
        assert!((pos[0][0] - 0.5).abs() < 1e-12);
        assert!((pos[1][0] - 1.0).abs() < 1e-12);
        assert!((pos[2][0] - 1.5).abs() < 1e-12);
        assert!(pos.iter().all(|p| p[1] == 2.0));
    }

    #[test]
    fn image_paths_have_direct_plus_four_reflections() {
        let room = Room {
            width: 6.0,
            depth: 5.0,
            reflection: 0.6,
        };
        let ps = image_method_paths(
            &room,
            &[[3.0, 1.0]],
            &[[3.0, 3.0]],
            5.21e9,
            3.2e-6,
            &[-1, 1],
        );
        assert_eq!(ps.tx(), 1);
        assert_eq!(ps.rx(), 1);
        assert_eq!(ps.paths[0][0].len(), 5);
        ps.validate().unwrap();
        // Direct path is the shortest and the strongest.
        let direct = ps.paths[0][0][0];
        for p in &ps.paths[0][0][1..] {
            assert!(p.delay > direct.delay);
            assert!(p.amplitude < direct.amplitude);
        }
        assert!((direct.delay - 2.0 / SPEED_OF_LIGHT).abs() < 1e-15);
    }

    #[test]
    fn radial_move_shifts_direct_delay_by_distance_over_c() {
        let room = Room {
            width: 6.0,
            depth: 5.0,
            reflection: 0.6,
        };
        let tx = [[3.0, 1.0]];
        let near = image_method_paths(&room, &tx, &[[3.0, 3.0]], 5.21e9, 3.2e-6, &[1]);
        let far = image_method_paths(&room, &tx, &[[3.0, 3.1]], 5.21e9, 3.2e-6, &[1]);
        let dt = far.paths[0][0][0].delay - near.paths[0][0][0].delay;
        assert!(dt >= 0.1 / SPEED_OF_LIGHT - 1e-15);
    }

    #[test]
    fn lateral_move_changes_delay_in_some_pair() {
        let room = Room {
            width: 6.0,
            depth: 5.0,
            reflection: 0.6,
        };
        let tx = ula_positions([3.0, 1.0], 3, 0.028);
        let a = image_method_paths(&room, &tx, &ula_positions([2.8, 3.0], 2, 0.028), 5.21e9, 3.2e-6, &[1]);
        let b = image_method_paths(&room, &tx, &ula_positions([2.7, 3.0], 2, 0.028), 5.21e9, 3.2e-6, &[1]);
        let mut max_shift = 0.0f64;
        for m in 0..3 {
            for n in 0..2 {
                max_shift = max_shift
                    .max((a.paths[m][n][0].delay - b.paths[m][n][0].delay).abs());
            }
        }
        assert!(max_shift > 1e-12);
    }
}
