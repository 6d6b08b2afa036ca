/// Second differences `c[k+2] − 2c[k+1] + c[k]` over interior triples.
/// Sequences shorter than three yield an empty vector.
pub fn second_difference(c: &[f64]) -> Vec<f64> {
    c.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect()
}

/// `‖D c‖²` without allocating.
pub fn second_difference_energy(c: &[f64]) -> f64 {
    c.windows(3)
        .map(|w| {
            let d = w[2] - 2.0 * w[1] + w[0];
            d * d
        })
        .sum()
}

/// Stencil of one row of `D`.
pub(crate) const STENCIL: [f64; 3] = [1.0, -2.0, 1.0];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_has_zero_curvature() {
        assert_eq!(second_difference(&[1.0, 2.0, 3.0, 4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn direct_stencil() {
        assert_eq!(second_difference(&[0.0, 1.0, 0.0]), vec![-2.0]);
        assert!(second_difference(&[1.0, 2.0]).is_empty());
        assert!(second_difference(&[]).is_empty());
    }

    #[test]
    fn matches_dense_operator() {
        let c: Vec<f64> = (0..10).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.3).collect();
        let m = c.len();
        // explicit (m-2) x m banded matrix
        let mut d = vec![vec![0.0; m]; m - 2];
        for (k, row) in d.iter_mut().enumerate() {
            row[k] = 1.0;
            row[k + 1] = -2.0;
            row[k + 2] = 1.0;
        }
        let dense: Vec<f64> = d
            .iter()
            .map(|row| row.iter().zip(&c).map(|(a, b)| a * b).sum())
            .collect();
        let fast = second_difference(&c);
        assert_eq!(fast.len(), dense.len());
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-14);
        }
        let energy: f64 = dense.iter().map(|v| v * v).sum();
        assert!((second_difference_energy(&c) - energy).abs() < 1e-14);
    }
}
