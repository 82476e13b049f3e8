use cubepano::Direction3;
use cubepano_model::jointface::spherical_rope;
use cubepano_model::jointface::ops::softmax_rows;
use ndarray::Array2;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    // Attention logits see only the difference of the two coordinates.
    #[test]
    fn rope_scores_depend_on_relative_position(
        q in prop::collection::vec(-1.0f64..1.0, 12),
        k in prop::collection::vec(-1.0f64..1.0, 12),
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        base in 2.0f64..1e4,
    ) {
        let rq = spherical_rope(&q, Direction3::new(a[0], a[1], a[2]), base).unwrap();
        let rk = spherical_rope(&k, Direction3::new(b[0], b[1], b[2]), base).unwrap();
        let rel = spherical_rope(&k, Direction3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2]), base).unwrap();
        prop_assert!((dot(&rq, &rk) - dot(&q, &rel)).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut m = Array2::from_shape_vec((3, 4), values).unwrap();
        softmax_rows(&mut m);
        for row in m.rows() {
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
