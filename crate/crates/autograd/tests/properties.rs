use litese_autograd::ops::elementwise::{broadcast_zip, reduce_to_shape};
use litese_autograd::Tensor;
use proptest::prelude::*;

fn shape_and_mask() -> impl Strategy<Value = (Vec<usize>, Vec<bool>)> {
    prop::collection::vec((1usize..4, any::<bool>()), 1..4).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn reduce_preserves_total((shape, mask) in shape_and_mask(), seed in 0u64..1000) {
        let small: Vec<usize> = shape.iter().zip(&mask).map(|(&d, &m)| if m { 1 } else { d }).collect();
        let g = Tensor::from_fn(&shape, |i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0);
        let r = reduce_to_shape(&g, &small);
        prop_assert_eq!(r.shape(), &small[..]);
        prop_assert!((r.sum() - g.sum()).abs() < 1e-9);
    }

    #[test]
    fn broadcast_against_ones_is_identity((shape, mask) in shape_and_mask()) {
        let small: Vec<usize> = shape.iter().zip(&mask).map(|(&d, &m)| if m { 1 } else { d }).collect();
        let a = Tensor::from_fn(&shape, |i| i as f64);
        let ones = Tensor::ones(&small);
        let y = broadcast_zip(&a, &ones, |x, y| x * y);
        prop_assert_eq!(y, a);
    }

    #[test]
    fn permute_round_trip(d0 in 1usize..4, d1 in 1usize..4, d2 in 1usize..4) {
        let a = Tensor::from_fn(&[d0, d1, d2], |i| i as f64);
        let p = a.permute(&[2, 0, 1]);
        prop_assert_eq!(p.shape(), &[d2, d0, d1][..]);
        prop_assert_eq!(p.permute(&[1, 2, 0]), a);
    }

    #[test]
    fn narrow_concat_round_trip(len in 2usize..8, cut in 1usize..7, inner in 1usize..4) {
        let cut = cut.min(len - 1);
        let a = Tensor::from_fn(&[2, len, inner], |i| i as f64);
        let l = a.narrow(1, 0, cut);
        let r = a.narrow(1, cut, len - cut);
        prop_assert_eq!(Tensor::concat(&[&l, &r], 1), a);
    }
}
