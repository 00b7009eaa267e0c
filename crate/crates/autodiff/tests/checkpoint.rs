use hist_autodiff::{checkpoint, ParamStore, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn f32_round_trip_is_bit_exact(
        rows in 1usize..6,
        cols in 1usize..6,
        seed_vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 36),
    ) {
        let data: Vec<f32> = seed_vals.iter().copied().cycle().take(rows * cols).collect();
        let entries = vec![
            ("gru.w".to_string(), Tensor::new(rows, cols, data).unwrap()),
            ("bias".to_string(), Tensor::<f32>::zeros(1, cols)),
        ];
        let bytes = checkpoint::encode(&entries);
        let back = checkpoint::decode::<f32>(&bytes).unwrap();
        prop_assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&back) {
            prop_assert_eq!(n0, n1);
            prop_assert_eq!(t0.shape(), t1.shape());
            let same = t0.data().iter().zip(t1.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
        prop_assert_eq!(checkpoint::encode(&back), bytes);
    }
}

#[test]
fn store_reload_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    let mut store = ParamStore::<f32>::new();
    store.add("a", Tensor::from_f64(2, 2, &[0.1, -0.2, 1e-30, 3.5]).unwrap()).unwrap();
    store.add("b", Tensor::from_f64(1, 3, &[7.0, 8.0, 9.0]).unwrap()).unwrap();
    checkpoint::save(&path, &store.named()).unwrap();

    let mut fresh = ParamStore::<f32>::new();
    fresh.add("a", Tensor::zeros(2, 2)).unwrap();
    fresh.add("b", Tensor::zeros(1, 3)).unwrap();
    fresh.load_named(&checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(fresh.tensors(), store.tensors());

    let mut wrong = ParamStore::<f32>::new();
    wrong.add("a", Tensor::zeros(3, 2)).unwrap();
    assert!(wrong.load_named(&checkpoint::load(&path).unwrap()).is_err());
}
