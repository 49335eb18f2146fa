use osora_core::adapters::{build_adapter, AdapterMethod, MethodKind, OInit, TrainableSet};
use osora_core::densela::{random_matrix, svd, InitScheme, Matrix};
use osora_core::trainer::{make_task, train, Optimizer, TrainConfig};
use osora_core::Error;
use proptest::prelude::*;

fn every_variant(rank: usize) -> Vec<AdapterMethod> {
    let mut out: Vec<AdapterMethod> = MethodKind::ALL.iter().map(|k| AdapterMethod::new(*k, rank)).collect();
    out.push(AdapterMethod::new(MethodKind::Osora, rank).with_o_init(OInit::Gaussian));
    out.push(AdapterMethod::new(MethodKind::Osora, rank).with_trainable(TrainableSet::OnlyS));
    out.push(AdapterMethod::new(MethodKind::Osora, rank).with_trainable(TrainableSet::OnlyO));
    out
}

#[test]
fn frozen_tensors_survive_training() {
    let task = make_task(12, 10, 2, 5).unwrap();
    for method in every_variant(2) {
        let st = build_adapter(&task.w0, method, 9).unwrap();
        let before = st.frozen_bytes();
        let cfg = TrainConfig { steps: 100, lr: 1e-2, optimizer: Optimizer::Adam };
        let run = train(st, &task, cfg).unwrap();
        assert_eq!(before, run.final_state.frozen_bytes(), "{}", method.kind.name());
        assert_eq!(run.loss_trace.len(), 101);
    }
}

#[test]
fn osora_update_rank_is_bounded() {
    let w0 = random_matrix(16, 12, 3, InitScheme::Gaussian).unwrap();
    for r in [1, 3, 5] {
        for kind in [MethodKind::Osora, MethodKind::OsoraK] {
            let mut st = build_adapter(&w0, AdapterMethod::new(kind, r), 4).unwrap();
            let theta: Vec<f64> = (0..st.trainable_len()).map(|i| 0.3 + (i as f64 * 0.77).sin()).collect();
            st.load_trainable(&theta).unwrap();
            let s = svd(&st.delta()).unwrap().s;
            assert!(s[r - 1] > 1e-6);
            assert!(s[r..].iter().all(|v| *v <= 1e-10), "{kind:?} r={r}: {:?}", &s[r..]);
        }
    }
}

#[test]
fn output_scaling_is_not_collapsible_into_singular_values() {
    let w0 = Matrix::from_rows(&[
        &[4.0, 1.0, 0.0, 0.5],
        &[1.0, 3.0, 0.2, 0.0],
        &[0.0, 0.2, 2.0, 0.1],
        &[0.5, 0.0, 0.1, 1.0],
    ])
    .unwrap();
    let mut st = build_adapter(&w0, AdapterMethod::new(MethodKind::Osora, 1), 0).unwrap();
    // layout is S then O
    st.load_trainable(&[1.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let target = st.delta();
    let (u, v) = st.singular_vectors().unwrap();
    let basis = u.matmul(&v.transpose()).unwrap();
    // with O = ones, ΔW = s·u vᵀ; least-squares optimal s is ⟨ΔW, u vᵀ⟩ / ‖u vᵀ‖²
    let num: f64 = target.as_slice().iter().zip(basis.as_slice()).map(|(a, b)| a * b).sum();
    let den: f64 = basis.as_slice().iter().map(|b| b * b).sum();
    let residual = target.sub(&basis.scale(num / den)).unwrap().frobenius_norm();
    assert!(residual > 1e-3, "residual {residual}");
}

#[test]
fn trainable_round_trip_keeps_forward_bitwise() {
    let w0 = random_matrix(9, 7, 11, InitScheme::Gaussian).unwrap();
    let x = random_matrix(7, 5, 12, InitScheme::Gaussian).unwrap();
    for method in every_variant(3) {
        let mut st = build_adapter(&w0, method, 2).unwrap();
        let before = st.forward_batch(&x).unwrap();
        let flat = st.trainable_vector();
        st.load_trainable(&flat).unwrap();
        assert_eq!(before.to_le_bytes(), st.forward_batch(&x).unwrap().to_le_bytes());
        let err = st.load_trainable(&flat[1..]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }
}

#[test]
fn ablation_slices_have_expected_lengths() {
    let w0 = random_matrix(4, 4, 1, InitScheme::Gaussian).unwrap();
    let full = build_adapter(&w0, AdapterMethod::new(MethodKind::Osora, 2), 0).unwrap();
    let only_o = build_adapter(
        &w0,
        AdapterMethod::new(MethodKind::Osora, 2).with_trainable(TrainableSet::OnlyO),
        0,
    )
    .unwrap();
    assert_eq!(full.trainable_len(), 6);
    assert_eq!(only_o.trainable_len(), 4);
}

#[test]
fn read_only_operations_share_across_threads() {
    let w0 = random_matrix(10, 8, 4, InitScheme::Gaussian).unwrap();
    let st = build_adapter(&w0, AdapterMethod::new(MethodKind::OsoraDora, 2), 6).unwrap();
    let x = random_matrix(8, 4, 5, InitScheme::Gaussian).unwrap();
    let expected = st.forward_batch(&x).unwrap().to_le_bytes();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| st.forward_batch(&x).unwrap().to_le_bytes())).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn merge_matches_forward_for_any_trainables(
        d in 2usize..10, k in 2usize..10, seed in any::<u64>(), tag in 0u8..7, frac in 0.0f64..1.0,
    ) {
        let kind = MethodKind::from_tag(tag).unwrap();
        let r = 1 + ((d.min(k) - 1) as f64 * frac) as usize;
        let w0 = random_matrix(d, k, seed, InitScheme::Gaussian).unwrap();
        let mut st = build_adapter(&w0, AdapterMethod::new(kind, r), seed ^ 7).unwrap();
        let theta: Vec<f64> = st
            .trainable_vector()
            .iter()
            .enumerate()
            .map(|(i, t)| t + 0.1 * ((i as f64) + (seed % 13) as f64).cos())
            .collect();
        st.load_trainable(&theta).unwrap();
        let x = random_matrix(k, 3, seed ^ 3, InitScheme::Gaussian).unwrap();
        let fwd = st.forward_batch(&x).unwrap();
        let merged = st.merge().matmul(&x).unwrap();
        prop_assert!(fwd.max_abs_diff(&merged).unwrap() <= 1e-10 * (1.0 + fwd.max_abs()));
    }

    #[test]
    fn init_is_identity(d in 2usize..10, k in 2usize..10, seed in any::<u64>(), tag in 0u8..7) {
        let kind = MethodKind::from_tag(tag).unwrap();
        let w0 = random_matrix(d, k, seed, InitScheme::Gaussian).unwrap();
        let st = build_adapter(&w0, AdapterMethod::new(kind, 1), seed).unwrap();
        let x = random_matrix(k, 4, seed ^ 5, InitScheme::Gaussian).unwrap();
        let fwd = st.forward_batch(&x).unwrap();
        let base = w0.matmul(&x).unwrap();
        prop_assert!(fwd.max_abs_diff(&base).unwrap() <= 1e-12 * (1.0 + base.max_abs()));
    }
}
