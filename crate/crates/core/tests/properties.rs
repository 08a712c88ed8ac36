use std::path::Path;

use proptest::prelude::*;
use tanszoo::config::{from_layers, parse_kv, to_kv_text};
use tanszoo::contrastive::TrainConfig;
use tanszoo::synth::{build_full_zoo, SynthConfig};
use tanszoo::zoo::{load_zoo, save_zoo, TopologyDescriptor};
use tanszoo::zoo_builder::{hypervolume, ParetoPoint};

fn points(max: usize) -> impl Strategy<Value = Vec<ParetoPoint>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 0..max).prop_map(|v| {
        v.into_iter()
            .map(|(a, b, c)| ParetoPoint::new(a, b, c).unwrap())
            .collect()
    })
}

fn box_volume(p: &ParetoPoint) -> f64 {
    p.0.iter().product()
}

proptest! {
    #[test]
    fn hypervolume_between_largest_box_and_box_sum(pts in points(24)) {
        let v = hypervolume(&pts);
        let largest = pts.iter().map(box_volume).fold(0.0, f64::max);
        let sum: f64 = pts.iter().map(box_volume).sum();
        prop_assert!(v >= largest - 1e-12);
        prop_assert!(v <= sum + 1e-12);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn hypervolume_monotone_and_ignores_dominated(pts in points(20), extra in points(2), shrink in 0.0..=1.0f64) {
        let v = hypervolume(&pts);
        let mut more = pts.clone();
        more.extend(extra);
        prop_assert!(hypervolume(&more) >= v);
        if let Some(p) = pts.first() {
            let mut with_dominated = pts.clone();
            with_dominated.push(ParetoPoint::new(p.0[0] * shrink, p.0[1], p.0[2] * shrink).unwrap());
            prop_assert_eq!(hypervolume(&with_dominated), v);
        }
    }

    #[test]
    fn hypervolume_permutation_exact(pts in points(20), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(hypervolume(&shuffled).to_bits(), hypervolume(&pts).to_bits());
    }

    #[test]
    fn topology_json_round_trip(seed in any::<u64>()) {
        use rand::SeedableRng;
        let t = TopologyDescriptor::sample(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let back: TopologyDescriptor = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        prop_assert_eq!(back.flatten().len(), t.flatten().len());
        prop_assert_eq!(back, t);
    }

    #[test]
    fn train_config_kv_round_trip(epochs in 1usize..500, lr in 1e-5..1.0f64, margin in 0.0..2.0f64, seed in any::<u64>()) {
        let cfg = TrainConfig { epochs, lr, margin, rng_seed: seed, ..Default::default() };
        let text = to_kv_text(&cfg).unwrap();
        let back: TrainConfig = from_layers(&[&parse_kv(&text, Path::new("p.cfg")).unwrap()]).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn zoo_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in [1, 2] {
        let zoo = build_full_zoo(&SynthConfig {
            n_datasets: 3,
            networks_per_dataset: 2,
            rng_seed: seed,
            ..Default::default()
        })
        .unwrap();
        let path = dir.path().join(format!("z{seed}.jsonl"));
        save_zoo(&zoo, &path).unwrap();
        let back = load_zoo(&path).unwrap();
        back.validate().unwrap();
        assert_eq!(back, zoo);
    }
}
