use fedsim_core::partition::client_label_sets;
use fedsim_core::yolo::{greedy_matches, serialize_label_file};
use fedsim_core::{
    detection_accuracy, fedadam_round, fedavg_round, forward_loss_grad, iou, parse_label_file, partition_iid,
    partition_label_shard, sample_clients, weighted_average, AggregatorConfig, AggregatorKind, BBox, ClientUpdate,
    FedAdamState, LabeledExample, ModelParameters, ModelSpec, Partition, PartitionScheme,
};
use proptest::prelude::*;

fn updates_strategy() -> impl Strategy<Value = Vec<ClientUpdate>> {
    (1usize..12).prop_flat_map(|dim| {
        prop::collection::vec((prop::collection::vec(-50.0f64..50.0, dim), 1usize..500), 1..9).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(k, (values, n))| ClientUpdate {
                    client_id: k * 7 % 31,
                    params: ModelParameters::from_vec(values).unwrap(),
                    num_examples: n,
                    train_loss: 0.0,
                })
                .collect()
        })
    })
}

fn bbox_strategy() -> impl Strategy<Value = BBox> {
    (0u32..4, 0.01f64..0.8, 0.01f64..0.8, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(c, w, h, fx, fy)| {
        let x = w / 2.0 + fx * (1.0 - w);
        let y = h / 2.0 + fy * (1.0 - h);
        BBox::new(c, x.clamp(0.0, 1.0), y.clamp(0.0, 1.0), w, h).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn average_stays_in_client_range(updates in updates_strategy()) {
        let avg = weighted_average(&updates).unwrap();
        for i in 0..avg.len() {
            let col = updates.iter().map(|u| u.params.values()[i]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= avg.values()[i] && avg.values()[i] <= hi);
        }
    }

    #[test]
    fn average_ignores_update_order(updates in updates_strategy(), rot in 0usize..9) {
        let mut rotated = updates.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        let a = weighted_average(&updates).unwrap();
        let b = weighted_average(&rotated).unwrap();
        let bits = |p: &ModelParameters| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn identical_updates_average_to_themselves(values in prop::collection::vec(-1e3f64..1e3, 1..20), ns in prop::collection::vec(1usize..100, 1..6)) {
        let updates: Vec<ClientUpdate> = ns.iter().enumerate().map(|(k, &n)| ClientUpdate {
            client_id: k,
            params: ModelParameters::from_vec(values.clone()).unwrap(),
            num_examples: n,
            train_loss: 0.0,
        }).collect();
        let avg = weighted_average(&updates).unwrap();
        prop_assert_eq!(avg.values(), &values[..]);
    }

    #[test]
    fn fedadam_without_server_lr_keeps_global(updates in updates_strategy()) {
        let global = ModelParameters::zeros_like(&updates[0].params);
        let cfg = AggregatorConfig { server_lr: 0.0, ..AggregatorConfig::with_defaults(AggregatorKind::FedAdam) };
        let state = FedAdamState::zeroed(&cfg, global.len());
        let (next, _) = fedadam_round(&state, &global, &updates).unwrap();
        prop_assert_eq!(next.values(), global.values());
    }

    #[test]
    fn fedadam_step_is_bounded_by_server_lr(updates in updates_strategy()) {
        // with zero moments, |m| / (sqrt(v) + tau) <= (1 - b1) / sqrt(1 - b2)
        let global = updates[0].params.clone();
        let cfg = AggregatorConfig::with_defaults(AggregatorKind::FedAdam);
        let state = FedAdamState::zeroed(&cfg, global.len());
        let (next, _) = fedadam_round(&state, &global, &updates).unwrap();
        let bound = cfg.server_lr * (1.0 - cfg.beta1) / (1.0 - cfg.beta2).sqrt();
        for (a, b) in next.values().iter().zip(global.values()) {
            prop_assert!((a - b).abs() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fedavg_ignores_the_global(updates in updates_strategy(), shift in -5.0f64..5.0) {
        let g1 = updates[0].params.clone();
        let g2 = g1.with_values(g1.values().iter().map(|v| v + shift).collect()).unwrap();
        prop_assert_eq!(fedavg_round(&g1, &updates).unwrap(), fedavg_round(&g2, &updates).unwrap());
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox_strategy(), b in bbox_strategy()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab.to_bits(), iou(&b, &a).to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_survives_small_translations(a in bbox_strategy(), b in bbox_strategy(), dx in -0.05f64..0.05, dy in -0.05f64..0.05) {
        let shift = |bx: &BBox| BBox::new(bx.class_id, bx.x_center + dx, bx.y_center + dy, bx.width, bx.height);
        if let (Ok(sa), Ok(sb)) = (shift(&a), shift(&b)) {
            prop_assert!((iou(&a, &b) - iou(&sa, &sb)).abs() < 1e-9);
        }
    }

    #[test]
    fn detection_accuracy_falls_with_threshold(
        gt in prop::collection::vec(bbox_strategy(), 0..7),
        preds in prop::collection::vec(bbox_strategy(), 0..7),
        t1 in 0.01f64..1.0,
        t2 in 0.01f64..1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let at_lo = detection_accuracy(&preds, &gt, lo).unwrap();
        let at_hi = detection_accuracy(&preds, &gt, hi).unwrap();
        prop_assert!(at_hi <= at_lo);
        prop_assert!((0.0..=1.0).contains(&at_lo));
    }

    #[test]
    fn greedy_matching_is_one_to_one(
        gt in prop::collection::vec(bbox_strategy(), 0..7),
        preds in prop::collection::vec(bbox_strategy(), 0..7),
        t in 0.01f64..1.0,
    ) {
        let matches = greedy_matches(&preds, &gt, t);
        let mut ps: Vec<usize> = matches.iter().map(|m| m.0).collect();
        let mut gs: Vec<usize> = matches.iter().map(|m| m.1).collect();
        ps.sort_unstable();
        ps.dedup();
        gs.sort_unstable();
        gs.dedup();
        prop_assert_eq!(ps.len(), matches.len());
        prop_assert_eq!(gs.len(), matches.len());
        for (p, g) in matches {
            prop_assert_eq!(preds[p].class_id, gt[g].class_id);
            prop_assert!(iou(&preds[p], &gt[g]) >= t);
        }
    }

    #[test]
    fn label_files_round_trip(boxes in prop::collection::vec(bbox_strategy(), 0..12)) {
        let text = serialize_label_file(&boxes);
        prop_assert_eq!(parse_label_file(&text).unwrap(), boxes);
    }

    #[test]
    fn iid_partition_is_a_balanced_cover(n in 30usize..400, k in 1usize..30, seed in any::<u64>()) {
        let p = partition_iid(n, k, seed).unwrap();
        let mut all: Vec<usize> = p.assignments().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = p.assignments().iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn label_shard_bounds_label_sets(
        per_class in prop::collection::vec(1usize..40, 1..9),
        k in 1usize..20,
        extra in 0usize..3,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = per_class.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let cpc = per_class.len().div_ceil(k) + extra;
        let p = partition_label_shard(&labels, k, cpc, seed).unwrap();
        let mut all: Vec<usize> = p.assignments().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for set in client_label_sets(&p, &labels) {
            prop_assert!(set.len() <= cpc);
        }
    }

    #[test]
    fn iid_rejects_more_clients_than_examples(n in 0usize..20, extra in 1usize..5) {
        prop_assert!(partition_iid(n, n + extra, 0).is_err());
    }

    #[test]
    fn manifest_round_trips(n in 15usize..200, k in 1usize..15, seed in any::<u64>()) {
        let p = partition_iid(n, k, seed).unwrap();
        let back = Partition::from_manifest(&p.to_manifest(), PartitionScheme::Iid).unwrap();
        prop_assert_eq!(back.assignments(), p.assignments());
    }

    #[test]
    fn sampled_clients_are_sorted_and_distinct(k in 1usize..60, frac in 0.01f64..=1.0, round in 1usize..50, seed in any::<u64>()) {
        let picked = sample_clients(k, frac, round, seed);
        prop_assert!(!picked.is_empty());
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(picked.iter().all(|&c| c < k));
        prop_assert_eq!(picked, sample_clients(k, frac, round, seed));
    }
}

/// Central differences of the mean loss, independent of the analytic
/// backward pass.
fn numeric_gradient(spec: &ModelSpec, params: &ModelParameters, batch: &[LabeledExample]) -> Vec<f64> {
    let h = 1e-5;
    (0..params.len())
        .map(|i| {
            let at = |delta: f64| {
                let mut v = params.values().to_vec();
                v[i] += delta;
                forward_loss_grad(spec, &params.with_values(v).unwrap(), batch).unwrap().0
            };
            (at(h) - at(-h)) / (2.0 * h)
        })
        .collect()
}

fn spec_and_batch() -> impl Strategy<Value = (ModelSpec, Vec<f64>, Vec<LabeledExample>)> {
    (1usize..5, 2usize..5, 0usize..5, 1usize..5).prop_flat_map(|(d, c, h, n)| {
        let spec = if h == 0 { ModelSpec::logistic(d, c) } else { ModelSpec::mlp(d, h, c) };
        let params = prop::collection::vec(-1.0f64..1.0, spec.param_count());
        let batch = prop::collection::vec((prop::collection::vec(-2.0f64..2.0, d), 0..c), n)
            .prop_map(|rows| rows.into_iter().map(|(f, y)| LabeledExample::new(f, y)).collect::<Vec<_>>());
        (Just(spec), params, batch)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradient_matches_finite_differences((spec, values, batch) in spec_and_batch()) {
        let params = ModelParameters::new(values, spec.layout()).unwrap();
        let (_, grad) = forward_loss_grad(&spec, &params, &batch).unwrap();
        for (a, n) in grad.values().iter().zip(numeric_gradient(&spec, &params, &batch)) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            prop_assert!(rel <= 1e-4, "analytic {} numeric {}", a, n);
        }
    }

    #[test]
    fn loss_is_positive_and_finite((spec, values, batch) in spec_and_batch()) {
        let params = ModelParameters::new(values, spec.layout()).unwrap();
        let (loss, grad) = forward_loss_grad(&spec, &params, &batch).unwrap();
        prop_assert!(loss.is_finite() && loss > 0.0);
        prop_assert!(grad.values().iter().all(|g| g.is_finite()));
    }
}
