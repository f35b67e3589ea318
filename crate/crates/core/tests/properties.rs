use std::rc::Rc;

use proptest::prelude::*;
use rand::Rng;

use pewflow::autodiff::{Tape, Tensor};
use pewflow::harness::{nmse, rank_metrics, smooth_curve, train, NmseTable, TrainConfig};
use pewflow::mcnf::min_mlu;
use pewflow::models::{build_model, Architecture, ModelConfig, Representation};
use pewflow::rng::rng_from_seed;
use pewflow::routing::{per_pair_flows, route, DemandMatrix, Scheme};
use pewflow::topology::{diameter, sample_variation, synthetic_topology, weighted_betweenness, Edge, Node, Topology};
use pewflow::traffic::{build_datasets, gravity_from_masses, DatasetSpec, Normalization, Split};

fn random_digraph(seed: u64, n: usize, integer_weights: bool) -> Topology {
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut arcs: Vec<(usize, usize)> = (0..n).map(|i| (order[i], order[(i + 1) % n])).collect();
    if n == 2 {
        arcs.truncate(2);
    }
    for _ in 0..rng.random_range(0..=2 * n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !arcs.contains(&(a, b)) {
            arcs.push((a, b));
        }
    }
    let edges = arcs
        .into_iter()
        .enumerate()
        .map(|(id, (src, dst))| Edge {
            id,
            src,
            dst,
            weight: if integer_weights { rng.random_range(1..=3) as f64 } else { 1.0 + rng.random::<f64>() },
            capacity: [1.0, 2.5, 10.0][rng.random_range(0..3)],
        })
        .collect();
    let nodes = (0..n).map(|id| Node { id, label: format!("v{id}") }).collect();
    Topology::new("random", nodes, edges).unwrap()
}

fn random_dm(seed: u64, n: usize) -> DemandMatrix {
    let mut rng = rng_from_seed(seed);
    let mut d = DemandMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < 0.6 {
                d.set(i, j, 5.0 * rng.random::<f64>());
            }
        }
    }
    d
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn schemes() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::Ssp), Just(Scheme::Ecmp)]
}

/// Every simple path from `s` to `t`, as edge lists.
fn simple_paths(g: &Topology, s: usize, t: usize) -> Vec<Vec<usize>> {
    fn walk(g: &Topology, v: usize, t: usize, seen: &mut Vec<bool>, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == t {
            out.push(path.clone());
            return;
        }
        for &e in g.out_edges(v) {
            let u = g.edge(e).unwrap().dst;
            if !seen[u] {
                seen[u] = true;
                path.push(e);
                walk(g, u, t, seen, path, out);
                path.pop();
                seen[u] = false;
            }
        }
    }
    let mut seen = vec![false; g.node_space()];
    seen[s] = true;
    let mut out = Vec::new();
    walk(g, s, t, &mut seen, &mut Vec::new(), &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routing_is_linear(seed in any::<u64>(), n in 2usize..10, alpha in 0.0f64..20.0, scheme in schemes()) {
        let t = random_digraph(seed, n, true);
        let d = random_dm(seed ^ 1, n);
        let base = route(&t, &d, scheme).unwrap();
        let scaled = route(&t, &d.scaled(alpha), scheme).unwrap();
        let expected: Vec<f64> = base.loads.iter().map(|l| alpha * l).collect();
        prop_assert!(close(&scaled.loads, &expected, 1e-12));
        prop_assert!((scaled.mlu - alpha * base.mlu).abs() <= 1e-12 * (1.0 + scaled.mlu));
    }

    #[test]
    fn routing_is_additive(seed in any::<u64>(), n in 2usize..10, scheme in schemes()) {
        let t = random_digraph(seed, n, true);
        let (a, b) = (random_dm(seed ^ 2, n), random_dm(seed ^ 3, n));
        let sum = DemandMatrix::from_vec(n, a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect()).unwrap();
        let la = route(&t, &a, scheme).unwrap().loads;
        let lb = route(&t, &b, scheme).unwrap().loads;
        let ls = route(&t, &sum, scheme).unwrap().loads;
        let expected: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x + y).collect();
        prop_assert!(close(&ls, &expected, 1e-12));
    }

    #[test]
    fn adding_demand_never_lowers_mlu(seed in any::<u64>(), n in 2usize..10, scheme in schemes()) {
        let t = random_digraph(seed, n, true);
        let d = random_dm(seed ^ 4, n);
        let extra = random_dm(seed ^ 5, n);
        let more = DemandMatrix::from_vec(n, d.as_slice().iter().zip(extra.as_slice()).map(|(x, y)| x + y).collect()).unwrap();
        prop_assert!(route(&t, &more, scheme).unwrap().mlu >= route(&t, &d, scheme).unwrap().mlu);
    }

    #[test]
    fn ecmp_equals_ssp_with_unique_paths(seed in any::<u64>(), n in 2usize..12) {
        let t = random_digraph(seed, n, false);
        let d = random_dm(seed ^ 6, n);
        prop_assert_eq!(route(&t, &d, Scheme::Ssp).unwrap().loads, route(&t, &d, Scheme::Ecmp).unwrap().loads);
    }

    #[test]
    fn per_pair_flows_conserve(seed in any::<u64>(), n in 2usize..12, scheme in schemes()) {
        let t = random_digraph(seed, n, true);
        let d = random_dm(seed ^ 7, n);
        let flows = per_pair_flows(&t, &d, scheme).unwrap();
        prop_assert!(flows.conservation_residual(&t) <= 1e-9);
        prop_assert!(close(&flows.loads(), &route(&t, &d, scheme).unwrap().loads, 1e-12));
    }

    #[test]
    fn min_mlu_is_scale_covariant(seed in any::<u64>(), n in 2usize..7, alpha in 0.01f64..100.0) {
        let t = random_digraph(seed, n, true);
        let d = random_dm(seed ^ 8, n);
        prop_assume!(!d.is_zero());
        let eps = 0.05;
        let base = min_mlu(&t, &d, eps).unwrap();
        let scaled = min_mlu(&t, &d.scaled(alpha), eps).unwrap();
        let ratio = scaled.theta / (alpha * base.theta);
        prop_assert!(ratio >= 1.0 / (1.0 + eps) - 1e-9 && ratio <= 1.0 + eps + 1e-9, "ratio {}", ratio);
        prop_assert!(base.lower_bound <= base.theta && base.theta <= (1.0 + eps) * base.lower_bound * (1.0 + 1e-9));
    }

    #[test]
    fn min_mlu_never_beats_routing_bounds(seed in any::<u64>(), n in 2usize..7) {
        // theta is feasible for splittable flow, so it cannot exceed what SSP achieves,
        // and every single demand must cross the cheapest cut around its source.
        let t = random_digraph(seed, n, true);
        let d = random_dm(seed ^ 9, n);
        prop_assume!(!d.is_zero());
        let r = min_mlu(&t, &d, 0.05).unwrap();
        prop_assert!(r.theta <= 1.05 * route(&t, &d, Scheme::Ssp).unwrap().mlu * (1.0 + 1e-9));
        for v in 0..n {
            let out_cap: f64 = t.out_edges(v).iter().map(|&e| t.edge(e).unwrap().capacity).sum();
            let out_demand: f64 = (0..n).map(|j| d.get(v, j)).sum();
            prop_assert!(r.theta >= out_demand / out_cap * (1.0 - 1e-9));
        }
    }

    #[test]
    fn segment_softmax_is_a_distribution(values in prop::collection::vec(-200.0f64..200.0, 1..40), n_seg in 1usize..6) {
        let seg: Vec<usize> = (0..values.len()).map(|i| (i * 7 + 3) % n_seg).collect();
        let tape = Tape::new();
        let x = tape.constant(Tensor::column(values.clone()));
        let z = x.segment_softmax(&Rc::new(seg.clone()), n_seg).unwrap().value().values;
        let mut sums = vec![0.0; n_seg];
        for (zi, &s) in z.iter().zip(&seg) {
            prop_assert!(*zi >= 0.0);
            sums[s] += zi;
        }
        for (s, total) in sums.iter().enumerate() {
            if seg.contains(&s) {
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn standardization_is_invertible(x in 0.0f64..1e6, max_d in 1e-3f64..1e6, max_c in 1e-3f64..1e6) {
        let norm = Normalization { max_demand: max_d, max_capacity: max_c };
        let back = norm.denormalize_demand(norm.demand(x));
        prop_assert!((back - x).abs() <= 1e-12 * x.max(1e-300));
        let back = norm.denormalize_capacity(norm.capacity(x));
        prop_assert!((back - x).abs() <= 1e-12 * x.max(1e-300));
    }

    #[test]
    fn gravity_is_nonnegative_rank_one(masses in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 4..9)) {
        let n = masses.len();
        let t = random_digraph(n as u64, n, true);
        let (d_in, d_out): (Vec<f64>, Vec<f64>) = masses.into_iter().unzip();
        let d = gravity_from_masses(&t, &d_in, &d_out);
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(d.get(i, j) >= 0.0);
            }
        }
        let (i, k, j, l) = (0, 1, 2, 3);
        let lhs = d.get(i, j) * d.get(k, l);
        let rhs = d.get(i, l) * d.get(k, j);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn betweenness_matches_path_enumeration(seed in any::<u64>(), n in 3usize..8) {
        let t = random_digraph(seed, n, true);
        let mut brute = vec![0.0; n];
        for s in 0..n {
            for dst in 0..n {
                if s == dst {
                    continue;
                }
                let paths = simple_paths(&t, s, dst);
                let len = |p: &Vec<usize>| p.iter().map(|&e| t.edge(e).unwrap().weight).sum::<f64>();
                let best = paths.iter().map(len).fold(f64::INFINITY, f64::min);
                let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| (len(p) - best).abs() < 1e-9).collect();
                for v in 0..n {
                    if v == s || v == dst {
                        continue;
                    }
                    let through = shortest.iter().filter(|p| p.iter().any(|&e| t.edge(e).unwrap().dst == v)).count();
                    brute[v] += through as f64 / shortest.len() as f64;
                }
            }
        }
        let norm = ((n - 1) * (n - 2)) as f64;
        let brandes = weighted_betweenness(&t);
        for v in 0..n {
            prop_assert!((brandes[v] - brute[v] / norm).abs() <= 1e-12, "node {}: {} vs {}", v, brandes[v], brute[v] / norm);
        }
    }

    #[test]
    fn diameter_matches_brute_force(seed in any::<u64>(), n in 2usize..12) {
        let t = random_digraph(seed, n, true);
        let mut hops = vec![vec![usize::MAX; n]; n];
        for (v, row) in hops.iter_mut().enumerate() {
            row[v] = 0;
        }
        for e in t.edges() {
            hops[e.src][e.dst] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if hops[i][k] != usize::MAX && hops[k][j] != usize::MAX {
                        hops[i][j] = hops[i][j].min(hops[i][k] + hops[k][j]);
                    }
                }
            }
        }
        let brute = hops.iter().flatten().copied().filter(|&h| h != usize::MAX).max().unwrap();
        prop_assert_eq!(diameter(&t), brute);
        prop_assert!(diameter(&t) >= 1);
    }

    #[test]
    fn variations_keep_edge_ids(seed in any::<u64>(), n in 6usize..16) {
        let t = synthetic_topology("g", n, n / 2, &[1.0, 2.5, 10.0], seed).unwrap();
        let v = sample_variation(&t, &mut rng_from_seed(seed ^ 10)).unwrap();
        prop_assert!(v.n_nodes() < t.n_nodes() && v.n_nodes() + n / 5 >= t.n_nodes());
        prop_assert_eq!(v.node_space(), t.node_space());
        prop_assert!(v.is_strongly_connected());
        for e in v.edges() {
            prop_assert_eq!(Some(e), t.edge(e.id));
        }
    }

    #[test]
    fn rank_metrics_are_bounded(scores in prop::collection::vec(prop::collection::vec(0u8..4, 4), 1..12)) {
        let archs = ["a", "b", "c", "d"];
        let table: NmseTable = scores
            .iter()
            .enumerate()
            .map(|(i, row)| (format!("t{i}"), archs.iter().map(|a| a.to_string()).zip(row.iter().map(|&s| s as f64 / 4.0)).collect()))
            .collect();
        let m = rank_metrics(&table).unwrap();
        let wr: f64 = m.values().map(|s| s.wr).sum();
        prop_assert!((wr - 100.0).abs() <= 1e-9);
        for s in m.values() {
            prop_assert!(s.mrr > 0.0 && s.mrr <= 1.0);
        }
    }

    #[test]
    fn mean_predictor_has_unit_nmse(labels in prop::collection::vec(0.0f64..5.0, 2..50)) {
        let mean = labels.iter().sum::<f64>() / labels.len() as f64;
        prop_assume!(labels.iter().any(|&l| (l - mean).abs() > 1e-9));
        let pred = vec![mean; labels.len()];
        prop_assert_eq!(nmse(&pred, &labels, mean).unwrap(), 1.0);
    }

    #[test]
    fn smoothing_never_exceeds_the_cap(losses in prop::collection::vec(0.0f64..10.0, 6..40)) {
        let s = smooth_curve(&losses, 0.92, 5).unwrap();
        prop_assert_eq!(s.len(), losses.len() - 5);
        prop_assert!(s.iter().all(|&x| x <= losses[5] + 1e-12));
    }
}

#[test]
fn stored_labels_match_fresh_routing() {
    let t = synthetic_topology("g", 10, 5, &[1.0, 2.5, 10.0], 3).unwrap();
    for (scheme, variations) in [(Scheme::Ssp, None), (Scheme::Ecmp, Some(2))] {
        let mut spec = DatasetSpec::new(scheme, 6, 17);
        spec.variations = variations;
        spec.screen_triviality = false;
        let bundle = build_datasets(&t, &spec).unwrap();
        let again = build_datasets(&t, &spec).unwrap();
        for split in Split::ALL {
            assert_eq!(bundle.split(split).samples, again.split(split).samples);
            for s in &bundle.split(split).samples {
                let d = s.demand_matrix(&bundle.normalization()).unwrap();
                let mlu = route(bundle.graph_of(s), &d, scheme).unwrap().mlu;
                assert!((mlu - s.label).abs() <= 1e-9 * s.label, "{mlu} vs {}", s.label);
            }
        }
        assert_ne!(bundle.train.samples, bundle.test.samples);
    }
}

#[test]
fn early_stopping_keeps_the_best_checkpoint() {
    let t = synthetic_topology("g", 6, 2, &[1.0, 10.0], 5).unwrap();
    let bundle = build_datasets(&t, &DatasetSpec::new(Scheme::Ssp, 32, 2)).unwrap();
    let tc = TrainConfig { epochs: 40, patience: 6, seeds: vec![0], ..TrainConfig::desk() };
    let cfg = ModelConfig::new(Architecture::Gcn, 8, Representation::Sum, &t, 1e-2);
    let r = train(&cfg, &bundle, &tc, 0).unwrap();
    assert!(!r.failed());
    let best = r.val_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_mse, best);
    assert_eq!(r.val_losses[r.best_epoch - 1], best);
    assert!(r.val_losses[..r.best_epoch - 1].iter().all(|&v| v > best));
    assert!(r.val_losses.len() == tc.epochs || r.val_losses.len() - r.best_epoch == tc.patience);

    // test metrics are those of the retained checkpoint
    let mut model = build_model(&cfg, &t, &[], &bundle.normalization(), 99).unwrap();
    model.params.load_checkpoint(r.checkpoint.as_ref().unwrap()).unwrap();
    let preds = model.predict(&model.prepare_dataset(&bundle.test).unwrap()).unwrap();
    let labels = bundle.test.labels();
    let mse = preds.iter().zip(&labels).map(|(p, l)| (p - l) * (p - l)).sum::<f64>() / labels.len() as f64;
    assert_eq!(mse, r.test_mse);
}

#[test]
fn training_is_reproducible() {
    let t = synthetic_topology("g", 6, 2, &[1.0, 10.0], 6).unwrap();
    let bundle = build_datasets(&t, &DatasetSpec::new(Scheme::Ecmp, 16, 4)).unwrap();
    let tc = TrainConfig { epochs: 5, patience: 5, seeds: vec![3], ..TrainConfig::desk() };
    let cfg = ModelConfig::new(Architecture::Pew, 4, Representation::Raw, &t, 5e-3);
    let a = train(&cfg, &bundle, &tc, 3).unwrap();
    let b = train(&cfg, &bundle, &tc, 3).unwrap();
    assert_eq!(a.val_losses, b.val_losses);
    assert_eq!(a.test_mse.to_bits(), b.test_mse.to_bits());
    assert_eq!(a.checkpoint, b.checkpoint);
}

#[test]
fn files_round_trip_bit_exactly() {
    let t = synthetic_topology("g", 8, 4, &[1.0, 2.5, 10.0], 3).unwrap();
    let bundle = build_datasets(&t, &DatasetSpec::new(Scheme::Ecmp, 32, 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.write_dir(dir.path()).unwrap();
    let back = pewflow::traffic::DatasetBundle::read_dir(dir.path()).unwrap();
    for split in Split::ALL {
        assert_eq!(bundle.split(split).samples, back.split(split).samples);
    }
    assert_eq!(bundle.manifest, back.manifest);

    let cfg = ModelConfig::new(Architecture::Pew, 4, Representation::Sum, &t, 1e-3);
    let model = build_model(&cfg, &t, &[], &bundle.normalization(), 1).unwrap();
    let path = dir.path().join("ck.json");
    model.params.to_checkpoint().write(&path).unwrap();
    assert_eq!(pewflow::autodiff::Checkpoint::read(&path).unwrap(), model.params.to_checkpoint());
}
