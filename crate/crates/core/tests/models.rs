use std::rc::Rc;

use pewflow::autodiff::{gradcheck, objective, GradcheckOptions, ParamStore, Tape, Tensor};
use pewflow::models::{
    build_model, gat_layer, gcn_layer, pew_layer, sage_layer, Architecture, GatParams, GcnParams, MessageGraph,
    ModelConfig, PewParams, Representation, SageParams,
};
use pewflow::rng::rng_from_seed;
use pewflow::topology::{synthetic_topology, Edge, Node, Topology};
use pewflow::traffic::{Normalization, Sample};
use rand::Rng;

const NORM: Normalization = Normalization { max_demand: 1.0, max_capacity: 10.0 };

fn graph_of(t: &Topology) -> MessageGraph {
    MessageGraph::new(t, t.node_space(), t.edge_space(), &NORM).unwrap()
}

fn two_nodes() -> Topology {
    let nodes = vec![Node { id: 0, label: "a".into() }, Node { id: 1, label: "b".into() }];
    let edges = vec![
        Edge { id: 0, src: 0, dst: 1, weight: 1.0, capacity: 10.0 },
        Edge { id: 1, src: 1, dst: 0, weight: 1.0, capacity: 10.0 },
    ];
    Topology::new("pair", nodes, edges).unwrap()
}

fn ones(shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), vec![1.0; shape.iter().product()]).unwrap()
}

#[test]
fn pew_two_node_hand_computation() {
    let t = two_nodes();
    let mut g = graph_of(&t);
    g.edge_feature.iter_mut().for_each(|x| *x = 0.0);
    for strict in [false, true] {
        let tape = Tape::new();
        let h = tape.constant(Tensor::column(vec![1.0, 1.0]));
        let p = PewParams {
            w: tape.param(ones(&[4, 1, 1])),
            q: tape.param(ones(&[4, 1])),
            k: tape.param(ones(&[4, 1])),
            w1: tape.param(ones(&[1, 1])),
        };
        let out = pew_layer(h, &g, &p, 0.2, strict).unwrap();
        assert_eq!(out.zeta.unwrap().value().values, vec![0.5; 4]);
        let expected = if strict { 0.5 } else { 1.0 };
        assert_eq!(out.h.value().values, vec![expected; 2]);
    }
}

#[test]
fn isolated_node_keeps_its_own_message() {
    let g = MessageGraph {
        n_rows: 1,
        center: Rc::new(vec![0]),
        nbr: Rc::new(vec![0]),
        param_row: Rc::new(vec![0]),
        edge_feature: vec![0.0],
        is_self: vec![true],
        mean_capacity: vec![0.0],
        present: vec![1.0],
    };
    let tape = Tape::new();
    let h = tape.constant(Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap());
    let w = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
    let p = PewParams {
        w: tape.param(w),
        q: tape.param(ones(&[1, 2])),
        k: tape.param(ones(&[1, 2])),
        w1: tape.param(ones(&[1, 1])),
    };
    let out = pew_layer(h, &g, &p, 0.2, false).unwrap();
    assert_eq!(out.zeta.unwrap().value().values, vec![1.0]);
    // g = [0.5 * 1 + (-1) * (-3), 0.5 * 2 + (-1) * 0.5] = [3.5, 0.5]
    assert_eq!(out.h.value().values, vec![3.5, 0.5]);
}

#[test]
fn gat_single_neighbour_gets_full_weight() {
    // Node 1 has one incoming edge and its self loop; with identical scores
    // the weights are equal, and a node with only a self entry gets weight 1.
    let nodes = vec![Node { id: 0, label: "a".into() }, Node { id: 1, label: "b".into() }];
    let edges = vec![Edge { id: 0, src: 0, dst: 1, weight: 1.0, capacity: 10.0 }];
    let t = Topology::new("arc", nodes, edges).unwrap();
    let g = graph_of(&t);
    let tape = Tape::new();
    let h = tape.constant(Tensor::column(vec![1.0, 2.0]));
    let p = GatParams {
        w: tape.param(ones(&[1, 1])),
        a_l: tape.param(ones(&[1, 1])),
        a_r: tape.param(ones(&[1, 1])),
        w1: tape.param(ones(&[1, 1])),
    };
    let out = gat_layer(h, &g, &p, 0.2).unwrap();
    let z = out.zeta.unwrap().value().values;
    // entries: edge 0->1, self 0, self 1
    assert_eq!(z[1], 1.0);
    assert!((z[0] + z[2] - 1.0).abs() < 1e-12);
}

#[test]
fn gcn_single_node_is_dense_layer() {
    let t = Topology::new("one", vec![Node { id: 0, label: "a".into() }], vec![]).unwrap();
    let g = graph_of(&t);
    let tape = Tape::new();
    let h = tape.constant(Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap());
    let p = GcnParams {
        w: tape.param(Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 1.0]).unwrap()),
        b: tape.param(Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap()),
    };
    let out = gcn_layer(h, &g, &p).unwrap().h.value().values;
    let dense: [f64; 2] = [0.3 * 1.0 - 0.7 * 0.5 + 0.1, 0.3 * -2.0 - 0.7 * 1.0 + 0.2];
    assert!((out[0] - dense[0].max(0.0)).abs() < 1e-15);
    assert!((out[1] - dense[1].max(0.0)).abs() < 1e-15);
}

#[test]
fn pew_parameters_grow_linearly_with_edges() {
    let count = |m_links: usize| {
        let t = synthetic_topology("g", 8, m_links, &[1.0, 10.0], 1).unwrap();
        let mut cfg = ModelConfig::new(Architecture::Pew, 4, Representation::Sum, &t, 1e-3);
        cfg.layers = 2;
        let model = build_model(&cfg, &t, &[], &NORM, 0).unwrap();
        (t.n_edges(), model.params.n_scalars())
    };
    let (m1, p1) = count(2);
    let (m2, p2) = count(6);
    let (m3, p3) = count(10);
    // per-edge block: layer 0 is 2*4 + 2*4, layer 1 is 4*4 + 2*4
    let per_edge = (2 * 4 + 8) + (4 * 4 + 8);
    assert_eq!(p2 - p1, per_edge * (m2 - m1));
    assert_eq!(p3 - p2, per_edge * (m3 - m2));
}

fn random_store(seed: u64, shapes: &[(&str, Vec<usize>)]) -> ParamStore {
    let mut rng = rng_from_seed(seed);
    let mut p = ParamStore::new();
    for (name, shape) in shapes {
        p.add_glorot(*name, shape, &mut rng).unwrap();
    }
    p
}

#[test]
fn pew_is_equivariant_under_relabeling() {
    let t = synthetic_topology("g", 7, 4, &[1.0, 2.5, 10.0], 3).unwrap();
    let perm = [3usize, 0, 6, 1, 5, 2, 4];
    let nodes = (0..7).map(|v| Node { id: perm[v], label: format!("p{v}") }).collect();
    let edges =
        t.edges().iter().map(|e| Edge { src: perm[e.src], dst: perm[e.dst], ..e.clone() }).collect();
    let tp = Topology::new("perm", nodes, edges).unwrap();
    let (n, m, d) = (7, t.n_edges(), 3);
    let base = random_store(5, &[("w", vec![m + n, 2, d]), ("q", vec![m + n, d]), ("k", vec![m + n, d]), ("w1", vec![1, 1])]);
    let mut permuted = base.clone();
    for name in ["w", "q", "k"] {
        let src = base.get(name).unwrap().clone();
        let row = src.row_len();
        let dst = permuted.get_mut(name).unwrap();
        for v in 0..n {
            let (a, b) = ((m + v) * row, (m + perm[v]) * row);
            dst.values[b..b + row].copy_from_slice(&src.values[a..a + row]);
        }
    }
    let mut rng = rng_from_seed(8);
    let x: Vec<f64> = (0..n * 2).map(|_| rng.random::<f64>()).collect();
    let mut xp = vec![0.0; n * 2];
    for v in 0..n {
        xp[perm[v] * 2..perm[v] * 2 + 2].copy_from_slice(&x[v * 2..v * 2 + 2]);
    }
    let run = |t: &Topology, store: &ParamStore, x: &[f64]| {
        let tape = Tape::new();
        let v = store.bind(&tape);
        let h = tape.constant(Tensor::matrix(n, 2, x.to_vec()).unwrap());
        let p = PewParams { w: v[0], q: v[1], k: v[2], w1: v[3] };
        pew_layer(h, &graph_of(t), &p, 0.2, false).unwrap().h.value().values
    };
    let out = run(&t, &base, &x);
    let outp = run(&tp, &permuted, &xp);
    for v in 0..n {
        for j in 0..d {
            assert!((out[v * d + j] - outp[perm[v] * d + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn every_layer_passes_gradcheck() {
    let t = synthetic_topology("g", 6, 3, &[1.0, 2.5, 10.0], 11).unwrap();
    let g = graph_of(&t);
    let (n, m, din, d) = (6, t.n_edges(), 3, 4);
    let mut rng = rng_from_seed(2);
    let x = Tensor::matrix(n, din, (0..n * din).map(|_| rng.random::<f64>()).collect()).unwrap();
    let target: Vec<f64> = (0..n * d).map(|i| (i % 5) as f64 * 0.1).collect();
    let opts = GradcheckOptions::default();

    let pew = random_store(1, &[("w", vec![m + n, din, d]), ("q", vec![m + n, d]), ("k", vec![m + n, d]), ("w1", vec![1, 1])]);
    for strict in [false, true] {
        let r = gradcheck(
            &pew,
            objective(|tape, v| {
                let h = tape.constant(x.clone());
                let p = PewParams { w: v[0], q: v[1], k: v[2], w1: v[3] };
                pew_layer(h, &g, &p, 0.2, strict)?.h.mse_loss(&target)
            }),
            opts,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4 && r.checked >= 100, "pew strict={strict}: {r:?}");
    }

    let gat = random_store(2, &[("w", vec![din, d]), ("a_l", vec![d, 1]), ("a_r", vec![d, 1]), ("w1", vec![1, 1])]);
    let r = gradcheck(
        &gat,
        objective(|tape, v| {
            let p = GatParams { w: v[0], a_l: v[1], a_r: v[2], w1: v[3] };
            gat_layer(tape.constant(x.clone()), &g, &p, 0.2)?.h.mse_loss(&target)
        }),
        opts,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "gat: {r:?}");

    let gcn = random_store(3, &[("w", vec![din, d]), ("b", vec![1, d])]);
    let r = gradcheck(
        &gcn,
        objective(|tape, v| gcn_layer(tape.constant(x.clone()), &g, &GcnParams { w: v[0], b: v[1] })?.h.mse_loss(&target)),
        opts,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "gcn: {r:?}");

    let sage = random_store(4, &[("ws", vec![din, d]), ("wn", vec![din, d]), ("b", vec![1, d])]);
    let r = gradcheck(
        &sage,
        objective(|tape, v| {
            let p = SageParams { w_self: v[0], w_neigh: v[1], b: v[2] };
            sage_layer(tape.constant(x.clone()), &g, &p)?.h.mse_loss(&target)
        }),
        opts,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "sage: {r:?}");
}

#[test]
fn full_models_pass_gradcheck() {
    let t = synthetic_topology("g", 6, 3, &[1.0, 2.5, 10.0], 12).unwrap();
    let mut rng = rng_from_seed(4);
    let samples: Vec<Sample> = (0..3)
        .map(|i| Sample {
            variation: None,
            demands: (0..36).map(|k| if k % 7 == 0 { 0.0 } else { rng.random::<f64>() }).collect(),
            label: 0.5 + 0.1 * i as f64,
        })
        .collect();
    for arch in Architecture::COMPARED {
        let cfg = ModelConfig::new(arch, arch.widths(Representation::Sum)[0], Representation::Sum, &t, 1e-3);
        let model = build_model(&cfg, &t, &[], &NORM, 9).unwrap();
        let prepared: Vec<_> = samples.iter().map(|s| model.prepare(s).unwrap()).collect();
        let refs: Vec<_> = prepared.iter().collect();
        let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
        let r = gradcheck(
            &model.params,
            objective(|tape, v| model.forward(tape, v, &refs)?.mse_loss(&labels)),
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{arch}: {r:?}");
    }
}

#[test]
fn variation_outside_key_space_is_rejected() {
    let t = two_nodes();
    let nodes = (0..3).map(|id| Node { id, label: String::new() }).collect();
    let edges = vec![
        Edge { id: 0, src: 0, dst: 1, weight: 1.0, capacity: 1.0 },
        Edge { id: 1, src: 1, dst: 2, weight: 1.0, capacity: 1.0 },
    ];
    let bigger = Topology::new("big", nodes, edges).unwrap();
    let cfg = ModelConfig::new(Architecture::Pew, 4, Representation::Sum, &t, 1e-3);
    assert!(build_model(&cfg, &t, &[bigger], &NORM, 0).is_err());
}
