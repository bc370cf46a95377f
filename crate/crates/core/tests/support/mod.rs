//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlgnn::gnn::{self, param_prefix, GnnEdges};
use sqlgnn::grammar::{apply_rule, legal_actions, Derivation};
use sqlgnn::linking::{link_distribution, relevance};
use sqlgnn::schema::{fixtures::schema, EdgeType, Schema, ValueType};
use sqlgnn::tensor::{ParamStore, Tape, Tensor};

pub type Mat = Vec<Vec<f64>>;

fn get(store: &ParamStore, name: &str) -> (Vec<usize>, Vec<f64>) {
    let v = store.value(store.id(name).unwrap());
    (v.shape().to_vec(), v.data().to_vec())
}

fn as_mat(store: &ParamStore, name: &str) -> Mat {
    let (s, d) = get(store, name);
    d.chunks(s[1]).map(|r| r.to_vec()).collect()
}

fn mat_vec(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense per-type adjacency `A[v][u]` = number of `(u, v)` edges.
pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Mat {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        a[v][u] += 1.0;
    }
    a
}

/// `Σ_type A_type·(H·W_typeᵀ) + deg_type·b_type`
pub fn dense_messages(store: &ParamStore, edges: &GnnEdges, h: &Mat) -> Mat {
    let n = edges.num_nodes;
    let d = h[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for (t, list) in &edges.typed {
        let p = param_prefix(*t);
        let w = as_mat(store, &format!("{p}.w"));
        let b = get(store, &format!("{p}.b")).1;
        let hw: Mat = h.iter().map(|r| mat_vec(&w, r)).collect();
        let a = adjacency(n, list);
        for v in 0..n {
            let deg: f64 = a[v].iter().sum();
            for k in 0..d {
                let s: f64 = (0..n).map(|u| a[v][u] * hw[u][k]).sum();
                out[v][k] += s + deg * b[k];
            }
        }
    }
    out
}

/// GRU with reset/update/candidate blocks; `h' = (1 − z)·n + z·h`.
pub fn gru(store: &ParamStore, prefix: &str, h: &[f64], x: &[f64]) -> Vec<f64> {
    let d = h.len();
    let w_ih = as_mat(store, &format!("{prefix}.w_ih"));
    let w_hh = as_mat(store, &format!("{prefix}.w_hh"));
    let b_ih = get(store, &format!("{prefix}.b_ih")).1;
    let b_hh = get(store, &format!("{prefix}.b_hh")).1;
    let gi: Vec<f64> = mat_vec(&w_ih, x).iter().zip(&b_ih).map(|(a, b)| a + b).collect();
    let gh: Vec<f64> = mat_vec(&w_hh, h).iter().zip(&b_hh).map(|(a, b)| a + b).collect();
    (0..d)
        .map(|k| {
            let r = sigmoid(gi[k] + gh[k]);
            let z = sigmoid(gi[d + k] + gh[d + k]);
            let n = (gi[2 * d + k] + r * gh[2 * d + k]).tanh();
            (1.0 - z) * n + z * h[k]
        })
        .collect()
}

pub fn dense_gnn(store: &ParamStore, edges: &GnnEdges, r: &Mat, rho: &[f64], steps: usize) -> Mat {
    let mut h: Mat = r
        .iter()
        .zip(rho)
        .map(|(row, &p)| row.iter().map(|x| x * p).collect())
        .collect();
    for _ in 0..steps {
        let a = dense_messages(store, edges, &h);
        h = h.iter().zip(&a).map(|(hv, av)| gru(store, "gnn.gru", hv, av)).collect();
    }
    h
}

/// Random typed multigraph with `n` nodes.
pub fn random_edges<R: Rng>(rng: &mut R, n: usize) -> GnnEdges {
    let typed = EdgeType::ALL
        .iter()
        .map(|&t| {
            let m = rng.gen_range(0..=2 * n);
            let list: Vec<(usize, usize)> = (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
            (t, Rc::new(list))
        })
        .collect();
    GnnEdges { num_nodes: n, typed }
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Undirected hop distances from `src`, ignoring edge types.
pub fn distances(edges: &GnnEdges, src: usize) -> Vec<usize> {
    let n = edges.num_nodes;
    let mut dist = vec![usize::MAX; n];
    dist[src] = 0;
    let mut frontier = vec![src];
    while let Some(next) = {
        let mut nx = Vec::new();
        for &u in &frontier {
            for (_, list) in &edges.typed {
                for &(a, b) in list.iter() {
                    for (x, y) in [(a, b), (b, a)] {
                        if x == u && dist[y] == usize::MAX {
                            dist[y] = dist[u] + 1;
                            nx.push(y);
                        }
                    }
                }
            }
        }
        (!nx.is_empty()).then_some(nx)
    } {
        frontier = next;
    }
    dist
}

pub fn gnn_store(d: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    gnn::init_params(&mut s, d, &mut rng).unwrap();
    // nonzero biases so degree terms are exercised
    for id in s.ids().collect::<Vec<_>>() {
        for x in s.value_mut(id).data_mut() {
            if *x == 0.0 {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
    }
    s
}

pub fn run_gnn(store: &ParamStore, edges: &GnnEdges, r: &Mat, rho: &[f64], steps: usize) -> Mat {
    let mut t = Tape::new();
    let d = r[0].len();
    let rv = t
        .constant(Tensor::matrix(r.len(), d, r.concat()).unwrap())
        .unwrap();
    let pv = t.constant(Tensor::vector(rho.to_vec())).unwrap();
    let phi = gnn::run_gnn(&mut t, store, edges, rv, pv, steps).unwrap();
    t.value(phi).data().chunks(d).map(|c| c.to_vec()).collect()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

const TYPES: [ValueType; 5] = [
    ValueType::Text,
    ValueType::Number,
    ValueType::Time,
    ValueType::Boolean,
    ValueType::Other,
];

pub fn random_link_schema<R: Rng>(rng: &mut R) -> Schema {
    let nt = rng.gen_range(1..4);
    let names: Vec<String> = (0..nt).map(|t| format!("t{t}")).collect();
    let cols: Vec<Vec<(String, ValueType, bool)>> = (0..nt)
        .map(|_| {
            (0..rng.gen_range(1..4))
                .map(|c| (format!("c{c}"), TYPES[rng.gen_range(0..5)], c == 0))
                .collect()
        })
        .collect();
    let col_refs: Vec<Vec<(&str, ValueType, bool)>> = cols
        .iter()
        .map(|cs| cs.iter().map(|(n, t, p)| (n.as_str(), *t, *p)).collect())
        .collect();
    let tables: Vec<(&str, &[(&str, ValueType, bool)])> = names
        .iter()
        .zip(&col_refs)
        .map(|(n, c)| (n.as_str(), c.as_slice()))
        .collect();
    schema("r", &tables, &[])
}

/// Checks a single random instance against a brute-force softmax per
/// (word, type) group with an explicit zero-score null element.
pub fn check_link_instance(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_link_schema(&mut rng);
    let n = s.num_items();
    let words = rng.gen_range(1..6);
    let scores: Vec<f64> = (0..n * words).map(|_| rng.gen_range(-8.0..8.0)).collect();
    let mut t = Tape::new();
    let sv = t.constant(Tensor::matrix(n, words, scores.clone()).unwrap()).unwrap();
    let lm = link_distribution(&mut t, sv, &s).unwrap();
    let rho = relevance(&mut t, lm.p_link).unwrap();
    let p = t.value(lm.p_link).clone();
    for (gi, (_, group)) in s.type_groups().iter().enumerate() {
        for i in 0..words {
            let total: f64 = group.iter().map(|&v| p.at(v, i)).sum::<f64>() + lm.null_mass[gi][i];
            assert!((total - 1.0).abs() < 1e-9, "seed {seed}: mass {total}");
            let z: f64 = 1.0 + group.iter().map(|&v| scores[v * words + i].exp()).sum::<f64>();
            for &v in group {
                assert!((p.at(v, i) - scores[v * words + i].exp() / z).abs() < 1e-12);
            }
        }
    }
    for v in 0..n {
        let m = p.row(v).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(t.value(rho).data()[v], m, "seed {seed}");
    }
}

/// Uniform random legal actions; past `soft_cap` steps always the first
/// legal action, which is the non-recursive alternative of every
/// nonterminal.
pub fn rollout<R: Rng>(rng: &mut R, schema: &Schema, soft_cap: usize) -> Derivation {
    let mut d = Derivation::new();
    while !d.is_complete() {
        let legal = legal_actions(&d, schema).unwrap();
        assert!(!legal.is_empty());
        let k = if d.len() > soft_cap { 0 } else { rng.gen_range(0..legal.len()) };
        d = apply_rule(&d, legal.action(k), schema).unwrap();
        assert!(d.len() < 10_000);
    }
    d
}
