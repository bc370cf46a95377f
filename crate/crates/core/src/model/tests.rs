use super::*;
use crate::gnn::{reset_run_gnn_calls, run_gnn_calls};
use crate::schema::fixtures::{enrollment, schema};
use crate::schema::ValueType::*;
use crate::tensor::gradcheck::check_params;
use crate::tensor::AdamConfig;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d_word: 4,
        d_node: 4,
        d_enc: 3,
        d_dec: 4,
        d_att: 3,
        gnn_steps: 2,
        beam_size: 4,
        max_steps: 200,
        ablations: Ablations::default(),
    }
}

fn two_tables() -> Schema {
    schema(
        "pets",
        &[
            ("owner", &[("owner_id", Number, true), ("name", Text, false)]),
            ("pet", &[("pet_id", Number, true), ("owner_id", Number, false), ("age", Number, false)]),
        ],
        &[("pet.owner_id", "owner.owner_id")],
    )
}

fn model_for(cfg: ModelConfig, s: &Schema, questions: &[&str]) -> Model {
    let vocab = Model::build_vocab(questions.iter().copied(), &[s]);
    Model::new(cfg, vocab, 11).unwrap()
}

#[test]
fn ablation_flags_validate() {
    let mut a = Ablations::default();
    a.set("no_gnn", true).unwrap();
    a.set("only_self_attend", true).unwrap();
    assert!(a.validate().is_err());
    assert!(Ablations::default().set("bogus", true).is_err());
    for n in Ablations::NAMES {
        let mut a = Ablations::default();
        a.set(n, true).unwrap();
        a.validate().unwrap();
    }
}

#[test]
fn zero_parameters_give_uniform_steps() {
    let s = enrollment();
    let mut m = model_for(tiny_cfg(), &s, &["student names"]);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        m.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let inst = m.prepare("student names", &s, Some("SELECT student.name FROM student")).unwrap();
    let mut want = 0.0;
    let mut d = Derivation::new();
    for &a in inst.gold.as_ref().unwrap() {
        want += (legal_actions(&d, &s).unwrap().len() as f64).ln();
        d.apply(a, &s).unwrap();
    }
    let got = m.loss_value(&inst).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn steps_are_normalized_and_history_tracks_items() {
    let s = enrollment();
    let m = model_for(tiny_cfg(), &s, &["which students take a course"]);
    let mut mm = m.clone();
    let inst = mm
        .prepare(
            "which students take a course",
            &s,
            Some("SELECT student.name FROM student JOIN student_semester ON student.student_id = student_semester.student_id"),
        )
        .unwrap();
    let net = m.net();
    let mut tape = Tape::new();
    let enc = net.encode(&mut tape, &inst).unwrap();
    let mut st = net.start(&mut tape, &enc).unwrap();
    let mut items = 0;
    for &a in inst.gold.as_ref().unwrap() {
        let legal = legal_actions(&st.derivation, &s).unwrap();
        let sc = net.scores(&mut tape, &enc, &st, &legal, &s).unwrap();
        let p: f64 = tape.value(sc.log_probs).data().iter().map(|x| x.exp()).sum();
        assert!((p - 1.0).abs() < 1e-9);
        assert_eq!(tape.value(sc.log_probs).len(), legal.len());
        assert_eq!(sc.s_att.is_some(), !legal.schema_items.is_empty() && items > 0);
        let o = st.o;
        st = net.advance(&mut tape, &enc, &st, a, &s).unwrap();
        if let Action::Item(it) = a {
            items += 1;
            assert_eq!(st.history.len(), items);
            assert_eq!(*st.history.last().unwrap(), (o, s.node_of(it)));
        }
    }
    assert!(st.derivation.is_complete());
}

fn gradcheck(cfg: ModelConfig) {
    let s = two_tables();
    let mut m = model_for(cfg, &s, &["pet age"]);
    let inst = m
        .prepare(
            "pet age",
            &s,
            Some("SELECT owner.name FROM owner JOIN pet ON owner.owner_id = pet.owner_id WHERE pet.age > 3"),
        )
        .unwrap();
    let cfg = m.config;
    let report = check_params(&mut m.store, |tape, store| {
        Net::new(&cfg, store).loss(tape, &inst).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => panic!("{other}"),
        })
    })
    .unwrap();
    assert!(report.passed(), "{:?}", report.params.iter().filter(|p| p.failures > 0).collect::<Vec<_>>());
    assert!(report.coords() > 500);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    gradcheck(tiny_cfg());
}

#[test]
fn ablated_model_gradients_match_finite_differences() {
    for flag in ["no_gnn", "only_self_attend", "no_relevance", "oracle_relevance"] {
        let mut cfg = tiny_cfg();
        cfg.ablations.set(flag, true).unwrap();
        gradcheck(cfg);
    }
}

#[test]
fn no_gnn_never_runs_the_gnn() {
    let s = enrollment();
    let mut cfg = tiny_cfg();
    cfg.ablations.no_gnn = true;
    let mut m = model_for(cfg, &s, &["names"]);
    assert!(m.store.id("gnn.gru.w_ih").is_err());
    let inst = m.prepare("names", &s, Some("SELECT student.name FROM student")).unwrap();
    reset_run_gnn_calls();
    m.loss_value(&inst).unwrap();
    m.beam(&inst, 3).unwrap();
    assert_eq!(run_gnn_calls(), 0);
    let mut full = model_for(tiny_cfg(), &s, &["names"]);
    let inst = full.prepare("names", &s, Some("SELECT student.name FROM student")).unwrap();
    full.loss_value(&inst).unwrap();
    assert_eq!(run_gnn_calls(), 1);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let s = two_tables();
    let mut m = model_for(tiny_cfg(), &s, &["owner names"]);
    let inst = m.prepare("owner names", &s, Some("SELECT owner.name FROM owner")).unwrap();
    let before = m.store.clone();
    let cfg = TrainConfig {
        epochs: 3,
        adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let out = train(m, std::slice::from_ref(&inst), &[], &[], &cfg).unwrap();
    for id in before.ids() {
        assert_eq!(before.value(id), out.model.store.value(id));
    }
    let losses: Vec<f64> = out.log.iter().filter_map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|&l| l == losses[0]));
}

#[test]
fn single_example_is_memorized() {
    let s = two_tables();
    let cfg = ModelConfig {
        d_word: 16,
        d_node: 16,
        d_enc: 16,
        d_dec: 16,
        d_att: 16,
        ..tiny_cfg()
    };
    let mut m = model_for(cfg, &s, &["names of owners whose pet age is over 3"]);
    let gold = "SELECT owner.name FROM owner JOIN pet ON owner.owner_id = pet.owner_id WHERE pet.age > 'value'";
    let inst = m.prepare("names of owners whose pet age is over 3", &s, Some(gold)).unwrap();
    let cfg = TrainConfig {
        epochs: 1500,
        adam: AdamConfig { lr: 0.005, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let out = train(m, std::slice::from_ref(&inst), &[], &[], &cfg).unwrap();
    let last = out.log.last().unwrap().train_loss.unwrap();
    assert!(last < 0.01, "{last}");
    assert!(out.model.loss_value(&inst).unwrap() < 0.01);
    assert_eq!(out.model.greedy(&inst).unwrap().unwrap().sql, gold);
}

#[test]
fn beam_contains_greedy_and_is_sorted() {
    let s = enrollment();
    let mut m = model_for(tiny_cfg(), &s, &["names of students"]);
    // all-zero parameters make every step uniform, so greedy takes the
    // first legal action and terminates
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        m.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let inst = m.prepare("names of students", &s, None).unwrap();
    let g = m.greedy(&inst).unwrap().unwrap();
    let b = m.beam(&inst, 5).unwrap();
    assert!(!b.is_empty() && b.len() <= 5);
    assert!(b[0].log_prob >= g.log_prob);
    assert!(b.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
    let one = m.beam(&inst, 1).unwrap();
    assert_eq!(one[0], g);
    for d in &b {
        assert_eq!(grammar::sql_to_derivation(&d.sql, &s).unwrap().actions, d.actions);
    }
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let s = enrollment();
    let m = model_for(tiny_cfg(), &s, &["names"]);
    let mut buf = Vec::new();
    m.save(&mut buf, 9).unwrap();
    let (back, seed) = Model::load(&buf[..]).unwrap();
    assert_eq!(seed, 9);
    assert_eq!(back.config, m.config);
    assert_eq!(back.vocab.words(), m.vocab.words());
    for id in m.store.ids() {
        assert_eq!(m.store.value(id), back.store.value(back.store.id(m.store.name(id)).unwrap()));
    }
    let mut other = m.clone();
    other.config.d_att = 5;
    let mut buf2 = Vec::new();
    other.save(&mut buf2, 9).unwrap();
    let err = Model::load(&buf2[..]).unwrap_err().to_string();
    assert!(err.contains("dec.sim.w"), "{err}");
}

