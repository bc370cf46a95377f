//! Post-training behavior of the self-attention term.

use sqlgnn::data::{generate_synthetic, SynthConfig, Template};
use sqlgnn::grammar::{legal_actions, Action};
use sqlgnn::model::{ModelConfig, TrainConfig};
use sqlgnn::pipeline::fit;
use sqlgnn::schema::{fixtures::enrollment, SchemaItem};
use sqlgnn::tensor::Tape;

#[test]
fn decoded_semester_favors_the_bridge_table() {
    let data = generate_synthetic(&SynthConfig {
        seed: 21,
        train_schemas: 10,
        dev_schemas: 0,
        test_schemas: 0,
        per_schema: 10,
        templates: Template::ALL.to_vec(),
    })
    .unwrap();
    let cfg = ModelConfig {
        d_word: 16,
        d_node: 16,
        d_enc: 16,
        d_dec: 16,
        d_att: 16,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut m = fit(cfg, &tc, &data.train, &[], &data.schemas, 4).unwrap().outcome.model;

    let s = enrollment();
    let table = |name: &str| SchemaItem::Table(s.tables().iter().position(|t| t.name == name).unwrap());
    let gold = "SELECT semester.name FROM semester JOIN student_semester \
                ON semester.semester_id = student_semester.semester_id";
    let inst = m.prepare("students of each semester", &s, Some(gold)).unwrap();
    let net = m.net();
    let mut tape = Tape::new();
    let enc = net.encode(&mut tape, &inst).unwrap();
    let mut st = net.start(&mut tape, &enc).unwrap();
    let bridge = Action::Item(table("student_semester"));
    for &a in inst.gold.as_ref().unwrap() {
        if a == bridge {
            let legal = legal_actions(&st.derivation, &s).unwrap();
            let sc = net.scores(&mut tape, &enc, &st, &legal, &s).unwrap();
            let att = tape.value(sc.s_att.unwrap()).data().to_vec();
            let at = |it| att[legal.schema_items.iter().position(|x| *x == it).unwrap()];
            let (near, far) = (at(table("student_semester")), at(table("program")));
            assert!(near > far, "bridge {near} vs unrelated {far}");
            return;
        }
        st = net.advance(&mut tape, &enc, &st, a, &s).unwrap();
    }
    panic!("bridge table never decoded");
}
