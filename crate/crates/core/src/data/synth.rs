//! Templated synthetic question/query data over random schemas.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{preprocess_query, DataError, Example};
use crate::schema::{ColumnDoc, Schema, SchemaDoc, TableDoc};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Projection,
    Filter,
    Aggregation,
    GroupCount,
    Superlative,
    SingleJoin,
    DoubleJoin,
    NotIn,
}

impl Template {
    pub const ALL: [Template; 8] = [
        Template::Projection,
        Template::Filter,
        Template::Aggregation,
        Template::GroupCount,
        Template::Superlative,
        Template::SingleJoin,
        Template::DoubleJoin,
        Template::NotIn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Projection => "projection",
            Template::Filter => "filter",
            Template::Aggregation => "aggregation",
            Template::GroupCount => "group_count",
            Template::Superlative => "superlative",
            Template::SingleJoin => "single_join",
            Template::DoubleJoin => "double_join",
            Template::NotIn => "not_in",
        }
    }

    pub fn parse(s: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_schemas: usize,
    pub dev_schemas: usize,
    pub test_schemas: usize,
    pub per_schema: usize,
    pub templates: Vec<Template>,
}

impl SynthConfig {
    /// Splits `n` schemas roughly 70/10/20 into train/dev/test, train first.
    pub fn with_total(seed: u64, n: usize, per_schema: usize) -> Self {
        let test = (n as f64 * 0.2).round() as usize;
        let dev = (n as f64 * 0.1).round() as usize;
        let (dev, test) = if n <= 2 { (0, n.saturating_sub(1)) } else { (dev, test) };
        SynthConfig {
            seed,
            train_schemas: n - dev - test,
            dev_schemas: dev,
            test_schemas: test,
            per_schema,
            templates: Template::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub schemas: Vec<Schema>,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

const ENTITIES: &[&str] = &[
    "student", "course", "teacher", "department", "employee", "project", "customer", "product", "supplier", "city",
    "country", "team", "player", "album", "artist", "song", "book", "author", "publisher", "movie", "director",
    "actor", "hospital", "doctor", "patient", "ship", "captain", "airport", "flight", "airline", "store", "company",
    "museum", "visitor", "festival", "club", "member", "restaurant", "chef", "school", "singer", "concert", "shop",
    "manager", "farm", "vehicle", "driver", "station", "library", "editor",
];

const TEXT_ATTRS: &[&str] = &[
    "name", "title", "city", "country", "address", "email", "phone", "color", "genre", "category", "status",
    "language", "nationality", "brand", "location", "gender", "first_name", "last_name", "website",
];

const NUM_ATTRS: &[&str] = &[
    "age", "price", "salary", "budget", "rating", "capacity", "population", "height", "weight", "score", "year",
    "amount", "quantity", "duration", "rank", "num_employees", "founded_year",
];

const BRIDGE_ATTRS: &[&str] = &["hours", "grade", "share", "since_year", "role_level"];

const TEXT_VALUES: &[&str] = &[
    "paris", "red", "john", "smith", "blue", "london", "rock", "active", "english", "alpha", "berlin", "green",
    "jazz", "tokyo", "maria",
];

const SHOW: &[&str] = &["list", "show", "give", "return", "find", "what are"];
const ALL: &[&str] = &["all", "every", "the"];
const MORE: &[&str] = &["greater than", "more than", "above", "over"];
const LESS: &[&str] = &["less than", "below", "under", "smaller than"];
const HIGH: &[&str] = &["highest", "largest", "greatest", "biggest"];
const LOW: &[&str] = &["lowest", "smallest", "least"];
const COUNT: &[&str] = &["how many", "count the", "what is the number of", "find the number of"];
const RELATED: &[&str] = &["related to", "associated with", "linked to", "connected to"];

#[derive(Clone, Debug)]
struct Entity {
    table: String,
    text: Vec<String>,
    num: Vec<String>,
}

#[derive(Clone, Debug)]
enum Link {
    /// `child.{parent}_id` references `parent.{parent}_id`.
    Direct { child: usize, parent: usize },
    /// `bridge` holds foreign keys to both `a` and `b`.
    Bridge { bridge: String, a: usize, b: usize },
}

#[derive(Clone, Debug)]
struct Draft {
    db_id: String,
    entities: Vec<Entity>,
    links: Vec<Link>,
    /// `(table, [(column, type, primary)])`
    tables: Vec<(String, Vec<(String, &'static str, bool)>)>,
    /// `((table, column), (table, column))`
    fks: Vec<((String, String), (String, String))>,
}

fn pk(e: &Entity) -> String {
    format!("{}_id", e.table)
}

fn words(name: &str) -> String {
    name.replace('_', " ")
}

fn plural(w: &str) -> String {
    let w = words(w);
    let b = w.as_bytes();
    if w.ends_with('y') && b.len() > 1 && !b"aeiou".contains(&b[b.len() - 2]) {
        format!("{}ies", &w[..w.len() - 1])
    } else if w.ends_with('s') || w.ends_with("sh") || w.ends_with("ch") || w.ends_with('x') {
        format!("{w}es")
    } else {
        format!("{w}s")
    }
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).expect("nonempty word list")
}

fn draft_schema<R: Rng>(rng: &mut R, db_id: String) -> Draft {
    let n_ent = rng.gen_range(2..=4);
    let names: Vec<&str> = ENTITIES.choose_multiple(rng, n_ent).copied().collect();
    // attribute names are unique within a schema
    let mut used: HashSet<String> = HashSet::new();
    let mut entities: Vec<Entity> = names
        .iter()
        .map(|&t| {
            let n_attr = rng.gen_range(1..=3);
            let mut attrs: Vec<(String, bool)> = Vec::new();
            // at least one text attribute so projections always have a target
            while attrs.len() < n_attr + 1 {
                let numeric = !attrs.is_empty() && rng.gen_bool(0.5);
                let a = pick(rng, if numeric { NUM_ATTRS } else { TEXT_ATTRS }).to_string();
                if used.insert(a.clone()) {
                    attrs.push((a, !numeric));
                }
            }
            Entity {
                table: t.to_string(),
                text: attrs.iter().filter(|a| a.1).map(|a| a.0.clone()).collect(),
                num: attrs.iter().filter(|a| !a.1).map(|a| a.0.clone()).collect(),
            }
        })
        .collect();
    let mut links = Vec::new();
    let mut n_tables = n_ent;
    for i in 1..n_ent {
        let j = rng.gen_range(0..i);
        if n_tables < 6 && rng.gen_bool(0.4) {
            let bridge = format!("{}_{}", entities[j].table, entities[i].table);
            n_tables += 1;
            links.push(Link::Bridge { bridge, a: j, b: i });
        } else {
            let (child, parent) = if rng.gen_bool(0.5) { (i, j) } else { (j, i) };
            links.push(Link::Direct { child, parent });
        }
    }
    // trim attributes so every table stays within six columns
    for (k, e) in entities.iter_mut().enumerate() {
        let fks = links
            .iter()
            .filter(|l| matches!(l, Link::Direct { child, .. } if *child == k))
            .count();
        while 1 + fks + e.text.len() + e.num.len() > 6 {
            if !e.num.is_empty() {
                e.num.pop();
            } else {
                e.text.pop();
            }
        }
    }
    let mut tables = Vec::new();
    let mut fks = Vec::new();
    for (k, e) in entities.iter().enumerate() {
        let mut cols = vec![(pk(e), "number", true)];
        for l in &links {
            if let Link::Direct { child, parent } = l {
                if *child == k {
                    let p = &entities[*parent];
                    cols.push((pk(p), "number", false));
                    fks.push(((e.table.clone(), pk(p)), (p.table.clone(), pk(p))));
                }
            }
        }
        cols.extend(e.text.iter().map(|a| (a.clone(), "text", false)));
        cols.extend(e.num.iter().map(|a| (a.clone(), "number", false)));
        let mut rest = cols.split_off(1);
        rest.shuffle(rng);
        cols.extend(rest);
        tables.push((e.table.clone(), cols));
    }
    for l in &links {
        if let Link::Bridge { bridge, a, b } = l {
            let (ea, eb) = (&entities[*a], &entities[*b]);
            let mut cols = vec![(pk(ea), "number", false), (pk(eb), "number", false)];
            if rng.gen_bool(0.5) {
                let a = pick(rng, BRIDGE_ATTRS).to_string();
                if used.insert(a.clone()) {
                    cols.push((a, "number", false));
                }
            }
            fks.push(((bridge.clone(), pk(ea)), (ea.table.clone(), pk(ea))));
            fks.push(((bridge.clone(), pk(eb)), (eb.table.clone(), pk(eb))));
            tables.push((bridge.clone(), cols));
        }
    }
    Draft {
        db_id,
        entities,
        links,
        tables,
        fks,
    }
}

impl Draft {
    fn doc(&self) -> SchemaDoc {
        let mut ids = std::collections::HashMap::new();
        let mut next = 0;
        let tables = self
            .tables
            .iter()
            .map(|(t, cols)| TableDoc {
                name: t.clone(),
                columns: cols
                    .iter()
                    .map(|(c, ty, p)| {
                        ids.insert((t.clone(), c.clone()), next);
                        next += 1;
                        ColumnDoc {
                            name: c.clone(),
                            value_type: ty.to_string(),
                            primary: *p,
                        }
                    })
                    .collect(),
            })
            .collect();
        SchemaDoc {
            db_id: self.db_id.clone(),
            tables,
            foreign_keys: self.fks.iter().map(|(a, b)| (ids[a], ids[b])).collect(),
        }
    }
}

fn value<R: Rng>(rng: &mut R, numeric: bool) -> (String, String) {
    if numeric {
        let n = rng.gen_range(1..100).to_string();
        (n.clone(), n)
    } else {
        let v = pick(rng, TEXT_VALUES);
        (v.to_string(), format!("'{v}'"))
    }
}

/// `(words in the question, SQL comparison)` for a filter on `col`.
fn condition<R: Rng>(rng: &mut R, col: &str, attr: &str, numeric: bool) -> (String, String) {
    let (q, lit) = value(rng, numeric);
    if numeric {
        match rng.gen_range(0..3) {
            0 => (format!("{} {} {q}", words(attr), pick(rng, MORE)), format!("{col} > {lit}")),
            1 => (format!("{} {} {q}", words(attr), pick(rng, LESS)), format!("{col} < {lit}")),
            _ => (format!("{} {q}", words(attr)), format!("{col} = {lit}")),
        }
    } else {
        (format!("{} {q}", words(attr)), format!("{col} = {lit}"))
    }
}

fn any_attr<R: Rng>(rng: &mut R, e: &Entity) -> (String, bool) {
    let n = e.text.len() + e.num.len();
    let k = rng.gen_range(0..n);
    if k < e.text.len() {
        (e.text[k].clone(), false)
    } else {
        (e.num[k - e.text.len()].clone(), true)
    }
}

fn instantiate<R: Rng>(rng: &mut R, d: &Draft, t: Template) -> Option<(String, String)> {
    let ents = &d.entities;
    match t {
        Template::Projection => {
            let e = ents.choose(rng)?;
            let (a, _) = any_attr(rng, e);
            let show = pick(rng, SHOW);
            if rng.gen_bool(0.3) {
                let (b, _) = any_attr(rng, e);
                if b != a {
                    return Some((
                        format!("{show} the {} and {} of {} {}", words(&a), words(&b), pick(rng, ALL), plural(&e.table)),
                        format!("SELECT {0}.{a} , {0}.{b} FROM {0}", e.table),
                    ));
                }
            }
            Some((
                format!("{show} the {} of {} {}", words(&a), pick(rng, ALL), plural(&e.table)),
                format!("SELECT {0}.{a} FROM {0}", e.table),
            ))
        }
        Template::Filter => {
            let e = ents.choose(rng)?;
            let (a, _) = any_attr(rng, e);
            let (c, numeric) = any_attr(rng, e);
            if a == c {
                return None;
            }
            let (cq, csql) = condition(rng, &format!("{}.{c}", e.table), &c, numeric);
            let joiner = if rng.gen_bool(0.5) { "having" } else { "with" };
            Some((
                format!("{} the {} of {} {joiner} {cq}", pick(rng, SHOW), words(&a), plural(&e.table)),
                format!("SELECT {0}.{a} FROM {0} WHERE {csql}", e.table),
            ))
        }
        Template::Aggregation => {
            let e = ents.choose(rng)?;
            let t = &e.table;
            if e.num.is_empty() || rng.gen_bool(0.3) {
                return Some((
                    format!("{} {} are there", pick(rng, COUNT), plural(t)),
                    format!("SELECT COUNT ( * ) FROM {t}"),
                ));
            }
            let n = e.num.choose(rng)?;
            let (f, w) = match rng.gen_range(0..4) {
                0 => ("AVG", pick(rng, &["average", "mean"])),
                1 => ("MAX", pick(rng, &["maximum", "highest", "largest"])),
                2 => ("MIN", pick(rng, &["minimum", "lowest", "smallest"])),
                _ => ("SUM", pick(rng, &["total", "sum of"])),
            };
            Some((
                format!("what is the {w} {} of {} {}", words(n), pick(rng, ALL), plural(t)),
                format!("SELECT {f} ( {t}.{n} ) FROM {t}"),
            ))
        }
        Template::GroupCount => {
            let e = ents.choose(rng)?;
            let a = e.text.choose(rng)?;
            let t = &e.table;
            Some((
                format!("{} {} are there for each {}", pick(rng, COUNT), plural(t), words(a)),
                format!("SELECT {t}.{a} , COUNT ( * ) FROM {t} GROUP BY {t}.{a}"),
            ))
        }
        Template::Superlative => {
            let e = ents.choose(rng)?;
            let n = e.num.choose(rng)?;
            let a = e.text.choose(rng)?;
            let t = &e.table;
            Some(match rng.gen_range(0..4) {
                0 => (
                    format!("what is the {} of the {} with the {} {}", words(a), words(t), pick(rng, HIGH), words(n)),
                    format!("SELECT {t}.{a} FROM {t} ORDER BY {t}.{n} DESC LIMIT 1"),
                ),
                1 => (
                    format!("what is the {} of the {} with the {} {}", words(a), words(t), pick(rng, LOW), words(n)),
                    format!("SELECT {t}.{a} FROM {t} ORDER BY {t}.{n} ASC LIMIT 1"),
                ),
                2 => (
                    format!("{} the {} of {} sorted by {}", pick(rng, SHOW), words(a), plural(t), words(n)),
                    format!("SELECT {t}.{a} FROM {t} ORDER BY {t}.{n} ASC"),
                ),
                _ => (
                    format!("{} the {} of {} in descending order of {}", pick(rng, SHOW), words(a), plural(t), words(n)),
                    format!("SELECT {t}.{a} FROM {t} ORDER BY {t}.{n} DESC"),
                ),
            })
        }
        Template::SingleJoin => {
            let direct: Vec<(usize, usize)> = d
                .links
                .iter()
                .filter_map(|l| match l {
                    Link::Direct { child, parent } => Some((*child, *parent)),
                    _ => None,
                })
                .collect();
            let &(c, p) = direct.choose(rng)?;
            let (ec, ep) = (&ents[c], &ents[p]);
            let (ct, pt, key) = (&ec.table, &ep.table, pk(ep));
            let from = format!("FROM {ct} JOIN {pt} ON {ct}.{key} = {pt}.{key}");
            let (ca, _) = any_attr(rng, ec);
            let (pa, numeric) = any_attr(rng, ep);
            Some(match rng.gen_range(0..3) {
                0 => (
                    format!("{} the {} of each {} and the {} of its {}", pick(rng, SHOW), words(&ca), words(ct), words(&pa), words(pt)),
                    format!("SELECT {ct}.{ca} , {pt}.{pa} {from}"),
                ),
                1 => {
                    let (cq, csql) = condition(rng, &format!("{pt}.{pa}"), &pa, numeric);
                    (
                        format!("{} the {} of {} whose {} has {cq}", pick(rng, SHOW), words(&ca), plural(ct), words(pt)),
                        format!("SELECT {ct}.{ca} {from} WHERE {csql}"),
                    )
                }
                _ => {
                    let ta = ep.text.choose(rng)?;
                    (
                        format!("{} {} are there for each {} {}", pick(rng, COUNT), plural(ct), words(pt), words(ta)),
                        format!("SELECT {pt}.{ta} , COUNT ( * ) {from} GROUP BY {pt}.{ta}"),
                    )
                }
            })
        }
        Template::DoubleJoin => {
            // two hops: through a bridge table, or along two direct links
            let mut paths: Vec<(usize, usize, String)> = Vec::new();
            for l in &d.links {
                if let Link::Bridge { bridge, a, b } = l {
                    let (ea, eb, bt) = (&ents[*a], &ents[*b], bridge);
                    let j = |x: &Entity, y: &Entity| {
                        format!(
                            "FROM {x} JOIN {bt} ON {x}.{kx} = {bt}.{kx} JOIN {y} ON {bt}.{ky} = {y}.{ky}",
                            x = x.table,
                            y = y.table,
                            kx = pk(x),
                            ky = pk(y)
                        )
                    };
                    paths.push((*a, *b, j(ea, eb)));
                    paths.push((*b, *a, j(eb, ea)));
                }
            }
            for l1 in &d.links {
                for l2 in &d.links {
                    if let (Link::Direct { child: c, parent: p }, Link::Direct { child: c2, parent: g }) = (l1, l2) {
                        if c2 == p && g != c {
                            let (ec, ep, eg) = (&ents[*c], &ents[*p], &ents[*g]);
                            paths.push((
                                *c,
                                *g,
                                format!(
                                    "FROM {ct} JOIN {pt} ON {ct}.{kp} = {pt}.{kp} JOIN {gt} ON {pt}.{kg} = {gt}.{kg}",
                                    ct = ec.table,
                                    pt = ep.table,
                                    gt = eg.table,
                                    kp = pk(ep),
                                    kg = pk(eg)
                                ),
                            ));
                        }
                    }
                }
            }
            let (x, y, from) = paths.choose(rng)?.clone();
            let (ex, ey) = (&ents[x], &ents[y]);
            let (xa, _) = any_attr(rng, ex);
            let (ya, numeric) = any_attr(rng, ey);
            let (cq, csql) = condition(rng, &format!("{}.{ya}", ey.table), &ya, numeric);
            Some((
                format!(
                    "{} the {} of {} {} {} with {cq}",
                    pick(rng, SHOW),
                    words(&xa),
                    plural(&ex.table),
                    pick(rng, RELATED),
                    plural(&ey.table)
                ),
                format!("SELECT {}.{xa} {from} WHERE {csql}", ex.table),
            ))
        }
        Template::NotIn => {
            // (entity, table holding references to it, referencing column, what the question names)
            let mut opts: Vec<(usize, String, String)> = Vec::new();
            for l in &d.links {
                match l {
                    Link::Direct { child, parent } => {
                        opts.push((*parent, ents[*child].table.clone(), plural(&ents[*child].table)));
                    }
                    Link::Bridge { bridge, a, b } => {
                        opts.push((*a, bridge.clone(), plural(&ents[*b].table)));
                        opts.push((*b, bridge.clone(), plural(&ents[*a].table)));
                    }
                }
            }
            let (p, holder, named) = opts.choose(rng)?.clone();
            let ep = &ents[p];
            let (pa, _) = any_attr(rng, ep);
            let (pt, key) = (&ep.table, pk(ep));
            let q = if rng.gen_bool(0.5) {
                format!("{} the {} of {} without any {named}", pick(rng, SHOW), words(&pa), plural(pt))
            } else {
                format!("which {} have no {named} ? give their {}", plural(pt), words(&pa))
            };
            Some((
                q,
                format!("SELECT {pt}.{pa} FROM {pt} WHERE {pt}.{key} NOT IN ( SELECT {holder}.{key} FROM {holder} )"),
            ))
        }
    }
}

fn examples_for<R: Rng>(rng: &mut R, d: &Draft, schema: &Schema, cfg: &SynthConfig) -> Result<Vec<Example>, DataError> {
    let mut out: Vec<Example> = Vec::with_capacity(cfg.per_schema);
    let mut attempts = 0;
    while out.len() < cfg.per_schema {
        attempts += 1;
        let t = *cfg.templates.choose(rng).expect("nonempty template set");
        let Some((question, raw)) = instantiate(rng, d, t) else {
            if attempts > 1000 {
                break;
            }
            continue;
        };
        let sql = preprocess_query(&raw, schema)?;
        let ex = Example {
            question,
            sql,
            db_id: d.db_id.clone(),
        };
        if attempts <= 200 && out.iter().any(|e| e.question == ex.question) {
            continue;
        }
        out.push(ex);
    }
    Ok(out)
}

/// Random schemas and templated examples, split by schema into disjoint
/// train, dev and test sets. Identical configurations give identical data.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData, DataError> {
    if cfg.templates.is_empty() {
        return Err(DataError::Parse {
            path: "<synthetic>".into(),
            line: 0,
            msg: "empty template set".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = SyntheticData {
        schemas: Vec::new(),
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    let splits = [
        ("train", cfg.train_schemas),
        ("dev", cfg.dev_schemas),
        ("test", cfg.test_schemas),
    ];
    for (split, n) in splits {
        for k in 0..n {
            let draft = draft_schema(&mut rng, format!("synth_{split}_{k:03}"));
            let schema = Schema::from_doc(&draft.doc())?;
            let ex = examples_for(&mut rng, &draft, &schema, cfg)?;
            match split {
                "train" => data.train.extend(ex),
                "dev" => data.dev.extend(ex),
                _ => data.test.extend(ex),
            }
            data.schemas.push(schema);
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{join_badness, split_single_multi, Split};

    fn cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            train_schemas: 12,
            dev_schemas: 2,
            test_schemas: 4,
            per_schema: 10,
            templates: Template::ALL.to_vec(),
        }
    }

    #[test]
    fn plurals() {
        assert_eq!(plural("city"), "cities");
        assert_eq!(plural("day"), "days");
        assert_eq!(plural("class"), "classes");
        assert_eq!(plural("first_name"), "first names");
    }

    #[test]
    fn generation_is_deterministic_and_split_by_schema() {
        let a = generate_synthetic(&cfg(3)).unwrap();
        let b = generate_synthetic(&cfg(3)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.len(), 120);
        assert_eq!(a.test.len(), 40);
        let tr: HashSet<_> = a.train.iter().map(|e| &e.db_id).collect();
        let te: HashSet<_> = a.test.iter().map(|e| &e.db_id).collect();
        assert!(tr.is_disjoint(&te));
        assert_ne!(generate_synthetic(&cfg(4)).unwrap().train, a.train);
    }

    #[test]
    fn gold_queries_are_canonical_and_join_cleanly() {
        for seed in 0..5 {
            let d = generate_synthetic(&cfg(seed)).unwrap();
            let mut multi = 0;
            for ex in d.train.iter().chain(&d.dev).chain(&d.test) {
                let s = d.schemas.iter().find(|s| s.db_id == ex.db_id).unwrap();
                assert_eq!(preprocess_query(&ex.sql, s).unwrap(), ex.sql);
                crate::grammar::sql_to_derivation(&ex.sql, s).unwrap();
                assert!(join_badness(&ex.sql, s).unwrap().ok(), "{}", ex.sql);
                multi += usize::from(split_single_multi(&ex.sql, s).unwrap() == Split::Multi);
                for c in s.columns() {
                    assert!(s.table(c.table).columns.len() <= 6);
                }
                assert!((2..=6).contains(&s.tables().len()));
            }
            assert!(multi > 20, "{multi}");
        }
    }

    #[test]
    fn attribute_names_are_unique_per_schema() {
        let d = generate_synthetic(&cfg(8)).unwrap();
        for s in &d.schemas {
            let mut seen = HashSet::new();
            for c in s.columns().iter().filter(|c| !c.name.ends_with("_id")) {
                assert!(seen.insert(c.name.clone()), "{} repeats {}", s.db_id, c.name);
            }
        }
    }

    #[test]
    fn single_template_single_example() {
        let c = SynthConfig {
            seed: 1,
            train_schemas: 1,
            dev_schemas: 0,
            test_schemas: 0,
            per_schema: 1,
            templates: vec![Template::Projection],
        };
        let a = generate_synthetic(&c).unwrap();
        assert_eq!(a.train.len(), 1);
        assert_eq!(a.train, generate_synthetic(&c).unwrap().train);
        assert!(a.train[0].sql.starts_with("SELECT"));
    }
}
