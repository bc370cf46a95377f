//! Database schemas and their typed graph view.
//!
//! Graph nodes are the schema items, tables first and then columns, both in
//! declaration order. Three edge sets connect them: table–column membership
//! in both directions, and foreign-key edges (column pair plus table pair)
//! along and against the key direction.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("{db_id}: malformed schema document: {msg}")]
    Malformed { db_id: String, msg: String },
    #[error("{db_id}: duplicate table name `{name}`")]
    DuplicateTable { db_id: String, name: String },
    #[error("{db_id}: duplicate column `{table}.{column}`")]
    DuplicateColumn {
        db_id: String,
        table: String,
        column: String,
    },
    #[error("{db_id}: table `{table}` has no columns")]
    EmptyTable { db_id: String, table: String },
    #[error("{db_id}: unknown value type `{value_type}` for column `{column}`")]
    UnknownValueType {
        db_id: String,
        column: String,
        value_type: String,
    },
    #[error("{db_id}: foreign key references missing column id {column_id}")]
    DanglingForeignKey { db_id: String, column_id: usize },
    #[error("{db_id}: foreign key {from} -> {to} stays within table `{table}`")]
    SelfReferentialForeignKey {
        db_id: String,
        from: usize,
        to: usize,
        table: String,
    },
    #[error("node index {index} out of range ({len} nodes)")]
    NodeOutOfRange { index: usize, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Text,
    Number,
    Time,
    Boolean,
    Other,
}

impl FromStr for ValueType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "text" => ValueType::Text,
            "number" => ValueType::Number,
            "time" => ValueType::Time,
            "boolean" => ValueType::Boolean,
            "other" => ValueType::Other,
            other => return Err(other.to_string()),
        })
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::Text => "text",
            ValueType::Number => "number",
            ValueType::Time => "time",
            ValueType::Boolean => "boolean",
            ValueType::Other => "other",
        };
        f.write_str(s)
    }
}

/// Type tag of a schema item. The linking distribution normalizes within
/// each type, and the model learns one embedding per type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItemType {
    Table,
    TextColumn,
    NumberColumn,
    TimeColumn,
    BooleanColumn,
    OtherColumn,
}

impl ItemType {
    pub const COUNT: usize = 6;
    pub const ALL: [ItemType; 6] = [
        ItemType::Table,
        ItemType::TextColumn,
        ItemType::NumberColumn,
        ItemType::TimeColumn,
        ItemType::BooleanColumn,
        ItemType::OtherColumn,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of_column(v: ValueType) -> Self {
        match v {
            ValueType::Text => ItemType::TextColumn,
            ValueType::Number => ItemType::NumberColumn,
            ValueType::Time => ItemType::TimeColumn,
            ValueType::Boolean => ItemType::BooleanColumn,
            ValueType::Other => ItemType::OtherColumn,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub id: usize,
    pub name: String,
    pub table: usize,
    pub value_type: ValueType,
    pub is_primary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    /// Global column ids, in declaration order.
    pub columns: Vec<usize>,
}

/// A table or a column, by index into the schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemaItem {
    Table(usize),
    Column(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub db_id: String,
    tables: Vec<Table>,
    columns: Vec<Column>,
    foreign_keys: Vec<(usize, usize)>,
}

/// Serialized form of a schema, one JSON document per database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub db_id: String,
    pub tables: Vec<TableDoc>,
    /// `(foreign-key column id, referenced column id)` pairs.
    #[serde(default)]
    pub foreign_keys: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDoc {
    pub name: String,
    pub columns: Vec<ColumnDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDoc {
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: String,
    #[serde(default)]
    pub primary: bool,
}

impl Schema {
    /// Parses and validates one schema document.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDoc = serde_json::from_str(text).map_err(|e| {
            let db_id = serde_json::from_str::<serde_json::Value>(text)
                .ok()
                .and_then(|v| v.get("db_id").and_then(|d| d.as_str()).map(String::from))
                .unwrap_or_else(|| "?".into());
            SchemaError::Malformed {
                db_id,
                msg: e.to_string(),
            }
        })?;
        Self::from_doc(&doc)
    }

    pub fn from_doc(doc: &SchemaDoc) -> Result<Self, SchemaError> {
        let db_id = doc.db_id.clone();
        if doc.tables.is_empty() {
            return Err(SchemaError::Malformed {
                db_id,
                msg: "no tables".into(),
            });
        }
        let mut tables = Vec::new();
        let mut columns = Vec::new();
        let mut table_names = HashSet::new();
        for (ti, t) in doc.tables.iter().enumerate() {
            let name = t.name.to_lowercase();
            if !table_names.insert(name.clone()) {
                return Err(SchemaError::DuplicateTable { db_id, name });
            }
            if t.columns.is_empty() {
                return Err(SchemaError::EmptyTable { db_id, table: name });
            }
            let mut col_names = HashSet::new();
            let mut ids = Vec::new();
            for c in &t.columns {
                let cname = c.name.to_lowercase();
                if !col_names.insert(cname.clone()) {
                    return Err(SchemaError::DuplicateColumn {
                        db_id,
                        table: name,
                        column: cname,
                    });
                }
                let value_type = c.value_type.parse().map_err(|v| SchemaError::UnknownValueType {
                    db_id: db_id.clone(),
                    column: format!("{name}.{cname}"),
                    value_type: v,
                })?;
                ids.push(columns.len());
                columns.push(Column {
                    id: columns.len(),
                    name: cname,
                    table: ti,
                    value_type,
                    is_primary: c.primary,
                });
            }
            tables.push(Table { name, columns: ids });
        }
        for &(from, to) in &doc.foreign_keys {
            for id in [from, to] {
                if id >= columns.len() {
                    return Err(SchemaError::DanglingForeignKey { db_id, column_id: id });
                }
            }
            if columns[from].table == columns[to].table {
                return Err(SchemaError::SelfReferentialForeignKey {
                    db_id,
                    from,
                    to,
                    table: tables[columns[from].table].name.clone(),
                });
            }
        }
        Ok(Schema {
            db_id,
            tables,
            columns,
            foreign_keys: doc.foreign_keys.clone(),
        })
    }

    pub fn to_doc(&self) -> SchemaDoc {
        SchemaDoc {
            db_id: self.db_id.clone(),
            tables: self
                .tables
                .iter()
                .map(|t| TableDoc {
                    name: t.name.clone(),
                    columns: t
                        .columns
                        .iter()
                        .map(|&c| {
                            let c = &self.columns[c];
                            ColumnDoc {
                                name: c.name.clone(),
                                value_type: c.value_type.to_string(),
                                primary: c.is_primary,
                            }
                        })
                        .collect(),
                })
                .collect(),
            foreign_keys: self.foreign_keys.clone(),
        }
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn foreign_keys(&self) -> &[(usize, usize)] {
        &self.foreign_keys
    }

    pub fn table(&self, i: usize) -> &Table {
        &self.tables[i]
    }

    pub fn column(&self, id: usize) -> &Column {
        &self.columns[id]
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        let name = name.to_lowercase();
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn column_in(&self, table: usize, name: &str) -> Option<usize> {
        let name = name.to_lowercase();
        self.tables[table]
            .columns
            .iter()
            .copied()
            .find(|&c| self.columns[c].name == name)
    }

    /// `table.column`
    pub fn qualified(&self, column: usize) -> String {
        let c = &self.columns[column];
        format!("{}.{}", self.tables[c.table].name, c.name)
    }

    /// Whether the two columns form a foreign-key pair in either direction.
    pub fn fk_linked(&self, a: usize, b: usize) -> bool {
        self.foreign_keys
            .iter()
            .any(|&(f, p)| (f, p) == (a, b) || (f, p) == (b, a))
    }

    pub fn num_items(&self) -> usize {
        self.tables.len() + self.columns.len()
    }

    /// Graph node index of an item.
    pub fn node_of(&self, item: SchemaItem) -> usize {
        match item {
            SchemaItem::Table(t) => t,
            SchemaItem::Column(c) => self.tables.len() + c,
        }
    }

    pub fn item_at(&self, node: usize) -> SchemaItem {
        if node < self.tables.len() {
            SchemaItem::Table(node)
        } else {
            SchemaItem::Column(node - self.tables.len())
        }
    }

    pub fn item_type(&self, item: SchemaItem) -> ItemType {
        match item {
            SchemaItem::Table(_) => ItemType::Table,
            SchemaItem::Column(c) => ItemType::of_column(self.columns[c].value_type),
        }
    }

    pub fn item_name(&self, item: SchemaItem) -> &str {
        match item {
            SchemaItem::Table(t) => &self.tables[t].name,
            SchemaItem::Column(c) => &self.columns[c].name,
        }
    }

    /// Node indices grouped by item type, in `ItemType::ALL` order. Empty
    /// groups are omitted.
    pub fn type_groups(&self) -> Vec<(ItemType, Vec<usize>)> {
        let mut groups: Vec<(ItemType, Vec<usize>)> = ItemType::ALL.iter().map(|&t| (t, Vec::new())).collect();
        for node in 0..self.num_items() {
            let ty = self.item_type(self.item_at(node));
            groups[ty.index()].1.push(node);
        }
        groups.retain(|(_, g)| !g.is_empty());
        groups
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeType {
    /// table ↔ column membership
    Membership,
    /// along a foreign key (foreign → primary)
    Forward,
    /// against a foreign key
    Backward,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Forward, EdgeType::Backward, EdgeType::Membership];

    pub fn tag(self) -> &'static str {
        match self {
            EdgeType::Membership => "bidir",
            EdgeType::Forward => "fwd",
            EdgeType::Backward => "back",
        }
    }
}

/// Typed directed multigraph over schema items.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaGraph {
    pub nodes: Vec<SchemaItem>,
    pub edges_bidir: Vec<(usize, usize)>,
    pub edges_fwd: Vec<(usize, usize)>,
    pub edges_back: Vec<(usize, usize)>,
}

impl SchemaGraph {
    pub fn build(schema: &Schema) -> Self {
        let nt = schema.tables().len();
        let mut nodes: Vec<SchemaItem> = (0..nt).map(SchemaItem::Table).collect();
        nodes.extend((0..schema.columns().len()).map(SchemaItem::Column));

        let mut edges_bidir = Vec::with_capacity(2 * schema.columns().len());
        for c in schema.columns() {
            let cn = nt + c.id;
            edges_bidir.push((cn, c.table));
            edges_bidir.push((c.table, cn));
        }
        let mut edges_fwd = Vec::new();
        let mut edges_back = Vec::new();
        for &(f, p) in schema.foreign_keys() {
            let (tf, tp) = (schema.column(f).table, schema.column(p).table);
            edges_fwd.push((nt + f, nt + p));
            edges_fwd.push((tf, tp));
            edges_back.push((nt + p, nt + f));
            edges_back.push((tp, tf));
        }
        SchemaGraph {
            nodes,
            edges_bidir,
            edges_fwd,
            edges_back,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self, ty: EdgeType) -> &[(usize, usize)] {
        match ty {
            EdgeType::Membership => &self.edges_bidir,
            EdgeType::Forward => &self.edges_fwd,
            EdgeType::Backward => &self.edges_back,
        }
    }

    /// Sources of the edges of type `ty` that end at `node`, in edge order,
    /// with multiplicity.
    pub fn incoming(&self, node: usize, ty: EdgeType) -> Result<Vec<usize>, SchemaError> {
        if node >= self.nodes.len() {
            return Err(SchemaError::NodeOutOfRange {
                index: node,
                len: self.nodes.len(),
            });
        }
        Ok(self
            .edges(ty)
            .iter()
            .filter(|&&(_, d)| d == node)
            .map(|&(s, _)| s)
            .collect())
    }
}

/// Test and example helpers.
pub mod fixtures {
    use super::*;

    /// Builds a schema from `(table, [(column, type, primary)])` lists and
    /// foreign keys given as `("table.column", "table.column")`.
    pub fn schema(db_id: &str, tables: &[(&str, &[(&str, ValueType, bool)])], fks: &[(&str, &str)]) -> Schema {
        let mut doc = SchemaDoc {
            db_id: db_id.into(),
            tables: tables
                .iter()
                .map(|(name, cols)| TableDoc {
                    name: name.to_string(),
                    columns: cols
                        .iter()
                        .map(|(c, t, p)| ColumnDoc {
                            name: c.to_string(),
                            value_type: t.to_string(),
                            primary: *p,
                        })
                        .collect(),
                })
                .collect(),
            foreign_keys: vec![],
        };
        let find = |q: &str| -> usize {
            let (t, c) = q.split_once('.').expect("qualified name");
            let mut id = 0;
            for (tn, cols) in tables {
                for (cn, _, _) in cols.iter() {
                    if *tn == t && *cn == c {
                        return id;
                    }
                    id += 1;
                }
            }
            panic!("no column {q}");
        };
        doc.foreign_keys = fks.iter().map(|(a, b)| (find(a), find(b))).collect();
        Schema::from_doc(&doc).expect("valid fixture schema")
    }

    /// The four-table enrollment schema: `student_semester` bridges
    /// `student` and `semester`; `program` links to `student`.
    pub fn enrollment() -> Schema {
        use ValueType::*;
        schema(
            "college",
            &[
                (
                    "student",
                    &[
                        ("student_id", Number, true),
                        ("name", Text, false),
                        ("program_id", Number, false),
                    ],
                ),
                (
                    "student_semester",
                    &[("student_id", Number, false), ("semester_id", Number, false)],
                ),
                ("semester", &[("semester_id", Number, true), ("name", Text, false)]),
                ("program", &[("program_id", Number, true), ("name", Text, false)]),
            ],
            &[
                ("student_semester.student_id", "student.student_id"),
                ("student_semester.semester_id", "semester.semester_id"),
                ("student.program_id", "program.program_id"),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn loads_single_table_document() {
        let s = Schema::from_json(
            r#"{"db_id":"s","tables":[{"name":"student","columns":[
                {"name":"student_id","type":"number","primary":true},
                {"name":"age","type":"number"}]}],"foreign_keys":[]}"#,
        )
        .unwrap();
        assert_eq!(s.tables().len(), 1);
        assert_eq!(s.columns().len(), 2);
        assert!(s.foreign_keys().is_empty());
    }

    #[test]
    fn enrollment_schema_shape() {
        let s = enrollment();
        assert_eq!(s.tables().len(), 4);
        // two bridge keys plus the declared program link
        assert_eq!(s.foreign_keys().len(), 3);
    }

    #[test]
    fn dangling_foreign_key_names_the_column() {
        let err = Schema::from_json(
            r#"{"db_id":"d","tables":[{"name":"a","columns":[{"name":"x","type":"number"}]}],
                "foreign_keys":[[0, 7]]}"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            SchemaError::DanglingForeignKey {
                db_id: "d".into(),
                column_id: 7
            }
        );
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn validation_errors() {
        let dup = r#"{"db_id":"d","tables":[{"name":"A","columns":[{"name":"x","type":"text"}]},
                     {"name":"a","columns":[{"name":"y","type":"text"}]}]}"#;
        assert!(matches!(Schema::from_json(dup), Err(SchemaError::DuplicateTable { .. })));
        let dupcol = r#"{"db_id":"d","tables":[{"name":"a","columns":[{"name":"x","type":"text"},{"name":"X","type":"number"}]}]}"#;
        assert!(matches!(Schema::from_json(dupcol), Err(SchemaError::DuplicateColumn { .. })));
        let ty = r#"{"db_id":"d","tables":[{"name":"a","columns":[{"name":"x","type":"blob"}]}]}"#;
        let err = Schema::from_json(ty).unwrap_err();
        assert!(err.to_string().contains("blob") && err.to_string().contains("d:"));
        let selfref = r#"{"db_id":"d","tables":[{"name":"a","columns":[{"name":"x","type":"number"},{"name":"y","type":"number"}]}],"foreign_keys":[[0,1]]}"#;
        assert!(matches!(
            Schema::from_json(selfref),
            Err(SchemaError::SelfReferentialForeignKey { .. })
        ));
        let empty = r#"{"db_id":"d","tables":[{"name":"a","columns":[]}]}"#;
        assert!(matches!(Schema::from_json(empty), Err(SchemaError::EmptyTable { .. })));
    }

    #[test]
    fn single_table_graph() {
        use ValueType::*;
        let s = schema("s", &[("student", &[("student_id", Number, true), ("age", Number, false)])], &[]);
        let g = SchemaGraph::build(&s);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges_bidir.len(), 4);
        assert!(g.edges_fwd.is_empty() && g.edges_back.is_empty());
        assert_eq!(g.incoming(1, EdgeType::Membership).unwrap(), vec![0]);
        assert_eq!(g.incoming(0, EdgeType::Membership).unwrap(), vec![1, 2]);
        assert!(g.incoming(3, EdgeType::Membership).is_err());
    }

    #[test]
    fn one_foreign_key_adds_column_and_table_edges() {
        use ValueType::*;
        let s = schema(
            "s",
            &[
                ("a", &[("id", Number, true)]),
                ("b", &[("id", Number, true), ("a_id", Number, false)]),
            ],
            &[("b.a_id", "a.id")],
        );
        let g = SchemaGraph::build(&s);
        // nodes: a=0, b=1, a.id=2, b.id=3, b.a_id=4
        assert_eq!(g.edges_fwd, vec![(4, 2), (1, 0)]);
        assert_eq!(g.edges_back, vec![(2, 4), (0, 1)]);
    }

    #[test]
    fn bridge_table_points_into_both_ends() {
        let s = enrollment();
        let g = SchemaGraph::build(&s);
        let bridge = s.table_index("student_semester").unwrap();
        let targets = g.incoming(bridge, EdgeType::Backward).unwrap();
        // tables the bridge holds keys into send it backward messages
        assert_eq!(targets, vec![s.table_index("student").unwrap(), s.table_index("semester").unwrap()]);
        let fwd_sources: Vec<usize> = g
            .edges_fwd
            .iter()
            .filter(|&&(src, _)| src == bridge)
            .map(|&(_, d)| d)
            .collect();
        assert_eq!(fwd_sources, targets);
    }

    #[test]
    fn doc_round_trip() {
        let s = enrollment();
        let json = serde_json::to_string(&s.to_doc()).unwrap();
        assert_eq!(Schema::from_json(&json).unwrap(), s);
    }
}
