//! Record store with one ordered index per field.
//!
//! Updates and searches run as generated MSL programs. An insert or delete
//! starts one index thread per index from a single mswitch; each thread
//! prints the index operation it performs and the store applies exactly
//! those operations. A composite search checks each candidate with a fused
//! `if`, one comparison thread per key field joined by one switch.
//!
//! Records are read as JSON lines, one flat object per line with an integer
//! `id` and integer fields:
//!
//! ```text
//! {"id": 1, "dept": 3, "city": 7, "age": 40}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::lang::{compile, CompileError, CompileOptions, Mode};
use crate::shape::MachineShape;
use crate::vm::{Machine, RunMetrics, RunOutcome, Value, VmError};
use crate::Word;

pub type Id = Word;
pub type Record = BTreeMap<String, Word>;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("record {0} already exists")]
    Duplicate(Id),
    #[error("no record {0}")]
    Missing(Id),
    #[error("field `{0}` is not indexed")]
    Unindexed(String),
    #[error("record {id} lacks field `{field}`")]
    MissingField { id: Id, field: String },
    #[error("value {0} does not fit a 16-bit literal")]
    Range(Word),
    #[error("record line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("generated program misbehaved: {0}")]
    Program(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Insert,
    Delete,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DbState {
    pub records: BTreeMap<Id, Record>,
    /// field -> value -> ids
    pub indexes: BTreeMap<String, BTreeMap<Word, BTreeSet<Id>>>,
}

fn check_range(v: Word) -> Result<(), DbError> {
    i16::try_from(v).map(|_| ()).map_err(|_| DbError::Range(v))
}

impl DbState {
    pub fn new<S: Into<String>>(fields: impl IntoIterator<Item = S>) -> Self {
        DbState { records: BTreeMap::new(), indexes: fields.into_iter().map(|f| (f.into(), BTreeMap::new())).collect() }
    }

    pub fn fields(&self) -> Vec<String> {
        self.indexes.keys().cloned().collect()
    }

    /// Every record sits in every index exactly once, under its own value,
    /// and every index entry names a live record.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (field, index) in &self.indexes {
            let mut seen = BTreeSet::new();
            for (value, ids) in index {
                if ids.is_empty() {
                    return Err(format!("{field}: empty entry for {value}"));
                }
                for id in ids {
                    let rec = self.records.get(id).ok_or(format!("{field}: dangling id {id}"))?;
                    if rec.get(field) != Some(value) {
                        return Err(format!("{field}: id {id} filed under {value}"));
                    }
                    if !seen.insert(*id) {
                        return Err(format!("{field}: id {id} appears twice"));
                    }
                }
            }
            if seen.len() != self.records.len() {
                return Err(format!("{field}: {} of {} records indexed", seen.len(), self.records.len()));
            }
        }
        Ok(())
    }

    /// Ids whose `field` equals `value`, straight from the index.
    pub fn lookup(&self, field: &str, value: Word) -> Result<BTreeSet<Id>, DbError> {
        let index = self.indexes.get(field).ok_or_else(|| DbError::Unindexed(field.into()))?;
        Ok(index.get(&value).cloned().unwrap_or_default())
    }

    /// Reads JSON-lines records into a store indexed on `fields`.
    pub fn load_jsonl(text: &str, fields: &[String], shape: &MachineShape) -> Result<DbState, DbError> {
        let mut db = DbState::new(fields.iter().cloned());
        for (id, rec) in parse_jsonl(text)? {
            db = db_update(&db, Op::Insert, id, &rec, shape)?.0;
        }
        Ok(db)
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<(Id, Record)>, DbError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| DbError::Parse { line, msg };
        if raw.trim().is_empty() {
            continue;
        }
        let obj: BTreeMap<String, serde_json::Value> = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let mut rec = Record::new();
        let mut id = None;
        for (k, v) in obj {
            let v = v.as_i64().ok_or_else(|| err(format!("`{k}` is not an integer")))?;
            if k == "id" {
                id = Some(v);
            } else {
                rec.insert(k, v);
            }
        }
        out.push((id.ok_or_else(|| err("missing `id`".into()))?, rec));
    }
    Ok(out)
}

pub fn to_jsonl(db: &DbState) -> String {
    let mut out = String::new();
    for (id, rec) in &db.records {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), (*id).into());
        for (k, v) in rec {
            obj.insert(k.clone(), (*v).into());
        }
        writeln!(out, "{}", serde_json::Value::Object(obj)).unwrap();
    }
    out
}

fn run_msl(src: &str, shape: &MachineShape) -> Result<crate::vm::RunResult, DbError> {
    let c = compile(src, &CompileOptions::new(Mode::MSwitch, shape.clone()))?;
    let r = Machine::load(c.program, shape)?.run()?;
    if r.outcome == RunOutcome::Halted || matches!(r.outcome, RunOutcome::Stalled { .. }) {
        return Err(DbError::Program(format!("{:?}", r.outcome)));
    }
    Ok(r)
}

/// MSL for one update: a K-way mswitch over the index threads.
pub fn update_source(db: &DbState, op: Op, id: Id, record: &Record) -> String {
    let verb = match op {
        Op::Insert => "insert",
        Op::Delete => "delete",
    };
    let fields = db.fields();
    let mut src = String::from("declare mswitch update;\nupdate(");
    let targets: Vec<String> =
        fields.iter().enumerate().map(|(k, f)| format!("index-{k}[{id}, {}]", record[f])).collect();
    src.push_str(&targets.join(", "));
    src.push_str(");\n");
    for k in 0..fields.len() {
        writeln!(src, "proc index-{k}[id, v] {{ print(\"{verb}\", {k}, v, id) }}").unwrap();
    }
    src
}

/// Inserts or deletes one record. The store is left untouched on error.
pub fn db_update(
    db: &DbState,
    op: Op,
    id: Id,
    record: &Record,
    shape: &MachineShape,
) -> Result<(DbState, RunMetrics), DbError> {
    let record = match op {
        Op::Insert if db.records.contains_key(&id) => return Err(DbError::Duplicate(id)),
        Op::Insert => record.clone(),
        Op::Delete => db.records.get(&id).cloned().ok_or(DbError::Missing(id))?,
    };
    check_range(id)?;
    for f in db.indexes.keys() {
        let v = *record.get(f).ok_or_else(|| DbError::MissingField { id, field: f.clone() })?;
        check_range(v)?;
    }
    let fields = db.fields();
    if fields.is_empty() {
        let mut next = db.clone();
        match op {
            Op::Insert => next.records.insert(id, record),
            Op::Delete => next.records.remove(&id),
        };
        return Ok((next, RunMetrics::default()));
    }

    let r = run_msl(&update_source(db, op, id, &record), shape)?;
    let mut per_thread: BTreeMap<usize, Vec<Value>> = BTreeMap::new();
    for o in &r.output {
        per_thread.entry(o.thread).or_default().push(o.value.clone());
    }
    let mut next = db.clone();
    let mut touched = BTreeSet::new();
    for ops in per_thread.values() {
        let [Value::Str(verb), Value::Int(k), Value::Int(v), Value::Int(rid)] = ops.as_slice() else {
            return Err(DbError::Program(format!("unexpected output {ops:?}")));
        };
        let field = fields.get(*k as usize).ok_or_else(|| DbError::Program(format!("index {k}")))?;
        let index = next.indexes.get_mut(field).expect("known field");
        match verb.as_str() {
            "insert" => {
                index.entry(*v).or_default().insert(*rid);
            }
            "delete" => {
                if let Some(ids) = index.get_mut(v) {
                    ids.remove(rid);
                    if ids.is_empty() {
                        index.remove(v);
                    }
                }
            }
            other => return Err(DbError::Program(format!("unknown verb {other}"))),
        }
        touched.insert(*k);
    }
    if touched.len() != fields.len() {
        return Err(DbError::Program(format!("{} of {} indexes updated", touched.len(), fields.len())));
    }
    match op {
        Op::Insert => next.records.insert(id, record),
        Op::Delete => next.records.remove(&id),
    };
    Ok((next, r.metrics))
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub ids: BTreeSet<Id>,
    /// Candidates checked: the match count of the most selective field.
    pub candidates: usize,
    pub metrics: RunMetrics,
}

/// MSL that checks every candidate against the whole key.
pub fn search_source(db: &DbState, key: &BTreeMap<String, Word>, candidates: &BTreeSet<Id>) -> String {
    let mut src = String::new();
    for id in candidates {
        let rec = &db.records[id];
        let conds: Vec<String> = key.iter().map(|(f, v)| format!("({} == {v})", rec[f])).collect();
        writeln!(src, "if ({}) then print({id})", conds.join(" and ")).unwrap();
    }
    src
}

/// Ids whose fields equal every `(field, value)` in `key`. An empty key
/// matches every record without running anything.
pub fn db_search_composite(
    db: &DbState,
    key: &BTreeMap<String, Word>,
    shape: &MachineShape,
) -> Result<SearchResult, DbError> {
    let mut best: Option<BTreeSet<Id>> = None;
    for (f, v) in key {
        let hits = db.lookup(f, *v)?;
        check_range(*v)?;
        if best.as_ref().is_none_or(|b| hits.len() < b.len()) {
            best = Some(hits);
        }
    }
    let Some(candidates) = best else {
        return Ok(SearchResult {
            ids: db.records.keys().copied().collect(),
            candidates: 0,
            metrics: RunMetrics::default(),
        });
    };
    if candidates.is_empty() {
        return Ok(SearchResult { ids: BTreeSet::new(), candidates: 0, metrics: RunMetrics::default() });
    }
    let r = run_msl(&search_source(db, key, &candidates), shape)?;
    let mut ids = BTreeSet::new();
    for v in r.values() {
        match v {
            Value::Int(id) => ids.insert(id),
            other => return Err(DbError::Program(format!("unexpected output {other}"))),
        };
    }
    Ok(SearchResult { ids, candidates: candidates.len(), metrics: r.metrics })
}
