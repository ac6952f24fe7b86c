//! Label spaces, documents and dataset splits, plus JSONL/CSV ingestion.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered class names; class index `k` is `class_names[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    class_names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let class_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if class_names.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(Error::InvalidLabelSpace("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidLabelSpace(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        Ok(Self { class_names })
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, k: usize) -> &str {
        &self.class_names[k]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub doc: Document,
    pub gold: usize,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold: usize) -> Self {
        Self {
            doc: Document::new(id, text),
            gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unlabeled,
    Seed,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// `.csv` files are CSV, everything else is treated as JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

/// The unlabeled pool, the labeled seed set and an optional test split.
///
/// Unlabeled records may still carry a gold label in the input file. Those are
/// kept in `hidden_gold` for evaluation and are never shown to the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: LabelSpace,
    pub unlabeled: Vec<Document>,
    pub seed: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub hidden_gold: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn new(
        labels: LabelSpace,
        unlabeled: Vec<Document>,
        seed: Vec<LabeledExample>,
        test: Vec<LabeledExample>,
    ) -> Result<Self> {
        let ds = Self {
            labels,
            unlabeled,
            seed,
            test,
            hidden_gold: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_hidden_gold(mut self, gold: BTreeMap<String, usize>) -> Result<Self> {
        self.hidden_gold = gold;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unlabeled.is_empty() {
            return Err(Error::InvalidDataset("unlabeled split is empty".into()));
        }
        if self.seed.is_empty() {
            return Err(Error::InvalidDataset("seed split is empty".into()));
        }
        let c = self.labels.len();
        let mut ids = HashSet::new();
        let all_ids = self
            .unlabeled
            .iter()
            .map(|d| &d.id)
            .chain(self.seed.iter().map(|e| &e.doc.id))
            .chain(self.test.iter().map(|e| &e.doc.id));
        for id in all_ids {
            if !ids.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for ex in self.seed.iter().chain(&self.test) {
            if ex.gold >= c {
                return Err(Error::InvalidDataset(format!(
                    "gold label {} out of range for {} classes",
                    ex.gold, c
                )));
            }
        }
        for (id, &gold) in &self.hidden_gold {
            if gold >= c {
                return Err(Error::InvalidDataset(format!(
                    "hidden gold label {gold} of {id:?} out of range"
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Gold examples for the unlabeled pool, in pool order, when every pool
    /// document has a hidden gold label.
    pub fn unlabeled_gold(&self) -> Option<Vec<LabeledExample>> {
        self.unlabeled
            .iter()
            .map(|d| {
                self.hidden_gold.get(&d.id).map(|&gold| LabeledExample {
                    doc: d.clone(),
                    gold,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

fn read_records(path: &Path, format: Format) -> Result<Vec<(usize, Record)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Jsonl => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                out.push((i + 1, rec));
            }
            Ok(out)
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let mut out = Vec::new();
            for (i, row) in reader.deserialize::<CsvRecord>().enumerate() {
                // header is line 1
                let line = i + 2;
                let row = row.map_err(|e| Error::MalformedRecord {
                    line,
                    reason: e.to_string(),
                })?;
                out.push((line, row.into_record(line)?));
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRecord {
    id: String,
    text: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    split: String,
}

impl CsvRecord {
    fn into_record(self, line: usize) -> Result<Record> {
        let split = match self.split.trim() {
            "" => None,
            "unlabeled" => Some(Split::Unlabeled),
            "seed" => Some(Split::Seed),
            "test" => Some(Split::Test),
            other => {
                return Err(Error::MalformedRecord {
                    line,
                    reason: format!("unknown split {other:?}"),
                })
            }
        };
        Ok(Record {
            id: self.id,
            text: self.text,
            label: (!self.label.is_empty()).then_some(self.label),
            split,
        })
    }
}

/// Reads a dataset file. Records default to the unlabeled split; seed and
/// test records must carry a label naming a class in `labels`.
pub fn load_dataset(path: &Path, format: Format, labels: &LabelSpace) -> Result<Dataset> {
    let records = read_records(path, format)?;
    let mut unlabeled = Vec::new();
    let mut seed = Vec::new();
    let mut test = Vec::new();
    let mut hidden_gold = BTreeMap::new();
    let mut ids = HashSet::new();
    for (line, rec) in records {
        if rec.id.is_empty() {
            return Err(Error::MalformedRecord {
                line,
                reason: "empty id".into(),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        let gold = match &rec.label {
            Some(name) => Some(
                labels
                    .index_of(name)
                    .ok_or_else(|| Error::UnknownLabel(name.clone()))?,
            ),
            None => None,
        };
        let split = rec.split.unwrap_or(Split::Unlabeled);
        let doc = Document::new(rec.id, rec.text);
        match (split, gold) {
            (Split::Unlabeled, g) => {
                if let Some(g) = g {
                    hidden_gold.insert(doc.id.clone(), g);
                }
                unlabeled.push(doc);
            }
            (Split::Seed, Some(gold)) => seed.push(LabeledExample { doc, gold }),
            (Split::Test, Some(gold)) => test.push(LabeledExample { doc, gold }),
            (_, None) => {
                return Err(Error::MalformedRecord {
                    line,
                    reason: format!("{split:?} record {:?} has no label", doc.id),
                })
            }
        }
    }
    Dataset::new(labels.clone(), unlabeled, seed, test)?.with_hidden_gold(hidden_gold)
}

/// Collects the distinct label names in a dataset file, sorted.
pub fn infer_label_space(path: &Path, format: Format) -> Result<LabelSpace> {
    let names: BTreeSet<String> = read_records(path, format)?
        .into_iter()
        .filter_map(|(_, r)| r.label)
        .collect();
    LabelSpace::new(names)
}

fn dataset_records(ds: &Dataset) -> Vec<Record> {
    let mut out = Vec::with_capacity(ds.unlabeled.len() + ds.seed.len() + ds.test.len());
    for d in &ds.unlabeled {
        out.push(Record {
            id: d.id.clone(),
            text: d.text.clone(),
            label: ds
                .hidden_gold
                .get(&d.id)
                .map(|&g| ds.labels.name(g).to_string()),
            split: Some(Split::Unlabeled),
        });
    }
    for (split, examples) in [(Split::Seed, &ds.seed), (Split::Test, &ds.test)] {
        for ex in examples {
            out.push(Record {
                id: ex.doc.id.clone(),
                text: ex.doc.text.clone(),
                label: Some(ds.labels.name(ex.gold).to_string()),
                split: Some(split),
            });
        }
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let records = dataset_records(ds);
    match format {
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            for rec in &records {
                serde_json::to_writer(&mut w, rec)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            for rec in records {
                w.serialize(CsvRecord {
                    id: rec.id,
                    text: rec.text,
                    label: rec.label.unwrap_or_default(),
                    split: match rec.split.unwrap_or(Split::Unlabeled) {
                        Split::Unlabeled => "unlabeled",
                        Split::Seed => "seed",
                        Split::Test => "test",
                    }
                    .to_string(),
                })?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// `round(x)` with halves rounded up. The small slack absorbs binary
/// representation error in products such as `0.015 * 100`.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Draws `round(fraction * n)` examples as a seed set, returning
/// `(seed, remainder)`. With `stratify`, per-class quotas follow the largest
/// remainder rule so the total still matches the unstratified size.
pub fn stratified_seed_sample(
    examples: &[LabeledExample],
    fraction: f64,
    rng_seed: u64,
    stratify: bool,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let k = round_half_up(fraction * examples.len() as f64).min(examples.len());
    if k == 0 {
        return Err(Error::EmptySelection);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen = vec![false; examples.len()];
    let mut order: Vec<usize> = Vec::with_capacity(k);
    if stratify {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            by_class.entry(ex.gold).or_default().push(i);
        }
        let mut quotas: Vec<(usize, usize, f64)> = by_class
            .iter()
            .map(|(&c, idx)| {
                let exact = fraction * idx.len() as f64;
                (c, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = quotas.iter().map(|q| q.1).sum();
        let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
        by_remainder.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
        for &q in by_remainder.iter().take(k.saturating_sub(assigned)) {
            quotas[q].1 += 1;
        }
        for (c, quota, _) in quotas {
            let mut idx = by_class[&c].clone();
            idx.shuffle(&mut rng);
            order.extend(idx.into_iter().take(quota));
        }
    } else {
        let mut idx: Vec<usize> = (0..examples.len()).collect();
        idx.shuffle(&mut rng);
        order.extend(idx.into_iter().take(k));
    }
    for &i in &order {
        chosen[i] = true;
    }
    let seed = order.iter().map(|&i| examples[i].clone()).collect();
    let remainder = examples
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| !c)
        .map(|(e, _)| e.clone())
        .collect();
    Ok((seed, remainder))
}
