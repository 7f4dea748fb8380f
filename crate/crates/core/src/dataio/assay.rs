//! Assay table: one row per measured variant.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifmodel::{BackboneStructure, TokenizedSequence, Vocabulary};

/// Exact header of the assay CSV.
pub const ASSAY_HEADER: [&str; 7] = [
    "assay_id",
    "variant_id",
    "heavy_chain_seq",
    "antigen_seq",
    "binding_score",
    "score_type",
    "structure_id",
];

/// How a binding score was derived from the raw measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreType {
    /// `-log10 Kd` (pKd).
    NegLogKd,
    /// Log enrichment ratio; cannot express fold changes.
    LogEnrichment,
}

impl ScoreType {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreType::NegLogKd => "neg_log_kd",
            ScoreType::LogEnrichment => "log_enrichment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "neg_log_kd" => Some(ScoreType::NegLogKd),
            "log_enrichment" => Some(ScoreType::LogEnrichment),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub assay_id: String,
    pub variant_id: String,
    pub heavy_chain_seq: String,
    pub antigen_seq: String,
    pub binding_score: f64,
    pub score_type: ScoreType,
    pub structure_id: String,
}

impl VariantRecord {
    pub fn tokens(&self) -> Result<TokenizedSequence> {
        TokenizedSequence::from_chains(&self.heavy_chain_seq, &self.antigen_seq, &self.structure_id)
    }

    pub fn is_wildtype(&self) -> bool {
        self.variant_id.eq_ignore_ascii_case("wt")
    }
}

/// Immutable collection of variant records grouped by assay (file order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<VariantRecord>,
    assays: IndexMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn new(records: Vec<VariantRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut assays: IndexMap<String, Vec<usize>> = IndexMap::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert((r.assay_id.as_str(), r.variant_id.as_str())) {
                return Err(Error::Data(format!("duplicate key ({}, {})", r.assay_id, r.variant_id)));
            }
            assays.entry(r.assay_id.clone()).or_default().push(i);
        }
        Ok(Self { records, assays })
    }

    pub fn records(&self) -> &[VariantRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &VariantRecord {
        &self.records[i]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Assay id → record indices, in file order.
    pub fn assays(&self) -> &IndexMap<String, Vec<usize>> {
        &self.assays
    }

    pub fn assay_ids(&self) -> Vec<String> {
        self.assays.keys().cloned().collect()
    }

    /// Binding score of the assay's wild-type record (variant id `WT`).
    pub fn wildtype_score(&self, assay_id: &str) -> Option<f64> {
        self.assays
            .get(assay_id)?
            .iter()
            .map(|&i| &self.records[i])
            .find(|r| r.is_wildtype())
            .map(|r| r.binding_score)
    }
}

fn validate_row(vocab: &Vocabulary, fields: &csv::StringRecord, line: u64) -> std::result::Result<VariantRecord, String> {
    let get = |i: usize| fields.get(i).unwrap_or("");
    if fields.len() != ASSAY_HEADER.len() {
        return Err(format!("line {line}: expected {} fields, found {}", ASSAY_HEADER.len(), fields.len()));
    }
    for (i, name) in [(0, "assay_id"), (1, "variant_id"), (6, "structure_id")] {
        if get(i).is_empty() {
            return Err(format!("line {line}: field {name} is empty"));
        }
    }
    for (i, name) in [(2, "heavy_chain_seq"), (3, "antigen_seq")] {
        let seq = get(i);
        if i == 2 && seq.is_empty() {
            return Err(format!("line {line}: field {name} is empty"));
        }
        if let Some(c) = seq.chars().find(|c| vocab.index_of(*c).is_none()) {
            return Err(format!("line {line}: field {name} has non-vocabulary letter {c:?}"));
        }
    }
    let score: f64 = get(4)
        .parse()
        .map_err(|_| format!("line {line}: field binding_score is not a number: {:?}", get(4)))?;
    if !score.is_finite() {
        return Err(format!("line {line}: field binding_score is not finite"));
    }
    let score_type =
        ScoreType::parse(get(5)).ok_or_else(|| format!("line {line}: field score_type has unknown value {:?}", get(5)))?;
    Ok(VariantRecord {
        assay_id: get(0).to_string(),
        variant_id: get(1).to_string(),
        heavy_chain_seq: get(2).to_ascii_uppercase(),
        antigen_seq: get(3).to_ascii_uppercase(),
        binding_score: score,
        score_type,
        structure_id: get(6).to_string(),
    })
}

/// Reads and validates an assay CSV. Any invalid row aborts the load with a
/// line-numbered report of every problem found.
pub fn load_assays(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_assays(file, &path.display().to_string())
}

pub fn read_assays<R: std::io::Read>(reader: R, label: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(ASSAY_HEADER.iter().copied()) {
        return Err(Error::Rows {
            path: label.to_string(),
            errors: vec![format!("line 1: header must be exactly {}", ASSAY_HEADER.join(","))],
        });
    }
    let vocab = Vocabulary;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match validate_row(&vocab, &row, line) {
            Ok(r) => {
                if !seen.insert((r.assay_id.clone(), r.variant_id.clone())) {
                    errors.push(format!("line {line}: duplicate key ({}, {})", r.assay_id, r.variant_id));
                } else {
                    records.push(r);
                }
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows {
            path: label.to_string(),
            errors,
        });
    }
    Dataset::new(records)
}

/// Writes records in canonical form: the exact header, then one row per
/// record with scores in shortest round-trip decimal notation.
pub fn write_assays<W: std::io::Write>(records: &[VariantRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ASSAY_HEADER)?;
    for r in records {
        w.write_record([
            r.assay_id.as_str(),
            r.variant_id.as_str(),
            r.heavy_chain_seq.as_str(),
            r.antigen_seq.as_str(),
            &format!("{:?}", r.binding_score),
            r.score_type.as_str(),
            r.structure_id.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_assays(records: &[VariantRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_assays(records, std::io::BufWriter::new(file))
}

/// Structures keyed by id.
pub type StructureSet = BTreeMap<String, BackboneStructure>;

/// Loads every `*.json` structure in a directory.
pub fn load_structures(dir: impl AsRef<Path>) -> Result<StructureSet> {
    let dir = dir.as_ref();
    let mut out = StructureSet::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for p in entries {
        let s = BackboneStructure::load(&p)?;
        out.insert(s.id.clone(), s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "assay_id,variant_id,heavy_chain_seq,antigen_seq,binding_score,score_type,structure_id
a1,WT,ACDE,KL,8.0,neg_log_kd,s1
a1,v1,ACDF,KL,8.5,neg_log_kd,s1
a1,v2,ACDG,KL,7.25,neg_log_kd,s1
";

    #[test]
    fn well_formed_file_loads() {
        let ds = read_assays(GOOD.as_bytes(), "mem").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.assays().len(), 1);
        assert_eq!(ds.wildtype_score("a1"), Some(8.0));
    }

    #[test]
    fn unknown_score_type_names_line_and_field() {
        let bad = GOOD.replace("8.5,neg_log_kd", "8.5,kd_raw");
        let err = read_assays(bad.as_bytes(), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("score_type"), "{msg}");
    }

    #[test]
    fn bad_letter_and_duplicate_are_reported_together() {
        let bad = GOOD.replace("ACDG", "ACDB").replace("a1,v1,", "a1,WT,");
        let Error::Rows { errors, .. } = read_assays(bad.as_bytes(), "mem").unwrap_err() else {
            panic!("expected row errors");
        };
        assert_eq!(errors.len(), 2);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let bad = GOOD.replacen("assay_id,", "assay,", 1);
        assert!(read_assays(bad.as_bytes(), "mem").is_err());
    }

    #[test]
    fn canonical_emit_roundtrips() {
        let ds = read_assays(GOOD.as_bytes(), "mem").unwrap();
        let mut buf = Vec::new();
        write_assays(ds.records(), &mut buf).unwrap();
        let again = read_assays(buf.as_slice(), "mem").unwrap();
        let mut buf2 = Vec::new();
        write_assays(again.records(), &mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(ds, again);
    }
}
