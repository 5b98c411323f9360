//! Corpus file ingestion and serialization.
//!
//! Corpus files are UTF-8 JSONL, one worker per line:
//!
//! ```text
//! {"id": "w1", "static": {"region": "south"}, "steps": [
//!     {"year": 1990, "occ": "cashier", "education": "hs"}, ...]}
//! ```
//!
//! Vocabulary files are TSV `kind<TAB>name<TAB>id` with kinds `occ` and
//! `cov:<name>`; `<bos>` is listed explicitly at id `J`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CareerSequence, Corpus, CovSource, CovTrack, CovariateSchema, Vocabulary, BOS, MISSING, NO_OBS,
};
use crate::error::{Error, Result};

/// How to resolve the vocabulary during ingestion.
#[derive(Debug, Clone)]
pub enum VocabPolicy {
    /// Build a vocabulary from the categories observed in the file.
    Build,
    /// Validate against an existing vocabulary; unknown categories are errors.
    UseExisting(Vocabulary),
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Insert `<noobs>` steps for missing years between a worker's first and
    /// last observation (the alternative drops the gap entirely).
    pub fill_gaps: bool,
    /// Synthesize a dynamic `year` covariate from the step years.
    pub year_covariate: bool,
    pub provenance: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { fill_gaps: true, year_covariate: false, provenance: String::new() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(rename = "static", default, skip_serializing_if = "BTreeMap::is_empty")]
    statics: BTreeMap<String, String>,
    steps: Vec<RecordStep>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordStep {
    year: i32,
    occ: String,
    #[serde(flatten)]
    covs: BTreeMap<String, String>,
}

const YEAR_COV: &str = "year";

fn parse_line(line_no: usize, line: &str) -> Result<Record> {
    let record: Record = serde_json::from_str(line)
        .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
    if record.steps.is_empty() {
        return Err(Error::Parse { line: line_no, message: "record has no steps".into() });
    }
    if record.steps.windows(2).any(|w| w[1].year <= w[0].year) {
        return Err(Error::Parse { line: line_no, message: "non-increasing years".into() });
    }
    for step in &record.steps {
        if step.occ == BOS || step.covs.contains_key("occ") || step.covs.contains_key(YEAR_COV) {
            return Err(Error::Parse { line: line_no, message: "reserved field misuse".into() });
        }
        if let Some(name) = step.covs.keys().find(|k| record.statics.contains_key(*k)) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("covariate {name:?} is both static and per-step"),
            });
        }
    }
    Ok(record)
}

/// Load a JSONL corpus. With [`VocabPolicy::Build`] the file is scanned
/// twice: once to collect categories, once to encode.
pub fn load_corpus(path: impl AsRef<Path>, policy: VocabPolicy, options: &LoadOptions) -> Result<Corpus> {
    let path = path.as_ref();
    let vocabulary = match policy {
        VocabPolicy::UseExisting(v) => v,
        VocabPolicy::Build => scan_vocabulary(path, options)?,
    };

    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(idx + 1, &line)?;
        sequences.push(encode_record(record, &vocabulary, options)?);
    }
    let provenance = if options.provenance.is_empty() {
        path.display().to_string()
    } else {
        options.provenance.clone()
    };
    Corpus::new(sequences, vocabulary, provenance)
}

fn scan_vocabulary(path: &Path, options: &LoadOptions) -> Result<Vocabulary> {
    let reader = BufReader::new(File::open(path)?);
    let mut occ: BTreeSet<String> = BTreeSet::new();
    let mut covs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut years: BTreeSet<i32> = BTreeSet::new();
    let mut any_gap = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(idx + 1, &line)?;
        for (name, value) in &record.statics {
            covs.entry(name.clone()).or_default().insert(value.clone());
        }
        let mut prev_year = None;
        for step in &record.steps {
            occ.insert(step.occ.clone());
            years.insert(step.year);
            if let Some(p) = prev_year {
                if step.year > p + 1 {
                    any_gap = true;
                    if options.year_covariate {
                        years.extend(p + 1..step.year);
                    }
                }
            }
            prev_year = Some(step.year);
            for (name, value) in &step.covs {
                covs.entry(name.clone()).or_default().insert(value.clone());
            }
        }
    }
    if any_gap && options.fill_gaps {
        occ.insert(NO_OBS.to_string());
    }
    let mut schemas = Vec::new();
    for (name, values) in covs {
        let mut categories = vec![MISSING.to_string()];
        categories.extend(values.into_iter().filter(|v| v != MISSING));
        schemas.push(CovariateSchema { name, categories, source: CovSource::File });
    }
    if options.year_covariate {
        let mut categories = vec![MISSING.to_string()];
        categories.extend(years.into_iter().map(|y| y.to_string()));
        schemas.push(CovariateSchema {
            name: YEAR_COV.to_string(),
            categories,
            source: CovSource::DerivedYear,
        });
    }
    Vocabulary::new(Vocabulary::order_occupations(occ), schemas)
}

fn unknown(kind: &str, name: &str) -> Error {
    Error::UnknownCategory { kind: kind.to_string(), name: name.to_string() }
}

fn encode_record(
    record: Record,
    vocab: &Vocabulary,
    options: &LoadOptions,
) -> Result<CareerSequence> {
    // Expand gap years first so covariate tracks line up with final steps.
    let mut years: Vec<i32> = Vec::with_capacity(record.steps.len());
    let mut jobs = Vec::with_capacity(record.steps.len());
    // Per final step: the source record step the covariates come from.
    let mut source_step: Vec<usize> = Vec::with_capacity(record.steps.len());
    for (si, step) in record.steps.iter().enumerate() {
        if options.fill_gaps {
            if let Some(&prev) = years.last() {
                for missing_year in prev + 1..step.year {
                    let no_obs = vocab
                        .no_obs_id()
                        .ok_or_else(|| unknown("occ (gap fill)", NO_OBS))?;
                    years.push(missing_year);
                    jobs.push(no_obs);
                    // Dynamic covariates carry forward across the gap.
                    source_step.push(si - 1);
                }
            }
        }
        let occ = vocab.occ_id(&step.occ).filter(|&id| id < vocab.bos_id());
        years.push(step.year);
        jobs.push(occ.ok_or_else(|| unknown("occ", &step.occ))?);
        source_step.push(si);
    }

    let mut covariates = Vec::with_capacity(vocab.covariates().len());
    for (c, schema) in vocab.covariates().iter().enumerate() {
        if schema.source == CovSource::DerivedYear {
            let track: Vec<u32> = years
                .iter()
                .map(|y| vocab.cov_id(c, &y.to_string()).ok_or_else(|| unknown(YEAR_COV, &y.to_string())))
                .collect::<Result<_>>()?;
            covariates.push(CovTrack::Dynamic(track));
        } else if let Some(value) = record.statics.get(&schema.name) {
            let id = vocab.cov_id(c, value).ok_or_else(|| unknown(&schema.name, value))?;
            covariates.push(CovTrack::Static(id));
        } else if record.steps.iter().any(|s| s.covs.contains_key(&schema.name)) {
            let track: Vec<u32> = source_step
                .iter()
                .map(|&si| match record.steps[si].covs.get(&schema.name) {
                    Some(value) => vocab.cov_id(c, value).ok_or_else(|| unknown(&schema.name, value)),
                    None => Ok(0), // <missing>
                })
                .collect::<Result<_>>()?;
            covariates.push(CovTrack::Dynamic(track));
        } else {
            covariates.push(CovTrack::Static(0));
        }
    }

    Ok(CareerSequence { id: record.id, years, jobs, covariates })
}

/// Write a corpus as JSONL, the inverse of [`load_corpus`]. Derived
/// covariates are skipped; all-missing static tracks are omitted.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let vocab = &corpus.vocabulary;
    for seq in &corpus.sequences {
        let mut statics = BTreeMap::new();
        let mut dynamic: Vec<usize> = Vec::new();
        for (c, schema) in vocab.covariates().iter().enumerate() {
            if schema.source == CovSource::DerivedYear {
                continue;
            }
            match &seq.covariates[c] {
                CovTrack::Static(0) => {}
                CovTrack::Static(v) => {
                    statics.insert(schema.name.clone(), vocab.cov_name(c, *v).to_string());
                }
                CovTrack::Dynamic(_) => dynamic.push(c),
            }
        }
        let steps = (0..seq.len())
            .map(|t| RecordStep {
                year: seq.years[t],
                occ: vocab.occ_name(seq.jobs[t]).to_string(),
                covs: dynamic
                    .iter()
                    .filter(|&&c| seq.cov_at(c, t) != 0)
                    .map(|&c| {
                        (
                            vocab.covariates()[c].name.clone(),
                            vocab.cov_name(c, seq.cov_at(c, t)).to_string(),
                        )
                    })
                    .collect(),
            })
            .collect();
        let record = Record { id: seq.id.clone(), statics, steps };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Write a vocabulary as TSV `kind<TAB>name<TAB>id`.
pub fn write_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (i, name) in vocab.occupations().iter().enumerate() {
        writeln!(out, "occ\t{name}\t{i}")?;
    }
    writeln!(out, "occ\t{BOS}\t{}", vocab.bos_id())?;
    for schema in vocab.covariates() {
        for (i, name) in schema.categories.iter().enumerate() {
            writeln!(out, "cov:{}\t{name}\t{i}", schema.name)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a TSV vocabulary written by [`write_vocabulary`].
pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let reader = BufReader::new(File::open(path)?);
    let mut occ: Vec<(usize, String)> = Vec::new();
    let mut covs: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    let mut cov_order: Vec<String> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (kind, name, id) = match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(n), Some(i)) => (k, n, i),
            _ => return Err(Error::Parse { line: idx + 1, message: "expected 3 tab-separated fields".into() }),
        };
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, message: format!("bad id {id:?}") })?;
        if kind == "occ" {
            if name != BOS {
                occ.push((id, name.to_string()));
            }
        } else if let Some(cov_name) = kind.strip_prefix("cov:") {
            if !covs.contains_key(cov_name) {
                cov_order.push(cov_name.to_string());
            }
            covs.entry(cov_name.to_string()).or_default().push((id, name.to_string()));
        } else {
            return Err(Error::Parse { line: idx + 1, message: format!("unknown kind {kind:?}") });
        }
    }
    let dense = |mut entries: Vec<(usize, String)>, what: &str| -> Result<Vec<String>> {
        entries.sort_by_key(|(id, _)| *id);
        for (expect, (id, _)) in entries.iter().enumerate() {
            if *id != expect {
                return Err(Error::data(format!("{what}: ids are not dense at {id}")));
            }
        }
        Ok(entries.into_iter().map(|(_, n)| n).collect())
    };
    let occupations = dense(occ, "occupations")?;
    let covariates = cov_order
        .into_iter()
        .map(|name| {
            let categories = dense(covs.remove(&name).unwrap(), &name)?;
            let source =
                if name == YEAR_COV { CovSource::DerivedYear } else { CovSource::File };
            Ok(CovariateSchema { name, categories, source })
        })
        .collect::<Result<Vec<_>>>()?;
    Vocabulary::new(occupations, covariates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_single_record() {
        let f = write_tmp(
            r#"{"id":"w1","steps":[{"year":1990,"occ":"a"},{"year":1991,"occ":"b"},{"year":1992,"occ":"a"}]}"#,
        );
        let c = load_corpus(f.path(), VocabPolicy::Build, &LoadOptions::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sequences[0].len(), 3);
        assert_eq!(c.vocabulary.num_occupations(), 2);
    }

    #[test]
    fn rejects_non_increasing_years() {
        let f = write_tmp(r#"{"id":"w1","steps":[{"year":1990,"occ":"a"},{"year":1990,"occ":"b"}]}"#);
        let err = load_corpus(f.path(), VocabPolicy::Build, &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("non-increasing years"), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn rejects_unknown_category_under_existing_vocab() {
        let f = write_tmp(r#"{"id":"w1","steps":[{"year":1990,"occ":"xyz"}]}"#);
        let vocab = Vocabulary::from_occupations(vec!["a".into()]).unwrap();
        let err =
            load_corpus(f.path(), VocabPolicy::UseExisting(vocab), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownCategory { .. }), "{err}");
    }

    #[test]
    fn fills_gaps_with_no_obs() {
        let f = write_tmp(r#"{"id":"w1","steps":[{"year":1990,"occ":"a"},{"year":1993,"occ":"b"}]}"#);
        let c = load_corpus(f.path(), VocabPolicy::Build, &LoadOptions::default()).unwrap();
        let seq = &c.sequences[0];
        assert_eq!(seq.years, vec![1990, 1991, 1992, 1993]);
        let no_obs = c.vocabulary.no_obs_id().unwrap();
        assert_eq!(seq.jobs[1], no_obs);
        assert_eq!(seq.jobs[2], no_obs);

        let dropped = load_corpus(
            f.path(),
            VocabPolicy::Build,
            &LoadOptions { fill_gaps: false, ..LoadOptions::default() },
        )
        .unwrap();
        assert_eq!(dropped.sequences[0].years, vec![1990, 1993]);
        assert_eq!(dropped.vocabulary.no_obs_id(), None);
    }

    #[test]
    fn covariates_static_dynamic_and_missing() {
        let f = write_tmp(concat!(
            r#"{"id":"w1","static":{"region":"south"},"steps":[{"year":1990,"occ":"a","edu":"hs"},{"year":1991,"occ":"b"}]}"#,
            "\n",
            r#"{"id":"w2","steps":[{"year":1990,"occ":"a"}]}"#,
        ));
        let c = load_corpus(f.path(), VocabPolicy::Build, &LoadOptions::default()).unwrap();
        let v = &c.vocabulary;
        assert_eq!(v.covariates().len(), 2); // edu, region (BTreeMap order)
        let edu = v.covariate_index("edu").unwrap();
        let region = v.covariate_index("region").unwrap();
        let w1 = &c.sequences[0];
        assert_eq!(w1.cov_at(region, 0), v.cov_id(region, "south").unwrap());
        assert_eq!(w1.cov_at(edu, 0), v.cov_id(edu, "hs").unwrap());
        assert_eq!(w1.cov_at(edu, 1), 0); // <missing>
        let w2 = &c.sequences[1];
        assert_eq!(w2.cov_at(region, 0), 0);
        assert_eq!(w2.cov_at(edu, 0), 0);
    }

    #[test]
    fn year_covariate_is_derived_and_not_written_back() {
        let f = write_tmp(r#"{"id":"w1","steps":[{"year":1990,"occ":"a"},{"year":1991,"occ":"a"}]}"#);
        let opts = LoadOptions { year_covariate: true, ..LoadOptions::default() };
        let c = load_corpus(f.path(), VocabPolicy::Build, &opts).unwrap();
        let yc = c.vocabulary.covariate_index("year").unwrap();
        assert_eq!(c.vocabulary.cov_name(yc, c.sequences[0].cov_at(yc, 1)), "1991");

        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&c, out.path()).unwrap();
        let text = std::fs::read_to_string(out.path()).unwrap();
        assert!(!text.contains("\"year\":\"1991\""), "{text}");
    }

    #[test]
    fn vocabulary_tsv_round_trip() {
        let f = write_tmp(
            r#"{"id":"w1","static":{"region":"south"},"steps":[{"year":1990,"occ":"a","edu":"hs"},{"year":1991,"occ":"<unemp>"}]}"#,
        );
        let c = load_corpus(f.path(), VocabPolicy::Build, &LoadOptions::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_vocabulary(&c.vocabulary, out.path()).unwrap();
        let reread = read_vocabulary(out.path()).unwrap();
        assert_eq!(reread, c.vocabulary);
        // Reserved non-working states order ahead of data categories.
        assert_eq!(c.vocabulary.occ_name(0), "<unemp>");
    }
}
