//! Career-sequence data model: vocabularies, sequences, corpora.
//!
//! An occupation vocabulary maps `J` category names to dense ids `0..J-1`;
//! these ids are the model outcome space. Two additional reserved slots sit
//! above it: id `J` is the begin-of-sequence token (conditioning only, never
//! an outcome) and id `J+1` is the mask row used when a history observation
//! is hidden from a model's input (job dropout, rationalization).
//!
//! Reserved category names (`<bos>`, `<noobs>`, `<missing>`, `<unemp>`,
//! `<oolf>`, `<student>`) are shared with the on-disk formats. The
//! non-working states and the no-observed-job token are ordinary predictable
//! categories whenever they occur in data; `<bos>` is always virtual.

mod io;
mod split;
mod synthetic;

pub use io::{load_corpus, read_vocabulary, write_corpus, write_vocabulary, LoadOptions, VocabPolicy};
pub use split::split_corpus;
pub use synthetic::{generate_synthetic, LengthSpec, SyntheticKind, SyntheticSpec};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupation category id. `0..J-1` are predictable outcomes.
pub type OccId = u32;
/// Covariate category id within one covariate's schema.
pub type CovId = u32;

pub const BOS: &str = "<bos>";
pub const NO_OBS: &str = "<noobs>";
pub const MISSING: &str = "<missing>";
pub const UNEMPLOYED: &str = "<unemp>";
pub const OUT_OF_LABOR_FORCE: &str = "<oolf>";
pub const STUDENT: &str = "<student>";

/// Reserved occupation names that may appear in data, in canonical id order.
const RESERVED_OCC: [&str; 4] = [NO_OBS, UNEMPLOYED, OUT_OF_LABOR_FORCE, STUDENT];

/// Where a covariate schema came from. Derived covariates (currently only
/// the calendar-year covariate synthesized at ingestion) are not written
/// back out by [`write_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovSource {
    File,
    DerivedYear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub name: String,
    /// Category names; id = index. `categories[0]` is always `<missing>`.
    pub categories: Vec<String>,
    pub source: CovSource,
}

impl CovariateSchema {
    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }
}

/// Bidirectional mapping between category names and dense integer ids, for
/// occupations and for each covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct Vocabulary {
    occupations: Vec<String>,
    covariates: Vec<CovariateSchema>,
    occ_index: HashMap<String, OccId>,
    cov_indexes: Vec<HashMap<String, CovId>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawVocabulary {
    occupations: Vec<String>,
    covariates: Vec<CovariateSchema>,
}

impl From<Vocabulary> for RawVocabulary {
    fn from(v: Vocabulary) -> Self {
        RawVocabulary { occupations: v.occupations, covariates: v.covariates }
    }
}

impl TryFrom<RawVocabulary> for Vocabulary {
    type Error = Error;
    fn try_from(raw: RawVocabulary) -> Result<Self> {
        Vocabulary::new(raw.occupations, raw.covariates)
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.occupations == other.occupations && self.covariates == other.covariates
    }
}

impl Vocabulary {
    /// Build a vocabulary from explicit category lists, validating
    /// uniqueness and the reserved-name rules.
    pub fn new(occupations: Vec<String>, covariates: Vec<CovariateSchema>) -> Result<Self> {
        let mut occ_index = HashMap::with_capacity(occupations.len());
        for (i, name) in occupations.iter().enumerate() {
            if name == BOS {
                return Err(Error::data("<bos> cannot be a predictable occupation"));
            }
            if occ_index.insert(name.clone(), i as OccId).is_some() {
                return Err(Error::data(format!("duplicate occupation {name:?}")));
            }
        }
        let mut cov_indexes = Vec::with_capacity(covariates.len());
        let mut seen = HashMap::new();
        for (c, schema) in covariates.iter().enumerate() {
            if seen.insert(schema.name.clone(), c).is_some() {
                return Err(Error::data(format!("duplicate covariate {:?}", schema.name)));
            }
            if schema.categories.first().map(String::as_str) != Some(MISSING) {
                return Err(Error::data(format!(
                    "covariate {:?} must reserve category 0 for {MISSING}",
                    schema.name
                )));
            }
            let mut index = HashMap::with_capacity(schema.categories.len());
            for (i, name) in schema.categories.iter().enumerate() {
                if index.insert(name.clone(), i as CovId).is_some() {
                    return Err(Error::data(format!(
                        "duplicate category {name:?} in covariate {:?}",
                        schema.name
                    )));
                }
            }
            cov_indexes.push(index);
        }
        Ok(Vocabulary { occupations, covariates, occ_index, cov_indexes })
    }

    /// Vocabulary with occupations only (no covariates), e.g. for synthetic
    /// corpora. Names must not include `<bos>`.
    pub fn from_occupations(occupations: Vec<String>) -> Result<Self> {
        Vocabulary::new(occupations, Vec::new())
    }

    /// Number of predictable occupations `J`.
    pub fn num_occupations(&self) -> usize {
        self.occupations.len()
    }

    /// Begin-of-sequence id: the slot just above the predictable range.
    pub fn bos_id(&self) -> OccId {
        self.occupations.len() as OccId
    }

    /// Mask-input id used for hidden history observations.
    pub fn mask_id(&self) -> OccId {
        self.occupations.len() as OccId + 1
    }

    pub fn occ_id(&self, name: &str) -> Option<OccId> {
        if name == BOS {
            return Some(self.bos_id());
        }
        self.occ_index.get(name).copied()
    }

    pub fn occ_name(&self, id: OccId) -> &str {
        if id == self.bos_id() {
            BOS
        } else {
            &self.occupations[id as usize]
        }
    }

    pub fn occupations(&self) -> &[String] {
        &self.occupations
    }

    pub fn no_obs_id(&self) -> Option<OccId> {
        self.occ_id(NO_OBS)
    }

    pub fn unemployed_id(&self) -> Option<OccId> {
        self.occ_id(UNEMPLOYED)
    }

    pub fn out_of_labor_force_id(&self) -> Option<OccId> {
        self.occ_id(OUT_OF_LABOR_FORCE)
    }

    pub fn student_id(&self) -> Option<OccId> {
        self.occ_id(STUDENT)
    }

    /// The non-working states present in this vocabulary, in canonical order.
    pub fn non_working_states(&self) -> Vec<OccId> {
        [self.unemployed_id(), self.out_of_labor_force_id(), self.student_id()]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn covariates(&self) -> &[CovariateSchema] {
        &self.covariates
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|s| s.name == name)
    }

    pub fn cov_id(&self, cov: usize, name: &str) -> Option<CovId> {
        self.cov_indexes[cov].get(name).copied()
    }

    pub fn cov_name(&self, cov: usize, id: CovId) -> &str {
        &self.covariates[cov].categories[id as usize]
    }

    /// Deterministic occupation ordering used when building vocabularies
    /// from observed data: reserved names first (canonical order), then the
    /// rest sorted.
    pub(crate) fn order_occupations(observed: impl IntoIterator<Item = String>) -> Vec<String> {
        let mut rest: Vec<String> = Vec::new();
        let mut reserved = [false; RESERVED_OCC.len()];
        for name in observed {
            match RESERVED_OCC.iter().position(|r| *r == name) {
                Some(i) => reserved[i] = true,
                None => rest.push(name),
            }
        }
        rest.sort();
        rest.dedup();
        let mut out: Vec<String> = RESERVED_OCC
            .iter()
            .zip(reserved)
            .filter(|(_, present)| *present)
            .map(|(name, _)| (*name).to_string())
            .collect();
        out.extend(rest);
        out
    }
}

/// Per-sequence storage for one covariate: static covariates are stored once
/// and expanded on demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovTrack {
    Static(CovId),
    Dynamic(Vec<CovId>),
}

impl CovTrack {
    pub fn at(&self, t: usize) -> CovId {
        match self {
            CovTrack::Static(v) => *v,
            CovTrack::Dynamic(vs) => vs[t],
        }
    }
}

/// One worker's career: occupations indexed by calendar year, plus
/// covariates. Step `t` (0-based) holds the year-`years[t]` occupation
/// `jobs[t]`; the model's previous job at step 0 is the virtual `<bos>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareerSequence {
    pub id: String,
    pub years: Vec<i32>,
    pub jobs: Vec<OccId>,
    /// Aligned with `Vocabulary::covariates`.
    pub covariates: Vec<CovTrack>,
}

impl CareerSequence {
    /// Sequence length `T` (number of prediction steps).
    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// The conditioning job at step `t`: `jobs[t-1]`, or `<bos>` at `t = 0`.
    pub fn prev_job(&self, t: usize, bos: OccId) -> OccId {
        if t == 0 {
            bos
        } else {
            self.jobs[t - 1]
        }
    }

    pub fn cov_at(&self, c: usize, t: usize) -> CovId {
        self.covariates[c].at(t)
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let t = self.jobs.len();
        if t == 0 {
            return Err(Error::data(format!("sequence {:?} is empty", self.id)));
        }
        if self.years.len() != t {
            return Err(Error::data(format!(
                "sequence {:?}: {} years for {} jobs",
                self.id,
                self.years.len(),
                t
            )));
        }
        if self.years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data(format!("sequence {:?}: non-increasing years", self.id)));
        }
        let j = vocab.num_occupations() as OccId;
        if let Some(&bad) = self.jobs.iter().find(|&&y| y >= j) {
            return Err(Error::data(format!("sequence {:?}: occupation id {bad} out of range", self.id)));
        }
        if self.covariates.len() != vocab.covariates().len() {
            return Err(Error::data(format!(
                "sequence {:?}: {} covariate tracks for {} schemas",
                self.id,
                self.covariates.len(),
                vocab.covariates().len()
            )));
        }
        for (c, track) in self.covariates.iter().enumerate() {
            let n = vocab.covariates()[c].cardinality() as CovId;
            let ok = match track {
                CovTrack::Static(v) => *v < n,
                CovTrack::Dynamic(vs) => vs.len() == t && vs.iter().all(|&v| v < n),
            };
            if !ok {
                return Err(Error::data(format!(
                    "sequence {:?}: invalid covariate track {:?}",
                    self.id,
                    vocab.covariates()[c].name
                )));
            }
        }
        Ok(())
    }
}

/// An immutable collection of sequences sharing one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub sequences: Vec<CareerSequence>,
    pub vocabulary: Vocabulary,
    pub provenance: String,
}

impl Corpus {
    pub fn new(sequences: Vec<CareerSequence>, vocabulary: Vocabulary, provenance: impl Into<String>) -> Result<Self> {
        for seq in &sequences {
            seq.validate(&vocabulary)?;
        }
        Ok(Corpus { sequences, vocabulary, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Total number of prediction steps across all sequences.
    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(CareerSequence::len).sum()
    }
}

/// Truncate every sequence to timesteps with `year <= cutoff_year` and drop
/// sequences left empty. A cutoff at or above the max year is the identity.
pub fn apply_cutoff(corpus: &Corpus, cutoff_year: i32) -> Corpus {
    let sequences = corpus
        .sequences
        .iter()
        .filter_map(|seq| {
            let keep = seq.years.iter().take_while(|&&y| y <= cutoff_year).count();
            if keep == 0 {
                return None;
            }
            if keep == seq.len() {
                return Some(seq.clone());
            }
            let covariates = seq
                .covariates
                .iter()
                .map(|track| match track {
                    CovTrack::Static(v) => CovTrack::Static(*v),
                    CovTrack::Dynamic(vs) => CovTrack::Dynamic(vs[..keep].to_vec()),
                })
                .collect();
            Some(CareerSequence {
                id: seq.id.clone(),
                years: seq.years[..keep].to_vec(),
                jobs: seq.jobs[..keep].to_vec(),
                covariates,
            })
        })
        .collect();
    Corpus {
        sequences,
        vocabulary: corpus.vocabulary.clone(),
        provenance: format!("{} (cutoff {})", corpus.provenance, cutoff_year),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_ab() -> Vocabulary {
        Vocabulary::from_occupations(vec!["a".into(), "b".into()]).unwrap()
    }

    fn seq(id: &str, years: Vec<i32>, jobs: Vec<OccId>) -> CareerSequence {
        CareerSequence { id: id.into(), years, jobs, covariates: vec![] }
    }

    #[test]
    fn ids_round_trip_and_specials_are_distinct() {
        let v = Vocabulary::from_occupations(vec![NO_OBS.into(), "a".into(), "b".into()]).unwrap();
        for id in 0..v.num_occupations() as OccId {
            assert_eq!(v.occ_id(v.occ_name(id)), Some(id));
        }
        assert_eq!(v.bos_id(), 3);
        assert_eq!(v.mask_id(), 4);
        assert_eq!(v.occ_id(BOS), Some(3));
        assert_eq!(v.no_obs_id(), Some(0));
        assert!(Vocabulary::from_occupations(vec![BOS.into()]).is_err());
        assert!(Vocabulary::from_occupations(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn validate_rejects_non_increasing_years() {
        let v = vocab_ab();
        let s = seq("w", vec![1990, 1990], vec![0, 1]);
        let err = s.validate(&v).unwrap_err();
        assert!(err.to_string().contains("non-increasing years"));
    }

    #[test]
    fn validate_rejects_out_of_range_ids() {
        let v = vocab_ab();
        assert!(seq("w", vec![1990], vec![5]).validate(&v).is_err());
        assert!(seq("w", vec![], vec![]).validate(&v).is_err());
    }

    #[test]
    fn cutoff_truncates_and_drops() {
        let v = vocab_ab();
        let c = Corpus::new(
            vec![
                seq("a", (2012..=2017).collect(), vec![0, 1, 0, 1, 0, 1]),
                seq("b", vec![2016, 2017], vec![0, 1]),
            ],
            v,
            "test",
        )
        .unwrap();
        let cut = apply_cutoff(&c, 2014);
        assert_eq!(cut.len(), 1);
        assert_eq!(cut.sequences[0].years, vec![2012, 2013, 2014]);
        let same = apply_cutoff(&c, 2017);
        assert_eq!(same.sequences, c.sequences);
    }
}
