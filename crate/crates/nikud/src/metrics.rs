//! The four evaluation metrics with document-level macro aggregation:
//!
//! - DEC: correct individual decisions / applicable decisions (a nikud
//!   decision per nikud-eligible letter, dagesh per dagesh-eligible, sin
//!   for ש).
//! - CHA: Hebrew letters whose every applicable decision is correct /
//!   Hebrew letters.
//! - WOR: fully correct words / words (word = maximal run of Hebrew
//!   letters).
//! - VOC: words whose every error is pronunciation-equivalent / words.
//!
//! The equivalence relation behind VOC is data, not code: see
//! [`VocEquivalence`].

use std::collections::BTreeMap;

use thiserror::Error;

use crate::hebrew::{eligibility, is_hebrew_letter, AnalyzedText, Nikud};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold/pred texts diverge at position {position}: '{gold}' vs '{pred}'")]
    AlignmentError {
        position: usize,
        gold: char,
        pred: char,
    },
    #[error("gold/pred lengths differ: {gold} vs {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("prediction missing for document {id}")]
    MissingDocument { id: String },
    #[error("bad equivalence table: {0}")]
    BadVocTable(String),
}

/// Pronunciation-equivalence relation for VOC. Nikud classes within one
/// group are interchangeable; a dagesh error only matters on letters where
/// the dot selects a different consonant sound; sin/shin errors always
/// matter.
#[derive(Debug, Clone)]
pub struct VocEquivalence {
    /// group index per nikud class id; None = class is its own singleton.
    group_of: [Option<usize>; crate::hebrew::NIKUD_CLASSES],
    dagesh_significant: Vec<char>,
}

/// On-disk form: groups of nikud code points ("U+05B7" strings) plus the
/// letters where dagesh changes pronunciation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VocEquivalenceFile {
    pub nikud_groups: Vec<Vec<String>>,
    pub dagesh_significant: Vec<String>,
}

fn parse_codepoint(s: &str) -> Result<char, MetricsError> {
    let hex = s
        .strip_prefix("U+")
        .or_else(|| s.strip_prefix("u+"))
        .ok_or_else(|| MetricsError::BadVocTable(format!("expected U+XXXX, got {s}")))?;
    u32::from_str_radix(hex, 16)
        .ok()
        .and_then(char::from_u32)
        .ok_or_else(|| MetricsError::BadVocTable(format!("bad code point {s}")))
}

impl VocEquivalence {
    /// Mainstream Israeli Hebrew mergers: patah/qamats (+hataf patah),
    /// tsere/segol (+hataf segol), holam/hataf qamats. Dagesh distinguishes
    /// pronunciation only on ב כ ך פ ף.
    pub fn default_table() -> VocEquivalence {
        let mut v = VocEquivalence {
            group_of: [None; crate::hebrew::NIKUD_CLASSES],
            dagesh_significant: vec!['\u{05D1}', '\u{05DB}', '\u{05DA}', '\u{05E4}', '\u{05E3}'],
        };
        for (gi, group) in [
            [Nikud::Patah, Nikud::Qamats, Nikud::HatafPatah].as_slice(),
            [Nikud::Tsere, Nikud::Segol, Nikud::HatafSegol].as_slice(),
            [Nikud::Holam, Nikud::HatafQamats].as_slice(),
        ]
        .iter()
        .enumerate()
        {
            for &class in *group {
                v.group_of[class as usize] = Some(gi);
            }
        }
        v
    }

    pub fn from_file(file: &VocEquivalenceFile) -> Result<VocEquivalence, MetricsError> {
        let mut group_of = [None; crate::hebrew::NIKUD_CLASSES];
        for (gi, group) in file.nikud_groups.iter().enumerate() {
            for s in group {
                let c = parse_codepoint(s)?;
                let class = Nikud::from_mark(c)
                    .ok_or_else(|| MetricsError::BadVocTable(format!("{s} is not a nikud mark")))?;
                if group_of[class as usize].is_some() {
                    return Err(MetricsError::BadVocTable(format!(
                        "{s} appears in two groups"
                    )));
                }
                group_of[class as usize] = Some(gi);
            }
        }
        let dagesh_significant = file
            .dagesh_significant
            .iter()
            .map(|s| parse_codepoint(s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VocEquivalence {
            group_of,
            dagesh_significant,
        })
    }

    pub fn to_file(&self) -> VocEquivalenceFile {
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for class in 0..crate::hebrew::NIKUD_CLASSES {
            if let Some(gi) = self.group_of[class] {
                let mark = Nikud::from_id(class as u8).unwrap().mark().unwrap();
                groups
                    .entry(gi)
                    .or_default()
                    .push(format!("U+{:04X}", mark as u32));
            }
        }
        VocEquivalenceFile {
            nikud_groups: groups.into_values().collect(),
            dagesh_significant: self
                .dagesh_significant
                .iter()
                .map(|&c| format!("U+{:04X}", c as u32))
                .collect(),
        }
    }

    fn nikud_equivalent(&self, a: u8, b: u8) -> bool {
        if a == b {
            return true;
        }
        match (
            self.group_of.get(a as usize).copied().flatten(),
            self.group_of.get(b as usize).copied().flatten(),
        ) {
            (Some(ga), Some(gb)) => ga == gb,
            _ => false,
        }
    }

    fn dagesh_matters(&self, letter: char) -> bool {
        self.dagesh_significant.contains(&letter)
    }
}

/// Applicable-decision counts with per-head breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecisionCount {
    pub total: usize,
    pub correct: usize,
    pub nikud: (usize, usize),  // (correct, total)
    pub dagesh: (usize, usize),
    pub sin: (usize, usize),
}

/// The four metrics for one gold/pred pair, as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub dec: f64,
    pub cha: f64,
    pub wor: f64,
    pub voc: f64,
    pub counts: DecisionCount,
}

/// Scores one aligned gold/pred pair.
pub fn score_pair(
    gold: &AnalyzedText,
    pred: &AnalyzedText,
    voc: &VocEquivalence,
) -> Result<PairScore, MetricsError> {
    check_alignment(gold, pred)?;

    let mut counts = DecisionCount::default();
    let mut letters = (0usize, 0usize);
    let mut words = (0usize, 0usize);
    let mut voc_words = 0usize;

    let mut in_word = false;
    let mut word_exact = true;
    let mut word_voc = true;

    let close_word = |words: &mut (usize, usize), voc_words: &mut usize, exact: bool, v: bool| {
        words.1 += 1;
        words.0 += exact as usize;
        *voc_words += v as usize;
    };

    for i in 0..gold.plain.len() {
        let c = gold.plain[i];
        if !is_hebrew_letter(c) {
            if in_word {
                close_word(&mut words, &mut voc_words, word_exact, word_voc);
                in_word = false;
            }
            continue;
        }
        if !in_word {
            in_word = true;
            word_exact = true;
            word_voc = true;
        }
        let (can_nikud, can_dagesh, can_sin) = eligibility(c);
        let g = gold.labels[i];
        let p = pred.labels[i];
        let mut letter_ok = true;
        if can_nikud {
            counts.nikud.1 += 1;
            let hit = g.nikud == p.nikud;
            counts.nikud.0 += hit as usize;
            if !hit {
                letter_ok = false;
                if !voc.nikud_equivalent(g.nikud, p.nikud) {
                    word_voc = false;
                }
            }
        }
        if can_dagesh {
            counts.dagesh.1 += 1;
            let hit = g.dagesh == p.dagesh;
            counts.dagesh.0 += hit as usize;
            if !hit {
                letter_ok = false;
                if voc.dagesh_matters(c) {
                    word_voc = false;
                }
            }
        }
        if can_sin {
            counts.sin.1 += 1;
            let hit = g.sin == p.sin;
            counts.sin.0 += hit as usize;
            if !hit {
                letter_ok = false;
                word_voc = false; // sin/shin errors always mispronounce
            }
        }
        letters.1 += 1;
        letters.0 += letter_ok as usize;
        word_exact &= letter_ok;
    }
    if in_word {
        close_word(&mut words, &mut voc_words, word_exact, word_voc);
    }

    counts.total = counts.nikud.1 + counts.dagesh.1 + counts.sin.1;
    counts.correct = counts.nikud.0 + counts.dagesh.0 + counts.sin.0;

    let frac = |c: usize, t: usize| if t == 0 { 1.0 } else { c as f64 / t as f64 };
    Ok(PairScore {
        dec: frac(counts.correct, counts.total),
        cha: frac(letters.0, letters.1),
        wor: frac(words.0, words.1),
        voc: frac(voc_words, words.1),
        counts,
    })
}

fn check_alignment(gold: &AnalyzedText, pred: &AnalyzedText) -> Result<(), MetricsError> {
    for (i, (&g, &p)) in gold.plain.iter().zip(&pred.plain).enumerate() {
        if g != p {
            return Err(MetricsError::AlignmentError {
                position: i,
                gold: g,
                pred: p,
            });
        }
    }
    if gold.plain.len() != pred.plain.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.plain.len(),
            pred: pred.plain.len(),
        });
    }
    Ok(())
}

/// One document ready for evaluation.
#[derive(Debug, Clone)]
pub struct EvalDoc {
    pub id: String,
    pub genre: String,
    pub text: AnalyzedText,
}

#[derive(Debug, Clone)]
pub struct DocScore {
    pub id: String,
    pub genre: String,
    pub score: PairScore,
}

/// Per-genre mean character and word accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreScore {
    pub genre: String,
    pub cha: f64,
    pub wor: f64,
    pub documents: usize,
}

/// Document-level report: per-document scores, unweighted macro means,
/// per-genre rollups, and pooled decision counts.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub documents: Vec<DocScore>,
    pub macro_dec: f64,
    pub macro_cha: f64,
    pub macro_wor: f64,
    pub macro_voc: f64,
    pub genres: Vec<GenreScore>,
    pub counts: DecisionCount,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("document,genre,dec,cha,wor,voc\n");
        for d in &self.documents {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                d.id, d.genre, d.score.dec, d.score.cha, d.score.wor, d.score.voc
            ));
        }
        out.push_str(&format!(
            "MACRO,,{},{},{},{}\n",
            self.macro_dec, self.macro_cha, self.macro_wor, self.macro_voc
        ));
        out
    }

    /// Pretty table: per-genre CHA/WOR block, then the macro line over all
    /// four metrics.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<28} {:>8} {:>8}\n", "Genre", "CHA", "WOR"));
        for g in &self.genres {
            out.push_str(&format!(
                "{:<28} {:>7.2}% {:>7.2}%\n",
                g.genre,
                g.cha * 100.0,
                g.wor * 100.0
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<28} {:>8} {:>8} {:>8} {:>8}\n",
            "", "DEC", "CHA", "WOR", "VOC"
        ));
        out.push_str(&format!(
            "{:<28} {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}%\n",
            "macro",
            self.macro_dec * 100.0,
            self.macro_cha * 100.0,
            self.macro_wor * 100.0,
            self.macro_voc * 100.0
        ));
        out
    }
}

/// Scores matching documents and aggregates with an unweighted macro mean.
/// Documents are matched by id; every gold document must have a prediction.
pub fn evaluate_corpus(
    gold: &[EvalDoc],
    pred: &[EvalDoc],
    voc: &VocEquivalence,
) -> Result<EvalReport, MetricsError> {
    let pred_by_id: BTreeMap<&str, &EvalDoc> =
        pred.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut documents = Vec::with_capacity(gold.len());
    let mut counts = DecisionCount::default();
    for g in gold {
        let p = pred_by_id
            .get(g.id.as_str())
            .ok_or_else(|| MetricsError::MissingDocument { id: g.id.clone() })?;
        let score = score_pair(&g.text, &p.text, voc)?;
        counts.total += score.counts.total;
        counts.correct += score.counts.correct;
        counts.nikud.0 += score.counts.nikud.0;
        counts.nikud.1 += score.counts.nikud.1;
        counts.dagesh.0 += score.counts.dagesh.0;
        counts.dagesh.1 += score.counts.dagesh.1;
        counts.sin.0 += score.counts.sin.0;
        counts.sin.1 += score.counts.sin.1;
        documents.push(DocScore {
            id: g.id.clone(),
            genre: g.genre.clone(),
            score,
        });
    }
    let n = documents.len().max(1) as f64;
    let mean = |f: fn(&PairScore) -> f64| documents.iter().map(|d| f(&d.score)).sum::<f64>() / n;
    let mut genre_map: BTreeMap<String, Vec<&DocScore>> = BTreeMap::new();
    for d in &documents {
        genre_map.entry(d.genre.clone()).or_default().push(d);
    }
    let genres = genre_map
        .into_iter()
        .map(|(genre, docs)| {
            let gn = docs.len() as f64;
            GenreScore {
                genre,
                cha: docs.iter().map(|d| d.score.cha).sum::<f64>() / gn,
                wor: docs.iter().map(|d| d.score.wor).sum::<f64>() / gn,
                documents: docs.len(),
            }
        })
        .collect();
    Ok(EvalReport {
        macro_dec: mean(|s| s.dec),
        macro_cha: mean(|s| s.cha),
        macro_wor: mean(|s| s.wor),
        macro_voc: mean(|s| s.voc),
        documents,
        genres,
        counts,
    })
}

pub mod oracle {
    //! Brute-force re-implementation of [`super::score_pair`] for testing.
    //! Deliberately shares no logic with the production path: eligibility
    //! sets are spelled out inline and words are materialized explicitly.

    use super::{MetricsError, PairScore, VocEquivalence};
    use crate::hebrew::AnalyzedText;

    const NIKUD_SET: &str = "אבגדהוזחטיכךלמנןסעפצקרשת";
    const DAGESH_SET: &str = "בגדהוזטיכלמנספצקשתךף";

    fn letter(c: char) -> bool {
        ('א'..='ת').contains(&c)
    }

    /// Naive per-letter walk over explicitly materialized words.
    pub fn oracle_score(
        gold: &AnalyzedText,
        pred: &AnalyzedText,
        voc: &VocEquivalence,
    ) -> Result<PairScore, MetricsError> {
        if gold.plain.len() != pred.plain.len() {
            return Err(MetricsError::LengthMismatch {
                gold: gold.plain.len(),
                pred: pred.plain.len(),
            });
        }
        for i in 0..gold.plain.len() {
            if gold.plain[i] != pred.plain[i] {
                return Err(MetricsError::AlignmentError {
                    position: i,
                    gold: gold.plain[i],
                    pred: pred.plain[i],
                });
            }
        }

        // materialize words as index lists
        let mut words: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for (i, &c) in gold.plain.iter().enumerate() {
            if letter(c) {
                current.push(i);
            } else if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            words.push(current);
        }

        let mut dec_total = 0usize;
        let mut dec_correct = 0usize;
        let mut nikud = (0usize, 0usize);
        let mut dagesh = (0usize, 0usize);
        let mut sin = (0usize, 0usize);
        let mut cha_total = 0usize;
        let mut cha_correct = 0usize;

        for (i, &c) in gold.plain.iter().enumerate() {
            if !letter(c) {
                continue;
            }
            cha_total += 1;
            let mut ok = true;
            if NIKUD_SET.contains(c) {
                nikud.1 += 1;
                if gold.labels[i].nikud == pred.labels[i].nikud {
                    nikud.0 += 1;
                } else {
                    ok = false;
                }
            }
            if DAGESH_SET.contains(c) {
                dagesh.1 += 1;
                if gold.labels[i].dagesh == pred.labels[i].dagesh {
                    dagesh.0 += 1;
                } else {
                    ok = false;
                }
            }
            if c == 'ש' {
                sin.1 += 1;
                if gold.labels[i].sin == pred.labels[i].sin {
                    sin.0 += 1;
                } else {
                    ok = false;
                }
            }
            if ok {
                cha_correct += 1;
            }
        }
        dec_total += nikud.1 + dagesh.1 + sin.1;
        dec_correct += nikud.0 + dagesh.0 + sin.0;

        let mut wor_correct = 0usize;
        let mut voc_correct = 0usize;
        for word in &words {
            let mut exact = true;
            let mut pronounceable = true;
            for &i in word {
                let c = gold.plain[i];
                if NIKUD_SET.contains(c) && gold.labels[i].nikud != pred.labels[i].nikud {
                    exact = false;
                    if !voc.nikud_equivalent(gold.labels[i].nikud, pred.labels[i].nikud) {
                        pronounceable = false;
                    }
                }
                if DAGESH_SET.contains(c) && gold.labels[i].dagesh != pred.labels[i].dagesh {
                    exact = false;
                    if voc.dagesh_matters(c) {
                        pronounceable = false;
                    }
                }
                if c == 'ש' && gold.labels[i].sin != pred.labels[i].sin {
                    exact = false;
                    pronounceable = false;
                }
            }
            if exact {
                wor_correct += 1;
            }
            if pronounceable {
                voc_correct += 1;
            }
        }

        let frac = |c: usize, t: usize| if t == 0 { 1.0 } else { c as f64 / t as f64 };
        Ok(PairScore {
            dec: frac(dec_correct, dec_total),
            cha: frac(cha_correct, cha_total),
            wor: frac(wor_correct, words.len()),
            voc: frac(voc_correct, words.len()),
            counts: super::DecisionCount {
                total: dec_total,
                correct: dec_correct,
                nikud,
                dagesh,
                sin,
            },
        })
    }
}

pub use oracle::oracle_score;
