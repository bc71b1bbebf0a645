//! Unicode model of Hebrew letters and diacritics: normalization, label
//! extraction (analyze), re-composition, and eligibility rules.
//!
//! Diacritization is treated as three per-letter classification problems:
//! a vowel point (nikud), a dagesh dot, and the shin/sin dot. Each base
//! letter may carry at most one mark per class, and only letters in the
//! class's eligibility set may carry one at all.

use std::fmt;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Reserved label id for positions outside a head's domain (ineligible
/// letters, pass-through characters, padding). Excluded from loss and
/// metrics everywhere.
pub const MASK: u8 = u8::MAX;

/// Number of nikud classes (including None).
pub const NIKUD_CLASSES: usize = 12;
/// Number of dagesh classes (including None).
pub const DAGESH_CLASSES: usize = 2;
/// Number of sin classes (including None).
pub const SIN_CLASSES: usize = 3;

/// Vowel point classes. `None` means an eligible letter carries no vowel.
///
/// U+05BA (holam haser for vav) is folded into `Holam`; the distinction is
/// presentational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Nikud {
    None = 0,
    Sheva = 1,
    HatafSegol = 2,
    HatafPatah = 3,
    HatafQamats = 4,
    Hiriq = 5,
    Tsere = 6,
    Segol = 7,
    Patah = 8,
    Qamats = 9,
    Holam = 10,
    Qubuts = 11,
}

impl Nikud {
    pub fn from_mark(c: char) -> Option<Nikud> {
        Some(match c {
            '\u{05B0}' => Nikud::Sheva,
            '\u{05B1}' => Nikud::HatafSegol,
            '\u{05B2}' => Nikud::HatafPatah,
            '\u{05B3}' => Nikud::HatafQamats,
            '\u{05B4}' => Nikud::Hiriq,
            '\u{05B5}' => Nikud::Tsere,
            '\u{05B6}' => Nikud::Segol,
            '\u{05B7}' => Nikud::Patah,
            '\u{05B8}' => Nikud::Qamats,
            '\u{05B9}' | '\u{05BA}' => Nikud::Holam,
            '\u{05BB}' => Nikud::Qubuts,
            _ => return None,
        })
    }

    pub fn from_id(id: u8) -> Option<Nikud> {
        if (id as usize) < NIKUD_CLASSES {
            // repr(u8) with dense ids starting at 0
            Some(unsafe { std::mem::transmute::<u8, Nikud>(id) })
        } else {
            None
        }
    }

    /// The combining mark for this class, or `None` for the bare class.
    pub fn mark(self) -> Option<char> {
        Some(match self {
            Nikud::None => return None,
            Nikud::Sheva => '\u{05B0}',
            Nikud::HatafSegol => '\u{05B1}',
            Nikud::HatafPatah => '\u{05B2}',
            Nikud::HatafQamats => '\u{05B3}',
            Nikud::Hiriq => '\u{05B4}',
            Nikud::Tsere => '\u{05B5}',
            Nikud::Segol => '\u{05B6}',
            Nikud::Patah => '\u{05B7}',
            Nikud::Qamats => '\u{05B8}',
            Nikud::Holam => '\u{05B9}',
            Nikud::Qubuts => '\u{05BB}',
        })
    }
}

/// Dagesh mark (U+05BC). Also covers mappiq on ה and the shuruk dot on ו.
pub const DAGESH_MARK: char = '\u{05BC}';
/// Shin dot (U+05C1), upper right, selects /ʃ/.
pub const SHIN_DOT: char = '\u{05C1}';
/// Sin dot (U+05C2), upper left, selects /s/.
pub const SIN_DOT: char = '\u{05C2}';

/// Sin-head class ids.
pub const SIN_NONE: u8 = 0;
pub const SIN_SHIN_DOT: u8 = 1;
pub const SIN_SIN_DOT: u8 = 2;

/// Dagesh-head class ids.
pub const DAGESH_NONE: u8 = 0;
pub const DAGESH_PRESENT: u8 = 1;

const ALEF: char = '\u{05D0}';
const TAV: char = '\u{05EA}';
pub const SHIN: char = '\u{05E9}';
const FINAL_KAF: char = '\u{05DA}';
const FINAL_MEM: char = '\u{05DD}';
#[cfg(test)]
const FINAL_NUN: char = '\u{05DF}';
const FINAL_PE: char = '\u{05E3}';
const FINAL_TSADI: char = '\u{05E5}';

/// True for any code point in the Hebrew letter block (including finals).
pub fn is_hebrew_letter(c: char) -> bool {
    (ALEF..=TAV).contains(&c)
}

/// Letters that may carry a vowel point: the 22 non-final letters plus
/// final kaf and final nun. Final mem, pe, and tsadi are excluded.
pub fn nikud_eligible(c: char) -> bool {
    is_hebrew_letter(c) && !matches!(c, FINAL_MEM | FINAL_PE | FINAL_TSADI)
}

/// Letters that may carry a dagesh: בגדהוזטיכלמנספצקשת plus finals ך and ף.
pub fn dagesh_eligible(c: char) -> bool {
    matches!(
        c,
        '\u{05D1}' // bet
            | '\u{05D2}' // gimel
            | '\u{05D3}' // dalet
            | '\u{05D4}' // he
            | '\u{05D5}' // vav
            | '\u{05D6}' // zayin
            | '\u{05D8}' // tet
            | '\u{05D9}' // yod
            | '\u{05DB}' // kaf
            | '\u{05DC}' // lamed
            | '\u{05DE}' // mem
            | '\u{05E0}' // nun
            | '\u{05E1}' // samekh
            | '\u{05E4}' // pe
            | '\u{05E6}' // tsadi
            | '\u{05E7}' // qof
            | '\u{05E9}' // shin
            | '\u{05EA}' // tav
            | FINAL_KAF
            | FINAL_PE
    )
}

/// Only ש takes the shin/sin dot.
pub fn sin_eligible(c: char) -> bool {
    c == SHIN
}

/// Per-character eligibility triple (nikud, dagesh, sin). Total over all
/// characters; non-Hebrew input yields all false.
pub fn eligibility(c: char) -> (bool, bool, bool) {
    (nikud_eligible(c), dagesh_eligible(c), sin_eligible(c))
}

/// The gold or predicted diacritic triple for one character position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LetterLabel {
    pub nikud: u8,
    pub dagesh: u8,
    pub sin: u8,
}

impl LetterLabel {
    /// All three heads masked: pass-through characters and padding.
    pub const MASKED: LetterLabel = LetterLabel {
        nikud: MASK,
        dagesh: MASK,
        sin: MASK,
    };

    /// The label a bare (unmarked) occurrence of `c` receives: class None
    /// on each eligible head, mask elsewhere.
    pub fn bare(c: char) -> LetterLabel {
        let (n, d, s) = eligibility(c);
        LetterLabel {
            nikud: if n { Nikud::None as u8 } else { MASK },
            dagesh: if d { DAGESH_NONE } else { MASK },
            sin: if s { SIN_NONE } else { MASK },
        }
    }
}

/// A character sequence with aligned per-position labels. Non-letter
/// positions carry [`LetterLabel::MASKED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzedText {
    pub plain: Vec<char>,
    pub labels: Vec<LetterLabel>,
}

impl AnalyzedText {
    pub fn len(&self) -> usize {
        self.plain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plain.is_empty()
    }

    pub fn plain_string(&self) -> String {
        self.plain.iter().collect()
    }
}

/// A mark found on a letter that cannot carry it (or on a non-letter).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Character index into the plain sequence (0-based).
    pub position: usize,
    /// The offending combining mark.
    pub mark: char,
    /// The base character it sat on.
    pub letter: char,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "U+{:04X} on {}", self.mark as u32, self.letter)
    }
}

#[derive(Debug, Error)]
pub enum HebrewError {
    #[error("mark U+{mark:04X} on ineligible letter '{letter}' at position {position}")]
    StrictModeViolation {
        position: usize,
        mark: u32,
        letter: char,
    },
    #[error("label class {class} on head {head} at ineligible position {position} ('{letter}')")]
    IllegalLabel {
        position: usize,
        head: &'static str,
        class: u8,
        letter: char,
    },
}

/// Lenient analysis drops stray marks and records them; strict analysis
/// fails on the first one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnalysisMode {
    #[default]
    Lenient,
    Strict,
}

fn is_cantillation(c: char) -> bool {
    ('\u{0591}'..='\u{05AF}').contains(&c)
}

/// Hebrew points we keep through normalization.
fn is_inventory_mark(c: char) -> bool {
    matches!(c, '\u{05B0}'..='\u{05BC}' | SHIN_DOT | SIN_DOT)
}

/// Hebrew combining marks outside the inventory, stripped by `normalize`:
/// cantillation, meteg, rafe, and the points we do not model (upper/lower
/// dot, qamats qatan).
fn is_stripped_mark(c: char) -> bool {
    is_cantillation(c)
        || matches!(
            c,
            '\u{05BD}' // meteg
            | '\u{05BF}' // rafe
            | '\u{05C4}' // upper dot
            | '\u{05C5}' // lower dot
            | '\u{05C7}' // qamats qatan
        )
}

/// Canonical normalization for the pipeline. Total over arbitrary text.
///
/// Decomposes (NFD, which also unpacks the precomposed presentation forms
/// U+FB1D..U+FB4E and sorts marks by combining class), strips marks we do
/// not model, and folds U+05BA into U+05B9. Everything that is not a
/// stripped Hebrew mark passes through verbatim.
pub fn normalize(raw: &str) -> String {
    raw.nfd()
        .filter(|&c| !is_stripped_mark(c))
        .map(|c| if c == '\u{05BA}' { '\u{05B9}' } else { c })
        .collect()
}

/// Result of [`analyze`]: aligned labels plus any lenient-mode violations.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub text: AnalyzedText,
    pub violations: Vec<Violation>,
}

/// Groups each base character with its trailing combining marks and maps
/// the marks to label classes. Input should already be [`normalize`]d;
/// un-normalized input is re-normalized first.
pub fn analyze(text: &str, mode: AnalysisMode) -> Result<Analysis, HebrewError> {
    let normalized = normalize(text);
    let mut plain: Vec<char> = Vec::new();
    let mut labels: Vec<LetterLabel> = Vec::new();
    let mut violations: Vec<Violation> = Vec::new();

    for c in normalized.chars() {
        if is_inventory_mark(c) {
            let (pos, base) = match plain.last() {
                Some(&b) => (plain.len() - 1, b),
                None => {
                    // Mark with no base letter: drop or fail.
                    match mode {
                        AnalysisMode::Strict => {
                            return Err(HebrewError::StrictModeViolation {
                                position: 0,
                                mark: c as u32,
                                letter: '\u{0}',
                            })
                        }
                        AnalysisMode::Lenient => {
                            violations.push(Violation {
                                position: 0,
                                mark: c,
                                letter: '\u{0}',
                            });
                            continue;
                        }
                    }
                }
            };
            let label = labels.last_mut().expect("labels aligned with plain");
            let legal = if c == DAGESH_MARK {
                if dagesh_eligible(base) {
                    label.dagesh = DAGESH_PRESENT;
                    true
                } else {
                    false
                }
            } else if c == SHIN_DOT || c == SIN_DOT {
                if sin_eligible(base) {
                    label.sin = if c == SHIN_DOT { SIN_SHIN_DOT } else { SIN_SIN_DOT };
                    true
                } else {
                    false
                }
            } else {
                let class = Nikud::from_mark(c).expect("inventory mark");
                if nikud_eligible(base) {
                    label.nikud = class as u8;
                    true
                } else {
                    false
                }
            };
            if !legal {
                match mode {
                    AnalysisMode::Strict => {
                        return Err(HebrewError::StrictModeViolation {
                            position: pos,
                            mark: c as u32,
                            letter: base,
                        })
                    }
                    AnalysisMode::Lenient => violations.push(Violation {
                        position: pos,
                        mark: c,
                        letter: base,
                    }),
                }
            }
        } else {
            plain.push(c);
            labels.push(if is_hebrew_letter(c) {
                LetterLabel::bare(c)
            } else {
                LetterLabel::MASKED
            });
        }
    }

    Ok(Analysis {
        text: AnalyzedText { plain, labels },
        violations,
    })
}

/// Inverse of [`analyze`]: re-emits each base character followed by its
/// marks, serialized in canonical composed form. Mask on an eligible head
/// is treated as None; a non-mask class on an ineligible head is an error.
pub fn compose(analyzed: &AnalyzedText) -> Result<String, HebrewError> {
    debug_assert_eq!(analyzed.plain.len(), analyzed.labels.len());
    let mut out = String::with_capacity(analyzed.plain.len() * 2);
    for (pos, (&c, label)) in analyzed.plain.iter().zip(&analyzed.labels).enumerate() {
        out.push(c);
        let (can_nikud, can_dagesh, can_sin) = eligibility(c);
        if label.dagesh != MASK && label.dagesh != DAGESH_NONE {
            if !can_dagesh {
                return Err(HebrewError::IllegalLabel {
                    position: pos,
                    head: "dagesh",
                    class: label.dagesh,
                    letter: c,
                });
            }
            out.push(DAGESH_MARK);
        }
        if label.sin != MASK && label.sin != SIN_NONE {
            if !can_sin {
                return Err(HebrewError::IllegalLabel {
                    position: pos,
                    head: "sin",
                    class: label.sin,
                    letter: c,
                });
            }
            out.push(if label.sin == SIN_SHIN_DOT { SHIN_DOT } else { SIN_DOT });
        }
        if label.nikud != MASK && label.nikud != Nikud::None as u8 {
            if !can_nikud {
                return Err(HebrewError::IllegalLabel {
                    position: pos,
                    head: "nikud",
                    class: label.nikud,
                    letter: c,
                });
            }
            let mark = Nikud::from_id(label.nikud)
                .and_then(Nikud::mark)
                .expect("non-mask nikud class has a mark");
            out.push(mark);
        }
    }
    // NFC sorts the marks into canonical order; Hebrew letter+mark pairs
    // are composition-excluded so the sequence stays decomposed.
    Ok(out.nfc().collect())
}

/// Removes all modeled diacritics, keeping base characters.
pub fn strip(text: &str) -> String {
    normalize(text)
        .chars()
        .filter(|&c| !is_inventory_mark(c))
        .collect()
}
