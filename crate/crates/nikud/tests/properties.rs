//! Property tests for the text layer and the metric oracle.

use proptest::prelude::*;

use nikud::hebrew::{
    self, eligibility, is_hebrew_letter, AnalysisMode, AnalyzedText, LetterLabel, Nikud,
    DAGESH_MARK, MASK, SHIN_DOT, SIN_DOT,
};
use nikud::metrics::{self, oracle, VocEquivalence};

const LETTERS: &str = "אבגדהוזחטיכךלמנןסעפצקרשתםףץ";

fn letter() -> impl Strategy<Value = char> {
    let chars: Vec<char> = LETTERS.chars().collect();
    prop::sample::select(chars)
}

fn label_for(c: char) -> impl Strategy<Value = LetterLabel> {
    let (n, d, s) = eligibility(c);
    let nikud = if n { (0u8..12).boxed() } else { Just(MASK).boxed() };
    let dagesh = if d { (0u8..2).boxed() } else { Just(MASK).boxed() };
    let sin = if s { (0u8..3).boxed() } else { Just(MASK).boxed() };
    (nikud, dagesh, sin).prop_map(|(nikud, dagesh, sin)| LetterLabel { nikud, dagesh, sin })
}

fn labeled_char() -> impl Strategy<Value = (char, LetterLabel)> {
    prop_oneof![
        4 => letter().prop_flat_map(|c| label_for(c).prop_map(move |l| (c, l))),
        1 => prop::sample::select(vec![' ', '.', ',', '!', '?', '1', 'a'])
            .prop_map(|c| (c, LetterLabel::MASKED)),
    ]
}

fn analyzed_text() -> impl Strategy<Value = AnalyzedText> {
    prop::collection::vec(labeled_char(), 0..60).prop_map(|pairs| {
        let (plain, labels) = pairs.into_iter().unzip();
        AnalyzedText { plain, labels }
    })
}

/// The combining marks of one letter, in an arbitrary order.
fn cluster_marks(label: &LetterLabel) -> Vec<char> {
    let mut marks = Vec::new();
    if label.dagesh == 1 {
        marks.push(DAGESH_MARK);
    }
    if label.sin == 1 {
        marks.push(SHIN_DOT);
    }
    if label.sin == 2 {
        marks.push(SIN_DOT);
    }
    if label.nikud != MASK {
        if let Some(m) = Nikud::from_id(label.nikud).and_then(Nikud::mark) {
            marks.push(m);
        }
    }
    marks
}

proptest! {
    #[test]
    fn round_trip_is_exact(text in analyzed_text()) {
        let pointed = hebrew::compose(&text).unwrap();
        let normalized = hebrew::normalize(&pointed);
        let analysis = hebrew::analyze(&normalized, AnalysisMode::Strict).unwrap();
        prop_assert!(analysis.violations.is_empty());
        prop_assert_eq!(hebrew::compose(&analysis.text).unwrap(), normalized);
    }

    #[test]
    fn analyze_recovers_the_labels(text in analyzed_text()) {
        let pointed = hebrew::compose(&text).unwrap();
        let analysis = hebrew::analyze(&pointed, AnalysisMode::Strict).unwrap();
        prop_assert_eq!(&analysis.text.plain, &text.plain);
        // a composed None nikud analyzes back to None, so labels match only
        // where the original letter was eligible (MASK stays MASK)
        prop_assert_eq!(&analysis.text.labels, &text.labels);
    }

    #[test]
    fn normalize_is_idempotent(text in analyzed_text()) {
        let pointed = hebrew::compose(&text).unwrap();
        let once = hebrew::normalize(&pointed);
        prop_assert_eq!(hebrew::normalize(&once), once);
    }

    #[test]
    fn mark_order_does_not_matter(
        text in analyzed_text(),
        perm_seed in 0usize..24,
    ) {
        // rebuild the string cluster by cluster with a permuted mark order
        let mut scrambled = String::new();
        for (c, l) in text.plain.iter().zip(&text.labels) {
            scrambled.push(*c);
            let mut marks = cluster_marks(l);
            if marks.len() > 1 {
                let k = perm_seed % marks.len();
                marks.rotate_left(k);
                if perm_seed % 2 == 1 {
                    marks.reverse();
                }
            }
            scrambled.extend(marks);
        }
        let canonical = hebrew::compose(&text).unwrap();
        prop_assert_eq!(
            hebrew::normalize(&scrambled),
            hebrew::normalize(&canonical)
        );
    }

    #[test]
    fn strip_removes_everything_compose_added(text in analyzed_text()) {
        let pointed = hebrew::compose(&text).unwrap();
        let plain: String = text.plain.iter().collect();
        prop_assert_eq!(hebrew::strip(&pointed), plain);
    }

    #[test]
    fn score_pair_matches_oracle(
        gold in analyzed_text(),
        flips in prop::collection::vec(any::<bool>(), 60),
    ) {
        let voc = VocEquivalence::default_table();
        // derive pred from gold by re-labeling flipped letters
        let mut pred = gold.clone();
        for (i, c) in gold.plain.iter().enumerate() {
            if is_hebrew_letter(*c) && flips[i % flips.len()] {
                let (n, d, s) = eligibility(*c);
                let bump = |v: u8, m: u8| (v + 1) % m;
                if n { pred.labels[i].nikud = bump(pred.labels[i].nikud, 12); }
                if d { pred.labels[i].dagesh = bump(pred.labels[i].dagesh, 2); }
                if s { pred.labels[i].sin = bump(pred.labels[i].sin, 3); }
            }
        }
        let fast = metrics::score_pair(&gold, &pred, &voc).unwrap();
        let slow = oracle::oracle_score(&gold, &pred, &voc).unwrap();
        prop_assert_eq!(fast.counts, slow.counts);
        prop_assert!((fast.dec - slow.dec).abs() < 1e-12);
        prop_assert!((fast.cha - slow.cha).abs() < 1e-12);
        prop_assert!((fast.wor - slow.wor).abs() < 1e-12);
        prop_assert!((fast.voc - slow.voc).abs() < 1e-12);
    }
}
