//! Prediction: undiacritized text in, diacritized text out. Residual
//! diacritics are stripped first, the characters are packed the same way
//! as at training time, and per-head argmax is taken under eligibility
//! masking so the output can never carry an illegal mark.

use crate::corpus::{self, PackedSequence};
use crate::hebrew::{
    self, eligibility, AnalysisMode, AnalyzedText, LetterLabel, MASK, SIN_NONE,
};
use crate::model::{self, Batch, CharVocab, Mode, ModelError, ModelParams};

#[derive(Debug, Clone, Copy)]
pub struct InferOptions {
    pub max_length: usize,
    pub batch_size: usize,
    /// When set, ש never stays undotted: if the sin head picks None the
    /// better of the two dots is used instead.
    pub force_shin_dot: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            max_length: 1024,
            batch_size: 32,
            force_shin_dot: false,
        }
    }
}

/// Sentence spans over a plain character sequence, same boundary rules as
/// corpus loading. Whitespace between spans is not covered by any span.
fn sentence_spans(plain: &[char], max_length: usize) -> Vec<(usize, usize)> {
    const FINAL: [char; 4] = ['.', '!', '?', ':'];
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < plain.len() {
        let boundary =
            FINAL.contains(&plain[i]) && plain.get(i + 1).is_none_or(|c| c.is_whitespace());
        if boundary {
            push_span(&mut spans, plain, start, i + 1, max_length);
            i += 1;
            while i < plain.len() && plain[i].is_whitespace() {
                i += 1;
            }
            start = i;
        } else {
            i += 1;
        }
    }
    push_span(&mut spans, plain, start, plain.len(), max_length);
    spans
}

fn push_span(
    spans: &mut Vec<(usize, usize)>,
    plain: &[char],
    start: usize,
    end: usize,
    max_length: usize,
) {
    let slice = &plain[start..end];
    let first = match slice.iter().position(|c| !c.is_whitespace()) {
        Some(f) => f,
        None => return,
    };
    let last = slice.iter().rposition(|c| !c.is_whitespace()).unwrap();
    let (start, end) = (start + first, start + last + 1);
    if end - start <= max_length {
        spans.push((start, end - start));
        return;
    }
    let window = &plain[start..start + max_length];
    let cut = window
        .iter()
        .rposition(|c| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(max_length);
    spans.push((start, cut));
    push_span(spans, plain, start + cut, end, max_length);
}

/// Predicts a [`LetterLabel`] for every input character. Output is aligned
/// 1:1 with the (normalized, stripped) input characters; ineligible heads
/// and non-letter positions are masked, so the result always composes.
pub fn predict_labels(
    params: &ModelParams,
    text: &str,
    opts: &InferOptions,
) -> Result<AnalyzedText, ModelError> {
    // strip-first: any residual diacritics are removed
    let analysis = hebrew::analyze(text, AnalysisMode::Lenient)
        .expect("lenient analysis is total");
    let plain = analysis.text.plain;
    if plain.is_empty() {
        return Ok(AnalyzedText {
            plain,
            labels: vec![],
        });
    }

    let mut labels = vec![LetterLabel::MASKED; plain.len()];
    let spans = sentence_spans(&plain, opts.max_length);
    let vocab = CharVocab::standard();
    let sentences: Vec<corpus::LabeledSentence> = spans
        .iter()
        .enumerate()
        .map(|(i, &(start, len))| {
            corpus::unlabeled_sentence(plain[start..start + len].to_vec(), i)
        })
        .collect();
    let packs = corpus::pack(&sentences, opts.max_length, &vocab)
        .map_err(|e| ModelError::ShapeMismatch(e.to_string()))?;

    for chunk in packs.chunks(opts.batch_size.max(1)) {
        let refs: Vec<&PackedSequence> = chunk.iter().collect();
        let batch = Batch::from_packs(&refs)?;
        let logits = model::forward(params, &batch, Mode::Eval)?;
        for (bi, p) in chunk.iter().enumerate() {
            for seg in &p.segments {
                let (span_start, _) = spans[seg.sentence];
                for k in 0..seg.len {
                    let li = seg.start + k;
                    let c = p.chars[li];
                    let global = span_start + k;
                    labels[global] = masked_argmax(&logits, bi, li, c, opts.force_shin_dot);
                }
            }
        }
    }

    Ok(AnalyzedText { plain, labels })
}

fn masked_argmax(
    logits: &model::HeadLogits,
    bi: usize,
    li: usize,
    c: char,
    force_shin_dot: bool,
) -> LetterLabel {
    let (can_nikud, can_dagesh, can_sin) = eligibility(c);
    let argmax = |a: &ndarray::Array3<f64>, from: usize| -> u8 {
        let k = a.dim().2;
        let mut best = from;
        let mut best_v = f64::NEG_INFINITY;
        for ki in from..k {
            let v = a[[bi, li, ki]];
            if v > best_v {
                best_v = v;
                best = ki;
            }
        }
        best as u8
    };
    let nikud = if can_nikud { argmax(&logits.nikud, 0) } else { MASK };
    let dagesh = if can_dagesh { argmax(&logits.dagesh, 0) } else { MASK };
    let sin = if can_sin {
        let s = argmax(&logits.sin, 0);
        if force_shin_dot && s == SIN_NONE {
            // choose between the two dots only
            argmax(&logits.sin, 1)
        } else {
            s
        }
    } else {
        MASK
    };
    LetterLabel { nikud, dagesh, sin }
}

/// End-to-end diacritization: predict labels, then re-compose marks onto
/// the stripped input. Stripping the output reproduces the stripped input.
pub fn diacritize(
    params: &ModelParams,
    text: &str,
    opts: &InferOptions,
) -> Result<String, ModelError> {
    let predicted = predict_labels(params, text, opts)?;
    hebrew::compose(&predicted)
        .map_err(|e| ModelError::ShapeMismatch(format!("internal: compose rejected prediction: {e}")))
}
