//! Metric formulas. Everything here is pure arithmetic over claim labels or
//! token sequences; judges supply the labels.

use serde::{Deserialize, Serialize};

use crate::text::{numbers, tokenize};

/// `num / den`, with `den == 0` defined as zero and reported as degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub fn new(num: usize, den: usize) -> Self {
        debug_assert!(num <= den);
        Self { num, den }
    }

    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.den == 0
    }
}

/// Supported answer claims over all answer claims.
pub fn faithfulness_from_labels(supported: &[bool]) -> Fraction {
    Fraction::new(supported.iter().filter(|s| **s).count(), supported.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// A zero denominator occurred and its component was set to 0.
    pub degenerate: bool,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision `tp/(tp+fp)`, recall `tp/(tp+fn)` and their harmonic mean.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> Prf {
    let p = Fraction::new(tp, tp + fp);
    let r = Fraction::new(tp, tp + fn_);
    Prf {
        precision: p.value(),
        recall: r.value(),
        f1: f1(p.value(), r.value()),
        tp,
        fp,
        fn_,
        degenerate: p.is_degenerate() || r.is_degenerate(),
    }
}

/// Claim-level counts: answer claims found in the reference are true
/// positives, the rest false positives; reference claims not found in the
/// answer are false negatives.
pub fn factual_from_labels(answer_in_reference: &[bool], reference_in_answer: &[bool]) -> Prf {
    let tp = answer_in_reference.iter().filter(|s| **s).count();
    let fp = answer_in_reference.len() - tp;
    let fn_ = reference_in_answer.iter().filter(|s| !**s).count();
    precision_recall_f1(tp, fp, fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rouge {
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn overlap_f(hits: usize, answer_len: usize, reference_len: usize) -> f64 {
    if answer_len == 0 || reference_len == 0 {
        return 0.0;
    }
    f1(
        hits as f64 / answer_len as f64,
        hits as f64 / reference_len as f64,
    )
}

/// ROUGE-1 (clipped unigram overlap) and ROUGE-L (longest common
/// subsequence) F-measures on the numeric-preserving tokenizer.
pub fn rouge(answer: &str, reference: &str) -> Rouge {
    let a = tokenize(answer);
    let r = tokenize(reference);
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for t in &r {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut hits = 0;
    for t in &a {
        if let Some(c) = counts.get_mut(t.as_str()).filter(|c| **c > 0) {
            *c -= 1;
            hits += 1;
        }
    }
    Rouge {
        rouge1_f: overlap_f(hits, a.len(), r.len()),
        rouge_l_f: overlap_f(lcs_len(&a, &r), a.len(), r.len()),
    }
}

fn within(a: f64, b: f64, tolerance: f64) -> bool {
    (a - b).abs() <= tolerance * b.abs()
}

/// True when the reference states at least one number and every one of them
/// appears in the answer within `tolerance` (relative), directly or as a
/// fraction/percentage of it.
pub fn numeric_match(answer: &str, reference: &str, tolerance: f64) -> bool {
    let want = numbers(reference);
    let have = numbers(answer);
    !want.is_empty()
        && want.iter().all(|w| {
            have.iter().any(|h| {
                within(*h, *w, tolerance)
                    || within(h * 100.0, *w, tolerance)
                    || within(*h, w * 100.0, tolerance)
            })
        })
}

/// `A/R − A`; `None` when `R` is zero.
pub fn hallucination_rate(accuracy: f64, reliability: f64) -> Option<f64> {
    (reliability != 0.0).then(|| accuracy / reliability - accuracy)
}
