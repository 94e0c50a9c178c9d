//! Benchmark records and human judgments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::hallucination_rate;
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    #[serde(default)]
    pub id: String,
    pub question: String,
    /// Reference answer.
    pub answer: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub ticker: String,
    #[serde(default, rename = "filed_on", alias = "filed on")]
    pub filed_on: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_ids: Option<Vec<String>>,
}

impl QARecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.answer.trim().is_empty() {
            return Err("reference answer is empty".into());
        }
        Ok(())
    }
}

/// Parses JSON Lines. Blank lines are skipped; records without an `id` get
/// `r{line}`.
pub fn parse_dataset(text: &str) -> Result<Vec<QARecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut rec: QARecord = serde_json::from_str(line).map_err(|e| EvalError::Dataset {
            line: lineno,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| EvalError::Dataset {
            line: lineno,
            message,
        })?;
        if rec.id.trim().is_empty() {
            rec.id = format!("r{lineno}");
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QARecord>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub record_id: String,
    pub verdict: Verdict,
    pub confident: bool,
    /// Partial credit for multi-part questions; defaults to 1 for correct
    /// and 0 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credit: Option<f64>,
}

impl HumanJudgment {
    pub fn validate(&self) -> Result<(), String> {
        if self.verdict == Verdict::Refused && self.confident {
            return Err(format!(
                "{}: a refused answer cannot be confident",
                self.record_id
            ));
        }
        if let Some(c) = self.credit {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("{}: credit {c} outside [0, 1]", self.record_id));
            }
            if self.verdict == Verdict::Refused && c > 0.0 {
                return Err(format!(
                    "{}: a refused answer earns no credit",
                    self.record_id
                ));
            }
        }
        Ok(())
    }

    pub fn credit(&self) -> f64 {
        self.credit.unwrap_or(if self.verdict == Verdict::Correct {
            1.0
        } else {
            0.0
        })
    }
}

pub fn parse_judgments(text: &str) -> Result<Vec<HumanJudgment>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let j: HumanJudgment = serde_json::from_str(line).map_err(|e| EvalError::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        j.validate().map_err(|message| EvalError::Dataset {
            line: i + 1,
            message,
        })?;
        out.push(j);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanRollup {
    pub total: usize,
    pub accuracy: f64,
    /// Mean credit over confident answers; `None` when none were confident.
    pub reliability: Option<f64>,
    /// `A/R − A`; `None` when reliability is undefined or zero.
    pub hallucination_rate: Option<f64>,
}

pub fn human_eval_rollup(judgments: &[HumanJudgment]) -> Result<HumanRollup, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::Invalid("no judgments".into()));
    }
    for j in judgments {
        j.validate().map_err(EvalError::Invalid)?;
    }
    let total = judgments.len();
    let accuracy = judgments.iter().map(HumanJudgment::credit).sum::<f64>() / total as f64;
    let confident: Vec<&HumanJudgment> = judgments.iter().filter(|j| j.confident).collect();
    let reliability = (!confident.is_empty())
        .then(|| confident.iter().map(|j| j.credit()).sum::<f64>() / confident.len() as f64);
    Ok(HumanRollup {
        total,
        accuracy,
        reliability,
        hallucination_rate: reliability.and_then(|r| hallucination_rate(accuracy, r)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(id: &str, verdict: Verdict, confident: bool) -> HumanJudgment {
        HumanJudgment {
            record_id: id.into(),
            verdict,
            confident,
            credit: None,
        }
    }

    #[test]
    fn spaced_filed_on_key_loads() {
        let line = r#"{"question": "Growth of fair value per share?", "answer": "13.3%", "context": "[45.45 -40.13]/40.13 = 13.3%", "ticker": "AWK", "filed on": "31 December 2015"}"#;
        let recs = parse_dataset(&format!("{line}\n\n{line}\n")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].filed_on, "31 December 2015");
        assert_eq!(recs[0].id, "r1");
        assert_eq!(recs[1].id, "r3");
        let back: QARecord =
            serde_json::from_str(&serde_json::to_string(&recs[0]).unwrap()).unwrap();
        assert_eq!(back, recs[0]);
    }

    #[test]
    fn empty_answer_rejected_with_line() {
        let err = parse_dataset(
            "{\"question\": \"q\", \"answer\": \"a\"}\n{\"question\": \"q\", \"answer\": \"\"}",
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::Dataset { line: 2, .. }));
    }

    #[test]
    fn rollups() {
        let perfect = human_eval_rollup(&[
            j("a", Verdict::Correct, true),
            j("b", Verdict::Correct, true),
        ])
        .unwrap();
        assert_eq!(
            (
                perfect.accuracy,
                perfect.reliability,
                perfect.hallucination_rate
            ),
            (1.0, Some(1.0), Some(0.0))
        );
        let refused = human_eval_rollup(&[j("a", Verdict::Refused, false)]).unwrap();
        assert_eq!(
            (
                refused.accuracy,
                refused.reliability,
                refused.hallucination_rate
            ),
            (0.0, None, None)
        );
        let mixed = human_eval_rollup(&[
            j("a", Verdict::Correct, true),
            j("b", Verdict::Incorrect, true),
            j("c", Verdict::Refused, false),
            HumanJudgment {
                credit: Some(0.5),
                ..j("d", Verdict::Correct, false)
            },
        ])
        .unwrap();
        assert!((mixed.accuracy - 1.5 / 4.0).abs() < 1e-15);
        assert_eq!(mixed.reliability, Some(0.5));
        assert!((mixed.hallucination_rate.unwrap() - (0.375 / 0.5 - 0.375)).abs() < 1e-15);
    }

    #[test]
    fn refused_and_confident_is_rejected() {
        assert!(human_eval_rollup(&[j("a", Verdict::Refused, true)]).is_err());
        assert!(
            parse_judgments(r#"{"record_id": "a", "verdict": "refused", "confident": true}"#)
                .is_err()
        );
        assert!(human_eval_rollup(&[]).is_err());
    }
}
