//! Claim extraction and support labelling, and the judged metrics built on
//! them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::metrics::{
    factual_from_labels, faithfulness_from_labels, precision_recall_f1, Fraction, Prf,
};
use super::EvalError;
use crate::gateway::{dot, Gateway, GenerationRequest, Message, ModelRole};
use crate::prompts;
use crate::text::normalize;

pub trait Judge: Send + Sync {
    /// Atomic claims of `text`, in order.
    fn claims(&self, text: &str) -> Result<Vec<String>, EvalError>;
    /// One label per claim: is it supported by `evidence`?
    fn support(&self, claims: &[String], evidence: &str) -> Result<Vec<bool>, EvalError>;
}

/// Judge backed by the gateway's judge role. With the mock gateway this
/// splits sentences and labels by normalized substring match.
#[derive(Debug, Clone)]
pub struct GatewayJudge {
    gateway: Gateway,
}

impl GatewayJudge {
    pub fn new(gateway: Gateway) -> Self {
        Self { gateway }
    }

    fn ask(&self, system: &str, user: String) -> Result<Value, EvalError> {
        let req = GenerationRequest::new(
            ModelRole::Judge,
            vec![Message::system(system), Message::user(user)],
        )
        .temperature(0.0)
        .schema_constrained();
        let text = self
            .gateway
            .generate(&req)
            .map_err(|e| EvalError::Judge(e.to_string()))?
            .text;
        let (start, end) = match (text.find('['), text.rfind(']')) {
            (Some(s), Some(e)) if s < e => (s, e + 1),
            _ => {
                return Err(EvalError::Judge(format!(
                    "judge reply has no JSON array: {text}"
                )))
            }
        };
        serde_json::from_str(&text[start..end])
            .map_err(|e| EvalError::Judge(format!("judge reply: {e}")))
    }
}

impl Judge for GatewayJudge {
    fn claims(&self, text: &str) -> Result<Vec<String>, EvalError> {
        let v = self.ask(
            prompts::JUDGE_CLAIMS,
            format!("{}{text}", prompts::TEXT_PREFIX),
        )?;
        v.as_array()
            .ok_or_else(|| EvalError::Judge("claims must be an array".into()))?
            .iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| EvalError::Judge("claims must be strings".into()))
            })
            .collect()
    }

    fn support(&self, claims: &[String], evidence: &str) -> Result<Vec<bool>, EvalError> {
        if claims.is_empty() {
            return Ok(Vec::new());
        }
        let v = self.ask(
            prompts::JUDGE_SUPPORT,
            json!({"claims": claims, "evidence": evidence}).to_string(),
        )?;
        let labels: Vec<bool> = v
            .as_array()
            .ok_or_else(|| EvalError::Judge("labels must be an array".into()))?
            .iter()
            .map(|b| {
                b.as_bool()
                    .ok_or_else(|| EvalError::Judge("labels must be booleans".into()))
            })
            .collect::<Result<_, _>>()?;
        if labels.len() != claims.len() {
            return Err(EvalError::Judge(format!(
                "judge returned {} labels for {} claims",
                labels.len(),
                claims.len()
            )));
        }
        Ok(labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimSource {
    Answer,
    Reference,
    Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub claims: Vec<String>,
    pub source: ClaimSource,
}

/// Claims of `text`, deduplicated on their normalized form.
pub fn extract_claims(
    text: &str,
    source: ClaimSource,
    judge: &dyn Judge,
) -> Result<ClaimSet, EvalError> {
    if text.trim().is_empty() {
        return Ok(ClaimSet {
            claims: Vec::new(),
            source,
        });
    }
    let mut seen = BTreeSet::new();
    let claims = judge
        .claims(text)?
        .into_iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty() && seen.insert(normalize(c)))
        .collect();
    Ok(ClaimSet { claims, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub score: f64,
    pub supported: Fraction,
    pub claims: Vec<String>,
    pub labels: Vec<bool>,
}

pub fn faithfulness(
    answer: &str,
    context: &str,
    judge: &dyn Judge,
) -> Result<Faithfulness, EvalError> {
    let claims = extract_claims(answer, ClaimSource::Answer, judge)?.claims;
    let labels = judge.support(&claims, context)?;
    let supported = faithfulness_from_labels(&labels);
    Ok(Faithfulness {
        score: supported.value(),
        supported,
        claims,
        labels,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// `TP / (TP + FN)` over reference claims found in the answer.
    #[default]
    Claim,
    /// Fraction of reference claims supported by the retrieved context.
    Context,
}

pub fn factual_correctness(
    answer: &str,
    reference: &str,
    judge: &dyn Judge,
) -> Result<Prf, EvalError> {
    let a = extract_claims(answer, ClaimSource::Answer, judge)?.claims;
    let r = extract_claims(reference, ClaimSource::Reference, judge)?.claims;
    let a_in_r = judge.support(&a, reference)?;
    let r_in_a = judge.support(&r, answer)?;
    Ok(factual_from_labels(&a_in_r, &r_in_a))
}

/// Reference claims supported by `context`, as a recall figure.
pub fn context_recall(
    reference: &str,
    context: &str,
    judge: &dyn Judge,
) -> Result<Fraction, EvalError> {
    let r = extract_claims(reference, ClaimSource::Reference, judge)?.claims;
    Ok(faithfulness_from_labels(&judge.support(&r, context)?))
}

/// Factual correctness with recall replaced by context recall.
pub fn factual_with_context_recall(
    answer: &str,
    reference: &str,
    context: &str,
    judge: &dyn Judge,
) -> Result<Prf, EvalError> {
    let mut prf = factual_correctness(answer, reference, judge)?;
    let recall = context_recall(reference, context, judge)?;
    let p = precision_recall_f1(prf.tp, prf.fp, 0);
    prf.recall = recall.value();
    prf.f1 = super::metrics::f1(p.precision, prf.recall);
    prf.degenerate |= recall.is_degenerate();
    Ok(prf)
}

/// Cosine similarity of the two texts' embeddings.
pub fn cosine_score(answer: &str, reference: &str, gateway: &Gateway) -> Result<f64, EvalError> {
    if answer.trim().is_empty() || reference.trim().is_empty() {
        return Err(EvalError::Embedding(
            "cosine needs two non-empty texts".into(),
        ));
    }
    let v = gateway
        .embed(&[answer.to_string(), reference.to_string()])
        .map_err(|e| EvalError::Embedding(e.to_string()))?;
    Ok(dot(v[0].values(), v[1].values()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{HashEmbedder, MOCK_DIM};

    fn mock() -> GatewayJudge {
        GatewayJudge::new(Gateway::mock())
    }

    struct Fixed(Vec<bool>);

    impl Judge for Fixed {
        fn claims(&self, text: &str) -> Result<Vec<String>, EvalError> {
            Ok(crate::text::split_sentences(text))
        }

        fn support(&self, claims: &[String], _: &str) -> Result<Vec<bool>, EvalError> {
            Ok(self.0.iter().copied().take(claims.len()).collect())
        }
    }

    #[test]
    fn claims_split_and_dedup() {
        let j = mock();
        assert!(extract_claims("", ClaimSource::Answer, &j)
            .unwrap()
            .claims
            .is_empty());
        assert_eq!(
            extract_claims("A. B.", ClaimSource::Answer, &j)
                .unwrap()
                .claims
                .len(),
            2
        );
        assert_eq!(
            extract_claims("Revenue rose. revenue  rose.", ClaimSource::Answer, &j)
                .unwrap()
                .claims
                .len(),
            1
        );
    }

    #[test]
    fn faithfulness_with_fixed_labels() {
        let f = faithfulness("a. b. c. d.", "ctx", &Fixed(vec![true, false, false, true])).unwrap();
        assert_eq!(f.score, 0.5);
        let all = faithfulness(
            "Revenue was 5. Costs were 3.",
            "Revenue was 5. Costs were 3.",
            &mock(),
        )
        .unwrap();
        assert_eq!(all.score, 1.0);
    }

    #[test]
    fn factual_correctness_with_mock() {
        let j = mock();
        let same = factual_correctness(
            "Revenue was 5. Costs were 3.",
            "Revenue was 5. Costs were 3.",
            &j,
        )
        .unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let half =
            factual_correctness("Revenue was 5. Sales doubled.", "Revenue was 5.", &j).unwrap();
        assert_eq!((half.tp, half.fp, half.fn_), (1, 1, 0));
        assert!((half.f1 - 2.0 / 3.0).abs() < 1e-15);
        let none = factual_correctness("Apples are red.", "Revenue was 5.", &j).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn context_recall_mode() {
        let j = mock();
        let prf = factual_with_context_recall(
            "Revenue was 5.",
            "Revenue was 5. Costs were 3.",
            "Costs were 3.",
            &j,
        )
        .unwrap();
        assert_eq!(prf.precision, 1.0);
        assert_eq!(prf.recall, 0.5);
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let gw = Gateway::mock();
        assert!(
            (cosine_score("net revenue 2015", "net revenue 2015", &gw).unwrap() - 1.0).abs() < 1e-6
        );
        let h = HashEmbedder::new(MOCK_DIM);
        let (a, b) = ("alpha", "omega");
        assert_ne!(h.bucket(a), h.bucket(b));
        assert_eq!(cosine_score(a, b, &gw).unwrap(), 0.0);
        assert!(cosine_score("", "x", &gw).is_err());
    }

    #[test]
    fn judge_length_mismatch_is_an_error() {
        struct Short;
        impl Judge for Short {
            fn claims(&self, _: &str) -> Result<Vec<String>, EvalError> {
                Ok(vec!["x".into()])
            }
            fn support(&self, _: &[String], _: &str) -> Result<Vec<bool>, EvalError> {
                Err(EvalError::Judge("down".into()))
            }
        }
        assert!(faithfulness("x", "y", &Short).is_err());
    }
}
