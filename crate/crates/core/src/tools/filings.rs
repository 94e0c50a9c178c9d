//! Filing lookup by accession number. Only a fixture store ships; a live
//! EDGAR client implements [`FilingStore`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ParamSpec, ParamType, Tool, ToolArgs, ToolError, ToolSpec};

pub const FIXTURE: &str = include_str!("../../fixtures/edgar.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filing {
    pub accession: String,
    pub company: String,
    pub ticker: String,
    pub form: String,
    pub filed_on: String,
    pub text: String,
}

pub trait FilingStore: Send + Sync {
    fn fetch(&self, accession: &str) -> Result<Filing, ToolError>;
}

#[derive(Debug, Clone)]
pub struct FixtureFilings {
    by_accession: BTreeMap<String, Filing>,
}

impl FixtureFilings {
    pub fn builtin() -> Self {
        let filings: Vec<Filing> =
            serde_json::from_str(FIXTURE).expect("bundled filings fixture parses");
        Self {
            by_accession: filings
                .into_iter()
                .map(|f| (f.accession.clone(), f))
                .collect(),
        }
    }
}

impl FilingStore for FixtureFilings {
    fn fetch(&self, accession: &str) -> Result<Filing, ToolError> {
        self.by_accession
            .get(accession)
            .cloned()
            .ok_or_else(|| ToolError::Failed(format!("no filing with accession `{accession}`")))
    }
}

pub struct FilingsTool {
    store: Arc<dyn FilingStore>,
}

impl FilingsTool {
    pub fn new(store: Arc<dyn FilingStore>) -> Self {
        Self { store }
    }

    pub fn fixture() -> Self {
        Self::new(Arc::new(FixtureFilings::builtin()))
    }
}

impl Tool for FilingsTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "edgar_filing".into(),
            description:
                "Fetch an SEC filing by accession number (company, form, filing date and text)."
                    .into(),
            params: vec![ParamSpec::required("accession", ParamType::String)],
        }
    }

    fn call(&self, args: &ToolArgs) -> Result<Value, ToolError> {
        let accession = args["accession"].as_str().unwrap_or_default().trim();
        let filing = self.store.fetch(accession)?;
        serde_json::to_value(filing).map_err(|e| ToolError::Failed(e.to_string()))
    }
}
