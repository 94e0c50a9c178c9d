//! Exchange rates and daily stock prices, from bundled fixtures or the
//! Alpha Vantage API.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ParamSpec, ParamType, Tool, ToolArgs, ToolError, ToolSpec};

pub const FX_FIXTURE: &str = include_str!("../../fixtures/fx_rates.json");
pub const MARKET_FIXTURE: &str = include_str!("../../fixtures/market_data.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxQuote {
    pub base: String,
    pub quote: String,
    pub rate: f64,
    pub as_of: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyClose {
    pub date: String,
    pub close: f64,
}

pub trait FxProvider: Send + Sync {
    fn rate(&self, base: &str, quote: &str) -> Result<FxQuote, ToolError>;
}

pub trait MarketProvider: Send + Sync {
    /// Daily closes in ascending date order.
    fn daily(&self, ticker: &str) -> Result<Vec<DailyClose>, ToolError>;
}

/// Rates derived from one table of units-per-USD, so every pair and its
/// inverse are exact reciprocals.
#[derive(Debug, Clone, Deserialize)]
pub struct FixtureFx {
    as_of: String,
    per_usd: BTreeMap<String, f64>,
}

impl FixtureFx {
    pub fn builtin() -> Self {
        serde_json::from_str(FX_FIXTURE).expect("bundled fx fixture parses")
    }
}

impl FxProvider for FixtureFx {
    fn rate(&self, base: &str, quote: &str) -> Result<FxQuote, ToolError> {
        let lookup = |c: &str| {
            self.per_usd
                .get(c)
                .copied()
                .ok_or_else(|| ToolError::Failed(format!("unknown currency pair {base}/{quote}")))
        };
        let (b, q) = (lookup(base)?, lookup(quote)?);
        Ok(FxQuote {
            base: base.into(),
            quote: quote.into(),
            rate: q / b,
            as_of: self.as_of.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FixtureMarket {
    series: BTreeMap<String, Vec<DailyClose>>,
}

impl FixtureMarket {
    pub fn builtin() -> Self {
        let mut series: BTreeMap<String, Vec<DailyClose>> =
            serde_json::from_str(MARKET_FIXTURE).expect("bundled market fixture parses");
        for s in series.values_mut() {
            s.sort_by(|a, b| a.date.cmp(&b.date));
        }
        Self { series }
    }
}

impl MarketProvider for FixtureMarket {
    fn daily(&self, ticker: &str) -> Result<Vec<DailyClose>, ToolError> {
        self.series
            .get(ticker)
            .cloned()
            .ok_or_else(|| ToolError::Failed(format!("unknown ticker `{ticker}`")))
    }
}

/// Alpha Vantage `CURRENCY_EXCHANGE_RATE` and `TIME_SERIES_DAILY`.
pub struct AlphaVantage {
    base_url: String,
    api_key_env: String,
    allow_network: bool,
    agent: ureq::Agent,
}

impl AlphaVantage {
    pub fn new(api_key_env: impl Into<String>) -> Self {
        Self {
            base_url: "https://www.alphavantage.co/query".into(),
            api_key_env: api_key_env.into(),
            allow_network: true,
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(20)))
                .build()
                .into(),
        }
    }

    pub fn base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    pub fn offline(mut self) -> Self {
        self.allow_network = false;
        self
    }

    fn get(&self, params: &[(&str, &str)]) -> Result<Value, ToolError> {
        if !self.allow_network {
            return Err(ToolError::NoNetwork("alpha_vantage".into()));
        }
        let key = std::env::var(&self.api_key_env).map_err(|_| {
            ToolError::Failed(format!(
                "environment variable {} is not set",
                self.api_key_env
            ))
        })?;
        let mut req = self.agent.get(&self.base_url).query("apikey", key);
        for (k, v) in params {
            req = req.query(*k, *v);
        }
        req.call()
            .map_err(|e| ToolError::Failed(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ToolError::Failed(e.to_string()))
    }
}

impl FxProvider for AlphaVantage {
    fn rate(&self, base: &str, quote: &str) -> Result<FxQuote, ToolError> {
        let body = self.get(&[
            ("function", "CURRENCY_EXCHANGE_RATE"),
            ("from_currency", base),
            ("to_currency", quote),
        ])?;
        let r = &body["Realtime Currency Exchange Rate"];
        let rate = r["5. Exchange Rate"]
            .as_str()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|v| *v > 0.0)
            .ok_or_else(|| ToolError::Failed(format!("unknown currency pair {base}/{quote}")))?;
        Ok(FxQuote {
            base: base.into(),
            quote: quote.into(),
            rate,
            as_of: r["6. Last Refreshed"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
        })
    }
}

impl MarketProvider for AlphaVantage {
    fn daily(&self, ticker: &str) -> Result<Vec<DailyClose>, ToolError> {
        let body = self.get(&[("function", "TIME_SERIES_DAILY"), ("symbol", ticker)])?;
        let series = body["Time Series (Daily)"]
            .as_object()
            .ok_or_else(|| ToolError::Failed(format!("unknown ticker `{ticker}`")))?;
        let mut out: Vec<DailyClose> = series
            .iter()
            .filter_map(|(date, v)| {
                let close = v["4. close"].as_str()?.parse().ok()?;
                Some(DailyClose {
                    date: date.clone(),
                    close,
                })
            })
            .collect();
        out.sort_by(|a, b| a.date.cmp(&b.date));
        Ok(out)
    }
}

fn currency(args: &ToolArgs, key: &str) -> Result<String, ToolError> {
    let code = args[key]
        .as_str()
        .unwrap_or_default()
        .trim()
        .to_ascii_uppercase();
    if code.len() != 3 || !code.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(ToolError::InvalidArgs(format!(
            "`{key}` must be a 3-letter currency code"
        )));
    }
    Ok(code)
}

pub struct FxRateTool {
    provider: Arc<dyn FxProvider>,
}

impl FxRateTool {
    pub fn new(provider: Arc<dyn FxProvider>) -> Self {
        Self { provider }
    }

    pub fn fixture() -> Self {
        Self::new(Arc::new(FixtureFx::builtin()))
    }
}

impl Tool for FxRateTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "fx_rate".into(),
            description: "Latest exchange rate: units of `quote` per one unit of `base` (ISO currency codes).".into(),
            params: vec![
                ParamSpec::required("base", ParamType::String),
                ParamSpec::required("quote", ParamType::String),
            ],
        }
    }

    fn call(&self, args: &ToolArgs) -> Result<Value, ToolError> {
        let base = currency(args, "base")?;
        let quote = currency(args, "quote")?;
        if base == quote {
            return Ok(json!({"base": base, "quote": quote, "rate": 1.0, "as_of": Value::Null}));
        }
        let q = self.provider.rate(&base, &quote)?;
        serde_json::to_value(q).map_err(|e| ToolError::Failed(e.to_string()))
    }
}

pub struct MarketDataTool {
    provider: Arc<dyn MarketProvider>,
}

impl MarketDataTool {
    pub fn new(provider: Arc<dyn MarketProvider>) -> Self {
        Self { provider }
    }

    pub fn fixture() -> Self {
        Self::new(Arc::new(FixtureMarket::builtin()))
    }
}

fn date_arg(args: &ToolArgs, key: &str) -> Result<Option<NaiveDate>, ToolError> {
    match args.get(key).and_then(Value::as_str) {
        None => Ok(None),
        Some(s) => NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(Some)
            .map_err(|_| ToolError::InvalidArgs(format!("`{key}` must be a YYYY-MM-DD date"))),
    }
}

impl Tool for MarketDataTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "market_data".into(),
            description: "Stock prices by ticker: `price` gives the last close in the range, `series` the daily closes. Dates are YYYY-MM-DD.".into(),
            params: vec![
                ParamSpec::required("ticker", ParamType::String),
                ParamSpec::optional("field", ParamType::Enum(vec!["price".into(), "series".into()])),
                ParamSpec::optional("start", ParamType::String),
                ParamSpec::optional("end", ParamType::String),
            ],
        }
    }

    fn call(&self, args: &ToolArgs) -> Result<Value, ToolError> {
        let ticker = args["ticker"]
            .as_str()
            .unwrap_or_default()
            .trim()
            .to_ascii_uppercase();
        if ticker.is_empty() {
            return Err(ToolError::InvalidArgs("ticker must be non-empty".into()));
        }
        let field = args.get("field").and_then(Value::as_str).unwrap_or("price");
        let start = date_arg(args, "start")?;
        let end = date_arg(args, "end")?;
        let in_range = |d: &DailyClose| {
            let Ok(date) = NaiveDate::parse_from_str(&d.date, "%Y-%m-%d") else {
                return false;
            };
            start.is_none_or(|s| date >= s) && end.is_none_or(|e| date <= e)
        };
        let series: Vec<DailyClose> = self
            .provider
            .daily(&ticker)?
            .into_iter()
            .filter(in_range)
            .collect();
        if field == "series" {
            return Ok(json!({"ticker": ticker, "series": series}));
        }
        let last = series.last().ok_or_else(|| {
            ToolError::Failed(format!(
                "no trading days for `{ticker}` in the requested range"
            ))
        })?;
        Ok(json!({"ticker": ticker, "date": last.date, "close": last.close}))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: Value) -> ToolArgs {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn identity_pair_short_circuits() {
        let out = FxRateTool::fixture()
            .call(&args(json!({"base": "XAU", "quote": "xau"})))
            .unwrap();
        assert_eq!(out["rate"], 1.0);
    }

    #[test]
    fn fixture_rate_and_reciprocal() {
        let t = FxRateTool::fixture();
        let usd_eur = t
            .call(&args(json!({"base": "USD", "quote": "EUR"})))
            .unwrap()["rate"]
            .as_f64()
            .unwrap();
        assert_eq!(usd_eur, 0.9);
        let codes = ["USD", "EUR", "GBP", "JPY", "CAD", "INR", "CHF"];
        for a in codes {
            for b in codes {
                let ab = t.call(&args(json!({"base": a, "quote": b}))).unwrap()["rate"]
                    .as_f64()
                    .unwrap();
                let ba = t.call(&args(json!({"base": b, "quote": a}))).unwrap()["rate"]
                    .as_f64()
                    .unwrap();
                assert!((ab * ba - 1.0).abs() < 1e-9, "{a}/{b}");
            }
        }
    }

    #[test]
    fn unknown_pair_and_bad_codes() {
        let t = FxRateTool::fixture();
        assert!(t
            .call(&args(json!({"base": "USD", "quote": "ZZZ"})))
            .is_err());
        assert!(matches!(
            t.call(&args(json!({"base": "US", "quote": "EUR"}))),
            Err(ToolError::InvalidArgs(_))
        ));
    }

    #[test]
    fn market_series_and_price() {
        let t = MarketDataTool::fixture();
        let full = t
            .call(&args(json!({"ticker": "AWK", "field": "series"})))
            .unwrap();
        let expected: Value = serde_json::from_str::<Value>(MARKET_FIXTURE).unwrap()["AWK"].clone();
        assert_eq!(full["series"], expected);
        let price = t
            .call(&args(
                json!({"ticker": "awk", "field": "price", "end": "2015-12-24"}),
            ))
            .unwrap();
        assert_eq!(
            price,
            json!({"ticker": "AWK", "date": "2015-12-24", "close": 59.78})
        );
        let empty = t
            .call(&args(json!({"ticker": "AWK", "field": "series", "start": "2015-12-25", "end": "2015-12-27"})))
            .unwrap();
        assert_eq!(empty["series"], json!([]));
        assert!(t.call(&args(json!({"ticker": "NOPE"}))).is_err());
        assert!(t
            .call(&args(json!({"ticker": "AWK", "start": "12/01/2015"})))
            .is_err());
    }

    #[test]
    fn live_backend_offline_errors() {
        let t = FxRateTool::new(Arc::new(AlphaVantage::new("AV_KEY").offline()));
        assert!(matches!(
            t.call(&args(json!({"base": "USD", "quote": "EUR"}))),
            Err(ToolError::NoNetwork(_))
        ));
    }
}
