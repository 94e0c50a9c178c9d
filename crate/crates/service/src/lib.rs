//! HTTP service and CLI plumbing around [`mhrag_core`].
//!
//! Routes (JSON in and out):
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/ingest` | `{path, format}` or `{documents: [...]}` |
//! | DELETE | `/documents/{doc_id}` | |
//! | POST | `/query` | one-shot, clarifications auto-answered |
//! | POST | `/sessions` | new session envelope |
//! | GET, DELETE | `/sessions/{id}` | envelope / close |
//! | POST | `/sessions/{id}/messages` | `{text}`, starts an episode |
//! | GET | `/sessions/{id}/events?cursor=&wait_ms=&thoughts=` | long poll |
//! | POST | `/sessions/{id}/clarifications` | `{text, id?}` |
//! | GET | `/healthz` | |

pub mod http;
pub mod query;
pub mod session;
pub mod terminal;

pub use http::{router, serve, AppState};
pub use query::{run_query, QueryRequest, QueryResponse};
pub use session::{SessionEnvelope, SessionStore, Status};
