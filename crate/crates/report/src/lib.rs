//! Report side of the pipeline: prompts assembled from evidence records,
//! pluggable generation backends, six-section schema validation, and the
//! directional-consistency audit over the resulting reports.

pub mod backend;
pub mod consistency;
pub mod error;
pub mod generate;
pub mod prompt;
pub mod schema;

pub use backend::{GenerationBackend, RemoteBackend, RemoteConfig, TemplateBackend};
pub use consistency::{aggregate_consistency, check_report, validate_reports, ConsistencySummary, DirectionJudgment, Verdict};
pub use error::{ReportError, Result};
pub use generate::{generate_report, generate_reports, AuditLog, GeneratedReport, GenerationOutcome};
pub use prompt::{build_prompt, PromptBundle};
pub use schema::{parse_report, RiskReport};
