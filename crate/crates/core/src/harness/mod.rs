//! Three-party protocol harness: end-to-end training pipeline, session
//! simulation with secret rotation, attack sweeps, and report export.

pub mod attack_eval;
pub mod pipeline;
pub mod report;
pub mod session;

pub use attack_eval::{
    adapter_attack_sweep, direct_attack_comparison, secret_recovery_sweep, train_simple_stack,
    AdapterSweep, DirectAttackSummary, SimpleStack,
};
pub use pipeline::{
    build_corpus, estimate_stack_delta, evaluate_spec, instantiate_roster, retrain_job,
    summarize_accuracy, train_stack, AccuracySummary, CorpusBundle, Roster, SpecStack,
    TrainedStack,
};
pub use report::{export_report, summarize_sessions, ReportInputs, SessionSummary};
pub use session::{
    model_cost_units, run_session, LedgerEntry, ProviderSim, QueryRecord, QueryRequest,
    QueryResponse, SecretLedger, SessionSettings, SessionTranscript, StrategyKind,
};
