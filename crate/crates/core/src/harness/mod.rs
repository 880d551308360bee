//! Simulation, transports, adversaries, metrics and reports.

pub mod attacks;
pub mod config;
pub mod metrics;
pub mod report;
pub mod sim;
pub mod transport;

pub use attacks::{attack_bruteforce, attack_mitm, attack_replay, run_attack, AttackMode, AttackReport};
pub use config::{SimSeeds, SystemConfig, DEFAULT_CONFIG_TOML};
pub use metrics::{
    metric_randomness, metric_reliability, metric_uniqueness, odd_challenges, population, randomness_from_responses,
    reliability_from_samples, run_metrics, uniqueness_from_responses, MetricsError, MetricsReport,
};
pub use report::Report;
pub use sim::{enroll_system, run_rounds, Action, FaultInjector, FlipBit, NoFaults, ReplaceFrame, RoundOutcome, SimError, Testbed};
pub use transport::{
    channel_pair, device_session, serve_session, ChannelTransport, Direction, StreamTransport, Transcript, Transport,
};
