//! Simulated semi-honest multi-party computation engine.
//!
//! Reals are encoded as fixed-point ring elements and additively secret
//! shared across `m` simulated parties. Addition is local; multiplication
//! consumes Beaver triples from a trusted dealer and opens only masked
//! differences. Reciprocals are Newton-Raphson iterations, logarithms are
//! order-2 Householder iterations, and log-determinants run a
//! square-root-free LDL recurrence on shared matrices. Every communication
//! phase is logged to a transcript for cost accounting.
//!
//! Parties are driven by a deterministic single-threaded round-robin
//! scheduler: each protocol phase applies the party-local computation in
//! party order before messages from that phase are consumed, so runs are
//! reproducible bit-for-bit from the configured seeds.

mod arith;
mod fixed;
mod logdet;
mod network;
mod recip_log;
mod triples;

pub use arith::{add_public, add_shared, mul_batch, mul_public, mul_shared, neg_shared, scale_pow2, sub_shared};
pub use fixed::{FixedPointConfig, RingElement};
pub use logdet::{mat_mul_shared, secure_ldl_logdet, LogdetOptions, SharedMatrix};
pub use network::{MpcSession, PartyNetwork, SharedValue, Transcript, TranscriptEntry};
pub(crate) use network::sample_laplace;
pub use recip_log::{secure_log, secure_log_batch, secure_reciprocal, LogParams, RecipParams};
pub use triples::{generate_triples, BeaverTriple, TripleDealer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MpcError {
    #[error("value {value} cannot be encoded: |x|*2^L must stay below Q/2")]
    Overflow { value: f64 },
    #[error("fixed-point config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("Beaver triple {id} has already been consumed")]
    TripleReused { id: u64 },
    #[error("input {value:.6e} outside the valid domain [{lo:.6e}, {hi:.6e}]")]
    DomainError { value: f64, lo: f64, hi: f64 },
    #[error("shared matrix dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Engine parameters as they appear in the global config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub parties: usize,
    pub precision_bits: u32,
    pub ring_bits: u32,
    pub reciprocal_iters: usize,
    pub log_iters: usize,
    pub dealer_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            parties: 2,
            precision_bits: 16,
            ring_bits: 64,
            reciprocal_iters: 12,
            log_iters: 10,
            dealer_seed: 0x5eed_dea1,
        }
    }
}

impl EngineConfig {
    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig::new(self.precision_bits, self.ring_bits)
    }

    pub fn session(&self, network_seed: u64) -> MpcSession {
        let cfg = self.fixed_point();
        let net = PartyNetwork::new(self.parties, cfg, network_seed);
        let dealer = TripleDealer::new(cfg, self.parties, self.dealer_seed);
        MpcSession { net, dealer }
    }
}
