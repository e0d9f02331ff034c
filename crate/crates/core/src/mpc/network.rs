//! The simulated party network: per-party seeded randomness, sharing and
//! revealing, and the message transcript.

use super::fixed::{FixedPointConfig, RingElement};
use super::triples::TripleDealer;
use super::MpcError;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::collections::HashSet;

/// One logged message: `(round, sender, receiver, payload bytes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub round: u64,
    pub sender: usize,
    pub receiver: usize,
    pub bytes: usize,
}

#[derive(Debug, Default, Clone)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    /// Line-delimited export: `round sender receiver bytes`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{} {} {} {}\n", e.round, e.sender, e.receiver, e.bytes));
        }
        out
    }
}

/// An additively secret-shared fixed-point scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedValue {
    pub shares: Vec<RingElement>,
    pub cfg: FixedPointConfig,
}

impl SharedValue {
    pub fn party_count(&self) -> usize {
        self.shares.len()
    }

    pub fn check_compatible(&self, other: &SharedValue) -> Result<(), MpcError> {
        if self.cfg != other.cfg {
            return Err(MpcError::ConfigMismatch(format!(
                "fixed-point configs differ: {:?} vs {:?}",
                self.cfg, other.cfg
            )));
        }
        if self.shares.len() != other.shares.len() {
            return Err(MpcError::ConfigMismatch(format!(
                "party counts differ: {} vs {}",
                self.shares.len(),
                other.shares.len()
            )));
        }
        Ok(())
    }
}

/// In-process network of `m` simulated parties.
///
/// Owns the per-party seeded RNG streams and the message transcript.
/// Reconstruction of a secret only happens through [`PartyNetwork::reveal`],
/// which logs the exchange. One protocol session per network instance.
pub struct PartyNetwork {
    party_count: usize,
    cfg: FixedPointConfig,
    party_rngs: Vec<ChaCha12Rng>,
    reveal_rng: ChaCha12Rng,
    round: u64,
    transcript: Transcript,
    used_triples: HashSet<u64>,
    /// Diagnostic plaintext-shadow mode: iterative ops recompute their
    /// inputs in the clear and reject out-of-domain values. Off by default;
    /// the protocol itself cannot inspect secrets.
    pub shadow_domain_checks: bool,
}

impl PartyNetwork {
    pub fn new(party_count: usize, cfg: FixedPointConfig, seed: u64) -> Self {
        assert!(party_count >= 2, "need at least two parties");
        let party_rngs = (0..party_count)
            .map(|i| ChaCha12Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1))))
            .collect();
        PartyNetwork {
            party_count,
            cfg,
            party_rngs,
            reveal_rng: ChaCha12Rng::seed_from_u64(seed ^ 0xdead_beef_cafe_f00d),
            round: 0,
            transcript: Transcript::default(),
            used_triples: HashSet::new(),
            shadow_domain_checks: false,
        }
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    pub fn config(&self) -> FixedPointConfig {
        self.cfg
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub(super) fn consume_triple(&mut self, id: u64) -> Result<(), MpcError> {
        if !self.used_triples.insert(id) {
            return Err(MpcError::TripleReused { id });
        }
        Ok(())
    }

    /// Log one all-to-all broadcast phase where every party sends
    /// `bytes_per_message` to every other party.
    pub(super) fn record_broadcast(&mut self, bytes_per_message: usize) {
        self.round += 1;
        let round = self.round;
        for sender in 0..self.party_count {
            for receiver in 0..self.party_count {
                if sender != receiver {
                    self.transcript.entries.push(TranscriptEntry {
                        round,
                        sender,
                        receiver,
                        bytes: bytes_per_message,
                    });
                }
            }
        }
    }

    pub(super) fn party_rng(&mut self, party: usize) -> &mut ChaCha12Rng {
        &mut self.party_rngs[party]
    }

    /// Additively share a ring element held by `owner`: the first m-1
    /// shares are uniform on the ring, the last makes the sum exact.
    pub fn share_from(&mut self, owner: usize, x: RingElement) -> SharedValue {
        let m = self.party_count;
        let cfg = self.cfg;
        let mut shares = Vec::with_capacity(m);
        let mut acc = cfg.zero();
        for _ in 0..m - 1 {
            let r = cfg.uniform(self.party_rng(owner));
            acc = cfg.add(acc, r);
            shares.push(r);
        }
        shares.push(cfg.sub(x, acc));
        SharedValue { shares, cfg }
    }

    /// Share with party 0 as the input owner.
    pub fn share(&mut self, x: RingElement) -> SharedValue {
        self.share_from(0, x)
    }

    /// Encode and share a real input held by `owner`.
    pub fn share_real_from(&mut self, owner: usize, x: f64) -> Result<SharedValue, MpcError> {
        let e = self.cfg.encode(x)?;
        Ok(self.share_from(owner, e))
    }

    pub fn share_real(&mut self, x: f64) -> Result<SharedValue, MpcError> {
        self.share_real_from(0, x)
    }

    /// Ring-exact reconstruction without decoding. Logs the exchange.
    pub fn reveal_ring(&mut self, x: &SharedValue) -> RingElement {
        self.record_broadcast(x.cfg.element_bytes());
        let cfg = x.cfg;
        x.shares.iter().fold(cfg.zero(), |acc, &s| cfg.add(acc, s))
    }

    /// Reveal and decode a shared value, optionally adding Laplace noise of
    /// the given scale so the release does not leak beyond the statistic.
    pub fn reveal(&mut self, x: &SharedValue, noise_scale: Option<f64>) -> f64 {
        let ring = self.reveal_ring(x);
        let mut v = x.cfg.decode(ring);
        if let Some(scale) = noise_scale {
            if scale > 0.0 {
                v += sample_laplace(scale, &mut self.reveal_rng);
            }
        }
        v
    }

    /// Reconstruct without logging; diagnostics only.
    pub(super) fn peek(&self, x: &SharedValue) -> f64 {
        let cfg = x.cfg;
        let sum = x.shares.iter().fold(cfg.zero(), |acc, &s| cfg.add(acc, s));
        cfg.decode(sum)
    }
}

pub(crate) fn sample_laplace(scale: f64, rng: &mut impl RngCore) -> f64 {
    // Inverse CDF on u uniform in (-1/2, 1/2).
    let u = (rng.next_u64() as f64 / u64::MAX as f64) - 0.5;
    let u = u.clamp(-0.4999999999, 0.4999999999);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// A protocol session: one network plus the trusted dealer that
/// provisions its Beaver triples.
pub struct MpcSession {
    pub net: PartyNetwork,
    pub dealer: TripleDealer,
}
