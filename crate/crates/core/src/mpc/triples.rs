//! Trusted-dealer Beaver triple provisioning.
//!
//! The dealer is a simulated extra party in the semi-honest preprocessing
//! model: it samples the masks, computes the truncated product in the
//! clear, and hands each party its shares. Streams are deterministic in
//! the dealer seed.

use super::fixed::FixedPointConfig;
use super::network::SharedValue;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// A multiplication triple: `c` encodes the truncated fixed-point product
/// of `a` and `b`, exactly in the ring.
#[derive(Debug, Clone)]
pub struct BeaverTriple {
    pub id: u64,
    pub a: SharedValue,
    pub b: SharedValue,
    pub c: SharedValue,
}

pub struct TripleDealer {
    cfg: FixedPointConfig,
    parties: usize,
    rng: ChaCha12Rng,
    next_id: u64,
}

impl TripleDealer {
    pub fn new(cfg: FixedPointConfig, parties: usize, seed: u64) -> Self {
        TripleDealer { cfg, parties, rng: ChaCha12Rng::seed_from_u64(seed), next_id: 0 }
    }

    fn deal_shares(&mut self, value: super::fixed::RingElement) -> SharedValue {
        let cfg = self.cfg;
        let mut shares = Vec::with_capacity(self.parties);
        let mut acc = cfg.zero();
        for _ in 0..self.parties - 1 {
            let r = cfg.uniform(&mut self.rng);
            acc = cfg.add(acc, r);
            shares.push(r);
        }
        shares.push(cfg.sub(value, acc));
        SharedValue { shares, cfg }
    }

    pub fn next_triple(&mut self) -> BeaverTriple {
        let cfg = self.cfg;
        let a = cfg.uniform(&mut self.rng);
        let b = cfg.uniform(&mut self.rng);
        // Dealer-side exact truncation of the ring product.
        let c = cfg.trunc(cfg.mul(a, b));
        let id = self.next_id;
        self.next_id += 1;
        BeaverTriple {
            id,
            a: self.deal_shares(a),
            b: self.deal_shares(b),
            c: self.deal_shares(c),
        }
    }
}

/// Draw `count` triples from the dealer.
pub fn generate_triples(count: usize, dealer: &mut TripleDealer) -> Vec<BeaverTriple> {
    (0..count).map(|_| dealer.next_triple()).collect()
}
