//! Local linear arithmetic and Beaver-triple multiplication on shares.

use super::fixed::RingElement;
use super::network::{PartyNetwork, SharedValue};
use super::triples::{BeaverTriple, TripleDealer};
use super::MpcError;

/// Share-wise addition; exchanges zero messages.
pub fn add_shared(a: &SharedValue, b: &SharedValue) -> Result<SharedValue, MpcError> {
    a.check_compatible(b)?;
    let cfg = a.cfg;
    let shares = a.shares.iter().zip(&b.shares).map(|(&x, &y)| cfg.add(x, y)).collect();
    Ok(SharedValue { shares, cfg })
}

pub fn sub_shared(a: &SharedValue, b: &SharedValue) -> Result<SharedValue, MpcError> {
    a.check_compatible(b)?;
    let cfg = a.cfg;
    let shares = a.shares.iter().zip(&b.shares).map(|(&x, &y)| cfg.sub(x, y)).collect();
    Ok(SharedValue { shares, cfg })
}

pub fn neg_shared(a: &SharedValue) -> SharedValue {
    let cfg = a.cfg;
    SharedValue { shares: a.shares.iter().map(|&x| cfg.neg(x)).collect(), cfg }
}

/// Add a public constant: only party 0 shifts its share.
pub fn add_public(a: &SharedValue, c: f64) -> Result<SharedValue, MpcError> {
    let cfg = a.cfg;
    let e = cfg.encode(c)?;
    let mut shares = a.shares.clone();
    shares[0] = cfg.add(shares[0], e);
    Ok(SharedValue { shares, cfg })
}

/// Multiply by a public constant locally: each share is scaled in the ring
/// and truncated back to scale B. No communication.
pub fn mul_public(a: &SharedValue, c: f64) -> Result<SharedValue, MpcError> {
    let cfg = a.cfg;
    let e = cfg.encode(c)?;
    let shares = a.shares.iter().map(|&x| cfg.trunc(cfg.mul(x, e))).collect();
    Ok(SharedValue { shares, cfg })
}

/// Multiply by 2^k locally; exact for k >= 0, floor-per-share for k < 0.
pub fn scale_pow2(a: &SharedValue, k: i32) -> SharedValue {
    let cfg = a.cfg;
    let shares = a
        .shares
        .iter()
        .map(|&x| if k >= 0 { cfg.shl(x, k as u32) } else { cfg.shift_right(x, (-k) as u32) })
        .collect();
    SharedValue { shares, cfg }
}

/// public - x.
pub fn sub_from_public(c: f64, x: &SharedValue) -> Result<SharedValue, MpcError> {
    add_public(&neg_shared(x), c)
}

/// Beaver multiplication. Consumes the triple, opens only the masked
/// differences `x - a` and `y - b` in a single broadcast round, and
/// truncates the combined scale-B^2 shares locally.
///
/// The local truncation carries the standard small probabilistic error; its
/// wrap-failure probability is |x*y|*B^2/Q per multiplication, which is
/// negligible at the default two-party configuration the fixed-point
/// contracts are calibrated for.
pub fn mul_shared(
    a: &SharedValue,
    b: &SharedValue,
    triple: &BeaverTriple,
    net: &mut PartyNetwork,
) -> Result<SharedValue, MpcError> {
    net.consume_triple(triple.id)?;
    mul_with_triples(&[a.clone()], &[b.clone()], std::slice::from_ref(triple), net)
        .map(|mut v| v.pop().unwrap())
}

/// Batched Beaver multiplication: one masked broadcast round for the whole
/// batch, one triple per element.
pub fn mul_batch(
    a: &[SharedValue],
    b: &[SharedValue],
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<Vec<SharedValue>, MpcError> {
    let triples: Vec<BeaverTriple> = (0..a.len()).map(|_| dealer.next_triple()).collect();
    for t in &triples {
        net.consume_triple(t.id)?;
    }
    mul_with_triples(a, b, &triples, net)
}

fn mul_with_triples(
    a: &[SharedValue],
    b: &[SharedValue],
    triples: &[BeaverTriple],
    net: &mut PartyNetwork,
) -> Result<Vec<SharedValue>, MpcError> {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), triples.len());
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = net.config();
    let m = net.party_count();
    for (x, y) in a.iter().zip(b) {
        x.check_compatible(y)?;
        if x.shares.len() != m {
            return Err(MpcError::ConfigMismatch(format!(
                "value shared over {} parties on a {}-party network",
                x.shares.len(),
                m
            )));
        }
    }

    // Each party computes its local masked differences; the pairs (d, e)
    // for the whole batch are opened in one broadcast round.
    let mut opened = Vec::with_capacity(a.len());
    for ((x, y), t) in a.iter().zip(b).zip(triples) {
        let mut d = cfg.zero();
        let mut e = cfg.zero();
        for i in 0..m {
            d = cfg.add(d, cfg.sub(x.shares[i], t.a.shares[i]));
            e = cfg.add(e, cfg.sub(y.shares[i], t.b.shares[i]));
        }
        opened.push((d, e));
    }
    net.record_broadcast(2 * cfg.element_bytes() * a.len());

    let shift = cfg.precision_bits;
    let mut out = Vec::with_capacity(a.len());
    for ((d, e), t) in opened.into_iter().zip(triples) {
        let de = cfg.mul(d, e);
        let mut shares = Vec::with_capacity(m);
        for i in 0..m {
            // Scale-B^2 combination: d*[b] + e*[a] + [c]<<L (+ d*e at party 0).
            let mut s = cfg.mul(d, t.b.shares[i]);
            s = cfg.add(s, cfg.mul(e, t.a.shares[i]));
            s = cfg.add(s, cfg.shl(t.c.shares[i], shift));
            if i == 0 {
                s = cfg.add(s, de);
            }
            shares.push(cfg.trunc(s));
        }
        out.push(SharedValue { shares, cfg });
    }
    Ok(out)
}

pub(super) fn share_public(net: &mut PartyNetwork, c: f64) -> Result<SharedValue, MpcError> {
    let cfg = net.config();
    let e = cfg.encode(c)?;
    let mut shares = vec![RingElement(0); net.party_count()];
    shares[0] = e;
    Ok(SharedValue { shares, cfg })
}
