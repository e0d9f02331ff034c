//! Iterative secure elementary functions: Newton-Raphson reciprocal and
//! order-2 Householder logarithm.
//!
//! Both are built purely from local linear arithmetic and Beaver
//! multiplications; neither inspects its input. Seeds and iteration counts
//! are tuned per declared input domain, and the defaults are calibrated so
//! the documented error contracts hold on the default domains.

use super::arith::{add_public, add_shared, mul_batch, neg_shared, scale_pow2, share_public, sub_from_public, sub_shared};
use super::network::{PartyNetwork, SharedValue};
use super::triples::TripleDealer;
use super::MpcError;

/// Newton-Raphson reciprocal parameters.
///
/// The affine seed y0 = a - b*x keeps x*y0 in (0, 1.9] across the declared
/// domain, which guarantees convergence; the iteration count covers the
/// worst-case contraction from the small end of the domain.
#[derive(Debug, Clone, Copy)]
pub struct RecipParams {
    pub lo: f64,
    pub hi: f64,
    pub seed_a: f64,
    pub seed_b: f64,
    pub iters: usize,
}

impl RecipParams {
    pub fn for_domain(lo: f64, hi: f64) -> Self {
        assert!(lo > 0.0 && hi > lo);
        // The seed's zero crossing sits 5% past the top of the domain so
        // coefficient quantisation cannot push y0 negative at the edge.
        let zero_at = 1.05 * hi + lo;
        let a = 7.6 / zero_at;
        let b = a / zero_at;
        let delta = a * lo * (1.0 - lo / zero_at);
        let iters = ((9.2 / delta).log2().ceil() as usize) + 1;
        RecipParams { lo, hi, seed_a: a, seed_b: b, iters }
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }
}

impl Default for RecipParams {
    /// The documented valid domain [2^-6, 2^10].
    fn default() -> Self {
        RecipParams::for_domain(2f64.powi(-6), 2f64.powi(10))
    }
}

/// Order-2 Householder logarithm parameters.
///
/// The iteration maintains y from the seed ln(hi) downwards:
/// u = 1 - x*exp(-y) stays in [0, 1), each step subtracts u + u^2/2, and
/// convergence is cubic once |y - ln x| < 1. exp is evaluated as a
/// degree-6 Taylor polynomial of z/8 raised to the 8th power by three
/// squarings.
#[derive(Debug, Clone, Copy)]
pub struct LogParams {
    pub lo: f64,
    pub hi: f64,
    pub iters: usize,
}

impl LogParams {
    pub fn for_domain(lo: f64, hi: f64) -> Self {
        assert!(lo > 0.0 && hi > lo);
        let span = (hi / lo).ln();
        let iters = ((span / 1.4).ceil() as usize + 2).max(8);
        LogParams { lo, hi, iters }
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }
}

impl Default for LogParams {
    /// The documented valid domain [2^-6, 2^10]; gives 10 iterations.
    fn default() -> Self {
        LogParams::for_domain(2f64.powi(-6), 2f64.powi(10))
    }
}

fn shadow_check(
    net: &PartyNetwork,
    x: &SharedValue,
    lo: f64,
    hi: f64,
) -> Result<(), MpcError> {
    if net.shadow_domain_checks {
        let v = net.peek(x);
        if v < lo || v > hi {
            return Err(MpcError::DomainError { value: v, lo, hi });
        }
    }
    Ok(())
}

/// 1/x for x in the declared domain.
pub fn secure_reciprocal(
    x: &SharedValue,
    params: RecipParams,
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<SharedValue, MpcError> {
    shadow_check(net, x, params.lo, params.hi)?;
    // y0 = a - b*x, local affine arithmetic. The slope is split into a
    // power of two and a mantissa in [1, 2) so its fixed-point encoding
    // keeps full relative precision even when b is tiny.
    let k = (-params.seed_b.log2()).floor() as i32;
    let bx = super::arith::mul_public(
        &scale_pow2(x, -k),
        params.seed_b * 2f64.powi(k),
    )?;
    let mut y = add_public(&neg_shared(&bx), params.seed_a)?;
    for _ in 0..params.iters {
        let xy = mul_batch(std::slice::from_ref(x), std::slice::from_ref(&y), dealer, net)?
            .pop()
            .unwrap();
        let u = sub_from_public(2.0, &xy)?;
        y = mul_batch(std::slice::from_ref(&y), std::slice::from_ref(&u), dealer, net)?
            .pop()
            .unwrap();
    }
    Ok(y)
}

/// Taylor coefficients 1/k! for the exp kernel, highest degree first.
const EXP_SERIES: [f64; 7] = [
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
    1.0,
    1.0,
];

/// exp(z) for |z| bounded by the log domain span: degree-6 polynomial in
/// z/8, cubed-squared back up. 9 multiplications per element.
fn exp_approx_batch(
    z: &[SharedValue],
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<Vec<SharedValue>, MpcError> {
    let s: Vec<SharedValue> = z.iter().map(|v| scale_pow2(v, -3)).collect();
    let mut acc: Vec<SharedValue> =
        (0..s.len()).map(|_| share_public(net, EXP_SERIES[0])).collect::<Result<_, _>>()?;
    for &coef in &EXP_SERIES[1..] {
        acc = mul_batch(&acc, &s, dealer, net)?;
        acc = acc.iter().map(|v| add_public(v, coef)).collect::<Result<_, _>>()?;
    }
    for _ in 0..3 {
        acc = mul_batch(&acc, &acc, dealer, net)?;
    }
    Ok(acc)
}

/// ln(x) element-wise for a batch sharing one domain.
pub fn secure_log_batch(
    xs: &[SharedValue],
    params: LogParams,
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<Vec<SharedValue>, MpcError> {
    for x in xs {
        shadow_check(net, x, params.lo, params.hi)?;
    }
    let n = xs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let seed = params.hi.ln();
    let mut y: Vec<SharedValue> =
        (0..n).map(|_| share_public(net, seed)).collect::<Result<_, _>>()?;
    for _ in 0..params.iters {
        let z: Vec<SharedValue> = y.iter().map(neg_shared).collect();
        let w = exp_approx_batch(&z, dealer, net)?;
        let xw = mul_batch(xs, &w, dealer, net)?;
        let u: Vec<SharedValue> =
            xw.iter().map(|v| sub_from_public(1.0, v)).collect::<Result<_, _>>()?;
        let usq = mul_batch(&u, &u, dealer, net)?;
        for i in 0..n {
            let step = add_shared(&u[i], &scale_pow2(&usq[i], -1))?;
            y[i] = sub_shared(&y[i], &step)?;
        }
    }
    Ok(y)
}

/// ln(x) for a single shared value.
pub fn secure_log(
    x: &SharedValue,
    params: LogParams,
    dealer: &mut TripleDealer,
    net: &mut PartyNetwork,
) -> Result<SharedValue, MpcError> {
    secure_log_batch(std::slice::from_ref(x), params, dealer, net).map(|mut v| v.pop().unwrap())
}
