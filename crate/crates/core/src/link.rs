//! Stop-and-wait link abstraction.
//!
//! Each packet is retransmitted until it gets through, so the number of
//! attempts is geometric with success probability `1 - p_e` and the expected
//! goodput is `rate * (1 - p_e)`. Feedback is instantaneous.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use thiserror::Error;

/// Default packet payload for stochastic transfer sampling, bits.
pub const DEFAULT_PACKET_BITS: f64 = 8000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("bit-rate must be finite and > 0, got {0}")]
    BadRate(f64),
    #[error("packet-error probability must lie in [0, 1), got {0}")]
    BadErrorProbability(f64),
    #[error("packet size must be finite and > 0, got {0}")]
    BadPacketSize(f64),
}

/// Expected goodput `rate_bps * (1 - p_e)`.
pub fn effective_goodput(rate_bps: f64, p_e: f64) -> Result<f64, LinkError> {
    if !(rate_bps.is_finite() && rate_bps > 0.0) {
        return Err(LinkError::BadRate(rate_bps));
    }
    if !(0.0..1.0).contains(&p_e) {
        return Err(LinkError::BadErrorProbability(p_e));
    }
    Ok(rate_bps * (1.0 - p_e))
}

/// Time to deliver `length_bits` at the given goodput.
#[inline]
pub fn transfer_time(length_bits: f64, goodput_bps: f64) -> f64 {
    length_bits / goodput_bps
}

/// One direction of the device link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalLink {
    rate_bps: f64,
    p_e: f64,
    goodput_bps: f64,
    attempts: Option<Geometric>,
}

impl DirectionalLink {
    pub fn new(rate_bps: f64, p_e: f64) -> Result<Self, LinkError> {
        let goodput_bps = effective_goodput(rate_bps, p_e)?;
        let attempts = if p_e > 0.0 {
            Some(Geometric::new(1.0 - p_e).map_err(|_| LinkError::BadErrorProbability(p_e))?)
        } else {
            None
        };
        Ok(Self {
            rate_bps,
            p_e,
            goodput_bps,
            attempts,
        })
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    pub fn p_e(&self) -> f64 {
        self.p_e
    }

    pub fn goodput_bps(&self) -> f64 {
        self.goodput_bps
    }

    /// Expected delivery time of a message.
    pub fn expected_time(&self, length_bits: f64) -> f64 {
        transfer_time(length_bits, self.goodput_bps)
    }

    /// Number of transmission attempts for one packet (support 1, 2, ...).
    fn sample_attempts<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.attempts {
            Some(geo) => 1 + geo.sample(rng),
            None => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketizationPolicy {
    packet_bits: f64,
}

impl PacketizationPolicy {
    pub fn new(packet_bits: f64) -> Result<Self, LinkError> {
        if packet_bits.is_finite() && packet_bits > 0.0 {
            Ok(Self { packet_bits })
        } else {
            Err(LinkError::BadPacketSize(packet_bits))
        }
    }

    pub fn packet_bits(&self) -> f64 {
        self.packet_bits
    }
}

impl Default for PacketizationPolicy {
    fn default() -> Self {
        Self {
            packet_bits: DEFAULT_PACKET_BITS,
        }
    }
}

/// Samples the time to deliver a message under stop-and-wait retransmission.
///
/// The message is cut into `ceil(length / packet_bits)` packets; all but the
/// last carry `packet_bits`, the last carries the remainder. Every attempt on
/// a packet costs its air-time at the nominal rate. With `p_e = 0` the result
/// is exactly `length_bits / rate_bps` and the RNG is left untouched.
pub fn sample_transfer_time<R: Rng + ?Sized>(
    length_bits: f64,
    link: &DirectionalLink,
    policy: &PacketizationPolicy,
    rng: &mut R,
) -> f64 {
    if length_bits <= 0.0 {
        return 0.0;
    }
    if link.attempts.is_none() {
        return length_bits / link.rate_bps;
    }
    let full = (length_bits / policy.packet_bits).floor();
    let remainder = length_bits - full * policy.packet_bits;
    let mut bits_sent = 0.0;
    for _ in 0..full as u64 {
        bits_sent += link.sample_attempts(rng) as f64 * policy.packet_bits;
    }
    if remainder > 0.0 {
        bits_sent += link.sample_attempts(rng) as f64 * remainder;
    }
    bits_sent / link.rate_bps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn goodput_examples() {
        assert_eq!(effective_goodput(1e6, 0.0).unwrap(), 1e6);
        assert!((effective_goodput(1.5e5, 0.2).unwrap() - 1.2e5).abs() < 1e-9);
        assert_eq!(
            effective_goodput(1e5, 1.0),
            Err(LinkError::BadErrorProbability(1.0))
        );
        assert!(effective_goodput(0.0, 0.0).is_err());
    }

    #[test]
    fn transfer_time_examples() {
        assert_eq!(transfer_time(800.0, 1e6), 8.0e-4);
        assert_eq!(transfer_time(0.0, 1.2e5), 0.0);
        assert!((transfer_time(40_000.0, 1.5e5) - 0.266_666_666_666_666_7).abs() < 1e-15);
    }

    #[test]
    fn error_free_sampling_is_deterministic() {
        let link = DirectionalLink::new(1.5e5, 0.0).unwrap();
        let policy = PacketizationPolicy::default();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = sample_transfer_time(40_000.0, &link, &policy, &mut rng);
            assert_eq!(t, 40_000.0 / 1.5e5);
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let link = DirectionalLink::new(1.5e5, 0.3).unwrap();
        let policy = PacketizationPolicy::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_transfer_time(12_345.0, &link, &policy, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn monte_carlo_mean_matches_goodput() {
        let link = DirectionalLink::new(1.5e5, 0.2).unwrap();
        let policy = PacketizationPolicy::new(8000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_transfer_time(40_000.0, &link, &policy, &mut rng))
            .sum::<f64>()
            / n as f64;
        let expected = 40_000.0 / (1.5e5 * 0.8);
        assert!((mean / expected - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn partial_last_packet_keeps_mean_exact() {
        // 10_000 bits = one full 8000-bit packet plus 2000 bits.
        let link = DirectionalLink::new(1e5, 0.5).unwrap();
        let policy = PacketizationPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_transfer_time(10_000.0, &link, &policy, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean / link.expected_time(10_000.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn bad_policy() {
        assert!(PacketizationPolicy::new(0.0).is_err());
        assert!(PacketizationPolicy::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn retransmissions_only_add_time(
            len in 0.0f64..1e6,
            rate in 1e3f64..1e7,
            p_e in 0.0f64..0.95,
            seed in any::<u64>(),
        ) {
            let link = DirectionalLink::new(rate, p_e).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = sample_transfer_time(len, &link, &PacketizationPolicy::default(), &mut rng);
            prop_assert!(t >= len / rate * (1.0 - 1e-12));
        }

        #[test]
        fn transfer_time_is_additive(a in 0.0f64..1e7, b in 0.0f64..1e7, g in 1.0f64..1e8) {
            let whole = transfer_time(a + b, g);
            let parts = transfer_time(a, g) + transfer_time(b, g);
            prop_assert!((whole - parts).abs() <= 4.0 * f64::EPSILON * whole.max(1e-300));
        }

        #[test]
        fn goodput_bounded_by_rate(rate in 1.0f64..1e9, p_e in 0.0f64..0.999) {
            let link = DirectionalLink::new(rate, p_e).unwrap();
            prop_assert!(link.goodput_bps() > 0.0 && link.goodput_bps() <= rate);
            if p_e == 0.0 {
                prop_assert_eq!(link.goodput_bps(), rate);
            }
        }
    }
}
