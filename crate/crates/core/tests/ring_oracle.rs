use num_bigint::BigInt;
use pricure::ring::{is_prime, FixedPointCodec, RingModulus, RingTensor, MERSENNE_61};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn big_mod(x: BigInt, q: u64) -> u64 {
    let q = BigInt::from(q);
    let r = ((x % &q) + &q) % &q;
    u64::try_from(r).unwrap()
}

#[test]
fn small_prime_field_is_exhaustively_correct() {
    let m = RingModulus::new(251).unwrap();
    for a in 0..251u64 {
        assert_eq!(m.neg(a), (251 - a) % 251);
        for b in 0..251u64 {
            assert_eq!(m.add(a, b), (a + b) % 251);
            assert_eq!(m.sub(a, b), (a + 251 - b) % 251);
            assert_eq!(m.mul(a, b), a * b % 251);
        }
    }
}

#[test]
fn lift_is_a_bijection_onto_the_centered_range() {
    let m = RingModulus::new(251).unwrap();
    let lifted: Vec<i64> = (0..251).map(|a| m.lift(a)).collect();
    let mut sorted = lifted.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (-125..=125).collect::<Vec<i64>>());
    for (a, &l) in lifted.iter().enumerate() {
        assert_eq!(m.from_signed(l), a as u64);
    }
}

#[test]
fn mersenne_products_match_big_integers() {
    let m = RingModulus::mersenne61();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for i in 0..100_000 {
        let (a, b) = match i {
            0 => (MERSENNE_61 - 1, MERSENNE_61 - 1),
            1 => (0, MERSENNE_61 - 1),
            _ => (m.sample(&mut rng), m.sample(&mut rng)),
        };
        let expect = big_mod(BigInt::from(a) * BigInt::from(b), MERSENNE_61);
        assert_eq!(m.mul(a, b), expect, "{a} * {b}");
        assert_eq!(m.add(a, b), big_mod(BigInt::from(a) + BigInt::from(b), MERSENNE_61));
        assert_eq!(m.sub(a, b), big_mod(BigInt::from(a) - BigInt::from(b), MERSENNE_61));
    }
}

#[test]
fn wide_reduction_matches_big_integers() {
    let m = RingModulus::mersenne61();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let x: u128 = rng.gen();
        assert_eq!(m.reduce_wide(x), big_mod(BigInt::from(x), MERSENNE_61));
    }
    assert_eq!(m.reduce_wide(u128::MAX), big_mod(BigInt::from(u128::MAX), MERSENNE_61));
}

#[test]
fn matmul_matches_big_integer_oracle() {
    let m = RingModulus::mersenne61();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for &(p, r, c) in &[(1, 1, 1), (4, 3, 2), (1, 784, 128), (7, 33, 5)] {
        let a = RingTensor::random(m, vec![p, r], &mut rng);
        let b = RingTensor::random(m, vec![r, c], &mut rng);
        let got = a.matmul(&b).unwrap();
        assert_eq!(got.shape(), &[p, c]);
        for i in 0..p {
            for j in 0..c {
                let mut acc = BigInt::from(0);
                for k in 0..r {
                    acc += BigInt::from(a.data()[i * r + k]) * BigInt::from(b.data()[k * c + j]);
                }
                assert_eq!(got.data()[i * c + j], big_mod(acc, MERSENNE_61));
            }
        }
    }
    let a = RingTensor::zeros(m, vec![2, 3]);
    assert!(a.matmul(&a).is_err());
}

#[test]
fn modulus_validation() {
    assert!(is_prime(MERSENNE_61));
    assert!(!is_prime((1 << 61) + 1));
    assert!(RingModulus::new(1 << 32).is_err());
    assert!(RingModulus::new(0).is_err());
    assert!(RingModulus::new(2).is_ok());
    let m = RingModulus::new(251).unwrap();
    assert!(m.element(251).is_err());
    assert!(RingTensor::new(m, vec![2], vec![1, 300]).is_err());
    assert!(RingTensor::new(m, vec![3], vec![1, 3]).is_err());
}

#[test]
fn decimal_grid_values_encode_exactly() {
    let codec = FixedPointCodec::default();
    for (x, fixed) in [(0.29, 29), (-0.29, -29), (1.1, 110), (0.999, 99), (-0.999, -99), (0.0, 0), (-0.004, 0)] {
        assert_eq!(codec.to_fixed(x).unwrap(), fixed, "{x}");
    }
    assert!(codec.encode(f64::NAN).is_err());
    assert!(codec.encode(codec.max_abs()).is_err());
    assert!(codec.encode(-codec.max_abs()).is_err());
}

proptest! {
    #[test]
    fn from_signed_then_lift_is_identity(x in -(((MERSENNE_61 - 1) / 2) as i64)..=(((MERSENNE_61 - 1) / 2) as i64)) {
        let m = RingModulus::mersenne61();
        prop_assert_eq!(m.lift(m.from_signed(x)), x);
    }

    #[test]
    fn decode_encode_within_one_ulp(x in -1.0e12f64..1.0e12) {
        let codec = FixedPointCodec::default();
        let back = codec.decode(codec.encode(x).unwrap());
        prop_assert!((back - x).abs() < 1.0 / codec.scale() as f64 + 1e-12 * x.abs());
        prop_assert!(back.abs() <= x.abs() + 1e-12 * x.abs());
    }

    #[test]
    fn encoding_is_additive_on_the_grid(a in -1_000_000i64..1_000_000, b in -1_000_000i64..1_000_000) {
        let codec = FixedPointCodec::default();
        let m = codec.modulus();
        let (x, y) = (a as f64 / 100.0, b as f64 / 100.0);
        let sum = m.add(codec.encode(x).unwrap().value(), codec.encode(y).unwrap().value());
        prop_assert_eq!(m.lift(sum), a + b);
    }

    #[test]
    fn ring_laws_hold(a in 0..MERSENNE_61, b in 0..MERSENNE_61, c in 0..MERSENNE_61) {
        let m = RingModulus::mersenne61();
        prop_assert_eq!(m.mul(a, m.add(b, c)), m.add(m.mul(a, b), m.mul(a, c)));
        prop_assert_eq!(m.add(m.sub(a, b), b), a);
        prop_assert_eq!(m.add(a, m.neg(a)), 0);
    }
}
