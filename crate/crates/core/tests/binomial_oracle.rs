//! Exact binomial tails in rational arithmetic, checked against the
//! closed-form bound and the Monte Carlo estimators.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use qpop_core::harness::{chernoff_bound, committee_mc, unsafe_threshold};

fn binom(n: u64, k: u64) -> BigUint {
    (0..k).fold(BigUint::one(), |acc, i| acc * (n - i) / (i + 1))
}

/// `P[Bin(n, num/den) >= k]`, exactly.
fn tail(n: u64, num: i64, den: i64, k: u64) -> f64 {
    let p = BigRational::new(num.into(), den.into());
    let q = BigRational::one() - &p;
    let mut sum = BigRational::zero();
    for j in k..=n {
        let c = BigRational::from_integer(binom(n, j).into());
        sum += c
            * num_traits::pow(p.clone(), j as usize)
            * num_traits::pow(q.clone(), (n - j) as usize);
    }
    sum.to_f64().unwrap()
}

#[test]
fn frozen_tail_values() {
    let t = tail(100, 3, 20, 34);
    assert!((t / 1.8370e-6 - 1.0).abs() < 1e-3, "{t}");
    let t = tail(50, 3, 10, 17);
    assert!((t / 0.3161 - 1.0).abs() < 1e-3, "{t}");
    assert_eq!(tail(4, 0, 1, 2), 0.0);
}

#[test]
fn bound_dominates_exact_tail() {
    for n in [50u64, 100, 200] {
        for (num, den) in [(1, 10), (3, 20), (1, 5), (3, 10)] {
            let rho = num as f64 / den as f64;
            let exact = tail(n, num, den, unsafe_threshold(n as usize) as u64);
            let bound = chernoff_bound(n as usize, rho).unwrap();
            assert!(exact <= bound, "n={n} rho={rho}: {exact} > {bound}");
        }
    }
}

#[test]
fn tilted_estimate_brackets_exact_tail() {
    for (n, num, den) in [(100u64, 3i64, 20i64), (50, 1, 5), (60, 1, 10)] {
        let exact = tail(n, num, den, unsafe_threshold(n as usize) as u64);
        let e = committee_mc(n as usize, num as f64 / den as f64, 40 * n, 200, 77).unwrap();
        let [lo, hi] = e.tilted_tail.ci95;
        // 3 sigma instead of 2 so the fixed seeds stay far from the edge
        let half = 1.5 * (hi - lo) / 2.0;
        let est = e.tilted_tail.estimate;
        assert!(
            (est - exact).abs() <= half,
            "n={n}: {est} vs {exact} (+-{half})"
        );
    }
}
