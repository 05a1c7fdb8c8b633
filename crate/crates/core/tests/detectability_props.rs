mod common;

use common::*;
use horizon_est::detectability::{
    is_sample_observable, numerical_rank, rolling_window_check, sampled_obs_matrix, spectral_split, unstable_check,
    SampleTimes, DEFAULT_CIRCLE_TOL, DEFAULT_RANK_FACTOR,
};
use horizon_est::GapSequence;
use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

fn times(v: &[u64]) -> SampleTimes {
    SampleTimes::new(v.to_vec()).unwrap()
}

fn rotation() -> DMatrix<f64> {
    m(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

fn float_rank(a: &[Vec<i64>], c: &[Vec<i64>], taus: &[u64]) -> usize {
    numerical_rank(&sampled_obs_matrix(&to_f64(a), &to_f64(c), &times(taus)).unwrap(), DEFAULT_RANK_FACTOR)
}

/// `K_1` enumerated directly from the gap recursion.
fn k1(pattern: &[u64], until: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut t = 0;
    for k in 0.. {
        t += pattern[k % pattern.len()];
        if t > until {
            break;
        }
        out.push(t);
    }
    out
}

fn brute_rolling(a: &DMatrix<f64>, c: &DMatrix<f64>, pattern: &[u64], window: u64, periods: u64) -> bool {
    let period: u64 = pattern.iter().sum();
    let samples = k1(pattern, window + periods * period);
    (window + 1..=window + periods * period).all(|t| {
        let lo = t - window - 1;
        let taus: Vec<u64> = samples.iter().filter(|j| **j >= lo && **j < t).map(|j| j - lo).collect();
        !taus.is_empty() && is_sample_observable(a, c, &times(&taus), DEFAULT_RANK_FACTOR).unwrap()
    })
}

fn sorted_eigs(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut e: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    e.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    e
}

#[test]
fn bareiss_small_cases() {
    assert_eq!(exact_rank(to_big(&[vec![1, 2], vec![2, 4]])), 1);
    assert_eq!(exact_rank(to_big(&[vec![0, 1], vec![1, 0]])), 2);
    assert_eq!(exact_rank(to_big(&[vec![0, 0], vec![0, 0]])), 0);
    assert_eq!(exact_rank(to_big(&[vec![0, 1, 2], vec![0, 2, 4], vec![0, 3, 7]])), 2);
    assert_eq!(exact_rank(to_big(&[vec![2, 1, 1], vec![4, 2, 3], vec![6, 3, 5], vec![1, 1, 1]])), 3);
}

#[test]
fn jordan_block_examples() {
    let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let c = m(1, 2, &[1.0, 0.0]);
    assert_eq!(sampled_obs_matrix(&a, &c, &times(&[0, 2])).unwrap(), m(2, 2, &[1.0, 0.0, 1.0, 2.0]));
    assert!(!is_sample_observable(&a, &c, &times(&[0]), DEFAULT_RANK_FACTOR).unwrap());
    assert!(is_sample_observable(&a, &c, &times(&[0, 1]), DEFAULT_RANK_FACTOR).unwrap());
    assert_eq!(exact_sampled_rank(&[vec![1, 1], vec![0, 1]], &[vec![1, 0]], &[0, 2]), 2);
}

#[test]
fn rotation_aliasing_examples() {
    let c = m(1, 2, &[1.0, 0.0]);
    let four = GapSequence::new(vec![4]).unwrap();
    let one = GapSequence::new(vec![1]).unwrap();
    assert!(!rolling_window_check(&rotation(), &c, &four, 8, DEFAULT_RANK_FACTOR).unwrap());
    assert!(rolling_window_check(&rotation(), &c, &one, 2, DEFAULT_RANK_FACTOR).unwrap());
    let rot = [vec![0, -1], vec![1, 0]];
    assert_eq!(exact_sampled_rank(&rot, &[vec![1, 0]], &[0, 4, 8]), 1);
    assert_eq!(exact_sampled_rank(&rot, &[vec![1, 0]], &[0, 1]), 2);
}

#[test]
fn unstable_mode_split_examples() {
    let a = m(2, 2, &[0.5, 0.0, 0.0, 2.0]);
    let three = GapSequence::new(vec![3]).unwrap();
    let seen = unstable_check(&a, &m(1, 2, &[0.0, 1.0]), &three, 3, DEFAULT_CIRCLE_TOL, DEFAULT_RANK_FACTOR).unwrap();
    assert!(seen.detectable);
    assert_eq!(seen.split.unstable_dim(), 1);
    for pattern in [vec![1], vec![3], vec![2, 5]] {
        let gaps = GapSequence::new(pattern).unwrap();
        let window = gaps.d_max() * 2;
        let hidden = unstable_check(&a, &m(1, 2, &[1.0, 0.0]), &gaps, window, DEFAULT_CIRCLE_TOL, DEFAULT_RANK_FACTOR).unwrap();
        assert!(!hidden.detectable);
    }
    // stable A: nothing to observe
    let stable = m(2, 2, &[0.5, 0.3, 0.0, -0.4]);
    let v = unstable_check(&stable, &m(1, 2, &[0.0, 0.0]), &three, 3, DEFAULT_CIRCLE_TOL, DEFAULT_RANK_FACTOR).unwrap();
    assert!(v.detectable);
    assert_eq!(v.split.unstable_dim(), 0);
}

#[test]
fn integer_cases_match_exact_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut deficient = 0;
    for case in 0..500 {
        let (a, c, taus) = random_integer_case(&mut rng);
        let exact = exact_sampled_rank(&a, &c, &taus);
        assert_eq!(float_rank(&a, &c, &taus), exact, "case {case}: A={a:?} C={c:?} taus={taus:?}");
        if exact < a.len() {
            deficient += 1;
        }
    }
    // both verdicts must be well represented
    assert!((100..=400).contains(&deficient), "{deficient}");
}

#[test]
fn classical_matrix_for_consecutive_times() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(1..=5);
        let a = random_matrix(&mut rng, n, n, 1.0);
        let c = random_matrix(&mut rng, 2, n, 1.0);
        let taus: Vec<u64> = (0..n as u64).collect();
        let got = sampled_obs_matrix(&a, &c, &times(&taus)).unwrap();
        let mut power = DMatrix::identity(n, n);
        for k in 0..n {
            let block = &c * &power;
            assert!((got.view((2 * k, 0), (2, n)) - block).amax() <= 1e-12);
            power = &a * power;
        }
        let eye = DMatrix::identity(n, n);
        assert_eq!(sampled_obs_matrix(&a, &eye, &times(&[0])).unwrap(), eye.clone());
        assert!(is_sample_observable(&a, &eye, &times(&[0, 3]), DEFAULT_RANK_FACTOR).unwrap());
    }
}

#[test]
fn split_examples() {
    let s = spectral_split(&m(2, 2, &[0.5, 0.0, 0.0, 2.0]), &m(1, 2, &[1.0, 1.0]), DEFAULT_CIRCLE_TOL).unwrap();
    assert!((s.a_s[(0, 0)] - 0.5).abs() < 1e-12 && (s.a_us[(0, 0)] - 2.0).abs() < 1e-12);
    // C entries follow the eigenvector scaling; the product C·T is what is invariant
    let a = m(2, 2, &[2.0, 1.0, 0.0, 0.5]);
    let s = spectral_split(&a, &m(1, 2, &[1.0, 0.0]), DEFAULT_CIRCLE_TOL).unwrap();
    assert!((s.reassemble() - &a).norm() / a.norm() < 1e-10);
    // unit-circle eigenvalues go to the unstable block
    let s = spectral_split(&m(2, 2, &[1.0, 0.0, 0.0, 0.3]), &m(1, 2, &[1.0, 1.0]), DEFAULT_CIRCLE_TOL).unwrap();
    assert_eq!((s.stable_dim(), s.unstable_dim()), (1, 1));
    let s = spectral_split(&rotation(), &m(1, 2, &[1.0, 0.0]), DEFAULT_CIRCLE_TOL).unwrap();
    assert_eq!(s.unstable_dim(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn adding_samples_never_lowers_rank(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, c, taus) = random_integer_case(&mut rng);
        let extra = rng.random_range(0..=10u64);
        let mut more = taus.clone();
        if !more.contains(&extra) {
            more.push(extra);
            more.sort_unstable();
        }
        prop_assert!(exact_sampled_rank(&a, &c, &more) >= exact_sampled_rank(&a, &c, &taus));
        prop_assert!(float_rank(&a, &c, &more) >= float_rank(&a, &c, &taus));
    }

    #[test]
    fn observability_is_similarity_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, c, taus) = random_integer_case(&mut rng);
        let (a, c) = (to_f64(&a), to_f64(&c));
        let n = a.nrows();
        // well-conditioned change of basis
        let t = DMatrix::identity(n, n) + random_matrix(&mut rng, n, n, 0.3);
        let t_inv = t.clone().try_inverse().unwrap();
        let a2 = &t_inv * &a * &t;
        let c2 = &c * &t;
        let st = times(&taus);
        prop_assert_eq!(
            is_sample_observable(&a, &c, &st, DEFAULT_RANK_FACTOR).unwrap(),
            is_sample_observable(&a2, &c2, &st, DEFAULT_RANK_FACTOR).unwrap()
        );
    }

    #[test]
    fn rolling_check_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, c, _) = random_integer_case(&mut rng);
        let (a, c) = (to_f64(&a), to_f64(&c));
        let pattern: Vec<u64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=4)).collect();
        let d_max = *pattern.iter().max().unwrap();
        let window = d_max + rng.random_range(0..=6);
        let gaps = GapSequence::new(pattern.clone()).unwrap();
        prop_assert_eq!(
            rolling_window_check(&a, &c, &gaps, window, DEFAULT_RANK_FACTOR).unwrap(),
            brute_rolling(&a, &c, &pattern, window, 5)
        );
    }

    #[test]
    fn split_preserves_spectrum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=6);
        let a = random_matrix(&mut rng, n, n, 1.2);
        let eigs = sorted_eigs(&a);
        // keep clear of the boundary so the partition is unambiguous
        prop_assume!(eigs.iter().all(|e| (e.norm() - 1.0).abs() > 1e-6));
        let c = random_matrix(&mut rng, 2, n, 1.0);
        let s = spectral_split(&a, &c, DEFAULT_CIRCLE_TOL).unwrap();
        prop_assert!((s.reassemble() - &a).norm() / a.norm() < 1e-10);
        let mut blocks: Vec<Complex<f64>> = sorted_eigs(&s.a_s);
        blocks.extend(sorted_eigs(&s.a_us));
        blocks.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
        prop_assert_eq!(blocks.len(), eigs.len());
        for (x, y) in blocks.iter().zip(&eigs) {
            prop_assert!((x - y).norm() < 1e-8, "{} vs {}", x, y);
        }
        prop_assert!(sorted_eigs(&s.a_s).iter().all(|e| e.norm() < 1.0));
        prop_assert!(sorted_eigs(&s.a_us).iter().all(|e| e.norm() >= 1.0));
        prop_assert_eq!(s.stable_dim(), eigs.iter().filter(|e| e.norm() < 1.0).count());
        // C·T_J splits into (C_s, C_us)
        let ct = &c * &s.transform;
        let k = s.stable_dim();
        prop_assert!((ct.columns(0, k) - &s.c_s).amax() < 1e-10 * (1.0 + ct.amax()));
        prop_assert!((ct.columns(k, n - k) - &s.c_us).amax() < 1e-10 * (1.0 + ct.amax()));
    }
}
