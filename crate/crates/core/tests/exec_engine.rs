use paracube::exec::tree_sum;
use paracube::{Error, Exec, ExecConfig};
use proptest::prelude::*;

fn engine(workers: usize, chunk: usize) -> Exec {
    Exec::new(ExecConfig {
        workers,
        deterministic: true,
        chunk,
    })
}

/// Values spanning many magnitudes and both signs, so summation order shows.
fn awkward(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = paracube::rng::SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let u = rng.next_f64();
            let e = (rng.next_f64() * 40.0 - 20.0).exp();
            if u < 0.5 {
                -e
            } else {
                e
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn results_are_ordered_by_group(n in 0usize..500, workers in 1usize..9, chunk in 1usize..40) {
        let out = engine(workers, chunk).parallel_for_groups(n, |g| Ok(g * g)).unwrap();
        prop_assert_eq!(out, (0..n).map(|g| g * g).collect::<Vec<_>>());
    }

    #[test]
    fn tree_reduce_matches_one_worker(seed in any::<u64>(), n in 0usize..5000, workers in 2usize..9) {
        let v = awkward(seed, n);
        let one = engine(1, 16).reduce(&v);
        prop_assert_eq!(engine(workers, 16).reduce(&v).to_bits(), one.to_bits());
        prop_assert_eq!(tree_sum(&v).to_bits(), one.to_bits());
    }
}

#[test]
fn long_reductions_fan_out_identically() {
    // Long enough for the reduction itself to run on several workers.
    let v = awkward(3, 1 << 20);
    let bits: Vec<u64> = [1, 2, 3, 4, 8]
        .iter()
        .map(|&w| engine(w, 16).reduce(&v).to_bits())
        .collect();
    assert!(bits.windows(2).all(|w| w[0] == w[1]));

    let unordered = Exec::new(ExecConfig::with_workers(4).unordered()).reduce(&v);
    let exact = tree_sum(&v);
    let magnitude: f64 = v.iter().map(|x| x.abs()).sum();
    assert!((unordered - exact).abs() <= 1e-12 * magnitude);
}

#[test]
fn accumulator_snapshots_do_not_depend_on_workers() {
    let (slots, streams) = (64, 37);
    let snapshot = |workers: usize| {
        let exec = engine(workers, 3);
        let acc = exec.accumulator(slots, streams);
        exec.parallel_for_groups(streams, |s| {
            let vals = awkward(s as u64, 200);
            let mut h = acc.stream(s)?;
            for (k, v) in vals.iter().enumerate() {
                h.add((k * 7 + s) % slots, *v)?;
            }
            Ok(())
        })
        .unwrap();
        acc.snapshot()
    };
    let reference = snapshot(1);
    for w in [2, 4, 8] {
        let s = snapshot(w);
        assert!(s.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn failing_group_is_named() {
    let err = engine(4, 2)
        .parallel_for_groups(100, |g| {
            if g == 42 {
                Err(Error::InvalidArgument("boom".into()))
            } else {
                Ok(g)
            }
        })
        .unwrap_err();
    assert!(matches!(err, Error::Task { group: 42, .. }));
    assert!(matches!(err.root(), Error::InvalidArgument(_)));
}
