use std::time::{Duration, Instant};

use compass_core::sat::{
    enumerate_exhaustive, enumerate_models, pigeonhole, solve, CnfInstance, SatResult,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cnf(rng: &mut ChaCha8Rng, vars: u32, clauses: usize) -> CnfInstance {
    let mut inst = CnfInstance::new(vars);
    for _ in 0..clauses {
        let width = rng.gen_range(1..=3);
        let c = (0..width)
            .map(|_| {
                let v = rng.gen_range(1..=vars) as i32;
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        inst.add_clause(c);
    }
    inst
}

#[test]
fn random_corpus_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut sat, mut unsat) = (0, 0);
    for i in 0..300 {
        // a handful of instances at the top of the range keeps this fast
        let vars = if i % 15 == 0 {
            rng.gen_range(15..=20)
        } else {
            rng.gen_range(1..=14)
        };
        let clauses = rng.gen_range(1..=(vars as usize * 5));
        let inst = random_cnf(&mut rng, vars, clauses);
        let models = enumerate_exhaustive(&inst);
        match solve(&inst).unwrap() {
            SatResult::Sat(m) => {
                assert!(inst.evaluate(&m));
                assert!(!models.is_empty());
                sat += 1;
            }
            SatResult::Unsat => {
                assert!(
                    models.is_empty(),
                    "solver claimed unsat:\n{}",
                    inst.to_dimacs()
                );
                unsat += 1;
            }
        }
    }
    assert!(
        sat > 20 && unsat > 20,
        "corpus too lopsided: {sat} sat, {unsat} unsat"
    );
}

#[test]
fn incremental_enumeration_counts_every_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let vars = rng.gen_range(1..=10);
        let inst = random_cnf(&mut rng, vars, vars as usize * 2);
        let mut expected = enumerate_exhaustive(&inst);
        let mut got = enumerate_models(&inst).unwrap();
        expected.sort();
        got.sort();
        assert_eq!(got, expected);
    }
}

#[test]
fn pigeonhole_5_4_is_unsat_quickly() {
    let start = Instant::now();
    assert_eq!(solve(&pigeonhole(5, 4)).unwrap(), SatResult::Unsat);
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(solve(&pigeonhole(4, 4)).unwrap().is_sat());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dimacs_round_trips(seed in any::<u64>(), vars in 1u32..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_cnf(&mut rng, vars, 20);
        prop_assert_eq!(CnfInstance::from_dimacs(&inst.to_dimacs()).unwrap(), inst);
    }
}
