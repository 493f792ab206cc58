use std::collections::{BTreeMap, BTreeSet};

use compass_core::deps::{
    build_defuse, directly_data_dependent, directly_data_dependent_bruteforce, DefUse, DefUseTable,
    DependencyRelation,
};
use compass_core::engine::Model;
use compass_core::lts::{Lts, LtsBuilder, TransitionId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: [&str; 3] = ["x", "y", "z"];

fn random_model(rng: &mut ChaCha8Rng) -> (Lts, DefUseTable) {
    let n = rng.gen_range(2..=9u32);
    let mut b = LtsBuilder::new(n);
    for _ in 0..rng.gen_range(n..=3 * n) {
        b.forward(rng.gen_range(0..n), "t", rng.gen_range(0..n));
    }
    let lts = b.build();
    let mut entries = BTreeMap::new();
    let mut control = BTreeSet::new();
    for t in lts.forward() {
        let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            VARS.iter()
                .filter(|_| rng.gen_bool(0.3))
                .map(|v| v.to_string())
                .collect()
        };
        entries.insert(
            t.id,
            DefUse {
                defs: pick(rng),
                uses: pick(rng),
            },
        );
        if rng.gen_bool(0.3) {
            control.insert(t.id);
        }
    }
    (lts, DefUseTable::from_parts(entries, control))
}

fn all_pairs(lts: &Lts) -> Vec<(TransitionId, TransitionId)> {
    let ids: Vec<_> = lts.forward().map(|t| t.id).collect();
    ids.iter()
        .flat_map(|u| ids.iter().map(move |v| (*u, *v)))
        .collect()
}

#[test]
fn direct_dependency_matches_path_enumeration_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut positives = 0;
    for _ in 0..150 {
        let (lts, table) = random_model(&mut rng);
        for (u, v) in all_pairs(&lts) {
            let fast = directly_data_dependent(&lts, &table, u, v);
            assert_eq!(
                fast,
                directly_data_dependent_bruteforce(&lts, &table, u, v),
                "pair {u:?} {v:?}"
            );
            positives += fast as usize;
        }
    }
    assert!(positives > 100);
}

#[test]
fn relation_agrees_with_pairwise_check_and_is_transitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..60 {
        let (lts, table) = random_model(&mut rng);
        let rel = DependencyRelation::build(&lts, &table);
        let pairs = all_pairs(&lts);
        for (u, v) in &pairs {
            assert_eq!(
                rel.directly_depends(*v, *u),
                directly_data_dependent(&lts, &table, *u, *v)
            );
        }
        for (u, v) in &pairs {
            if !rel.data_dependent(*u, *v) {
                continue;
            }
            for w in lts.forward().map(|t| t.id) {
                if rel.directly_depends(w, *v) {
                    assert!(rel.data_dependent(*u, w));
                }
            }
        }
    }
}

#[test]
fn tbs_dependencies_match_path_enumeration() {
    let model = Model::tbs();
    let table = build_defuse(&model.lts, &model.workflow);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs = all_pairs(&model.lts);
    pairs.shuffle(&mut rng);
    for (u, v) in pairs.into_iter().take(600) {
        assert_eq!(
            directly_data_dependent(&model.lts, &table, u, v),
            directly_data_dependent_bruteforce(&model.lts, &table, u, v)
        );
    }
}
