use proptest::prelude::*;

use reflm::corpus::{kfold, CorpusSplit};

proptest! {
    #[test]
    fn five_folds_partition_the_examples(n in 5usize..400, seed in any::<u64>()) {
        let folds = kfold(n, 5, seed).unwrap();
        prop_assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn standard_split_covers_every_index_once(n in 0usize..500, seed in any::<u64>()) {
        let s = CorpusSplit::standard(n, seed);
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn too_few_examples_for_the_folds() {
    assert!(kfold(3, 5, 0).is_err());
}
