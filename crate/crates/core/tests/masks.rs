mod support;

use proptest::prelude::*;

use support::{causality_case, padding_case};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn later_target_tokens_never_change_earlier_logits(seed in any::<u64>()) {
        let diff = causality_case(seed);
        prop_assert!(diff <= 1e-12, "max change {:e}", diff);
    }

    #[test]
    fn padding_never_changes_real_positions(seed in any::<u64>()) {
        let diff = padding_case(seed);
        prop_assert!(diff <= 1e-12, "max change {:e}", diff);
    }
}
