//! Full-size pruning soundness run; slow on a single core, so ignored by default.

use brw_core::simulator::{PruneRule, QuerySet, SimConfig, Simulator};
use brw_core::{IncrementLaw, OffspringLaw};

#[test]
#[ignore]
fn gap_and_double_gap_agree_on_ten_thousand_runs() {
    let (off, inc) = (OffspringLaw::binary(), IncrementLaw::plus_minus_one());
    let n = 64;
    let run = |gap: f64| {
        let cfg = SimConfig::new(n).with_prune(PruneRule::gap(gap));
        Simulator::new(&off, &inc, None, cfg, QuerySet::new(n)).unwrap().batch(2024, 0..10_000).unwrap()
    };
    let (a, b) = (run(2.0), run(4.0));
    let mut same = 0;
    for (x, y) in a.iter().zip(&b) {
        if x.max_final == y.max_final {
            same += 1;
        } else {
            println!("replicate {}: {} vs {} (pruned {} / {})", x.replicate, x.max_final, y.max_final, x.pruned_count, y.pruned_count);
        }
    }
    assert!(same >= 9_900, "{same}");
}
