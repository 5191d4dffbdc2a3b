mod common;

use common::gradcheck::{check, TOLERANCE};
use hirope::{DimSplit, PositionStrategy, WindowConfig};

fn assert_all(report: &[(String, f64)]) {
    for (name, err) in report {
        assert!(*err <= TOLERANCE, "{name}: relative error {err:.3e}");
    }
}

#[test]
fn origin_gradients() {
    assert_all(&check(PositionStrategy::Origin));
}

#[test]
fn hirope_two_pass_gradients() {
    let strategy = PositionStrategy::HiRope {
        split: DimSplit::new(vec![1, 1]).unwrap(),
        window: WindowConfig::new(3).unwrap(),
    };
    assert_all(&check(strategy));
}

#[test]
fn baseline_gradients() {
    assert_all(&check(PositionStrategy::ReRope { window: 3 }));
    assert_all(&check(PositionStrategy::SelfExtend { group: 2, neighbor: 3 }));
    assert_all(&check(PositionStrategy::Ntk { scale: 4.0 }));
}
