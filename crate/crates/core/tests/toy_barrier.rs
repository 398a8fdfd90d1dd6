use ldcbf::runner::toy::{learn, safe, ToyRun};
use ldcbf::system::RealVec;

#[test]
fn learned_barrier_is_sound_on_the_toy() {
    let cfg = ToyRun { runs: 20, ..ToyRun::default() };
    let o = learn(&cfg).unwrap();
    assert!(o.td_residual < 1e-4);
    assert_eq!(o.inclusion_violations, 0);
    assert!(o.initial_points > 0);
    assert!(o.safe_runs >= 19, "{:?}", o.exit_times);
    // the learned sets are nested: initial inside safe inside |x| < 1
    for k in 0..=300 {
        let x = RealVec::from_element(1, -1.5 + 0.01 * k as f64);
        if o.learned.in_initial_set(&x) {
            assert!(o.learned.in_safe_set(&x));
        }
        if o.learned.in_safe_set(&x) {
            assert!(safe(&x));
        }
    }
}

#[test]
fn value_is_symmetric() {
    let o = learn(&ToyRun { runs: 1, ..ToyRun::default() }).unwrap();
    for k in 0..50 {
        let x = 0.02 * k as f64;
        let a = o.learned.value(&RealVec::from_element(1, x));
        let b = o.learned.value(&RealVec::from_element(1, -x));
        assert!((a - b).abs() < 1e-9, "{x}: {a} vs {b}");
    }
}
