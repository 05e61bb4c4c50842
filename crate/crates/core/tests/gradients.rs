mod common;

use common::gradcases::{all_cases, GRAD_TOL};

#[test]
fn every_component_passes_finite_differences() {
    let mut failures = Vec::new();
    for (name, r) in all_cases() {
        assert!(r.checked > 0, "{name}: nothing checked");
        println!("{name}: {} entries, max rel error {:.2e} {:?}", r.checked, r.max_rel_error, r.worst);
        if r.max_rel_error > GRAD_TOL {
            failures.push(format!("{name}: {:.3e} at {:?}", r.max_rel_error, r.worst));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
