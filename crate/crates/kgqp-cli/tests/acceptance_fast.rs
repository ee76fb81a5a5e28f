use kgqp_cli::acceptance;

#[test]
fn quick_criteria_pass() {
    for v in [
        acceptance::rotation_oracle(),
        acceptance::kam_contraction(),
        acceptance::resonant_rotation(),
        acceptance::phase_bounds(),
        acceptance::large_m(),
        acceptance::vdc_constants(),
    ] {
        assert!(v.pass, "{}", v.line());
    }
}
