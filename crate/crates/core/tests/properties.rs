mod common;

fn suite(name: &str) {
    if let Err(e) = common::run_suite(name) {
        panic!("{name}: {e}");
    }
}

#[test]
fn projection_identities() {
    suite("projection identities");
}

#[test]
fn conservation_exactness() {
    suite("conservation exactness");
}

#[test]
fn poisson_residuals() {
    suite("poisson residuals");
}

#[test]
fn diffusion_matrix_psd() {
    suite("diffusion matrix psd");
}

#[test]
fn seed_determinism() {
    suite("seed determinism");
}

#[test]
fn parse_round_trip() {
    suite("parse round-trip");
}
