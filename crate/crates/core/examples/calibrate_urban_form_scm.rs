//! Recomputes `data/urban_form_scm.json`: solves for the path coefficients of the
//! urban-form graph whose as-tested link strengths at the pooled sample size
//! equal the target values.
//!
//! cargo run -p urbcause --release --example calibrate_urban_form_scm

use std::path::Path;

use urbcause::synth::{
    as_tested_rho, calibrate, urban_form_structure, BALANCED_POOL_SIZE, URBAN_FORM_TARGETS,
};

fn main() {
    let mut scm = urban_form_structure();
    let err = calibrate(
        &mut scm,
        &URBAN_FORM_TARGETS,
        BALANCED_POOL_SIZE,
        2000,
        1e-12,
    );
    assert!(err < 1e-9, "calibration did not converge: {err}");
    // Round to keep the data file readable; the rounding error is far
    // below the tolerance the strengths are checked at.
    for ps in &mut scm.parents {
        for t in ps {
            t.coefficient = (t.coefficient * 1e6).round() / 1e6;
        }
    }
    let cov = scm.covariance();
    for &(f, t, target) in &URBAN_FORM_TARGETS {
        let got = as_tested_rho(&scm, &cov, f, t, BALANCED_POOL_SIZE);
        println!(
            "{:>28} -> {:<28} coef {:+.6} rho {:+.4} (target {:+.2})",
            scm.variables[f],
            scm.variables[t],
            scm.coefficient(f, t).unwrap(),
            got,
            target
        );
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/urban_form_scm.json");
    let text = serde_json::to_string_pretty(&scm).expect("serializes") + "\n";
    std::fs::write(&path, text).expect("write data file");
    println!("wrote {}", path.display());
}
