//! Finite-difference check of every parameter gradient on a small model,
//! then the same check with a deliberately corrupted gradient.
//!
//!     cargo run --example gradient_check

use specpat::model::Activation;
use specpat::testing::{toy_grad_config, toy_model, toy_patch};
use specpat::train::{grad_check, GradCheckOptions, GradFault};

fn main() -> specpat::Result<()> {
    for (patch, bands, activation) in [
        (3, 9, Activation::Relu),
        (5, 20, Activation::Relu),
        (3, 13, Activation::Identity),
    ] {
        let config = specpat::ModelConfig {
            hidden_activation: activation,
            ..toy_grad_config(patch, bands)?
        };
        let model = toy_model(config, bands, 3, 7)?;
        let report = grad_check(&model, &toy_patch(patch, bands, 8), 2, &GradCheckOptions::default())?;
        println!(
            "patch {patch} bands {bands:>2} {activation:?}: max rel error {:.2e} over {} coords ({} kinks skipped), worst {}",
            report.max_rel_error, report.checked, report.skipped_kinks, report.worst_param
        );
    }

    let model = toy_model(toy_grad_config(3, 9)?, 9, 3, 7)?;
    let opts = GradCheckOptions {
        fault: Some(GradFault::ScaleOutputBias(1.1)),
        ..GradCheckOptions::default()
    };
    let report = grad_check(&model, &toy_patch(3, 9, 8), 2, &opts)?;
    println!(
        "with a 10% fault: max rel error {:.2e} at {}[{}]",
        report.max_rel_error, report.worst_param, report.worst_index
    );
    Ok(())
}
