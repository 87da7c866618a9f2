//! Finite-difference check of every trainable tensor on the tiny config,
//! followed by the checker's self-test with a corrupted backward rule.

use dst_core::tensor::{BackwardFault, OpKind};
use dst_core::train::{grad_check, tiny_config, tiny_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = tiny_config();
    for seed in 0..5 {
        let corpus = tiny_corpus(seed);
        let report = grad_check(&config, &corpus, seed, 1e-4, None)?;
        println!(
            "seed {seed}: {} tensors, max relative error {:.2e} -> {}",
            report.tensors.len(),
            report.max_rel_error(),
            if report.passed() { "ok" } else { "FAILED" }
        );
        for t in report.failures() {
            println!("  {} rel {:.2e} abs {:.2e}", t.name, t.max_rel_error, t.max_abs_error);
        }
    }

    let fault = BackwardFault {
        kind: OpKind::Gelu,
        factor: 1.5,
    };
    let report = grad_check(&config, &tiny_corpus(0), 0, 1e-4, Some(fault))?;
    println!("\nwith a corrupted GELU backward rule:");
    for t in report.failures() {
        println!("  flagged {} (rel {:.2e})", t.name, t.max_rel_error);
    }
    Ok(())
}
