//! The security contrast: label watermarks are forgeable by anyone with
//! query access; registry-backed serial numbers are not.
//!
//! Run with: cargo run --release --example attack_simulation

use snmark::experiments::{ExperimentContext, ModelId, Profile, Variant};
use snmark::mnist::Dataset;
use snmark::service::{attack_forge_label, attack_forge_sn, serve};

fn main() -> snmark::Result<()> {
    let ds = match Dataset::load(Dataset::default_dir()) {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("MNIST unavailable ({e}); see README for data setup");
            return Ok(());
        }
    };
    let mut ctx = ExperimentContext::new(
        ds,
        Profile::ci(),
        std::env::temp_dir().join("snmark-attack-example"),
        Some(".snmark-cache".into()),
    )?;
    ctx.verbose = true;
    ctx.trained(ModelId::Teacher, Variant::Sn)?;
    let protected = &ctx.models_view()[&(ModelId::Teacher, Variant::Sn)];
    let service = serve(protected.network.clone(), "protected-teacher", "127.0.0.1:0")?;
    println!("attacking {}", service.endpoint());

    // anyone can fabricate (image, label) watermark pairs
    let label = attack_forge_label(&service.endpoint(), 1000, 21)?;
    println!(
        "label forgery: {}/{} trials produced a claimable pair (rate {:.2})",
        label.successes, label.trials, label.success_rate
    );

    // nobody fabricates an accepted serial
    let sn = attack_forge_sn(
        &service.endpoint(),
        ctx.registry(),
        ctx.params(),
        ctx.profile.quantizer,
        4,
        100_000,
        22,
    )?;
    println!(
        "serial forgery: {}/{} trials accepted (rate {:.2e}) using {} probe queries",
        sn.successes, sn.trials, sn.success_rate, sn.queries_used
    );
    service.stop();
    Ok(())
}
