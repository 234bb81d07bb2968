//! Serves a protected model over HTTP and verifies ownership through the
//! black-box endpoint, including the negative cases.
//!
//! Run with: cargo run --release --example serve_and_verify

use snmark::experiments::{ExperimentContext, ModelId, Profile, Variant};
use snmark::mnist::Dataset;
use snmark::service::{serve, verify_remote, PredictClient};

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
        std::env::temp_dir().join("snmark-serve-example"),
        Some(".snmark-cache".into()),
    )?;
    ctx.verbose = true;
    ctx.trained(ModelId::Teacher, Variant::Sn)?;
    ctx.trained(ModelId::Teacher, Variant::Original)?;
    let models = ctx.models_view();
    let protected = &models[&(ModelId::Teacher, Variant::Sn)];
    let unprotected = &models[&(ModelId::Teacher, Variant::Original)];
    let sig = protected.signature.as_ref().unwrap();

    // serve the protected model on an ephemeral port
    let service = serve(protected.network.clone(), "protected-teacher", "127.0.0.1:0")?;
    println!("serving on {}", service.endpoint());

    let mut client = PredictClient::connect(&service.endpoint())?;
    println!("health: {}", client.health()?);
    let first = client.predict(&ctx.dataset.test_images.row(0).to_vec())?;
    println!("prediction for test image 0: label {}", first.label);

    // the owner verifies with their secret triggers
    let report = verify_remote(
        &service.endpoint(),
        &sig.triggers,
        &sig.targets.sn,
        ctx.profile.quantizer,
        ctx.params(),
        ctx.registry(),
    )?;
    println!(
        "protected model: digits {}/{}, verdict {}",
        report.digit_matches, report.digit_total, report.verdict
    );
    service.stop();

    // same check against an unprotected model fails
    let service = serve(unprotected.network.clone(), "plain-teacher", "127.0.0.1:0")?;
    let report = verify_remote(
        &service.endpoint(),
        &sig.triggers,
        &sig.targets.sn,
        ctx.profile.quantizer,
        ctx.params(),
        ctx.registry(),
    )?;
    println!(
        "unprotected model: digits {}/{}, verdict {}",
        report.digit_matches, report.digit_total, report.verdict
    );
    service.stop();
    Ok(())
}
