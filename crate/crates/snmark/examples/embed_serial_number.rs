//! End-to-end protection flow: key generation, registry filing, alternate
//! training, extraction.
//!
//! Run with: cargo run --release --example embed_serial_number

use snmark::crypto::{keygen, sn_generate, sn_verify, CaRecord, CaRegistry, OwnerToken};
use snmark::mnist::Dataset;
use snmark::network::accuracy;
use snmark::watermark::{
    embed, encode_sn_to_targets, extract_sn, make_triggers, EmbedConfig, EvalHooks, SnQuantizer,
    TrainData,
};
use snmark::zoo::{build_scaled, ArchitectureId};

fn main() -> snmark::Result<()> {
    let ds = match Dataset::load(Dataset::default_dir()) {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("MNIST unavailable ({e}); see README for data setup");
            return Ok(());
        }
    };

    // owner side: parameters, serial, registry filing (before any training)
    let params = keygen(512, 11)?;
    let token = OwnerToken::new("alice", "example-model", 1, &params)?;
    let sn = sn_generate(&token, &params, 16, 40)?;
    let dir = std::env::temp_dir().join("snmark-embed-example");
    std::fs::create_dir_all(&dir)?;
    let registry_path = dir.join("registry.jsonl");
    let _ = std::fs::remove_file(&registry_path);
    let mut registry = CaRegistry::open(&registry_path)?;
    registry.register(CaRecord::new("alice", "example-model", &token, &params, &sn)?)?;
    println!("filed serial {sn}");

    // owner-secret triggers + targets that encode the serial
    let quant = SnQuantizer::default();
    let triggers = make_triggers(2024, 4);
    let targets = encode_sn_to_targets(&sn, quant, 4)?;

    // alternate training at quarter width (fast); full width uses the same call
    let net = build_scaled::<f32>(ArchitectureId::Teacher, 4, 3);
    let cfg = EmbedConfig { epochs: 3, trigger_ratio: 2, adam_lr: 0.002, seed: 3, verbose: true, ..Default::default() };
    let (run, extracted) = embed(
        net,
        TrainData { images: &ds.train_images, labels: &ds.train_labels },
        &triggers,
        &targets,
        &cfg,
        EvalHooks { validation: Some((&ds.val_images, &ds.val_labels)), train_probe: None },
    )?;
    println!("extracted serial: {extracted}");
    println!("matches filed serial: {}", extracted == sn);
    println!("registry verdict: {}", sn_verify(&extracted, &params, &registry)?);

    let test = accuracy(&run.network, &ds.test_images, &ds.test_labels, 512)?;
    println!("classification accuracy: {:.2}%", test * 100.0);

    // the serial only appears on the owner's triggers
    let stray = extract_sn(&run.network, &make_triggers(999, 4), quant)?;
    println!("digits matched with wrong triggers: {}/40", stray.matching_digits(&sn));
    Ok(())
}
