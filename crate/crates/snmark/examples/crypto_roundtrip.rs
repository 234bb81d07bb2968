//! Serial-number lifecycle without any neural network: key generation,
//! owner registration, verification, and what happens to forgeries.
//!
//! Run with: cargo run --release --example crypto_roundtrip

use rand::Rng;
use snmark::crypto::{
    keygen, sn_generate, sn_verify, CaRecord, CaRegistry, OwnerToken, SerialNumber,
};

fn main() -> snmark::Result<()> {
    let dir = std::env::temp_dir().join("snmark-crypto-example");
    std::fs::create_dir_all(&dir)?;
    let registry_path = dir.join("registry.jsonl");
    let _ = std::fs::remove_file(&registry_path);

    // 1. the owner generates trapdoor parameters and files everything with
    //    the certification authority
    let params = keygen(512, 42)?;
    println!("modulus bits: {}", params.bits());

    let token = OwnerToken::new("alice", "digit-classifier-v1", 7, &params)?;
    let sn = sn_generate(&token, &params, 16, 40)?;
    println!("serial:  {sn}");

    let mut registry = CaRegistry::open(&registry_path)?;
    let receipt = registry.register(CaRecord::new(
        "alice",
        "digit-classifier-v1",
        &token,
        &params,
        &sn,
    )?)?;
    println!("filed as entry {} in {}", receipt.entry, registry_path.display());

    // 2. the genuine serial verifies
    println!("genuine serial verifies: {}", sn_verify(&sn, &params, &registry)?);

    // 3. random serials do not
    let mut rng = snmark::rng::stream(3, "example-forgery");
    let mut accepted = 0;
    let trials = 100_000;
    for _ in 0..trials {
        let digits: Vec<u8> = (0..40).map(|_| rng.gen_range(0..16u8)).collect();
        if sn_verify(&SerialNumber::new(digits, 16)?, &params, &registry)? {
            accepted += 1;
        }
    }
    println!("forged serials accepted: {accepted}/{trials}");

    // 4. duplicate filings are rejected
    let again = CaRecord::new("mallory", "stolen", &token, &params, &sn)?;
    match registry.register(again) {
        Err(e) => println!("re-registration rejected: {e}"),
        Ok(_) => println!("BUG: duplicate accepted"),
    }
    Ok(())
}
