//! Function-preserving transfers: widen and deepen a trained teacher, then
//! compare against the random baselines.
//!
//! Run with: cargo run --release --example net2net_transfer

use snmark::mnist::Dataset;
use snmark::network::accuracy;
use snmark::watermark::{train, EmbedConfig, EvalHooks, TrainData};
use snmark::zoo::{build_scaled, net2deeper, net2wider, random_init, random_pad, ArchitectureId};

fn main() -> snmark::Result<()> {
    let ds = match Dataset::load(Dataset::default_dir()) {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("MNIST unavailable ({e}); see README for data setup");
            return Ok(());
        }
    };

    // quick quarter-width teacher
    let cfg = EmbedConfig { epochs: 2, trigger_ratio: 0, seed: 5, verbose: false, ..Default::default() };
    let teacher = train(
        build_scaled::<f32>(ArchitectureId::Teacher, 4, 5),
        TrainData { images: &ds.train_images, labels: &ds.train_labels },
        None,
        &cfg,
        EvalHooks::default(),
    )?
    .network;
    let teacher_acc = accuracy(&teacher, &ds.test_images, &ds.test_labels, 512)?;
    println!("teacher accuracy: {:.2}%", teacher_acc * 100.0);

    // widen: the student starts out computing the same function
    let (wider, map) = net2wider(&teacher, 6)?;
    println!(
        "widened conv filters {} -> {}",
        map.layers[0].counts.len(),
        map.layers[0].map.len()
    );
    let wider_acc = accuracy(&wider, &ds.test_images, &ds.test_labels, 512)?;
    println!("widened student accuracy (no training yet): {:.2}%", wider_acc * 100.0);

    // deepen: identity-initialized extra layers, same story
    let deeper = net2deeper(&teacher)?;
    let deeper_acc = accuracy(&deeper, &ds.test_images, &ds.test_labels, 512)?;
    println!("deepened student accuracy (no training yet): {:.2}%", deeper_acc * 100.0);

    // worst-case logit deviation on a test batch
    let probe = snmark::Tensor::new(
        vec![256, 784],
        ds.test_images.data()[..256 * 784].to_vec(),
    )?;
    let t = teacher.forward_logits(&probe)?;
    let w = wider.forward_logits(&probe)?;
    let d = deeper.forward_logits(&probe)?;
    let worst = |a: &snmark::Tensor<f32>, b: &snmark::Tensor<f32>| {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max)
    };
    println!("max |logit deviation| widen:  {:.2e}", worst(&t, &w));
    println!("max |logit deviation| deepen: {:.2e}", worst(&t, &d));

    // the baselines break preservation
    let padded = random_pad(&teacher, 7)?;
    let scratch = random_init::<f32>(ArchitectureId::Deeper, 8);
    println!(
        "random-pad accuracy before training: {:.2}%",
        accuracy(&padded, &ds.test_images, &ds.test_labels, 512)? * 100.0
    );
    println!(
        "random-init accuracy before training: {:.2}%",
        accuracy(&scratch, &ds.test_images, &ds.test_labels, 512)? * 100.0
    );
    Ok(())
}
