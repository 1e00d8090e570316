//! Walk through the quantization path: project a node state to the latent
//! space, pick the nearest codeword, format its wire index, decode it back,
//! and demo the scalar quantizer used by the C-bit baseline.
//!
//!     cargo run --release -p vqmpnn --example quantize_roundtrip

use vqmpnn::comms::{clip, ScalarQuantizer};
use vqmpnn::diffcore::Tape;
use vqmpnn::mpnn::{ModelConfig, ModelParams};
use vqmpnn::vq::{decode_index, index_bits, index_wire_format, quantize, CodewordIndex};

fn main() {
    let model = ModelParams::init(ModelConfig::new(16, 12, 5, 3), 3);
    let mut tape = Tape::new();
    let state: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin() * 0.4).collect();
    let h = tape.input(&state);
    let q = quantize(&mut tape, &model.set, &model.proj_enc, &model.codebook, h).unwrap();
    println!("latent  = {:?}", &tape.value(q.latent)[..4]);
    println!(
        "index   = {} of K = {} -> {} wire bits, binary {}",
        q.index.0,
        model.codebook.k,
        index_bits(model.codebook.k),
        index_wire_format(q.index, model.codebook.k)
    );
    let recovered = decode_index(
        &mut tape,
        &model.set,
        &model.proj_dec,
        &model.codebook,
        q.index,
    )
    .unwrap();
    println!("recovered state head = {:?}", &tape.value(recovered)[..4]);

    // the third codeword of a five-entry book travels as 010
    println!(
        "third codeword of K=5 -> {}",
        index_wire_format(CodewordIndex(2), 5)
    );

    for k in [5usize, 64, 1024, 2048] {
        println!("K = {k:>5}: index width {} bits", index_bits(k));
    }

    let quant = ScalarQuantizer::new(1.0, 3);
    println!("scalar quantizer b = 1, C = 3, step {:.3}:", quant.step());
    for v in [-1.4, -0.6, 0.2, 0.9, 2.0] {
        println!(
            "  v = {v:>5.2} -> clip {:>5.2} -> {:>6.3}",
            clip(v, 1.0),
            quant.quantize(v)
        );
    }
}
