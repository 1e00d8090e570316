//! The shared vector-quantized codebook: projection encoder/decoder,
//! nearest-codeword lookup, straight-through composition, and the three
//! VQ loss terms.

use rand::Rng;

use crate::diffcore::{DiffError, Mlp, ParamRef, ParamSet, Tape, ValueId};

/// Index of a codeword; travels the wire as `ceil(log2 K)` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodewordIndex(pub usize);

/// Wire width of a codeword index for a codebook of `k` entries.
pub fn index_bits(k: usize) -> u32 {
    assert!(k >= 1);
    if k == 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// Binary rendering of an index at the wire width for codebook size `k`.
pub fn index_wire_format(index: CodewordIndex, k: usize) -> String {
    let bits = index_bits(k) as usize;
    format!("{:0width$b}", index.0, width = bits.max(1))
}

/// K codewords of dimension D living in one trainable parameter block.
#[derive(Debug, Clone, Copy)]
pub struct Codebook {
    pub block: ParamRef,
    pub k: usize,
    pub d: usize,
}

impl Codebook {
    /// Register a codebook initialized uniformly in `[-1/K, 1/K]`.
    pub fn register(params: &mut ParamSet, k: usize, d: usize, rng: &mut impl Rng) -> Self {
        assert!(k >= 1 && d >= 1);
        let bound = 1.0 / k as f64;
        let data = (0..k * d).map(|_| rng.gen_range(-bound..=bound)).collect();
        let block = params.add_block("codebook", k, d, data);
        Self { block, k, d }
    }

    pub fn codeword<'a>(&self, params: &'a ParamSet, index: CodewordIndex) -> &'a [f64] {
        params.block(self.block).row(index.0)
    }
}

/// Index of the codeword closest in Euclidean distance to `latent`,
/// ties broken toward the lowest index.
pub fn nearest_codeword(latent: &[f64], book: &Codebook, params: &ParamSet) -> CodewordIndex {
    debug_assert_eq!(latent.len(), book.d);
    let data = &params.block(book.block).data;
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (k, row) in data.chunks_exact(book.d).enumerate() {
        let mut dist = 0.0;
        for (a, b) in latent.iter().zip(row) {
            let diff = a - b;
            dist += diff * diff;
        }
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    CodewordIndex(best)
}

/// Map a node state to its D-dimensional latent through the projection
/// encoder.
pub fn project_encode(
    tape: &mut Tape,
    params: &ParamSet,
    encoder: &Mlp,
    state: ValueId,
) -> Result<ValueId, DiffError> {
    encoder.forward(tape, params, state)
}

/// The full quantization of one node state: latent, nearest index, and the
/// codeword row (all recorded on the tape so every loss term can reuse them).
#[derive(Debug, Clone, Copy)]
pub struct Quantized {
    pub index: CodewordIndex,
    pub latent: ValueId,
    pub codeword: ValueId,
}

pub fn quantize(
    tape: &mut Tape,
    params: &ParamSet,
    encoder: &Mlp,
    book: &Codebook,
    state: ValueId,
) -> Result<Quantized, DiffError> {
    let latent = project_encode(tape, params, encoder, state)?;
    let index = nearest_codeword(tape.value(latent), book, params);
    let codeword = tape.book_row(params, book.block, index.0);
    Ok(Quantized {
        index,
        latent,
        codeword,
    })
}

/// Recover a node state from a received index: codebook lookup followed by
/// the projection decoder.
pub fn decode_index(
    tape: &mut Tape,
    params: &ParamSet,
    decoder: &Mlp,
    book: &Codebook,
    index: CodewordIndex,
) -> Result<ValueId, DiffError> {
    if index.0 >= book.k {
        return Err(DiffError::DimensionMismatch {
            context: "decode_index".to_string(),
            expected: book.k,
            got: index.0,
        });
    }
    let row = tape.book_row(params, book.block, index.0);
    decoder.forward(tape, params, row)
}

/// Decode through the straight-through composition: the forward value equals
/// `Decoder(codeword)` while gradients reach the encoder as if quantization
/// were the identity.
pub fn decode_straight_through(
    tape: &mut Tape,
    params: &ParamSet,
    decoder: &Mlp,
    q: &Quantized,
) -> Result<ValueId, DiffError> {
    let codeword = tape.value(q.codeword).to_vec();
    let st = tape.straight_through(q.latent, &codeword)?;
    decoder.forward(tape, params, st)
}

/// The three per-encode-event loss terms. `commitment` already carries the
/// beta factor; the trainer scales the sum of all three by alpha.
#[derive(Debug, Clone, Copy)]
pub struct VqLossTerms {
    pub reconstruction: ValueId,
    pub codebook_term: ValueId,
    pub commitment_term: ValueId,
}

impl VqLossTerms {
    pub fn sum_value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.reconstruction)
            + tape.scalar(self.codebook_term)
            + tape.scalar(self.commitment_term)
    }
}

/// Loss terms for one quantization event of pre-quantization state `state`:
///
/// * reconstruction: `|| h - Decoder(st(latent, codeword)) ||^2`
/// * codebook term:  `|| sg(latent) - codeword ||^2`
/// * commitment:     `beta * || latent - sg(codeword) ||^2`
pub fn vq_loss(
    tape: &mut Tape,
    params: &ParamSet,
    decoder: &Mlp,
    state: ValueId,
    q: &Quantized,
    beta: f64,
) -> Result<VqLossTerms, DiffError> {
    let decoded = decode_straight_through(tape, params, decoder, q)?;
    let reconstruction = tape.sq_dist(state, decoded)?;
    let frozen_latent = tape.stop_grad(q.latent);
    let codebook_term = tape.sq_dist(frozen_latent, q.codeword)?;
    let frozen_codeword = tape.stop_grad(q.codeword);
    let raw_commit = tape.sq_dist(q.latent, frozen_codeword)?;
    let commitment_term = tape.scale(raw_commit, beta);
    Ok(VqLossTerms {
        reconstruction,
        codebook_term,
        commitment_term,
    })
}
