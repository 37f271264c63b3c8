//! Vector-neuron layer family and the networks built from it: the
//! rotation-equivariant/invariant dual encoder, the canonical point-cloud
//! decoder, and the whole-shape discriminator.

mod encoder;
mod layers;
mod nets;

pub use encoder::{DualEncoder, EncodeTrace, EncoderOut};
pub use layers::{EdgeConv, VnLeakyRelu, VnLinear, VnPool};
pub use nets::{Decoder, Discriminator, Mlp};

use crate::geometry::Mat3;

/// Right-multiply every trailing 3-vector of a flat feature buffer by `r`,
/// with the product taken in f64 before rounding back to f32.
pub fn rotate_features(data: &[f32], r: &Mat3) -> Vec<f32> {
    assert_eq!(data.len() % 3, 0, "feature buffer must be 3-vectors");
    let m = &r.0;
    let mut out = Vec::with_capacity(data.len());
    for v in data.chunks_exact(3) {
        for col in 0..3 {
            let x = v[0] as f64 * m[0][col] as f64
                + v[1] as f64 * m[1][col] as f64
                + v[2] as f64 * m[2][col] as f64;
            out.push(x as f32);
        }
    }
    out
}

/// `||got - want|| / ||reference||` in f64 over flat buffers.
pub fn feature_rel_error(got: &[f32], want: &[f32], reference: &[f32]) -> f64 {
    assert_eq!(got.len(), want.len());
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for (&a, &b) in got.iter().zip(want) {
        diff += ((a - b) as f64).powi(2);
    }
    for &x in reference {
        norm += (x as f64).powi(2);
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}
