// SPDX-License-Identifier: Apache-2.0

//! Positional random streams.
//!
//! Every random draw of an experiment comes from a ChaCha8 generator keyed by
//! the master seed and selected by a 64-bit stream id
//! `L · 2⁴⁸ + tag · 2⁴⁰ + trial`. The id depends only on what is being
//! computed, never on the order in which work is scheduled. Draws that do
//! not depend on the layer count use `L = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::SchemeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Tag {
    Channel = 1,
    /// Joint scheme and its first round (average-PA).
    Joint = 2,
    Codebook = 3,
    Zf4ta = 4,
    Zf8ta = 5,
    DoaSamples = 6,
    DoaInit = 7,
    DoaTrain = 8,
    DoaEval = 9,
}

impl Tag {
    pub fn scheme(s: SchemeId) -> Tag {
        match s {
            SchemeId::Joint | SchemeId::AveragePa => Tag::Joint,
            SchemeId::Codebook => Tag::Codebook,
            SchemeId::Zf4ta => Tag::Zf4ta,
            SchemeId::Zf8ta => Tag::Zf8ta,
        }
    }
}

pub fn stream_id(layers: usize, tag: Tag, trial: usize) -> u64 {
    debug_assert!(layers < 1 << 16 && (trial as u64) < 1 << 40);
    ((layers as u64) << 48) | ((tag as u64) << 40) | trial as u64
}

pub fn stream(master_seed: u64, layers: usize, tag: Tag, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(layers, tag, trial));
    rng
}
