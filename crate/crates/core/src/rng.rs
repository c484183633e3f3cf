//! Seeded random number generation.
//!
//! All randomness flows through [`StableRng`] (ChaCha with 8 rounds from
//! `rand_chacha`), whose output stream is fixed by the crate version and does
//! not depend on the platform. Child seeds are derived with a SplitMix64-style
//! mixer so that every (master seed, replicate, purpose) triple gets its own
//! independent stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StableRng = ChaCha8Rng;

/// What a derived seed is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedPurpose {
    Resample,
    NoiseBank,
    Optimizer,
    Dataset,
    ContaminationIndicator,
    CleanDraws,
    ContaminantDraws,
    Subsample,
    Replicate,
}

impl SeedPurpose {
    fn tag(self) -> u64 {
        match self {
            SeedPurpose::Resample => 0x5245_5341_4d50_4c45,
            SeedPurpose::NoiseBank => 0x4e4f_4953_4542_4e4b,
            SeedPurpose::Optimizer => 0x434d_4145_5354_4154,
            SeedPurpose::Dataset => 0x4441_5441_5345_5421,
            SeedPurpose::ContaminationIndicator => 0x494e_4449_4341_544f,
            SeedPurpose::CleanDraws => 0x434c_4541_4e44_5257,
            SeedPurpose::ContaminantDraws => 0x434f_4e54_414d_494e,
            SeedPurpose::Subsample => 0x5355_4253_414d_504c,
            SeedPurpose::Replicate => 0x5245_504c_4943_4154,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pure function of `(master, index, purpose)`.
pub fn derive_seed(master: u64, index: u64, purpose: SeedPurpose) -> u64 {
    let a = splitmix64(master ^ purpose.tag());
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng_from_seed(seed: u64) -> StableRng {
    StableRng::seed_from_u64(seed)
}
