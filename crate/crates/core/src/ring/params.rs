//! Scheme parameters and their JSON form.
//!
//! Parameter files are JSON objects with camelCase keys; `moduli` entries are
//! decimal strings (they exceed the interoperable integer range of JSON) and
//! `crsSeed` is 64 hex characters.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ring::zq;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CryptoParams {
    /// Ring degree N (power of two). Slot count is N/2.
    pub ring_degree: usize,
    /// Modulus chain q_0..q_L, distinct NTT-friendly primes. q_0 is the
    /// decryption modulus; rescaling drops primes from the tail.
    #[serde(with = "serde_moduli")]
    pub moduli: Vec<u64>,
    /// Encoding scale is 2^log2Scale.
    pub log2_scale: u32,
    /// Probability that a secret coefficient is nonzero (+-1 equally likely).
    pub ternary_density: f64,
    /// Sigma of the rounded Gaussian used for RLWE noise.
    pub gaussian_sigma: f64,
    /// Sigma of the flooding noise added by PubKeySwitch / Reconstruct shares.
    pub smudge_sigma: f64,
    /// Seed of the common reference string all parties expand.
    #[serde(with = "serde_hex32")]
    pub crs_seed: [u8; 32],
}

impl CryptoParams {
    /// Desk-scale production preset: N = 8192, five-prime chain
    /// (one 61-bit decryption prime, four rescaling primes just above 2^40),
    /// scale 2^40, depth budget L = 4.
    pub fn paper8192() -> Self {
        CryptoParams {
            ring_degree: 8192,
            moduli: vec![
                1152921504606994433, // 2^60 + 9*16384 + 1
                1099511922689,
                1099512004609,
                1099512266753,
                1099512299521,
            ],
            log2_scale: 40,
            ternary_density: 0.5,
            gaussian_sigma: 0.5,
            smudge_sigma: 1024.0,
            crs_seed: *b"paper8192 common reference seed!",
        }
    }

    /// Smallest usable parameters, for structural tests only.
    pub fn tiny() -> Self {
        CryptoParams {
            ring_degree: 16,
            moduli: vec![536871233, 536871649],
            log2_scale: 20,
            ternary_density: 0.5,
            gaussian_sigma: 0.5,
            smudge_sigma: 64.0,
            crs_seed: *b"tiny preset common reference str",
        }
    }

    /// Mid-size test parameters with the same depth budget (L = 4) as the
    /// production preset but a 256-degree ring, so multi-layer pipelines run
    /// in milliseconds. 128 slots; not a secure configuration.
    pub fn tiny256() -> Self {
        CryptoParams {
            ring_degree: 256,
            moduli: vec![536874497, 1049089, 1051649, 1053697, 1054721],
            log2_scale: 20,
            ternary_density: 0.5,
            gaussian_sigma: 0.5,
            smudge_sigma: 64.0,
            crs_seed: *b"tiny256 preset common reference!",
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper8192" => Ok(Self::paper8192()),
            "tiny" => Ok(Self::tiny()),
            "tiny256" => Ok(Self::tiny256()),
            other => Err(Error::InvalidParams(format!("unknown preset {other:?}"))),
        }
    }

    pub fn scale(&self) -> f64 {
        (self.log2_scale as f64).exp2()
    }

    /// Highest ciphertext level; fresh ciphertexts start here.
    pub fn max_level(&self) -> usize {
        self.moduli.len() - 1
    }

    pub fn slots(&self) -> usize {
        self.ring_degree / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring_degree;
        if !n.is_power_of_two() || n < 4 {
            return Err(Error::InvalidParams(format!(
                "ringDegree {n} must be a power of two >= 4"
            )));
        }
        if self.moduli.is_empty() {
            return Err(Error::InvalidParams("empty modulus chain".into()));
        }
        let two_n = 2 * n as u64;
        for (i, &q) in self.moduli.iter().enumerate() {
            if q >= 1 << 62 {
                return Err(Error::InvalidParams(format!("modulus q_{i} = {q} >= 2^62")));
            }
            if !zq::is_prime(q) {
                return Err(Error::InvalidParams(format!("modulus q_{i} = {q} is not prime")));
            }
            if q % two_n != 1 {
                return Err(Error::InvalidParams(format!(
                    "modulus q_{i} = {q} is not 1 mod 2N = {two_n}"
                )));
            }
            if self.log2_scale >= 62 || q <= 1u64 << self.log2_scale {
                return Err(Error::InvalidParams(format!(
                    "scale 2^{} not below modulus q_{i} = {q}",
                    self.log2_scale
                )));
            }
        }
        let mut sorted = self.moduli.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.moduli.len() {
            return Err(Error::InvalidParams("duplicate moduli in chain".into()));
        }
        if !(self.ternary_density > 0.0 && self.ternary_density <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "ternaryDensity {} outside (0, 1]",
                self.ternary_density
            )));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidParams("gaussianSigma must be positive".into()));
        }
        if !(self.smudge_sigma > 0.0 && self.smudge_sigma.is_finite()) {
            return Err(Error::InvalidParams("smudgeSigma must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over a canonical little-endian field encoding. Every protocol
    /// message carries this hash so parties cannot silently disagree.
    pub fn params_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.ring_degree as u64).to_le_bytes());
        h.update((self.moduli.len() as u64).to_le_bytes());
        for &q in &self.moduli {
            h.update(q.to_le_bytes());
        }
        h.update(self.log2_scale.to_le_bytes());
        h.update(self.ternary_density.to_le_bytes());
        h.update(self.gaussian_sigma.to_le_bytes());
        h.update(self.smudge_sigma.to_le_bytes());
        h.update(self.crs_seed);
        h.finalize().into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: CryptoParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

mod serde_moduli {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|q| q.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        let strings = Vec::<String>::deserialize(d)?;
        strings
            .iter()
            .map(|s| s.parse::<u64>().map_err(serde::de::Error::custom))
            .collect()
    }
}

mod serde_hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("crsSeed must be 32 bytes of hex"))
    }
}
