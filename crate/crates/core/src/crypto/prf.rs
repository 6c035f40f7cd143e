use hmac::{Hmac, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// HMAC-SHA256 truncated to 64 bits.
#[derive(Clone)]
pub struct Prf {
    mac: HmacSha256,
}

impl Prf {
    pub fn new(key: &[u8]) -> Prf {
        Prf { mac: HmacSha256::new_from_slice(key).expect("HMAC accepts any key length") }
    }

    pub fn eval(&self, label: &[u8], input: &[u64]) -> u64 {
        let mut mac = self.mac.clone();
        mac.update(&(label.len() as u32).to_be_bytes());
        mac.update(label);
        for x in input {
            mac.update(&x.to_be_bytes());
        }
        let out = mac.finalize().into_bytes();
        u64::from_be_bytes(out[..8].try_into().unwrap())
    }
}
