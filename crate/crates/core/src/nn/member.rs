use rand::Rng;

use super::{Adam, AdamConfig, Mlp, MlpSpec};
use crate::Result;

/// A trainable network paired with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub net: Mlp,
    pub opt: Adam,
}

impl Member {
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, opt: AdamConfig, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(spec, rng)?;
        let opt = Adam::new(opt, &net);
        Ok(Self { net, opt })
    }
}
