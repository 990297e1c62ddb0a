//! The checkpointable unit: all parameter stores, the network structures
//! built over them, optimizer state and the iteration counter.

use crate::error::Result;
use crate::networks::{Brm, PatchDiscriminator, Recognizer, Tmm};
use crate::nn::{Adam, ParamStore};
use crate::util::derive_rng;
use crate::Elem;

use super::TrainConfig;

pub struct TrainState {
    pub config: TrainConfig,
    pub gen_store: ParamStore<Elem>,
    pub disc_store: ParamStore<Elem>,
    pub rec_store: ParamStore<Elem>,
    pub brm: Brm,
    pub tmm: Tmm,
    pub d_b: PatchDiscriminator,
    pub d_t: PatchDiscriminator,
    pub rec: Recognizer,
    pub adam_gen: Adam,
    pub adam_disc: Adam,
    pub iteration: u64,
    /// Gate accuracy of the frozen recognizer, recorded when it was
    /// pre-trained or loaded.
    pub recognizer_accuracy: Option<f64>,
}

impl TrainState {
    /// Fresh state with seed-derived initialization. Network construction
    /// order is fixed, so identical configs produce identical parameters.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = &config.model;
        let mut gen_store = ParamStore::new();
        let mut rng = derive_rng(config.seed, &["init", "generator"]);
        let brm = Brm::new(&mut gen_store, model, &mut rng);
        let tmm = Tmm::new(&mut gen_store, model, &mut rng);

        let mut disc_store = ParamStore::new();
        let mut rng = derive_rng(config.seed, &["init", "discriminators"]);
        let d_b = PatchDiscriminator::new(&mut disc_store, "d_b", model.base_channels, &mut rng);
        let d_t = PatchDiscriminator::new(&mut disc_store, "d_t", model.base_channels, &mut rng);

        let mut rec_store = ParamStore::new();
        let mut rng = derive_rng(config.seed, &["init", "recognizer"]);
        let rec = Recognizer::new(&mut rec_store, model, &mut rng);

        let adam_gen = Adam::new(config.lr, config.adam_beta1, config.adam_beta2);
        let adam_disc = Adam::new(config.lr, config.adam_beta1, config.adam_beta2);
        Ok(TrainState {
            config,
            gen_store,
            disc_store,
            rec_store,
            brm,
            tmm,
            d_b,
            d_t,
            rec,
            adam_gen,
            adam_disc,
            iteration: 0,
            recognizer_accuracy: None,
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.gen_store.total_elements()
            + self.disc_store.total_elements()
            + self.rec_store.total_elements()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ModelConfig;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                base_channels: 4,
                image_w: 48,
                image_h: 16,
                k: 4,
                vocab: "abc".into(),
                max_text_len: 6,
                rec_hidden: 12,
                rec_embed: 8,
                rec_attn: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = TrainState::new(tiny_config()).unwrap();
        let b = TrainState::new(tiny_config()).unwrap();
        assert_eq!(a.gen_store.len(), b.gen_store.len());
        for ((_, sa), (_, sb)) in a.gen_store.slots().zip(b.gen_store.slots()) {
            assert_eq!(sa.name, sb.name);
            assert_eq!(*sa.value, *sb.value, "parameter {} differs", sa.name);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let state = TrainState::new(tiny_config()).unwrap();
        super::super::save_checkpoint(&state, &path).unwrap();
        let loaded = super::super::load_checkpoint(&path).unwrap();
        let path2 = dir.path().join("state2.ckpt");
        super::super::save_checkpoint(&loaded, &path2).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b, "save -> load -> save must be bitwise stable");
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"garbage").unwrap();
        assert!(super::super::load_checkpoint(&path).is_err());
    }
}
