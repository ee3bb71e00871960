use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::run::Models;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::men::{pretrain_fmen, Fmen};
use crate::nn::checkpoint::Checkpoint;
use crate::siamese::{build_training_pairs, train_siamese, SiameseNet};
use crate::synth::Sequence;

pub const SIAMESE_CHECKPOINT: &str = "siamese.ckpt";
pub const FMEN_CHECKPOINT: &str = "fmen.ckpt";

/// Offline training output.
#[derive(Debug, Clone)]
pub struct Trained {
    pub models: Models,
    /// Mean contrastive loss per epoch.
    pub siamese_losses: Vec<f64>,
    /// Pretraining loss per iteration of the motion feature stage.
    pub fmen_losses: Vec<f64>,
}

/// Pretrains the motion feature stage and trains the matching network on
/// `corpus`.
pub fn train_models(cfg: &Config, corpus: &[Sequence], seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if corpus.iter().all(|s| s.len() < 2) {
        return Err(Error::Config("training corpus has no sequence with two or more frames".into()));
    }
    let (fmen, fmen_losses) = pretrain_fmen(&cfg.men, corpus, seed)?;
    let t = &cfg.siamese_train;
    let groups = build_training_pairs(corpus, t.groups_per_sequence, t.candidates_per_group, seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut siamese = SiameseNet::new(cfg.siamese.clone(), &mut rng)?;
    let siamese_losses = train_siamese(&mut siamese, corpus, &groups, t, seed.wrapping_add(3))?;
    Ok(Trained { models: Models { siamese, fmen }, siamese_losses, fmen_losses })
}

impl Models {
    /// Writes both checkpoints into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut ck = Checkpoint::new();
        self.siamese.save_to(&mut ck);
        ck.save(&dir.join(SIAMESE_CHECKPOINT))?;
        let mut ck = Checkpoint::new();
        self.fmen.save_to(&mut ck);
        ck.save(&dir.join(FMEN_CHECKPOINT))
    }

    /// Loads both checkpoints from `dir`, checking every shape against `cfg`.
    pub fn load(cfg: &Config, dir: &Path) -> Result<Self> {
        let open = |name: &str| {
            let p = dir.join(name);
            Checkpoint::load(&p).map_err(|e| match e {
                Error::Io(io) => Error::Checkpoint(format!("{}: {io}", p.display())),
                other => other,
            })
        };
        let hint = |fields: &'static str| {
            move |e: Error| match e {
                Error::Checkpoint(m) => Error::Checkpoint(format!("{m} (config fields {fields})")),
                other => other,
            }
        };
        Ok(Self {
            siamese: SiameseNet::load_from(cfg.siamese.clone(), &open(SIAMESE_CHECKPOINT)?)
                .map_err(hint("siamese.widths / siamese.fc_width / siamese.roi_bins"))?,
            fmen: Fmen::load_from(&cfg.men, &open(FMEN_CHECKPOINT)?)
                .map_err(hint("men.fmen_filters / men.fmen_kernel"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::run::tests::{tiny, tiny_sequence};
    use super::*;

    #[test]
    fn checkpoints_round_trip_and_reject_mismatch() {
        let (models, cfg) = tiny();
        let dir = tempfile::tempdir().unwrap();
        models.save(dir.path()).unwrap();
        let back = Models::load(&cfg, dir.path()).unwrap();
        assert_eq!(back.siamese.layers(), models.siamese.layers());
        assert_eq!(back.fmen.conv, models.fmen.conv);
        let mut other = cfg.clone();
        other.siamese.fc_width += 1;
        let err = Models::load(&other, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)) && err.to_string().contains("siamese.fc.weight"), "{err}");
        assert!(matches!(Models::load(&cfg, &dir.path().join("missing")), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let (_, mut cfg) = tiny();
        cfg.men.pretrain.iterations = 3;
        cfg.siamese_train.epochs = 2;
        cfg.siamese_train.groups_per_sequence = 2;
        let corpus = vec![tiny_sequence(4, 2), tiny_sequence(4, 3)];
        let a = train_models(&cfg, &corpus, 11).unwrap();
        let b = train_models(&cfg, &corpus, 11).unwrap();
        assert_eq!(a.siamese_losses.len(), 2);
        assert_eq!(a.siamese_losses, b.siamese_losses);
        assert_eq!(a.models.siamese.layers(), b.models.siamese.layers());
        assert!(train_models(&cfg, &[tiny_sequence(1, 2)], 1).is_err());
    }
}
