use ngtm_core::net::NetConfig;
use ngtm_core::training::{Checkpoint, TrainConfig, CHECKPOINT_VERSION};
use ngtm_core::NgtmModel;

pub fn tiny_checkpoint(k: usize) -> Checkpoint {
    let net = NetConfig {
        k,
        w: 3,
        n_sub: 4,
        n_max: 8,
        latent_dim: 4,
        hidden_dim: 8,
        encoder_layers: 2,
        attention_heads: 2,
        ..NetConfig::default()
    };
    Checkpoint {
        version: CHECKPOINT_VERSION,
        model: NgtmModel::new(net.clone(), 3).unwrap(),
        config: TrainConfig {
            net,
            threshold: 0.3,
            ..TrainConfig::default()
        },
        epoch: 0,
        val_metric: 0.0,
        seed_state: 3,
    }
}
