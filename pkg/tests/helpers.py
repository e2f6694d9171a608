from src.msggan.arch_spec import resolve_architecture
from src.msggan.config import ExperimentConfig


def tiny_spec(final=8, cap=8, latent=16, mode="all", kind="simple", loss="wgan_gp", equalized=True):
    return resolve_architecture(final_resolution=final, latent_dim=latent, combine_kind=kind,
                                connection_mode=mode, loss_kind=loss, channel_cap=cap, equalized_lr=equalized)


def tiny_config(out_dir, **overrides) -> ExperimentConfig:
    data = {
        "final_resolution": 8,
        "latent_dim": 16,
        "channel_cap": 8,
        "batch_size": 4,
        "dataset_size": 32,
        "budget": 16,
        "output_dir": str(out_dir),
        "eval_samples": 16,
        "log_every": 1,
        "eval_every": 0,
        "checkpoint_every": 0,
        "device": "cpu",
    }
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def stream_for(cfg):
    from src.msggan.data import load_dataset, source_from_config
    return load_dataset(source_from_config(cfg), cfg.batch_size, shuffle_seed=cfg.seed,
                        scales=sorted(cfg.architecture().connection_mask))
