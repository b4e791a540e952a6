"""Small synthetic federations that train in well under a second."""

from fediot.data_pipeline import SynthConfig, prepare_device, synth_generate
from fediot.federation import FederatedConfig
from fediot.numeric import RngStream


def small_synth(seed: int = 0, num_devices: int = 3) -> SynthConfig:
    return SynthConfig(
        num_devices=num_devices,
        feature_dim=12,
        benign_rows=90,
        anomaly_rows=120,
        manifold_rank=3,
        seed=seed,
    )


def small_federated(seed: int = 0, num_clients: int = 3, **overrides) -> FederatedConfig:
    values = dict(
        num_clients=num_clients,
        num_selected=2,
        batch_size=16,
        baseline_num=60,
        num_rounds=2,
        epochs=2,
        retrain_epochs=2,
        seed=seed,
    )
    values.update(overrides)
    return FederatedConfig(**values)


def small_datasets(seed: int = 0, num_devices: int = 3):
    root = RngStream(seed)
    return [
        prepare_device(table, f"device_{d + 1:02d}", root.derive("split", client=d))
        for d, table in enumerate(synth_generate(small_synth(seed, num_devices)))
    ]
