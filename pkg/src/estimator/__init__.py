from .ekf import Ekf, EkfBelief, NoiseConfig, ekf_predict, ekf_update, initial_belief

__all__ = ["Ekf", "EkfBelief", "NoiseConfig", "ekf_predict", "ekf_update", "initial_belief"]
