"""
Settings configuration using Pydantic Settings

欄位名稱對應參數表（model / simulator / estimator / expert_mpc /
safety_filter / imitation），預設值即參數表數值。
"""

from pathlib import Path
from typing import Any, List, Literal, Optional, Tuple, Type

from pydantic import BaseModel, Field, field_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

Vec3 = Tuple[float, float, float]


class ModelSettings(BaseModel):
    # 可撓連桿（第二、三連桿相同）
    length: float = Field(0.5, gt=0, description="L [m]")
    width: float = Field(0.05, gt=0, description="a [m]")
    height: float = Field(0.002, gt=0, description="h [m]")
    density: float = Field(7870.0, gt=0, description="rho [kg/m^3]")
    young_modulus: float = Field(1.9e11, gt=0, description="E [Pa]")
    shear_modulus: float = Field(7.4e10, gt=0, description="G [Pa]，僅儲存")
    damping_ratio: float = Field(5e-3, gt=0, lt=1, description="zeta")

    # 剛性第一連桿（立柱）
    link1_length: float = Field(0.3, gt=0)

    torque_upper: Vec3 = (20.0, 10.0, 10.0)
    velocity_upper: Vec3 = (2.5, 3.5, 3.5)

    n_seg_control: int = Field(2, ge=0)
    n_seg_plant: int = Field(10, ge=0)


class SimulatorSettings(BaseModel):
    sampling_time: float = Field(0.01, gt=0)
    substeps: int = Field(20, ge=1, description="dt_fine = sampling_time / substeps")
    newton_tol: float = Field(1e-12, gt=0)
    newton_max_iters: int = Field(20, ge=1)
    noise_q_a: float = Field(3e-6, ge=0)
    noise_qd_a: float = Field(2e-3, ge=0)
    noise_p_ee: float = Field(1e-4, ge=0)


class EstimatorSettings(BaseModel):
    tableau: Literal["radau3", "radau2", "gauss2", "gauss4"] = "radau3"
    init_cov_q: float = Field(1e-2, gt=0)
    init_cov_qd: float = Field(1e-3, gt=0)
    # 第一個關節使用較小值，其餘關節使用較大值
    process_q: Tuple[float, float] = (1e-4, 1e-3)
    process_qd: Tuple[float, float] = (0.1, 0.5)
    meas_q_a: float = Field(3e-4, gt=0)
    meas_qd_a: float = Field(5e-1, gt=0)
    meas_p_ee: float = Field(1e-2, gt=0)
    newton_tol: float = Field(1e-10, gt=0)


class MpcSettings(BaseModel):
    horizon: int = Field(50, ge=2)
    dt: float = Field(0.01, gt=0)
    tableau: Literal["gauss4", "gauss2", "radau3", "radau2"] = "gauss4"

    w_q_a: float = Field(0.01, ge=0)
    w_q_a_terminal: float = Field(0.1, ge=0)
    w_qd_a: float = Field(0.1, ge=0)
    w_qd_a_terminal: float = Field(1.0, ge=0)
    w_q_p: float = Field(1e-3, ge=0)
    w_q_p_terminal: float = Field(1e-3, ge=0)
    w_qd_p: float = Field(10.0, ge=0)
    w_qd_p_terminal: float = Field(10.0, ge=0)
    r: Vec3 = (0.1, 1.0, 1.0)
    r_rest: Optional[Vec3] = None  # 只有安全濾波器使用 (r_{1:N})
    p: Vec3 = (3e3, 3e3, 3e3)
    p_terminal: Vec3 = (3e4, 3e4, 3e4)
    slack_l2: Tuple[float, float] = (1e3, 3e5)
    slack_l1: Tuple[float, float] = (1e1, 1e6)

    delta_q: float = Field(0.0, ge=0)
    delta_qd: float = Field(1.0, ge=0)
    delta_z: float = Field(0.02, ge=0)

    terminal: Literal["hard", "soft", "none"] = "hard"
    soften_on_infeasible: bool = True

    max_iters: int = Field(50, ge=1)
    kkt_tol: float = Field(1e-6, gt=0)
    step_tol: float = Field(1e-8, gt=0)
    qp_tol: float = Field(1e-6, gt=0)
    qp_max_iters: int = Field(100, ge=1)
    newton_tol: float = Field(1e-10, gt=0)


def _safety_filter_defaults() -> MpcSettings:
    return MpcSettings(
        horizon=20,
        w_q_a=0.0,
        w_q_a_terminal=0.0,
        w_qd_a=0.01,
        w_qd_a_terminal=0.01,
        w_q_p=0.0,
        w_q_p_terminal=0.0,
        w_qd_p=0.01,
        w_qd_p_terminal=0.01,
        r=(1.0, 1.0, 1.0),
        r_rest=(1e-5, 1e-5, 1e-5),
        p=(0.0, 0.0, 0.0),
        p_terminal=(0.0, 0.0, 0.0),
    )


class ImitationSettings(BaseModel):
    episodes: int = Field(30, ge=1)
    initial_samples: int = Field(7000, ge=1)
    update_samples: int = Field(5000, ge=1)
    hidden_layers: List[int] = Field(default_factory=lambda: [64, 64])
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(256, ge=1)
    epochs_per_episode: int = Field(20, ge=1)
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    clamp_output: bool = True
    goal_conditioned: bool = False


class TaskSettings(BaseModel):
    z_goal: Vec3 = (0.55, -0.03, 0.2)
    goal_radii: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    q_a_lower: Vec3 = (-1.6707963267948966, -0.7853981633974483, -0.7853981633974483)
    q_a_upper: Vec3 = (-0.1, 0.7853981633974483, 0.7853981633974483)
    wall_y: float = 0.0
    t_sim: float = Field(3.0, gt=0)
    runs: int = Field(20, ge=1)

    @field_validator("goal_radii")
    @classmethod
    def _positive_radii(cls, value: List[float]) -> List[float]:
        if not value or any(r <= 0 for r in value):
            raise ValueError("goal radii must be positive")
        return value


class HarnessSettings(BaseModel):
    seed: int = Field(0, ge=0)
    out_dir: str = "results"
    format: Literal["csv", "json"] = "csv"
    plot: bool = False
    workers: int = Field(1, ge=1)
    db_path: str = "data/experiments.db"


class ArmSettings(BaseSettings):
    model: ModelSettings = Field(default_factory=ModelSettings)
    simulator: SimulatorSettings = Field(default_factory=SimulatorSettings)
    estimator: EstimatorSettings = Field(default_factory=EstimatorSettings)
    expert_mpc: MpcSettings = Field(default_factory=MpcSettings)
    safety_filter: MpcSettings = Field(default_factory=_safety_filter_defaults)
    imitation: ImitationSettings = Field(default_factory=ImitationSettings)
    task: TaskSettings = Field(default_factory=TaskSettings)
    harness: HarnessSettings = Field(default_factory=HarnessSettings)

    model_config = SettingsConfigDict(
        env_prefix="FLEXARM_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        protected_namespaces=(),
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            TomlConfigSettingsSource(settings_cls),
        )


def load_settings(config_file: Optional[Path] = None, **overrides: Any) -> ArmSettings:
    """
    讀取設定檔並套用覆寫值

    Args:
        config_file: TOML 設定檔路徑（允許 `model.density = 7870` 形式的鍵）
        overrides: 以區段為單位的覆寫值，例如 harness={"seed": 3}

    Returns:
        ArmSettings: 設定實例
    """
    if config_file is None:
        return ArmSettings(**overrides)

    path = Path(config_file)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")

    class _FileSettings(ArmSettings):
        model_config = SettingsConfigDict(toml_file=path)

    return _FileSettings(**overrides)


# 全域設定實例
settings = ArmSettings()  # noqa
