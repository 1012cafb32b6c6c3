"""
数据模型定义
使用 pydantic 定义层结构、训练/剪枝配置、剪枝状态与各类报告记录
"""
from typing import Annotated, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

from config import (
    ENERGY_TABLE_PJ, PRUNE_DEFAULTS, REPORT_DEFAULTS, SENSITIVITY_DEFAULTS,
    TRAIN_DEFAULTS,
)

FreezePolicy = Literal["none", "freeze_conv_retrain_fc", "freeze_fc_retrain_conv", "alternate"]


def _split_list(value):
    """逗号分隔字符串 -> 列表（INI 文件与命令行参数均为字符串）"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[List[float], BeforeValidator(_split_list)]


class DecayMode(BaseModel):
    """权重衰减（正则化）方式"""
    kind: Literal["none", "l1", "l2"] = "none"
    coefficient: float = Field(default=0.0, ge=0.0)


class LayerSpec(BaseModel):
    """单层结构定义"""
    name: str
    kind: Literal["fully_connected", "conv", "maxpool"]
    fan_in: Optional[int] = Field(default=None, gt=0)
    fan_out: Optional[int] = Field(default=None, gt=0)
    in_channels: Optional[int] = Field(default=None, gt=0)
    filters: Optional[int] = Field(default=None, gt=0)
    kernel: Optional[int] = Field(default=None, gt=0)
    stride: Optional[int] = Field(default=None, gt=0)
    has_relu: bool = False
    dropout_rate_after: float = Field(default=0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_kind_fields(self):
        required = {
            "fully_connected": ("fan_in", "fan_out"),
            "conv": ("in_channels", "filters", "kernel", "stride"),
            "maxpool": ("kernel", "stride"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"层 {self.name} 缺少字段: {', '.join(missing)}")
        # dropout 只允许出现在全连接隐藏层之后
        if self.dropout_rate_after > 0 and not (self.kind == "fully_connected" and self.has_relu):
            raise ValueError(f"层 {self.name}: dropout 只能位于全连接隐藏层之后")
        return self

    @property
    def is_weighted(self) -> bool:
        return self.kind in ("fully_connected", "conv")

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind == "fully_connected":
            return (self.fan_in, self.fan_out)
        if self.kind == "conv":
            return (self.filters, self.in_channels, self.kernel, self.kernel)
        return ()

    @property
    def bias_size(self) -> int:
        if self.kind == "fully_connected":
            return self.fan_out
        if self.kind == "conv":
            return self.filters
        return 0


class TrainConfig(BaseModel):
    """训练配置"""
    epochs: int = Field(default=TRAIN_DEFAULTS["epochs"], ge=0)
    batch_size: int = Field(default=TRAIN_DEFAULTS["batch_size"], gt=0)
    lr: float = Field(default=TRAIN_DEFAULTS["lr"], gt=0.0)
    lr_schedule: Literal["fixed", "step"] = TRAIN_DEFAULTS["lr_schedule"]
    lr_step_epochs: int = Field(default=TRAIN_DEFAULTS["lr_step_epochs"], gt=0)
    lr_step_gamma: float = Field(default=TRAIN_DEFAULTS["lr_step_gamma"], gt=0.0, le=1.0)
    decay: DecayMode = DecayMode(kind=TRAIN_DEFAULTS["decay_kind"],
                                 coefficient=TRAIN_DEFAULTS["decay_coefficient"])
    seed: int = Field(default=TRAIN_DEFAULTS["seed"], ge=0, lt=2 ** 64)
    deterministic: bool = TRAIN_DEFAULTS["deterministic"]
    eval_batch_size: int = Field(default=TRAIN_DEFAULTS["eval_batch_size"], gt=0)

    def lr_at(self, epoch: int) -> float:
        """第 epoch 轮（从0开始）的学习率"""
        if self.lr_schedule == "fixed":
            return self.lr
        return self.lr * self.lr_step_gamma ** (epoch // self.lr_step_epochs)


class PruneConfig(BaseModel):
    """剪枝配置"""
    quality: List[float]
    iterations: int = Field(default=PRUNE_DEFAULTS["iterations"], gt=0)
    quality_growth: float = Field(default=PRUNE_DEFAULTS["quality_growth"], ge=1.0)
    freeze_policy: FreezePolicy = PRUNE_DEFAULTS["freeze_policy"]
    retrain: TrainConfig
    dropout_adjust: bool = PRUNE_DEFAULTS["dropout_adjust"]
    tolerance_pp: float = Field(default=PRUNE_DEFAULTS["tolerance_pp"], ge=0.0)

    @field_validator("quality")
    @classmethod
    def _check_quality(cls, value):
        if not value:
            raise ValueError("quality 列表不能为空")
        if any(q < 0 for q in value):
            raise ValueError("quality 必须 >= 0")
        return value

    def quality_at(self, iteration: int) -> List[float]:
        """第 iteration 次迭代（从1开始）的各层质量参数"""
        factor = self.quality_growth ** (iteration - 1)
        return [q * factor for q in self.quality]


class MaskedParam(BaseModel):
    """带掩码的权重：有效权重 = weights ⊙ mask，偏置不参与剪枝"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray
    mask: np.ndarray
    bias: np.ndarray

    @model_validator(mode="before")
    @classmethod
    def _coerce_arrays(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            data["weights"] = np.array(data["weights"], dtype=np.float32)
            if data.get("mask") is None:
                data["mask"] = np.ones_like(data["weights"])
            data["mask"] = np.array(data["mask"], dtype=np.float32)
            data["bias"] = np.array(data.get("bias", []), dtype=np.float32)
        return data

    @model_validator(mode="after")
    def _check_mask(self):
        if self.mask.shape != self.weights.shape:
            raise ValueError(f"掩码形状 {self.mask.shape} 与权重形状 {self.weights.shape} 不一致")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("掩码只能包含 0 或 1")
        return self

    def effective_weights(self) -> np.ndarray:
        return self.weights * self.mask

    @property
    def total(self) -> int:
        return int(self.mask.size)

    @property
    def live_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def clone(self) -> "MaskedParam":
        return MaskedParam(weights=self.weights.copy(), mask=self.mask.copy(), bias=self.bias.copy())


class SparseLayerRecord(BaseModel):
    """一层的相对索引编码：间隔流 + 数值流（含填充零） + 稠密偏置"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    kind: Literal["fully_connected", "conv"]
    shape: Tuple[int, ...]
    index_bits: int = Field(ge=1, le=16)
    gaps: np.ndarray
    values: np.ndarray
    bias: np.ndarray

    @property
    def entries(self) -> int:
        return int(self.gaps.size)

    @property
    def fillers(self) -> int:
        return int(np.count_nonzero(self.values == 0))


class PruneRecordRow(BaseModel):
    """剪枝记录中的一行（某次迭代、某一层）"""
    iteration: int
    layer: str
    threshold: float
    weights_total: int
    weights_remaining: int
    remaining_pct: float
    error_after_retrain: Optional[float] = None


class SensitivityCurve(BaseModel):
    """单层剪枝敏感度曲线（不重训练）"""
    layer: str
    baseline_accuracy: float
    points: List[Tuple[float, float]]

    @field_validator("points")
    @classmethod
    def _check_increasing(cls, value):
        fractions = [f for f, _ in value]
        if any(b <= a for a, b in zip(fractions, fractions[1:])):
            raise ValueError("剪枝比例必须严格递增")
        return value


class LayerStats(BaseModel):
    """表格统计中的一行"""
    layer: str
    weights_total: int
    flops_total: int
    act_pct: Optional[float] = Field(default=None, ge=0.0, le=100.0)  # 合计行为空
    weights_pct: float = Field(ge=0.0, le=100.0)
    flops_pct: float = Field(ge=0.0, le=100.0)


class TradeoffPoint(BaseModel):
    """参数剪枝比例与精度变化的一个点"""
    variant: str
    parameters_pruned_pct: float = Field(ge=0.0, le=100.0)
    accuracy_delta: float


class EnergyModel(BaseModel):
    """每次操作能耗（皮焦）"""
    model_config = ConfigDict(populate_by_name=True)

    int_add: float = Field(default=ENERGY_TABLE_PJ["int_add"], gt=0)
    float_add: float = Field(default=ENERGY_TABLE_PJ["float_add"], gt=0)
    register_pj: float = Field(default=ENERGY_TABLE_PJ["register"], gt=0, alias="register")
    int_mult: float = Field(default=ENERGY_TABLE_PJ["int_mult"], gt=0)
    float_mult: float = Field(default=ENERGY_TABLE_PJ["float_mult"], gt=0)
    sram: float = Field(default=ENERGY_TABLE_PJ["sram"], gt=0)
    dram: float = Field(default=ENERGY_TABLE_PJ["dram"], gt=0)


class LayerStorage(BaseModel):
    """单层存储开销（字节）"""
    layer: str
    kind: str
    index_bits: int
    weights_total: int
    entries: int
    fillers: int
    dense_bytes: int
    value_bytes: int
    index_bytes: int
    bias_bytes: int
    header_bytes: int

    @property
    def sparse_bytes(self) -> int:
        return self.value_bytes + self.index_bytes + self.bias_bytes + self.header_bytes

    @property
    def index_overhead_pct(self) -> float:
        """索引位数相对数值位数的开销"""
        if self.entries == 0:
            return 0.0
        return 100.0 * (self.entries * self.index_bits) / (self.entries * 32)


class StorageReport(BaseModel):
    """整个模型的存储报告"""
    layers: List[LayerStorage]
    container_header_bytes: int
    file_bytes: int

    @property
    def dense_bytes(self) -> int:
        return sum(layer.dense_bytes for layer in self.layers)

    @property
    def sparse_bytes(self) -> int:
        return sum(layer.sparse_bytes for layer in self.layers)

    @property
    def index_overhead_pct(self) -> float:
        value_bits = sum(layer.entries * 32 for layer in self.layers)
        index_bits = sum(layer.entries * layer.index_bits for layer in self.layers)
        return 100.0 * index_bits / value_bits if value_bits else 0.0


class TrainingState(BaseModel):
    """检查点中的训练状态"""
    epoch: int = Field(default=0, ge=0)
    lr: float = Field(default=0.0, ge=0.0)


# ---------------------------------------------------------------------------
# 运行配置（INI 文件的各个 section，每个字段都有同名命令行参数）
# ---------------------------------------------------------------------------

class RunSection(BaseModel):
    arch: Literal["lenet-300-100", "lenet-5"] = "lenet-300-100"
    seed: int = Field(ge=0, lt=2 ** 64)
    out_dir: str = "runs"
    deterministic: bool = True


class DataSection(BaseModel):
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    validation_size: int = Field(default=SENSITIVITY_DEFAULTS["validation_size"], ge=0)
    train_limit: Optional[int] = Field(default=None, gt=0)


class TrainSection(BaseModel):
    epochs: int = Field(default=TRAIN_DEFAULTS["epochs"], ge=0)
    batch_size: int = Field(default=TRAIN_DEFAULTS["batch_size"], gt=0)
    lr: float = Field(default=TRAIN_DEFAULTS["lr"], gt=0.0)
    lr_schedule: Literal["fixed", "step"] = TRAIN_DEFAULTS["lr_schedule"]
    lr_step_epochs: int = Field(default=TRAIN_DEFAULTS["lr_step_epochs"], gt=0)
    lr_step_gamma: float = Field(default=TRAIN_DEFAULTS["lr_step_gamma"], gt=0.0, le=1.0)
    decay_kind: Literal["none", "l1", "l2"] = TRAIN_DEFAULTS["decay_kind"]
    decay_coefficient: float = Field(default=TRAIN_DEFAULTS["decay_coefficient"], ge=0.0)


class PruneSection(BaseModel):
    quality: FloatList = Field(default_factory=lambda: [1.0])
    iterations: int = Field(default=PRUNE_DEFAULTS["iterations"], gt=0)
    quality_growth: float = Field(default=PRUNE_DEFAULTS["quality_growth"], ge=1.0)
    freeze_policy: FreezePolicy = PRUNE_DEFAULTS["freeze_policy"]
    dropout_adjust: bool = PRUNE_DEFAULTS["dropout_adjust"]
    tolerance_pp: float = Field(default=PRUNE_DEFAULTS["tolerance_pp"], ge=0.0)
    retrain_lr: Optional[float] = Field(default=None, gt=0.0)
    retrain_epochs: Optional[int] = Field(default=None, ge=0)


class SensitivitySection(BaseModel):
    fractions: FloatList = Field(default_factory=lambda: list(SENSITIVITY_DEFAULTS["fractions"]))
    drop_budget: float = Field(default=SENSITIVITY_DEFAULTS["drop_budget"], gt=0.0)
    workers: int = Field(default=SENSITIVITY_DEFAULTS["workers"], gt=0)


class ReportSection(BaseModel):
    act_samples: int = Field(default=REPORT_DEFAULTS["act_samples"], gt=0)
    histogram_bins: int = Field(default=REPORT_DEFAULTS["histogram_bins"], gt=0)


class RunConfig(BaseModel):
    """完整运行配置"""
    run: RunSection
    data: Optional[DataSection] = None
    train: TrainSection = TrainSection()
    prune: PruneSection = PruneSection()
    sensitivity: SensitivitySection = SensitivitySection()
    report: ReportSection = ReportSection()

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
            lr_schedule=t.lr_schedule, lr_step_epochs=t.lr_step_epochs,
            lr_step_gamma=t.lr_step_gamma,
            decay=DecayMode(kind=t.decay_kind, coefficient=t.decay_coefficient),
            seed=self.run.seed, deterministic=self.run.deterministic,
        )

    def retrain_config(self) -> TrainConfig:
        """重训练配置：学习率默认取基线的 1/10"""
        from pruning import retrain_config  # 避免循环导入
        return retrain_config(self.train_config(), self.prune.retrain_lr, self.prune.retrain_epochs)

    def prune_config(self, num_layers: int) -> PruneConfig:
        """单个 quality 值广播到所有带权重层"""
        quality = list(self.prune.quality)
        if len(quality) == 1:
            quality = quality * num_layers
        return PruneConfig(
            quality=quality, iterations=self.prune.iterations,
            quality_growth=self.prune.quality_growth,
            freeze_policy=self.prune.freeze_policy, retrain=self.retrain_config(),
            dropout_adjust=self.prune.dropout_adjust, tolerance_pp=self.prune.tolerance_pp,
        )

    @staticmethod
    def section_models() -> Dict[str, type]:
        return {
            "run": RunSection, "data": DataSection, "train": TrainSection,
            "prune": PruneSection, "sensitivity": SensitivitySection, "report": ReportSection,
        }
