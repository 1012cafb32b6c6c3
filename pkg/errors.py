"""
异常定义
每个异常类带有命令行退出码
"""
from config import EXIT_CODES


class NetPruneError(Exception):
    """所有错误的基类"""
    exit_code = EXIT_CODES["error"]


class ConfigError(NetPruneError):
    """配置或参数错误"""
    exit_code = EXIT_CODES["config"]


class ShapeError(ConfigError, ValueError):
    """张量形状不匹配"""


class ArchitectureError(ConfigError):
    """层定义之间维度不兼容"""


class TrainingDivergedError(NetPruneError):
    """训练过程出现 NaN/Inf 损失"""
    exit_code = EXIT_CODES["diverged"]


class CheckpointError(NetPruneError):
    """检查点文件损坏或无法读取"""
    exit_code = EXIT_CODES["checkpoint"]


class SparseFormatError(NetPruneError):
    """稀疏流不一致（位置越界、流被截断等）"""
    exit_code = EXIT_CODES["sparse_format"]


class DatasetError(NetPruneError):
    """数据集文件错误"""
    exit_code = EXIT_CODES["dataset"]


class IdxMagicError(DatasetError):
    """IDX 魔数不正确"""


class IdxTruncatedError(DatasetError):
    """IDX 文件长度不足"""


class IdxCountMismatchError(DatasetError):
    """图像与标签数量不一致"""


class PruningError(NetPruneError):
    """剪枝参数或状态错误"""
    exit_code = EXIT_CODES["pruning"]


class SensitivityError(NetPruneError):
    """敏感度分析错误"""
    exit_code = EXIT_CODES["sensitivity"]
