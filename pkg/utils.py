"""
工具函数模块
提供参数验证、原子写文件、日志配置、文件校验等辅助功能
"""
import hashlib
import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Dict, Iterable, List, Tuple

from config import LOG_CONFIG


def validate_seed(seed) -> Tuple[bool, str]:
    """
    验证随机种子
    必须显式给出，且为64位无符号整数
    """
    if seed is None or seed == "":
        return False, "必须指定随机种子（--seed 或配置文件 [run] seed）"
    try:
        value = int(seed)
    except (TypeError, ValueError):
        return False, f"随机种子必须为整数: {seed}"
    if not 0 <= value < 2 ** 64:
        return False, f"随机种子必须在 [0, 2^64) 内: {seed}"
    return True, ""


def validate_quality(quality: List[float], num_layers: int) -> Tuple[bool, str]:
    """验证每层的 quality 参数：个数为1（广播）或与带权重层数一致，且非负"""
    if not quality:
        return False, "quality 不能为空"
    if len(quality) not in (1, num_layers):
        return False, f"quality 个数 {len(quality)} 与带权重层数 {num_layers} 不一致"
    if any(q < 0 for q in quality):
        return False, "quality 必须 >= 0"
    return True, ""


def validate_fraction_grid(fractions: Iterable[float]) -> Tuple[bool, str]:
    """验证剪枝比例网格：严格递增且位于 [0, 1)"""
    fractions = list(fractions)
    if not fractions:
        return False, "剪枝比例列表不能为空"
    if any(not 0.0 <= f < 1.0 for f in fractions):
        return False, "剪枝比例必须位于 [0, 1)"
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        return False, "剪枝比例必须严格递增"
    return True, ""


def validate_data_paths(paths: Dict[str, str]) -> Tuple[bool, str]:
    """验证数据文件是否存在，返回第一个缺失的路径"""
    for key, path in paths.items():
        if not path or not os.path.isfile(path):
            return False, f"数据文件不存在（{key}）: {path}"
    return True, ""


def validate_index_bits(bits: int) -> Tuple[bool, str]:
    """相对索引位宽：1~16 位"""
    if not 1 <= bits <= 16:
        return False, f"索引位宽必须在 1~16 之间: {bits}"
    return True, ""


def validate_distinct_paths(source: str, target: str) -> Tuple[bool, str]:
    """输出文件不能与输入文件相同（按真实路径比较）"""
    if os.path.realpath(source) == os.path.realpath(target):
        return False, f"输出文件与输入文件相同，会覆盖输入: {source}"
    return True, ""


@contextmanager
def atomic_output(path: str):
    """
    原子写文件：先写同目录下的临时文件，成功后再重命名

    用法:
        with atomic_output(path) as tmp:
            frame.to_csv(tmp, index=False)
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    suffix = os.path.splitext(path)[1]
    fd, tmp = tempfile.mkstemp(prefix=".tmp_", suffix=suffix, dir=directory)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def atomic_write_bytes(path: str, data: bytes):
    with atomic_output(path) as tmp:
        with open(tmp, "wb") as f:
            f.write(data)


def atomic_write_text(path: str, text: str):
    with atomic_output(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)


def setup_logging(verbose: bool = False):
    """按 LOG_CONFIG 配置根日志器；verbose 时输出 DEBUG"""
    level = logging.DEBUG if verbose else getattr(logging, LOG_CONFIG["level"])
    logging.basicConfig(level=level, format=LOG_CONFIG["format"],
                        datefmt=LOG_CONFIG["datefmt"], force=True)


def file_digest(path: str, algorithm: str = "sha256") -> str:
    """计算文件摘要（sha256 / md5）"""
    digest = hashlib.new(algorithm)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def create_output_dir(base_dir: str = "runs") -> str:
    """创建输出目录"""
    if not os.path.exists(base_dir):
        os.makedirs(base_dir)
    return base_dir


def format_file_size(size_bytes: int) -> str:
    """格式化文件大小显示"""
    for unit in ['B', 'KB', 'MB', 'GB']:
        if size_bytes < 1024.0:
            return f"{size_bytes:.1f} {unit}"
        size_bytes /= 1024.0
    return f"{size_bytes:.1f} TB"
