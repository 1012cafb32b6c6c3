"""
系统配置文件
网络结构预设、训练/剪枝默认参数、SPNN格式常量、能耗表等
"""

# 网络结构预设（按层顺序）
ARCHITECTURE_PRESETS = {
    "lenet-300-100": [
        {"name": "fc1", "kind": "fully_connected", "fan_in": 784, "fan_out": 300,
         "has_relu": True, "dropout_rate_after": 0.5},
        {"name": "fc2", "kind": "fully_connected", "fan_in": 300, "fan_out": 100,
         "has_relu": True, "dropout_rate_after": 0.5},
        {"name": "fc3", "kind": "fully_connected", "fan_in": 100, "fan_out": 10,
         "has_relu": False, "dropout_rate_after": 0.0},
    ],
    "lenet-5": [
        {"name": "conv1", "kind": "conv", "in_channels": 1, "filters": 20,
         "kernel": 5, "stride": 1, "has_relu": True},
        {"name": "pool1", "kind": "maxpool", "kernel": 2, "stride": 2, "has_relu": False},
        {"name": "conv2", "kind": "conv", "in_channels": 20, "filters": 50,
         "kernel": 5, "stride": 1, "has_relu": True},
        {"name": "pool2", "kind": "maxpool", "kernel": 2, "stride": 2, "has_relu": False},
        {"name": "fc1", "kind": "fully_connected", "fan_in": 800, "fan_out": 500,
         "has_relu": True, "dropout_rate_after": 0.5},
        {"name": "fc2", "kind": "fully_connected", "fan_in": 500, "fan_out": 10,
         "has_relu": False, "dropout_rate_after": 0.0},
    ],
}

# 输入图像形状 (C, H, W)
INPUT_SHAPE = (1, 28, 28)

# 训练默认参数
TRAIN_DEFAULTS = {
    "epochs": 20,
    "batch_size": 64,
    "lr": 0.1,
    "lr_schedule": "step",
    "lr_step_epochs": 8,
    "lr_step_gamma": 0.5,
    "decay_kind": "l2",
    "decay_coefficient": 1e-4,
    "seed": 1,
    "deterministic": True,
    "eval_batch_size": 1000,
}

# 剪枝默认参数
PRUNE_DEFAULTS = {
    "iterations": 1,
    "quality_growth": 1.0,
    "freeze_policy": "none",
    "dropout_adjust": True,
    "tolerance_pp": 0.2,     # 相对基线错误率允许的上升（百分点）
    "retrain_lr_ratio": 0.1,  # 重训练学习率 = 基线学习率 × 0.1
}

# 敏感度分析默认参数
SENSITIVITY_DEFAULTS = {
    "fractions": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
    "validation_size": 2000,
    "drop_budget": 0.005,
    "workers": 1,
}

# 报告默认参数
REPORT_DEFAULTS = {
    "act_samples": 1000,
    "histogram_bins": 100,
    "band_width": 28,
}

# SPNN 稀疏格式常量
SPARSE_FORMAT_CONFIG = {
    "magic": b"SPNN",
    "version": 1,
    "index_bits": {"fully_connected": 5, "conv": 8},
    "kind_codes": {"fully_connected": 0, "conv": 1},
    "flag_dense": 0x0001,
}

# 每次操作能耗（皮焦，45nm CMOS）
ENERGY_TABLE_PJ = {
    "int_add": 0.1,
    "float_add": 0.9,
    "register": 1.0,
    "int_mult": 3.1,
    "float_mult": 3.7,
    "sram": 5.0,
    "dram": 640.0,
}

# MNIST 下载源（IDX gzip 文件）
MNIST_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"
MNIST_SOURCES = {
    "train_images": {"file": "train-images-idx3-ubyte.gz",
                     "md5": "f68b3c2dcbeaaa9fbdd348bbdeb94873", "sha256": None},
    "train_labels": {"file": "train-labels-idx1-ubyte.gz",
                     "md5": "d53e105ee54ea40749a09fcbcd1e9432", "sha256": None},
    "test_images": {"file": "t10k-images-idx3-ubyte.gz",
                    "md5": "9fb629c4189551a2d022fa330f9573f3", "sha256": None},
    "test_labels": {"file": "t10k-labels-idx1-ubyte.gz",
                    "md5": "ec29112dd5afa0611ce80d1b7f02629c", "sha256": None},
}

# 命令退出码
EXIT_CODES = {
    "ok": 0,
    "error": 1,
    "config": 2,
    "diverged": 3,
    "checkpoint": 4,
    "sparse_format": 5,
    "dataset": 6,
    "pruning": 7,
    "sensitivity": 8,
    "mismatch": 9,
}

# 日志配置
LOG_CONFIG = {
    "format": "%(asctime)s %(levelname)s [%(name)s] %(message)s",
    "datefmt": "%Y-%m-%d %H:%M:%S",
    "level": "INFO",
}

# 输出文件名（位于 --out-dir 下）
ARTIFACT_NAMES = {
    "baseline": "baseline.spnn",
    "train_metrics": "train_metrics.csv",
    "pruned": "pruned.spnn",
    "retrained": "retrained.spnn",
    "iterated": "iterated.spnn",
    "prune_record": "prune_record.csv",
    "sensitivity": "sensitivity.csv",
    "suggested_quality": "suggested_quality.csv",
    "sparse_model": "model_sparse.spnn",
    "storage_report": "storage_report.csv",
    "layer_stats": "layer_stats.csv",
    "layer_stats_xlsx": "layer_stats.xlsx",
    "report": "report.txt",
    "tradeoff": "tradeoff.csv",
}

# 参数量-精度权衡实验（L1/L2 × 是否重训练 + L2 迭代剪枝）
TRADEOFF_DEFAULTS = {
    "fractions": [0.5, 0.6, 0.7, 0.8, 0.9],
    "l1_coefficient": 1e-5,
}
TRADEOFF_VARIANTS = {
    "l1_no_retrain": "L1 prune, no retrain",
    "l2_no_retrain": "L2 prune, no retrain",
    "l1_retrain": "L1 prune, L1 retrain",
    "l2_retrain": "L2 prune, L2 retrain",
    "l2_iterative": "L2 iterative prune and retrain",
    "l1_prune_l2_retrain": "L1 prune, L2 retrain",
}
