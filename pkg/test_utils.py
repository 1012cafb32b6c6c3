"""
工具函数与初始化脚本测试
"""
import hashlib
import logging
import os

import pytest

import init_system
from utils import (
    atomic_output, atomic_write_text, create_output_dir, file_digest, format_file_size,
    setup_logging, validate_data_paths, validate_fraction_grid, validate_index_bits,
    validate_quality, validate_seed,
)


@pytest.mark.parametrize("seed,ok", [(None, False), ("", False), ("abc", False), (-1, False),
                                     (2 ** 64, False), (0, True), ("42", True), (2 ** 64 - 1, True)])
def test_validate_seed(seed, ok):
    assert validate_seed(seed)[0] is ok


def test_validate_quality():
    assert validate_quality([1.0], 3) == (True, "")
    assert validate_quality([1.0, 0.5, 0.2], 3)[0]
    assert not validate_quality([], 3)[0]
    assert not validate_quality([1.0, 1.0], 3)[0]
    assert not validate_quality([1.0, -1.0, 1.0], 3)[0]


def test_validate_fraction_grid():
    assert validate_fraction_grid([0.0, 0.5, 0.99])[0]
    assert not validate_fraction_grid([])[0]
    assert not validate_fraction_grid([0.5, 0.5])[0]
    assert not validate_fraction_grid([0.5, 1.0])[0]


def test_validate_index_bits_and_paths(tmp_path):
    assert validate_index_bits(1)[0] and validate_index_bits(16)[0]
    assert not validate_index_bits(0)[0] and not validate_index_bits(17)[0]
    existing = tmp_path / "f"
    existing.write_bytes(b"x")
    assert validate_data_paths({"a": str(existing)})[0]
    ok, msg = validate_data_paths({"a": str(existing), "b": str(tmp_path / "missing")})
    assert not ok and "b" in msg


def test_atomic_output_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "out" / "result.csv"
    with pytest.raises(RuntimeError):
        with atomic_output(str(target)) as tmp:
            with open(tmp, "w") as f:
                f.write("partial")
            raise RuntimeError("boom")
    assert not target.exists()
    assert os.listdir(tmp_path / "out") == []

    atomic_write_text(str(target), "done")
    assert target.read_text(encoding="utf-8") == "done"


def test_file_digest(tmp_path):
    path = tmp_path / "data.bin"
    path.write_bytes(b"netprune")
    assert file_digest(str(path)) == hashlib.sha256(b"netprune").hexdigest()
    assert file_digest(str(path), "md5") == hashlib.md5(b"netprune").hexdigest()


def test_format_file_size_and_output_dir(tmp_path):
    assert format_file_size(512) == "512.0 B"
    assert format_file_size(2048) == "2.0 KB"
    target = tmp_path / "runs"
    assert create_output_dir(str(target)) == str(target)
    assert target.is_dir()


def test_setup_logging_verbose():
    setup_logging(verbose=True)
    assert logging.getLogger().level == logging.DEBUG
    setup_logging()
    assert logging.getLogger().level == logging.INFO


def test_init_system_checks(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert init_system.check_dependencies()
    assert init_system.create_directories()
    assert (tmp_path / "runs").is_dir() and (tmp_path / "data").is_dir()
    missing = init_system.check_dataset("data")
    assert len(missing) == 4
    (tmp_path / "data" / "t10k-labels-idx1-ubyte").write_bytes(b"")
    assert "t10k-labels-idx1-ubyte" not in init_system.check_dataset("data")
    assert "cli.py fetch" in capsys.readouterr().out
