"""
验收脚本测试（不需要真实数据的部分）
"""
import os

import run_acceptance


def test_static_checks_pass():
    results = run_acceptance.check_static()
    assert len(results) == 3
    assert all(r["passed"] for r in results), results


def test_report_without_data(tmp_path, monkeypatch):
    monkeypatch.delenv("MNIST_DIR", raising=False)
    report = tmp_path / "acceptance_report.md"
    assert run_acceptance.main(["--report", str(report)]) == 0
    text = report.read_text(encoding="utf-8")
    assert "# 验收测试报告" in text
    assert "| 通过 | 3 | 100.0% |" in text


def test_report_marks_failures(tmp_path):
    results = [run_acceptance.make_result("a", "1", "1", True),
               run_acceptance.make_result("b", "1", "2", False, "差异")]
    content = run_acceptance.generate_acceptance_report(results, str(tmp_path / "r.md"))
    assert "❌ 未通过" in content and "部分通过" in content
    assert "| 未通过 | 1 | 50.0% |" in content


def test_lenet5_check_reports_baseline_and_pruning(tmp_path, mnist_files, monkeypatch):
    (tmp_path / "small.ini").write_text(
        "[run]\narch = lenet-5\nseed = 1\n"
        "\n[data]\ntrain_limit = 64\n"
        "\n[train]\nepochs = 1\nbatch_size = 32\nlr = 0.05\n"
        "\n[prune]\nquality = 0.5\niterations = 1\nretrain_epochs = 1\ntolerance_pp = 100\n",
        encoding="utf-8",
    )
    monkeypatch.setattr(run_acceptance, "CONFIG_DIR", str(tmp_path))
    monkeypatch.setitem(run_acceptance.LENET5_CONFIGS, "small.ini", (1.0, 60))
    mnist_dir = os.path.dirname(mnist_files["train_images"])
    results = run_acceptance.check_lenet5(mnist_dir, str(tmp_path / "out"), "small.ini")
    assert [r["name"] for r in results] == ["LeNet-5 基线（small.ini）", "LeNet-5 迭代剪枝（small.ini）"]
    assert results[0]["passed"]
    assert "剩余权重" in results[1]["actual"]
