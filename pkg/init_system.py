"""
系统初始化脚本
一键完成依赖检查、输出目录创建与 MNIST 数据检查
"""
import os
import sys

from config import MNIST_SOURCES


def check_dependencies():
    """检查依赖包是否已安装"""
    print("正在检查依赖包...")

    required_packages = ['numpy', 'pandas', 'openpyxl', 'PIL', 'pydantic']

    missing_packages = []

    for package in required_packages:
        try:
            __import__(package)
            print(f"✓ {package}")
        except ImportError:
            print(f"✗ {package} 未安装")
            missing_packages.append('Pillow' if package == 'PIL' else package)

    if missing_packages:
        print("\n缺少以下依赖包，请先安装：")
        print(f"pip install {' '.join(missing_packages)}")
        print("\n或者运行：")
        print("pip install -r requirements.txt")
        return False

    print("\n所有依赖包已安装！")
    return True


def create_directories(directories=('runs', 'data')):
    """创建必要的目录"""
    print("\n正在创建必要的目录...")

    for directory in directories:
        if not os.path.exists(directory):
            os.makedirs(directory)
            print(f"✓ 创建目录: {directory}")
        else:
            print(f"✓ 目录已存在: {directory}")

    return True


def check_dataset(data_dir='data'):
    """
    检查 MNIST IDX 文件是否齐全

    Returns:
        缺失的文件名列表（为空表示齐全）
    """
    print("\n正在检查 MNIST 数据...")

    missing = []
    for source in MNIST_SOURCES.values():
        name = source["file"][:-len(".gz")]
        if os.path.isfile(os.path.join(data_dir, name)):
            print(f"✓ {name}")
        else:
            print(f"⚠ {name} 不存在")
            missing.append(name)

    if missing:
        print("  请先下载数据：")
        print(f"  python cli.py fetch --dest {data_dir}")
    return missing


def show_system_info():
    """显示使用说明"""
    print("\n" + "=" * 60)
    print("神经网络剪枝工具")
    print("=" * 60)
    print("\n常用命令：")
    print("  python cli.py train --config configs/lenet300.ini")
    print("  python cli.py iterate --config configs/lenet300.ini")
    print("  python cli.py export --config configs/lenet300.ini")
    print("  python cli.py report --config configs/lenet300.ini")
    print("\n" + "=" * 60)


def main():
    """主函数"""
    print("开始系统初始化...\n")

    if not check_dependencies():
        sys.exit(1)

    if not create_directories():
        sys.exit(1)

    # 数据缺失不阻止初始化
    check_dataset()

    show_system_info()

    print("\n初始化完成！\n")


if __name__ == "__main__":
    main()
