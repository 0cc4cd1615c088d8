"""
Battery Privacy

CLI 入口程序（等价于 battery-privacy 命令）
"""

import sys

from src.cli import main

# 设置 UTF-8 编码（Windows 兼容）
if sys.platform == "win32":
    try:
        sys.stdout.reconfigure(encoding="utf-8", errors="replace")
        sys.stderr.reconfigure(encoding="utf-8", errors="replace")
    except AttributeError:
        pass


if __name__ == "__main__":
    sys.exit(main())
