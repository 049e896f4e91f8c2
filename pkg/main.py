# -*- coding: utf-8 -*-
"""半线性波动方程爆破数值实验室 - 命令行入口。"""

import sys

from src.app import run_app

if __name__ == "__main__":
    sys.exit(run_app())
