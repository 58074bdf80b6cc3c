"""
Hadamard Galerkin 求解器 - 命令行入口

用法:
  python main.py solve --problem burgers --n 32 --formulation hadamard
  python main.py convergence --problem poisson --formulation classical --n-list 8,16,32,64
  python main.py compare --problem burgers --n 32 --format csv --output out.csv
  python main.py jacobian-check --problem reaction --n 8 --samples 20
"""
import sys

from app.cli import cli_main

if __name__ == "__main__":
    sys.exit(cli_main())
