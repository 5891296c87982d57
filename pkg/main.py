import sys
from pathlib import Path

ROOT_PATH = Path(__file__).resolve().parent
CFG_PATH = ROOT_PATH.joinpath("config")

if __name__ == "__main__":
    sys.path.append(str(ROOT_PATH))
    sys.path.append(str(ROOT_PATH.joinpath("src")))

    from cli import run  # type: ignore

    sys.exit(run())
