import sys

from controller.cli_controller import run


if __name__ == "__main__":
    sys.exit(run())
