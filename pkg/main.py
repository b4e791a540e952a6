import sys

from fediot.cli import main


if __name__ == "__main__":
    sys.exit(main())
