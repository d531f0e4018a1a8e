import sys

from topo_trace.cli import main

if __name__ == "__main__":
    sys.exit(main())
