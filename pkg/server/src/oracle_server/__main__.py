"""Run the prediction service: python -m oracle_server --weights w.json --port 8000"""

import argparse
import sys

from .app import serve
from .model import ModelError


def main():
    parser = argparse.ArgumentParser(prog="oracle-server")
    parser.add_argument("--weights", required=True, help="weights JSON file")
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--host", default="0.0.0.0")
    parser.add_argument("--max-concurrent", type=int, default=8)
    args = parser.parse_args()
    try:
        serve(args.weights, args.port, host=args.host,
              max_concurrent=args.max_concurrent)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
