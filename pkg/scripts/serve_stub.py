#!/usr/bin/env python3
"""Run the analytic loopback model server.

Serves the full wire protocol with model-free behaviors, so remote-mode runs
and protocol tests work without any GPU or pretrained weights.

    python scripts/serve_stub.py --port 8787
"""

import argparse

from diffad.stubserver import make_stub_server


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--port", type=int, default=8787)
    args = parser.parse_args()
    server = make_stub_server(args.port)
    host, port = server.server_address[:2]
    print(f"stub model server listening on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
