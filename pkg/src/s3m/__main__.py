"""Run the service mesh from the command line: ``python -m s3m``."""

from __future__ import annotations

import argparse
import json
import logging
import os

from .server import DEFAULT_BIND, S3MServer


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="s3m", description="Serve the scientific service mesh over HTTP."
    )
    parser.add_argument(
        "--bind",
        default=os.environ.get("S3M_BIND", DEFAULT_BIND),
        help="host:port to listen on (env S3M_BIND, default %(default)s)",
    )
    parser.add_argument("--policy-file", help="JSON policy document to load at startup")
    parser.add_argument("--facility-file", help="JSON facility config to load at startup")
    parser.add_argument("--tls-cert", help="TLS certificate path (PEM)")
    parser.add_argument("--tls-key", help="TLS private key path (PEM)")
    parser.add_argument(
        "--tick-interval", type=float, default=0.5,
        help="scheduler tick period in seconds (default %(default)s)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    policy_document = None
    if args.policy_file:
        with open(args.policy_file, "r", encoding="utf-8") as fh:
            policy_document = json.load(fh)
    facility_config = None
    if args.facility_file:
        with open(args.facility_file, "r", encoding="utf-8") as fh:
            facility_config = json.load(fh)

    server = S3MServer(
        policy_document=policy_document,
        facility_config=facility_config,
        tick_interval=args.tick_interval,
    )
    base_url = server.start_http(
        args.bind, tls_certfile=args.tls_cert, tls_keyfile=args.tls_key
    )
    server.start_ticker()
    print(f"serving on {base_url}")
    print("bootstrap admin token (user admin, project s3m-admin, full scopes):")
    print(server.admin_token)
    try:
        while True:
            server._http_thread.join(timeout=3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
