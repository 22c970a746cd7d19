"""Service entry point: load the model in the background, serve immediately.

The /score and /healthz endpoints return 503 until the checkpoint has
finished loading.
"""

from __future__ import annotations

import argparse
import logging
import threading

import uvicorn

from .app import create_app, set_backend
from .backend import DEFAULT_BATCH_SIZE, DEFAULT_MODEL, CrossEncoderBackend

log = logging.getLogger("scorer_service")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="scorer-service")
    parser.add_argument("--model", default=DEFAULT_MODEL)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO)
    app = create_app(None)

    def load():
        log.info("loading checkpoint %s ...", args.model)
        try:
            backend = CrossEncoderBackend(args.model, args.batch_size)
        except Exception:
            log.exception("failed to load %s; service stays unready", args.model)
            return
        set_backend(app, backend)
        log.info("model ready")

    threading.Thread(target=load, daemon=True).start()
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
