"""Run the service: ``python -m embed_service`` (EMBED_PORT selects the port)."""

import os

import uvicorn

from .app import create_app


def main() -> None:
    uvicorn.run(
        create_app(),
        host=os.environ.get("EMBED_HOST", "127.0.0.1"),
        port=int(os.environ.get("EMBED_PORT", "8901")),
        log_level="info",
    )


if __name__ == "__main__":
    main()
