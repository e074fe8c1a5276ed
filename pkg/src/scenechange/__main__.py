"""`python3 -m scenechange` entry point."""

from scenechange.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
