"""Allow ``python -m templatefit``."""

from .cli import run

if __name__ == "__main__":
    run()
