"""Regenerate golden_frames.txt.  Only run this for an intentional wire change."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))
from golden import GOLDEN  # noqa: E402

from leaguerl.proto import encode  # noqa: E402


def main():
    lines = [f"{name} {encode(msg).hex()}" for name, msg in GOLDEN]
    Path(__file__).with_name("golden_frames.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
