from __future__ import annotations

from scene_dialog_dmn.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
