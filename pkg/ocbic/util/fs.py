from pathlib import Path


ROOT_DIR = Path(__file__).parents[2].resolve().absolute()


def ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
