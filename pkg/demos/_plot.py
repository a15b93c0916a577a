"""Optional plotting: figures are written only when matplotlib is installed."""
from pathlib import Path


def figure(name, draw, out_dir="demo_out"):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("(matplotlib not installed, skipping figure)")
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    fig.tight_layout()
    path = Path(out_dir)
    path.mkdir(exist_ok=True)
    fig.savefig(path / f"{name}.png", dpi=120)
    plt.close(fig)
    print(f"figure written to {path / name}.png")
    return path / f"{name}.png"
