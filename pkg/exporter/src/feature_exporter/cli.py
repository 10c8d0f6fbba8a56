"""CLI wrapper: `ortho-export-features export --images DIR --out DIR`."""

from __future__ import annotations

import logging

import click

from .export import export_features


@click.group()
def main():
    """Frozen-backbone patch-feature exporter."""
    logging.basicConfig(level=logging.INFO, format="%(message)s")


@main.command()
@click.option("--images", "image_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--resolution", type=int, default=224, show_default=True)
@click.option("--patch-size", type=int, default=16, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--weights", "weights_path", type=click.Path(exists=True), default=None,
              help="Backbone checkpoint; omitted -> deterministic seed init.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--side", type=click.Choice(["drone", "satellite"]), default="drone", show_default=True)
def export(image_dir, out_dir, resolution, patch_size, dim, depth, weights_path, seed, side):
    """Write one OGFV feature dump per image plus a manifest."""
    manifest = export_features(
        image_dir,
        out_dir,
        resolution=resolution,
        patch_size=patch_size,
        dim=dim,
        depth=depth,
        weights_path=weights_path,
        seed=seed,
        side=side,
    )
    click.echo(
        f"exported {len(manifest['images'])} image(s), "
        f"{len(manifest['errors'])} error(s) -> {out_dir}"
    )


if __name__ == "__main__":
    main()
